"""Slow, obviously-correct reference implementations used by the tests."""
import numpy as np


def window_rows(X, f, t, m, L):
    """Design matrix with one row ``[X[tau], ..., X[tau-m+1]]`` per frame in the window."""
    rows = []
    for tau in range(max(0, t - L + 1), t + 1):
        rows.append([X[tau - k, f] if tau - k >= 0 else 0.0 for k in range(m)])
    return np.array(rows, dtype=complex)


def loop_stats(X, D, m, L):
    """Wiener statistics by explicit summation."""
    T, F = X.shape
    R = np.zeros((F, T, m, m), dtype=complex)
    r = np.zeros((F, T, m), dtype=complex)
    for f in range(F):
        for t in range(T):
            for tau in range(max(0, t - L + 1), t + 1):
                x = np.array([X[tau - k, f] if tau - k >= 0 else 0.0 for k in range(m)])
                R[f, t] += np.outer(np.conj(x), x)
                r[f, t] += np.conj(x) * D[tau, f]
    return R, r


def lstsq_filter(X, D, f, t, m, L, epsilon):
    """Ridge least squares via an augmented dense system, no normal equations."""
    A = window_rows(X, f, t, m, L)
    d = np.array([D[tau, f] for tau in range(max(0, t - L + 1), t + 1)])
    lam = epsilon * np.sum(np.abs(A) ** 2) / m
    if lam == 0 and not np.any(A):
        return np.zeros(m, dtype=complex)
    A_aug = np.vstack([A, np.sqrt(lam) * np.eye(m)])
    d_aug = np.concatenate([d, np.zeros(m)])
    return np.linalg.lstsq(A_aug, d_aug, rcond=None)[0]


def loop_attention(params, X, D, L):
    """Enhanced statistics with an explicit loop over bins and frames."""
    from wiener_aec.attention import COMPRESSION, LN_EPS, sigmoid

    m = params.m
    T, F = X.shape

    def ln(z, scale, shift):
        zc = z - z.mean()
        return zc / np.sqrt(np.mean(zc ** 2) + LN_EPS) * scale + shift

    R = np.zeros((F, T, m, m), dtype=complex)
    r = np.zeros((F, T, m), dtype=complex)
    sv = sigmoid(params.v_gate)
    mm = m * m
    for f in range(F):
        xs = [np.array([X[t - k, f] if t - k >= 0 else 0.0 for k in range(m)]) for t in range(T)]
        q = [ln(params.W_q @ (np.abs(x) ** COMPRESSION) + params.b_q,
                params.ln_q_scale, params.ln_q_shift) * sigmoid(params.q_gate) for x in xs]
        k = []
        for t in range(T):
            c = abs(D[t, f]) ** COMPRESSION * params.conv_k_weight + params.conv_k_bias
            k.append(ln(params.W_k @ c + params.b_k, params.ln_k_scale, params.ln_k_shift)
                     * sigmoid(params.k_gate))
        vals = []
        for t in range(T):
            Rt = np.outer(np.conj(xs[t]), xs[t]).ravel()
            rt = np.conj(xs[t]) * D[t, f]
            v = np.concatenate([Rt.real, Rt.imag, rt.real, rt.imag]) * sv
            vals.append(v)
        att = []
        for t in range(T):
            scores = np.array([q[t] @ k[s] / np.sqrt(m) for s in range(t + 1)])
            w = np.exp(scores - scores.max())
            w /= w.sum()
            att.append(sum(w[s] * vals[s] for s in range(t + 1)))
        for t in range(T):
            S = sum(att[tau] for tau in range(max(0, t - L + 1), t + 1))
            M = (S[:mm] + 1j * S[mm:2 * mm]).reshape(m, m)
            R[f, t] = 0.5 * (M + M.conj().T)
            r[f, t] = S[2 * mm:2 * mm + m] + 1j * S[2 * mm + m:]
    return R, r
