"""Attention reweighting of the Wiener statistics.

Per frequency bin, far-end features act as queries and microphone features
as keys. The resulting causal softmax over frames forms weighted averages
of the instantaneous rank-one statistics ``conj(x_t) x_t^T`` and
``conj(x_t) D[t]``. Those averages are then summed over the same sliding
window the plain Wiener estimator uses:

    Q1 = LN(Linear(unfold(|X|^p))) * sigmoid(q)
    K1 = LN(Linear(conv1x1(|D|^p))) * sigmoid(k)
    V1 = V * sigmoid(v)
    A  = softmax(Q1 K1^T / sqrt(m), causal) V1

Forward and backward are written out by hand in numpy. :func:`train_surrogate`
fits the parameters on simulated double talk, where the echo alone is
known, so that the filter solved from the enhanced statistics predicts it.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .stft import UnfoldedFarEnd, unfold
from .wiener import WienerStats, sliding_sum

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
COMPRESSION = 0.5
LN_EPS = 1e-5


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class AttentionParams:
    q_gate: np.ndarray
    k_gate: np.ndarray
    v_gate: np.ndarray
    W_q: np.ndarray
    b_q: np.ndarray
    W_k: np.ndarray
    b_k: np.ndarray
    ln_q_scale: np.ndarray
    ln_q_shift: np.ndarray
    ln_k_scale: np.ndarray
    ln_k_shift: np.ndarray
    conv_k_weight: np.ndarray
    conv_k_bias: np.ndarray
    m: int
    seed: int = 17

    @classmethod
    def init(cls, m: int, seed: int = 17) -> "AttentionParams":
        """Gates at 0 (sigmoid 0.5), identity layer norm, fan-in uniform projections."""
        if m < 1:
            raise ValueError(f"m must be >= 1, got {m}")
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(m)
        return cls(
            q_gate=np.zeros(m),
            k_gate=np.zeros(m),
            v_gate=np.zeros(feature_dim(m)),
            W_q=rng.uniform(-bound, bound, (m, m)),
            b_q=rng.uniform(-bound, bound, m),
            W_k=rng.uniform(-bound, bound, (m, m)),
            b_k=rng.uniform(-bound, bound, m),
            ln_q_scale=np.ones(m),
            ln_q_shift=np.zeros(m),
            ln_k_scale=np.ones(m),
            ln_k_shift=np.zeros(m),
            conv_k_weight=rng.uniform(-1.0, 1.0, m),
            conv_k_bias=rng.uniform(-1.0, 1.0, m),
            m=m,
            seed=seed,
        )

    @staticmethod
    def tensor_names() -> list[str]:
        return [f.name for f in fields(AttentionParams) if f.name not in ("m", "seed")]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.tensor_names()}

    def expected_shapes(self) -> dict[str, tuple]:
        m = self.m
        shapes = {name: (m,) for name in self.tensor_names()}
        shapes.update(v_gate=(feature_dim(m),), W_q=(m, m), W_k=(m, m))
        return shapes

    def validate(self):
        for name, shape in self.expected_shapes().items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"parameter {name!r} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"parameter {name!r} contains non-finite values")

    def copy(self) -> "AttentionParams":
        return replace(self, **{k: v.copy() for k, v in self.arrays().items()})

    def zeros_like(self) -> "AttentionParams":
        return replace(self, **{k: np.zeros_like(v) for k, v in self.arrays().items()})


def feature_dim(m: int) -> int:
    return 2 * m * m + 2 * m


# --- statistics packing -------------------------------------------------------

@dataclass
class StatsFeature:
    """Real-valued instantaneous statistics, shape (F, T, 2m^2 + 2m).

    Layout per (f, t): Re vec(R_t), Im vec(R_t), Re r_t, Im r_t with
    ``R_t = conj(x_t) x_t^T`` (row-major vec) and ``r_t = conj(x_t) D[t]``.
    """
    V: np.ndarray
    m: int


def pack_stats(x_unf: UnfoldedFarEnd, d) -> StatsFeature:
    x = x_unf.data
    F, T, m = x.shape
    D = getattr(d, "data", d)
    D = np.asarray(D)
    if D.shape != (T, F):
        raise ValueError(f"microphone spectrogram shape {D.shape} does not match (T={T}, F={F})")
    R = np.conj(x)[..., :, None] * x[..., None, :]
    r = np.conj(x) * D.T[..., None]
    return StatsFeature(pack(R, r), m)


def pack(R: np.ndarray, r: np.ndarray) -> np.ndarray:
    m = r.shape[-1]
    Rf = R.reshape(R.shape[:-2] + (m * m,))
    return np.concatenate([Rf.real, Rf.imag, r.real, r.imag], axis=-1)


def unpack(V: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    mm = m * m
    if V.shape[-1] != feature_dim(m):
        raise ValueError(f"feature dim {V.shape[-1]} does not match m={m}")
    R = (V[..., :mm] + 1j * V[..., mm:2 * mm]).reshape(V.shape[:-1] + (m, m))
    r = V[..., 2 * mm:2 * mm + m] + 1j * V[..., 2 * mm + m:]
    return R, r


# --- forward / backward -------------------------------------------------------

@dataclass
class AttentionInputs:
    """Everything the attention forward pass reads besides the parameters."""
    q_feat: np.ndarray   # (F, T, m) unfolded compressed far-end magnitude
    k_feat: np.ndarray   # (F, T) compressed microphone magnitude
    V: np.ndarray        # (F, T, 2m^2 + 2m)
    L: int
    self_only: bool = False

    @property
    def m(self) -> int:
        return self.q_feat.shape[-1]


def make_inputs(X, D, m: int, L: int, x_unf: UnfoldedFarEnd | None = None,
                self_only: bool = False) -> AttentionInputs:
    """Build attention inputs from far-end ``X`` and microphone ``D`` (both (T, F))."""
    X = np.asarray(getattr(X, "data", X))
    D = np.asarray(getattr(D, "data", D))
    if X.shape != D.shape:
        raise ValueError(f"far {X.shape} and mic {D.shape} spectrograms differ in shape")
    if x_unf is None:
        x_unf = unfold(X, m)
    q_feat = unfold(np.abs(X) ** COMPRESSION, m).data.real
    k_feat = (np.abs(D) ** COMPRESSION).T
    return AttentionInputs(q_feat, np.ascontiguousarray(k_feat),
                           pack_stats(x_unf, D).V, L, self_only)


def _layer_norm(z, scale, shift):
    mu = z.mean(axis=-1, keepdims=True)
    zc = z - mu
    inv = 1.0 / np.sqrt(np.mean(zc ** 2, axis=-1, keepdims=True) + LN_EPS)
    zhat = zc * inv
    return zhat * scale + shift, zhat, inv


def _layer_norm_backward(g_y, zhat, inv, scale):
    g_scale = (g_y * zhat).reshape(-1, g_y.shape[-1]).sum(axis=0)
    g_shift = g_y.reshape(-1, g_y.shape[-1]).sum(axis=0)
    g_hat = g_y * scale
    g_z = inv * (g_hat - g_hat.mean(axis=-1, keepdims=True)
                 - zhat * np.mean(g_hat * zhat, axis=-1, keepdims=True))
    return g_z, g_scale, g_shift


def _mask(T: int, self_only: bool) -> np.ndarray:
    if self_only:
        return np.eye(T, dtype=bool)
    return np.tril(np.ones((T, T), dtype=bool))


def _forward(params: AttentionParams, inp: AttentionInputs):
    m = params.m
    if inp.m != m:
        raise ValueError(f"inputs built for m={inp.m}, parameters have m={m}")
    if inp.V.shape[-1] != feature_dim(m):
        raise ValueError("value feature dimension does not match m")
    c = {}
    c["zq"] = inp.q_feat @ params.W_q.T + params.b_q
    c["lnq"], c["qhat"], c["qinv"] = _layer_norm(c["zq"], params.ln_q_scale, params.ln_q_shift)
    c["sq"] = sigmoid(params.q_gate)
    Q1 = c["lnq"] * c["sq"]

    c["ck"] = inp.k_feat[..., None] * params.conv_k_weight + params.conv_k_bias
    c["zk"] = c["ck"] @ params.W_k.T + params.b_k
    c["lnk"], c["khat"], c["kinv"] = _layer_norm(c["zk"], params.ln_k_scale, params.ln_k_shift)
    c["sk"] = sigmoid(params.k_gate)
    K1 = c["lnk"] * c["sk"]

    T = Q1.shape[1]
    mask = _mask(T, inp.self_only)
    W = Q1 @ np.ascontiguousarray(np.swapaxes(K1, -1, -2)) / np.sqrt(m)
    W = np.where(mask, W, -np.inf)
    W = W - W.max(axis=-1, keepdims=True)
    alpha = np.exp(W)
    alpha /= alpha.sum(axis=-1, keepdims=True)

    c["sv"] = sigmoid(params.v_gate)
    V1 = inp.V * c["sv"]
    A = alpha @ V1
    S = sliding_sum(A, inp.L, axis=1)
    c.update(Q1=Q1, K1=K1, alpha=alpha, V1=V1, mask=mask)
    return S, c


def attention_weights(params: AttentionParams, inp: AttentionInputs) -> np.ndarray:
    """Softmax weights, shape (F, T, T); row t attends to frames <= t."""
    return _forward(params, inp)[1]["alpha"]


def attention_forward(params: AttentionParams, inp: AttentionInputs) -> WienerStats:
    """Enhanced statistics ``(XᴴX)_1, (XᴴY)_1`` with R made exactly Hermitian."""
    params.validate()
    S, _ = _forward(params, inp)
    M, r = unpack(S, params.m)
    R = 0.5 * (M + np.conj(np.swapaxes(M, -1, -2)))
    return WienerStats(R, r, inp.L)


def attention_backward(params: AttentionParams, inp: AttentionInputs,
                       g_R: np.ndarray, g_r: np.ndarray) -> AttentionParams:
    """Parameter gradients of ``Re<g_R, R> + Re<g_r, r>``.

    ``g_R`` and ``g_r`` are the upstream gradients with respect to the
    enhanced statistics (real and imaginary parts treated as independent
    real variables). The result is an :class:`AttentionParams` holding
    gradients in place of values.
    """
    m = params.m
    F, T = inp.k_feat.shape
    if g_R.shape != (F, T, m, m) or g_r.shape != (F, T, m):
        raise ValueError(
            f"upstream gradient shapes {g_R.shape}, {g_r.shape} do not match "
            f"statistics ({F}, {T}, {m}, {m}) / ({F}, {T}, {m})")
    S, c = _forward(params, inp)

    g_M = 0.5 * (g_R + np.conj(np.swapaxes(g_R, -1, -2)))
    g_S = pack(g_M, g_r)
    # adjoint of the causal window sum: anti-causal window sum
    g_A = np.ascontiguousarray(sliding_sum(g_S[:, ::-1], inp.L, axis=1)[:, ::-1])

    alpha, V1 = c["alpha"], c["V1"]
    g_alpha = g_A @ np.swapaxes(V1, -1, -2)
    g_V1 = np.swapaxes(alpha, -1, -2) @ g_A
    g_v = np.einsum("ftd,ftd->d", g_V1, inp.V) * c["sv"] * (1 - c["sv"])

    g_W = alpha * (g_alpha - np.sum(alpha * g_alpha, axis=-1, keepdims=True))
    g_W = np.where(c["mask"], g_W, 0.0) / np.sqrt(m)
    g_Q1 = g_W @ c["K1"]
    g_K1 = np.swapaxes(g_W, -1, -2) @ c["Q1"]

    g = params.zeros_like()
    g.q_gate = np.einsum("ftc,ftc->c", g_Q1, c["lnq"]) * c["sq"] * (1 - c["sq"])
    g_zq, g.ln_q_scale, g.ln_q_shift = _layer_norm_backward(
        g_Q1 * c["sq"], c["qhat"], c["qinv"], params.ln_q_scale)
    g.W_q = np.einsum("fti,ftj->ij", g_zq, inp.q_feat)
    g.b_q = g_zq.sum(axis=(0, 1))

    g.k_gate = np.einsum("ftc,ftc->c", g_K1, c["lnk"]) * c["sk"] * (1 - c["sk"])
    g_zk, g.ln_k_scale, g.ln_k_shift = _layer_norm_backward(
        g_K1 * c["sk"], c["khat"], c["kinv"], params.ln_k_scale)
    g.W_k = np.einsum("fti,ftj->ij", g_zk, c["ck"])
    g.b_k = g_zk.sum(axis=(0, 1))
    g_ck = g_zk @ params.W_k
    g.conv_k_weight = np.einsum("ftc,ft->c", g_ck, inp.k_feat)
    g.conv_k_bias = g_ck.sum(axis=(0, 1))
    g.v_gate = g_v
    return g


def enhanced_stats(params: AttentionParams, X, D, L: int,
                   x_unf: UnfoldedFarEnd | None = None) -> WienerStats:
    """Convenience wrapper: attention inputs from spectra, then forward."""
    inp = make_inputs(X, D, params.m, L, x_unf=x_unf)
    return attention_forward(params, inp)


# --- surrogate training -------------------------------------------------------

@dataclass
class TrainingExample:
    """One training item: attention inputs under double talk plus the echo-only filter.

    ``target_filter`` is the Wiener filter solved from statistics of the
    echo alone, shape (F, T, m).
    """
    inputs: AttentionInputs
    target_filter: np.ndarray
    taps: np.ndarray | None = None  # unfolded far end (F, T, m)
    echo: np.ndarray | None = None  # echo-only spectrum (F, T)
    target_stats: WienerStats | None = None  # plain statistics of the echo alone

    @classmethod
    def from_spectra(cls, X, D, Y, m: int, L: int, epsilon: float = 1e-3):
        """Build from far-end ``X``, microphone ``D`` and echo-only ``Y`` spectra (T, F)."""
        from .wiener import accumulate_stats, solve
        Y = np.asarray(getattr(Y, "data", Y))
        x_unf = unfold(np.asarray(getattr(X, "data", X)), m)
        target = accumulate_stats(x_unf, Y, L)
        h = solve(target, epsilon).H
        return cls(make_inputs(X, D, m, L, x_unf=x_unf), h, x_unf.data, Y.T.copy(), target)


def stats_loss(params: AttentionParams, examples, with_grad: bool = True):
    """Squared distance between enhanced and echo-only statistics.

    Normalised per example by the energy of the target statistics. Note that
    the softmax output is a weighted average while the target is a plain sum
    over the window, so the optimum has to rescale through the gates.
    """
    total = 0.0
    grads = params.zeros_like() if with_grad else None
    n = len(examples)
    for ex in examples:
        if ex.target_stats is None:
            raise ValueError("stats_loss needs examples with target_stats")
        est = attention_forward(params, ex.inputs)
        dR = est.R - ex.target_stats.R
        dr = est.r - ex.target_stats.r
        Z = (np.sum(np.abs(ex.target_stats.R) ** 2) + np.sum(np.abs(ex.target_stats.r) ** 2)
             + 1e-300) * n
        total += float(np.sum(np.abs(dR) ** 2) + np.sum(np.abs(dr) ** 2)) / Z
        if with_grad:
            g = attention_backward(params, ex.inputs, 2 * dR / Z, 2 * dr / Z)
            for name in params.tensor_names():
                getattr(grads, name)[...] += getattr(g, name)
    return float(total), grads


def echo_loss(params: AttentionParams, examples, with_grad: bool = True,
              epsilon: float = 1e-3):
    """Echo-estimation error of the filter solved from the enhanced statistics.

    For each (f, t) the filter ``h = (R1 + epsilon tr(R1)/m I)^-1 r1`` predicts
    ``sum_k h_k X[t-k]``; the loss is the squared distance to the true echo,
    divided by the echo energy of the bin and averaged over examples. This is
    the quantity the canceller leaves behind as residual echo, so lowering it
    raises output SDR directly. The gradient passes through the linear solve.
    """
    total = 0.0
    grads = params.zeros_like() if with_grad else None
    n = len(examples)
    m = params.m
    eye = np.eye(m)
    for ex in examples:
        if ex.taps is None or ex.echo is None:
            raise ValueError("echo_loss needs examples built with taps and echo")
        est = attention_forward(params, ex.inputs)
        tr = np.trace(est.R, axis1=-2, axis2=-1).real
        A = est.R + (epsilon * tr / m)[..., None, None] * eye
        scale = max(float(np.max(tr)), 1e-300) * 1e-12
        A = A + scale * eye  # keeps silent frames solvable
        h = np.linalg.solve(A, est.r[..., None])[..., 0]
        e = np.sum(h * ex.taps, axis=-1) - ex.echo
        energy = np.sum(np.abs(ex.echo) ** 2, axis=-1, keepdims=True) + 1e-12
        w = 1.0 / (energy * len(ex.echo) * n)
        total += float(np.sum(w * np.abs(e) ** 2))
        if with_grad:
            g_h = 2 * (w * e)[..., None] * np.conj(ex.taps)
            u = np.linalg.solve(A, g_h[..., None])[..., 0]  # A is Hermitian
            g_A = -u[..., :, None] * np.conj(h)[..., None, :]
            tr_g = np.trace(g_A, axis1=-2, axis2=-1).real
            g_R = g_A + (epsilon / m * tr_g)[..., None, None] * eye
            g = attention_backward(params, ex.inputs, g_R, u)
            for name in params.tensor_names():
                getattr(grads, name)[...] += getattr(g, name)
    return float(total), grads


def surrogate_loss(params: AttentionParams, examples, with_grad: bool = True):
    """Normal-equation residual of the enhanced statistics at the echo-only filter.

    Per (f, t): ``|R1 h* - r1|^2 / (tr(R1) / m)^2``, averaged over bins, frames
    and examples. It vanishes whenever ``(R1, r1)`` is any reweighting of
    single-talk statistics consistent with the echo path ``h*``, and grows
    with near-end leakage into ``r1``. The trace normalisation removes the
    trivial optimum of shrinking all gates. Returns ``(loss, grads)``.
    """
    total = 0.0
    grads = params.zeros_like() if with_grad else None
    n = len(examples)
    m = params.m
    for ex in examples:
        est = attention_forward(params, ex.inputs)
        h = ex.target_filter
        e = np.einsum("ftij,ftj->fti", est.R, h) - est.r
        tau = np.trace(est.R, axis1=-2, axis2=-1).real / m
        delta = 1e-6 * max(float(np.mean(np.abs(tau))), 1e-300)
        denom = tau ** 2 + delta ** 2
        err = np.sum(np.abs(e) ** 2, axis=-1)
        count = err.size * n
        total += float(np.sum(err / denom)) / count
        if with_grad:
            w = 1.0 / (denom * count)
            g_R = 2 * w[..., None, None] * e[..., :, None] * np.conj(h)[..., None, :]
            g_trace = -2 * err * tau / denom ** 2 / count / m
            g_R = g_R + g_trace[..., None, None] * np.eye(m)
            g_r = -2 * w[..., None] * e
            g = attention_backward(params, ex.inputs, g_R, g_r)
            for name in params.tensor_names():
                getattr(grads, name)[...] += getattr(g, name)
    return float(total), grads


@dataclass
class TrainResult:
    params: AttentionParams
    losses: np.ndarray
    smoothed: np.ndarray  # running minimum of ``losses``


FROZEN_BY_DEFAULT = ("v_gate",)


def train_surrogate(params: AttentionParams, examples, steps: int = 200, lr: float = 1e-2,
                    optimizer: str = "adam", frozen=FROZEN_BY_DEFAULT,
                    objective: str = "echo",
                    betas=(0.9, 0.999), eps: float = 1e-8) -> TrainResult:
    """Full-batch gradient descent on a surrogate objective.

    ``objective`` selects :func:`echo_loss` (``"echo"``, the default),
    :func:`surrogate_loss` (``"residual"``) or :func:`stats_loss`
    (``"stats"``). Only the first improves cancellation in practice; the
    other two reach low loss with statistics that solve to worse filters.
    ``frozen`` lists tensors left untouched. By default that is the value
    gate: gating the entries of ``conj(x) x^T`` one by one can make the
    enhanced autocorrelation indefinite, while the softmax weights scale
    whole frames and keep it positive semidefinite.

    ``losses[i]`` is the loss before update ``i``; the final entry is the
    loss of the returned parameters. Raises ``FloatingPointError`` if the
    loss becomes non-finite.
    """
    if optimizer not in ("adam", "sgd"):
        raise ValueError(f"unknown optimizer {optimizer!r}")
    objectives = {"echo": echo_loss, "residual": surrogate_loss, "stats": stats_loss}
    if objective not in objectives:
        raise ValueError(f"unknown objective {objective!r}, expected one of {sorted(objectives)}")
    loss_fn = objectives[objective]
    params = params.copy()
    unknown = set(frozen) - set(params.tensor_names())
    if unknown:
        raise ValueError(f"unknown tensors in frozen: {sorted(unknown)}")
    names = [n for n in params.tensor_names() if n not in frozen]
    m1 = {k: np.zeros_like(v) for k, v in params.arrays().items()}
    m2 = {k: np.zeros_like(v) for k, v in params.arrays().items()}
    losses = []
    for step in range(steps):
        loss, grads = loss_fn(params, examples)
        if not np.isfinite(loss):
            raise FloatingPointError(f"surrogate loss became non-finite at step {step}")
        losses.append(loss)
        for name in names:
            p, g = getattr(params, name), getattr(grads, name)
            if optimizer == "sgd":
                p -= lr * g
                continue
            m1[name] = betas[0] * m1[name] + (1 - betas[0]) * g
            m2[name] = betas[1] * m2[name] + (1 - betas[1]) * g * g
            mhat = m1[name] / (1 - betas[0] ** (step + 1))
            vhat = m2[name] / (1 - betas[1] ** (step + 1))
            p -= lr * mhat / (np.sqrt(vhat) + eps)
        if step % 50 == 0:
            logger.info("step %d loss %.6g", step, loss)
    final, _ = loss_fn(params, examples, with_grad=False)
    if not np.isfinite(final):
        raise FloatingPointError("surrogate loss became non-finite after the last step")
    losses.append(final)
    losses = np.asarray(losses)
    return TrainResult(params, losses, np.minimum.accumulate(losses))


# --- checkpoints --------------------------------------------------------------

class CheckpointError(ValueError):
    pass


def save_checkpoint(params: AttentionParams, path):
    """Write an ``.npz`` with one array per tensor plus version, m and seed."""
    np.savez(path, __version__=np.array(CHECKPOINT_VERSION), m=np.array(params.m),
             seed=np.array(params.seed), **params.arrays())


def load_checkpoint(path) -> AttentionParams:
    with np.load(path, allow_pickle=False) as z:
        version = int(z["__version__"]) if "__version__" in z else None
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        m, seed = int(z["m"]), int(z["seed"])
        arrays = {}
        for name in AttentionParams.tensor_names():
            if name not in z:
                raise CheckpointError(f"checkpoint is missing tensor {name!r}")
            arrays[name] = np.array(z[name], dtype=float)
    params = AttentionParams(m=m, seed=seed, **arrays)
    try:
        params.validate()
    except ValueError as exc:
        raise CheckpointError(str(exc)) from None
    return params
