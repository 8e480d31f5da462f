"""Short-time Wiener echo canceller in the STFT domain.

For every bin ``f`` and frame ``t`` the multi-frame filter ``H[f, t, :]``
solves the regularized normal equations built from the last ``L`` frames,

    (R + eps * tr(R) / m * I) h = r,
    R = sum_tau conj(x_tau) x_tau^T,   r = sum_tau conj(x_tau) D[tau],

with ``x_tau = [X[tau], X[tau-1], ..., X[tau-m+1]]``. The echo estimate is
``sum_k H[f, t, k] X[t-k, f]`` and is subtracted from the microphone
spectrum.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .stft import Spectrogram, StftConfig, UnfoldedFarEnd, stft, unfold

logger = logging.getLogger(__name__)


@dataclass
class WienerStats:
    """Windowed correlation statistics.

    R : complex array (F, T, m, m), Hermitian PSD per (f, t)
    r : complex array (F, T, m)
    """
    R: np.ndarray
    r: np.ndarray
    window_frames: int

    @property
    def m(self) -> int:
        return self.r.shape[-1]


@dataclass
class WienerFilter:
    H: np.ndarray  # (F, T, m)
    epsilon: float


def sliding_sum(a: np.ndarray, L: int, axis: int = -1) -> np.ndarray:
    """Causal window sum ``out[t] = sum(a[max(0, t-L+1) : t+1])`` along ``axis``.

    Uses block prefix/suffix sums (van Herk / Gil-Werman) so no running
    total is ever subtracted. Quiet stretches after loud ones therefore
    keep full relative precision.
    """
    if L < 1:
        raise ValueError(f"window length must be >= 1, got {L}")
    a = np.moveaxis(np.asarray(a), axis, -1)
    n = a.shape[-1]
    if L == 1:
        return np.moveaxis(a.copy(), -1, axis)
    nblocks = -(-(n + 2 * L - 1) // L)
    b = np.zeros(a.shape[:-1] + (nblocks * L,), dtype=a.dtype)
    b[..., L - 1:L - 1 + n] = a
    blocks = b.reshape(a.shape[:-1] + (nblocks, L))
    prefix = np.cumsum(blocks, axis=-1).reshape(b.shape)
    suffix = np.cumsum(blocks[..., ::-1], axis=-1)[..., ::-1].reshape(b.shape)
    t = np.arange(n)
    out = suffix[..., t] + np.where(t % L != 0, prefix[..., t + L - 1], 0)
    return np.moveaxis(out, -1, axis)


def _check_shapes(x_unf: UnfoldedFarEnd, d: Spectrogram | np.ndarray):
    D = d.data if isinstance(d, Spectrogram) else np.asarray(d)
    F, T, _ = x_unf.data.shape
    if D.shape != (T, F):
        raise ValueError(
            f"microphone spectrogram shape {D.shape} does not match far-end (T={T}, F={F})")
    return D


def accumulate_stats(x_unf: UnfoldedFarEnd, d: Spectrogram | np.ndarray,
                     L: int) -> WienerStats:
    """Sliding-window normal-equation statistics for every (f, t).

    ``x_unf`` must come from :func:`unfold`: the computation uses its shift
    structure and only reads the current-frame column ``x_unf.data[..., 0]``.
    """
    D = _check_shapes(x_unf, d)
    if L < 1:
        raise ValueError(f"window length must be >= 1, got {L}")
    F, T, m = x_unf.data.shape
    X = x_unf.data[:, :, 0]
    # Xp[:, a] = X[a - (m-1)], zero for negative frames and past the end
    Xp = np.zeros((F, T + 2 * (m - 1)), dtype=complex)
    Xp[:, m - 1:m - 1 + T] = X
    n = T + m - 1
    lag = np.empty((m, F, n), dtype=complex)
    for dlag in range(m):
        lag[dlag] = np.conj(Xp[:, :n]) * Xp[:, dlag:dlag + n]
    lag = sliding_sum(lag, L, axis=-1)

    i, j = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    dlag = np.abs(i - j)
    tt = np.arange(T)[:, None, None] - np.maximum(i, j)[None] + (m - 1)
    lag = np.ascontiguousarray(lag.transpose(1, 2, 0)).reshape(F, n * m)
    R = np.take(lag, tt * m + dlag[None], axis=1)         # (F, T, m, m)
    np.conjugate(R, out=R, where=(i < j))

    Dp = np.zeros((F, T + m - 1), dtype=complex)
    Dp[:, m - 1:] = D.T
    cross = np.empty((m, F, n), dtype=complex)
    for k in range(m):
        cross[k, :, :n - k] = np.conj(Xp[:, :n - k]) * Dp[:, k:n]
        cross[k, :, n - k:] = 0
    cross = np.ascontiguousarray(sliding_sum(cross, L, axis=-1).transpose(1, 2, 0))
    kk = np.arange(m)
    r = cross[:, np.arange(T)[:, None] - kk[None, :] + (m - 1), kk[None, :]]  # (F, T, m)
    return WienerStats(R, r, L)


def solve(stats: WienerStats, epsilon: float = 1e-3, rcond: float = 1e-12) -> WienerFilter:
    """Regularized per-(f, t) solve of ``R h = r``.

    Systems with zero far-end energy (``tr R == 0``) get ``h = 0``. The
    others are solved through a Cholesky factorization; if any system of
    the batch is not numerically positive definite (typically ``epsilon = 0``
    with fewer frames than taps) the batch falls back to an eigenvalue
    pseudo-inverse that discards eigenvalues below ``rcond * max eigenvalue``.
    """
    if epsilon < 0:
        raise ValueError(f"epsilon must be >= 0, got {epsilon}")
    R, r = stats.R, stats.r
    if not (np.all(np.isfinite(R)) and np.all(np.isfinite(r))):
        raise FloatingPointError("Wiener statistics contain non-finite values")
    m = r.shape[-1]
    H = np.zeros(r.shape, dtype=complex)
    tr = np.trace(R, axis1=-2, axis2=-1).real
    active = tr > 0
    if not np.any(active):
        return WienerFilter(H, epsilon)
    everything = bool(np.all(active))
    A = R.reshape(-1, m, m).copy() if everything else R[active]
    b = r.reshape(-1, m) if everything else r[active]
    if epsilon > 0:
        diag = np.einsum("nii->ni", A)
        diag += (epsilon * tr[active] / m)[:, None]
    try:
        chol = np.linalg.cholesky(A)
        h = _cholesky_substitute(chol, b)
    except np.linalg.LinAlgError:
        logger.debug("Cholesky failed on %d systems, using eigen pseudo-inverse", len(A))
        h = _pinv_solve(A, b, rcond)
    if everything:
        H = h.reshape(r.shape)
    else:
        H[active] = h
    return WienerFilter(H, epsilon)


def _cholesky_substitute(chol: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``L L^H h = b`` for a batch of lower factors ``L``."""
    m = b.shape[-1]
    y = np.empty_like(b)
    for i in range(m):
        acc = b[:, i] - np.einsum("nj,nj->n", chol[:, i, :i], y[:, :i])
        y[:, i] = acc / chol[:, i, i]
    h = np.empty_like(b)
    for i in range(m - 1, -1, -1):
        # row i of L^H is conj(L[:, i+1:, i])
        acc = y[:, i] - np.einsum("nj,nj->n", np.conj(chol[:, i + 1:, i]), h[:, i + 1:])
        h[:, i] = acc / np.conj(chol[:, i, i])
    return h


def _pinv_solve(A: np.ndarray, b: np.ndarray, rcond: float) -> np.ndarray:
    A = 0.5 * (A + np.conj(np.swapaxes(A, -1, -2)))
    w, V = np.linalg.eigh(A)
    cutoff = rcond * np.max(w, axis=-1, keepdims=True)
    inv = np.where(w > cutoff, 1.0 / np.where(w > cutoff, w, 1.0), 0.0)
    coef = np.einsum("nji,nj->ni", np.conj(V), b) * inv
    return np.einsum("nij,nj->ni", V, coef)


def echo_estimate(x_unf: UnfoldedFarEnd, h: WienerFilter) -> np.ndarray:
    """``Y_hat[t, f] = sum_k H[f, t, k] X[t-k, f]``, shape (T, F)."""
    if h.H.shape != x_unf.data.shape:
        raise ValueError(f"filter shape {h.H.shape} does not match far-end {x_unf.data.shape}")
    return np.sum(h.H * x_unf.data, axis=-1).T


def subtract_echo(d: Spectrogram, x_unf: UnfoldedFarEnd, h: WienerFilter) -> Spectrogram:
    D = _check_shapes(x_unf, d)
    out = D - echo_estimate(x_unf, h)
    if isinstance(d, Spectrogram):
        return Spectrogram(out, d.config, d.length)
    return Spectrogram(out)


def stws_pipeline(far, mic, m: int = 20, L: int = 100, epsilon: float = 1e-3,
                  config: StftConfig | None = None,
                  stats_override: WienerStats | None = None,
                  attention=None, bin_chunk: int = 16):
    """Run the canceller end to end on two time-domain signals.

    Parameters
    ----------
    far, mic : array_like
        Equal-length loudspeaker and microphone signals.
    m : int
        Number of filter taps (frames) per bin.
    L : int
        Sliding estimation window, in frames.
    epsilon : float
        Regularization relative to ``tr(R) / m``.
    stats_override : WienerStats, optional
        Precomputed statistics used in place of the plain sliding-window ones.
    attention : AttentionParams, optional
        When given, statistics are replaced by their attention-enhanced
        version (see :mod:`wiener_aec.attention`).
    bin_chunk : int
        Number of frequency bins processed together; bounds peak memory.

    Returns
    -------
    (Spectrogram, WienerFilter)
        Echo-cancelled microphone spectrum and the per-frame filters.
    """
    far = np.asarray(far, dtype=float)
    mic = np.asarray(mic, dtype=float)
    if far.shape != mic.shape:
        raise ValueError(f"far {far.shape} and mic {mic.shape} must have equal length")
    config = config or StftConfig()
    X = stft(far, config)
    D = stft(mic, config)
    x_unf = unfold(X, m)
    if stats_override is not None:
        h = solve(stats_override, epsilon)
        return subtract_echo(D, x_unf, h), h

    F, T = X.n_bins, X.n_frames
    H = np.zeros((F, T, m), dtype=complex)
    for f0 in range(0, F, bin_chunk):
        sl = slice(f0, min(F, f0 + bin_chunk))
        xu = UnfoldedFarEnd(x_unf.data[sl])
        Dc = D.data[:, sl]
        if attention is None:
            stats = accumulate_stats(xu, Dc, L)
        else:
            from .attention import enhanced_stats
            stats = enhanced_stats(attention, X.data[:, sl], Dc, L, x_unf=xu)
        H[sl] = solve(stats, epsilon).H
    h = WienerFilter(H, epsilon)
    return subtract_echo(D, x_unf, h), h
