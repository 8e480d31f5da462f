"""Central finite-difference check of the attention backward pass."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import AttentionParams, attention_backward, attention_forward, make_inputs

TOLERANCE = 1e-4
STEP = 1e-4
# entries smaller than this are compared in absolute terms
FLOOR = 1e-6


def numerical_gradient(func, params: AttentionParams, step: float = STEP,
                       richardson: bool = False) -> AttentionParams:
    """Central differences; ``richardson`` combines steps h and h/2 to cancel the h^2 term."""
    grad = params.zeros_like()

    def central(arr, i, h):
        orig = arr.flat[i]
        arr.flat[i] = orig + h
        f_plus = func(params)
        arr.flat[i] = orig - h
        f_minus = func(params)
        arr.flat[i] = orig
        return (f_plus - f_minus) / (2 * h)

    for name in params.tensor_names():
        arr, out = getattr(params, name), getattr(grad, name)
        for i in range(arr.size):
            d = central(arr, i, step)
            if richardson:
                d = (4 * central(arr, i, step / 2) - d) / 3
            out.flat[i] = d
    return grad


def relative_error(analytic, numeric, floor: float = FLOOR) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), floor)


@dataclass
class GradCheckResult:
    seed: int
    errors: dict[str, float]

    @property
    def max_error(self) -> float:
        return max(self.errors.values())

    @property
    def worst_tensor(self) -> str:
        return max(self.errors, key=self.errors.get)


def random_instance(seed: int, F: int = 3, T: int = 4, m: int = 2, L: int = 2,
                    params: AttentionParams | None = None, perturb: float = 0.0):
    """Random spectra and upstream gradients.

    Parameters default to the initialization for ``seed``. ``perturb`` adds
    Gaussian noise of that scale to every tensor. With only two features per
    layer norm the loss is strongly curved in places; on perturbed instances
    plain central differences at ``STEP`` can exceed ``TOLERANCE`` through
    truncation error alone, so check those with ``richardson=True``.
    """
    rng = np.random.default_rng(seed)

    def cplx(*shape):
        return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)

    X, D = cplx(T, F), cplx(T, F)
    if params is None:
        params = AttentionParams.init(m, seed=seed)
        if perturb:
            for arr in params.arrays().values():
                arr += perturb * rng.standard_normal(arr.shape)
    inputs = make_inputs(X, D, params.m, L)
    return params, inputs, cplx(F, T, params.m, params.m), cplx(F, T, params.m)


def check_gradients(seed: int, params: AttentionParams | None = None, step: float = STEP,
                    richardson: bool = False, **shape) -> GradCheckResult:
    params, inputs, g_R, g_r = random_instance(seed, params=params, **shape)
    params = params.copy()

    def loss(p):
        stats = attention_forward(p, inputs)
        return float(np.sum((np.conj(g_R) * stats.R).real) + np.sum((np.conj(g_r) * stats.r).real))

    analytic = attention_backward(params, inputs, g_R, g_r)
    numeric = numerical_gradient(loss, params, step, richardson)
    errors = {}
    for name in params.tensor_names():
        err = relative_error(getattr(analytic, name), getattr(numeric, name))
        errors[name] = float(np.max(err)) if np.all(np.isfinite(err)) else float("inf")
    return GradCheckResult(seed, errors)


def run_suite(seeds=range(5), params: AttentionParams | None = None, **shape):
    return [check_gradients(seed, params=params, **shape) for seed in seeds]
