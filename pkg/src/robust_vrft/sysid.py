"""Kernel-regularized FIR identification and sign-based NMP detection."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.linalg import toeplitz

from .exceptions import DegenerateIR, EstimationFailed
from .lti import Signal

__all__ = [
    "ImpulseResponseEstimate", "KernelParams", "regressor", "tc_kernel",
    "fir_estimate", "tune_kernel", "nmp_detect", "DEFAULT_ORDER",
    "DECAY_GRID", "SCALE_GRID",
]

DEFAULT_ORDER = 100
DECAY_GRID = (0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99)
SCALE_GRID = (0.1, 1.0, 10.0)
_TAIL_WARN = 1e-3


@dataclass(frozen=True)
class ImpulseResponseEstimate:
    """Truncated impulse response ``s(0), ..., s(M)``."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float).ravel()
        if c.size < 1:
            raise ValueError("an impulse response needs at least one coefficient")
        if not np.all(np.isfinite(c)):
            raise ValueError("impulse response coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def order(self) -> int:
        return self.coeffs.size - 1

    @property
    def tail_magnitude(self) -> float:
        return float(np.mean(np.abs(self.coeffs[-2:])))

    def toeplitz(self) -> np.ndarray:
        """Lower-triangular Toeplitz matrix ``S_M`` built from the coefficients."""
        return toeplitz(self.coeffs, np.zeros_like(self.coeffs))


@dataclass(frozen=True)
class KernelParams:
    """Hyperparameters of the TC kernel ``K_ij = scale * decay**max(i, j)``."""

    scale: float
    decay: float
    noise_var: float

    def __post_init__(self):
        if not 0.0 < self.decay < 1.0:
            raise ValueError("decay must lie strictly inside (0, 1)")
        if not (self.scale > 0 and self.noise_var > 0):
            raise ValueError("scale and noise_var must be positive")


def regressor(x, M: int) -> np.ndarray:
    """N x (M+1) convolution matrix of ``x`` with zero pre-sample history."""
    x = np.asarray(x, dtype=float)
    return toeplitz(x, np.zeros(M + 1))


def tc_kernel(M: int, scale: float, decay: float) -> np.ndarray:
    i = np.arange(M + 1)
    return scale * decay ** np.maximum.outer(i, i)


@lru_cache(maxsize=64)
def _kernel_factor(M, scale, decay):
    K = tc_kernel(M, scale, decay)
    try:
        Lk = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        # Very fast decays underflow the trailing pivots; fall back to a symmetric square root.
        w, V = np.linalg.eigh(K)
        Lk = V * np.sqrt(np.clip(w, 0.0, None))
    Lk.setflags(write=False)
    return Lk


def _as_array(x):
    return x.samples if isinstance(x, Signal) else np.asarray(x, dtype=float)


def _check_inputs(u, y, M):
    if u.shape != y.shape:
        raise ValueError("input and output must have the same length")
    if u.size <= M + 1:
        raise ValueError(f"need N > M+1 samples (N={u.size}, M={M})")
    if not np.any(u):
        raise ValueError("input is identically zero")


def _solve(Phi, Z, Y, Lk, noise_var):
    A = Lk.T @ (Z.T @ Phi) @ Lk
    b = Lk.T @ (Z.T @ Y)
    try:
        c = np.linalg.solve(A + noise_var * np.eye(A.shape[0]), b)
    except np.linalg.LinAlgError as exc:
        raise EstimationFailed(str(exc)) from exc
    s = Lk @ c
    if not np.all(np.isfinite(s)):
        raise EstimationFailed("non-finite impulse response estimate")
    return s, A


def fir_estimate(input, output, M: int, kp: KernelParams, instrument=None,
                 warn_tail: bool = True) -> ImpulseResponseEstimate:
    """Regularized least-squares FIR estimate of the system mapping ``input`` to ``output``.

    Minimizes ``||Y - Phi s||^2 + noise_var * s' K^{-1} s`` with the TC kernel ``K``.
    The problem is solved in the coordinates ``s = Lk c`` (``K = Lk Lk'``) so
    that ``K`` is never inverted.

    Parameters
    ----------
    input, output : Signal or array_like
        Equal-length records.
    M : int
        FIR order; ``M + 1`` coefficients are estimated.
    kp : KernelParams
    instrument : Signal or array_like, optional
        Second realization of ``input`` carrying independent noise. When given,
        the normal equations use its regressor ``Z`` in place of ``Phi'``
        (``Z' Phi`` and ``Z' Y``), which removes the bias caused by noise on
        the input record.
    warn_tail : bool
        Emit a ``RuntimeWarning`` when the last two coefficients are not
        negligible relative to the peak, i.e. ``M`` looks too short.

    Returns
    -------
    ImpulseResponseEstimate
    """
    u = _as_array(input)
    y = _as_array(output)
    _check_inputs(u, y, M)
    Phi = regressor(u, M)
    if instrument is None:
        Z = Phi
    else:
        z = _as_array(instrument)
        if z.shape != u.shape:
            raise ValueError("instrument must have the same length as the input")
        Z = regressor(z, M)
    s, _ = _solve(Phi, Z, y, _kernel_factor(M, float(kp.scale), float(kp.decay)), kp.noise_var)
    ir = ImpulseResponseEstimate(s)
    peak = np.max(np.abs(s))
    if warn_tail and peak > 0 and ir.tail_magnitude > _TAIL_WARN * peak:
        warnings.warn(f"impulse response not settled at M={M} (tail/peak = "
                      f"{ir.tail_magnitude / peak:.2e})", RuntimeWarning, stacklevel=2)
    return ir


def tune_kernel(input, output, M: int) -> KernelParams:
    """Pick TC hyperparameters by generalized cross-validation on a fixed grid.

    ``noise_var`` comes from the residual variance of an unregularized LS FIR
    fit of the same order; (decay, scale) minimize
    ``N ||r||^2 / (N - tr H)^2`` over ``DECAY_GRID x SCALE_GRID``.
    """
    u = _as_array(input)
    y = _as_array(output)
    _check_inputs(u, y, M)
    N = y.size
    Phi = regressor(u, M)
    theta, *_ = np.linalg.lstsq(Phi, y, rcond=None)
    res = y - Phi @ theta
    noise_var = float(res @ res) / (N - M - 1)
    if not np.isfinite(noise_var):
        raise EstimationFailed("non-finite residual variance")
    # Exact in-class data leaves no residual; keep the regularizer tiny but positive.
    noise_var = max(noise_var, 1e-12 * max(float(y @ y) / N, 1e-300))
    best = None
    for decay in DECAY_GRID:
        for scale in SCALE_GRID:
            s, A = _solve(Phi, Phi, y, _kernel_factor(M, float(scale), float(decay)), noise_var)
            r = y - Phi @ s
            ev = np.linalg.eigvalsh(A)
            dof = float(np.sum(ev / (ev + noise_var)))
            gcv = N * float(r @ r) / (N - dof) ** 2
            if best is None or gcv < best[0]:
                best = (gcv, scale, decay)
    return KernelParams(scale=best[1], decay=best[2], noise_var=noise_var)


def nmp_detect(ir, threshold_fraction: float = 0.1) -> bool:
    """True if the response starts off in the direction opposite to its DC gain.

    The first coefficient exceeding ``threshold_fraction * max|s|`` is compared
    in sign with ``sum(s)``, a proxy for the DC gain.
    """
    s = ir.coeffs if isinstance(ir, ImpulseResponseEstimate) else np.asarray(ir, dtype=float)
    peak = np.max(np.abs(s))
    if peak == 0.0:
        raise DegenerateIR("impulse response is identically zero")
    first = s[np.flatnonzero(np.abs(s) > threshold_fraction * peak)[0]]
    return bool(np.sign(first) * np.sign(np.sum(s)) < 0)
