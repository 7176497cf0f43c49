"""Data-driven maximum-sensitivity estimation, penalty and small-gain stabilizing gain."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import eigh

from .exceptions import DegenerateIR
from .lti import DataSet, Signal, TransferFunction, simulate
from .sysid import DEFAULT_ORDER, ImpulseResponseEstimate, KernelParams, fir_estimate

__all__ = [
    "RobustnessSpec", "SensitivitySignals", "toeplitz_hinf", "sensitivity_signals",
    "estimate_ms", "penalty_h", "stabilizing_gain", "ORACLE_ORDER",
]

ORACLE_ORDER = 400
_POWER_TOL = 1e-9
_POWER_MAXIT = 500


@dataclass(frozen=True)
class RobustnessSpec:
    """Robustness requirement ``M_S <= ms_desired`` enforced with penalty weight ``c``."""

    ms_desired: float = 1.8
    penalty_weight: float = 1e6
    ir_order: int = DEFAULT_ORDER

    def __post_init__(self):
        if self.ms_desired < 1.0:
            raise ValueError("ms_desired must be >= 1")
        if self.penalty_weight < 1.0:
            raise ValueError("penalty_weight must be >= 1")
        if self.ir_order < 1:
            raise ValueError("ir_order must be >= 1")


@dataclass(frozen=True)
class SensitivitySignals:
    """Input ``zeta`` and output ``xi`` of the sensitivity function."""

    zeta: Signal
    xi: Signal

    def __post_init__(self):
        if len(self.zeta) != len(self.xi):
            raise ValueError("zeta and xi must have equal length")


def toeplitz_hinf(ir, method: str = "eigh") -> float:
    """Largest singular value of the lower-triangular Toeplitz matrix of ``ir``.

    ``method="eigh"`` takes the top eigenvalue of ``S' S`` from LAPACK's
    partial symmetric eigensolver. ``method="power"`` runs power iteration
    from the constant vector (relative tolerance 1e-9, at most 500 steps);
    it converges slowly because the singular values of ``S`` cluster near the
    top, so it is kept only as a cross-check.
    """
    s = ir.coeffs if isinstance(ir, ImpulseResponseEstimate) else np.asarray(ir, dtype=float)
    if s.size < 1 or not np.all(np.isfinite(s)):
        raise ValueError("impulse response must be non-empty and finite")
    if not np.any(s):
        return 0.0
    S = ImpulseResponseEstimate(s).toeplitz()
    A = S.T @ S
    n = s.size
    if method == "eigh":
        top = eigh(A, eigvals_only=True, subset_by_index=[n - 1, n - 1])[0]
        return float(np.sqrt(max(top, 0.0)))
    if method != "power":
        raise ValueError(f"unknown method {method!r}")
    v = np.full(n, 1.0 / np.sqrt(n))
    lam = 0.0
    for _ in range(_POWER_MAXIT):
        w = A @ v
        nrm = float(np.sqrt(w @ w))
        if nrm == 0.0:
            return float(np.linalg.norm(S, 2))
        v = w / nrm
        if abs(nrm - lam) <= _POWER_TOL * nrm:
            break
        lam = nrm
    return float(np.sqrt(nrm))


def sensitivity_signals(data: DataSet, C: TransferFunction) -> SensitivitySignals:
    """``zeta = u + C y`` and ``xi = u``: by ``u = S zeta`` they are the input and output of S."""
    zeta = data.u.samples + simulate(C, data.y.samples)
    return SensitivitySignals(Signal(zeta, data.dt), data.u)


def estimate_ms(data: DataSet, C: TransferFunction, spec: RobustnessSpec, kp: KernelParams,
                iv_data: Optional[DataSet] = None) -> float:
    """One-shot estimate of ``||S||_inf`` for controller ``C`` from closed-loop data.

    When ``iv_data`` (a second batch driven by the same reference) is supplied,
    its ``zeta`` serves as an instrument in the FIR fit. Noise enters ``zeta``
    through ``C y``, so without it the estimate is biased toward zero.
    """
    sig = sensitivity_signals(data, C)
    inst = None
    if iv_data is not None:
        inst = sensitivity_signals(iv_data, C).zeta
    ir = fir_estimate(sig.zeta, sig.xi, spec.ir_order, kp, instrument=inst, warn_tail=False)
    return toeplitz_hinf(ir)


def penalty_h(ms_hat: float, ms_desired: float) -> float:
    return 0.5 * max(0.0, float(ms_hat) - float(ms_desired)) ** 2


def stabilizing_gain(ir, safety: float = 0.5) -> float:
    """Static gain ``safety / ||G||_inf`` that closes a stable loop by the small-gain theorem."""
    if not 0.0 < safety < 1.0:
        raise ValueError("safety must lie in (0, 1)")
    nrm = toeplitz_hinf(ir)
    if nrm == 0.0:
        raise DegenerateIR("plant impulse response has zero norm")
    return safety / nrm
