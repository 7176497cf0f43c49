"""Two-step robust design: VRFT, then swarm minimization of the penalized VRFT cost."""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .exceptions import ControlError
from .lti import DataSet, TransferFunction
from .robustness import RobustnessSpec, estimate_ms, penalty_h, sensitivity_signals
from .swarm import ALGORITHMS, OptResult, SearchSpace, SwarmConfig, center_spawn, convergence_iteration
from .sysid import ImpulseResponseEstimate, KernelParams, nmp_detect, tune_kernel
from .vrft import (ControllerBasis, FlexibleReferenceModel, FlexibleResult, cost_jvr,
                   design_filter, vrft_flexible, vrft_iv, vrft_ls, vrft_regression)

__all__ = ["DesignSpec", "DesignResult", "cost_jsi", "step1", "step2", "design",
           "rebuild_reference", "CONVERGENCE_DELTA"]

CONVERGENCE_DELTA = 1e-3
_MAX_CHECKS = 50


@dataclass(frozen=True)
class DesignSpec:
    Td_initial: TransferFunction
    basis: ControllerBasis
    robustness: RobustnessSpec = field(default_factory=RobustnessSpec)
    space: Optional[SearchSpace] = None
    swarm: SwarmConfig = field(default_factory=SwarmConfig)
    algorithm: str = "igwo"
    filter_policy: str = "auto"
    nmp_threshold: float = 0.1

    def __post_init__(self):
        if self.space is None:
            object.__setattr__(self, "space", SearchSpace(0.0, 10.0, len(self.basis)))
        if self.space.dim != len(self.basis):
            raise ValueError("search space dimension must equal the controller basis size")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.filter_policy != "auto":
            raise ValueError("only filter_policy='auto' is supported")
        if self.robustness.ms_desired > 2.0:
            warnings.warn("ms_desired > 2 admits poorly robust loops", UserWarning, stacklevel=2)


@dataclass
class DesignResult:
    rho_step1: np.ndarray
    ms_step1: float
    Td_used: TransferFunction
    used_flexible: bool
    kernel: KernelParams
    rho_final: Optional[np.ndarray] = None
    ms_final: Optional[float] = None
    jvr_final: Optional[float] = None
    jsi_final: Optional[float] = None
    iterations_to_converge: int = 0
    evaluations: int = 0
    step2_ran: bool = False
    feasible: bool = True
    flexible: Optional[FlexibleResult] = None
    history: Optional[np.ndarray] = None
    seconds_per_iteration: float = float("nan")
    ms_desired: float = np.nan

    @property
    def penalty(self) -> float:
        return penalty_h(self.ms_final, self.ms_desired)


class _JSI:
    """Picklable ``rho -> J^SI(rho)`` closure with the VRFT regression precomputed."""

    def __init__(self, data, Td, basis, L, robustness, kernel, iv_data=None):
        self.data, self.basis, self.robustness = data, basis, robustness
        self.kernel, self.iv_data = kernel, iv_data
        self.regression = vrft_regression(data, Td, basis, L)

    def parts(self, rho):
        jvr = cost_jvr(rho, self.data, None, self.basis, regression=self.regression)
        C = self.basis.controller(rho)
        ms = estimate_ms(self.data, C, self.robustness, self.kernel, self.iv_data)
        return jvr, ms

    def __call__(self, rho):
        try:
            jvr, ms = self.parts(rho)
        except (ControlError, ValueError, np.linalg.LinAlgError, FloatingPointError):
            return np.inf
        total = jvr + self.robustness.penalty_weight * penalty_h(ms, self.robustness.ms_desired)
        return total if np.isfinite(total) else np.inf


def cost_jsi(rho, data: DataSet, Td: TransferFunction, basis: ControllerBasis,
             L: Optional[TransferFunction], robustness: RobustnessSpec, kernel: KernelParams,
             iv_data: Optional[DataSet] = None) -> float:
    """``J^VR(rho) + c * H(rho)``; ``+inf`` when the robustness estimate fails."""
    L = design_filter(Td) if L is None else L
    return _JSI(data, Td, basis, L, robustness, kernel, iv_data)(rho)


def rebuild_reference(zero: float, poles, dt: float = 1.0) -> TransferFunction:
    """Second-order model with the given zero and poles, scaled to unit DC gain."""
    den = np.poly(poles)
    g = np.polyval(den, 1.0) / (1.0 - zero)
    return TransferFunction([g, -g * zero], den, dt)


def _fit(data, iv_data, Td, basis):
    if iv_data is not None:
        return vrft_iv(data, iv_data, Td, basis)
    return vrft_ls(data, Td, basis)


def step1(data: DataSet, probe_ir: ImpulseResponseEstimate, spec: DesignSpec,
          iv_data: Optional[DataSet] = None, kernel: Optional[KernelParams] = None) -> DesignResult:
    """VRFT design plus its data-driven robustness index.

    If the probe impulse response indicates a non-minimum-phase plant, the
    flexible criterion locates the reference-model zero. The reference model
    is then rebuilt from that zero, the designer's poles and unit DC gain,
    and the controller is re-fitted with the filtered (IV) estimator.
    """
    flex = None
    Td = spec.Td_initial
    used_flexible = nmp_detect(probe_ir, spec.nmp_threshold)
    if used_flexible:
        model = FlexibleReferenceModel.from_tf(spec.Td_initial)
        flex = vrft_flexible(data, model, spec.basis)
        Td = rebuild_reference(flex.model.zero(), model.poles, spec.Td_initial.dt)
    rho = _fit(data, iv_data, Td, spec.basis)
    C = spec.basis.controller(rho)
    if kernel is None:
        sig = sensitivity_signals(data, C)
        kernel = tune_kernel(sig.zeta, sig.xi, spec.robustness.ir_order)
    ms = estimate_ms(data, C, spec.robustness, kernel, iv_data)
    jvr = cost_jvr(rho, data, Td, spec.basis)
    return DesignResult(rho_step1=rho, ms_step1=ms, Td_used=Td, used_flexible=used_flexible,
                        kernel=kernel, flexible=flex, rho_final=rho, ms_final=ms, jvr_final=jvr,
                        jsi_final=jvr + spec.robustness.penalty_weight
                        * penalty_h(ms, spec.robustness.ms_desired),
                        feasible=ms <= spec.robustness.ms_desired,
                        ms_desired=spec.robustness.ms_desired)


def _select(f: "_JSI", opt: OptResult, ms_desired: float, max_checks: int = _MAX_CHECKS):
    """Cheapest evaluated point that meets the robustness bound.

    The quadratic penalty lets the unconstrained minimizer of ``J^SI`` sit a
    hair outside the bound. Over the whole archive, points with zero penalty
    are exactly those where ``J^SI = J^VR``, and ``J^VR`` is cheap to
    recompute in bulk. Candidates are confirmed by a full evaluation in
    increasing ``J^VR`` order. Falls back to the optimizer's best if no
    feasible point was evaluated.
    """
    X, c = opt.archive_positions, opt.archive_costs
    uL, Phi = f.regression
    jvr_all = np.sum((uL[:, None] - Phi @ X.T) ** 2, axis=0)
    ok = np.isfinite(c) & (c - jvr_all <= 1e-9 * np.maximum(1.0, np.abs(jvr_all)))
    cand = np.flatnonzero(ok)
    cand = cand[np.argsort(jvr_all[cand], kind="stable")]
    seen = set()
    for i in cand:
        x = X[i]
        key = x.tobytes()
        if key in seen:
            continue
        seen.add(key)
        if len(seen) > max_checks:
            break
        try:
            jvr, ms = f.parts(x)
        except (ControlError, ValueError, np.linalg.LinAlgError):
            continue
        if ms <= ms_desired:
            return x.copy(), float(c[i]), jvr, ms
    x = opt.best_position
    try:
        jvr, ms = f.parts(x)
    except (ControlError, ValueError, np.linalg.LinAlgError):
        jvr, ms = np.inf, np.inf
    return x, opt.best_cost, jvr, ms


def step2(data: DataSet, s1: DesignResult, spec: DesignSpec, iv_data: Optional[DataSet] = None,
          map_fn: Optional[Callable] = None) -> DesignResult:
    """Swarm minimization of ``J^SI`` with agents spawned around the step-1 controller.

    Returns ``s1`` unchanged (apart from bookkeeping) when it already meets
    the robustness requirement. The reference model and kernel are frozen at
    their step-1 values.
    """
    if s1.ms_step1 <= spec.robustness.ms_desired:
        return replace(s1, step2_ran=False, feasible=True)
    f = _JSI(data, s1.Td_used, spec.basis, design_filter(s1.Td_used), spec.robustness,
             s1.kernel, iv_data)
    spawn_seed = np.random.SeedSequence([spec.swarm.seed, 1])
    init = center_spawn(s1.rho_step1, spec.space, spec.swarm.agents, spawn_seed)
    t0 = time.perf_counter()
    opt: OptResult = ALGORITHMS[spec.algorithm](f, spec.space, spec.swarm, init=init, map_fn=map_fn)
    elapsed = time.perf_counter() - t0
    rho, jsi, jvr, ms = _select(f, opt, spec.robustness.ms_desired)
    return replace(s1, rho_final=rho, ms_final=ms, jvr_final=jvr, jsi_final=jsi,
                   iterations_to_converge=convergence_iteration(opt.history, CONVERGENCE_DELTA),
                   evaluations=opt.evaluations, step2_ran=True,
                   feasible=bool(ms <= spec.robustness.ms_desired), history=opt.history,
                   seconds_per_iteration=elapsed / len(opt.history))


def design(data: DataSet, probe_ir: ImpulseResponseEstimate, spec: DesignSpec,
           iv_data: Optional[DataSet] = None, map_fn: Optional[Callable] = None) -> DesignResult:
    """Step 1, then step 2 if the step-1 controller violates the robustness requirement."""
    return step2(data, step1(data, probe_ir, spec, iv_data), spec, iv_data, map_fn)
