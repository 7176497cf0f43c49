"""Virtual Reference Feedback Tuning: filtered LS, instrumental variables and flexible reference model."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
from scipy import optimize
from scipy.linalg import solve_triangular

from .exceptions import AlternationDiverged, NotProper, SingularRegressor, UnstableError
from .lti import DataSet, Signal, TransferFunction, is_stable, simulate

__all__ = [
    "ControllerBasis", "FlexibleReferenceModel", "FlexibleResult", "pi_basis", "pid_basis",
    "design_filter", "virtual_error_filter", "filtered_virtual_error", "vrft_regression",
    "vrft_ls", "vrft_iv", "vrft_flexible", "cost_jvr", "flexible_cost",
]

_RANK_TOL = 1e-12


@dataclass(frozen=True)
class ControllerBasis:
    """Linear controller class ``C(z, rho) = sum_i rho_i * basis[i]``."""

    basis: Tuple[TransferFunction, ...]
    class_name: str = ""

    def __post_init__(self):
        b = tuple(self.basis)
        if not b:
            raise ValueError("controller basis must be nonempty")
        if any(not tf.is_proper for tf in b):
            raise NotProper("controller basis entries must be proper")
        if len({tf.dt for tf in b}) != 1:
            raise ValueError("basis entries must share the sample time")
        object.__setattr__(self, "basis", b)

    def __len__(self):
        return len(self.basis)

    def controller(self, rho) -> TransferFunction:
        rho = np.asarray(rho, dtype=float).ravel()
        if rho.size != len(self):
            raise ValueError(f"expected {len(self)} parameters, got {rho.size}")
        if not np.all(np.isfinite(rho)):
            raise ValueError("controller parameters must be finite")
        C = self.basis[0] * rho[0]
        for r, b in zip(rho[1:], self.basis[1:]):
            C = C + b * r
        return C


def pi_basis(dt: float = 1.0) -> ControllerBasis:
    """``[1, z/(z-1)]`` (proportional, integral)."""
    return ControllerBasis((TransferFunction([1.0], [1.0], dt),
                            TransferFunction([1.0, 0.0], [1.0, -1.0], dt)), "PI")


def pid_basis(dt: float = 1.0) -> ControllerBasis:
    """``[1, z/(z-1), (z-1)/z]`` (proportional, integral, derivative)."""
    return ControllerBasis((TransferFunction([1.0], [1.0], dt),
                            TransferFunction([1.0, 0.0], [1.0, -1.0], dt),
                            TransferFunction([1.0, -1.0], [1.0, 0.0], dt)), "PID")


@dataclass(frozen=True)
class FlexibleReferenceModel:
    """Reference model ``Td(z, eta) = eta' F(z)`` with a fixed two-pole denominator.

    ``F(z) = [z, 1] / ((z - poles[0]) (z - poles[1]))``, so ``eta`` holds the
    coefficients of a first-order numerator. ``poles[0]`` is the dominant
    pole and stays fixed; ``poles[1]`` is re-fitted during the alternation
    when ``update_pole`` is set, within ``pole_bounds``.
    """

    eta: np.ndarray
    poles: Tuple[float, float]
    dt: float = 1.0
    update_pole: bool = True
    pole_bounds: Tuple[float, float] = (0.0, None)

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=float).ravel()
        if eta.size != 2:
            raise ValueError("eta must have two entries (first-order numerator)")
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "poles", tuple(float(p) for p in self.poles))
        if len(self.poles) != 2 or max(abs(p) for p in self.poles) >= 1.0:
            raise UnstableError("flexible reference model needs two poles inside the unit circle")
        lo, hi = self.pole_bounds
        hi = abs(self.poles[0]) if hi is None else hi
        object.__setattr__(self, "pole_bounds", (float(lo), float(hi)))

    @classmethod
    def from_tf(cls, Td: TransferFunction, **kw) -> "FlexibleReferenceModel":
        """Project an initial second-order reference model onto ``F(z)``.

        The pole of largest magnitude is taken as dominant.
        """
        if len(Td.den) != 3 or len(Td.num) > 2:
            raise ValueError("expected a reference model with two poles and at most one zero")
        p = np.roots(Td.den)
        if np.any(np.abs(p.imag) > 1e-12):
            raise ValueError("flexible reference model requires real poles")
        p = sorted(p.real, key=abs, reverse=True)
        num = np.concatenate([np.zeros(2 - len(Td.num)), Td.num])
        return cls(num, (p[0], p[1]), Td.dt, **kw)

    def denominator(self, p_nd: Optional[float] = None) -> np.ndarray:
        p_nd = self.poles[1] if p_nd is None else p_nd
        return np.polymul([1.0, -self.poles[0]], [1.0, -p_nd])

    def basis_F(self, p_nd: Optional[float] = None) -> Tuple[TransferFunction, TransferFunction]:
        den = self.denominator(p_nd)
        return (TransferFunction([1.0, 0.0], den, self.dt), TransferFunction([1.0], den, self.dt))

    def tf(self) -> TransferFunction:
        return TransferFunction(self.eta, self.denominator(), self.dt)

    def zero(self) -> float:
        return float(-self.eta[1] / self.eta[0])


@dataclass(frozen=True)
class FlexibleResult:
    eta: np.ndarray
    rho: np.ndarray
    Td: TransferFunction
    model: FlexibleReferenceModel
    cost_history: np.ndarray


# --------------------------------------------------------------------------
# filters and regressors


def design_filter(Td: TransferFunction) -> TransferFunction:
    """``L = Td (1 - Td)``: the prefilter obtained with a flat reference/input spectral ratio."""
    if Td.relative_degree < 1:
        raise NotProper("reference model must be strictly proper")
    if not is_stable(Td):
        raise UnstableError("reference model must be stable")
    return Td * (1.0 - Td)


def virtual_error_filter(Td: TransferFunction, L: TransferFunction) -> TransferFunction:
    """The composed filter ``L (Td^{-1} - 1)`` mapping ``y`` to the filtered virtual error.

    The numerator of ``Td`` is cancelled against ``L`` whenever it divides
    ``L``'s numerator, so a non-minimum-phase ``Td`` never has to be inverted.
    """
    Td._check_dt(L)
    nT, dT = Td.num, Td.den
    diff = np.polysub(dT, nT)
    q, r = np.polydiv(L.num, nT)
    if len(nT) > 1 and np.max(np.abs(r)) <= 1e-10 * max(np.max(np.abs(L.num)), 1.0):
        comp = TransferFunction(np.polymul(q, diff), L.den, Td.dt)
    elif len(nT) == 1:
        comp = TransferFunction(np.polymul(L.num, diff) / nT[0], L.den, Td.dt)
    else:
        comp = TransferFunction(np.polymul(L.num, diff), np.polymul(L.den, nT), Td.dt)
    if not comp.is_proper:
        raise NotProper("L (Td^-1 - 1) is not proper; choose L with at least Td's relative degree")
    return comp


def filtered_virtual_error(y, Td: TransferFunction, L: TransferFunction):
    """Filtered virtual error ``L (Td^{-1} - 1) y``; ``(1 - Td)^2 y`` for ``L = Td (1 - Td)``."""
    return simulate(virtual_error_filter(Td, L), y)


def _arr(x):
    return x.samples if isinstance(x, Signal) else np.asarray(x, dtype=float)


def vrft_regression(data: DataSet, Td: TransferFunction, basis: ControllerBasis,
                    L: TransferFunction):
    """Target ``u_L = L u`` and regressor columns ``basis_i * e_L``."""
    e = filtered_virtual_error(_arr(data.y), Td, L)
    uL = simulate(L, _arr(data.u))
    Phi = np.column_stack([simulate(b, e) for b in basis.basis])
    return uL, Phi


def _lstsq_qr(Phi, target):
    Q, R = np.linalg.qr(Phi)
    d = np.abs(np.diag(R))
    if d.size == 0 or d.min() <= _RANK_TOL * max(d.max(), 1e-300):
        raise SingularRegressor("regressor is rank deficient")
    return solve_triangular(R, Q.T @ target)


def vrft_ls(data: DataSet, Td: TransferFunction, basis: ControllerBasis,
            L: Optional[TransferFunction] = None) -> np.ndarray:
    """Least-squares VRFT parameters ``rho`` minimizing :func:`cost_jvr`."""
    L = design_filter(Td) if L is None else L
    uL, Phi = vrft_regression(data, Td, basis, L)
    return _lstsq_qr(Phi, uL)


def vrft_iv(data1: DataSet, data2: DataSet, Td: TransferFunction, basis: ControllerBasis,
            L: Optional[TransferFunction] = None) -> np.ndarray:
    """Instrumental-variable VRFT using the regressor of a second batch driven by the same reference."""
    L = design_filter(Td) if L is None else L
    uL, Phi = vrft_regression(data1, Td, basis, L)
    _, Z = vrft_regression(data2, Td, basis, L)
    A = Z.T @ Phi
    if not np.all(np.isfinite(A)) or np.linalg.cond(A) > 1.0 / _RANK_TOL:
        raise SingularRegressor("instrument cross-covariance is near singular")
    return np.linalg.solve(A, Z.T @ uL)


def cost_jvr(rho, data: DataSet, Td: TransferFunction, basis: ControllerBasis,
             L: Optional[TransferFunction] = None, regression=None) -> float:
    """``||u_L - Phi rho||^2`` (sum of squares).

    ``regression`` may carry a precomputed ``(u_L, Phi)`` pair to avoid refiltering.
    """
    if regression is None:
        L = design_filter(Td) if L is None else L
        regression = vrft_regression(data, Td, basis, L)
    uL, Phi = regression
    r = uL - Phi @ np.asarray(rho, dtype=float)
    return float(r @ r)


# --------------------------------------------------------------------------
# flexible reference model


def _constrained_ls(A, b, c, d):
    """``argmin ||A x - b||`` subject to ``c' x = d`` via the KKT system."""
    n = A.shape[1]
    kkt = np.block([[A.T @ A, c[:, None]], [c[None, :], np.zeros((1, 1))]])
    return np.linalg.solve(kkt, np.concatenate([A.T @ b, [d]]))[:n]


def flexible_cost(eta, rho, data: DataSet, flex: FlexibleReferenceModel, basis: ControllerBasis,
                  p_nd: Optional[float] = None) -> float:
    """``||Td(eta) (u + C(rho) y) - C(rho) y||^2``."""
    u, y = _arr(data.u), _arr(data.y)
    cy = simulate(basis.controller(rho), y)
    Td = TransferFunction(eta, flex.denominator(p_nd), flex.dt)
    r = simulate(Td, u + cy) - cy
    return float(r @ r)


def vrft_flexible(data: DataSet, flex: FlexibleReferenceModel, basis: ControllerBasis,
                  max_alternations: int = 50, tol: float = 1e-9) -> FlexibleResult:
    """Alternating least squares on the bilinear flexible VRFT cost.

    Each alternation solves for ``rho`` with ``Td(eta)`` fixed, then for
    ``eta`` with ``rho`` fixed under the unit-DC-gain constraint
    ``Td(1, eta) = 1``. When ``flex.update_pole`` is set, the non-dominant
    pole is chosen by a bounded scalar search that minimizes the ``eta``-step
    cost. Both steps are exact minimizations, so the cost cannot increase.

    Returns
    -------
    FlexibleResult
        Final ``eta``, ``rho`` (re-solved for the final ``Td``), the final
        reference model and the per-alternation cost history.
    """
    u, y = _arr(data.u), _arr(data.y)
    Cy = [simulate(b, y) for b in basis.basis]
    eta = flex.eta.copy()
    p_nd = flex.poles[1]

    def rho_step(eta, p_nd):
        Td = TransferFunction(eta, flex.denominator(p_nd), flex.dt)
        # Td (u + C y) - C y = Td u - (1 - Td) C y
        Phi = np.column_stack([c - simulate(Td, c) for c in Cy])
        return _lstsq_qr(Phi, simulate(Td, u))

    def eta_step(rho, p_nd):
        cy = sum(r * c for r, c in zip(rho, Cy))
        w = u + cy
        F = flex.basis_F(p_nd)
        A = np.column_stack([simulate(f, w) for f in F])
        c = np.array([f(1.0) for f in F])
        e = _constrained_ls(A, cy, c, 1.0)
        r = A @ e - cy
        return e, float(r @ r)

    history = []
    increases = 0
    for _ in range(max_alternations):
        rho = rho_step(eta, p_nd)
        if flex.update_pole:
            res = optimize.minimize_scalar(lambda q: eta_step(rho, q)[1],
                                           bounds=flex.pole_bounds, method="bounded")
            # Keep the current pole unless the search strictly improves on it.
            if res.fun < eta_step(rho, p_nd)[1]:
                p_nd = float(res.x)
        eta, cost = eta_step(rho, p_nd)
        if history and cost > history[-1]:
            increases += 1
            if increases >= 3:
                raise AlternationDiverged("flexible VRFT cost increased three times in a row")
        else:
            increases = 0
        history.append(cost)
        if len(history) > 1 and abs(history[-2] - history[-1]) < tol:
            break
    rho = rho_step(eta, p_nd)
    model = replace(flex, eta=eta, poles=(flex.poles[0], p_nd))
    return FlexibleResult(eta, rho, model.tf(), model, np.asarray(history))
