"""Discrete-time SISO transfer functions, simulation and excitation signals.

Transfer functions are rational functions of the forward shift operator z,
with coefficients stored in descending powers of z and the denominator
normalized to a unit leading coefficient. No pole-zero cancellation is ever
performed implicitly, so an unstable factor hidden by a cancellation shows up
in the denominator of composed systems.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy import optimize, signal as sps

from .exceptions import (
    DegenerateLoop,
    IntegratorError,
    NotInvertible,
    NotProper,
    PoleOnUnitCircle,
    UnstableError,
    ZeroPower,
)

__all__ = [
    "TransferFunction", "Signal", "DataSet", "NoiseModel",
    "freq_response", "simulate", "closed_loop", "tf_algebra", "dc_gain",
    "true_impulse_response", "hinf_grid_oracle", "is_stable", "prbs",
    "awgn_add", "NO_NOISE",
]

#: snr_db sentinel meaning "do not add noise".
NO_NOISE = float("inf")


def _trim(c) -> np.ndarray:
    c = np.atleast_1d(np.asarray(c, dtype=float)).ravel()
    nz = np.flatnonzero(c)
    if nz.size == 0:
        return np.zeros(1)
    return c[nz[0]:]


class TransferFunction:
    """Rational discrete-time system ``num(z) / den(z)``.

    Parameters
    ----------
    num, den : array_like
        Coefficients in descending powers of z.
    dt : float, optional
        Sample time in seconds (default 1).

    Notes
    -----
    Objects with ``deg(num) > deg(den)`` can be built (``invert`` produces
    them) but they are flagged through :attr:`is_proper` and refused by
    :func:`simulate`.
    """

    __slots__ = ("num", "den", "dt")

    def __init__(self, num, den=1.0, dt: float = 1.0):
        num = _trim(num)
        den = _trim(den)
        if den[0] == 0.0:
            raise ValueError("denominator polynomial is identically zero")
        lead = den[0]
        self.num = num / lead
        self.den = den / lead
        self.dt = float(dt)
        if not (np.all(np.isfinite(self.num)) and np.all(np.isfinite(self.den))):
            raise ValueError("transfer function coefficients must be finite")

    # construction helpers -------------------------------------------------
    @classmethod
    def gain(cls, k: float, dt: float = 1.0) -> "TransferFunction":
        return cls([k], [1.0], dt)

    @classmethod
    def from_zpk(cls, zeros, poles, k: float, dt: float = 1.0) -> "TransferFunction":
        return cls(k * np.poly(zeros) if len(zeros) else [k],
                   np.poly(poles) if len(poles) else [1.0], dt)

    # properties ----------------------------------------------------------
    @property
    def is_zero(self) -> bool:
        return bool(np.all(self.num == 0.0))

    @property
    def relative_degree(self) -> int:
        if self.is_zero:
            return len(self.den) - 1
        return (len(self.den) - 1) - (len(self.num) - 1)

    @property
    def is_proper(self) -> bool:
        return self.relative_degree >= 0

    def poles(self) -> np.ndarray:
        return np.roots(self.den)

    def zeros(self) -> np.ndarray:
        return np.roots(self.num)

    def __call__(self, z):
        return np.polyval(self.num, z) / np.polyval(self.den, z)

    # algebra -------------------------------------------------------------
    def _check_dt(self, other: "TransferFunction"):
        if not np.isclose(self.dt, other.dt):
            raise ValueError(f"sample time mismatch: {self.dt} vs {other.dt}")

    def _coerce(self, other) -> "TransferFunction":
        if isinstance(other, TransferFunction):
            self._check_dt(other)
            return other
        if np.isscalar(other):
            return TransferFunction.gain(float(other), self.dt)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        num = np.polyadd(np.polymul(self.num, other.den), np.polymul(other.num, self.den))
        return TransferFunction(num, np.polymul(self.den, other.den), self.dt)

    __radd__ = __add__

    def __neg__(self):
        return TransferFunction(-self.num, self.den, self.dt)

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return TransferFunction(np.polymul(self.num, other.num),
                                np.polymul(self.den, other.den), self.dt)

    __rmul__ = __mul__

    def invert(self) -> "TransferFunction":
        if self.is_zero:
            raise NotInvertible("cannot invert a transfer function with zero numerator")
        return TransferFunction(self.den, self.num, self.dt)

    def __eq__(self, other):
        if not isinstance(other, TransferFunction):
            return NotImplemented
        return (self.num.shape == other.num.shape and self.den.shape == other.den.shape
                and np.array_equal(self.num, other.num) and np.array_equal(self.den, other.den)
                and self.dt == other.dt)

    def __hash__(self):
        return hash((self.num.tobytes(), self.den.tobytes(), self.dt))

    def allclose(self, other: "TransferFunction", rtol=1e-9, atol=1e-12) -> bool:
        """Coefficient-wise comparison after normalization."""
        return (self.num.shape == other.num.shape and self.den.shape == other.den.shape
                and np.allclose(self.num, other.num, rtol=rtol, atol=atol)
                and np.allclose(self.den, other.den, rtol=rtol, atol=atol))

    def __repr__(self):
        return f"TransferFunction(num={self.num.tolist()}, den={self.den.tolist()}, dt={self.dt})"


@dataclass(frozen=True)
class Signal:
    """Uniformly sampled real sequence."""

    samples: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=float).ravel()
        if x.size < 1:
            raise ValueError("a signal needs at least one sample")
        if not np.all(np.isfinite(x)):
            raise ValueError("signal samples must be finite")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)

    def __len__(self):
        return self.samples.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.samples, dtype=dtype)

    @property
    def power(self) -> float:
        return float(np.mean(self.samples ** 2))

    @property
    def time(self) -> np.ndarray:
        return np.arange(len(self)) * self.dt


@dataclass(frozen=True)
class DataSet:
    """An experiment batch ``{u, y}`` (optionally with the applied reference)."""

    u: Signal
    y: Signal
    r: Optional[Signal] = None
    label: str = ""

    def __post_init__(self):
        members = [s for s in (self.u, self.y, self.r) if s is not None]
        if len({len(s) for s in members}) != 1:
            raise ValueError("all signals in a DataSet must share the same length")
        if len({s.dt for s in members}) != 1:
            raise ValueError("all signals in a DataSet must share the same sample time")

    def __len__(self):
        return len(self.u)

    @property
    def dt(self) -> float:
        return self.u.dt

    def scaled(self, alpha: float) -> "DataSet":
        r = None if self.r is None else Signal(alpha * self.r.samples, self.r.dt)
        return DataSet(Signal(alpha * self.u.samples, self.dt),
                       Signal(alpha * self.y.samples, self.dt), r, self.label)


@dataclass(frozen=True)
class NoiseModel:
    snr_db: float = 20.0
    seed: int = 0

    def __post_init__(self):
        if np.isnan(self.snr_db) or self.snr_db == -np.inf:
            raise ValueError("snr_db must be finite (or +inf for no noise)")


ArrayOrSignal = Union[np.ndarray, Signal, Sequence[float]]


# --------------------------------------------------------------------------
# evaluation


def freq_response(tf: TransferFunction, omega):
    """Evaluate ``tf(e^{j omega})``. Accepts a scalar or an array of frequencies."""
    z = np.exp(1j * np.asarray(omega, dtype=float))
    den = np.polyval(tf.den, z)
    if np.any(np.abs(den) < 1e-300):
        raise PoleOnUnitCircle("denominator vanishes on the unit circle")
    out = np.polyval(tf.num, z) / den
    return complex(out) if np.ndim(out) == 0 else out


def dc_gain(tf: TransferFunction) -> float:
    den1 = np.polyval(tf.den, 1.0)
    if abs(den1) < 1e-12:
        raise IntegratorError("system has a pole at z=1")
    g = freq_response(tf, 0.0)
    return float(g.real)


def is_stable(tf: TransferFunction) -> bool:
    if len(tf.den) == 1:
        return True
    return bool(np.max(np.abs(np.roots(tf.den))) < 1.0)


def _lfilter_coeffs(tf: TransferFunction):
    if not tf.is_proper:
        raise NotProper(f"cannot simulate a non-causal system (relative degree {tf.relative_degree})")
    b = np.concatenate([np.zeros(len(tf.den) - len(tf.num)), tf.num])
    return b, tf.den


def simulate(tf: TransferFunction, u: ArrayOrSignal):
    """Zero-initial-state response of ``tf`` to ``u``.

    Arrays in give arrays out; a :class:`Signal` in gives a :class:`Signal` out
    (and its sample time must match the system's).
    """
    if isinstance(u, Signal):
        if not np.isclose(u.dt, tf.dt):
            raise ValueError(f"sample time mismatch: signal {u.dt}, system {tf.dt}")
        b, a = _lfilter_coeffs(tf)
        return Signal(sps.lfilter(b, a, u.samples), u.dt)
    b, a = _lfilter_coeffs(tf)
    return sps.lfilter(b, a, np.asarray(u, dtype=float))


def true_impulse_response(tf: TransferFunction, M: int) -> np.ndarray:
    if M < 0:
        raise ValueError("M must be non-negative")
    imp = np.zeros(M + 1)
    imp[0] = 1.0
    return simulate(tf, imp)


def closed_loop(C: TransferFunction, G: TransferFunction):
    """Complementary sensitivity and sensitivity of the unit-feedback loop.

    Both share the denominator ``dC dG + nC nG`` so that ``T + S = 1``
    holds coefficient-wise.
    """
    C._check_dt(G)
    dd = np.polymul(C.den, G.den)
    nn = np.polymul(C.num, G.num)
    den = np.polyadd(dd, nn)
    if np.all(_trim(den) == 0.0):
        raise DegenerateLoop("1 + C G is identically zero")
    return TransferFunction(nn, den, C.dt), TransferFunction(dd, den, C.dt)


def tf_algebra(kind: str, a: TransferFunction, b: Optional[TransferFunction] = None) -> TransferFunction:
    """Named algebraic operations (``add``, ``mul``, ``scale``, ``sub_from_one``, ``invert``)."""
    if kind == "add":
        return a + b
    if kind == "mul":
        return a * b
    if kind == "scale":
        return a * float(b)
    if kind == "sub_from_one":
        return 1.0 - a
    if kind == "invert":
        return a.invert()
    raise ValueError(f"unknown operation {kind!r}")


def hinf_grid_oracle(tf: TransferFunction, n_grid: int = 4096) -> float:
    """Peak gain over the unit circle by dense sweep plus golden-section refinement."""
    if n_grid < 512:
        raise ValueError("n_grid must be at least 512")
    if not is_stable(tf):
        raise UnstableError("H-infinity norm requested for an unstable system")
    w = np.linspace(0.0, np.pi, n_grid)
    mag = np.abs(freq_response(tf, w))
    k = int(np.argmax(mag))
    best = float(mag[k])
    lo = w[max(k - 1, 0)]
    hi = w[min(k + 1, n_grid - 1)]
    if hi > lo:
        res = optimize.minimize_scalar(lambda x: -abs(freq_response(tf, x)), bounds=(lo, hi),
                                       method="bounded", options={"xatol": 1e-12})
        best = max(best, -float(res.fun))
    return best


# --------------------------------------------------------------------------
# excitation and noise

_PRBS_ORDERS = range(3, 21)


def _mls_bits(order: int, seed: int) -> np.ndarray:
    state = int(seed) & ((1 << order) - 1)
    if state == 0:
        state = 1
    bits = np.array([(state >> k) & 1 for k in range(order)], dtype=np.int8)
    return sps.max_len_seq(order, state=bits)[0]


def prbs(n: int, register_order: int = 11, amplitude: float = 1.0, seed: int = 1,
         dt: float = 1.0) -> Signal:
    """Maximum-length binary sequence mapped to ``+-amplitude``.

    The period is ``2**register_order - 1``; the sequence is tiled or
    truncated to ``n`` samples. ``seed`` sets the register's initial state
    (an all-zero state is replaced by 1). Orders 3 to 20 are supported.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if register_order not in _PRBS_ORDERS:
        raise ValueError("register_order must be in [3, 20]")
    bits = _mls_bits(register_order, int(seed))
    levels = (2.0 * bits - 1.0) * float(amplitude)
    return Signal(np.resize(levels, n) + 0.0, dt)


def awgn_add(x: ArrayOrSignal, noise: NoiseModel, reference_power: Optional[float] = None):
    """Add white Gaussian noise at ``noise.snr_db`` relative to the signal power.

    ``reference_power`` overrides the power the SNR is measured against (used
    when noise enters a loop and the clean output is known separately).
    """
    samples = np.asarray(x, dtype=float)
    if np.isinf(noise.snr_db) and noise.snr_db > 0:
        return x
    power = float(np.mean(samples ** 2)) if reference_power is None else float(reference_power)
    if power <= 0.0:
        raise ZeroPower("cannot scale noise against a zero-power signal")
    rng = np.random.default_rng(noise.seed)
    v = rng.normal(0.0, np.sqrt(power / 10.0 ** (noise.snr_db / 10.0)), samples.shape)
    if isinstance(x, Signal):
        return Signal(samples + v, x.dt)
    return samples + v
