"""Experiment harness: example presets, data generation, Monte Carlo studies and export."""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import ControlError, NotSettled, UnstableExperiment
from .lti import (DataSet, NoiseModel, Signal, TransferFunction, awgn_add, closed_loop,
                  hinf_grid_oracle, is_stable, prbs, simulate)
from .pipeline import DesignResult, DesignSpec, step1, step2
from .robustness import ORACLE_ORDER, RobustnessSpec, penalty_h, stabilizing_gain
from .swarm import ALGORITHMS, SearchSpace, SwarmConfig
from .sysid import DEFAULT_ORDER, ImpulseResponseEstimate, fir_estimate, tune_kernel
from .vrft import ControllerBasis, pi_basis, pid_basis

__all__ = [
    "PLANTS", "PRESETS", "ExperimentConfig", "ExperimentData", "StepMetrics", "StatsTable",
    "run_seed", "generate_data", "design_spec", "run_once", "monte_carlo", "step_metrics",
    "mr_cost_oracle", "export", "true_ms", "STAT_COLUMNS", "aggregate", "closed_loop_step",
    "step_responses",
]

_DIVERGED = 1e9
STAT_COLUMNS = ("median", "sigma", "min", "max")

PLANTS: Dict[str, Tuple[List[float], List[float]]] = {
    "G1": ([-0.05, 0.07], [1.0, -1.7, 0.7325]),
    "G2": (list(0.1381 * np.polymul([1.0, -0.95], [1.0, -1.62, 0.6586])),
           list(np.polymul([1.0, -1.7, 0.7325], [1.0, -1.84, 0.8564]))),
}

PRESETS: Dict[str, dict] = {
    "example1": {
        "plant": "G1",
        "Td_num": [-21.0, 21.21],
        "Td_den": list(np.polymul([1.0, -0.7], [1.0, -0.3])),
        "basis": "PID",
        "ms_desired": 1.8,
        "algorithm": "igwo",
        "fixed_data": True,
    },
    "example2": {
        "plant": "G2",
        "Td_num": [1.4, -0.84],
        "Td_den": list(np.polymul([1.0, -0.3], [1.0, -0.2])),
        "basis": "PI",
        "ms_desired": 1.5,
        "algorithm": "pso",
    },
}


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one study. Field names double as JSON keys."""

    plant: str = "G1"
    plant_num: Optional[List[float]] = None
    plant_den: Optional[List[float]] = None
    Td_num: List[float] = field(default_factory=lambda: list(PRESETS["example1"]["Td_num"]))
    Td_den: List[float] = field(default_factory=lambda: list(PRESETS["example1"]["Td_den"]))
    basis: str = "PID"
    N: int = 2000
    snr_db: float = 20.0
    prbs_order: int = 11
    prbs_amplitude: float = 1.0
    prbs_seed: int = 1
    iv: bool = True
    probe_ir_order: int = ORACLE_ORDER
    ms_desired: float = 1.8
    penalty_weight: float = 1e6
    ir_order: int = DEFAULT_ORDER
    lower: float = 0.0
    upper: float = 10.0
    agents: int = 50
    max_iterations: int = 100
    algorithm: str = "igwo"
    algorithms: Optional[List[str]] = None
    algorithm_params: Dict[str, Any] = field(default_factory=dict)
    monte_carlo_runs: int = 10
    fixed_data: bool = False
    workers: Optional[int] = None
    output_dir: str = "results"
    master_seed: int = 0

    def __post_init__(self):
        if self.monte_carlo_runs < 1:
            raise ValueError("monte_carlo_runs must be >= 1")
        if self.N < 10 * (self.ir_order + 1):
            raise ValueError("N must be at least 10 * (ir_order + 1)")
        if self.snr_db is None:
            self.snr_db = float("inf")

    @classmethod
    def preset(cls, name: str, **overrides) -> "ExperimentConfig":
        kw = dict(PRESETS[name])
        kw.update(overrides)
        return cls(**kw)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        base = d.pop("preset", None)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls.preset(base, **d) if base else cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        d = asdict(self)
        if np.isinf(d["snr_db"]):
            d["snr_db"] = None
        return d

    # derived objects --------------------------------------------------------
    def plant_tf(self) -> TransferFunction:
        if self.plant_num is not None:
            return TransferFunction(self.plant_num, self.plant_den)
        num, den = PLANTS[self.plant]
        return TransferFunction(num, den)

    def reference_model(self) -> TransferFunction:
        return TransferFunction(self.Td_num, self.Td_den)

    def controller_basis(self) -> ControllerBasis:
        return {"PI": pi_basis, "PID": pid_basis}[self.basis.upper()]()

    def algorithm_list(self) -> List[str]:
        return list(self.algorithms) if self.algorithms else [self.algorithm]


@dataclass
class ExperimentData:
    probe: DataSet
    probe_ir: ImpulseResponseEstimate
    kp: float
    batch1: DataSet
    batch2: Optional[DataSet]
    reference: Signal


@dataclass(frozen=True)
class StepMetrics:
    settling_time: float
    overshoot_pct: float
    undershoot_pct: float
    steady_state_error: float


def run_seed(master_seed: int, index: int) -> int:
    """Stable 64-bit per-run seed; independent of how many runs are requested."""
    return int(np.random.SeedSequence([int(master_seed), int(index)]).generate_state(1, np.uint64)[0])


def _child(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([int(seed), k]).generate_state(1, np.uint64)[0])


def generate_data(config: ExperimentConfig, seed: int = 0) -> ExperimentData:
    """Open-loop probe, small-gain controller and the closed-loop experiment.

    The probe is a PRBS applied to the plant in open loop; its estimated
    impulse response gives the stabilizing gain ``kp``. The closed-loop run
    applies the PRBS (two identical periods when ``config.iv``) to the
    reference of the ``kp`` loop. Measurement noise enters the plant output
    inside the loop, scaled against the noise-free output power.
    """
    G = config.plant_tf()
    noisy = np.isfinite(config.snr_db)
    r1 = prbs(config.N, config.prbs_order, config.prbs_amplitude, config.prbs_seed).samples

    # open-loop probe
    y0 = simulate(G, r1)
    _check(y0)
    y_probe = awgn_add(y0, NoiseModel(config.snr_db, _child(seed, 0))) if noisy else y0
    probe = DataSet(Signal(r1), Signal(y_probe), label="probe")
    kernel = tune_kernel(r1, y_probe, config.probe_ir_order)
    ir = fir_estimate(r1, y_probe, config.probe_ir_order, kernel, warn_tail=False)
    kp = stabilizing_gain(ir, 0.5)

    # closed-loop experiment
    r = np.tile(r1, 2) if config.iv else r1
    T, S = closed_loop(TransferFunction([kp]), G)
    y_clean = simulate(T, r)
    _check(y_clean)
    if noisy:
        v = awgn_add(y_clean, NoiseModel(config.snr_db, _child(seed, 1))) - y_clean
        y = y_clean + simulate(S, v)
    else:
        y = y_clean
    _check(y)
    u = kp * (r - y)
    n = config.N
    b1 = DataSet(Signal(u[:n]), Signal(y[:n]), Signal(r[:n]), "batch1")
    b2 = DataSet(Signal(u[n:]), Signal(y[n:]), Signal(r[n:]), "batch2") if config.iv else None
    return ExperimentData(probe, ir, kp, b1, b2, Signal(r))


def _check(y):
    if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > _DIVERGED:
        raise UnstableExperiment("simulated experiment diverged")


def design_spec(config: ExperimentConfig, algorithm: Optional[str] = None, seed: int = 0) -> DesignSpec:
    basis = config.controller_basis()
    return DesignSpec(
        Td_initial=config.reference_model(),
        basis=basis,
        robustness=RobustnessSpec(config.ms_desired, config.penalty_weight, config.ir_order),
        space=SearchSpace(config.lower, config.upper, len(basis)),
        swarm=SwarmConfig(config.agents, config.max_iterations, seed, dict(config.algorithm_params)),
        algorithm=algorithm or config.algorithm,
    )


# --------------------------------------------------------------------------
# validation oracles (need the true plant)


def true_ms(rho, plant: TransferFunction, basis: ControllerBasis) -> float:
    """``||S||_inf`` of the true loop; ``inf`` if the loop is unstable."""
    _, S = closed_loop(basis.controller(rho), plant)
    if not is_stable(S):
        return float("inf")
    return hinf_grid_oracle(S)


def mr_cost_oracle(rho, plant: TransferFunction, Td: TransferFunction, r, basis: ControllerBasis) -> float:
    """Model-reference cost ``||(T(rho) - Td) r||^2`` on the true plant."""
    T, _ = closed_loop(basis.controller(rho), plant)
    if not is_stable(T):
        return float("inf")
    r = np.asarray(r, dtype=float)
    e = simulate(T, r) - simulate(Td, r)
    return float(e @ e)


def step_metrics(y, reference_level: float = 1.0, band: float = 0.02) -> StepMetrics:
    """Settling time, overshoot and undershoot of a step response.

    The final value is the last sample. Settling time is one sample past
    the last excursion outside ``band * |final|``. Undershoot is the depth
    of any initial dip below zero relative to the final value.
    """
    dt = y.dt if isinstance(y, Signal) else 1.0
    y = np.asarray(y, dtype=float)
    final = y[-1]
    if final == 0.0 or not np.isfinite(final):
        raise NotSettled("step response has no nonzero final value")
    tol = band * abs(final)
    tail = max(5, y.size // 20)
    if np.any(np.abs(y[-tail:] - final) > tol):
        raise NotSettled("step response still outside the band near the end of the record")
    outside = np.flatnonzero(np.abs(y - final) > tol)
    settling = (outside[-1] + 1) * dt if outside.size else 0.0
    over = max(0.0, (np.max(y) - final) / final) * 100.0 if final > 0 else 0.0
    under = max(0.0, -np.min(y) / final) * 100.0 if final > 0 else 0.0
    return StepMetrics(float(settling), float(over), float(under),
                       float(reference_level - final))


def closed_loop_step(rho, plant: TransferFunction, basis: ControllerBasis, n: int = 200) -> np.ndarray:
    T, _ = closed_loop(basis.controller(rho), plant)
    return simulate(T, np.ones(n))


# --------------------------------------------------------------------------
# Monte Carlo


def _row(run, alg, seed, res: DesignResult, plant, basis, ms_desired):
    row = {
        "run": run, "algorithm": alg, "seed": seed,
        "used_flexible": int(res.used_flexible), "ms_step1": res.ms_step1,
        "ms_true_step1": true_ms(res.rho_step1, plant, basis),
        "best_cost": res.jsi_final, "jvr": res.jvr_final, "ms_final": res.ms_final,
        "ms_true": true_ms(res.rho_final, plant, basis),
        "penalty": penalty_h(res.ms_final, ms_desired),
        "iterations_to_converge": res.iterations_to_converge, "evaluations": res.evaluations,
        "step2_ran": int(res.step2_ran),
    }
    for i, v in enumerate(res.rho_step1):
        row[f"rho0_{i}"] = v
    for i, v in enumerate(res.rho_final):
        row[f"rho_{i}"] = v
    return row


def run_once(config: ExperimentConfig, index: int) -> dict:
    """One Monte Carlo run: step 1 once, then step 2 for every configured algorithm.

    Each run draws a fresh noise realization unless ``config.fixed_data`` is
    set, in which case all runs share the data of run 0 and differ only in
    the optimizer's random state.
    """
    seed = run_seed(config.master_seed, index)
    data_seed = run_seed(config.master_seed, 0) if config.fixed_data else seed
    out = {"run": index, "seed": seed, "rows": [], "histories": {}, "timing": {}, "error": None}
    try:
        data = generate_data(config, data_seed)
        plant = config.plant_tf()
        base = design_spec(config, seed=seed)
        s1 = step1(data.batch1, data.probe_ir, base, data.batch2)
        out["step1"] = {"rho": s1.rho_step1.tolist(), "ms": s1.ms_step1, "kp": data.kp,
                        "Td_num": s1.Td_used.num.tolist(), "Td_den": s1.Td_used.den.tolist()}
        for alg in config.algorithm_list():
            spec = design_spec(config, alg, seed)
            res = step2(data.batch1, s1, spec, data.batch2)
            out["rows"].append(_row(index, alg, seed, res, plant, base.basis, config.ms_desired))
            out["histories"][alg] = [] if res.history is None else res.history.tolist()
            out["timing"][alg] = res.seconds_per_iteration
    except (ControlError, ValueError, np.linalg.LinAlgError) as exc:
        out["error"] = f"{type(exc).__name__}: {exc}"
    return out


@dataclass
class StatsTable:
    """Per-algorithm ``{median, sigma, min, max}`` of each metric plus timing."""

    rows: Dict[str, Dict[str, Dict[str, float]]]
    timing: Dict[str, Dict[str, float]]
    runs: List[dict] = field(default_factory=list)
    histories: Dict[Tuple[int, str], List[float]] = field(default_factory=dict)
    step1: Dict[int, dict] = field(default_factory=dict)
    errors: Dict[int, str] = field(default_factory=dict)

    def get(self, algorithm: str, metric: str, stat: str = "median") -> float:
        return self.rows[algorithm][metric][stat]


_METRICS = ("best_cost", "jvr", "ms_final", "ms_true", "penalty")


def _stats(values) -> Dict[str, float]:
    v = np.asarray(values, dtype=float)
    # an unstable run gives inf, and then sigma is nan
    with np.errstate(invalid="ignore"):
        sigma = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
    return {"median": float(np.median(v)), "sigma": sigma,
            "min": float(np.min(v)), "max": float(np.max(v))}


def aggregate(outs: Sequence[dict]) -> StatsTable:
    outs = sorted(outs, key=lambda o: o["run"])
    runs = [r for o in outs for r in o["rows"]]
    rows, timing = {}, {}
    for alg in sorted({r["algorithm"] for r in runs}):
        sel = [r for r in runs if r["algorithm"] == alg]
        metrics = list(_METRICS) + sorted(k for k in sel[0] if k.startswith("rho_"))
        rows[alg] = {m: _stats([r[m] for r in sel]) for m in metrics}
        t = [o["timing"][alg] for o in outs if alg in o["timing"]]
        timing[alg] = {"seconds_per_iteration": float(np.nanmean(t)) if t else float("nan"),
                       "iterations_to_converge": float(np.median([r["iterations_to_converge"]
                                                                  for r in sel]))}
    return StatsTable(rows, timing, runs,
                      {(o["run"], a): h for o in outs for a, h in o["histories"].items()},
                      {o["run"]: o["step1"] for o in outs if "step1" in o},
                      {o["run"]: o["error"] for o in outs if o["error"]})


def monte_carlo(config: ExperimentConfig, workers: Optional[int] = None) -> StatsTable:
    """Run ``config.monte_carlo_runs`` independent designs, in parallel processes when ``workers != 1``."""
    workers = config.workers if workers is None else workers
    idx = list(range(config.monte_carlo_runs))
    if workers == 1 or len(idx) == 1:
        outs = [run_once(config, i) for i in idx]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(run_once, [config] * len(idx), idx))
    return aggregate(outs)


# --------------------------------------------------------------------------
# export


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def export(results: Optional[StatsTable], output_dir, config: Optional[ExperimentConfig] = None,
           step_response: Optional[Dict[str, np.ndarray]] = None) -> List[str]:
    """Write stats.csv, runs.csv, convergence.csv, step_response.csv and manifest.json.

    Timing is wall-clock dependent, so it goes to a separate timing.json
    and the CSV files stay byte-identical across repeated runs.
    """
    os.makedirs(output_dir, exist_ok=True)
    paths = []
    res = results if results is not None else StatsTable({}, {})

    p = os.path.join(output_dir, "stats.csv")
    _write_csv(p, ["algorithm", "metric", *STAT_COLUMNS],
               [[a, m, *(st[c] for c in STAT_COLUMNS)]
                for a, ms in res.rows.items() for m, st in ms.items()])
    paths.append(p)

    keys = list(res.runs[0].keys()) if res.runs else ["run", "algorithm", "seed"]
    p = os.path.join(output_dir, "runs.csv")
    _write_csv(p, keys, [[r.get(k, "") for k in keys] for r in res.runs])
    paths.append(p)

    p = os.path.join(output_dir, "convergence.csv")
    _write_csv(p, ["run", "algorithm", "iteration", "best_cost"],
               [[run, alg, i, c] for (run, alg), h in sorted(res.histories.items())
                for i, c in enumerate(h)])
    paths.append(p)

    p = os.path.join(output_dir, "step_response.csv")
    series = step_response or {}
    names = list(series)
    n = max((len(v) for v in series.values()), default=0)
    _write_csv(p, ["time", *names], [[k, *(series[s][k] for s in names)] for k in range(n)])
    paths.append(p)

    manifest = {"config": config.to_dict() if config else None,
                "seeds": {str(k): v["seed"] for k, v in _run_seeds(res).items()},
                "step1": {str(k): v for k, v in res.step1.items()},
                "errors": {str(k): v for k, v in res.errors.items()}}
    p = os.path.join(output_dir, "manifest.json")
    with open(p, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths.append(p)

    p = os.path.join(output_dir, "timing.json")
    with open(p, "w") as fh:
        json.dump(res.timing, fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths.append(p)
    return paths


def _run_seeds(res: StatsTable):
    return {r["run"]: r for r in res.runs}


def step_responses(config: ExperimentConfig, results: StatsTable, run: int = 0,
                   n: int = 200) -> Dict[str, np.ndarray]:
    """True-plant unit-step responses of the step-1 controller and each algorithm's controller."""
    plant, basis = config.plant_tf(), config.controller_basis()
    out = {}
    if run in results.step1:
        out["vrft"] = closed_loop_step(results.step1[run]["rho"], plant, basis, n)
    for r in results.runs:
        if r["run"] == run:
            rho = [r[f"rho_{i}"] for i in range(len(basis))]
            out[r["algorithm"]] = closed_loop_step(rho, plant, basis, n)
    return out
