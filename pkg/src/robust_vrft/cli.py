"""Command-line entry point: ``robust-vrft {design,montecarlo,datagen} CONFIG``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from .exceptions import ControlError
from .harness import (ExperimentConfig, closed_loop_step, design_spec, export, generate_data, monte_carlo,
                      run_seed, step_metrics, step_responses, true_ms)
from .pipeline import design
from .swarm import ALGORITHMS

log = logging.getLogger("robust_vrft")

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2


def _load(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(args.config)
    if args.algorithm:
        cfg.algorithm = args.algorithm
        cfg.algorithms = None
    if args.runs is not None:
        cfg.monte_carlo_runs = args.runs
    if args.seed is not None:
        cfg.master_seed = args.seed
    if args.out:
        cfg.output_dir = args.out
    cfg.__post_init__()
    return cfg


def cmd_design(cfg: ExperimentConfig) -> int:
    seed = run_seed(cfg.master_seed, 0)
    data = generate_data(cfg, seed)
    spec = design_spec(cfg, seed=seed)
    res = design(data.batch1, data.probe_ir, spec, data.batch2)
    plant = cfg.plant_tf()
    summary = {
        "kp": data.kp,
        "used_flexible": res.used_flexible,
        "rho_step1": res.rho_step1.tolist(),
        "ms_step1": res.ms_step1,
        "Td_num": res.Td_used.num.tolist(),
        "Td_den": res.Td_used.den.tolist(),
        "step2_ran": res.step2_ran,
        "algorithm": spec.algorithm,
        "rho_final": np.asarray(res.rho_final).tolist(),
        "ms_final": res.ms_final,
        "ms_true": true_ms(res.rho_final, plant, spec.basis),
        "jvr_final": res.jvr_final,
        "jsi_final": res.jsi_final,
        "iterations_to_converge": res.iterations_to_converge,
        "feasible": res.feasible,
    }
    for name, rho in (("vrft", res.rho_step1), ("final", res.rho_final)):
        try:
            m = step_metrics(closed_loop_step(rho, plant, spec.basis))
            summary[f"step_{name}"] = m.__dict__
        except ControlError as exc:
            summary[f"step_{name}"] = str(exc)
    os.makedirs(cfg.output_dir, exist_ok=True)
    with open(os.path.join(cfg.output_dir, "design.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK if res.feasible else EXIT_INFEASIBLE


def cmd_montecarlo(cfg: ExperimentConfig) -> int:
    st = monte_carlo(cfg)
    paths = export(st, cfg.output_dir, cfg, step_responses(cfg, st))
    for alg, metrics in st.rows.items():
        ms = metrics["ms_true"]
        print(f"{alg:5s} ||S||inf median {ms['median']:.4f} sigma {ms['sigma']:.2e} "
              f"min {ms['min']:.4f} max {ms['max']:.4f}  best cost median "
              f"{metrics['best_cost']['median']:.4f}")
    for run, err in st.errors.items():
        log.warning("run %d failed: %s", run, err)
    print("wrote " + ", ".join(paths))
    infeasible = any(r["penalty"] > 0 for r in st.runs)
    return EXIT_INFEASIBLE if infeasible else EXIT_OK


def cmd_datagen(cfg: ExperimentConfig) -> int:
    data = generate_data(cfg, run_seed(cfg.master_seed, 0))
    os.makedirs(cfg.output_dir, exist_ok=True)
    path = os.path.join(cfg.output_dir, "data.csv")
    b2 = data.batch2
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "r", "u1", "y1", "u2", "y2", "probe_u", "probe_y"])
        for k in range(len(data.batch1)):
            w.writerow([k, repr(float(data.batch1.r.samples[k])),
                        repr(float(data.batch1.u.samples[k])), repr(float(data.batch1.y.samples[k])),
                        repr(float(b2.u.samples[k])) if b2 else "",
                        repr(float(b2.y.samples[k])) if b2 else "",
                        repr(float(data.probe.u.samples[k])), repr(float(data.probe.y.samples[k]))])
    print(f"kp = {data.kp:.6f}; wrote {path}")
    return EXIT_OK


COMMANDS = {"design": cmd_design, "montecarlo": cmd_montecarlo, "datagen": cmd_datagen}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="robust-vrft", description=__doc__)
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("config", help="JSON file with ExperimentConfig fields (optionally 'preset')")
    p.add_argument("--algorithm", choices=sorted(ALGORITHMS))
    p.add_argument("--runs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = _load(args)
        return COMMANDS[args.command](cfg)
    except (ControlError, ValueError, OSError, KeyError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
