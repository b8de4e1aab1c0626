"""Command-line harness.

Subcommands: gen-data, identify, simulate, validate, report.  Exit codes:
0 on success, 1 on configuration errors, 2 when a simulation diverged (a
partial trace is kept in that case).  TELEOB_LOG sets the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .errors import DivergenceError, TeleobError
from .fuzzy import load_model, save_model
from .identify import (generate_ident_data, identify, samples_from_array,
                       samples_to_array)
from .metrics import compute_metrics, load_trace, write_trace
from .scenario import ScenarioConfig, build_simulation, free_hard_scenario
from .validation import run_all, synthetic_model

log = logging.getLogger("teleob")


def _setup_logging() -> None:
    level = os.environ.get("TELEOB_LOG", "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")


def _load_scenario(args) -> ScenarioConfig:
    if args.config:
        config = ScenarioConfig.load(args.config)
    else:
        config = free_hard_scenario()
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "observer", None):
        config.observer = args.observer
    if getattr(args, "perturb", None):
        config.perturb = args.perturb
    return config


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args) -> int:
    config = _load_scenario(args)
    out = _out_dir(args)
    plant = config.plant_model()
    seed = args.seed if args.seed is not None else config.seed
    t0 = time.perf_counter()
    samples = generate_ident_data(plant, seed, args.count, config.dt,
                                  q0=np.asarray(config.q0))
    data = samples_to_array(samples)
    path = out / "dataset.csv"
    header = ",".join([f"x{j}" for j in range(3 * config.dof)]
                      + [f"y{j}" for j in range(config.dof)])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for row in data:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    log.info("wrote %d samples to %s in %.2fs", len(samples), path,
             time.perf_counter() - t0)
    return 0


def cmd_identify(args) -> int:
    config = _load_scenario(args)
    out = _out_dir(args)
    seed = args.seed if args.seed is not None else config.seed
    data = np.loadtxt(args.data, delimiter=",", skiprows=1, ndmin=2)
    samples = samples_from_array(data, config.dof)
    t0 = time.perf_counter()
    model, _, report = identify(samples, args.rules, seed, config.dt,
                                mu_blur=args.mu_blur)
    model_path = out / "model.json"
    save_model(model, model_path)
    (out / "ident_report.json").write_text(
        json.dumps(report.to_dict(), indent=1) + "\n", encoding="utf-8")
    log.info("identified %d rules from %d samples in %.2fs "
             "(holdout rmse ratio %.4f, coverage %s)",
             args.rules, len(samples), time.perf_counter() - t0,
             report.rmse_ratio, np.round(report.coverage, 4).tolist())
    return 0


def cmd_simulate(args) -> int:
    config = _load_scenario(args)
    out = _out_dir(args)
    if config.observer == "proposed" or args.model or config.model_path:
        model_path = args.model or config.model_path
        if model_path is None:
            raise TeleobError("observer 'proposed' needs a model file "
                              "(--model or model_path in the scenario)")
        model = load_model(model_path)
    else:
        model = synthetic_model(n=config.dof, dt=config.dt)
    sim = build_simulation(config, model)
    trace_path = out / "trace.csv"
    t0 = time.perf_counter()
    try:
        write_trace(trace_path, sim, config.ticks)
    except DivergenceError as exc:
        log.error("simulation diverged: %s (partial trace kept at %s)",
                  exc, trace_path)
        return 2
    runtime = time.perf_counter() - t0
    report = compute_metrics(load_trace(trace_path), config, runtime_s=runtime)
    report.save(out / "metrics.json")
    config.save(out / "scenario.json")
    log.info("simulated %.1fs (%d rows) in %.2fs; free-motion force mean %.4g",
             config.duration, report.rows, runtime, report.free_force_mean)
    return 0


def cmd_validate(args) -> int:
    out = _out_dir(args)
    model = load_model(args.model) if args.model else None
    t0 = time.perf_counter()
    results = run_all(model=model, seed=args.seed if args.seed is not None
                      else 2024)
    elapsed = time.perf_counter() - t0
    (out / "validation.json").write_text(
        json.dumps(results, indent=1, default=float) + "\n", encoding="utf-8")
    for name, res in results.items():
        if isinstance(res, dict):
            print(f"{'PASS' if res['passed'] else 'FAIL'}  {name}")
    print(f"{'PASS' if results['passed'] else 'FAIL'}  overall")
    log.info("validation ran in %.2fs", elapsed)
    return 0 if results["passed"] else 1


def cmd_report(args) -> int:
    config = _load_scenario(args)
    out = _out_dir(args)
    trace = load_trace(args.trace)
    report = compute_metrics(trace, config)
    report.save(out / "metrics.json")
    print(json.dumps(report.to_dict(), indent=1))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="teleob",
        description="Fuzzy-model force estimation and delayed bilateral "
                    "teleoperation testbench")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", type=str, default=None,
                       help="scenario JSON (defaults to the stock scenario)")
        if seed:
            p.add_argument("--seed", type=int, default=None,
                           help="override the scenario seed")
        p.add_argument("--out", type=str, default="out",
                       help="output directory")

    p = sub.add_parser("gen-data", help="generate identification samples")
    common(p)
    p.add_argument("--count", type=int, default=30409,
                   help="number of samples to generate")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("identify", help="fit an interval fuzzy model")
    common(p)
    p.add_argument("--data", type=str, required=True, help="dataset CSV")
    p.add_argument("--rules", type=int, default=9)
    p.add_argument("--mu-blur", type=float, default=0.05, dest="mu_blur")
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("simulate", help="run a closed-loop scenario")
    common(p)
    p.add_argument("--observer", choices=["proposed", "rfob", "ndob", "none"],
                   default=None)
    p.add_argument("--perturb", choices=["none", "drop-gravity", "mass-x2"],
                   default=None)
    p.add_argument("--model", type=str, default=None,
                   help="fuzzy model JSON (overrides the scenario)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("validate", help="run the cross-checking suites")
    p.add_argument("--model", type=str, default=None,
                   help="identified model for the stability sweep")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=str, default="out")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("report", help="recompute metrics from a trace")
    common(p, seed=False)
    p.add_argument("--trace", type=str, required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as exc:
        log.error("diverged: %s", exc)
        return 2
    except TeleobError as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
