"""Command-line entry point: ``disttgm synth | estimate | test | experiment``.

Matrices on disk use the MATRIX wire message (header plus row-major float64).
Pair indices on the command line and in config files are 1-based.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments
from .aggregate import ThresholdConfig
from .runtime.codec import read_matrix, write_matrix
from .runtime.pipeline import PipelineConfig, run_pipeline
from .synth import GraphSpec, generate_precision, sample_model

log = logging.getLogger("disttgm")


class ConfigError(ValueError):
    pass


# dotted config key -> PipelineConfig field (threshold.* and infer.pairs handled apart)
_PIPELINE_KEYS = {
    "m": "m", "model": "model", "seed": "seed", "transport": "transport",
    "concurrent": "concurrent", "truncate": "truncate",
    "clime.lambda": "lam", "lam": "lam", "clime.lambda_c": "lambda_c", "lambda_c": "lambda_c",
    "clime.feas_tol": "feas_tol", "feas_tol": "feas_tol",
    "infer.alpha": "alpha", "alpha": "alpha",
    "kendall.fast": "kendall_fast", "kendall_fast": "kendall_fast",
}
_THRESHOLD_KEYS = {"threshold.mode": "mode", "threshold.t": "t", "threshold.c_t": "c_t",
                   "threshold.diagonal": "threshold_diagonal"}
_SYNTH_KEYS = {"d", "N", "n", "graph", "graph.kind", "graph.v", "graph.edge_prob", "graph.delta", "edge_prob",
               "model", "seed"}


def flatten(doc: dict, prefix: str = "") -> dict:
    out = {}
    for key, val in doc.items():
        full = f"{prefix}{key}"
        if isinstance(val, dict):
            out.update(flatten(val, full + "."))
        else:
            out[full] = val
    return out


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return flatten(doc)


def _pairs(value, d: int | None) -> tuple:
    if value == "all-offdiag":
        if d is None:
            raise ConfigError("all-offdiag needs the data dimension")
        return tuple((j, k) for j in range(d) for k in range(j + 1, d))
    try:
        pairs = tuple((int(j) - 1, int(k) - 1) for j, k in value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"infer.pairs must be a list of 1-based [j, k] pairs: {exc}") from exc
    for j, k in pairs:
        if j < 0 or k < 0 or (d is not None and (j >= d or k >= d)):
            raise ConfigError(f"pair {(j + 1, k + 1)} out of range")
    return pairs


def pipeline_config(flat: dict, d: int | None = None, **overrides) -> PipelineConfig:
    kw, tkw = {}, {}
    for key, val in flat.items():
        if key in _PIPELINE_KEYS:
            kw[_PIPELINE_KEYS[key]] = val
        elif key in _THRESHOLD_KEYS:
            tkw[_THRESHOLD_KEYS[key]] = val
        elif key in ("infer.pairs", "infer_pairs"):
            kw["infer_pairs"] = _pairs(val, d)
        elif key in _SYNTH_KEYS:
            continue
        else:
            raise ConfigError(f"unknown config key {key!r}")
    if tkw:
        kw["threshold"] = ThresholdConfig(**tkw)
    kw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return PipelineConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def experiment_config(flat: dict, **overrides) -> experiments.ExperimentConfig:
    names = {f.name for f in dataclasses.fields(experiments.ExperimentConfig)}
    kw = {}
    for key, val in flat.items():
        name = {"clime.lambda_c": "lambda_c", "infer.alpha": "alpha", "graph.kind": "graph",
                "graph.edge_prob": "edge_prob"}.get(key, key)
        if name not in names:
            raise ConfigError(f"unknown experiment key {key!r}")
        kw[name] = tuple(val) if isinstance(val, list) else val
    kw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return experiments.ExperimentConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


# --- subcommands ---------------------------------------------------------------

def cmd_synth(args, flat: dict) -> int:
    spec = GraphSpec(int(flat.get("d", 50)), flat.get("graph.kind", flat.get("graph", "random")),
                     v=float(flat.get("graph.v", 0.3)),
                     edge_prob=flat.get("graph.edge_prob", flat.get("edge_prob")),
                     delta=float(flat.get("graph.delta", 0.1)),
                     seed=args.seed if args.seed is not None else int(flat.get("seed", 0)))
    truth = generate_precision(spec)
    n = int(flat.get("N", flat.get("n", 2000)))
    X = sample_model(truth, flat.get("model", "nonparanormal"), n,
                     np.random.SeedSequence(entropy=spec.seed, spawn_key=(1,)))
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    write_matrix(out / "data.dtgm", X)
    write_matrix(out / "theta.dtgm", truth.theta_star)
    write_matrix(out / "sigma.dtgm", truth.sigma_star)
    print(json.dumps({"d": spec.d, "n": n, "edges": len(truth.support), "files": ["data.dtgm", "theta.dtgm",
                                                                                  "sigma.dtgm"]}))
    return 0


def _test_records(report) -> list[dict]:
    return [{"j": t.j + 1, "k": t.k + 1, "theta_bar": t.theta_bar_jk, "u_stat": t.u_stat, "p_value": t.p_value,
             "reject": t.reject, "ci_low": t.ci_low, "ci_high": t.ci_high, "alpha": t.alpha}
            for t in report.tests]


def _write_records(records: list[dict], fmt: str, path) -> None:
    if path is None:
        if fmt == "json":
            print(json.dumps(records, indent=1))
        else:
            import csv
            w = csv.DictWriter(sys.stdout, fieldnames=list(records[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(records)
        return
    experiments.emit_report(records, fmt, path)


def cmd_estimate(args, flat: dict) -> int:
    X = read_matrix(args.data)
    cfg = pipeline_config(flat, X.shape[1], m=args.m, seed=args.seed, transport=args.transport)
    report = run_pipeline(X, cfg)
    if args.out:
        write_matrix(args.out, report.theta_check)
    edges = int(np.count_nonzero(np.triu(report.theta_check, 1)))
    summary = {"d": X.shape[1], "N": X.shape[0], "m": cfg.m, "threshold": report.threshold, "edges": edges,
               "messages": report.messages, "lambda": report.per_worker[0]["lambda_used"]}
    print(json.dumps(summary))
    if report.tests:
        _write_records(_test_records(report), args.format, None)
    return 0


def cmd_test(args, flat: dict) -> int:
    X = read_matrix(args.data)
    pairs = _pairs([args.pair], X.shape[1]) if args.pair else None
    cfg = pipeline_config(flat, X.shape[1], m=args.m, seed=args.seed, transport=args.transport,
                          infer_pairs=pairs)
    if not cfg.infer_pairs:
        raise ConfigError("no pair to test: pass --pair J K or set infer.pairs")
    report = run_pipeline(X, cfg)
    _write_records(_test_records(report), args.format, args.out)
    return 0


def cmd_experiment(args, flat: dict) -> int:
    cfg = experiment_config(flat, seed=args.seed, transport=args.transport, jobs=args.jobs)
    if args.full:
        cfg = cfg.full_scale()
    if cfg.setting in ("fixed_N", "fixed_n"):
        rows = experiments.run_estimation_experiment(cfg)
        summary = {f"{e}/m={m}": {k: v for k, v in s.items()}
                   for (e, m), s in experiments.summarize_estimation(rows).items()}
    elif cfg.setting == "type1":
        rows, s = experiments.run_type1(cfg)
        summary = {"pair": [p + 1 for p in s.pop("pair")], **{f"m={m}": v for m, v in s.items()}}
    else:
        rows, s = experiments.run_power(cfg)
        summary = {"pair": [p + 1 for p in s.pop("pair")],
                   **{f"m={m}/mu={mu:g}": v for (m, mu), v in s.items()}}
    summary["config"] = {**dataclasses.asdict(cfg), "graph": cfg.graph, "edge_prob": cfg.edge_prob}
    if args.out:
        experiments.emit_report(rows, args.format, args.out, timings=not args.no_timings)
    print(json.dumps(summary, default=str))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (nested or dotted keys)")
    common.add_argument("--seed", type=int, help="run seed (overrides the config)")
    common.add_argument("--out", help="output path")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--transport", choices=("inprocess", "socket"))
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="disttgm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write a ground truth and a sample to --out DIR")
    for name, helptext in (("estimate", "run the one-shot pipeline on a data file"),
                           ("test", "test one entry of the precision matrix")):
        sp = sub.add_parser(name, parents=[common], help=helptext)
        sp.add_argument("data", help="data matrix file (MATRIX message)")
        sp.add_argument("-m", "--machines", dest="m", type=int, help="number of workers")
        if name == "test":
            sp.add_argument("--pair", nargs=2, type=int, metavar=("J", "K"), help="1-based entry to test")
    ex = sub.add_parser("experiment", parents=[common], help="run a Monte-Carlo experiment")
    ex.add_argument("--full", action="store_true", help="full-size profile (d = 200, more reps)")
    ex.add_argument("--jobs", type=int, help="worker processes for repetitions")
    ex.add_argument("--no-timings", action="store_true", help="blank the elapsed column")
    return p


COMMANDS = {"synth": cmd_synth, "estimate": cmd_estimate, "test": cmd_test, "experiment": cmd_experiment}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args, load_config(args.config))
    except (ConfigError, OSError, ValueError) as exc:
        print(f"disttgm: error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"disttgm: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
