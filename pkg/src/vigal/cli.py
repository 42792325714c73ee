"""Command-line entry point: ``vigal {run,sweep,score,report}``.

Config files are JSON objects mirroring :class:`~vigal.simulator.RunConfig`.
The default output directory is ``$VIGAL_OUT`` if set, else ``./runs``.
"""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from vigal.dataio import DataError
from vigal.simulator import RECORD_KEYS, RunConfig, read_run_log, run_active_learning
from vigal.vendi import kernel_matrix, normalized_spectrum, parse_order, vendi_entropy

log = logging.getLogger("vigal")

METRICS = ("accuracy", "precision_w", "recall_w", "f1_w", "cross_entropy", "class_entropy", "feature_vs")


class ConfigError(ValueError):
    pass


def default_out_dir() -> Path:
    return Path(os.environ.get("VIGAL_OUT", "runs"))


def load_json(path) -> dict:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def build_config(raw: dict, policy=None, batch_size=None, budget=None, q=None, seed=None) -> RunConfig:
    raw = json.loads(json.dumps(raw))
    if policy is not None:
        raw.setdefault("policy", {})["name"] = policy
    if batch_size is not None:
        raw["batch_size"] = batch_size
        raw.setdefault("seed_set_size", None)
    if budget is not None:
        raw["label_budget"] = budget
    if q is not None:
        raw.setdefault("policy", {}).setdefault("vig", {})["order"] = q
    if seed is not None:
        raw["master_seed"] = seed
    try:
        return RunConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid run config: {exc}") from None


def run_id(cfg: RunConfig) -> str:
    parts = [cfg.policy.name, f"b{cfg.batch_size}"]
    if cfg.policy.name == "vig":
        q = cfg.policy.vig.order
        parts.append("qinf" if math.isinf(q) else f"q{q:g}")
    parts.append(f"s{cfg.master_seed}")
    return "_".join(parts)


def _group_q(cfg: dict):
    return cfg["policy"]["vig"]["order"] if cfg["policy"]["name"] == "vig" else None


def execute_run(cfg: RunConfig, out_dir: Path, rid: str | None = None) -> Path:
    """Run one experiment and write its log, metadata and summary."""
    out_dir.mkdir(parents=True, exist_ok=True)
    rid = rid or run_id(cfg)
    log_path = out_dir / f"{rid}.jsonl"
    if cfg.dataset.kind == "csv" and not Path(cfg.dataset.path or "").exists():
        raise DataError(f"{cfg.dataset.path}: no such file")
    run_log = run_active_learning(cfg, out_path=log_path)
    meta = {"run_id": rid, "config": cfg.to_dict(), "num_records": len(run_log.records)}
    (out_dir / f"{rid}.meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    last = run_log.records[-1]
    lines = [f"run {rid}: policy={cfg.policy.name} batch={cfg.batch_size} budget={cfg.label_budget}"]
    lines += [f"  round {r['round']:3d}  n={r['n_labeled']:4d}  acc={r['accuracy']:.4f}  "
              f"f1={r['f1_w']:.4f}  ce={r['cross_entropy']:.4f}  vs={r['feature_vs']:.3f}"
              for r in run_log.records]
    lines.append(f"final accuracy {last['accuracy']:.4f} with {last['n_labeled']} labels")
    (out_dir / f"{rid}.summary.txt").write_text("\n".join(lines) + "\n")
    return log_path


def cmd_run(args) -> int:
    out_dir = Path(args.out) if args.out else default_out_dir()
    try:
        raw = load_json(args.config) if args.config else {}
        cfg = build_config(raw, args.policy, args.batch_size, args.budget, args.q, args.seed)
        path = execute_run(cfg, out_dir)
    except (ConfigError, DataError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "error.txt").write_text(f"{exc}\n")
        return 1
    print(path.with_suffix(".summary.txt").read_text(), end="")
    return 0


# -- sweep -----------------------------------------------------------------

SWEEP_KEYS = {"base", "policies", "batch_sizes", "q_values", "seeds", "out", "workers"}


def expand_manifest(manifest: dict) -> list[tuple[str, RunConfig]]:
    unknown = set(manifest) - SWEEP_KEYS
    if unknown:
        raise ConfigError(f"manifest: unknown keys {sorted(unknown)}")
    base = manifest.get("base", {})
    policies = manifest.get("policies") or [base.get("policy", {}).get("name", "random")]
    batch_sizes = manifest.get("batch_sizes") or [base.get("batch_size", 20)]
    q_values = manifest.get("q_values") or [base.get("policy", {}).get("vig", {}).get("order", 1.0)]
    seeds = manifest.get("seeds") or [base.get("master_seed", 0)]
    runs = []
    for pol, b in itertools.product(policies, batch_sizes):
        for q in (q_values if pol == "vig" else [None]):
            for s in seeds:
                cfg = build_config(base, pol, b, None, q, s)
                runs.append((run_id(cfg), cfg))
    ids = [r for r, _ in runs]
    if len(set(ids)) != len(ids):
        raise ConfigError("manifest expands to duplicate run ids")
    return runs


def _sweep_worker(item):
    rid, cfg, out_dir = item
    try:
        execute_run(cfg, Path(out_dir), rid)
        return rid, None
    except Exception as exc:  # noqa: BLE001 - one failed run must not stop the sweep
        return rid, f"{type(exc).__name__}: {exc}"


def cmd_sweep(args) -> int:
    try:
        manifest = load_json(args.manifest)
        runs = expand_manifest(manifest)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out_dir = Path(args.out or manifest.get("out") or default_out_dir())
    out_dir.mkdir(parents=True, exist_ok=True)
    workers = args.workers or manifest.get("workers", 1)
    items = [(rid, cfg, str(out_dir)) for rid, cfg in runs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_worker, items))
    else:
        results = [_sweep_worker(it) for it in items]
    failed = {rid: err for rid, err in results if err}
    for rid, err in failed.items():
        log.error("run %s failed: %s", rid, err)
        print(f"run {rid} failed: {err}", file=sys.stderr)
    index = {rid: {"config": cfg.to_dict(), "log": f"{rid}.jsonl", "status": "failed" if rid in failed else "ok",
                   **({"error": failed[rid]} if rid in failed else {})}
             for rid, cfg in runs}
    (out_dir / "index.json").write_text(json.dumps(index, indent=2) + "\n")
    print(f"{len(runs) - len(failed)}/{len(runs)} runs succeeded; index at {out_dir / 'index.json'}")
    return 1 if failed else 0


# -- score -----------------------------------------------------------------

def load_vectors(path) -> np.ndarray:
    """Numeric rows of a comma-delimited file; a non-numeric first row is a header."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        rows = rows[1:]
    if not rows:
        raise DataError(f"{path}: no data rows")
    out = []
    for r, row in enumerate(rows, start=1):
        if len(row) != len(rows[0]):
            raise DataError(f"{path}: row {r} has {len(row)} fields, expected {len(rows[0])}")
        try:
            out.append([float(c) for c in row])
        except ValueError:
            raise DataError(f"{path}: row {r}: non-numeric value") from None
    return np.array(out)


def cmd_score(args) -> int:
    try:
        q = parse_order(args.q)
        V = load_vectors(args.csv)
        if args.kernel == "hamming_label":
            V = V.astype(np.int64)
        K = kernel_matrix(V, args.kernel)
        h = vendi_entropy(normalized_spectrum(K), q)
    except (DataError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"VS_q = {math.exp(h):.6f}")
    print(f"H_V = {h:.6f}")
    return 0


# -- report ----------------------------------------------------------------

def standard_error(values) -> float:
    """Sample standard deviation over sqrt(n); zero for a single value."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return 0.0
    return float(np.std(v, ddof=1) / math.sqrt(v.size))


def aggregate_runs(run_dir) -> list[dict]:
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise ConfigError(f"{run_dir}: not a directory")
    logs = sorted(run_dir.glob("*.jsonl"))
    if not logs:
        raise ConfigError(f"{run_dir}: no run logs")
    groups: dict = {}
    for path in logs:
        meta_path = path.with_suffix(".meta.json")
        if not meta_path.exists():
            raise ConfigError(f"{path}: missing metadata file {meta_path.name}")
        cfg = json.loads(meta_path.read_text())["config"]
        try:
            records = read_run_log(path)
        except (ValueError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: mixed or malformed schema ({exc})") from None
        key = (cfg["policy"]["name"], cfg["batch_size"], _group_q(cfg))
        groups.setdefault(key, []).append(records)
    rows = []
    for (pol, b, q), runs in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1], str(kv[0][2]))):
        n_rounds = max(len(r) for r in runs)
        for k in range(n_rounds):
            recs = [r[k] for r in runs if len(r) > k]
            row = {"policy": pol, "batch_size": b, "q": "" if q is None else q, "round": k,
                   "n_labeled": recs[0]["n_labeled"], "n_runs": len(recs)}
            for m in METRICS:
                vals = [rec[m] for rec in recs]
                row[f"{m}_mean"] = float(np.mean(vals))
                row[f"{m}_se"] = standard_error(vals)
            rows.append(row)
    return rows


def cmd_report(args) -> int:
    try:
        rows = aggregate_runs(args.run_dir)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out) if args.out else Path(args.run_dir) / "report.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    print(f"wrote {len(rows)} rows to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vigal", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one active learning experiment")
    run.add_argument("--config", help="JSON run config")
    run.add_argument("--out", help="output directory")
    run.add_argument("--policy")
    run.add_argument("--batch-size", type=int)
    run.add_argument("--budget", type=int)
    run.add_argument("--q")
    run.add_argument("--seed", type=int)
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run a policies x batch sizes x q x seeds grid")
    sweep.add_argument("manifest", nargs="?")
    sweep.add_argument("--config", dest="manifest_opt", help="alias for the manifest argument")
    sweep.add_argument("--out")
    sweep.add_argument("--workers", type=int)
    sweep.set_defaults(func=cmd_sweep)

    score = sub.add_parser("score", help="Vendi score of the rows of a CSV file")
    score.add_argument("csv")
    score.add_argument("--kernel", default="cosine_feature", choices=["cosine_feature", "hamming_label"])
    score.add_argument("--q", default="1")
    score.set_defaults(func=cmd_score)

    report = sub.add_parser("report", help="aggregate run logs into mean/SE tables")
    report.add_argument("run_dir")
    report.add_argument("--out", help="output CSV path (default RUN_DIR/report.csv)")
    report.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "sweep":
        args.manifest = args.manifest or args.manifest_opt
        if not args.manifest:
            print("error: sweep needs a manifest path", file=sys.stderr)
            return 2
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
