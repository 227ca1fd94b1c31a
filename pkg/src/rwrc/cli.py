"""Command line interface: ``rwrc run | validate | merge | oracle``.

Every replica gets a field seed and a walk seed derived from (master_seed,
replica index) by a keyed hash, so a replica's output does not depend on which
worker ran it or in which order.  Outputs go to a directory holding

* ``blocks.csv``        certified blocks with provenance columns,
* ``checkpoints.csv``   positions and levels at the checkpoint times,
* ``traps.csv``         trap observables of LT(n) blocks,
* ``report.json``       the scaling report,
* ``manifest.json``     the resolved config, seeds and run metrics.

The default output root can be set with the ``RWRC_OUTPUT_ROOT`` environment variable.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import shutil
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from ._core import derive_seed
from .config import ConfigError, RunConfig, config_from_dict, default_checkpoints, validate_config
from .engine import StreamingWalker
from .oracles import oracle_suite
from .regen import BLOCK_COLUMNS, RegenBlock, read_blocks_csv, write_blocks_csv
from .scaling import (ScalingReport, clock_selfsimilarity_test, displacement_exponent,
                      estimate_limit_constants, hill_estimate, transverse_fk_check,
                      v0_from_displacements)
from .trapmodel import collect_trap_observables, write_trap_csv

ENV_OUTPUT_ROOT = "RWRC_OUTPUT_ROOT"
OUTPUT_FILES = ("blocks.csv", "checkpoints.csv", "traps.csv", "report.json")


def replica_seeds(master_seed: int, replica: int):
    """(field seed, walk seed) of a replica."""
    return derive_seed(master_seed, 0, replica), derive_seed(master_seed, 1, replica)


def checkpoints_of(cfg: RunConfig) -> List[int]:
    ck = cfg.walk["checkpoints"]
    return sorted(set(int(c) for c in ck)) if ck else default_checkpoints(cfg.walk["steps"])


def run_replica(cfg_dict: dict, replica: int) -> dict:
    """Simulate one replica; a plain function so that it can run in a worker process."""
    cfg = config_from_dict(cfg_dict)
    fseed, wseed = replica_seeds(cfg.walk["master_seed"], replica)
    field = cfg.make_field(fseed)
    ck = checkpoints_of(cfg)
    walker = StreamingWalker(field, wseed, cfg.regen_config(), skip_threshold=cfg.walk["skip_threshold"],
                             checkpoints=ck, replica=replica)
    mb = cfg.walk["max_blocks"] + 1 if cfg.walk["max_blocks"] > 0 else None
    t0 = time.perf_counter()
    res = walker.run(horizon=cfg.walk["steps"], max_blocks=mb)
    elapsed = time.perf_counter() - t0
    return {"replica": replica, "field_seed": fseed, "walk_seed": wseed, "blocks": res.blocks,
            "checkpoints": [int(c) for c in res.checkpoints],
            "positions": res.checkpoint_positions.tolist(), "final_time": res.final_time,
            "explicit_steps": res.explicit_steps, "stop_reason": res.stop_reason, "elapsed": elapsed}


def _prepare_dir(out: Path, overwrite: bool) -> None:
    if out.exists() and any(out.iterdir()):
        if not overwrite:
            raise FileExistsError(f"output directory {str(out)!r} is not empty (use --overwrite)")
        for name in OUTPUT_FILES + ("manifest.json", "oracle.json"):
            p = out / name
            if p.exists():
                p.unlink()
    out.mkdir(parents=True, exist_ok=True)


def resolve_out_dir(cfg: RunConfig, out: Optional[str]) -> Path:
    path = Path(out) if out else Path(cfg.outputs["directory"])
    if not path.is_absolute():
        path = Path(os.environ.get(ENV_OUTPUT_ROOT, ".")) / path
    return path


# -- tables ------------------------------------------------------------------------------------

CHECKPOINT_COLUMNS = ["master_seed", "replica", "n"]


def write_checkpoints(rows: Sequence[dict], d: int, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CHECKPOINT_COLUMNS + [f"x_{i + 1}" for i in range(d)] + ["level"])
        for r in rows:
            w.writerow([r["master_seed"], r["replica"], r["n"], *r["x"], repr(float(r["level"]))])


def read_checkpoints(path: Path) -> List[dict]:
    out = []
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        head = next(rd)
        d = len(head) - len(CHECKPOINT_COLUMNS) - 1
        for row in rd:
            out.append({"master_seed": int(row[0]), "replica": int(row[1]), "n": int(row[2]),
                        "x": [int(v) for v in row[3:3 + d]], "level": float(row[3 + d])})
    return out


def read_provenance(path: Path) -> List[int]:
    with open(path, newline="") as fh:
        return [int(r["master_seed"]) for r in csv.DictReader(fh)]


# -- report ------------------------------------------------------------------------------------

def build_report(cfg: RunConfig, blocks: Sequence[RegenBlock], ck_rows: Sequence[dict], seed: int):
    """Scaling report and trap observables from pooled tables."""
    gamma = cfg.field["gamma"]
    rep = ScalingReport(gamma_config=gamma)
    kind = cfg.kind
    reg = [b for b in blocks if not b.initial]
    n_thr = cfg.regen["n_threshold"]
    rep.extra["regular_blocks"] = len(reg)
    rep.extra["lt_blocks"] = sum(b.LT for b in reg)
    rep.extra["slt_given_lt"] = (sum(b.SLT for b in reg if b.LT) / rep.extra["lt_blocks"]
                                 if rep.extra["lt_blocks"] else None)
    durations = [b.duration for b in reg]
    direction = cfg.make_field(0).direction
    if len(durations) >= 10:
        try:
            rep.gamma_from_blocks = hill_estimate(durations)
        except ValueError as exc:
            rep.notes.append(f"hill: {exc}")
    if reg:
        disp = np.array([b.displacement for b in reg], dtype=float)
        try:
            rep.v_hat, rep.v0_hat = v0_from_displacements(disp, direction)
        except ValueError as exc:
            rep.notes.append(f"velocity: {exc}")
    # checkpoint matrix (replicas x checkpoints), keeping checkpoints every replica reached
    by_rep: Dict[tuple, Dict[int, dict]] = {}
    for r in ck_rows:
        by_rep.setdefault((r["master_seed"], r["replica"]), {})[r["n"]] = r
    if by_rep:
        common = sorted(set.intersection(*(set(v) for v in by_rep.values())) - {0})
        levels = np.array([[by_rep[k][n]["level"] for n in common] for k in sorted(by_rep)])
        pos = np.array([[by_rep[k][n]["x"] for n in common] for k in sorted(by_rep)], dtype=float)
        if kind in ("exponent", "fk") and len(common) >= 3:
            try:
                rep.gamma_from_displacement = displacement_exponent(levels, common)
            except ValueError as exc:
                rep.notes.append(f"displacement exponent: {exc}")
        if kind == "fk" and len(common) >= 3 and len(reg) >= 2:
            try:
                fk = transverse_fk_check(pos, common, np.array([b.displacement for b in reg]), direction)
                rep.transverse_slope = fk.slope
                rep.sigma_hat = fk.sigma_hat
                rep.Md_hat = fk.Md_hat
                # no limit is asserted along v0; the raw variance series is reported as is
                rep.extra["fk_checkpoints"] = list(common)
                rep.extra["longitudinal_variance"] = np.var(pos @ fk.v0_hat, axis=0).tolist()
                if fk.rank_deficient:
                    rep.notes.append("sigma estimate is rank deficient")
            except ValueError as exc:
                rep.notes.append(f"fk: {exc}")
    if kind == "clock":
        e = cfg.experiment
        try:
            rep.selfsim_pvalue = clock_selfsimilarity_test(durations, e["selfsim_n1"], e["selfsim_n2"],
                                                           e["selfsim_replicas"], law=cfg.law(), seed=seed)
        except ValueError as exc:
            rep.notes.append(f"self-similarity: {exc}")
    traps = []
    for b in reg:
        if b.max_conductance >= n_thr and b.trap_edge is not None and b.visits_V >= 1:
            traps.append(collect_trap_observables(b, n_thr, seed))
    if kind == "traps":
        try:
            rep.C1_hat, rep.C_infty_hat = estimate_limit_constants(reg, cfg.law(), n_thr,
                                                                   [t.W_n for t in traps] or None)
        except ValueError as exc:
            rep.notes.append(f"limit constants: {exc}")
        if rep.C_infty_hat and rep.v_hat is not None:
            rep.extra["fk_scale_constant"] = float(np.linalg.norm(rep.v_hat) * rep.C_infty_hat ** (-gamma))
            rep.notes.append("fk_scale_constant is |v_hat| * C_infty_hat^(-gamma), taken from the velocity "
                             "limit rather than estimated separately")
        if traps:
            rep.extra["mean_trap_fraction"] = float(np.mean(
                [b.trap_time / b.duration for b in reg if b.LT and b.trap_edge is not None]))
    return rep, traps


def _write_tables(out: Path, cfg: RunConfig, blocks, prov, ck_rows, seed: int) -> None:
    fmts = cfg.outputs["formats"]
    rep, traps = build_report(cfg, blocks, ck_rows, seed)
    if "csv" in fmts:
        write_blocks_csv(blocks, out / "blocks.csv", prov)
        write_checkpoints(ck_rows, cfg.field["dimension"], out / "checkpoints.csv")
        write_trap_csv(traps, out / "traps.csv")
    if "json" in fmts:
        (out / "report.json").write_text(rep.to_json() + "\n")


def run_experiment(cfg: RunConfig, out_dir: Path, workers: int = 1, overwrite: bool = False) -> dict:
    """Run every replica, write the output tables and return the manifest."""
    out_dir = Path(out_dir)
    _prepare_dir(out_dir, overwrite)
    t0 = time.perf_counter()
    manifest = {"artifact_version": __version__, "config": cfg.to_dict(), "notices": list(cfg.notices)}
    if cfg.kind == "oracle_suite":
        res = oracle_suite(cfg.walk["master_seed"])
        (out_dir / "oracle.json").write_text(json.dumps(res, indent=2, sort_keys=True) + "\n")
        manifest["oracle_pass"] = all(v["pass"] for v in res.values())
        manifest["metrics"] = {"wall_seconds": time.perf_counter() - t0}
        (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return manifest
    master = cfg.walk["master_seed"]
    reps = list(range(cfg.walk["replica_offset"], cfg.walk["replica_offset"] + cfg.walk["replicas"]))
    cd = cfg.to_dict()
    if workers > 1 and len(reps) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_replica, [cd] * len(reps), reps))
    else:
        results = [run_replica(cd, r) for r in reps]
    results.sort(key=lambda r: r["replica"])
    blocks, prov, ck_rows = [], [], []
    direction = cfg.make_field(0).direction
    for r in results:
        for b in r["blocks"]:
            blocks.append(b)
            prov.append({"master_seed": master})
        for n, x in zip(r["checkpoints"], r["positions"]):
            if n <= r["final_time"]:
                ck_rows.append({"master_seed": master, "replica": r["replica"], "n": n, "x": x,
                                "level": float(np.dot(x, direction))})
    _write_tables(out_dir, cfg, blocks, prov, ck_rows, master)
    wall = time.perf_counter() - t0
    total = sum(r["final_time"] for r in results)
    manifest["replicas"] = [{k: r[k] for k in ("replica", "field_seed", "walk_seed", "final_time",
                                               "explicit_steps", "stop_reason")} for r in results]
    manifest["metrics"] = {"wall_seconds": wall, "replica_seconds": [r["elapsed"] for r in results],
                           "walk_time_per_second": total / wall if wall > 0 else None,
                           "explicit_steps_per_second": sum(r["explicit_steps"] for r in results) / wall
                           if wall > 0 else None}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def merge_outputs(paths: Sequence[Path], out_dir: Path, overwrite: bool = False) -> dict:
    """Pool several output directories into one; the report is recomputed on the pooled tables."""
    paths = [Path(p) for p in paths]
    if len(paths) < 2:
        raise ValueError("merge needs at least two inputs")
    if len({p.resolve() for p in paths}) != len(paths):
        raise ValueError("the same output directory is listed twice")
    mans = [json.loads((p / "manifest.json").read_text()) for p in paths]
    base = mans[0]
    for p, m in zip(paths[1:], mans[1:]):
        if m["artifact_version"] != base["artifact_version"]:
            raise ValueError(f"{p}: artifact version differs")
        for sec in ("field", "regen", "experiment"):
            if m["config"][sec] != base["config"][sec]:
                raise ValueError(f"{p}: [{sec}] configuration differs")
        for k in ("steps", "max_blocks", "skip_threshold", "checkpoints"):
            if m["config"]["walk"][k] != base["config"]["walk"][k]:
                raise ValueError(f"{p}: [walk] {k} differs")
    seen = set()
    for p, m in zip(paths, mans):
        for r in m.get("replicas", []):
            key = (m["config"]["walk"]["master_seed"], r["replica"])
            if key in seen:
                raise ValueError(f"{p}: replica {key} appears twice (duplicate provenance)")
            seen.add(key)
    cfg = config_from_dict(base["config"])
    items = []
    ck_rows = []
    for p in paths:
        bl = read_blocks_csv(p / "blocks.csv")
        ms = read_provenance(p / "blocks.csv")
        items += list(zip(ms, bl))
        ck_rows += read_checkpoints(p / "checkpoints.csv")
    items.sort(key=lambda t: (t[0], t[1].replica, t[1].index))
    ck_rows.sort(key=lambda r: (r["master_seed"], r["replica"], r["n"]))
    out_dir = Path(out_dir)
    _prepare_dir(out_dir, overwrite)
    _write_tables(out_dir, cfg, [b for _, b in items], [{"master_seed": m} for m, _ in items], ck_rows,
                  cfg.walk["master_seed"])
    manifest = {"artifact_version": base["artifact_version"], "config": base["config"],
                "merged_from": [str(p) for p in paths],
                "replicas": sorted((r for m in mans for r in m.get("replicas", [])),
                                   key=lambda r: r["replica"])}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


# -- entry point -------------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rwrc", description="Biased random walk among random conductances")
    ap.add_argument("--version", action="version", version=f"rwrc {__version__}")
    sub = ap.add_subparsers(dest="verb", required=True)
    r = sub.add_parser("run", help="run an experiment from a config file or a manifest")
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="config file")
    src.add_argument("--manifest", help="manifest.json of an earlier run to reproduce")
    r.add_argument("--out", help="output directory")
    r.add_argument("--workers", type=int, default=1, help="worker processes (default 1)")
    r.add_argument("--overwrite", action="store_true", help="replace outputs in a non-empty directory")
    v = sub.add_parser("validate", help="check a config file and print it with defaults resolved")
    v.add_argument("--config", required=True)
    m = sub.add_parser("merge", help="pool several output directories")
    m.add_argument("paths", nargs="+")
    m.add_argument("--out", required=True)
    m.add_argument("--overwrite", action="store_true")
    o = sub.add_parser("oracle", help="run the exact-formula checks")
    o.add_argument("--out", help="write oracle.json here")
    o.add_argument("--seed", type=int, default=0)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.verb == "validate":
            cfg = validate_config(args.config)
            for n in cfg.notices:
                print(f"notice: {n}", file=sys.stderr)
            print(cfg.to_ini(), end="")
            return 0
        if args.verb == "run":
            if args.workers < 1:
                raise ValueError("--workers must be >= 1")
            if args.config:
                cfg = validate_config(args.config)
            else:
                cfg = config_from_dict(json.loads(Path(args.manifest).read_text())["config"])
            for n in cfg.notices:
                print(f"notice: {n}", file=sys.stderr)
            out = resolve_out_dir(cfg, args.out)
            man = run_experiment(cfg, out, args.workers, args.overwrite)
            print(f"wrote {out}")
            if cfg.kind == "oracle_suite" and not man["oracle_pass"]:
                return 1
            return 0
        if args.verb == "merge":
            merge_outputs(args.paths, Path(args.out), args.overwrite)
            print(f"wrote {args.out}")
            return 0
        if args.verb == "oracle":
            res = oracle_suite(args.seed)
            for k, v in res.items():
                print(f"{'PASS' if v['pass'] else 'FAIL'}  {k}")
            if args.out:
                Path(args.out).mkdir(parents=True, exist_ok=True)
                (Path(args.out) / "oracle.json").write_text(json.dumps(res, indent=2, sort_keys=True) + "\n")
            return 0 if all(v["pass"] for v in res.values()) else 1
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except (FileExistsError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
