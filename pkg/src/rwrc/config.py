"""Run configuration: a sectioned key-value file with every default echoed back.

Example::

    [field]
    gamma = 0.5
    K = 2
    x_min = 0.5
    bias_lambda = 4

    [walk]
    steps = 1000000
    replicas = 4
    master_seed = 7

    [experiment]
    kind = clock
"""

from __future__ import annotations

import configparser
import math
from dataclasses import asdict, dataclass, field as dc_field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .env import ConductanceField, ConductanceLaw
from .regen import RegenConfig

EXPERIMENTS = ("exponent", "clock", "fk", "traps", "oracle_suite")
FORMATS = ("csv", "json")

# key -> (type, default); "auto" defaults are resolved later
SCHEMA: Dict[str, Dict[str, Tuple[str, object]]] = {
    "field": {
        "gamma": ("float", 0.5),
        "slowly_varying": ("str", "constant"),
        "beta": ("float", 0.0),
        "x_min": ("float", 1.0),
        "lo": ("float", 1.0),
        "hi": ("float", 1.0),
        "dimension": ("int", 2),
        "K": ("float", 20.0),
        "bias_lambda": ("float", 1.0),
        "bias_direction": ("floats", None),
    },
    "walk": {
        "steps": ("int", 1_000_000),
        "replicas": ("int", 1),
        "master_seed": ("int", 0),
        "replica_offset": ("int", 0),
        "max_blocks": ("int", 0),
        "skip_threshold": ("float", None),
        "checkpoints": ("ints", None),
    },
    "regen": {
        "alpha": ("float", None),
        "margin": ("int", None),
        "n_threshold": ("float", 1e4),
        "delta": ("float", 0.3),
    },
    "outputs": {
        "directory": ("str", "rwrc_out"),
        "formats": ("strs", ["csv", "json"]),
    },
    "experiment": {
        "kind": ("str", "exponent"),
        "selfsim_n1": ("int", 1000),
        "selfsim_n2": ("int", 4000),
        "selfsim_replicas": ("int", 500),
    },
}


class ConfigError(ValueError):
    def __init__(self, problems: List[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in self.problems))


@dataclass
class RunConfig:
    field: Dict[str, object]
    walk: Dict[str, object]
    regen: Dict[str, object]
    outputs: Dict[str, object]
    experiment: Dict[str, object]
    notices: List[str] = dc_field(default_factory=list, compare=False)

    # -- derived objects --
    def law(self) -> ConductanceLaw:
        f = self.field
        return ConductanceLaw(f["gamma"], f["slowly_varying"], f["beta"], f["x_min"], f["lo"], f["hi"])

    def make_field(self, seed: int) -> ConductanceField:
        f = self.field
        return ConductanceField(self.law(), seed=seed, dimension=f["dimension"], K=f["K"],
                                bias_lambda=f["bias_lambda"], bias_direction=f["bias_direction"])

    def regen_config(self) -> RegenConfig:
        r = self.regen
        return RegenConfig(r["alpha"], r["margin"], r["n_threshold"], r["delta"])

    @property
    def kind(self) -> str:
        return self.experiment["kind"]

    def to_dict(self) -> dict:
        return {s: dict(getattr(self, s)) for s in SCHEMA}

    def to_ini(self) -> str:
        lines = []
        for sec in SCHEMA:
            lines.append(f"[{sec}]")
            for k, v in getattr(self, sec).items():
                lines.append(f"{k} = {_fmt(v)}")
            lines.append("")
        return "\n".join(lines)


def _fmt(v) -> str:
    if v is None:
        return "auto"
    if isinstance(v, (list, tuple)):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _convert(typ: str, raw: str):
    raw = raw.strip()
    if raw.lower() == "auto":
        return None
    if typ == "float":
        return float(raw)
    if typ == "int":
        v = float(raw)
        if v != int(v):
            raise ValueError(f"{raw!r} is not an integer")
        return int(v)
    if typ == "str":
        return raw
    parts = [p.strip() for p in raw.replace(";", ",").split(",") if p.strip()]
    if typ == "floats":
        return [float(p) for p in parts]
    if typ == "ints":
        return [int(float(p)) for p in parts]
    if typ == "strs":
        return parts
    raise AssertionError(typ)


def parse_config_text(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__", inline_comment_prefixes=("#",))
    cp.optionxform = str  # keep key case (K)
    problems: List[str] = []
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"cannot parse: {exc}"]) from exc
    values: Dict[str, Dict[str, object]] = {}
    given: Dict[str, set] = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            problems.append(f"unknown section [{sec}]")
    for sec, keys in SCHEMA.items():
        values[sec] = {}
        given[sec] = set()
        present = cp[sec] if cp.has_section(sec) else {}
        for k in present:
            if k not in keys:
                problems.append(f"unknown key [{sec}] {k}")
        for k, (typ, default) in keys.items():
            if k in present:
                given[sec].add(k)
                try:
                    values[sec][k] = _convert(typ, present[k])
                except ValueError as exc:
                    problems.append(f"[{sec}] {k}: {exc}")
                    values[sec][k] = default
            else:
                values[sec][k] = list(default) if isinstance(default, list) else default
    cfg = RunConfig(values["field"], values["walk"], values["regen"], values["outputs"], values["experiment"])
    problems += _cross_validate(cfg, given)
    if problems:
        raise ConfigError(problems)
    return cfg


def _cross_validate(cfg: RunConfig, given: Dict[str, set]) -> List[str]:
    p: List[str] = []
    f, w, r, o, e = cfg.field, cfg.walk, cfg.regen, cfg.outputs, cfg.experiment
    notes = cfg.notices
    if "K" not in given["field"]:
        notes.append(f"K not set: default K = {f['K']} applied")
    if f["slowly_varying"] not in ("constant", "log_power", "bounded"):
        p.append(f"[field] slowly_varying: unknown law {f['slowly_varying']!r}")
    heavy = f["slowly_varying"] != "bounded"
    if heavy and not (0 < f["gamma"] < 1):
        p.append("[field] gamma must lie in (0, 1)")
    if heavy and not f["x_min"] > 0:
        p.append("[field] x_min must be positive")
    if not heavy and not (0 < f["lo"] <= f["hi"]):
        p.append("[field] bounded law needs 0 < lo <= hi")
    if f["dimension"] < 2:
        p.append("[field] dimension must be at least 2")
    if not f["K"] >= 1:
        p.append("[field] K must be >= 1")
    if not f["bias_lambda"] > 0:
        p.append("[field] bias_lambda must be positive")
    dvec = f["bias_direction"]
    if dvec is not None:
        arr = np.asarray(dvec, dtype=float)
        if arr.shape != (f["dimension"],):
            p.append("[field] bias_direction must have one entry per dimension")
        else:
            nrm = float(np.linalg.norm(arr))
            if nrm == 0:
                p.append("[field] bias_direction must be non-zero")
            else:
                if abs(nrm - 1.0) > 1e-12:
                    notes.append(f"bias_direction normalized from length {nrm!r}")
                    f["bias_direction"] = (arr / nrm).tolist()
                u = np.asarray(f["bias_direction"])
                if np.any(u < -1e-15) or np.any(np.diff(u) > 1e-15):
                    p.append("[field] bias_direction must satisfy e_1.l >= ... >= e_d.l >= 0")
    if w["steps"] is None or w["steps"] < 1:
        p.append("[walk] steps must be >= 1")
    if w["replicas"] is None or w["replicas"] < 1:
        p.append("[walk] replicas must be >= 1")
    if w["replica_offset"] is None or w["replica_offset"] < 0:
        p.append("[walk] replica_offset must be >= 0")
    if w["max_blocks"] is None or w["max_blocks"] < 0:
        p.append("[walk] max_blocks must be >= 0")
    if w["skip_threshold"] is not None and not w["skip_threshold"] > f["K"]:
        p.append("[walk] skip_threshold must exceed K")
    if w["checkpoints"] is not None and any(c < 0 for c in w["checkpoints"]):
        p.append("[walk] checkpoints must be non-negative")
    if not r["n_threshold"] > f["K"]:
        p.append("[regen] n_threshold must exceed K")
    delta = r["delta"]
    if not (0 < delta < 1):
        p.append("[regen] delta must lie in (0, 1)")
    elif heavy and not delta < 1.0 / (f["gamma"] + 3.0):
        msg = (f"delta = {delta!r} violates delta < 1/(gamma + 3) = {1.0 / (f['gamma'] + 3.0)!r}"
               f" for gamma = {f['gamma']!r}")
        if "delta" in given["regen"]:
            p.append("[regen] " + msg)
        else:
            notes.append("default " + msg + "; kept because it only enters the trap classification")
    if r["alpha"] is not None and not r["alpha"] > 0:
        p.append("[regen] alpha must be positive")
    if r["margin"] is not None and r["margin"] < 1:
        p.append("[regen] margin must be >= 1")
    bad_fmt = [x for x in o["formats"] if x not in FORMATS]
    if bad_fmt or not o["formats"]:
        p.append(f"[outputs] formats must be a non-empty subset of {FORMATS}")
    if e["kind"] not in EXPERIMENTS:
        p.append(f"[experiment] kind must be one of {EXPERIMENTS}")
    if e["selfsim_n2"] < 4 * e["selfsim_n1"]:
        p.append("[experiment] selfsim_n2 must be >= 4 selfsim_n1")
    if e["selfsim_replicas"] < 20:
        p.append("[experiment] selfsim_replicas must be >= 20")
    return p


def validate_config(path) -> RunConfig:
    """Parse and cross-check a config file; raises ConfigError listing every problem."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"config file {str(path)!r} does not exist"])
    return parse_config_text(path.read_text())


def config_from_dict(d: dict) -> RunConfig:
    """Rebuild a config from its resolved dictionary (as stored in a manifest)."""
    lines = []
    for sec, kv in d.items():
        lines.append(f"[{sec}]")
        for k, v in kv.items():
            # keys at their default stay implicit, so defaults keep their default-only treatment
            if sec in SCHEMA and k in SCHEMA[sec] and _fmt(v) == _fmt(SCHEMA[sec][k][1]):
                continue
            lines.append(f"{k} = {_fmt(v)}")
    cfg = parse_config_text("\n".join(lines))
    cfg.notices.clear()
    return cfg


def default_checkpoints(steps: int) -> List[int]:
    """1, 2, 5 times powers of ten from 10 up to ``steps``, plus ``steps`` itself."""
    out = []
    k = 1
    while 10 ** k <= steps:
        for m in (1, 2, 5):
            if m * 10 ** k <= steps:
                out.append(m * 10 ** k)
        k += 1
    if not out or out[-1] != steps:
        out.append(int(steps))
    return out
