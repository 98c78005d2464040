"""Experiment configuration: YAML text with nested blocks, defaults and validation."""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import yaml

__all__ = [
    "ConfigError",
    "DEFAULTS",
    "parse_config",
    "load_config",
    "dump_config",
    "apply_override",
    "config_hash",
    "validate",
]


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending dotted key."""

    def __init__(self, field: str, message: str, line: int | None = None):
        self.field = field
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{field}: {message}{where}")


DEFAULTS = {
    "grid": {
        "kind": "rectangle",
        "a1": 1.0,
        "a2": 1.0,
        "r0": 0.5,
        "gamma0": ["full"],
        "offsets": [0.8, 0.7, 0.6, 0.05],
        "n_prime": 12,
        "n3": 48,
        "L": 2.5,
        "pad": None,
    },
    "potential": {
        "q0": 0.0,
        "M": 10.0,
        "class": "Q",
        "q1": None,
        "q2": {"center": [0.0, 0.0, 0.0], "widths": [0.3, 0.3, 0.6], "amplitude": 1.0},
    },
    "dn": {"basis_size": None, "scheme": "one_sided"},
    "cgo": {
        "rho": [2.0],
        "xi": [[1.0, 0.5, 1.0]],
        "method": "fixed_point",
        "chi": "standard",
    },
    "reconstruct": {"R": 3.0, "rho": 2.0, "eps": 0.05},
    "noise": {"deltas": [0.0, 1e-4, 1e-2], "seed": 0},
    "schedule": {
        "kind": "desk",
        "c": 1.25,
        "p": 1.0,
        "C_eff": 1.0,
        "rho_min": 1.0,
        "rho_max": 2.0,
        "rho0": 1.0,
        "factor": 2.0,
    },
    "carleman": {
        "r0": 0.5,
        "offsets": [0.5, 0.4, 0.3, 0.1],
        "n_prime": 16,
        "n3": 32,
        "L": 1.0,
        "beta": 2.0,
        "lambdas": [1.0, 2.0, 4.0],
        "n_fields": 4,
    },
    "partial": {"tau": None, "rho": 2.0, "xi": [[1.0, 0.5, 1.0]]},
    "output": {"dir": "out"},
}

_CHOICES = {
    "grid.kind": ("rectangle", "annulus"),
    "potential.class": ("Q", "Qprime"),
    "dn.scheme": ("one_sided", "link"),
    "cgo.method": ("fixed_point", "direct"),
    "cgo.chi": ("standard",),
    "schedule.kind": ("desk", "paper_literal"),
}
_POSITIVE = {"grid.a1", "grid.a2", "grid.L", "potential.M", "reconstruct.R", "reconstruct.rho",
             "reconstruct.eps", "schedule.c", "schedule.p", "schedule.rho_min",
             "schedule.rho_max", "schedule.rho0", "schedule.factor", "carleman.L",
             "carleman.beta", "partial.rho"}
_NONNEG = {"schedule.C_eff"}
_INTS = {"grid.n_prime": 8, "grid.n3": 16, "carleman.n_prime": 8, "carleman.n3": 16,
         "carleman.n_fields": 1}


def _merge(base, over, prefix, lines):
    out = copy.deepcopy(base)
    for k, v in over.items():
        key = f"{prefix}{k}"
        if k not in base:
            raise ConfigError(key, "unknown key", lines.get(key))
        if isinstance(base[k], dict) and base[k] and k not in ("q1", "q2"):
            if not isinstance(v, dict):
                raise ConfigError(key, "expected a mapping", lines.get(key))
            out[k] = _merge(base[k], v, key + ".", lines)
        else:
            out[k] = v
    return out


def _line_map(text: str) -> dict:
    lines = {}
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return lines

    def walk(n, prefix):
        if isinstance(n, yaml.MappingNode):
            for kn, vn in n.value:
                key = f"{prefix}{kn.value}"
                lines[key] = kn.start_mark.line + 1
                walk(vn, key + ".")

    if node is not None:
        walk(node, "")
    return lines


def _num(cfg, path, lines):
    blk, key = path.split(".")
    v = cfg[blk][key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {v!r}", lines.get(path))
    return float(v)


def _bump(spec, path, lines):
    if spec is None:
        return
    if not isinstance(spec, dict) or set(spec) - {"center", "widths", "amplitude"}:
        raise ConfigError(path, "bump needs keys center, widths, amplitude", lines.get(path))
    c = spec.get("center")
    w = spec.get("widths")
    if not (isinstance(c, list) and len(c) == 3):
        raise ConfigError(path + ".center", "expected 3 numbers", lines.get(path + ".center"))
    if isinstance(w, (int, float)):
        w = [w] * 3
    if not (isinstance(w, list) and len(w) == 3 and all(x > 0 for x in w)):
        raise ConfigError(path + ".widths", "expected 3 positive numbers",
                          lines.get(path + ".widths"))
    if not isinstance(spec.get("amplitude"), (int, float)):
        raise ConfigError(path + ".amplitude", "expected a number", lines.get(path + ".amplitude"))


def validate(cfg: dict, lines: dict | None = None) -> dict:
    """Check types and ranges; raise :class:`ConfigError` naming the field."""
    lines = lines or {}
    for path, choices in _CHOICES.items():
        blk, key = path.split(".")
        if cfg[blk][key] not in choices:
            raise ConfigError(path, f"must be one of {choices}", lines.get(path))
    for path in _POSITIVE:
        if path == "schedule.rho_max" and cfg["schedule"]["rho_max"] is None:
            continue
        if _num(cfg, path, lines) <= 0:
            raise ConfigError(path, "must be positive", lines.get(path))
    for path in _NONNEG:
        if _num(cfg, path, lines) < 0:
            raise ConfigError(path, "must be non-negative", lines.get(path))
    for path, lo in _INTS.items():
        blk, key = path.split(".")
        v = cfg[blk][key]
        if isinstance(v, bool) or not isinstance(v, int) or v < lo:
            raise ConfigError(path, f"expected an integer >= {lo}", lines.get(path))
    r0 = _num(cfg, "grid.r0", lines)
    if not 0 < r0 < 1:
        raise ConfigError("grid.r0", "must lie in (0, 1)", lines.get("grid.r0"))
    for path in ("grid.offsets", "carleman.offsets"):
        blk, key = path.split(".")
        d = cfg[blk][key]
        ok = (isinstance(d, list) and len(d) == 4 and all(isinstance(x, (int, float)) for x in d)
              and all(x > 0 for x in d) and all(a > b for a, b in zip(d, d[1:])))
        if not ok:
            raise ConfigError(path, "expected four strictly decreasing positive numbers",
                              lines.get(path))
    if not isinstance(cfg["grid"]["gamma0"], list) or not cfg["grid"]["gamma0"]:
        raise ConfigError("grid.gamma0", "expected a non-empty list", lines.get("grid.gamma0"))
    if not isinstance(cfg["potential"]["q0"], (int, float)):
        raise ConfigError("potential.q0", "expected a constant", lines.get("potential.q0"))
    _bump(cfg["potential"]["q1"], "potential.q1", lines)
    _bump(cfg["potential"]["q2"], "potential.q2", lines)
    rl = cfg["cgo"]["rho"]
    if not (isinstance(rl, list) and rl and all(isinstance(x, (int, float)) and x > 0 for x in rl)):
        raise ConfigError("cgo.rho", "expected a non-empty list of positive numbers",
                          lines.get("cgo.rho"))
    for path in ("cgo.xi", "partial.xi"):
        blk, key = path.split(".")
        xs = cfg[blk][key]
        if not (isinstance(xs, list) and xs and all(isinstance(x, list) and len(x) == 3 for x in xs)):
            raise ConfigError(path, "expected a list of 3-vectors", lines.get(path))
    ds = cfg["noise"]["deltas"]
    if not (isinstance(ds, list) and ds and all(isinstance(x, (int, float)) and x >= 0 for x in ds)):
        raise ConfigError("noise.deltas", "expected non-negative numbers", lines.get("noise.deltas"))
    if not isinstance(cfg["noise"]["seed"], int):
        raise ConfigError("noise.seed", "expected an integer", lines.get("noise.seed"))
    lam = cfg["carleman"]["lambdas"]
    if not (isinstance(lam, list) and lam and all(isinstance(x, (int, float)) and x > 0 for x in lam)):
        raise ConfigError("carleman.lambdas", "expected positive numbers",
                          lines.get("carleman.lambdas"))
    cr0 = _num(cfg, "carleman.r0", lines)
    if not 0 < cr0 < 1:
        raise ConfigError("carleman.r0", "must lie in (0, 1)", lines.get("carleman.r0"))
    bs = cfg["dn"]["basis_size"]
    if bs is not None and not (isinstance(bs, list) and len(bs) == 2
                               and all(isinstance(x, int) and x > 0 for x in bs)):
        raise ConfigError("dn.basis_size", "expected null or two positive integers",
                          lines.get("dn.basis_size"))
    tau = cfg["partial"]["tau"]
    if tau is not None and (not isinstance(tau, (int, float)) or tau <= 0):
        raise ConfigError("partial.tau", "expected null or a positive number",
                          lines.get("partial.tau"))
    return cfg


def parse_config(text: str) -> dict:
    """Parse YAML text, merge onto :data:`DEFAULTS` and validate."""
    try:
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError("<document>", f"YAML syntax error: {exc}",
                          None if mark is None else mark.line + 1) from exc
    if not isinstance(raw, dict):
        raise ConfigError("<document>", "top level must be a mapping")
    lines = _line_map(text)
    return validate(_merge(DEFAULTS, raw, "", lines), lines)


def load_config(path) -> dict:
    return parse_config(Path(path).read_text())


def dump_config(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=True, default_flow_style=None)


def apply_override(cfg: dict, item: str) -> dict:
    """Apply ``dotted.key=value`` (value parsed as YAML) and revalidate."""
    if "=" not in item:
        raise ConfigError(item, "override must look like key=value")
    key, val = item.split("=", 1)
    parts = key.strip().split(".")
    out = copy.deepcopy(cfg)
    node = out
    for p in parts[:-1]:
        if not isinstance(node, dict) or p not in node:
            raise ConfigError(key, "unknown key")
        node = node[p]
    if not isinstance(node, dict) or parts[-1] not in node:
        raise ConfigError(key, "unknown key")
    node[parts[-1]] = yaml.safe_load(val)
    return validate(out)


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()
