"""INI run configuration: parsing, defaults and validation.

Every key is listed in ``SCHEMA`` with its type and default; unknown sections
or keys are rejected.  Validation happens before any computation and reports
the offending key together with its line in the file.
"""
from __future__ import annotations

import configparser
import copy
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError

class _Required:
    """Marker for keys without a default; survives deep copies."""

    def __deepcopy__(self, memo):
        return self

    def __repr__(self):
        return "<required>"


REQUIRED = _Required()


def _vector(text):
    return [float(v) for v in re.split(r"[,\s]+", text.strip()) if v]


def _matrix(text):
    rows = [r for r in text.split(";") if r.strip()]
    mat = [_vector(r) for r in rows]
    if len({len(r) for r in mat}) > 1:
        raise ValueError("matrix rows have different lengths")
    return mat


def _int_list(text):
    return [int(v) for v in re.split(r"[,\s]+", text.strip()) if v]


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _u64(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return v


# section -> key -> (parser, default)
SCHEMA = {
    "problem": {
        "name": (str, "linear2d"),
        "y_tar": (_vector, None),
        "x0": (_vector, None),
        "A0": (_matrix, None),
        "A1": (_matrix, None),
        "B0": (_matrix, None),
        "B1": (_matrix, None),
    },
    "measure": {
        "kind": (str, "quantile"),
        "N": (int, 20),
        "seed": (_u64, 2023),
        "thetas": (_vector, None),
        "weights": (_vector, None),
    },
    "discretization": {
        "M": (int, 32),
        "S": (int, 4),
    },
    "control": {
        "value": (_vector, None),
        "file": (str, None),
    },
    "optimize": {
        "beta": (float, REQUIRED),
        "method": (str, "grad"),
        "gamma0": (float, 1.0),
        "tau": (float, 0.5),
        "c": (float, 1e-4),
        "max_iter": (int, 1500),
        "grad_tol": (float, 0.0),
        "correction": (_bool, True),
        "n_test": (int, 20),
        "test_seed": (_u64, None),
    },
    "sweep": {
        "N_list": (_int_list, [10, 30, 100, 300]),
        "reference_N": (int, None),
        "solver": (str, "oracle"),
        "seeds": (int, 5),
    },
    "check": {
        "fd_epsilon": (float, 1e-6),
        "grad_threshold": (float, 1e-4),
        "residual_threshold": (float, 1e-3),
        "oracle_rel_tol": (float, 0.01),
        "control_seed": (_u64, 0),
    },
    "output": {
        "dir": (str, "out"),
        "full_grid": (_bool, False),
    },
}

#: keys that do not influence the content of any output file
NON_COMPUTATIONAL = (("output", "dir"),)

PROBLEMS = ("linear2d", "generic-lti", "logistic1d")
MEASURE_KINDS = ("empirical", "quantile", "explicit")
METHODS = ("grad", "pmp")
SWEEP_SOLVERS = ("oracle", "grad", "pmp")


def _line_index(text):
    """Map (section, key) and section names to 1-based line numbers."""
    where = {}
    section = None
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            where.setdefault((section, None), i)
            continue
        m = re.match(r"([^=:]+)[=:]", line)
        if m and section is not None:
            where.setdefault((section, m.group(1).strip()), i)
    return where


@dataclass
class RunConfig:
    """Fully resolved configuration: ``values[section][key]``."""

    values: dict
    lines: dict = field(default_factory=dict, repr=False)
    source: str | None = None
    #: sections that appeared in the input (defaults fill the rest)
    present: set = field(default_factory=set, repr=False)

    def __getitem__(self, section):
        return self.values[section]

    def get(self, section, key):
        return self.values[section][key]

    def line_of(self, section, key=None):
        return self.lines.get((section, key))

    def error(self, section, key, message):
        return ConfigError(f"[{section}] {key}: {message}", key=key, line=self.line_of(section, key))

    def computational(self) -> dict:
        out = copy.deepcopy(self.values)
        for section, key in NON_COMPUTATIONAL:
            out[section].pop(key, None)
        return out

    def header(self) -> str:
        """One-line record of every value that affects the results."""
        return "config " + json.dumps(self.computational(), sort_keys=True, separators=(",", ":"))

    def with_overrides(self, **overrides) -> "RunConfig":
        new = RunConfig(copy.deepcopy(self.values), dict(self.lines), self.source, set(self.present))
        for dotted, value in overrides.items():
            section, key = dotted.split(".")
            new.values[section][key] = value
            new.present.add(section)
        return new


def _parse(text: str, source=None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#",))
    parser.optionxform = str
    lines = _line_index(text)
    try:
        parser.read_string(text, source=source or "<config>")
    except configparser.Error as err:
        line = getattr(err, "lineno", None)
        raise ConfigError(f"cannot parse configuration: {err.message if hasattr(err, 'message') else err}",
                          line=line) from err
    values = {s: {k: copy.deepcopy(d) for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
    present = set()
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", key=section, line=lines.get((section, None)))
        present.add(section)
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]", key=key,
                                  line=lines.get((section, key)))
            conv = SCHEMA[section][key][0]
            try:
                values[section][key] = conv(raw)
            except (TypeError, ValueError) as err:
                raise ConfigError(f"[{section}] {key}: invalid value {raw!r} ({err})", key=key,
                                  line=lines.get((section, key))) from err
    return RunConfig(values, lines, source, present)


def load_config(path=None, text: str | None = None) -> RunConfig:
    """Read a configuration; with neither argument, return the defaults.

    ``path`` may also be an output file of an earlier run, in which case the
    configuration recorded on its first line is used.
    """
    source = None
    if path is not None:
        text = Path(path).read_text()
        source = str(path)
        first = text.split("\n", 1)[0]
        if first.startswith("# config "):
            return config_from_header(first)
    return _parse(text or "", source)


def config_from_header(line: str) -> RunConfig:
    """Rebuild a configuration from the ``# config {...}`` line written atop output files."""
    line = line.lstrip("#").strip()
    if not line.startswith("config "):
        raise ConfigError("not a configuration header line")
    data = json.loads(line[len("config "):])
    values = {s: {k: copy.deepcopy(d) for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
    for section, keys in data.items():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, v in keys.items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            values[section][key] = v
    return RunConfig(values, {}, None, set())


def validate(cfg: RunConfig, command: str) -> RunConfig:
    """Check ranges and cross-key consistency for ``command``; raises ConfigError."""
    v = cfg.values
    p = v["problem"]
    if p["name"] not in PROBLEMS:
        raise cfg.error("problem", "name", f"unknown problem {p['name']!r} (choose from {', '.join(PROBLEMS)})")
    if p["name"] == "generic-lti":
        for key in ("A0", "A1", "B0"):
            if p[key] is None:
                raise cfg.error("problem", key, "required for generic-lti")
        n = len(p["A0"])
        for key in ("A0", "A1"):
            if np.shape(p[key]) != (n, n):
                raise cfg.error("problem", key, f"must be {n}x{n}")
        if len(p["B0"]) != n:
            raise cfg.error("problem", "B0", f"must have {n} rows")
        if p["B1"] is not None and np.shape(p["B1"]) != np.shape(p["B0"]):
            raise cfg.error("problem", "B1", "must have the shape of B0")
    else:
        for key in ("A0", "A1", "B0", "B1"):
            if p[key] is not None:
                raise cfg.error("problem", key, f"only used by generic-lti, not {p['name']}")
    n_state = {"linear2d": 2, "logistic1d": 1}.get(p["name"], len(p["A0"] or []))
    for key in ("y_tar", "x0"):
        if p[key] is not None and len(p[key]) != n_state:
            raise cfg.error("problem", key, f"needs {n_state} components")

    m = v["measure"]
    if m["kind"] not in MEASURE_KINDS:
        raise cfg.error("measure", "kind", f"must be one of {', '.join(MEASURE_KINDS)}")
    if m["kind"] == "explicit":
        if not m["thetas"]:
            raise cfg.error("measure", "thetas", "required for an explicit measure")
        if m["weights"] is not None:
            w = np.asarray(m["weights"])
            if len(w) != len(m["thetas"]):
                raise cfg.error("measure", "weights", "needs one weight per theta")
            if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
                raise cfg.error("measure", "weights", "weights must be positive and sum to 1")
    elif m["N"] < 1:
        raise cfg.error("measure", "N", "must be >= 1")

    d = v["discretization"]
    for key in ("M", "S"):
        if d[key] < 1:
            raise cfg.error("discretization", key, "must be >= 1")

    c = v["control"]
    k_ctrl = {"linear2d": 2, "logistic1d": 1}.get(p["name"], len((p["B0"] or [[0]])[0]))
    if c["value"] is not None and len(c["value"]) != k_ctrl:
        raise cfg.error("control", "value", f"needs {k_ctrl} components")
    if c["value"] is not None and c["file"] is not None:
        raise cfg.error("control", "file", "give either value or file, not both")

    o = v["optimize"]
    needs_beta = command in ("optimize", "oracle", "sweep-n", "check-grad", "residual", "check")
    if o["beta"] is REQUIRED or o["beta"] is None:
        if needs_beta or "optimize" in cfg.present:
            raise ConfigError("[optimize] missing required key 'beta'", key="beta",
                              line=cfg.line_of("optimize", None))
        o["beta"] = None
    elif not o["beta"] > 0:
        raise cfg.error("optimize", "beta", f"must be > 0, got {o['beta']}")
    if o["method"] not in METHODS:
        raise cfg.error("optimize", "method", f"must be one of {', '.join(METHODS)}")
    if not o["gamma0"] > 0:
        raise cfg.error("optimize", "gamma0", "must be > 0")
    for key in ("tau", "c"):
        if not 0 < o[key] < 1:
            raise cfg.error("optimize", key, "must lie in (0, 1)")
    if o["max_iter"] < 0:
        raise cfg.error("optimize", "max_iter", "must be >= 0")
    if not o["grad_tol"] >= 0:
        raise cfg.error("optimize", "grad_tol", "must be >= 0")
    if o["n_test"] < 0:
        raise cfg.error("optimize", "n_test", "must be >= 0")

    s = v["sweep"]
    if not s["N_list"] or min(s["N_list"]) < 1:
        raise cfg.error("sweep", "N_list", "needs at least one N >= 1")
    if s["reference_N"] is not None and s["reference_N"] < 1:
        raise cfg.error("sweep", "reference_N", "must be >= 1")
    if s["solver"] not in SWEEP_SOLVERS:
        raise cfg.error("sweep", "solver", f"must be one of {', '.join(SWEEP_SOLVERS)}")
    if s["seeds"] < 1:
        raise cfg.error("sweep", "seeds", "must be >= 1")
    if command == "sweep-n" and m["kind"] == "explicit":
        raise cfg.error("measure", "kind", "sweep-n needs an empirical or quantile measure")
    if command in ("oracle",) and p["name"] == "logistic1d":
        raise cfg.error("problem", "name", "the oracle needs a linear problem")
    if command == "sweep-n" and s["solver"] == "oracle" and p["name"] == "logistic1d":
        raise cfg.error("sweep", "solver", "the oracle needs a linear problem")

    ch = v["check"]
    for key in ("fd_epsilon", "grad_threshold", "residual_threshold", "oracle_rel_tol"):
        if not ch[key] > 0:
            raise cfg.error("check", key, "must be > 0")

    if o["test_seed"] is None:
        o["test_seed"] = (m["seed"] + 1) % 2**64
    return cfg
