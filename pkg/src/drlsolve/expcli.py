"""Command-line front end: configs, runs, oracle tables, comparisons and metrics.

Subcommands::

    drlsolve solve   --config burgers --profile desk --out runs/burgers
    drlsolve oracle  --config burgers --out runs/burgers/oracle.csv
    drlsolve compare runs/burgers/solution.csv runs/burgers/oracle.csv
    drlsolve metrics runs/burgers

Configs are INI files; ``--config`` takes a path or the name of a bundled
config (``burgers`` resolves to ``burgers_desk`` under the default profile).
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import math
import sys
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import equations as E
from . import oracles as O
from . import residuals as R
from .marcher import (ChainedSolution, MarchConfig, Marcher, NonFiniteLossError, StepRecord,
                      deterministic_threads)
from .optim import DecaySchedule
from .plots import heatmap_svg, line_svg
from .policy import load_checkpoint, save_checkpoint

SCHEMA_VERSION = 1
EXIT_OK = 0
EXIT_NOT_CONVERGED = 1
EXIT_CONFIG = 2
EXIT_ORACLE = 3
EXIT_NUMERIC = 4
EXIT_REJECTED = 5


class ConfigError(ValueError):
    """Invalid config value; names the section, key and (when known) the line."""

    def __init__(self, section, key, message, line=None, source=None):
        where = f"[{section}] {key}" if key else f"[{section}]"
        if line is not None:
            where = f"{source or '<config>'}:{line}: {where}"
        super().__init__(f"{where}: {message}")
        self.section = section
        self.key = key
        self.line = line


class CompareError(ValueError):
    pass


# --------------------------------------------------------------------------- value codecs

def _float(s):
    return float(s)


def _int(s):
    v = float(s)
    if v != int(v):
        raise ValueError("expected an integer")
    return int(v)


def _bool(s):
    t = str(s).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true or false")


def _floats(s):
    s = str(s).strip()
    return tuple(float(v) for v in s.split(",") if v.strip()) if s else ()


def _ints(s):
    return tuple(_int(v) for v in str(s).split(",") if v.strip())


def _str(s):
    return str(s).strip()


def _encode(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ", ".join(_encode(x) for x in v)
    return str(v)


REQUIRED = object()

SECTIONS = {
    "experiment": {
        "name": (_str, REQUIRED),
        "profile": (_str, "desk"),
        "seed": (_int, 0),
        "output_dir": (_str, ""),
        "deterministic": (_bool, False),
    },
    "network": {
        "hidden_widths": (_ints, (32, 32, 32)),
        "sigma_mode": (_str, "fixed"),
        "sigma0": (_float, 0.1),
    },
    "march": {
        "dt_seconds": (_float, REQUIRED),
        "n_steps": (_int, REQUIRED),
        "n_current": (_int, 100),
        "prev_per_step": (_int, 0),
        "prev_cap": (_int, 20000),
        "n_boundary": (_int, 0),
        "n_initial": (_int, 0),
        "threshold": (_float, 1e-4),
        "max_iterations": (_int, 50000),
        "likelihood_weighting": (_bool, True),
        "reset_adam": (_bool, False),
        "resample": (_bool, False),
        "fail_fast": (_bool, False),
    },
    "learning_rate": {
        "initial": (_float, 1e-3),
        "decay_rate": (_float, 1.0),
        "decay_interval_iterations": (_int, 1),
        "floor": (_float, 0.0),
    },
    "evaluation": {
        "n_t": (_int, 101),
        "n_x": (_int, 101),
        "n_y": (_int, 20),
        "snapshot_times_seconds": (_floats, ()),
    },
}

EQUATION_PARAMS = {
    "van_der_pol": {"alpha": (_float, 1.0), "beta": (_float, 1.0), "omega": (_float, 1.0),
                    "x0": (_float, 1.0), "y0": (_float, 0.0)},
    "lorenz": {"sigma": (_float, 10.0), "rho": (_float, 15.0), "beta": (_float, 8.0 / 3.0),
               "init": (_floats, (0.0, 2.0, 0.0))},
    "burgers": {"nu": (_float, 0.1)},
    "schrodinger": {"match_slope": (_bool, True)},
    "couette": {"rho": (_float, 1.0), "mu": (_float, 0.01),
                "wall_lambda_initial": (_float, 50.0), "wall_lambda_rate": (_float, 0.995),
                "wall_lambda_interval_iterations": (_int, 15),
                "wall_lambda_floor": (_float, 1.0), "port_lambda": (_float, 1.0)},
    "equation_of_motion": {
        "excitation": (_str, "synthetic"),
        "excitation_seed": (_int, 0),
        "excitation_duration_seconds": (_float, 10.0),
        "excitation_peak_ms2": (_float, 3.0),
        "masses": (_floats, (1.0, 1.0, 1.0)),
        "damping": (_floats, (2.0, 2.0, 2.0)),
        "stiffness": (_floats, (100.0, 100.0, 100.0)),
        "hysteresis_alpha": (_float, 0.1),
        "hysteresis_A": (_float, 1.0),
        "hysteresis_beta": (_float, 0.5),
        "hysteresis_gamma": (_float, 0.05),
        "hysteresis_n": (_float, 1.0),
    },
}

ORACLE_PARAMS = {
    "none": {},
    "rk45": {"rtol": (_float, 1e-10), "atol": (_float, 1e-12)},
    "bouc_wen": {"rtol": (_float, 1e-9), "atol": (_float, 1e-12)},
    "cole": {"n_terms": (_int, 50), "scaled": (_bool, True)},
    "burgers_fd": {"n_grid": (_int, 801), "rtol": (_float, 1e-8), "atol": (_float, 1e-10)},
    "schrodinger_mol": {"n_grid": (_int, 512), "order": (_int, 6), "rtol": (_float, 1e-8),
                        "atol": (_float, 1e-10)},
    "couette_analytic": {},
}

ORACLES_FOR = {
    "van_der_pol": ("rk45", "none"),
    "lorenz": ("rk45", "none"),
    "equation_of_motion": ("bouc_wen", "none"),
    "burgers": ("cole", "burgers_fd", "none"),
    "schrodinger": ("schrodinger_mol", "none"),
    "couette": ("couette_analytic", "none"),
}

SECTION_ORDER = ("experiment", "equation", "network", "march", "learning_rate", "evaluation",
                 "oracle")


def _locate(text, section, key):
    """1-based line of ``key`` inside ``[section]`` (or of the header when key is None)."""
    if not text:
        return None
    current = None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if key is None and current == section:
                return n
            continue
        if current == section and key is not None:
            name = line.split("=", 1)[0].split(":", 1)[0].strip()
            if name == key:
                return n
    return None


def _where(text, source, overridden, section, key):
    if (section, key) in overridden:
        return None, None
    return _locate(text, section, key), source


def _parse_section(parser, section, schema, text, source, skip=(), overridden=frozenset()):
    def fail(key, msg):
        if (section, key) in overridden:
            msg += " (set on the command line)"
        raise ConfigError(section, key, msg, *_where(text, source, overridden, section, key))

    raw = dict(parser.items(section)) if parser.has_section(section) else {}
    out = {}
    for key, (conv, default) in schema.items():
        if key in raw:
            try:
                out[key] = conv(raw.pop(key))
            except ValueError as exc:
                fail(key, f"cannot parse value ({exc})")
        elif default is REQUIRED:
            fail(key, "missing required field")
        else:
            out[key] = default
    for key in skip:
        raw.pop(key, None)
    return out, raw, fail


@dataclass
class ExperimentConfig:
    """Typed contents of one experiment config file, grouped by section."""

    experiment: dict
    equation: dict
    network: dict
    march: dict
    learning_rate: dict
    evaluation: dict
    oracle: dict = field(default_factory=lambda: {"name": "none"})

    # --- parsing -----------------------------------------------------------
    @classmethod
    def from_ini(cls, text: str, source: str | None = None, overrides=()) -> "ExperimentConfig":
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            parser.read_string(text, source=source or "<config>")
        except configparser.Error as exc:
            raise ConfigError("file", None, str(exc).splitlines()[0]) from None
        overridden = set()
        for item in overrides:
            key, sep, value = item.partition("=")
            sec, dot, name = key.partition(".")
            if not sep or not dot:
                raise ConfigError("override", item, "expected section.key=value")
            if not parser.has_section(sec):
                parser.add_section(sec)
            parser.set(sec, name.strip(), value.strip())
            overridden.add((sec, name.strip()))
        for sec in parser.sections():
            if sec not in SECTION_ORDER:
                raise ConfigError(sec, None, "unknown section", _locate(text, sec, None), source)
        sections = {}
        for sec in ("experiment", "network", "learning_rate", "evaluation"):
            vals, rest, fail = _parse_section(parser, sec, SECTIONS[sec], text, source,
                                             overridden=overridden)
            for key in rest:
                fail(key, "unknown field")
            sections[sec] = vals

        march, rest, fail = _parse_section(parser, "march", SECTIONS["march"], text, source,
                                             overridden=overridden)
        for key, value in rest.items():
            if key.startswith("threshold_"):
                try:
                    march[key] = float(value)
                except ValueError as exc:
                    fail(key, f"cannot parse value ({exc})")
            else:
                fail(key, "unknown field")
        sections["march"] = march

        eq_raw = dict(parser.items("equation")) if parser.has_section("equation") else {}
        eq_name = eq_raw.get("name", "").strip()
        if eq_name not in EQUATION_PARAMS:
            raise ConfigError("equation", "name",
                              f"unknown equation {eq_name!r}; registered: "
                              f"{', '.join(sorted(EQUATION_PARAMS))}",
                              _locate(text, "equation", "name"), source)
        eq, rest, fail = _parse_section(parser, "equation", EQUATION_PARAMS[eq_name], text,
                                        source, skip=("name",), overridden=overridden)
        for key in rest:
            fail(key, f"unknown field for {eq_name}")
        sections["equation"] = {"name": eq_name, **eq}

        or_raw = dict(parser.items("oracle")) if parser.has_section("oracle") else {}
        or_name = or_raw.get("name", "none").strip()
        if or_name not in ORACLE_PARAMS:
            raise ConfigError("oracle", "name", f"unknown oracle {or_name!r}",
                              _locate(text, "oracle", "name"), source)
        orc, rest, fail = _parse_section(parser, "oracle", ORACLE_PARAMS[or_name], text, source,
                                         skip=("name",), overridden=overridden)
        for key in rest:
            fail(key, f"unknown field for oracle {or_name}")
        sections["oracle"] = {"name": or_name, **orc}

        cfg = cls(**sections)
        cfg.validate(text, source,
                                             overridden=overridden)
        return cfg

    @classmethod
    def from_file(cls, path, overrides=()) -> "ExperimentConfig":
        path = Path(path)
        return cls.from_ini(path.read_text(), source=str(path), overrides=overrides)

    def validate(self, text=None, source=None, overridden=frozenset()):
        def check(section, key, ok, msg):
            if not ok:
                if (section, key) in overridden:
                    msg += " (set on the command line)"
                raise ConfigError(section, key, msg,
                                  *_where(text, source, overridden, section, key))

        ex, net, m, lr, ev = (self.experiment, self.network, self.march, self.learning_rate,
                              self.evaluation)
        check("experiment", "profile", ex["profile"] in ("desk", "paper"),
              "must be desk or paper")
        check("experiment", "seed", ex["seed"] >= 0, "must be non-negative")
        check("network", "hidden_widths", len(net["hidden_widths"]) > 0
              and min(net["hidden_widths"]) >= 1, "needs at least one positive width")
        check("network", "sigma_mode", net["sigma_mode"] in ("fixed", "trainable"),
              "must be fixed or trainable")
        check("network", "sigma0", net["sigma0"] > 0, "must be positive")
        check("march", "dt_seconds", m["dt_seconds"] > 0 and math.isfinite(m["dt_seconds"]),
              "must be positive")
        check("march", "n_steps", m["n_steps"] >= 1, "must be at least 1")
        check("march", "n_current", m["n_current"] >= 1, "must be at least 1")
        check("march", "max_iterations", m["max_iterations"] >= 1, "must be at least 1")
        for key in ("prev_per_step", "prev_cap", "n_boundary", "n_initial"):
            check("march", key, m[key] >= 0, "must be non-negative")
        eq_cls = E.REGISTRY[self.equation["name"]]
        for key, value in m.items():
            if key.startswith("threshold"):
                check("march", key, value > 0, "must be positive")
                if key != "threshold":
                    check("march", key, key[len("threshold_"):] in eq_cls.monitors,
                          f"unknown monitor; {self.equation['name']} monitors are "
                          f"{', '.join(eq_cls.monitors)}")
        if self.equation["name"] == "couette":
            check("march", "n_boundary", m["n_boundary"] >= 4, "couette needs boundary points")
        if self.equation["name"] == "schrodinger":
            check("march", "n_boundary", m["n_boundary"] >= 1, "schrodinger needs boundary points")
            check("march", "n_initial", m["n_initial"] >= 1, "schrodinger needs initial points")
        check("learning_rate", "initial", lr["initial"] > 0, "must be positive")
        check("learning_rate", "decay_rate", 0 < lr["decay_rate"] <= 1, "must lie in (0, 1]")
        check("learning_rate", "decay_interval_iterations", lr["decay_interval_iterations"] >= 1,
              "must be at least 1")
        check("learning_rate", "floor", 0 <= lr["floor"] <= lr["initial"],
              "must lie in [0, initial]")
        for key in ("n_t", "n_x", "n_y"):
            check("evaluation", key, ev[key] >= 2, "must be at least 2")
        t_end = self.t_end
        check("evaluation", "snapshot_times_seconds",
              all(0 <= t <= t_end + 1e-12 for t in ev["snapshot_times_seconds"]),
              f"snapshots must lie in [0, {t_end}]")
        check("oracle", "name", self.oracle["name"] in ORACLES_FOR[self.equation["name"]],
              f"oracle {self.oracle['name']!r} does not apply to {self.equation['name']}")
        eqp = self.equation
        for key in ("nu", "mu", "rho", "sigma0"):
            if key in eqp and self.equation["name"] != "lorenz":
                check("equation", key, eqp[key] > 0, "must be positive")
        if self.equation["name"] == "lorenz":
            check("equation", "init", len(eqp["init"]) == 3, "needs three values")
        if self.equation["name"] == "equation_of_motion":
            for key in ("masses", "damping", "stiffness"):
                check("equation", key, len(eqp[key]) == 3, "needs three values")
            if eqp["excitation"] == "synthetic":
                check("equation", "excitation_duration_seconds",
                      eqp["excitation_duration_seconds"] >= t_end,
                      f"excitation must cover the march (t_end = {t_end})")

    # --- serialisation -----------------------------------------------------
    def to_ini(self, include_output=True) -> str:
        buf = io.StringIO()
        for sec in SECTION_ORDER:
            vals = getattr(self, sec)
            buf.write(f"[{sec}]\n")
            for key, value in vals.items():
                if sec == "experiment" and key == "output_dir" and not include_output:
                    continue
                buf.write(f"{key} = {_encode(value)}\n")
            buf.write("\n")
        return buf.getvalue()

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_ini(include_output=False).encode()).hexdigest()

    # --- derived objects ---------------------------------------------------
    @property
    def name(self) -> str:
        return self.experiment["name"]

    @property
    def seed(self) -> int:
        return self.experiment["seed"]

    @property
    def t_end(self) -> float:
        return self.march["dt_seconds"] * self.march["n_steps"]

    def schedule(self) -> DecaySchedule:
        lr = self.learning_rate
        return DecaySchedule(lr["initial"], lr["decay_rate"], lr["decay_interval_iterations"],
                             lr["floor"])

    def march_config(self) -> MarchConfig:
        m = self.march
        thresholds = {k[len("threshold_"):]: v for k, v in m.items()
                      if k.startswith("threshold_")}
        threshold = dict(thresholds, default=m["threshold"]) if thresholds else m["threshold"]
        return MarchConfig(
            dt=m["dt_seconds"], n_steps=m["n_steps"], hidden=self.network["hidden_widths"],
            n_current=m["n_current"], prev_per_step=m["prev_per_step"], prev_cap=m["prev_cap"],
            n_boundary=m["n_boundary"], n_initial=m["n_initial"], threshold=threshold,
            max_iterations=m["max_iterations"], lr=self.schedule(),
            sigma_mode=self.network["sigma_mode"], sigma0=self.network["sigma0"],
            likelihood_weighting=m["likelihood_weighting"], seed=self.seed,
            reset_adam=m["reset_adam"], fail_fast=m["fail_fast"], resample=m["resample"])

    def build_equation(self) -> E.EquationSpec:
        p = dict(self.equation)
        name = p.pop("name")
        if name == "couette":
            wall = DecaySchedule(p["wall_lambda_initial"], p["wall_lambda_rate"],
                                 p["wall_lambda_interval_iterations"], p["wall_lambda_floor"])
            port = DecaySchedule(p["port_lambda"], 1.0, 1, p["port_lambda"])
            return E.Couette(rho=p["rho"], mu=p["mu"], wall_lambda=wall, port_lambda=port)
        if name == "equation_of_motion":
            building = R.ShearBuilding(masses=p["masses"], damping=p["damping"],
                                       stiffness=p["stiffness"], alpha=p["hysteresis_alpha"],
                                       A=p["hysteresis_A"], beta=p["hysteresis_beta"],
                                       gamma=p["hysteresis_gamma"], n=p["hysteresis_n"])
            if p["excitation"] == "synthetic":
                exc = R.synthetic_excitation(duration=p["excitation_duration_seconds"],
                                             peak=p["excitation_peak_ms2"],
                                             seed=p["excitation_seed"])
            elif p["excitation"] == "none":
                exc = None
            else:
                exc = R.read_excitation_csv(p["excitation"])
            return E.EquationOfMotion(building=building, excitation=exc)
        return E.REGISTRY[name](**p)


def bundled_configs() -> list[str]:
    root = resources.files("drlsolve") / "configs"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".ini"))


def load_config(spec, profile=None, overrides=()) -> ExperimentConfig:
    """Load from a path, a bundled name, or a bundled equation name plus profile."""
    path = Path(spec)
    if path.is_file():
        cfg = ExperimentConfig.from_file(path, overrides)
        if profile is not None and cfg.experiment["profile"] != profile:
            raise ConfigError("experiment", "profile",
                              f"config is tagged {cfg.experiment['profile']!r} but "
                              f"--profile {profile} was requested")
        return cfg
    names = bundled_configs()
    name = str(spec)
    if name not in names:
        name = f"{spec}_{profile or 'desk'}"
    if name not in names:
        raise ConfigError("file", None, f"no config file or bundled config named {spec!r} "
                                        f"(bundled: {', '.join(names)})")
    text = (resources.files("drlsolve") / "configs" / f"{name}.ini").read_text()
    return ExperimentConfig.from_ini(text, source=f"<bundled {name}>", overrides=overrides)


# --------------------------------------------------------------------------- grids and tables

@dataclass
class Table:
    """A versioned CSV artifact: comment line with metadata, header, numeric rows."""

    kind: str
    columns: list
    data: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def coords(self) -> list:
        return [c for c in self.meta.get("coords", "").split(",") if c]

    @property
    def components(self) -> list:
        return [c for c in self.meta.get("components", "").split(",") if c]

    def column(self, name) -> np.ndarray:
        return self.data[:, self.columns.index(name)]


def _num(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return format(v, ".17g")


def write_table(path, kind, columns, rows, meta=None):
    meta = dict(meta or {})
    head = " ".join(f"{k}={v}" for k, v in meta.items())
    with open(path, "w", newline="") as fh:
        fh.write(f"# drlsolve:{kind} v{SCHEMA_VERSION} {head}".rstrip() + "\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_num(v) for v in row) + "\n")


class TableWriter:
    """Append-only CSV writer used for logs that grow during a run."""

    def __init__(self, path, kind, columns, meta=None, flush=False):
        self.columns = list(columns)
        self.flush = flush
        write_table(path, kind, self.columns, [], meta)
        self.fh = open(path, "a", newline="")

    def write(self, row):
        self.fh.write(",".join(_num(v) for v in row) + "\n")
        if self.flush:
            self.fh.flush()

    def close(self):
        self.fh.close()


def read_table(path) -> Table:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"{path}: no such file")
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if not first.startswith("# drlsolve:"):
            raise ValueError(f"{path}: missing drlsolve schema line")
        tokens = first[2:].split()
        kind, version = tokens[0].split(":", 1)[1], tokens[1]
        if version != f"v{SCHEMA_VERSION}":
            raise ValueError(f"{path}: unsupported schema version {version}")
        meta = dict(t.split("=", 1) for t in tokens[2:] if "=" in t)
        reader = csv.reader(fh)
        columns = next(reader)
        rows = []
        for row in reader:
            if row:
                rows.append([1.0 if v == "true" else 0.0 if v == "false" else float(v or "nan")
                             for v in row])
    data = np.array(rows, dtype=float).reshape(-1, len(columns))
    return Table(kind, columns, data, meta)


def evaluation_grid(cfg: ExperimentConfig, eq: E.EquationSpec):
    """Coordinate names, stacked points and the per-axis vectors."""
    ev = cfg.evaluation
    if eq.kind == "steady":
        (x0, y0), (x1, y1) = eq.domain(cfg.march_config())
        xs, ys = np.linspace(x0, x1, ev["n_x"]), np.linspace(y0, y1, ev["n_y"])
        X, Y = np.meshgrid(xs, ys)
        return ("x", "y"), np.column_stack([X.ravel(), Y.ravel()]), (xs, ys)
    ts = np.linspace(0.0, cfg.t_end, ev["n_t"])
    ts = np.unique(np.concatenate([ts, np.asarray(ev["snapshot_times_seconds"], dtype=float)]))
    if eq.kind == "ode":
        return ("t",), ts[:, None], (ts,)
    xs = np.linspace(*eq.x_range, ev["n_x"])
    X, T = np.meshgrid(xs, ts)
    return ("x", "t"), np.column_stack([X.ravel(), T.ravel()]), (xs, ts)


def _derived(eq, names, values):
    if eq.name == "schrodinger":
        return list(names) + ["abs"], np.column_stack([values, np.hypot(values[:, 0],
                                                                        values[:, 1])])
    return list(names), values


def oracle_values(cfg: ExperimentConfig, eq: E.EquationSpec, axes):
    """Reference values on the evaluation grid (rows ordered as ``evaluation_grid``)."""
    o = cfg.oracle
    name = o["name"]
    t_span = (0.0, cfg.t_end)
    if name == "rk45":
        (ts,) = axes
        return O.rk45(eq.rhs(), eq.u0, t_span, rtol=o["rtol"], atol=o["atol"], t_eval=ts).y
    if name == "bouc_wen":
        (ts,) = axes
        traj = O.bouc_wen_reference(eq.building, eq.excitation, t_span, t_eval=ts,
                                    rtol=o["rtol"], atol=o["atol"])
        X, Z = traj.y[:, :3], traj.y[:, 6:]
        return np.column_stack([X, X @ eq.building.drift.T, Z])
    if name == "cole":
        xs, ts = axes
        nu = cfg.equation["nu"]
        return np.concatenate([O.cole_series(xs, t, nu, n_terms=o["n_terms"], scaled=o["scaled"])
                               for t in ts])[:, None]
    if name == "burgers_fd":
        xs, ts = axes
        snaps = O.burgers_fd(cfg.equation["nu"], o["n_grid"], t_span, t_eval=ts,
                             rtol=o["rtol"], atol=o["atol"])
        return np.concatenate([np.interp(xs, s.x, s.values["u"]) for s in snaps])[:, None]
    if name == "schrodinger_mol":
        xs, ts = axes
        snaps = O.schrodinger_mol(o["n_grid"], t_span, t_eval=ts, order=o["order"],
                                  rtol=o["rtol"], atol=o["atol"])
        re = np.concatenate([O.periodic_interp(s, xs, "re") for s in snaps])
        im = np.concatenate([O.periodic_interp(s, xs, "im") for s in snaps])
        return np.column_stack([re, im])
    if name == "couette_analytic":
        xs, ys = axes
        y = np.repeat(ys, xs.size)
        return np.column_stack([np.broadcast_to(np.asarray(c, dtype=float), y.shape)
                                for c in O.couette_analytic(y)])
    raise ConfigError("oracle", "name", "no oracle configured")


# --------------------------------------------------------------------------- run persistence

def _context_json(ctx):
    return {k: (np.asarray(v).tolist()) for k, v in ctx.items() if k != "step"}


def load_solution(run_dir) -> ChainedSolution:
    """Rebuild the chained evaluator of a finished run from its checkpoints."""
    run_dir = Path(run_dir)
    cfg = ExperimentConfig.from_file(run_dir / "config.ini")
    manifest = json.loads((run_dir / "checkpoints" / "manifest.json").read_text())
    if manifest["config_sha256"] != cfg.config_hash():
        raise ValueError(f"{run_dir}: checkpoints belong to a different config")
    eq, mc = cfg.build_equation(), cfg.march_config()
    records, policies = [], None
    for entry in manifest["steps"]:
        pols = [load_checkpoint(run_dir / "checkpoints" / f) for f in entry["files"]]
        policies = policies or pols
        ctx = {k: (np.asarray(v) if isinstance(v, list) else v)
               for k, v in entry["context"].items()}
        records.append(StepRecord(entry["step"], entry["t_start"], entry["t_end"],
                                  entry["iterations"], entry["converged"], {},
                                  [p.params for p in pols], ctx, 0.0, 0.0))
    return ChainedSolution(eq, mc, policies, records)


def run_experiment(cfg: ExperimentConfig, out_dir, deterministic=False, progress=None) -> dict:
    """Execute a march and write every artifact into ``out_dir``; returns the run summary."""
    out = Path(out_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    h = cfg.config_hash()
    (out / "config.ini").write_text(f"# config_sha256 = {h}\n" + cfg.to_ini())
    eq, mc = cfg.build_equation(), cfg.march_config()
    meta = {"config_sha256": h, "equation": eq.name}
    monitors = list(eq.monitors)
    iters = TableWriter(out / "metrics_iterations.csv", "metrics_iterations",
                        ["step", "iteration", "lr", "loss"] + [f"loss_{m}" for m in monitors],
                        meta)
    steps = TableWriter(out / "metrics_steps.csv", "metrics_steps",
                        ["step", "t_start", "t_end", "iterations", "converged", "lr"]
                        + [f"loss_{m}" for m in monitors] + ["jump"], meta, flush=True)
    manifest = {"schema": f"drlsolve:checkpoints v{SCHEMA_VERSION}", "config_sha256": h,
                "steps": []}
    seconds = []

    def log(step, iteration, lr, loss, losses):
        iters.write([step, iteration, lr, loss] + [losses.get(m, math.nan) for m in monitors])

    def on_step(rec: StepRecord):
        steps.write([rec.step, rec.t_start, rec.t_end, rec.iterations, rec.converged, rec.lr]
                    + [rec.losses.get(m, math.nan) for m in monitors]
                    + [rec.jump if eq.kind == "pde" else math.nan])
        files = []
        for j, params in enumerate(rec.params):
            pol = marcher.policies[j].copy()
            pol.params = params
            fname = f"step_{rec.step:05d}_p{j}.bin"
            save_checkpoint(pol, out / "checkpoints" / fname)
            files.append(fname)
        manifest["steps"].append({"step": rec.step, "t_start": rec.t_start, "t_end": rec.t_end,
                                  "iterations": rec.iterations, "converged": rec.converged,
                                  "files": files, "context": _context_json(rec.context)})
        seconds.append(rec.seconds)
        if progress is not None:
            progress(rec)

    start = time.perf_counter()
    marcher = Marcher(eq, mc, log=log)
    try:
        with deterministic_threads(deterministic or cfg.experiment["deterministic"]):
            sol = marcher.run(on_step)
    finally:
        iters.close()
        steps.close()
        (out / "checkpoints" / "manifest.json").write_text(json.dumps(manifest, indent=1))

    coords, pts, axes = evaluation_grid(cfg, eq)
    names, vals = _derived(eq, eq.components, sol(pts))
    write_table(out / "solution.csv", "solution", list(coords) + names,
                np.column_stack([pts, vals]),
                dict(meta, coords=",".join(coords), components=",".join(names)))
    _solution_svg(out / "solution.svg", eq, coords, pts, axes, names, vals)
    its = [r.iterations for r in sol.records]
    (out / "iterations.svg").write_text(line_svg(
        [("iterations", np.arange(1, len(its) + 1), its)], f"{eq.name}: iterations per step",
        "time step", "iterations"))
    flagged = [r.step for r in sol.records if not r.converged]
    summary = {"schema": f"drlsolve:run v{SCHEMA_VERSION}", "config_sha256": h,
               "name": cfg.name, "equation": eq.name, "profile": cfg.experiment["profile"],
               "seed": cfg.seed, "converged": not flagged, "flagged_steps": flagged,
               "n_steps": len(sol.records), "total_iterations": sol.total_iterations,
               "seconds_total": time.perf_counter() - start, "seconds_per_step": seconds}
    (out / "run.json").write_text(json.dumps(summary, indent=1))
    return summary


def _solution_svg(path, eq, coords, pts, axes, names, vals):
    if eq.kind == "ode":
        (ts,) = axes
        series = [(n, ts, vals[:, k]) for k, n in enumerate(names)]
        svg = line_svg(series, f"{eq.name} solution", "t", "value")
    else:
        a, b = axes
        svg = heatmap_svg(a, b, vals[:, -1].reshape(b.size, a.size),
                          f"{eq.name}: {names[-1]}", coords[0], coords[1])
    Path(path).write_text(svg)


# --------------------------------------------------------------------------- compare

def _grid_interpolator(table: Table, comps):
    from scipy.interpolate import RegularGridInterpolator

    coords = table.coords
    cols = [table.column(c) for c in coords]
    axes = [np.unique(c) for c in cols]
    if np.prod([a.size for a in axes]) != table.data.shape[0]:
        raise CompareError("reference table is not a complete rectilinear grid")
    idx = tuple(np.searchsorted(a, c) for a, c in zip(axes, cols))
    out = {}
    for comp in comps:
        grid = np.full([a.size for a in axes], np.nan)
        grid[idx] = table.column(comp)
        if any(a.size < 2 for a in axes):
            raise CompareError("reference grid needs at least two values per coordinate")
        out[comp] = RegularGridInterpolator(axes, grid, method="linear", bounds_error=False)
    return axes, out


def compare_tables(sol: Table, ref: Table | None = None, pair: Table | None = None,
                   force=False) -> dict:
    """Error report of ``sol`` against ``ref`` and/or the mirror-pair symmetry of ``pair``."""
    if ref is None and pair is None:
        raise CompareError("nothing to compare: give a reference table or --pair")
    report = {"schema": f"drlsolve:compare v{SCHEMA_VERSION}",
              "config_sha256": sol.meta.get("config_sha256")}
    if ref is not None:
        h1, h2 = sol.meta.get("config_sha256"), ref.meta.get("config_sha256")
        if h1 and h2 and h1 != h2 and not force:
            raise CompareError(f"config hash mismatch ({h1[:12]} vs {h2[:12]}); "
                               "use --force to compare anyway")
        if sol.coords != ref.coords:
            raise CompareError(f"coordinate mismatch: {sol.coords} vs {ref.coords}")
        comps = [c for c in sol.components if c in ref.components]
        if not comps:
            raise CompareError("no common components")
        pts = np.column_stack([sol.column(c) for c in sol.coords])
        axes, interp = _grid_interpolator(ref, comps)
        lo = np.array([a[0] for a in axes])
        hi = np.array([a[-1] for a in axes])
        tol = 1e-9 * np.maximum(1.0, np.abs(hi - lo))
        inside = np.all((pts >= lo - tol) & (pts <= hi + tol), axis=1)
        if not inside.any():
            raise CompareError("disjoint domains: no solution point lies inside the reference grid")
        q = np.clip(pts[inside], lo, hi)
        err = np.column_stack([sol.column(c)[inside] - interp[c](q) for c in comps])
        report["components"] = {c: {"max_abs": float(np.max(np.abs(err[:, k]))),
                                    "rms": float(np.sqrt(np.mean(err[:, k] ** 2)))}
                                for k, c in enumerate(comps)}
        report["max_abs"] = float(np.max(np.abs(err)))
        report["rms"] = float(np.sqrt(np.mean(err ** 2)))
        report["points_compared"] = int(inside.sum())
        report["points_outside"] = int((~inside).sum())
        if "t" in sol.coords and len(sol.coords) > 1:
            tq = q[:, sol.coords.index("t")]
            report["snapshots"] = [
                {"t": float(t), **{c: float(np.max(np.abs(err[tq == t, k])))
                                   for k, c in enumerate(comps)}}
                for t in np.unique(tq)]
    if pair is not None:
        report["symmetry"] = pair_symmetry(sol, pair)
    return report


def pair_symmetry(a: Table, b: Table) -> dict:
    """RMS(x1+x2), RMS(y1+y2), RMS(z1-z2) for trajectories started at mirrored states."""
    for need in ("x", "y", "z"):
        if need not in a.components or need not in b.components:
            raise CompareError("pair symmetry needs x, y, z trajectories")
    if a.coords != ["t"] or b.coords != ["t"]:
        raise CompareError("pair symmetry needs time-series tables")
    ta, tb = a.column("t"), b.column("t")
    lo, hi = max(ta[0], tb[0]), min(ta[-1], tb[-1])
    keep = (ta >= lo) & (ta <= hi)
    if not keep.any():
        raise CompareError("disjoint domains: the pair shares no time interval")
    t = ta[keep]
    other = {c: np.interp(t, tb, b.column(c)) for c in ("x", "y", "z")}
    mine = {c: a.column(c)[keep] for c in ("x", "y", "z")}

    def rms(v):
        return float(np.sqrt(np.mean(v ** 2)))

    return {"rms_x_sum": rms(mine["x"] + other["x"]), "rms_y_sum": rms(mine["y"] + other["y"]),
            "rms_z_diff": rms(mine["z"] - other["z"])}


# --------------------------------------------------------------------------- metrics

def transfer_ratio(iterations) -> dict:
    """Median iterations over the last half of the march divided by the first step's."""
    its = [int(v) for v in iterations]
    if len(its) < 2:
        return {"first": its[0] if its else None, "median_late": None, "ratio": None,
                "status": "undefined: needs at least two steps"}
    late = its[len(its) // 2:]
    med = float(np.median(late))
    return {"first": its[0], "median_late": med,
            "ratio": med / its[0] if its[0] else None,
            "status": "defined" if its[0] else "undefined: first step took no iterations"}


def derive_metrics(run_dir, out_dir=None) -> dict:
    run_dir = Path(run_dir)
    out = Path(out_dir) if out_dir else run_dir
    path = run_dir / "metrics_steps.csv"
    if not path.is_file():
        raise FileNotFoundError(f"{run_dir}: metrics_steps.csv not found")
    steps = read_table(path)
    meta = {"config_sha256": steps.meta.get("config_sha256", "")}
    out.mkdir(parents=True, exist_ok=True)
    st, te, its = steps.column("step"), steps.column("t_end"), steps.column("iterations")
    write_table(out / "iterations_vs_step.csv", "iterations_vs_step",
                ["step", "t_end", "iterations"],
                [[int(a), b, int(c)] for a, b, c in zip(st, te, its)], meta)
    (out / "iterations_vs_step.svg").write_text(line_svg(
        [("iterations", st, its)], "iterations versus time step", "time step", "iterations"))
    ipath = run_dir / "metrics_iterations.csv"
    if ipath.is_file():
        log = read_table(ipath)
        s, g, loss = log.column("step"), log.column("iteration"), log.column("loss")
        local = np.zeros_like(g)
        for k in np.unique(s):
            sel = s == k
            local[sel] = g[sel] - g[sel][0]
        write_table(out / "loss_vs_iteration.csv", "loss_vs_iteration",
                    ["step", "local_iteration", "iteration", "loss"],
                    [[int(a), int(b), int(c), d] for a, b, c, d in zip(s, local, g, loss)], meta)
        uniq = np.unique(s)
        picks = sorted({int(uniq[0]), int(uniq[len(uniq) // 4]), int(uniq[len(uniq) // 2]),
                        int(uniq[-1])})
        (out / "loss_vs_iteration.svg").write_text(line_svg(
            [(f"step {k}", local[s == k], loss[s == k]) for k in picks],
            "loss versus iteration", "iteration within step", "loss", logy=True))
    result = dict(transfer_ratio(its), config_sha256=meta["config_sha256"])
    (out / "transfer.json").write_text(json.dumps(result, indent=1))
    return result


# --------------------------------------------------------------------------- commands

def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config, args.profile, args.set or ())
    if getattr(args, "seed", None) is not None:
        cfg.experiment["seed"] = args.seed
    return cfg


def cmd_solve(args) -> int:
    cfg = _load(args)
    out = Path(args.out or cfg.experiment["output_dir"] or f"runs/{cfg.name}")

    def progress(rec):
        if not args.quiet:
            losses = " ".join(f"{k}={v:.3e}" for k, v in rec.losses.items())
            flag = "" if rec.converged else "  NOT CONVERGED"
            print(f"step {rec.step:5d}  iterations {rec.iterations:6d}  {losses}{flag}",
                  flush=True)

    try:
        summary = run_experiment(cfg, out, deterministic=args.deterministic, progress=progress)
    except NonFiniteLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"wrote {out}  ({summary['total_iterations']} iterations, "
          f"{summary['seconds_total']:.1f} s)")
    if summary["flagged_steps"]:
        print("steps that did not converge: "
              + ", ".join(str(s) for s in summary["flagged_steps"]), file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_oracle(args) -> int:
    cfg = _load(args)
    if cfg.oracle["name"] == "none":
        raise ConfigError("oracle", "name", "this config has no oracle")
    eq = cfg.build_equation()
    coords, pts, axes = evaluation_grid(cfg, eq)
    try:
        vals = oracle_values(cfg, eq, axes)
    except (O.ColeSeriesError, O.IntegrationError, FloatingPointError) as exc:
        print(f"oracle {cfg.oracle['name']} failed: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    names, vals = _derived(eq, eq.components, vals)
    out = Path(args.out or Path(cfg.experiment["output_dir"] or f"runs/{cfg.name}") / "oracle.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_table(out, "oracle", list(coords) + names, np.column_stack([pts, vals]),
                {"config_sha256": cfg.config_hash(), "equation": eq.name,
                 "oracle": cfg.oracle["name"], "coords": ",".join(coords),
                 "components": ",".join(names)})
    print(f"wrote {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    sol = read_table(args.solution)
    ref = read_table(args.reference) if args.reference else None
    pair = read_table(args.pair) if args.pair else None
    report = compare_tables(sol, ref, pair, force=args.force)
    if "max_abs" in report:
        print(f"max_abs_error {report['max_abs']:.6e}")
        print(f"rms_error     {report['rms']:.6e}")
        for c, v in report["components"].items():
            print(f"  {c:6s} max_abs {v['max_abs']:.6e}  rms {v['rms']:.6e}")
        for row in report.get("snapshots", []) if args.snapshots else []:
            print("  t=" + format(row["t"], ".6g") + "  " + "  ".join(
                f"{k} {v:.3e}" for k, v in row.items() if k != "t"))
    if "symmetry" in report:
        for k, v in report["symmetry"].items():
            print(f"{k} {v:.6e}")
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=1))
    return EXIT_OK


def cmd_metrics(args) -> int:
    result = derive_metrics(args.run_dir, args.out)
    if result["ratio"] is None:
        print(f"iteration ratio: {result['status']}")
    else:
        print(f"first step {result['first']} iterations, late median {result['median_late']:g}, "
              f"ratio {result['ratio']:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="drlsolve", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def config_flags(sp):
        sp.add_argument("--config", required=True,
                        help="config path or bundled name (see `drlsolve configs`)")
        sp.add_argument("--profile", choices=("desk", "paper"), default=None)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config field (repeatable)")
        sp.add_argument("--out", default=None)

    sp = sub.add_parser("solve", help="run a march and write its artifacts")
    config_flags(sp)
    sp.add_argument("--deterministic", action="store_true",
                    help="single-threaded linear algebra for bitwise reruns")
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("oracle", help="write the reference solution on the evaluation grid")
    config_flags(sp)
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("compare", help="error report of a solution CSV against a reference")
    sp.add_argument("solution")
    sp.add_argument("reference", nargs="?")
    sp.add_argument("--pair", help="second trajectory for the mirror-symmetry columns")
    sp.add_argument("--force", action="store_true", help="ignore config hash mismatch")
    sp.add_argument("--snapshots", action="store_true", help="print the per-snapshot table")
    sp.add_argument("--out", help="write the full report as JSON")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("metrics", help="iterations-per-step and loss tables for a run")
    sp.add_argument("run_dir")
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_metrics)

    sp = sub.add_parser("configs", help="list bundled configs")
    sp.set_defaults(func=lambda a: print("\n".join(bundled_configs())) or EXIT_OK)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CompareError, FileNotFoundError) as exc:
        print(f"rejected: {exc}", file=sys.stderr)
        return EXIT_REJECTED


if __name__ == "__main__":
    sys.exit(main())
