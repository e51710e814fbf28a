"""Strict line-based experiment configuration.

Format::

    # comment
    [params]
    p = 1.8
    n_cells = 63
    [initial]
    kind = sine
    modes = 1
    [experiment]
    kind = run
    output_dir = out

Lists are comma separated; nested lists (sine modes) separate their rows
with ``;``.  Unknown sections or keys, duplicate keys and values of the wrong
type are rejected with the offending line number.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, fields as dc_fields
from typing import Any, Callable

from .fields import ParameterError, SimParams
from .stepper import SchemeConfig

EXPERIMENT_KINDS = ("run", "ladder", "extinction_sweep", "dual_check", "galerkin_compare", "gamma")
DRIFT_FORMS = ("advective", "conservative")


class ConfigError(ValueError):
    """Invalid configuration text; the message names the key and line."""


# ------------------------------------------------------------ value parsers


def _float(s: str) -> float:
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("not finite")
    return v


def _opt_float(s: str) -> float | None:
    return None if s.lower() == "none" else _float(s)


def _int(s: str) -> int:
    if not re.fullmatch(r"[+-]?\d+", s):
        raise ValueError("not an integer")
    return int(s)


def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValueError("not a boolean")


def _str(s: str) -> str:
    if not s:
        raise ValueError("empty string")
    return s


def _list(item: Callable[[str], Any]) -> Callable[[str], list]:
    def parse(s: str) -> list:
        parts = [x.strip() for x in s.split(",")]
        if not parts or any(not x for x in parts):
            raise ValueError("empty list entry")
        return [item(x) for x in parts]

    return parse


def _int_rows(s: str) -> list[list[int]]:
    rows = [r.strip() for r in s.split(";")]
    if any(not r for r in rows):
        raise ValueError("empty row")
    return [_list(_int)(r) for r in rows]


_TYPE_NAMES = {
    _float: "float", _opt_float: "float or none", _int: "integer", _bool: "boolean", _str: "string",
    _int_rows: "integer rows",
}

PARAM_KEYS: dict[str, Callable] = {
    "p": _float, "mu": _float, "nu": _float, "delta": _float, "alpha": _opt_float,
    "dim": _int, "n_cells": _int, "dt": _float, "t_end": _float, "eta": _opt_float,
}

SCHEMA: dict[str, dict[str, Callable]] = {
    "params": PARAM_KEYS,
    "scheme": {
        "mode": _str, "linear_solver_tol": _float, "max_linear_iters": _int,
        "cfl_safety": _float, "snapshot_stride": _int, "stop_at_extinction": _bool,
    },
    "initial": {
        "kind": _str, "modes": _int_rows, "amplitudes": _list(_float), "amplitude": _float,
        "lower": _list(_float), "upper": _list(_float), "max_mode": _int,
    },
    "experiment": {"kind": _str, "output_dir": _str, "seed": _int},
    "sweep": {k: _list(PARAM_KEYS[k] if PARAM_KEYS[k] is not _opt_float else _float) for k in PARAM_KEYS},
    "dual": {
        "horizon": _float, "eta_cells": _list(_float), "center": _list(_float), "radius": _float,
        "component": _int, "nu_dual": _opt_float, "drift_form": _str, "mollify": _bool,
    },
    "galerkin": {"modes": _int, "quad_points": _int, "dt": _float, "stride": _int},
    "gamma": {"seeds": _list(_int), "maxiter": _int},
}


def _type_name(parser: Callable) -> str:
    return _TYPE_NAMES.get(parser, "list")


# ------------------------------------------------------------------ config


@dataclass
class ExperimentConfig:
    """Validated experiment description with defaults applied."""

    kind: str
    params: SimParams
    scheme: SchemeConfig = SchemeConfig()
    initial: dict = field(default_factory=lambda: {"kind": "sine"})
    output_dir: str = "plap_out"
    seed: int = 0
    sweep: dict[str, list] = field(default_factory=dict)
    dual: dict = field(default_factory=dict)
    galerkin: dict = field(default_factory=dict)
    gamma: dict = field(default_factory=dict)

    def initial_spec(self) -> dict:
        """Initial-datum descriptor with the experiment seed filled in."""
        spec = dict(self.initial)
        if spec.get("kind") == "random":
            spec.setdefault("seed", self.seed)
        return spec

    def echo(self) -> str:
        """Canonical text that parses back to an equal configuration."""
        lines = ["[params]"]
        for f in dc_fields(SimParams):
            lines.append(f"{f.name} = {_fmt(getattr(self.params, f.name))}")
        lines.append("")
        lines.append("[scheme]")
        for f in dc_fields(SchemeConfig):
            lines.append(f"{f.name} = {_fmt(getattr(self.scheme, f.name))}")
        for name in ("initial", "sweep", "dual", "galerkin", "gamma"):
            sec = getattr(self, name)
            if sec:
                lines.append("")
                lines.append(f"[{name}]")
                lines.extend(f"{k} = {_fmt(v)}" for k, v in sorted(sec.items()))
        lines.append("")
        lines.append("[experiment]")
        lines.append(f"kind = {self.kind}")
        lines.append(f"output_dir = {self.output_dir}")
        lines.append(f"seed = {self.seed}")
        return "\n".join(lines) + "\n"


def _fmt(v: Any) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        if v and isinstance(v[0], list):
            return "; ".join(_fmt(r) for r in v)
        return ", ".join(_fmt(x) for x in v)
    return str(v)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate configuration text.

    Raises :class:`ConfigError` naming the offending key and line.
    """
    raw: dict[str, dict[str, tuple[Any, int]]] = {}
    seen: dict[tuple[str, str], int] = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        m = re.fullmatch(r"\[\s*([A-Za-z_]+)\s*\]", stripped)
        if m:
            section = m.group(1)
            if section not in SCHEMA:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            if section in raw:
                raise ConfigError(f"line {lineno}: section [{section}] repeated")
            raw[section] = {}
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {stripped!r}")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside of any [section]")
        key, value = (x.strip() for x in stripped.split("=", 1))
        if key not in SCHEMA[section]:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in [{section}]")
        if (section, key) in seen:
            raise ConfigError(
                f"line {lineno}: duplicate key {key!r} in [{section}] (first defined on line {seen[section, key]})"
            )
        seen[section, key] = lineno
        parser = SCHEMA[section][key]
        try:
            parsed = parser(value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(
                f"line {lineno}: {key} = {value!r} is not a valid {_type_name(parser)} ({exc})"
            ) from None
        raw[section][key] = (parsed, lineno)
    return _build(raw)


def _build(raw: dict[str, dict[str, tuple[Any, int]]]) -> ExperimentConfig:
    exp = raw.get("experiment", {})
    if "kind" not in exp:
        raise ConfigError("experiment kind required")
    kind, kline = exp["kind"]
    if kind not in EXPERIMENT_KINDS:
        raise ConfigError(f"line {kline}: experiment kind {kind!r} not one of {', '.join(EXPERIMENT_KINDS)}")

    pvals = {k: v for k, (v, _) in raw.get("params", {}).items()}
    p_line = raw.get("params", {}).get("p", (None, None))[1]
    p = pvals.get("p", SimParams.p)
    if not 1.5 < p <= 2.0:
        where = f"line {p_line}: " if p_line else ""
        raise ConfigError(f"{where}p = {p} outside the interval (3/2, 2]")
    try:
        params = SimParams(**pvals)
    except ParameterError as exc:
        key = str(exc).split(" ", 1)[0]
        line = raw.get("params", {}).get(key, (None, None))[1]
        raise ConfigError(f"line {line}: {exc}" if line else str(exc)) from None

    svals = {k: v for k, (v, _) in raw.get("scheme", {}).items()}
    try:
        scheme = SchemeConfig(**svals)
    except ValueError as exc:
        raise ConfigError(f"[scheme]: {exc}") from None

    sweep = {k: v for k, (v, _) in raw.get("sweep", {}).items()}
    for key, values in sweep.items():
        line = raw["sweep"][key][1]
        for v in values:
            try:
                params.replace(**{key: v})
            except ParameterError as exc:
                raise ConfigError(f"line {line}: sweep {key}: {exc}") from None

    initial = {k: v for k, (v, _) in raw.get("initial", {}).items()}
    initial.setdefault("kind", "sine")
    dual = {k: v for k, (v, _) in raw.get("dual", {}).items()}
    if dual.get("drift_form", "advective") not in DRIFT_FORMS:
        line = raw["dual"]["drift_form"][1]
        raise ConfigError(f"line {line}: drift_form must be one of {', '.join(DRIFT_FORMS)}")
    galerkin = {k: v for k, (v, _) in raw.get("galerkin", {}).items()}
    gamma = {k: v for k, (v, _) in raw.get("gamma", {}).items()}

    cfg = ExperimentConfig(
        kind=kind,
        params=params,
        scheme=scheme,
        initial=initial,
        output_dir=exp.get("output_dir", ("plap_out", 0))[0],
        seed=exp.get("seed", (0, 0))[0],
        sweep=sweep,
        dual=dual,
        galerkin=galerkin,
        gamma=gamma,
    )
    _check_kind(cfg, raw)
    return cfg


def _check_kind(cfg: ExperimentConfig, raw) -> None:
    if cfg.kind == "ladder":
        if not set(cfg.sweep) <= {"nu", "mu"} or not cfg.sweep:
            raise ConfigError("ladder needs [sweep] with nu and/or mu value lists only")
        for key, values in cfg.sweep.items():
            if len(values) < 2:
                raise ConfigError(f"line {raw['sweep'][key][1]}: ladder over {key} needs at least two values")
    if cfg.kind == "extinction_sweep" and set(cfg.sweep) - {"delta", "p", "n_cells", "dt"}:
        raise ConfigError("extinction_sweep may only sweep delta, p, n_cells and dt")
    if cfg.kind in ("dual_check", "galerkin_compare") and cfg.params.mu <= 0:
        raise ConfigError(f"{cfg.kind} requires mu > 0")
