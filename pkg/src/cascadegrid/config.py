"""Scenario configuration: JSON parsing with strict validation.

Unknown keys are rejected with their full paths so typos never silently
change a run.  Schedules can live inside the config file or in a separate
file passed to the CLI.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

from .dispatch import CostFunction
from .errors import ValidationError
from .network import TWO_PI, Impedance
from .simulator import LoadSchedule, LoadStep

_COST_KEYS = {"a", "b", "c", "p_min", "p_max"}
_DG_KEYS = {"cost", "line_inductance", "line_resistance", "p_max", "q_max"}
_FILTER_KEYS = {"L_f", "R_f", "C_f", "R_d"}
_TOP_KEYS = {
    "v_pcc_ref",
    "f_min",
    "f_max",
    "h",
    "w_c",
    "nominal_frequency",
    "dt",
    "output_decimation",
    "dgs",
    "filter",
    "schedule",
}
_STEP_KEYS = {"start", "p_pu", "q_pu", "p_w", "q_var", "resistance", "reactance"}


@dataclass(frozen=True)
class DGConfig:
    cost: CostFunction
    line_inductance: float
    p_max: float
    q_max: float
    line_resistance: float = 0.0


@dataclass(frozen=True)
class GridConfig:
    dgs: tuple
    v_pcc_ref: float
    f_min: float
    f_max: float
    h: float
    w_c: float
    nominal_frequency: float
    dt: float
    output_decimation: int
    filter_params: tuple = ()

    def __post_init__(self):
        if len(self.dgs) < 1:
            raise ValidationError("at least one DG is required")
        for name in ("v_pcc_ref", "h", "w_c", "nominal_frequency", "dt"):
            if not getattr(self, name) > 0.0:
                raise ValidationError(f"{name} must be positive")
        if not self.f_min < self.f_max:
            raise ValidationError("f_min must be below f_max")
        if self.output_decimation < 1:
            raise ValidationError("output_decimation must be at least 1")
        for i, dg in enumerate(self.dgs):
            if not dg.p_max > 0.0 or not dg.q_max > 0.0:
                raise ValidationError(f"dgs[{i}]: ratings must be positive")
            if dg.line_inductance < 0.0 or dg.line_resistance < 0.0:
                raise ValidationError(f"dgs[{i}]: line parameters must be non-negative")

    @property
    def n(self) -> int:
        return len(self.dgs)

    @property
    def costs(self) -> tuple:
        return tuple(dg.cost for dg in self.dgs)

    @property
    def ratings(self) -> tuple:
        return tuple(dg.p_max for dg in self.dgs)

    @property
    def p_base(self) -> float:
        """Per-unit power base: the largest DG rating."""
        return max(self.ratings)

    @property
    def q_base(self) -> float:
        return max(dg.q_max for dg in self.dgs)

    def line_impedances(self) -> tuple:
        """Line impedances at the nominal frequency; reactance error from
        running inside the allowed band stays below a couple percent."""
        w = TWO_PI * self.nominal_frequency
        return tuple(
            Impedance(dg.line_resistance, w * dg.line_inductance) for dg in self.dgs
        )

    def to_dict(self) -> dict:
        out = {
            "v_pcc_ref": self.v_pcc_ref,
            "f_min": self.f_min,
            "f_max": self.f_max,
            "h": self.h,
            "w_c": self.w_c,
            "nominal_frequency": self.nominal_frequency,
            "dt": self.dt,
            "output_decimation": self.output_decimation,
            "dgs": [],
        }
        for dg in self.dgs:
            cost = {"a": dg.cost.a, "b": dg.cost.b, "c": dg.cost.c}
            if dg.cost.p_min != 0.0:
                cost["p_min"] = dg.cost.p_min
            if math.isfinite(dg.cost.p_max):
                cost["p_max"] = dg.cost.p_max
            entry = {
                "cost": cost,
                "line_inductance": dg.line_inductance,
                "p_max": dg.p_max,
                "q_max": dg.q_max,
            }
            if dg.line_resistance != 0.0:
                entry["line_resistance"] = dg.line_resistance
            out["dgs"].append(entry)
        if self.filter_params:
            out["filter"] = dict(self.filter_params)
        return out


def _reject_unknown(obj: dict, allowed: set, path: str) -> None:
    unknown = sorted(set(obj) - allowed)
    if unknown:
        listed = ", ".join(f"{path}.{k}" if path else k for k in unknown)
        raise ValidationError(f"unknown config keys: {listed}")


def _number(obj: dict, key: str, path: str, default=None) -> float:
    if key not in obj:
        if default is not None:
            return default
        raise ValidationError(f"missing config key: {path}.{key}" if path else f"missing config key: {key}")
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValidationError(f"{path}.{key} must be a number" if path else f"{key} must be a number")
    return float(v)


def _parse_cost(obj, path: str) -> CostFunction:
    if not isinstance(obj, dict):
        raise ValidationError(f"{path} must be an object")
    _reject_unknown(obj, _COST_KEYS, path)
    kwargs = {
        "a": _number(obj, "a", path),
        "b": _number(obj, "b", path, default=0.0),
        "c": _number(obj, "c", path, default=0.0),
        "p_min": _number(obj, "p_min", path, default=0.0),
    }
    if "p_max" in obj:
        kwargs["p_max"] = _number(obj, "p_max", path)
    try:
        return CostFunction(**kwargs)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def _parse_dg(obj, path: str) -> DGConfig:
    if not isinstance(obj, dict):
        raise ValidationError(f"{path} must be an object")
    _reject_unknown(obj, _DG_KEYS, path)
    if "cost" not in obj:
        raise ValidationError(f"missing config key: {path}.cost")
    return DGConfig(
        cost=_parse_cost(obj["cost"], f"{path}.cost"),
        line_inductance=_number(obj, "line_inductance", path),
        p_max=_number(obj, "p_max", path),
        q_max=_number(obj, "q_max", path),
        line_resistance=_number(obj, "line_resistance", path, default=0.0),
    )


def parse_schedule(entries, config: GridConfig, path: str = "schedule") -> LoadSchedule:
    """Build a load schedule from parsed JSON entries.

    Each entry gives a start time plus one load spec: per-unit powers on
    the config bases, explicit watt/var powers, or a raw impedance.  Power
    specs convert to constant impedance at the rated PCC voltage.
    """
    if not isinstance(entries, list) or not entries:
        raise ValidationError(f"{path} must be a non-empty list")
    steps = []
    for i, e in enumerate(entries):
        here = f"{path}[{i}]"
        if not isinstance(e, dict):
            raise ValidationError(f"{here} must be an object")
        _reject_unknown(e, _STEP_KEYS, here)
        start = _number(e, "start", here)
        if "resistance" in e or "reactance" in e:
            if "p_pu" in e or "p_w" in e or "q_pu" in e or "q_var" in e:
                raise ValidationError(f"{here}: give either an impedance or powers")
            z = Impedance(
                _number(e, "resistance", here, default=0.0),
                _number(e, "reactance", here, default=0.0),
            )
        elif "p_pu" in e or "q_pu" in e:
            if "p_w" in e or "q_var" in e:
                raise ValidationError(f"{here}: mix of per-unit and watt load specs")
            p = _number(e, "p_pu", here, default=0.0) * config.p_base
            q = _number(e, "q_pu", here, default=0.0) * config.q_base
            z = LoadSchedule.impedance_from_power(p, q, config.v_pcc_ref)
        elif "p_w" in e or "q_var" in e:
            p = _number(e, "p_w", here, default=0.0)
            q = _number(e, "q_var", here, default=0.0)
            z = LoadSchedule.impedance_from_power(p, q, config.v_pcc_ref)
        else:
            raise ValidationError(f"{here}: no load spec given")
        steps.append(LoadStep(start_time=start, impedance=z))
    try:
        return LoadSchedule(steps=tuple(steps))
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def parse_config(path):
    """Parse and validate a scenario config file.

    Returns (GridConfig, LoadSchedule or None); the schedule is present
    when the file embeds one.
    """
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{p}: invalid JSON ({exc})") from exc
    return parse_config_dict(raw)


def parse_config_dict(raw: dict):
    if not isinstance(raw, dict):
        raise ValidationError("config root must be an object")
    _reject_unknown(raw, _TOP_KEYS, "")
    dgs_raw = raw.get("dgs")
    if not isinstance(dgs_raw, list) or not dgs_raw:
        raise ValidationError("dgs must be a non-empty list")
    dgs = tuple(_parse_dg(d, f"dgs[{i}]") for i, d in enumerate(dgs_raw))

    filter_params = ()
    if "filter" in raw:
        fobj = raw["filter"]
        if not isinstance(fobj, dict):
            raise ValidationError("filter must be an object")
        _reject_unknown(fobj, _FILTER_KEYS, "filter")
        # accepted for completeness; the fast inner-loop hardware these
        # describe is outside the quasi-static model
        filter_params = tuple(sorted((k, _number(fobj, k, "filter")) for k in fobj))

    decim = raw.get("output_decimation", 10)
    if isinstance(decim, bool) or not isinstance(decim, int):
        raise ValidationError("output_decimation must be an integer")

    config = GridConfig(
        dgs=dgs,
        v_pcc_ref=_number(raw, "v_pcc_ref", ""),
        f_min=_number(raw, "f_min", ""),
        f_max=_number(raw, "f_max", ""),
        h=_number(raw, "h", ""),
        w_c=_number(raw, "w_c", ""),
        nominal_frequency=_number(raw, "nominal_frequency", "", default=50.0),
        dt=_number(raw, "dt", "", default=1e-4),
        output_decimation=decim,
        filter_params=filter_params,
    )

    schedule = None
    if "schedule" in raw:
        schedule = parse_schedule(raw["schedule"], config)
    return config, schedule


def parse_schedule_file(path, config: GridConfig) -> LoadSchedule:
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"schedule file not found: {p}")
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{p}: invalid JSON ({exc})") from exc
    if isinstance(raw, dict):
        _reject_unknown(raw, {"schedule"}, "")
        raw = raw.get("schedule")
    return parse_schedule(raw, config)


def bundled_path(name: str) -> Path:
    """Path of a packaged example config (table1.json, table2.json, ...)."""
    here = Path(__file__).parent / "data"
    candidate = here / name
    if candidate.suffix != ".json":
        candidate = candidate.with_suffix(".json")
    if not candidate.is_file():
        available = ", ".join(sorted(f.name for f in here.glob("*.json")))
        raise ValidationError(f"no bundled config {name!r}; available: {available}")
    return candidate
