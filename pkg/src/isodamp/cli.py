"""Command-line pipeline: identify -> reduce -> tune -> shape -> simulate.

Each stage reads and writes files in the output directory, so stages can be run
separately: ``config.resolved.json``, ``report.json`` (one section per stage)
and plot-ready CSVs named ``<scenario>__<signal>.csv``.
"""

import argparse
import csv
import json
import math
import sys
from pathlib import Path
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from pydantic import ValidationError as PydanticValidationError

from . import __version__, fixtures
from .analysis import (
    RodDropProfile,
    closed_loop_sim,
    margins,
    stepback_scenario,
    step_setpoint,
    transient_metrics,
)
from .errors import InfeasibleError, IsodampError, NumericalError, ValidationError
from .lti import RationalTF, TimeSeries, dc_gain, freq_response, log_grid, minreal
from .reduction import FoptdModel, SoptdModel, reduce_foptd, reduce_soptd
from .shaper import (
    ApproxConfig,
    PhaseShaperParams,
    ShaperDesignConfig,
    bode_phase_slope,
    design_shaper,
    flat_band,
    flatness_residual,
    loop_context,
    margin_constraint,
    realize_shaper,
    shaped_open_loop,
)
from .sysid import (
    ArxOrders,
    arx_fit,
    d2c_zoh,
    default_candidates,
    is_nonminimum_phase,
    order_scores,
)
from .errors import LogBranchError, UnidentifiableError
from .tuning import LqrSpec, PidGains, lqr_pid, pid_tf

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_INFEASIBLE = 0, 1, 2, 3
CSV_COLUMNS = ("time_s", "rod_fraction", "power_pct")
MAX_JITTER = 1e-6


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DataConfig(_Strict):
    csv: Optional[str] = None
    fixture: Optional[str] = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.csv is None) == (self.fixture is None):
            raise ValueError("give exactly one of data.csv or data.fixture")
        return self


class IdentifyConfig(_Strict):
    orders: List[Tuple[int, int]] = Field(default_factory=lambda: [(o.n, o.m) for o in default_candidates()])
    detrend: bool = False

    @field_validator("orders")
    @classmethod
    def _nonempty(cls, v):
        if not v:
            raise ValueError("at least one ARX order candidate is required")
        for n, m in v:
            ArxOrders(n, m)
        return v


class ReductionConfig(_Strict):
    target: Literal["foptd", "soptd"] = "foptd"
    horizon: float = Field(30.0, gt=0)
    dt: float = Field(0.01, gt=0)


class LqrConfig(_Strict):
    zeta_d: float = Field(gt=0)
    omega_d: float = Field(gt=0)
    derivative_weight: float = Field(0.2, ge=0)


class ControllerConfig(_Strict):
    fixture: Optional[str] = None
    lqr: Optional[LqrConfig] = None
    tau_f: Optional[float] = Field(None, gt=0)

    @model_validator(mode="after")
    def _one_source(self):
        if (self.fixture is None) == (self.lqr is None):
            raise ValueError("give exactly one of controller.fixture or controller.lqr")
        return self


class ShaperConfig(_Strict):
    fixture: Optional[str] = None
    phi_md_deg: float = Field(30.0, gt=0, lt=90)
    flatness_tol_deg: float = Field(5.0, gt=0)
    omega_search: Tuple[float, float] = (1e-3, 1e3)
    max_evals: int = Field(2000, ge=50)
    carlson_order: int = Field(4, ge=1)


class ProfileConfig(_Strict):
    drop_fraction: float = Field(0.3, ge=0, le=1)
    ramp_duration: float = Field(3.0, gt=0)
    start_time: float = Field(1.0, ge=0)


class PipelineSpec(_Strict):
    name: str
    family: Literal["foptd", "soptd"]
    controller: str = "design"
    shaper: str = "design"


class SimulationConfig(_Strict):
    pade_order: int = Field(1, ge=1)
    dt: float = Field(0.005, gt=0)
    horizon: float = Field(30.0, gt=0)
    multipliers: List[float] = Field(default_factory=lambda: [1.0, 2.0, 4.0, 7.0])
    step: float = -1.0
    profile: ProfileConfig = Field(default_factory=ProfileConfig)
    initial_powers: List[float] = Field(default_factory=lambda: [100.0, 90.0, 80.0, 70.0])
    interpolate: bool = False
    pipelines: List[PipelineSpec] = Field(default_factory=list)

    @field_validator("multipliers")
    @classmethod
    def _multipliers(cls, v):
        if not v:
            raise ValueError("multipliers must be a nonempty list")
        if any(not (m > 0 and math.isfinite(m)) for m in v):
            raise ValueError("multipliers must be positive")
        return v

    @field_validator("step")
    @classmethod
    def _step(cls, v):
        if v == 0:
            raise ValueError("step amplitude must be nonzero")
        return v


class PipelineConfig(_Strict):
    data: DataConfig
    identify: IdentifyConfig = Field(default_factory=IdentifyConfig)
    reduction: ReductionConfig = Field(default_factory=ReductionConfig)
    controller: ControllerConfig = Field(default_factory=lambda: ControllerConfig(fixture="pid_foptd"))
    shaper: ShaperConfig = Field(default_factory=ShaperConfig)
    simulation: SimulationConfig = Field(default_factory=SimulationConfig)


# ---------------------------------------------------------------- file helpers

def _fmt(x):
    return repr(float(x))


def _clean(obj):
    """JSON-safe copy: non-finite floats become strings, numpy scalars become Python."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write_json(path, obj):
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def _write_csv(path, header, columns):
    with path.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([_fmt(v) for v in row])


def _load_report(out):
    p = out / "report.json"
    return json.loads(p.read_text()) if p.exists() else {}


def _save_report(out, report):
    _write_json(out / "report.json", report)


def read_rod_drop_csv(path):
    """(t, rod, power) arrays from a ``time_s,rod_fraction,power_pct`` file."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from None
    rows = list(csv.reader(lines))
    if not rows:
        raise ValidationError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    missing = [c for c in CSV_COLUMNS if c not in header]
    if missing:
        raise ValidationError(f"{path}: line 1: missing column(s) {', '.join(missing)}")
    idx = [header.index(c) for c in CSV_COLUMNS]
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            data.append([float(row[i]) for i in idx])
        except (IndexError, ValueError):
            raise ValidationError(f"{path}: line {lineno}: malformed row {','.join(row)!r}") from None
    if len(data) < 3:
        raise ValidationError(f"{path}: need at least 3 data rows")
    arr = np.asarray(data)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{path}: non-finite values")
    t = arr[:, 0]
    d = np.diff(t)
    dt = float(np.mean(d))
    bad = np.flatnonzero(np.abs(d - dt) > MAX_JITTER)
    if dt <= 0 or bad.size:
        line = int(bad[0]) + 3 if bad.size else 2
        raise ValidationError(f"{path}: line {line}: non-uniform sampling (jitter > {MAX_JITTER:g} s)")
    return t, arr[:, 1], arr[:, 2]


def write_rod_drop_csv(path, t, rod, power):
    """Write records in the format read by read_rod_drop_csv."""
    _write_csv(Path(path), CSV_COLUMNS, (t, rod, power))


def _tf_from_fixture(name):
    v = fixtures.get(name)
    if isinstance(v, RationalTF):
        return v
    if isinstance(v, (FoptdModel, SoptdModel)):
        return v.to_tf()
    raise ValidationError(f"fixture {name!r} is not a plant model")


# ---------------------------------------------------------------- stages

def cmd_identify(cfg, out):
    """Identified continuous model (or fixture pass-through) -> report['identify']."""
    if cfg.data.fixture is not None:
        tf = _tf_from_fixture(cfg.data.fixture)
        section = {"source": "fixture", "fixture": cfg.data.fixture}
    else:
        t, rod, power = read_rod_drop_csv(cfg.data.csv)
        Ts = float(t[1] - t[0])
        u = TimeSeries(t[0], Ts, rod - rod[0])
        y = TimeSeries(t[0], Ts, power - power[0])
        cands = [ArxOrders(n, m) for n, m in cfg.identify.orders]
        scores = order_scores(u, y, cands, cfg.identify.detrend)
        ranked = sorted((o for o in cands if math.isfinite(scores[o])), key=lambda o: (scores[o], o.n + o.m, o.n))
        if not ranked:
            raise UnidentifiableError("no candidate order gives a well-conditioned fit")
        tf, chosen, skipped = None, None, []
        for o in ranked:
            model = arx_fit(u, y, o, cfg.identify.detrend)
            try:
                tf = d2c_zoh(model)
            except LogBranchError as exc:
                skipped.append({"orders": [o.n, o.m], "reason": str(exc)})
                continue
            chosen = (o, model)
            break
        if tf is None:
            raise LogBranchError("no candidate ARX model has a real continuous equivalent")
        tf = minreal(tf, 1e-6)
        o, model = chosen
        section = {
            "source": "csv",
            "csv": str(cfg.data.csv),
            "Ts": Ts,
            "orders": [o.n, o.m],
            "free_run_rms": scores[o],
            "residual_rms": model.residual_rms,
            "arx": model.to_dict(),
            "skipped": skipped,
        }
    try:
        k = dc_gain(tf)
    except NumericalError:
        k = math.nan
    section.update({
        "model": tf.to_dict(),
        "dc_gain": k,
        "stable": tf.is_stable(),
        "nonminimum_phase": is_nonminimum_phase(tf),
    })
    report = _load_report(out)
    report["identify"] = section
    _save_report(out, report)
    return section


def _plant_for_design(cfg, report):
    """(reduced model object, its RationalTF, description)."""
    if cfg.data.fixture is not None:
        v = fixtures.get(cfg.data.fixture)
        if isinstance(v, (FoptdModel, SoptdModel)):
            return v, v.to_tf(), {"source": "fixture", "fixture": cfg.data.fixture}
    if "identify" not in report:
        raise ValidationError("no identified model found; run 'identify' first")
    full = RationalTF.from_dict(report["identify"]["model"])
    r = cfg.reduction
    red = (reduce_foptd if r.target == "foptd" else reduce_soptd)(full, r.horizon, r.dt)
    return red, red.to_tf(), {"source": "reduction", "target": r.target, "parameters": red.to_dict()}


def _controller(cfg, plant_model):
    c = cfg.controller
    if c.fixture is not None:
        g = fixtures.get(c.fixture)
        if not isinstance(g, PidGains):
            raise ValidationError(f"fixture {c.fixture!r} is not a PID controller")
        return g, {"source": "fixture", "fixture": c.fixture}
    spec = LqrSpec(c.lqr.zeta_d, c.lqr.omega_d, c.lqr.derivative_weight)
    return lqr_pid(plant_model, spec), {"source": "lqr", "spec": c.lqr.model_dump()}


def _bode_csv(out, name, loop, w):
    if isinstance(loop, RationalTF):
        fr = freq_response(loop, w)
        val, ph = fr.value, fr.phase
    else:
        val, ph = loop.response(w), loop.phase(w)
    _write_csv(out / f"design__bode_{name}.csv", ("omega", "magnitude_db", "phase_deg"),
               (w, 20 * np.log10(np.abs(val)), np.degrees(ph)))


def cmd_design(cfg, out):
    """PID + shaper design for the reduced plant -> report['design'] and Bode CSVs."""
    report = _load_report(out)
    model, plant, plant_info = _plant_for_design(cfg, report)
    gains, ctrl_info = _controller(cfg, model)
    G = plant * pid_tf(gains)
    sc = cfg.shaper
    ctx = loop_context(G, sc.omega_search)
    dcfg = ShaperDesignConfig(
        math.radians(sc.phi_md_deg), math.radians(sc.flatness_tol_deg),
        tuple(sc.omega_search), sc.max_evals,
    )
    if sc.fixture is not None:
        fp = fixtures.get(sc.fixture)
        if not isinstance(fp, PhaseShaperParams):
            raise ValidationError(f"fixture {sc.fixture!r} is not a phase shaper")
        params = PhaseShaperParams(fp.q, fp.a, ctx.omega_gc)
        band = flat_band(G, params, dcfg.flatness_tol)
        shaper_info = {"source": "fixture", "fixture": sc.fixture}
    else:
        d = design_shaper(ctx, dcfg)
        params, band = d.params, d.band
        shaper_info = {"source": "design", "evaluations": d.evaluations}
    before = margins(G)
    after = margins(shaped_open_loop(G, params))
    slope = bode_phase_slope(ctx)
    section = {
        "plant": {"model": plant.to_dict(), **plant_info},
        "controller": {"gains": gains.to_dict(), **ctrl_info},
        "shaper": {"params": params.to_dict(), **shaper_info},
        "flat_band": band.to_dict(),
        "margins_before": before.to_dict(),
        "margins_after": after.to_dict(),
        "constraints": {
            "bode_slope": slope,
            "flatness_residual": flatness_residual(params, ctx),
            "gain_condition": params.gain_condition(),
            "margin_constraint": margin_constraint(params, ctx, dcfg.phi_md),
        },
    }
    w = log_grid(1e-3, 1e2, 50)
    _bode_csv(out, "plant", plant, w)
    _bode_csv(out, "plant_pid", G, w)
    _bode_csv(out, "plant_pid_shaper", shaped_open_loop(G, params), w)
    report["design"] = section
    _save_report(out, report)
    return section


def _design_objects(report, order):
    if "design" not in report:
        raise ValidationError("no design found; run 'design' first")
    d = report["design"]
    plant = RationalTF.from_dict(d["plant"]["model"])
    gains = PidGains(**d["controller"]["gains"])
    params = PhaseShaperParams(**d["shaper"]["params"])
    return plant, gains, params


def _realize(params, order):
    return realize_shaper(params, ApproxConfig(order, band_check=order > 1))


def _resolve_pipeline(spec, design_gains, design_params, order):
    if spec.controller == "design":
        gains = design_gains
    else:
        gains = fixtures.get(spec.controller)
        if not isinstance(gains, PidGains):
            raise ValidationError(f"fixture {spec.controller!r} is not a PID controller")
    if spec.shaper == "none":
        shaper = None
    elif spec.shaper == "design":
        shaper = _realize(design_params, order)
    else:
        p = fixtures.get(spec.shaper)
        if not isinstance(p, PhaseShaperParams):
            raise ValidationError(f"fixture {spec.shaper!r} is not a phase shaper")
        shaper = _realize(p, order)
    return gains, shaper


def _metrics_row(scenario, m, stable, error=None):
    row = {"scenario": scenario, "stable": stable, "error": error}
    row.update(m.to_dict() if m is not None else {})
    return row


def cmd_simulate(cfg, out):
    """Iso-damping and step-back scenarios -> CSVs, report['simulate'], metrics.txt."""
    report = _load_report(out)
    sim = cfg.simulation
    order = cfg.shaper.carlson_order
    plant, gains, params = _design_objects(report, order)
    tau_f = cfg.controller.tau_f
    C = pid_tf(gains, tau_f)
    S = _realize(params, order)
    rows = []
    sp = step_setpoint(sim.step, sim.horizon, sim.dt)
    for label, shaper in (("pid", None), ("shaped", S)):
        for m in sim.multipliers:
            name = f"iso_{label}_x{m:g}"
            try:
                res = closed_loop_sim(plant, C, shaper, sp, pade_order=sim.pade_order, gain=m)
            except IsodampError as exc:
                rows.append(_metrics_row(name, None, False, str(exc)))
                continue
            if not res.stable:
                rows.append(_metrics_row(name, None, False, "closed loop unstable"))
            else:
                rows.append(_metrics_row(name, transient_metrics(res.output, 0.0, sim.step), True))
            _write_signals(out, name, res.output, sp, res.controller_output)
    profile = RodDropProfile(**sim.profile.model_dump())
    settling = {}
    for spec in sim.pipelines:
        family = fixtures.plant_family(spec.family)
        g, shaper = _resolve_pipeline(spec, gains, params, order)
        Cp = pid_tf(g, tau_f)
        for P0 in sim.initial_powers:
            name = f"stepback_{spec.name}_p{P0:g}"
            try:
                res = stepback_scenario(family, Cp, shaper, profile, P0, interpolate=sim.interpolate,
                                        horizon=sim.horizon, dt=sim.dt, pade_order=sim.pade_order)
            except IsodampError as exc:
                rows.append(_metrics_row(name, None, False, str(exc)))
                continue
            if not res.stable:
                rows.append(_metrics_row(name, None, False, "closed loop unstable"))
                continue
            rows.append(_metrics_row(name, res.metrics, True))
            if res.metrics is not None:
                settling.setdefault(spec.name, {})[f"{P0:g}"] = res.metrics.settling_time_2pct
            _write_signals(out, name, res.power, res.setpoint, res.controller_output)
    failed = sum(1 for r in rows if r["error"] is not None)
    section = {"metrics": rows, "settling_by_pipeline": settling, "failed_cells": failed,
               "carlson_order": order, "pade_order": sim.pade_order}
    report["simulate"] = section
    _save_report(out, report)
    _write_json(out / "metrics.json", rows)
    _write_metrics_text(out / "metrics.txt", rows)
    if rows and failed == len(rows):
        raise NumericalError("every simulation cell failed")
    return section


def _write_signals(out, name, power, demand, controller_output):
    t = power.t
    _write_csv(out / f"{name}__power.csv", ("time_s", "power_demand", "power"),
               (t, demand.values, power.values))
    # the controller output drives the rods, so it is also the rod command
    if controller_output is not None:
        _write_csv(out / f"{name}__controller_output.csv", ("time_s", "rod_command"),
                   (t, controller_output.values))


def _write_metrics_text(path, rows):
    cols = ("undershoot_pct", "overshoot_pct", "rise_time_10_90", "settling_time_2pct", "steady_state_error_pct")
    width = max([len(r["scenario"]) for r in rows] + [8])
    lines = ["scenario".ljust(width) + "  " + "  ".join(c.rjust(22) for c in cols) + "  stable"]
    for r in rows:
        if r["error"] is not None:
            lines.append(r["scenario"].ljust(width) + "  error: " + r["error"])
            continue
        vals = []
        for c in cols:
            v = r.get(c)
            vals.append(("inf" if v is None else f"{v:.6g}").rjust(22))
        lines.append(r["scenario"].ljust(width) + "  " + "  ".join(vals) + f"  {r['stable']}")
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------- entry point

STAGES = {"identify": (cmd_identify,), "design": (cmd_design,), "simulate": (cmd_simulate,),
          "all": (cmd_identify, cmd_design, cmd_simulate)}


def build_parser():
    p = argparse.ArgumentParser(prog="isodamp", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="store_true", help="print version and fixture-catalog hash")
    p.add_argument("command", nargs="?", choices=sorted(STAGES))
    p.add_argument("--config", type=Path, help="JSON pipeline configuration")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--fixture", help="use a fixture model as the data source")
    p.add_argument("--pade-order", type=int, help="Pade order for dead times in simulation")
    p.add_argument("--carlson-order", type=int, help="rational order of the shaper realization")
    return p


def resolve_config(args):
    raw = {}
    if args.config is not None:
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(raw, dict):
            raise ValidationError("config must be a JSON object")
    if args.fixture is not None:
        raw["data"] = {"fixture": args.fixture}
    if args.pade_order is not None:
        raw.setdefault("simulation", {})["pade_order"] = args.pade_order
    if args.carlson_order is not None:
        raw.setdefault("shaper", {})["carlson_order"] = args.carlson_order
    try:
        return PipelineConfig.model_validate(raw)
    except PydanticValidationError as exc:
        raise ValidationError(f"invalid configuration:\n{exc}") from None


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.version:
        print(f"isodamp {__version__} (fixtures {fixtures.catalog_hash()[:16]})")
        return EXIT_OK
    if args.command is None or args.out is None:
        print("error: a command and --out are required", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        cfg = resolve_config(args)
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "config.resolved.json", cfg.model_dump(mode="json"))
        report = _load_report(out)
        report["config"] = cfg.model_dump(mode="json")
        report["version"] = __version__
        report["fixture_catalog"] = fixtures.catalog_hash()
        _save_report(out, report)
        for stage in STAGES[args.command]:
            stage(cfg, out)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
