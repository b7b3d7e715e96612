"""Published reactor models, controllers and shapers, loaded from JSON data files.

Each file holds one document ``{name, label, kind, parameters[, power_pct]}``;
see docs/fixture_schema.md. The directory can be overridden with the
``ISODAMP_DATA_DIR`` environment variable.
"""

import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import FixtureError, MissingFixtureError
from .lti import RationalTF, TimeSeries, dc_gain, rationalize, simulate, to_state_space
from .reduction import FoptdModel, SoptdModel
from .shaper import PhaseShaperParams, loop_context
from .sysid import is_nonminimum_phase
from .tuning import PidGains, pid_tf

KINDS = ("rational_tf", "foptd", "soptd", "pid", "shaper")
POWER_LEVELS = (100, 90, 80, 70)
DC_TOL = 0.005


def data_dir():
    env = os.environ.get("ISODAMP_DATA_DIR")
    if env:
        return Path(env)
    return Path(str(resources.files("isodamp") / "data" / "fixtures"))


@dataclass(frozen=True)
class FixtureEntry:
    name: str
    label: str
    kind: str
    value: object
    power_pct: float = None


@dataclass(frozen=True)
class FixtureCatalog:
    entries: dict
    digest: str
    report: dict = field(default_factory=dict)

    def get(self, name):
        try:
            return self.entries[name].value
        except KeyError:
            raise MissingFixtureError(name, self.entries) from None

    def names(self):
        return sorted(self.entries)


def _parse(doc, path):
    for key in ("name", "kind", "parameters"):
        if key not in doc:
            raise FixtureError(f"{path.name}: missing field {key!r}")
    kind = doc["kind"]
    if kind not in KINDS:
        raise FixtureError(f"{path.name}: unknown kind {kind!r} (expected one of {KINDS})")
    p = doc["parameters"]
    try:
        if kind == "rational_tf":
            value = RationalTF(p["num"], p["den"], p.get("delay", 0.0))
        elif kind == "foptd":
            value = FoptdModel(p["K"], p["T"], p["L"])
        elif kind == "soptd":
            value = SoptdModel(p["K"], p["zeta"], p["omega_n"], p["L"])
        elif kind == "pid":
            value = PidGains(p["kp"], p["ki"], p["kd"])
        else:
            value = dict(p)
    except (KeyError, TypeError, ValueError) as exc:
        raise FixtureError(f"{path.name}: bad parameters ({exc})") from None
    return FixtureEntry(doc["name"], doc.get("label", ""), kind, value, doc.get("power_pct"))


def _resolve_shaper(entry, entries):
    ctx = entry.value.get("context", {})
    try:
        plant = entries[ctx["plant"]].value.to_tf()
        pid = entries[ctx["controller"]].value
    except KeyError as exc:
        raise FixtureError(f"{entry.name}: design context refers to missing fixture {exc}") from None
    w = loop_context(plant * pid_tf(pid)).omega_gc
    value = PhaseShaperParams(float(entry.value["q"]), float(entry.value["a"]), w)
    return FixtureEntry(entry.name, entry.label, entry.kind, value, entry.power_pct)


def self_check(entries):
    """DC-gain cross-check (raises) plus stability / NMP report (informational)."""
    report = {}
    for p in POWER_LEVELS:
        full, fo, so = (entries.get(f"G{p}_{k}") for k in ("full", "foptd", "soptd"))
        if full is None:
            continue
        tf = full.value
        k = dc_gain(tf)
        row = {
            "dc_gain": k,
            "stable": tf.is_stable(),
            "max_pole_real": float(np.max(tf.poles().real)),
            "nonminimum_phase": is_nonminimum_phase(tf),
        }
        for red in (fo, so):
            if red is None:
                continue
            rel = abs(k - red.value.K) / abs(red.value.K)
            row[f"dc_mismatch_{red.kind}"] = rel
            if rel > DC_TOL:
                raise FixtureError(
                    f"{full.name}: DC gain {k:.4g} disagrees with {red.name} K={red.value.K:.4g} "
                    f"({100 * rel:.2f}% > {100 * DC_TOL:.1f}%); check the coefficient transcription"
                )
        report[full.name] = row
    return report


def load_catalog(directory=None):
    d = Path(directory) if directory is not None else data_dir()
    files = sorted(d.glob("*.json"))
    if not files:
        raise FixtureError(f"no fixture files in {d}")
    h = hashlib.sha256()
    raw = {}
    for f in files:
        data = f.read_bytes()
        h.update(f.name.encode() + b"\0" + data)
        try:
            doc = json.loads(data)
        except json.JSONDecodeError as exc:
            raise FixtureError(f"{f.name}: invalid JSON ({exc})") from None
        entry = _parse(doc, f)
        if entry.name in raw:
            raise FixtureError(f"duplicate fixture name {entry.name!r}")
        raw[entry.name] = entry
    entries = {
        n: (_resolve_shaper(e, raw) if e.kind == "shaper" else e) for n, e in raw.items()
    }
    report = self_check(entries)
    return FixtureCatalog(entries, h.hexdigest(), report)


@lru_cache(maxsize=4)
def _cached(directory):
    return load_catalog(directory)


def catalog():
    return _cached(str(data_dir()))


def get(name):
    """Immutable fixture object by name."""
    return catalog().get(name)


def names():
    return catalog().names()


def catalog_hash():
    return catalog().digest


def plant_family(kind="foptd"):
    """{initial power %: RationalTF} for kind in full / foptd / soptd."""
    out = {}
    for p in POWER_LEVELS:
        v = get(f"G{p}_{kind}")
        out[p] = v if isinstance(v, RationalTF) else v.to_tf()
    return out


def synthetic_rod_drop(
    plant, *, initial_power=100.0, drop_fraction=0.3, ramp_duration=3.0, start_time=1.0,
    Ts=0.05, duration=20.0, dither=0.01, noise_std=0.0, seed=0, pade_order=4,
):
    """Rod-position / power records generated by simulating ``plant``.

    Returns (time_s, rod_fraction, power_pct) arrays. The rod command is a
    truncated ramp plus a small random binary dither for excitation; power is
    the initial level plus the plant's deviation response and optional noise.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration / Ts)) + 1
    t = Ts * np.arange(n)
    rod = drop_fraction * np.clip((t - start_time) / ramp_duration, 0.0, 1.0)
    if dither:
        # first sample left at the resting position so deviation variables stay consistent
        d = dither * rng.choice([-1.0, 1.0], size=n)
        d[0] = 0.0
        rod = rod + d
    ss = to_state_space(rationalize(plant, pade_order))
    y = simulate(ss, TimeSeries(0.0, Ts, rod)).values
    power = initial_power + y
    if noise_std:
        power = power + rng.normal(0.0, noise_std, size=n)
    return t, rod, power
