"""Scenario front end: JSON configs in, CSV/JSON data products plus a manifest out.

Five scenario kinds cover the package's observables:

  dispersion         exact and semiclassical branch maps omega_n(K)
  wkb_map            semiclassical root diagnostics over a wavenumber grid
  decompose          spectral densities of bound states in the continuum basis
  evolve             two-excitation wavepacket propagation with peak tracking
  potential_profile  normalized pair-potential line cuts

A config names exactly one kind and is validated completely before any
compute starts.  Every product is then built in memory and written only at
the end, so a failed run leaves no partial outputs.  The manifest JSON,
written last, lists each product file with its byte count and SHA-256
digest; re-running a scenario with the same config byte-reproduces every
CSV (fixed iteration orders, no randomness anywhere in the pipeline).

Frequencies, lengths, and the van der Waals coefficient enter the config as
tagged quantities, e.g. {"value": 30.0, "unit": "MHz_2pi"}; a dimensionless
entry mode accepts the coupling ratios and the interaction figure of merit
directly.  Exit codes follow the shared error taxonomy: configuration
problems exit 2, validity-window violations exit 3, numerical-convergence
failures exit 4.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigError, RydpairError
from .model import (PolaritonParams, blockade_radius, effective_mass_energy,
                    repulsive_core_predicate)
from . import wkb
from .relsolver import (coulomb_dispersion, solve_state, build_eigenbasis,
                        decompose_many)
from .propagator import EvolutionConfig, TwoExcitationField, evolve, scale_params
from .wavepacket import (VariationalSpec, variational_ss, stored_pair,
                         track_peaks, extract_velocity, detect_double_peak)

__all__ = [
    "ScenarioConfig", "KINDS", "MANIFEST_SCHEMA",
    "parse_scenario", "run_scenario", "main",
]

KINDS = ("dispersion", "decompose", "wkb_map", "evolve", "potential_profile")

#: subcommand name -> config kind it runs
SUBCOMMAND_KINDS = {
    "dispersion": "dispersion",
    "wkb": "wkb_map",
    "decompose": "decompose",
    "evolve": "evolve",
    "potential": "potential_profile",
}

MANIFEST_SCHEMA = "manifest-1"

#: angular-frequency units -> rad/us
FREQUENCY_UNITS = {
    "rad_per_us": 1.0,
    "kHz_2pi": 2.0e-3 * math.pi,
    "MHz_2pi": 2.0 * math.pi,
    "GHz_2pi": 2.0e3 * math.pi,
}
#: length units -> um
LENGTH_UNITS = {"um": 1.0, "mm": 1.0e3}
#: van der Waals coefficient units -> rad/us * um^6
C6_UNITS = {
    "rad_per_us_um6": 1.0,
    "MHz_2pi_um6": 2.0 * math.pi,
    "GHz_2pi_um6": 2.0e3 * math.pi,
}

_FLOAT_FORMAT = ".12g"


# ---------------------------------------------------------------------------
# config primitives


def _fail(where: str, message: str) -> ConfigError:
    return ConfigError(f"{where}: {message}")


def _section(doc: Any, where: str, *, required: Sequence[str],
             optional: Sequence[str] = ()) -> dict:
    """A JSON object with exactly the allowed keys; unknown keys fail fast."""
    if not isinstance(doc, dict):
        raise _fail(where, f"expected an object, got {type(doc).__name__}")
    allowed = set(required) | set(optional)
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise _fail(where, f"unknown keys {unknown}; allowed keys are "
                           f"{sorted(allowed)}")
    missing = sorted(set(required) - set(doc))
    if missing:
        raise _fail(where, f"missing required keys {missing}")
    return doc


def _number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise _fail(where, f"expected a number, got {value!r}")
    out = float(value)
    if not math.isfinite(out):
        raise _fail(where, f"expected a finite number, got {value!r}")
    return out


def _integer(value: Any, where: str, *, minimum: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise _fail(where, f"expected an integer, got {value!r}")
    if value < minimum:
        raise _fail(where, f"expected an integer >= {minimum}, got {value}")
    return value


def _tagged(doc: Any, units: dict, where: str) -> float:
    """Convert a {"value": v, "unit": u} quantity into working units."""
    sec = _section(doc, where, required=("value", "unit"))
    unit = sec["unit"]
    if unit not in units:
        raise _fail(where, f"unknown unit {unit!r}; supported units are "
                           f"{sorted(units)}")
    return _number(sec["value"], f"{where}.value") * units[unit]


def _linspace(doc: Any, where: str) -> np.ndarray:
    sec = _section(doc, where, required=("start", "stop", "num"))
    start = _number(sec["start"], f"{where}.start")
    stop = _number(sec["stop"], f"{where}.stop")
    num = _integer(sec["num"], f"{where}.num", minimum=2)
    if not start < stop:
        raise _fail(where, f"start must be below stop, got [{start}, {stop}]")
    return np.linspace(start, stop, num)


def _branches(value: Any, where: str) -> tuple[int, ...]:
    if not isinstance(value, list) or not value:
        raise _fail(where, "expected a non-empty list of branch indices")
    out = tuple(_integer(v, f"{where}[{i}]", minimum=1)
                for i, v in enumerate(value))
    if len(set(out)) != len(out):
        raise _fail(where, f"branch indices must be unique, got {list(out)}")
    return tuple(sorted(out))


def _fraction_pair(value: Any, where: str) -> tuple[float, float]:
    if not isinstance(value, list) or len(value) != 2:
        raise _fail(where, "expected [low, high]")
    lo = _number(value[0], f"{where}[0]")
    hi = _number(value[1], f"{where}[1]")
    return lo, hi


# ---------------------------------------------------------------------------
# parameter entry: dimensionless groups or tagged physical quantities


def _parse_params(doc: Any) -> PolaritonParams:
    where = "params"
    if not isinstance(doc, dict):
        raise _fail(where, "expected an object")
    mode = doc.get("mode")
    if mode == "dimensionless":
        sec = _section(doc, where, required=(
            "mode", "omega_c_over_g", "figure_of_merit", "omega_c_over_delta"),
            optional=("gamma_over_delta", "gamma_r_over_delta", "delta"))
        kwargs = dict(
            omega_c_over_g=_number(sec["omega_c_over_g"],
                                   f"{where}.omega_c_over_g"),
            figure_of_merit=_number(sec["figure_of_merit"],
                                    f"{where}.figure_of_merit"),
            omega_c_over_delta=_number(sec["omega_c_over_delta"],
                                       f"{where}.omega_c_over_delta"),
            gamma_over_delta=_number(sec.get("gamma_over_delta", 0.0),
                                     f"{where}.gamma_over_delta"),
            gamma_r_over_delta=_number(sec.get("gamma_r_over_delta", 0.0),
                                       f"{where}.gamma_r_over_delta"),
        )
        if "delta" in sec:
            kwargs["delta"] = _tagged(sec["delta"], FREQUENCY_UNITS,
                                      f"{where}.delta")
        return PolaritonParams.from_dimensionless(**kwargs)
    if mode == "physical":
        sec = _section(doc, where, required=("mode", "g", "omega_c", "delta"),
                       optional=("gamma", "gamma_r", "c6", "blockade_radius"))
        g = _tagged(sec["g"], FREQUENCY_UNITS, f"{where}.g")
        omega_c = _tagged(sec["omega_c"], FREQUENCY_UNITS, f"{where}.omega_c")
        delta = _tagged(sec["delta"], FREQUENCY_UNITS, f"{where}.delta")
        gamma = (_tagged(sec["gamma"], FREQUENCY_UNITS, f"{where}.gamma")
                 if "gamma" in sec else 0.0)
        gamma_r = (_tagged(sec["gamma_r"], FREQUENCY_UNITS, f"{where}.gamma_r")
                   if "gamma_r" in sec else 0.0)
        if ("c6" in sec) == ("blockade_radius" in sec):
            raise _fail(where, "physical mode needs exactly one of 'c6' or "
                               "'blockade_radius'")
        if "c6" in sec:
            c6 = _tagged(sec["c6"], C6_UNITS, f"{where}.c6")
        else:
            rb = _tagged(sec["blockade_radius"], LENGTH_UNITS,
                         f"{where}.blockade_radius")
            if rb <= 0.0:
                raise _fail(f"{where}.blockade_radius", "must be positive")
            c6 = (2.0 * omega_c**2 / delta) * rb**6
        return PolaritonParams(g=g, omega_c=omega_c, delta=delta, gamma=gamma,
                               gamma_r=gamma_r, c6=c6)
    raise _fail(f"{where}.mode",
                "expected 'dimensionless' or 'physical', got "
                f"{mode!r}")


# ---------------------------------------------------------------------------
# kind payloads, fully validated at parse time


@dataclass(frozen=True)
class BranchGridJob:
    """Branches sampled over a normalized center-of-mass wavenumber grid."""

    k_bars: np.ndarray
    branches: tuple[int, ...]


@dataclass(frozen=True)
class DecomposeJob:
    k_bar: float
    branches: tuple[int, ...]
    omega_bars: np.ndarray


@dataclass(frozen=True)
class EvolveJob:
    scaled: PolaritonParams
    zeta: float
    n_grid: int
    box: float
    spacing: float
    prep_kind: str
    spec: Optional[VariationalSpec]
    com_center: float
    com_sigma: float
    config: EvolutionConfig
    transient_fraction: float
    fit_window: tuple[float, float]
    track_enabled: bool
    prediction_branch: Optional[int]


@dataclass(frozen=True)
class PotentialJob:
    omega: float
    x: np.ndarray


@dataclass(frozen=True)
class ScenarioConfig:
    """One validated scenario: a kind, its parameters, and its payload."""

    kind: str
    params: PolaritonParams
    payload: Any
    source: dict = field(repr=False)
    threads: int = 1
    snapshot_format: str = "npz"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind: expected one of {list(KINDS)}, got "
                              f"{self.kind!r}")
        if self.threads < 1:
            raise ConfigError(f"threads: expected >= 1, got {self.threads}")
        if self.snapshot_format not in ("npz", "csv"):
            raise ConfigError("snapshot_format: expected 'npz' or 'csv', got "
                              f"{self.snapshot_format!r}")


def _parse_branch_grid(doc: Any, where: str) -> BranchGridJob:
    sec = _section(doc, where, required=("k_bar", "branches"))
    return BranchGridJob(k_bars=_linspace(sec["k_bar"], f"{where}.k_bar"),
                         branches=_branches(sec["branches"],
                                            f"{where}.branches"))


def _parse_decompose(doc: Any, params: PolaritonParams) -> DecomposeJob:
    where = "spectral"
    sec = _section(doc, where, required=("k_bar", "branches",
                                         "omega_bar_window", "num"))
    k_bar = _number(sec["k_bar"], f"{where}.k_bar")
    lo, hi = _fraction_pair(sec["omega_bar_window"],
                            f"{where}.omega_bar_window")
    if not lo < hi:
        raise _fail(f"{where}.omega_bar_window",
                    f"window must increase, got [{lo}, {hi}]")
    num = _integer(sec["num"], f"{where}.num", minimum=8)
    return DecomposeJob(k_bar=k_bar,
                        branches=_branches(sec["branches"],
                                           f"{where}.branches"),
                        omega_bars=np.linspace(lo, hi, num))


def _parse_evolve(doc: dict, params: PolaritonParams) -> EvolveJob:
    box_sec = _section(doc.get("box"), "box",
                       required=("length_over_rb", "n_grid"))
    evo_sec = _section(doc.get("evolution"), "evolution",
                       required=("t_final_over_rb_c",),
                       optional=("zeta", "zeta_k_bar", "tau_over_h_c",
                                 "snapshot_fractions",
                                 "snapshot_times_over_rb_c", "cutoff_over_rb",
                                 "boundary", "absorb_width_over_rb",
                                 "norm_every"))
    prep = doc.get("prep")
    if not isinstance(prep, dict) or "type" not in prep:
        raise _fail("prep", "expected an object with a 'type' key")

    zeta = _number(evo_sec.get("zeta", 1.0), "evolution.zeta")
    zeta_k_bar = _number(evo_sec.get("zeta_k_bar", 0.0), "evolution.zeta_k_bar")
    scaled = scale_params(params, zeta, k_bar=zeta_k_bar)
    rb = blockade_radius(scaled)
    light = scaled.light_shift

    length_over_rb = _number(box_sec["length_over_rb"], "box.length_over_rb")
    if length_over_rb <= 0.0:
        raise _fail("box.length_over_rb", "must be positive")
    n_grid = _integer(box_sec["n_grid"], "box.n_grid", minimum=16)
    box = length_over_rb * rb
    spacing = box / n_grid

    spec = None
    if prep["type"] == "variational":
        sec = _section(prep, "prep", required=("type", "branch",
                                               "sigma_over_light_shift"),
                       optional=("omega_center_over_light_shift",
                                 "omega_window_over_light_shift", "nodes",
                                 "com_over_box"))
        sigma = _number(sec["sigma_over_light_shift"],
                        "prep.sigma_over_light_shift") * light
        center = _number(sec.get("omega_center_over_light_shift", 0.0),
                         "prep.omega_center_over_light_shift") * light
        window = None
        if "omega_window_over_light_shift" in sec:
            lo, hi = _fraction_pair(sec["omega_window_over_light_shift"],
                                    "prep.omega_window_over_light_shift")
            window = (lo * light, hi * light)
        spec = VariationalSpec(
            branch=_integer(sec["branch"], "prep.branch", minimum=1),
            sigma=sigma, omega_center=center, omega_window=window,
            nodes=_integer(sec.get("nodes", 129), "prep.nodes", minimum=64))
        com_center = _number(sec.get("com_over_box", 0.5),
                             "prep.com_over_box") * box
        com_sigma = 0.0
        prediction_branch = spec.branch
    elif prep["type"] == "stored_pair":
        sec = _section(prep, "prep", required=("type", "com_over_box",
                                               "com_width_over_rb"))
        com_center = _number(sec["com_over_box"], "prep.com_over_box") * box
        com_sigma = _number(sec["com_width_over_rb"],
                            "prep.com_width_over_rb") * rb
        if com_sigma <= 0.0:
            raise _fail("prep.com_width_over_rb", "must be positive")
        prediction_branch = None
    else:
        raise _fail("prep.type", "expected 'variational' or 'stored_pair', "
                                 f"got {prep['type']!r}")

    rb_over_c = rb / scaled.c
    tau = _number(evo_sec.get("tau_over_h_c", 2.0),
                  "evolution.tau_over_h_c") * spacing / scaled.c
    if tau <= 0.0:
        raise _fail("evolution.tau_over_h_c", "must be positive")
    t_final = _number(evo_sec["t_final_over_rb_c"],
                      "evolution.t_final_over_rb_c") * rb_over_c
    steps = round(t_final / tau)
    if steps < 1:
        raise _fail("evolution.t_final_over_rb_c",
                    "final time is below one step")
    t_final = steps * tau

    if ("snapshot_fractions" in evo_sec
            and "snapshot_times_over_rb_c" in evo_sec):
        raise _fail("evolution", "give snapshot_fractions or "
                                 "snapshot_times_over_rb_c, not both")
    if "snapshot_times_over_rb_c" in evo_sec:
        raw = evo_sec["snapshot_times_over_rb_c"]
        if not isinstance(raw, list) or not raw:
            raise _fail("evolution.snapshot_times_over_rb_c",
                        "expected a non-empty list")
        wanted = [_number(v, f"evolution.snapshot_times_over_rb_c[{i}]")
                  * rb_over_c for i, v in enumerate(raw)]
    else:
        raw = evo_sec.get("snapshot_fractions", [0.25, 0.5, 1.0])
        if not isinstance(raw, list) or not raw:
            raise _fail("evolution.snapshot_fractions",
                        "expected a non-empty list")
        fractions = [_number(v, f"evolution.snapshot_fractions[{i}]")
                     for i, v in enumerate(raw)]
        if any(not 0.0 < f <= 1.0 for f in fractions):
            raise _fail("evolution.snapshot_fractions",
                        "fractions must lie in (0, 1]")
        wanted = [f * t_final for f in fractions]
    snapshot_times = tuple(sorted({max(1, round(t / tau)) * tau
                                   for t in wanted}))

    cutoff = None
    if "cutoff_over_rb" in evo_sec:
        cutoff = _number(evo_sec["cutoff_over_rb"],
                         "evolution.cutoff_over_rb") * rb
    config = EvolutionConfig(
        tau=tau, t_final=t_final, zeta=zeta, cutoff_radius=cutoff,
        snapshot_times=snapshot_times,
        boundary=evo_sec.get("boundary", "open"),
        absorb_width=_number(evo_sec.get("absorb_width_over_rb", 0.0),
                             "evolution.absorb_width_over_rb") * rb,
        norm_every=_integer(evo_sec.get("norm_every", 64),
                            "evolution.norm_every", minimum=1))

    track_sec = _section(doc.get("track", {}), "track", required=(),
                         optional=("enabled", "transient_fraction",
                                   "fit_window"))
    enabled = track_sec.get("enabled", True)
    if not isinstance(enabled, bool):
        raise _fail("track.enabled", f"expected a boolean, got {enabled!r}")
    transient = _number(track_sec.get("transient_fraction", 0.1),
                        "track.transient_fraction")
    if not 0.0 <= transient < 1.0:
        raise _fail("track.transient_fraction", "must lie in [0, 1)")
    fit_window = (0.0, 1.0)
    if "fit_window" in track_sec:
        fit_window = _fraction_pair(track_sec["fit_window"],
                                    "track.fit_window")
        if not 0.0 <= fit_window[0] < fit_window[1] <= 1.0:
            raise _fail("track.fit_window", "expected 0 <= low < high <= 1")
    if enabled and len(snapshot_times) < 3:
        raise _fail("evolution", "tracking needs at least 3 snapshots; "
                                 "disable track or add snapshot times")

    return EvolveJob(scaled=scaled, zeta=zeta, n_grid=n_grid, box=box,
                     spacing=spacing, prep_kind=prep["type"], spec=spec,
                     com_center=com_center, com_sigma=com_sigma,
                     config=config, transient_fraction=transient,
                     fit_window=fit_window, track_enabled=enabled,
                     prediction_branch=prediction_branch)


def _parse_potential(doc: Any, params: PolaritonParams) -> PotentialJob:
    where = "profile"
    sec = _section(doc, where, required=("r_over_rb",),
                   optional=("omega_bar",))
    x = _linspace(sec["r_over_rb"], f"{where}.r_over_rb")
    if x[0] <= 0.0:
        raise _fail(f"{where}.r_over_rb", "separations must be positive")
    near_pole = np.abs(x - 1.0) < 1e-6
    if near_pole.any():
        raise _fail(f"{where}.r_over_rb",
                    "grid touches the pole at r/rb = 1; shift the grid")
    omega = _number(sec.get("omega_bar", 0.0),
                    f"{where}.omega_bar") * params.light_shift
    return PotentialJob(omega=omega, x=x)


def parse_scenario(doc: Any, *, kind: Optional[str] = None, threads: int = 1,
                   snapshot_format: str = "npz") -> ScenarioConfig:
    """Validate a config document into a runnable scenario (fail-fast).

    `kind`, when given, is the kind implied by the subcommand; a config
    naming a different kind is rejected.  Everything — parameters, grids,
    the evolution schedule, the variational window — is checked here,
    before any compute starts.
    """
    top = _section(doc, "config", required=("kind", "params"),
                   optional=("grid", "spectral", "box", "prep", "evolution",
                             "track", "profile"))
    declared = top["kind"]
    if declared not in KINDS:
        raise _fail("kind", f"expected one of {list(KINDS)}, got {declared!r}")
    if kind is not None and declared != kind:
        raise _fail("kind", f"config declares {declared!r} but the "
                            f"subcommand runs {kind!r}")
    params = _parse_params(top["params"])

    sections = {"dispersion": ("grid",), "wkb_map": ("grid",),
                "decompose": ("spectral",),
                "evolve": ("box", "prep", "evolution", "track"),
                "potential_profile": ("profile",)}[declared]
    stray = [key for key in ("grid", "spectral", "box", "prep", "evolution",
                             "track", "profile")
             if key in top and key not in sections]
    if stray:
        raise _fail("config", f"keys {stray} do not belong to kind "
                              f"{declared!r}")
    for key in sections:
        if key not in top and key != "track":
            raise _fail("config", f"kind {declared!r} needs a {key!r} section")

    if declared in ("dispersion", "wkb_map"):
        payload = _parse_branch_grid(top["grid"], "grid")
    elif declared == "decompose":
        payload = _parse_decompose(top["spectral"], params)
    elif declared == "evolve":
        payload = _parse_evolve(top, params)
    else:
        payload = _parse_potential(top["profile"], params)
    return ScenarioConfig(kind=declared, params=params, payload=payload,
                          source=top, threads=threads,
                          snapshot_format=snapshot_format)


# ---------------------------------------------------------------------------
# deterministic product encoding


def _fmt(value: Any) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), _FLOAT_FORMAT)


def _csv_bytes(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> bytes:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    return ("\n".join(lines) + "\n").encode("ascii")


def _json_bytes(obj: Any) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("ascii")


@dataclass(frozen=True)
class Product:
    name: str
    data: bytes
    schema: str


def _run_pool(tasks: Sequence, worker, threads: int) -> list:
    """Run tasks preserving order; the thread budget caps the pool width."""
    if threads <= 1 or len(tasks) <= 1:
        return [worker(task) for task in tasks]
    with ThreadPoolExecutor(max_workers=min(threads, len(tasks))) as pool:
        return list(pool.map(worker, tasks))


# ---------------------------------------------------------------------------
# runners


def _run_dispersion(sc: ScenarioConfig) -> list[Product]:
    job: BranchGridJob = sc.payload
    params = sc.params
    mu, light = params.momentum_unit, params.light_shift

    def worker(task):
        n, method = task
        rows = []
        for k_bar in job.k_bars:
            if method == "exact":
                omega = coulomb_dispersion(params, k_bar * mu, n)
            else:
                omega = wkb.wkb_dispersion(params, k_bar * mu, n).omega
            rows.append((k_bar, n, method, omega / light))
        return rows

    tasks = [(n, method) for n in job.branches for method in ("exact", "wkb")]
    rows = [row for chunk in _run_pool(tasks, worker, sc.threads)
            for row in chunk]
    data = _csv_bytes(("k_bar", "branch", "method", "omega_bar"), rows)
    return [Product("dispersion.csv", data, "dispersion-1")]


def _run_wkb_map(sc: ScenarioConfig) -> list[Product]:
    job: BranchGridJob = sc.payload
    params = sc.params
    mu, light = params.momentum_unit, params.light_shift

    def worker(n):
        rows = []
        for k_bar in job.k_bars:
            sol = wkb.wkb_dispersion(params, k_bar * mu, n)
            prob = effective_mass_energy(params, sol.omega, k_bar * mu)
            rows.append((k_bar, n, sol.omega / light, sol.phase_integral,
                         sol.r0 / prob.rb, prob.u, sol.variant))
        return rows

    rows = [row for chunk in _run_pool(list(job.branches), worker, sc.threads)
            for row in chunk]
    data = _csv_bytes(("k_bar", "branch", "omega_bar", "phase_integral",
                       "r0_over_rb", "u_loc", "variant"), rows)
    return [Product("wkb_map.csv", data, "wkb-map-1")]


def _run_decompose(sc: ScenarioConfig) -> list[Product]:
    job: DecomposeJob = sc.payload
    params = sc.params
    mu, light = params.momentum_unit, params.light_shift
    big_k = job.k_bar * mu

    def solve_target(n):
        omega = coulomb_dispersion(params, big_k, n)
        return omega, solve_state(params, omega, big_k, with_components=True)

    solved = _run_pool(list(job.branches), solve_target, sc.threads)
    basis = build_eigenbasis(params, big_k, job.omega_bars * light)
    densities = decompose_many([state for _, state in solved], basis)

    rows = []
    summary = []
    for n, (omega, _), dens in zip(job.branches, solved, densities):
        for om, d in zip(dens.omegas, dens.density):
            rows.append((om / light, n, d * light))
        summary.append({
            "branch": n,
            "omega_bar_exact": omega / light,
            "peak_omega_bar": dens.peak_omega / light,
            "fwhm_over_light_shift": dens.fwhm / light,
            "captured_fraction": dens.total,
            "branch_spacing_over_light_shift":
                None if math.isnan(dens.branch_spacing)
                else dens.branch_spacing / light,
        })
    density_csv = _csv_bytes(("omega_bar", "branch", "density_light"), rows)
    meta = {"k_bar": job.k_bar, "omega_bar_cell":
            float(job.omega_bars[1] - job.omega_bars[0]), "lines": summary}
    return [Product("spectral_density.csv", density_csv, "spectral-density-1"),
            Product("decompose_summary.json", _json_bytes(meta),
                    "decompose-summary-1")]


def _snapshot_products(snapshots: Sequence[TwoExcitationField],
                       job: EvolveJob, fmt: str) -> list[Product]:
    rb = blockade_radius(job.scaled)
    rb_over_c = rb / job.scaled.c
    products = []
    meta = []
    for i, snap in enumerate(snapshots):
        if fmt == "npz":
            name = f"snapshot_{i:02d}.npz"
            buf = _npz_bytes(snap)
            schema = "snapshot-npz-1"
        else:
            name = f"snapshot_{i:02d}.csv"
            buf = _csv_bytes(
                tuple(f"col{j}" for j in range(snap.n)),
                np.abs(snap.ee))
            schema = "snapshot-csv-1"
        products.append(Product(name, buf, schema))
        meta.append({"file": name, "t_us": snap.t,
                     "t_over_rb_c": snap.t / rb_over_c,
                     "h_um": snap.h, "n": snap.n})
    index = {"format": fmt, "rb_um": rb, "box_um": job.box,
             "zeta": job.zeta, "snapshots": meta}
    products.append(Product("snapshots.json", _json_bytes(index),
                            "snapshot-index-1"))
    return products


def _npz_bytes(snap: TwoExcitationField) -> bytes:
    buf = io.BytesIO()
    np.savez(buf, ee=snap.ee, es=snap.es, se=snap.se, ss=snap.ss,
             t=np.float64(snap.t), h=np.float64(snap.h))
    return buf.getvalue()


def _run_evolve(sc: ScenarioConfig) -> list[Product]:
    job: EvolveJob = sc.payload
    params = job.scaled
    rb = blockade_radius(params)
    rb_over_c = rb / params.c

    if job.prep_kind == "variational":
        state = variational_ss(job.spec, params, job.n_grid, job.spacing,
                               com_center=job.com_center)
    else:
        state = stored_pair(job.n_grid, job.spacing, job.com_center,
                            job.com_sigma)
    result = evolve(state, params, job.config)

    products = []
    norm_rows = [(t, t / rb_over_c, n, d) for t, n, d in
                 zip(result.times, result.norms, result.discarded)]
    products.append(Product("norms.csv",
                            _csv_bytes(("t_us", "t_over_rb_c", "norm",
                                        "discarded"), norm_rows), "norms-1"))
    products.extend(_snapshot_products(result.snapshots, job,
                                       sc.snapshot_format))

    if job.track_enabled:
        track = track_peaks(result.snapshots, params,
                            transient_fraction=job.transient_fraction)
        fit = extract_velocity(track, window=job.fit_window)
        track_rows = [(t, t / rb_over_c, x, x / rb)
                      for t, x in zip(track.times, track.positions)]
        products.append(Product(
            "track.csv",
            _csv_bytes(("t_us", "t_over_rb_c", "position_um",
                        "position_over_rb"), track_rows), "track-1"))
        velocity = {
            "velocity_um_per_us": fit.velocity,
            "velocity_over_vg": fit.velocity / params.v_g,
            "stderr_over_vg": fit.stderr / params.v_g,
            "nonlinearity": fit.nonlinearity,
            "n_snapshots": len(track.times),
            "fit_window": list(job.fit_window),
            "rows_used": int(track.rows_used),
        }
        if job.prediction_branch is not None:
            pred = wkb.wkb_branch_velocity(params, job.prediction_branch,
                                           omega=job.spec.omega_center)
            velocity["branch"] = job.prediction_branch
            velocity["predicted_velocity_um_per_us"] = pred
            velocity["predicted_velocity_over_vg"] = pred / params.v_g
        products.append(Product("velocity.json", _json_bytes(velocity),
                                "velocity-1"))

    last = result.snapshots[-1] if result.snapshots else None
    if last is not None:
        metric = detect_double_peak(last, params)
        double_peak = {
            "t_us": last.t,
            "t_over_rb_c": last.t / rb_over_c,
            "n_peaks": int(metric.n_peaks),
            "peak_positions_over_rb": [p / rb for p in metric.peak_positions],
            "dip_ratio": metric.dip_ratio,
            "is_double_peaked": bool(metric.is_double_peaked),
        }
        if job.prep_kind == "variational":
            omega = job.spec.omega_center
            big_k = wkb.wkb_wavenumber(params, omega, job.spec.branch)
            double_peak["repulsive_core_predicted"] = bool(
                repulsive_core_predicate(params, omega, big_k))
        products.append(Product("double_peak.json", _json_bytes(double_peak),
                                "double-peak-1"))
    return products


def _run_potential(sc: ScenarioConfig) -> list[Product]:
    job: PotentialJob = sc.payload
    params = sc.params
    rb = blockade_radius(params, job.omega)
    pole = params.c6 / rb**6
    rows = []
    for x in job.x:
        r = x * rb
        v = params.c6 / (r**6 - rb**6)
        rows.append((x, r, v / pole, v, 1.0 / (6.0 * (x - 1.0)), x**-6))
    data = _csv_bytes(("r_over_rb", "r_um", "v_eff_over_pole",
                       "v_eff_rad_per_us", "coulomb_tail_over_pole",
                       "vdw_over_pole"), rows)
    return [Product("potential_profile.csv", data, "potential-1")]


_RUNNERS = {
    "dispersion": _run_dispersion,
    "wkb_map": _run_wkb_map,
    "decompose": _run_decompose,
    "evolve": _run_evolve,
    "potential_profile": _run_potential,
}


# ---------------------------------------------------------------------------
# run + manifest


def run_scenario(sc: ScenarioConfig, out_dir: Path) -> dict:
    """Execute one scenario and write its products plus the manifest.

    All products are computed before the first byte is written; the
    manifest goes last so its presence certifies a complete output set.
    Returns the manifest document.
    """
    products = _RUNNERS[sc.kind](sc)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for product in products:
        (out_dir / product.name).write_bytes(product.data)
        entries.append({
            "file": product.name,
            "bytes": len(product.data),
            "sha256": hashlib.sha256(product.data).hexdigest(),
            "schema_version": product.schema,
        })
    manifest = {
        "schema_version": MANIFEST_SCHEMA,
        "kind": sc.kind,
        "config_sha256": hashlib.sha256(
            _json_bytes(sc.source)).hexdigest(),
        "files": sorted(entries, key=lambda e: e["file"]),
    }
    (out_dir / "manifest.json").write_bytes(_json_bytes(manifest))
    return manifest


# ---------------------------------------------------------------------------
# command line


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rydpair",
        description="Scenario runner for the interacting photon-pair model.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, kind in SUBCOMMAND_KINDS.items():
        p = sub.add_parser(name, help=f"run a {kind!r} scenario")
        p.add_argument("--config", required=True, type=Path,
                       help="path to the scenario JSON config")
        p.add_argument("--out", required=True, type=Path,
                       help="output directory for products and manifest")
        p.add_argument("--threads", type=int, default=1,
                       help="thread budget for parallelizable sample loops")
        p.add_argument("--snapshot-format", choices=("npz", "csv"),
                       default="npz",
                       help="evolve snapshots as .npz arrays or |EE| CSV")
        p.set_defaults(kind=kind)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        try:
            text = args.config.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        scenario = parse_scenario(doc, kind=args.kind, threads=args.threads,
                                  snapshot_format=args.snapshot_format)
        manifest = run_scenario(scenario, args.out)
    except RydpairError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    print(f"{scenario.kind}: wrote {len(manifest['files'])} files to "
          f"{args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
