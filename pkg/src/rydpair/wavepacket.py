"""Initial-state preparation and observable extraction for pair wavepackets.

Preparation covers the two experimentally meaningful starts: a stored
product pair (pure spin-spin Gaussian, the storage protocol's output) and a
variational bound-branch packet assembled as a frequency superposition of
edge-hugging profiles riding the branch's center-of-mass carrier.  The
variational spin-spin amplitude at separation r and frequency omega is

    [cos(Phi_b) - cos(Phi_b + y(r))] / (1 - (rb(omega)/r)^6)   for r > rb,

where Phi_b is the semiclassical quantization phase of the branch at that
frequency and y(r) the magnitude of the local-momentum phase accumulated
outward from the blockade edge.  The frequency window is sampled by
trapezoid quadrature with a Gaussian weight exp(-(omega - center)^2 /
sigma^2); each node contributes its own blockade radius, so the sharp edge
smears into the finite ridge a metastable state actually carries.

Extraction covers peak tracking of the photon-photon component inside the
blockade radius (row-wise argmax over the center-of-mass coordinate with
parabolic sub-cell refinement, averaged over separation rows), least-squares
velocity fits with standard errors, and double-peak detection on the
relative-coordinate marginal of |photon-photon|^2.

Units follow model: rad/us for rates, um for lengths, us for times.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .errors import ConfigError, LowSignalError, NoRootError
from .model import (PolaritonParams, blockade_radius, effective_mass_energy)
from .propagator import TwoExcitationField
from .wkb import (COULOMB_EDGE_CONSTANT, local_momentum,
                  quantization_integral, wkb_wavenumber)

__all__ = [
    "VariationalSpec", "PeakTrack", "VelocityFit", "DoublePeakMetric",
    "stored_pair", "variational_ss", "track_peaks", "extract_velocity",
    "detect_double_peak",
]


# ---------------------------------------------------------------------------
# preparation


@dataclass(frozen=True)
class VariationalSpec:
    """Recipe for a variational bound-branch packet.

    branch        branch label (1 is the uppermost bound branch)
    sigma         Gaussian frequency width, rad/us (weight e^{-(w-c)^2/s^2})
    omega_center  center of the frequency window, rad/us
    omega_window  explicit integration range (lo, hi); None means
                  center +/- 4 sigma
    nodes         trapezoid nodes across the window (>= 64)
    """

    branch: int
    sigma: float
    omega_center: float = 0.0
    omega_window: Optional[tuple[float, float]] = None
    nodes: int = 129

    def __post_init__(self) -> None:
        if self.branch < 1:
            raise ConfigError(
                f"branch label must be a positive integer, got {self.branch}")
        if self.sigma <= 0.0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        if self.nodes < 64:
            raise ConfigError(
                f"frequency quadrature needs >= 64 nodes, got {self.nodes}")
        if self.omega_window is not None:
            lo, hi = self.omega_window
            if not hi > lo:
                raise ConfigError(
                    f"omega_window must be increasing, got ({lo}, {hi})")
            if hi - lo < 4.0 * self.sigma:
                raise ConfigError(
                    f"omega_window spans {(hi - lo) / self.sigma:.2f} sigma; "
                    "at least 4 sigma required")

    def window(self, params: PolaritonParams) -> tuple[float, float]:
        """Integration range, clipped above the level-shift floor."""
        if self.omega_window is not None:
            return self.omega_window
        lo = self.omega_center - 4.0 * self.sigma
        hi = self.omega_center + 4.0 * self.sigma
        floor = -(1.0 - 1e-6) * params.light_shift
        return (max(lo, floor), hi)


def stored_pair(n: int, h: float, com_center: float,
                com_sigma: float) -> TwoExcitationField:
    """Stored product pair: a normalized Gaussian spin-spin product state.

    Both excitations share the single-particle Gaussian exp(-(z - z0)^2 /
    (4 sigma^2)), so the pair amplitude is its outer product; every other
    component is zero, which is what the storage protocol leaves behind.
    """
    if com_sigma <= 0.0:
        raise ConfigError(f"com_sigma must be positive, got {com_sigma}")
    z = np.arange(n) * h
    psi = np.exp(-((z - com_center) ** 2) / (4.0 * com_sigma**2))
    state = TwoExcitationField.zeros(n, h)
    state.ss = np.outer(psi, psi).astype(np.complex128)
    scale = 1.0 / math.sqrt(state.norm())
    state.ss *= scale
    return state


def _closed_form_wavenumber(params: PolaritonParams, omega: float,
                            n: int) -> float:
    """Edge-limit inversion of the one-parameter dispersion law."""
    y = 1.0 + omega / params.light_shift
    if y <= 0.0:
        raise NoRootError(
            f"frequency below the level-shift floor: 1 + omega_bar = {y:.3g}")
    fom0 = params.figure_of_merit(0.0)
    x = y ** (4.0 / 3.0) * n * n / (COULOMB_EDGE_CONSTANT * fom0 * fom0)
    floor = (params.omega_c / params.delta) ** 3
    if not floor < x < 1.0:
        raise NoRootError(
            f"branch {n} at omega = {omega:.6g}: closed-form wavenumber "
            f"1 - k_bar = {x:.3g} falls outside the validity window")
    return (1.0 - x) * params.momentum_unit


def _branch_point(params: PolaritonParams, omega: float,
                  n: int) -> tuple[float, float]:
    """Wavenumber and quantization phase of branch n at a given frequency.

    The full semiclassical root is authoritative; the closed-form inversion
    is the fallback when the root search fails inside the window.
    """
    try:
        big_k = wkb_wavenumber(params, omega, n)
    except NoRootError:
        big_k = _closed_form_wavenumber(params, omega, n)
    prob = effective_mass_energy(params, omega, big_k)
    return big_k, quantization_integral(prob)


def _edge_envelope(params: PolaritonParams, omega: float, big_k: float,
                   phase_b: float, seps: np.ndarray) -> np.ndarray:
    """Relative-coordinate profile outside the blockade edge at one frequency.

    y(r) is integrated on a square-root-stretched grid (t = sqrt(r - rb)),
    which absorbs the inverse-square-root divergence of the local momentum
    at the edge; the profile's own edge limit is finite.
    """
    prob = effective_mass_energy(params, omega, big_k)
    rb = prob.rb
    out = np.zeros(seps.shape, dtype=float)
    mask = seps > rb * (1.0 + 1e-12)
    if not np.any(mask):
        return out
    smax = float(np.max(seps[mask]))
    t = np.linspace(0.0, math.sqrt(smax - rb), 2049)
    r = rb + t * t
    r[0] = rb * (1.0 + 1e-14)
    p = np.abs(local_momentum(prob, r))
    y = cumulative_trapezoid(2.0 * t * p, t, initial=0.0)
    y_at = np.interp(np.sqrt(seps[mask] - rb), t, y)
    den = 1.0 - (rb / seps[mask]) ** 6
    out[mask] = (math.cos(phase_b) - np.cos(phase_b + y_at)) / den
    return out


def variational_ss(spec: VariationalSpec, params: PolaritonParams, n: int,
                   h: float, com_center: Optional[float] = None
                   ) -> TwoExcitationField:
    """Variational bound-branch packet: only the spin-spin component set.

    Each frequency node contributes its edge profile times the plane-wave
    carrier exp(i K (R - R0)) in the center of mass R = (z + z')/2, with K
    on the branch; the Gaussian frequency weight then localizes the packet
    around R0 = com_center (domain center by default).  The result is
    exchange-symmetric and normalized.

    Raises the branch's no-root error when the dispersion cannot be
    resolved anywhere in the window.
    """
    length = n * h
    center = 0.5 * length if com_center is None else com_center
    lo, hi = spec.window(params)
    omegas = np.linspace(lo, hi, spec.nodes)
    weights = np.full(spec.nodes, hi - lo) / (spec.nodes - 1)
    weights[0] *= 0.5
    weights[-1] *= 0.5
    gauss = np.exp(-((omegas - spec.omega_center) / spec.sigma) ** 2)

    z = np.arange(n) * h
    idx = np.arange(n)
    dist = np.abs(np.subtract.outer(idx, idx))
    seps = np.arange(n, dtype=float) * h

    acc = np.zeros((n, n), dtype=np.complex128)
    for omega, w, gw in zip(omegas, weights, gauss):
        big_k, phase_b = _branch_point(params, float(omega), spec.branch)
        env = _edge_envelope(params, float(omega), big_k, phase_b, seps)
        if not np.any(env):
            continue
        u = np.exp(0.5j * big_k * (z - center))
        acc += (w * gw) * np.outer(u, u) * env[dist]

    state = TwoExcitationField.zeros(n, h)
    state.ss = acc
    total = state.norm()
    if total <= 0.0:
        raise LowSignalError(
            "variational packet vanished: no separation on the grid lies "
            "outside the blockade edge anywhere in the frequency window")
    state.ss *= 1.0 / math.sqrt(total)
    return state


# ---------------------------------------------------------------------------
# extraction


@dataclass(frozen=True)
class PeakTrack:
    """Center-of-mass peak trajectory of the blockaded photon-photon signal.

    times      snapshot times, us
    positions  row-averaged peak center-of-mass coordinates, um
    rows_used  separation rows (cell distances below the blockade radius)
               entering the averages
    """

    times: np.ndarray
    positions: np.ndarray
    rows_used: int


@dataclass(frozen=True)
class VelocityFit:
    """Least-squares line through a peak track.

    velocity      slope, um/us
    stderr        standard error of the slope
    window        fractional time window of the track that was fitted
    nonlinearity  max |residual| over the fitted position range
    """

    velocity: float
    stderr: float
    window: tuple[float, float]
    nonlinearity: float


@dataclass(frozen=True)
class DoublePeakMetric:
    """Structure of the relative-coordinate marginal of |photon-photon|^2.

    separations     signed separation axis, um
    marginal        marginal density over the axis (sums |EE|^2 over the
                    center of mass)
    peak_positions  refined positions of the counted local maxima, um
    peak_heights    marginal values at those maxima
    dip_ratio       marginal at zero separation over the tallest peak
    blockade_radius reference blockade radius, um
    """

    separations: np.ndarray
    marginal: np.ndarray
    peak_positions: np.ndarray
    peak_heights: np.ndarray
    dip_ratio: float
    blockade_radius: float

    @property
    def n_peaks(self) -> int:
        return int(self.peak_positions.size)

    @property
    def is_double_peaked(self) -> bool:
        return self.n_peaks >= 2


def _parabolic_refine(values: np.ndarray, k: int) -> float:
    """Sub-cell peak position from the three-point parabola through k."""
    if 0 < k < values.size - 1:
        a, b, c = float(values[k - 1]), float(values[k]), float(values[k + 1])
        curv = a - 2.0 * b + c
        if curv < 0.0:
            return k + 0.5 * (a - c) / curv
    return float(k)


def track_peaks(snapshots: Sequence[TwoExcitationField],
                params: PolaritonParams, *,
                transient_fraction: float = 0.1) -> PeakTrack:
    """Trace the blockaded photon-photon peak through a snapshot sequence.

    For every separation row with |z - z'| below the blockade radius the
    photon-photon magnitude is scanned along the center-of-mass coordinate;
    the refined argmax positions are averaged over rows.  Snapshots in the
    leading transient_fraction of the covered time span are excluded; at
    least three must survive.

    Raises the low-signal error when a snapshot carries less than 1e-6 of
    its global photon-photon peak inside the blockade radius.
    """
    if not 0.0 <= transient_fraction < 1.0:
        raise ConfigError(
            f"transient_fraction must lie in [0, 1), got {transient_fraction}")
    if not snapshots:
        raise ConfigError("no snapshots given")
    t_last = max(s.t for s in snapshots)
    t_min = transient_fraction * t_last
    kept = [s for s in snapshots if s.t >= t_min * (1.0 - 1e-12)]
    if len(kept) < 3:
        raise ConfigError(
            f"{len(kept)} snapshots left after the transient window; "
            "need at least 3")
    rb = blockade_radius(params)
    rows = int(math.ceil(rb / kept[0].h)) - 1   # cell distances d*h < rb
    if rows < 1:
        raise ConfigError(
            f"blockade radius {rb:.4g} um covers no separation row at "
            f"grid spacing {kept[0].h:.4g} um")

    times = np.array([s.t for s in kept])
    positions = np.empty(len(kept))
    for si, snap in enumerate(kept):
        mag = np.abs(snap.ee)
        global_max = float(np.max(mag))
        inside_max = 0.0
        row_vals = []
        for d in range(rows + 1):
            row = np.diagonal(mag, offset=d)
            inside_max = max(inside_max, float(np.max(row)))
            row_vals.append(row)
        if global_max == 0.0 or inside_max < 1e-6 * global_max:
            raise LowSignalError(
                f"snapshot at t = {snap.t:.4g} us carries no blockaded "
                "photon-photon signal to track")
        centers = []
        for d, row in enumerate(row_vals):
            if float(np.max(row)) < 1e-9 * inside_max:
                continue
            k = int(np.argmax(row))
            k_ref = _parabolic_refine(row, k)
            # element k of diagonal d sits at (i, j) = (k, k + d):
            # center of mass (i + j)/2 * h = (k + d/2) * h.
            centers.append((k_ref + 0.5 * d) * snap.h)
        positions[si] = float(np.mean(centers))
    return PeakTrack(times=times, positions=positions, rows_used=rows + 1)


def extract_velocity(track: PeakTrack, *,
                     window: tuple[float, float] = (0.0, 1.0)) -> VelocityFit:
    """Least-squares velocity of a peak track over a fractional time window.

    The window selects by fraction of the covered time span, so the fit is
    invariant under shifting the time or position axes.  A warning is
    issued when the largest residual exceeds 10% of the fitted position
    range (the track is then visibly nonlinear).
    """
    w0, w1 = window
    if not 0.0 <= w0 < w1 <= 1.0:
        raise ConfigError(f"window must satisfy 0 <= lo < hi <= 1, got {window}")
    t0, t1 = float(track.times[0]), float(track.times[-1])
    span = t1 - t0
    sel = ((track.times >= t0 + w0 * span - 1e-12 * max(span, 1.0))
           & (track.times <= t0 + w1 * span + 1e-12 * max(span, 1.0)))
    t = track.times[sel]
    x = track.positions[sel]
    if t.size < 3:
        raise ConfigError(
            f"{t.size} track points inside window {window}; need at least 3")
    coeffs, cov = np.polyfit(t, x, 1, cov=True)
    resid = x - np.polyval(coeffs, t)
    x_range = float(np.max(x) - np.min(x))
    nonlin = float(np.max(np.abs(resid)) / x_range) if x_range > 0.0 else 0.0
    if nonlin > 0.1:
        warnings.warn(
            f"peak track deviates from a line by {nonlin:.1%} of its range; "
            "the fitted velocity may not describe a single regime",
            stacklevel=2)
    return VelocityFit(velocity=float(coeffs[0]),
                       stderr=float(math.sqrt(max(cov[0, 0], 0.0))),
                       window=(w0, w1), nonlinearity=nonlin)


def detect_double_peak(snapshot: TwoExcitationField,
                       params: PolaritonParams) -> DoublePeakMetric:
    """Relative-coordinate structure of the photon-photon density.

    Sums |EE|^2 over the center of mass for every signed separation,
    counts the local maxima above 5% of the tallest value (noise floor),
    refines their positions, and reports the zero-separation dip relative
    to the tallest peak (1.0 when the center is itself the global
    maximum).
    """
    n, h = snapshot.n, snapshot.h
    dens = np.abs(snapshot.ee) ** 2
    half = np.empty(n)
    for d in range(n):
        half[d] = float(np.sum(np.diagonal(dens, offset=d))) * h
    marginal = np.concatenate([half[:0:-1], half])
    seps = np.concatenate([-np.arange(n - 1, 0, -1), np.arange(n)]) * h

    top = float(np.max(marginal))
    floor = 0.05 * top
    pos, heights = [], []
    if top > 0.0:
        for k in range(marginal.size):
            v = marginal[k]
            left = marginal[k - 1] if k > 0 else -np.inf
            right = marginal[k + 1] if k + 1 < marginal.size else -np.inf
            if v >= floor and v > left and v >= right:
                k_ref = _parabolic_refine(marginal, k)
                pos.append(seps[0] + k_ref * h)
                heights.append(float(v))
    center = half[0]
    tallest = max(heights) if heights else top
    dip = float(center / tallest) if tallest > 0.0 else 1.0
    return DoublePeakMetric(
        separations=seps, marginal=marginal,
        peak_positions=np.asarray(pos), peak_heights=np.asarray(heights),
        dip_ratio=dip, blockade_radius=blockade_radius(params))
