"""Split-step time evolution of the two-excitation field on a 2D grid.

The state of one photon/spin excitation pair inside the medium is a
four-component complex field over the coordinate square [0, L)^2:

    ee(z, z')   photon at z, photon at z'
    es(z, z')   photon at z, spin at z'
    se(z, z')   spin at z,   photon at z'
    ss(z, z')   spin at z,   spin at z'

Photons move at c; spins are static and interact through the bare van der
Waals potential c6/r^6 at separation r = |z - z'|.  One time step is a
Strang split

    half kinetic shift  ->  exact on-site 4x4 rotation  ->  half kinetic shift

where the kinetic generator is linear in momentum, so each half step is an
exact translation by an integer number of grid cells (c*tau = 2m*h; the
minimal step moves photon coordinates by one cell per half step).  The
on-site generator couples the four components pointwise and depends on the
grid point only through the separation r, so its exact exponential is cached
once per distinct cell distance.  The coincident cell r = 0 uses the
half-cell separation h/2: the potential there is enormous but finite, which
realizes the blockade exactly while keeping every on-site rotation unitary.

Photon loss enters as an imaginary shift of the detuning (delta -> delta -
i*gamma/2, with gamma the full intermediate-state linewidth) and spin
dephasing as -i*gamma_r/2 per spin excitation.  With both rates zero every
operation is unitary and the discrete norm is conserved to rounding error.

Physical slow-light parameters put c many orders of magnitude above the
group velocity, which would demand absurd step counts.  The coordinate
dilation z -> zeta*z combined with g -> g/sqrt(zeta) (scale_params) leaves
every dimensionless observable unchanged while multiplying the group
velocity by zeta; it is admissible while v_g*zeta/c stays small against
(1 - k_bar)^2 at the center-of-mass wavenumbers of interest.

Units follow model: rad/us for rates, um for lengths, us for times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg

from .errors import ConfigError, ValidityError
from .model import PolaritonParams, blockade_radius

__all__ = [
    "TwoExcitationField", "EvolutionConfig", "EvolutionResult",
    "scale_params", "onsite_matrix", "step", "apply_cutoff", "evolve",
]

COMPONENT_NAMES = ("ee", "es", "se", "ss")

# Admissibility margin for the coordinate dilation: require
# v_g * zeta / c < SCALING_MARGIN * (1 - k_bar)^2.
SCALING_MARGIN = 0.1

# Relative slack when checking that c*tau/2 is a whole number of cells.
_SHIFT_TOL = 1e-6


# ---------------------------------------------------------------------------
# state


@dataclass
class TwoExcitationField:
    """Four complex amplitudes on a uniform n x n grid with spacing h.

    Grid point (i, j) sits at (z, z') = (i*h, j*h); the domain is [0, n*h).
    Exchange of the two excitations maps ee and ss onto their transposes and
    es onto the transpose of se; a bosonic state satisfies ee = ee^T,
    ss = ss^T, es = se^T, and every operation here preserves that symmetry.

    discarded_norm accumulates the norm removed by apply_cutoff.
    """

    ee: np.ndarray
    es: np.ndarray
    se: np.ndarray
    ss: np.ndarray
    h: float
    t: float = 0.0
    discarded_norm: float = 0.0

    def __post_init__(self) -> None:
        if self.h <= 0.0:
            raise ConfigError(f"grid spacing must be positive, got {self.h}")
        shape = self.ee.shape
        if len(shape) != 2 or shape[0] != shape[1]:
            raise ConfigError(f"fields must be square 2D arrays, got {shape}")
        for name in COMPONENT_NAMES:
            comp = np.ascontiguousarray(getattr(self, name), dtype=np.complex128)
            if comp.shape != shape:
                raise ConfigError(
                    f"component {name} has shape {comp.shape}, expected {shape}")
            setattr(self, name, comp)

    @classmethod
    def zeros(cls, n: int, h: float) -> "TwoExcitationField":
        """Empty field on an n x n grid with spacing h."""
        make = lambda: np.zeros((n, n), dtype=np.complex128)
        return cls(ee=make(), es=make(), se=make(), ss=make(), h=h)

    @property
    def n(self) -> int:
        return self.ee.shape[0]

    @property
    def length(self) -> float:
        """Linear extent n*h of the coordinate domain."""
        return self.n * self.h

    def components(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return (self.ee, self.es, self.se, self.ss)

    def norm(self) -> float:
        """Discrete L2 norm h^2 * sum over all four components."""
        total = 0.0
        for comp in self.components():
            total += float(np.sum(comp.real**2 + comp.imag**2))
        return self.h**2 * total

    def component_norms(self) -> dict[str, float]:
        """Discrete L2 norm of each component separately."""
        return {name: self.h**2 * float(np.sum(np.abs(getattr(self, name))**2))
                for name in COMPONENT_NAMES}

    def symmetry_defect(self) -> float:
        """Largest violation of exchange symmetry relative to the peak amplitude."""
        peak = max(float(np.max(np.abs(c))) for c in self.components())
        if peak == 0.0:
            return 0.0
        worst = max(float(np.max(np.abs(self.ee - self.ee.T))),
                    float(np.max(np.abs(self.ss - self.ss.T))),
                    float(np.max(np.abs(self.es - self.se.T))))
        return worst / peak

    def copy(self) -> "TwoExcitationField":
        return TwoExcitationField(
            ee=self.ee.copy(), es=self.es.copy(), se=self.se.copy(),
            ss=self.ss.copy(), h=self.h, t=self.t,
            discarded_norm=self.discarded_norm)


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class EvolutionConfig:
    """Stepping plan: step size, horizon, cutoff, boundaries, snapshots.

    tau            time step; c*tau must equal an even number of cells 2m*h
    t_final        absolute end time of the run
    zeta           coordinate-dilation factor used to build the parameters
                   (bookkeeping only; apply it with scale_params)
    cutoff_radius  zero all amplitude with separation |z - z'| beyond this
                   after every step; None disables the cutoff
    snapshot_times times at which evolve stores a copy of the state
    boundary       "open": amplitude shifted past an edge is discarded;
                   "periodic": shifts wrap around (norm-conservation checks)
    absorb_width   width of a cosine^2 damping ramp at each domain end,
                   applied after every step; 0 disables it
    norm_every     record the norm time series every this many steps
    """

    tau: float
    t_final: float
    zeta: float = 1.0
    cutoff_radius: Optional[float] = None
    snapshot_times: tuple[float, ...] = ()
    boundary: str = "open"
    absorb_width: float = 0.0
    norm_every: int = 1

    def __post_init__(self) -> None:
        if self.tau <= 0.0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.t_final < 0.0:
            raise ConfigError(f"t_final must be nonnegative, got {self.t_final}")
        if self.zeta <= 0.0:
            raise ConfigError(f"zeta must be positive, got {self.zeta}")
        if self.cutoff_radius is not None and self.cutoff_radius <= 0.0:
            raise ConfigError(
                f"cutoff_radius must be positive, got {self.cutoff_radius}")
        if self.boundary not in ("open", "periodic"):
            raise ConfigError(
                f"boundary must be 'open' or 'periodic', got {self.boundary!r}")
        if self.absorb_width < 0.0:
            raise ConfigError(
                f"absorb_width must be nonnegative, got {self.absorb_width}")
        if self.norm_every < 1:
            raise ConfigError(f"norm_every must be >= 1, got {self.norm_every}")
        object.__setattr__(self, "snapshot_times",
                           tuple(float(ts) for ts in self.snapshot_times))
        for ts in self.snapshot_times:
            if ts < 0.0 or ts > self.t_final + 1e-12 * max(self.t_final, self.tau):
                raise ConfigError(
                    f"snapshot time {ts} outside [0, t_final={self.t_final}]")


@dataclass
class EvolutionResult:
    """Time series and snapshots produced by evolve.

    times/norms/discarded are sampled every norm_every steps (plus the
    initial and final instants); discarded is the cumulative norm removed
    by the separation cutoff.  snapshots hold copies of the state at the
    requested times, in time order.
    """

    times: np.ndarray
    norms: np.ndarray
    discarded: np.ndarray
    snapshots: list[TwoExcitationField]
    final: TwoExcitationField


# ---------------------------------------------------------------------------
# parameter scaling


def scale_params(params: PolaritonParams, zeta: float, *,
                 k_bar: float = 0.0) -> PolaritonParams:
    """Dilate coordinates by zeta: g -> g/sqrt(zeta), c6 -> c6*zeta^6.

    Every length (blockade radius included) grows by zeta and the group
    velocity by zeta, while the figure of merit g^2*r_b/(c*delta), the
    ratios omega_c/delta, gamma/delta, and every dimensionless observable
    stay fixed.  Admissible while v_g*zeta/c < 0.1*(1 - k_bar)^2, where
    k_bar is the normalized center-of-mass wavenumber the run cares about
    (0 for a stationary or broadband packet; nearer 1 the dilation must
    shrink because the pair dispersion steepens).

    Note the rebuilt parameters re-run the hierarchy validation: a large
    zeta raises omega_c/g by sqrt(zeta) and may warn that derived
    closed-form quantities lose accuracy, which is inherent to running at
    an aggressive dilation.
    """
    if zeta <= 0.0:
        raise ConfigError(f"zeta must be positive, got {zeta}")
    if not 0.0 <= k_bar < 1.0:
        raise ValidityError(f"k_bar must lie in [0, 1), got {k_bar}")
    ratio = params.v_g * zeta / params.c
    bound = SCALING_MARGIN * (1.0 - k_bar)**2
    if ratio >= bound:
        raise ValidityError(
            f"dilation zeta = {zeta:.4g} gives v_g*zeta/c = {ratio:.4g}, "
            f"not small against (1 - k_bar)^2: the limit at k_bar = {k_bar} "
            f"is {bound:.4g}")
    if zeta == 1.0:
        return params
    return replace(params, g=params.g / math.sqrt(zeta),
                   c6=params.c6 * zeta**6)


# ---------------------------------------------------------------------------
# on-site generator and its cached exponentials


def onsite_matrix(params: PolaritonParams, r: float) -> np.ndarray:
    """Exact 4x4 on-site generator at separation r in the (ee, es, se, ss) basis.

    The adiabatic light shifts couple the components with strengths g^2, g*w,
    w^2 over the complex detuning delta - i*gamma/2 (w = omega_c); the bare
    van der Waals potential c6/r^6 sits on the ss diagonal, and spin
    dephasing adds -i*gamma_r/2 per spin excitation.
    """
    if r <= 0.0:
        raise ConfigError(f"separation must be positive, got {r}")
    g, w = params.g, params.omega_c
    dc = params.delta - 0.5j * params.gamma
    m = -1.0 / dc * np.array([
        [2.0 * g * g, g * w,        g * w,        0.0],
        [g * w,       g * g + w * w, 0.0,         g * w],
        [g * w,       0.0,          g * g + w * w, g * w],
        [0.0,         g * w,        g * w,        2.0 * w * w],
    ], dtype=np.complex128)
    m[3, 3] += params.c6 / r**6
    if params.gamma_r != 0.0:
        m += -0.5j * params.gamma_r * np.diag([0.0, 1.0, 1.0, 2.0])
    return m


@lru_cache(maxsize=8)
def _onsite_propagators(params: PolaritonParams, tau: float, n: int,
                        h: float) -> np.ndarray:
    """exp(-i*tau*W(d*h)) for every cell distance d = 0..n-1, shape (n, 4, 4).

    The coincident cell d = 0 uses the half-cell separation h/2.  With zero
    decay the generators are real symmetric and the table is built from a
    batched eigendecomposition (each entry exactly unitary); otherwise the
    batched matrix exponential is used.
    """
    r = np.arange(n, dtype=float) * h
    r[0] = 0.5 * h
    gens = np.empty((n, 4, 4), dtype=np.complex128)
    for d in range(n):
        gens[d] = onsite_matrix(params, r[d])
    if params.gamma == 0.0 and params.gamma_r == 0.0:
        vals, vecs = np.linalg.eigh(gens.real)
        phases = np.exp(-1j * tau * vals)
        table = np.einsum("dab,db,dcb->dac", vecs, phases, vecs)
    else:
        table = scipy.linalg.expm(-1j * tau * gens)
    table.setflags(write=False)
    return table


def _half_shift_cells(tau: float, h: float, c: float) -> int:
    """Number of cells one half kinetic step moves a photon coordinate."""
    x = c * tau / (2.0 * h)
    m = int(round(x))
    if m < 1 or abs(x - m) > _SHIFT_TOL * max(1.0, x):
        raise ConfigError(
            f"c*tau/(2h) = {x:.6g} is not a positive whole number of cells; "
            f"choose tau = 2*m*h/c")
    return m


def _shift_open(a: np.ndarray, m0: int, m1: int) -> np.ndarray:
    """Translate by (m0, m1) cells with zero fill (amplitude leaves the domain)."""
    out = np.zeros_like(a)
    n0, n1 = a.shape
    if m0 < n0 and m1 < n1:
        out[m0:, m1:] = a[:n0 - m0, :n1 - m1]
    return out


def _half_kinetic(state: TwoExcitationField, m: int, boundary: str) -> None:
    """Move photon coordinates by m cells: ee both axes, es axis 0, se axis 1."""
    if boundary == "periodic":
        state.ee = np.roll(state.ee, (m, m), axis=(0, 1))
        state.es = np.roll(state.es, m, axis=0)
        state.se = np.roll(state.se, m, axis=1)
    else:
        state.ee = _shift_open(state.ee, m, m)
        state.es = _shift_open(state.es, m, 0)
        state.se = _shift_open(state.se, 0, m)


def _apply_onsite(state: TwoExcitationField, table: np.ndarray,
                  d_max: Optional[int] = None) -> None:
    """Apply the cached 4x4 rotations diagonal by diagonal (both triangles).

    d_max limits the loop to cell distances < d_max when the caller can
    prove the state carries no amplitude further out (evolve does, from its
    separation cutoff); the rotations are diagonal in separation, so
    skipping empty diagonals is exact.
    """
    n = state.n
    stop = n if d_max is None else min(d_max, n)
    comps = state.components()
    i0 = np.arange(n)
    v = np.empty((4, 2 * n), dtype=np.complex128)
    for d in range(stop):
        rows = i0[:n - d]
        cols = rows + d
        if d:
            r = np.concatenate([rows, cols])
            c = np.concatenate([cols, rows])
        else:
            r, c = rows, cols
        vd = v[:, :r.size]
        for k, comp in enumerate(comps):
            vd[k] = comp[r, c]
        w = table[d] @ vd
        for k, comp in enumerate(comps):
            comp[r, c] = w[k]


@lru_cache(maxsize=8)
def _absorb_profile(n: int, h: float, width: float) -> np.ndarray:
    """Cosine^2 damping ramp at both domain ends, 1 in the bulk."""
    z = np.arange(n) * h
    length = n * h
    w = np.ones(n)
    ramp = z < width
    w[ramp] = np.sin(0.5 * math.pi * z[ramp] / width)**2
    ramp = z > length - width
    w[ramp] = np.minimum(
        w[ramp], np.sin(0.5 * math.pi * (length - z[ramp]) / width)**2)
    w.setflags(write=False)
    return w


@lru_cache(maxsize=8)
def _outside_mask(n: int, h: float, cutoff: float) -> np.ndarray:
    """Boolean grid marking cells with separation |z - z'| > cutoff."""
    i = np.arange(n)
    sep = np.abs(i[:, None] - i[None, :]) * h
    mask = sep > cutoff
    mask.setflags(write=False)
    return mask


# ---------------------------------------------------------------------------
# stepping


def step(state: TwoExcitationField, params: PolaritonParams,
         config: EvolutionConfig, *, _d_max: Optional[int] = None
         ) -> TwoExcitationField:
    """Advance the state by one Strang step of length tau, in place.

    Half kinetic shift, exact on-site rotation for the full step, half
    kinetic shift; local error O(tau^2).  Returns the same object.
    _d_max is evolve's support bound for the on-site loop.
    """
    m = _half_shift_cells(config.tau, state.h, params.c)
    table = _onsite_propagators(params, config.tau, state.n, state.h)
    _half_kinetic(state, m, config.boundary)
    _apply_onsite(state, table, _d_max)
    _half_kinetic(state, m, config.boundary)
    state.t += config.tau
    return state


def apply_cutoff(state: TwoExcitationField,
                 config: EvolutionConfig) -> TwoExcitationField:
    """Zero all amplitude with separation beyond config.cutoff_radius, in place.

    The removed norm accumulates in state.discarded_norm.  The caller is
    responsible for choosing a cutoff comfortably beyond the blockade
    radius (evolve enforces cutoff_radius >= 2*r_b).
    """
    if config.cutoff_radius is None:
        return state
    outside = _outside_mask(state.n, state.h, config.cutoff_radius)
    removed = 0.0
    for comp in state.components():
        band = comp[outside]
        removed += float(np.sum(band.real**2 + band.imag**2))
        comp[outside] = 0.0
    state.discarded_norm += state.h**2 * removed
    return state


def _apply_absorber(state: TwoExcitationField, width: float) -> None:
    w = _absorb_profile(state.n, state.h, width)
    for comp in state.components():
        comp *= w[:, None]
        comp *= w[None, :]


def evolve(state: TwoExcitationField, params: PolaritonParams,
           config: EvolutionConfig,
           observers: Sequence[Callable[[TwoExcitationField], None]] = ()
           ) -> EvolutionResult:
    """Run the step loop from state.t to t_final, collecting telemetry.

    After every step the separation cutoff and the absorbing ramp (when
    configured) are applied, then each observer is called with the live
    state (observers must not mutate it).  Norms are sampled every
    norm_every steps; snapshots are stored at the steps nearest the
    requested times.  The input state is advanced in place and returned
    as result.final.
    """
    m = _half_shift_cells(config.tau, state.h, params.c)
    d_max = None
    if config.cutoff_radius is not None:
        rb0 = blockade_radius(params)
        if config.cutoff_radius < 2.0 * rb0 * (1.0 - 1e-12):
            raise ValidityError(
                f"cutoff_radius = {config.cutoff_radius:.4g} um is below twice "
                f"the blockade radius 2*r_b = {2.0 * rb0:.4g} um")
        # Enforce the support bound up front so the bounded on-site loop
        # (separation can grow by at most m cells between cutoffs) is exact.
        apply_cutoff(state, config)
        d_max = int(math.ceil(config.cutoff_radius / state.h)) + m + 2
    span = config.t_final - state.t
    if span < -1e-12 * config.tau:
        raise ConfigError(
            f"t_final = {config.t_final} lies before the state time {state.t}")
    n_steps = int(round(span / config.tau))
    if abs(span - n_steps * config.tau) > 1e-6 * config.tau:
        raise ConfigError(
            f"t_final - t = {span:.6g} is not a whole number of steps "
            f"tau = {config.tau:.6g}")

    snap_index: dict[int, None] = {}
    for ts in config.snapshot_times:
        k = int(round((ts - state.t) / config.tau))
        snap_index[min(max(k, 0), n_steps)] = None

    times = [state.t]
    norms = [state.norm()]
    discarded = [state.discarded_norm]
    snapshots: list[TwoExcitationField] = []
    if 0 in snap_index:
        snapshots.append(state.copy())

    for k in range(1, n_steps + 1):
        step(state, params, config, _d_max=d_max)
        apply_cutoff(state, config)
        if config.absorb_width > 0.0:
            _apply_absorber(state, config.absorb_width)
        for obs in observers:
            obs(state)
        if k % config.norm_every == 0 or k == n_steps:
            times.append(state.t)
            norms.append(state.norm())
            discarded.append(state.discarded_norm)
        if k in snap_index:
            snapshots.append(state.copy())

    return EvolutionResult(times=np.asarray(times), norms=np.asarray(norms),
                           discarded=np.asarray(discarded),
                           snapshots=snapshots, final=state)
