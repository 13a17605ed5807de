"""Exact eigenstates of the relative-coordinate pair equation.

The pair wavefunction obeys a Schrodinger-like equation whose potential has a
simple pole at the blockade radius.  Numerical integration never steps over
the pole: the interior and exterior solutions are integrated up to a window
around it and connected there against the two local solutions of the pole
equation.  The local pair (psi1, psi2) is anchored by its first-order Bessel
form at s = |r/rb - 1| = 1e-6, where the pole term dominates every other term
of the equation by many orders, and then continued outward through the full
potential on a logarithmic grid.  The connection coefficients (c1, c2) and
the delta-function weight alpha classify every state; bound-branch states
with c2 = 0 vanish at the blockade radius and carry no pole residue.

Layout of one solve in x = r/rb units:

    0 ---------- interior RK4 ----------] [--- local pair ---] [ exterior
    x=0                        1-delta_in   ..... x=1 .....  1+delta_in

The local pole coefficient entering the Bessel anchors is the exact
U_loc = rb*sqrt(m*(2*omega_c^2/delta + omega)/6), which differs from the
reported closed-form U at order (omega_c/g)^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import i0, i1, j0, j1, k0, k1, y0, y1

from .errors import (DomainError, MatchingError, NoRootError,
                     OrthogonalityError, ResolutionError, ValidityError)
from .model import (EffectiveProblem, PolaritonParams, effective_mass_energy)
from . import wkb

__all__ = [
    "RadialGrid", "InteriorSolutions", "MatchResult", "RelativeEigenstate",
    "Components", "DispersionBranch", "EigenBasis", "SpectralDensity",
    "radial_grid", "integrate_inside", "match_singularity", "solve_state",
    "coulomb_dispersion", "dispersion_branch", "reconstruct_components",
    "build_eigenbasis", "overlap_matrix", "decompose", "decompose_many",
    "hf_group_velocity",
]

# Matching-window defaults, in s = |r/rb - 1|.
DELTA_IN_COEFF = 0.5     # delta_in = 0.5 / U_loc^2
DELTA_OUT_CAP = 0.1      # delta_out = min(0.1, 10/U_loc^2)
DELTA_OUT_COEFF = 10.0
LAYER_DX_COEFF = 0.01    # dx = 0.01/U_loc^2: 50 points on the gridded layer half
POINTS_PER_PI = 32       # points per pi of local WKB phase
ANCHOR_S = 1e-6          # where the Bessel forms seed the local pair
MATCH_RESIDUAL_TOL = 1e-4
R_MAX_FACTOR = 3.0       # exterior extent in units of rb


# ---------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class RadialGrid:
    """Uniform interior grid in x = r/rb, from 0 to the window inner edge.

    x          nodes, x[0] = 0, x[-1] = 1 - delta_in
    dx         spacing
    delta_in   inner window edge (s units)
    delta_out  outer window edge (s units)
    """

    x: np.ndarray
    dx: float
    delta_in: float
    delta_out: float

    @property
    def window(self) -> np.ndarray:
        """Interior nodes inside the matching window s in [delta_in, delta_out]."""
        s = 1.0 - self.x
        return (s >= self.delta_in - 1e-15) & (s <= self.delta_out + 1e-15)


def _u_loc(prob: EffectiveProblem) -> float:
    if prob.mass <= 0.0 or prob.pole_strength <= 0.0:
        raise DomainError("pole coefficient U_loc^2 <= 0: no singular layer")
    return prob.u_local


def radial_grid(prob: EffectiveProblem, *, points_per_pi: int = POINTS_PER_PI,
                max_points: int = 4_000_000) -> RadialGrid:
    """Interior grid resolving both the WKB wavelength and the singular layer."""
    u = _u_loc(prob)
    delta_in = DELTA_IN_COEFF / u**2
    delta_out = min(DELTA_OUT_CAP, DELTA_OUT_COEFF / u**2)
    if delta_in >= delta_out:
        raise ResolutionError(
            f"matching window empty: delta_in = {delta_in:.3g} >= "
            f"delta_out = {delta_out:.3g}")
    dx_layer = LAYER_DX_COEFF / u**2
    # Local momentum in x units peaks at the stop point next to the pole.
    p_edge = u / math.sqrt(delta_in)
    rr = np.linspace(0.0, prob.rb * (1.0 - delta_out), 256)
    p_in = float(np.max(np.abs(wkb.local_momentum(prob, rr)))) * prob.rb
    p_max = max(p_edge, p_in, 1.0)
    dx_phase = math.pi / (points_per_pi * p_max)
    dx = min(dx_layer, dx_phase, 2e-3)
    n = int(math.ceil((1.0 - delta_in) / dx)) + 1
    if n > max_points:
        raise ResolutionError(
            f"interior grid needs {n} points (> {max_points}); "
            f"U_loc = {u:.3g} is too stiff for this cap")
    x = np.linspace(0.0, 1.0 - delta_in, n)
    return RadialGrid(x=x, dx=float(x[1] - x[0]),
                      delta_in=delta_in, delta_out=delta_out)


# ---------------------------------------------------------------------------
# interior integration


@dataclass(frozen=True)
class InteriorSolutions:
    """Even and odd fundamental solutions on the interior grid."""

    grid: RadialGrid
    psi_even: np.ndarray
    dpsi_even: np.ndarray
    psi_odd: np.ndarray
    dpsi_odd: np.ndarray


def _coefficient(prob: EffectiveProblem, x: np.ndarray,
                 potential: Optional[Callable] = None) -> np.ndarray:
    """W(x) = m rb^2 (V - E) for psi'' = W psi in x units."""
    r = x * prob.rb
    if potential is None:
        v = prob.c6 / (r**6 - prob.rb**6)
    else:
        v = np.asarray(potential(r), dtype=float)
    return prob.mass * prob.rb**2 * (v - prob.energy)


def _rk4_second_order(w_nodes: np.ndarray, w_mid: np.ndarray, dx: float,
                      y_init: np.ndarray, dy_init: np.ndarray):
    """Fixed-step RK4 for psi'' = W(x) psi over a uniform grid.

    w_nodes, w_mid: coefficient at nodes (n,) or (n, B) and midpoints
    (n-1,) or (n-1, B); initial conditions broadcast over the batch.
    Returns (psi, dpsi) sampled on all nodes.
    """
    n = w_nodes.shape[0]
    shape = (n,) + np.shape(y_init)
    psi = np.empty(shape, dtype=float)
    dpsi = np.empty(shape, dtype=float)
    y = np.array(y_init, dtype=float)
    dy = np.array(dy_init, dtype=float)
    psi[0], dpsi[0] = y, dy
    for i in range(n - 1):
        wa, wm, wb = w_nodes[i], w_mid[i], w_nodes[i + 1]
        k1y = dy
        k1d = wa * y
        k2y = dy + 0.5 * dx * k1d
        k2d = wm * (y + 0.5 * dx * k1y)
        k3y = dy + 0.5 * dx * k2d
        k3d = wm * (y + 0.5 * dx * k2y)
        k4y = dy + dx * k3d
        k4d = wb * (y + dx * k3y)
        y = y + dx * (k1y + 2.0 * k2y + 2.0 * k3y + k4y) / 6.0
        dy = dy + dx * (k1d + 2.0 * k2d + 2.0 * k3d + k4d) / 6.0
        psi[i + 1], dpsi[i + 1] = y, dy
    return psi, dpsi


def _interior_even(prob: EffectiveProblem, grid: RadialGrid,
                   potential: Optional[Callable] = None):
    """Even solution only (hot path for root finding)."""
    x = grid.x
    w_nodes = _coefficient(prob, x, potential)
    p = np.sqrt(np.clip(-w_nodes, 0.0, None))
    if p.size and float(np.max(p)) * grid.dx > math.pi / 10.0:
        raise ResolutionError(
            f"grid too coarse: dx*p = {float(np.max(p)) * grid.dx:.3g} "
            f"exceeds pi/10")
    w_mid = _coefficient(prob, 0.5 * (x[:-1] + x[1:]), potential)
    return _rk4_second_order(w_nodes, w_mid, grid.dx, 1.0, 0.0)


def integrate_inside(prob: EffectiveProblem, grid: RadialGrid,
                     potential: Optional[Callable] = None) -> InteriorSolutions:
    """Even and odd solutions from the origin to the matching window edge.

    The even solution starts with psi(0) = 1, psi'(0) = 0; the odd one with
    psi(0) = 0, psi'(0) = 1 (x units).  Only the even branch satisfies the
    exchange symmetry of the pair problem; the odd one is returned for
    completeness and testing.  Both come from one batched sweep.
    """
    x = grid.x
    w_nodes = _coefficient(prob, x, potential)
    p = np.sqrt(np.clip(-w_nodes, 0.0, None))
    if p.size and float(np.max(p)) * grid.dx > math.pi / 10.0:
        raise ResolutionError(
            f"grid too coarse: dx*p = {float(np.max(p)) * grid.dx:.3g} "
            f"exceeds pi/10")
    w_mid = _coefficient(prob, 0.5 * (x[:-1] + x[1:]), potential)
    psi, dpsi = _rk4_second_order(
        w_nodes[:, None], w_mid[:, None], grid.dx,
        np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    return InteriorSolutions(grid=grid,
                             psi_even=psi[:, 0], dpsi_even=dpsi[:, 0],
                             psi_odd=psi[:, 1], dpsi_odd=dpsi[:, 1])


# ---------------------------------------------------------------------------
# local solutions at the pole


def _bessel_minus(s: np.ndarray, u: float):
    """Interior pair (psi1, psi2) and s-derivatives; psi2 -> 1/u^2 at s -> 0."""
    s = np.asarray(s, dtype=float)
    z = 2.0 * u * np.sqrt(s)
    psi1 = z * j1(z) / (2.0 * u**2)
    dpsi1 = j0(z)
    psi2 = -math.pi * z * y1(z) / (2.0 * u**2)
    dpsi2 = -math.pi * y0(z)
    return psi1, dpsi1, psi2, dpsi2


def _bessel_plus(s: np.ndarray, u: float):
    """Exterior pair (growing I1, decaying K1) and s-derivatives."""
    s = np.asarray(s, dtype=float)
    z = 2.0 * u * np.sqrt(s)
    psi1 = z * i1(z) / (2.0 * u**2)
    dpsi1 = i0(z)
    psi2 = z * k1(z) / u**2
    dpsi2 = -2.0 * k0(z)
    return psi1, dpsi1, psi2, dpsi2


@dataclass(frozen=True)
class LocalPair:
    """The two local solutions continued from s0 to the window, one side.

    Sampled on an ascending log grid in s; column 0 is the psi1 branch
    (vanishing at the pole), column 1 the psi2 branch (value branch:
    psi2(0) = 1/u^2 inside and outside).
    """

    s: np.ndarray
    psi: np.ndarray     # (n, 2)
    dpsi_ds: np.ndarray  # (n, 2)
    side: int

    def at(self, s_query: np.ndarray):
        t = np.log(np.clip(s_query, self.s[0], self.s[-1]))
        tg = np.log(self.s)
        cols_p = [np.interp(t, tg, self.psi[:, j]) for j in (0, 1)]
        cols_d = [np.interp(t, tg, self.dpsi_ds[:, j]) for j in (0, 1)]
        return np.stack(cols_p, axis=1), np.stack(cols_d, axis=1)


def _continued_pair(prob: EffectiveProblem, side: int, s_hi: float,
                    potential: Optional[Callable] = None, *,
                    s0: float = ANCHOR_S, dt: float = 0.008) -> LocalPair:
    """Continue the local pole solutions from their Bessel anchors to s_hi.

    side -1: interior (s = 1 - x); side +1: exterior.  The integration runs
    in t = ln s, where psi_tt - psi_t = s^2 W psi stays mild at both ends:
    every other term of the pair equation is suppressed by s0 relative to the
    pole term at the anchor, so seeding with the pure Bessel values there
    keeps the connection semantics of the analytic forms.
    """
    u = _u_loc(prob)
    if s_hi <= s0 * 2.0:
        raise ResolutionError(f"window edge s_hi = {s_hi:.3g} too close to "
                              f"the anchor s0 = {s0:.3g}")
    n = int(math.ceil(math.log(s_hi / s0) / dt)) + 1
    t = np.linspace(math.log(s0), math.log(s_hi), n)
    s = np.exp(t)
    x = 1.0 + side * s
    s_mid = np.exp(0.5 * (t[:-1] + t[1:]))
    x_mid = 1.0 + side * s_mid
    w_nodes = _coefficient(prob, x, potential) * s**2
    w_mid = _coefficient(prob, x_mid, potential) * s_mid**2

    if side < 0:
        p1, d1, p2, d2 = _bessel_minus(np.array([s0]), u)
    else:
        p1, d1, p2, d2 = _bessel_plus(np.array([s0]), u)
    y = np.array([p1[0], p2[0]])
    dy = s0 * np.array([d1[0], d2[0]])  # psi_t = s * dpsi/ds

    dt_ = float(t[1] - t[0])
    n_ = n
    psi = np.empty((n_, 2))
    dpsi_t = np.empty((n_, 2))
    psi[0], dpsi_t[0] = y, dy
    for i in range(n_ - 1):
        wa, wm, wb = w_nodes[i], w_mid[i], w_nodes[i + 1]
        k1y = dy
        k1d = dy + wa * y
        k2y = dy + 0.5 * dt_ * k1d
        y2 = y + 0.5 * dt_ * k1y
        k2d = k2y + wm * y2
        k3y = dy + 0.5 * dt_ * k2d
        y3 = y + 0.5 * dt_ * k2y
        k3d = k3y + wm * y3
        k4y = dy + dt_ * k3d
        y4 = y + dt_ * k3y
        k4d = k4y + wb * y4
        y = y + dt_ * (k1y + 2.0 * k2y + 2.0 * k3y + k4y) / 6.0
        dy = dy + dt_ * (k1d + 2.0 * k2d + 2.0 * k3d + k4d) / 6.0
        psi[i + 1], dpsi_t[i + 1] = y, dy
    return LocalPair(s=s, psi=psi, dpsi_ds=dpsi_t / s[:, None], side=side)


@dataclass(frozen=True)
class MatchResult:
    """Connection data extracted in the matching window."""

    c1: float
    c2: float
    alpha: complex
    residual: float
    u_loc: float


def _alpha_from_connection(params: PolaritonParams, prob: EffectiveProblem,
                           c1: float, c2: float,
                           keep_imag: bool = True) -> complex:
    jump = complex(c1, -math.pi * c2) if keep_imag else complex(c1, 0.0)
    denom = ((params.g**2 + params.omega_c**2) / (params.delta * params.c)
             + prob.omega / params.c - prob.big_k / 2.0)
    pref = -(params.delta * params.c) / (params.g * params.omega_c * prob.rb)
    return pref / denom * jump


def _fit_window(psi_window: np.ndarray, basis_cols: np.ndarray):
    """Least-squares fit of window samples onto two basis columns.

    Returns (coef0, coef1, relative max residual).  Columns are normalized
    before the solve so disparate branch magnitudes cannot starve the fit.
    """
    norms = np.linalg.norm(basis_cols, axis=0)
    if np.any(norms == 0.0):
        raise MatchingError("degenerate local basis in the window")
    a = basis_cols / norms
    coef, _, _, _ = np.linalg.lstsq(a, psi_window, rcond=None)
    scale = float(np.max(np.abs(psi_window)))
    if scale == 0.0:
        raise MatchingError("solution vanishes in the matching window")
    residual = float(np.max(np.abs(a @ coef - psi_window))) / scale
    coef = coef / norms
    return float(coef[0]), float(coef[1]), residual


def match_singularity(inside: InteriorSolutions, prob: EffectiveProblem,
                      params: PolaritonParams, *,
                      keep_imag_alpha: bool = True) -> MatchResult:
    """Fit the interior solution to c1*psi1 + c2*psi2 in the window.

    psi1, psi2 are the local solutions anchored at the pole; the fit residual
    certifies that the interior integration reached their regime cleanly.
    """
    grid = inside.grid
    mask = grid.window
    if int(np.count_nonzero(mask)) < 8:
        raise ResolutionError(
            f"matching window holds {int(np.count_nonzero(mask))} samples; "
            "need at least 8")
    u = _u_loc(prob)
    pair = _continued_pair(prob, -1, grid.delta_out * 1.02)
    s = 1.0 - grid.x[mask]
    basis, _ = pair.at(s)
    c1_, c2_, residual = _fit_window(inside.psi_even[mask], basis)
    if residual > MATCH_RESIDUAL_TOL:
        raise MatchingError(
            f"window fit residual {residual:.3e} exceeds "
            f"{MATCH_RESIDUAL_TOL:.0e}; pole layer not reached cleanly")
    if max(abs(c1_), abs(c2_) / u**2) < 1e-12:
        raise MatchingError("trivial solution: c1 and c2 both vanish")
    alpha = _alpha_from_connection(params, prob, c1_, c2_,
                                   keep_imag=keep_imag_alpha)
    return MatchResult(c1=c1_, c2=c2_, alpha=alpha, residual=residual, u_loc=u)


# ---------------------------------------------------------------------------
# full states


@dataclass
class Components:
    """Reconstructed physical fields on the state's grid.

    ss_regular is the smooth remainder of the Rydberg pair field once the
    exact pole ss_residue/(r - rb) is removed; the residue and the point
    weight alpha are carried separately so overlaps can treat the principal
    value and the delta weight analytically.
    """

    ee: np.ndarray
    es_plus: np.ndarray
    es_minus: np.ndarray
    ss_regular: np.ndarray
    ss_residue: complex


@dataclass
class RelativeEigenstate:
    """One solution of the pair equation at fixed (omega, K).

    psi is sampled on the uniform grid r (in length units) spanning
    [0, R_MAX_FACTOR*rb]; across the pole cells the anchored local solutions
    are used.  c1 and c2 are the connection coefficients (real), alpha the
    delta-function weight at rb.
    """

    r: np.ndarray
    psi: np.ndarray
    dpsi: np.ndarray
    c1: float
    c2: float
    alpha: complex
    omega: float
    big_k: float
    prob: EffectiveProblem
    match_residual: float
    exterior_residual: float
    components: Optional[Components] = None

    @property
    def rb(self) -> float:
        return self.prob.rb

    @property
    def u_loc(self) -> float:
        return _u_loc(self.prob)

    def node_count(self, *, edge_tol: float = 1e-4) -> int:
        """Zeros on (0, rb], counting the edge zero when c2 vanishes."""
        inside = self.r < self.prob.rb * (1.0 - DELTA_IN_COEFF / self.u_loc**2)
        vals = np.real(self.psi[inside])
        sg = np.sign(vals[np.abs(vals) > 0.0])
        flips = int(np.sum(sg[:-1] * sg[1:] < 0))
        edge = int(abs(self.c2) <= edge_tol * max(abs(self.c1), 1e-300))
        return flips + edge


def solve_state(params: PolaritonParams, omega: float, big_k: float, *,
                with_components: bool = False,
                keep_imag_alpha: bool = True,
                r_max_factor: float = R_MAX_FACTOR) -> RelativeEigenstate:
    """Solve the pair equation at one (omega, K): interior, match, exterior.

    The returned state is continuous at rb, decays at large r, and satisfies
    the even boundary condition at the origin.  Bound states only (E < V at
    the exterior anchor).
    """
    prob = effective_mass_energy(params, omega, big_k)
    grid = radial_grid(prob)
    inside = integrate_inside(prob, grid)
    m = match_singularity(inside, prob, params, keep_imag_alpha=keep_imag_alpha)
    u = m.u_loc
    delta_in = grid.delta_in
    delta_out = grid.delta_out
    pair_in = _continued_pair(prob, -1, delta_in * 1.02)
    pair_out = _continued_pair(prob, +1, delta_out * 1.02)

    # Exterior: integrate inward from the anchor (the decaying branch is the
    # growing direction inward, so the seed error dies off), then fix the
    # decaying-branch coefficient to c2.
    w_anchor = float(_coefficient(prob, np.array([r_max_factor]))[0])
    if w_anchor <= 0.0:
        raise DomainError(
            "state not bound at the exterior anchor: E >= V there")
    kappa_bar = math.sqrt(w_anchor)
    x_anchor = min(r_max_factor, 1.0 + delta_out + 550.0 / max(kappa_bar, 1.0))
    dx_ext = min(grid.dx, 0.05 / max(kappa_bar, 1.0))
    n_ext = int(math.ceil((x_anchor - (1.0 + delta_in)) / dx_ext)) + 1
    x_ext = np.linspace(x_anchor, 1.0 + delta_in, n_ext)
    w_nodes = _coefficient(prob, x_ext)
    w_mid = _coefficient(prob, 0.5 * (x_ext[:-1] + x_ext[1:]))
    kappa0 = math.sqrt(max(w_nodes[0], 0.0))
    psi_ext, dpsi_ext = _rk4_second_order(
        w_nodes, w_mid, float(x_ext[1] - x_ext[0]), 1.0, -kappa0)
    s_ext = x_ext - 1.0
    wsel = (s_ext >= delta_in - 1e-15) & (s_ext <= delta_out + 1e-15)
    if int(np.count_nonzero(wsel)) < 8:
        raise ResolutionError("exterior window holds fewer than 8 samples")
    basis_out, _ = pair_out.at(s_ext[wsel])
    a1, a2, ext_res = _fit_window(psi_ext[wsel], basis_out)
    if ext_res > 10.0 * MATCH_RESIDUAL_TOL:
        raise MatchingError(
            f"exterior window residual {ext_res:.3e}: decaying branch not "
            "reached at the anchor")
    if a2 == 0.0:
        scale = 0.0
    else:
        scale = m.c2 / a2
    psi_ext = scale * psi_ext
    dpsi_ext = scale * dpsi_ext

    # Assemble the uniform output grid in r.
    n_out = int(round(r_max_factor / grid.dx)) + 1
    x_out = np.linspace(0.0, r_max_factor, n_out)
    psi = np.zeros_like(x_out)
    dpsi = np.zeros_like(x_out)
    in_core = x_out <= 1.0 - delta_in
    psi[in_core] = np.interp(x_out[in_core], grid.x, inside.psi_even)
    dpsi[in_core] = np.interp(x_out[in_core], grid.x, inside.dpsi_even)
    bridge_lo = (~in_core) & (x_out < 1.0)
    s_lo = 1.0 - x_out[bridge_lo]
    pv, dv = pair_in.at(s_lo)
    psi[bridge_lo] = m.c1 * pv[:, 0] + m.c2 * pv[:, 1]
    dpsi[bridge_lo] = -(m.c1 * dv[:, 0] + m.c2 * dv[:, 1])
    at_pole = x_out == 1.0
    psi[at_pole] = m.c2 / u**2
    dpsi[at_pole] = 0.5 * (m.c1 + m.c2)  # mean of the one-sided limits
    bridge_hi = (x_out > 1.0) & (x_out <= 1.0 + delta_in)
    s_hi_ = x_out[bridge_hi] - 1.0
    pv, dv = pair_out.at(s_hi_)
    psi[bridge_hi] = m.c2 * pv[:, 1]
    dpsi[bridge_hi] = m.c2 * dv[:, 1]
    outer = (x_out > 1.0 + delta_in) & (x_out <= x_anchor)
    psi[outer] = np.interp(x_out[outer], x_ext[::-1], psi_ext[::-1])
    dpsi[outer] = np.interp(x_out[outer], x_ext[::-1], dpsi_ext[::-1])
    # Beyond a truncated anchor the state is below 1e-230 of its peak.

    state = RelativeEigenstate(
        r=x_out * prob.rb, psi=psi.astype(complex),
        dpsi=(dpsi / prob.rb).astype(complex),
        c1=m.c1, c2=m.c2, alpha=m.alpha, omega=omega, big_k=big_k,
        prob=prob, match_residual=m.residual, exterior_residual=ext_res)
    if with_components:
        reconstruct_components(state, params)
    return state


# ---------------------------------------------------------------------------
# dispersion


@dataclass(frozen=True)
class DispersionBranch:
    """Sampled branch omega_n(K) with its provenance."""

    n: int
    samples: tuple
    method: str


def _c2_at(params: PolaritonParams, omega: float, big_k: float) -> float:
    prob = effective_mass_energy(params, omega, big_k)
    grid = radial_grid(prob)
    psi, _ = _interior_even(prob, grid)
    mask = grid.window
    pair = _continued_pair(prob, -1, grid.delta_out * 1.02)
    basis, _ = pair.at(1.0 - grid.x[mask])
    _, c2_, residual = _fit_window(psi[mask], basis)
    if residual > MATCH_RESIDUAL_TOL:
        raise MatchingError(
            f"window fit residual {residual:.3e} at omega = {omega:.6g}")
    return c2_


def coulomb_dispersion(params: PolaritonParams, big_k: float, n: int, *,
                       rel_tol: float = 1e-8) -> float:
    """Frequency of the n-th vanishing-edge state at fixed K: root of c2.

    Seeded from the semiclassical branch; the returned root carries n zeros
    on (0, rb] (edge zero included).
    """
    if n < 1:
        raise ValueError(f"branch index must be >= 1, got {n}")
    light = params.light_shift
    seed = wkb.wkb_dispersion(params, big_k, n)
    y_seed = 1.0 + seed.omega / light

    def f(y: float) -> float:
        return _c2_at(params, (y - 1.0) * light, big_k)

    # Adjacent roots can sit within 30% of the seed for deep branches, so a
    # blind wide bracket may hold an even number of sign changes.  Scan and
    # take the sign-change interval closest to the seed.
    bracket = None
    for half, npts in ((0.10, 9), (0.30, 25), (0.60, 49)):
        ys = y_seed * np.linspace(1.0 - half, 1.0 + half, npts)
        vals = np.full(npts, np.nan)
        for i, yv in enumerate(ys):
            try:
                vals[i] = f(float(yv))
            except (DomainError, ValidityError, MatchingError):
                continue
        ok = ~np.isnan(vals)
        idx = np.nonzero(ok[:-1] & ok[1:]
                         & (vals[:-1] * vals[1:] < 0.0))[0]
        if idx.size:
            mids = 0.5 * (ys[idx] + ys[idx + 1])
            pick = int(idx[np.argmin(np.abs(mids - y_seed))])
            bracket = (float(ys[pick]), float(ys[pick + 1]))
            break
    if bracket is None:
        raise NoRootError(
            f"c2 does not change sign around the branch-{n} seed at "
            f"k_bar = {big_k / params.momentum_unit:.4f}")
    y_root = brentq(f, *bracket, xtol=rel_tol * max(y_seed, 1e-3), rtol=1e-15)
    omega = (y_root - 1.0) * light
    state = solve_state(params, omega, big_k)
    found = state.node_count()
    if found != n:
        raise NoRootError(
            f"root near the branch-{n} seed carries {found} nodes; "
            "adjacent branch captured, no clean root here")
    return float(omega)


def dispersion_branch(params: PolaritonParams, n: int,
                      k_values: Sequence[float], *,
                      method: str = "exact") -> DispersionBranch:
    """Sample one branch over K by the chosen method."""
    if method not in ("exact", "wkb", "closed_form"):
        raise ValueError(f"unknown dispersion method: {method!r}")
    samples = []
    for big_k in k_values:
        if method == "exact":
            omega = coulomb_dispersion(params, big_k, n)
        elif method == "wkb":
            omega = wkb.wkb_dispersion(params, big_k, n).omega
        else:
            omega = wkb.closed_form_dispersion(params, big_k, n)
        samples.append((float(big_k), float(omega)))
    return DispersionBranch(n=n, samples=tuple(samples), method=method)


# ---------------------------------------------------------------------------
# components and norms


def reconstruct_components(state: RelativeEigenstate,
                           params: PolaritonParams) -> RelativeEigenstate:
    """Fill the photon/Rydberg fields derived from psi.

    EE and ES+ are proportional to psi, ES- to its derivative; the Rydberg
    pair field has a simple pole at rb.  The stored samples are the smooth
    remainder after the exact pole w/(r - rb) is removed, with the residue w
    returned separately, so every overlap can reassemble the distribution
    (principal value plus point weight) analytically.
    """
    prob = state.prob
    omega, big_k = state.omega, state.big_k
    ee_den = 2.0 * params.g**2 / params.delta + omega - params.c * big_k
    esm_den = ((params.g**2 + params.omega_c**2) / params.delta
               + omega - params.c * big_k / 2.0)
    gob = 2.0 * params.g * params.omega_c / params.delta
    ee = -gob / ee_den * state.psi
    es_plus = state.psi.copy()
    es_minus = -1j * params.c / esm_den * state.dpsi
    r = state.r
    pole = prob.pole_strength
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = pole * (1.0 - (prob.rb / np.where(r > 0.0, r, np.nan))**6)
        ss = -gob * state.psi / denom
    ss[r == 0.0] = 0.0
    psi_rb = complex(state.c2 / state.u_loc**2)
    residue = -gob * psi_rb * prob.rb / (6.0 * pole)
    d = r - prob.rb
    dx = float(r[1] - r[0])
    good = np.abs(d) > 1.5 * dx
    ss = np.where(good, ss - residue.real / np.where(good, d, 1.0),
                  0.0).astype(complex)
    bad = np.nonzero(~good)[0]
    if bad.size:
        # cancellation leaves noisy samples beside the pole; bridge them
        lo = max(int(bad[0]) - 1, 0)
        hi = min(int(bad[-1]) + 1, len(r) - 1)
        frac = (r[bad] - r[lo]) / (r[hi] - r[lo])
        ss[bad] = ss[lo] + frac * (ss[hi] - ss[lo])
    state.components = Components(
        ee=ee, es_plus=es_plus, es_minus=es_minus, ss_regular=ss,
        ss_residue=complex(residue))
    return state


def _drb_domega(prob: EffectiveProblem) -> float:
    """d rb / d omega = -(1/6) rb / (2 omega_c^2/delta + omega)."""
    return -prob.rb / (6.0 * prob.pole_strength)


def _finite_fields(state: RelativeEigenstate):
    """Components of the smooth sector (the Rydberg pole lives elsewhere)."""
    c = state.components
    return c.ee, c.es_plus, c.es_minus, c.ss_regular


def _finite_norm(state: RelativeEigenstate) -> float:
    """Lab-basis norm of the smooth content: |EE|^2 + 2|ES+|^2 + 2|ES-|^2 + |SS|^2."""
    ee, ep, em, ss = _finite_fields(state)
    dr = float(state.r[1] - state.r[0])
    dens = (np.abs(ee)**2 + 2.0 * np.abs(ep)**2 + 2.0 * np.abs(em)**2
            + np.abs(ss)**2)
    return float(np.trapezoid(dens, dx=dr))


def _smooth_overlap(a: RelativeEigenstate, b: RelativeEigenstate) -> complex:
    """Lab-basis inner product of the smooth fields (resampling b if needed)."""
    if a.r.shape != b.r.shape or abs(a.r[-1] - b.r[-1]) > 1e-9 * a.r[-1]:
        def rs(f):
            return (np.interp(a.r, b.r, f.real)
                    + 1j * np.interp(a.r, b.r, f.imag))
        eb, pb, mb, sb = (rs(f) for f in _finite_fields(b))
    else:
        eb, pb, mb, sb = _finite_fields(b)
    ea, pa, ma, sa = _finite_fields(a)
    dr = float(a.r[1] - a.r[0])
    dens = (np.conj(ea) * eb + 2.0 * np.conj(pa) * pb
            + 2.0 * np.conj(ma) * mb + np.conj(sa) * sb)
    return complex(np.trapezoid(dens, dx=dr))


def _ss_smooth_at(state: RelativeEigenstate, r_point: float) -> complex:
    """Smooth Rydberg field interpolated at one radius."""
    f = state.components.ss_regular
    return complex(np.interp(r_point, state.r, f.real)
                   + 1j * np.interp(r_point, state.r, f.imag))


def _pv_transform(state: RelativeEigenstate, x: float) -> float:
    """PV integral of the smooth Rydberg field against 1/(r - x).

    The integrable part is regularized by subtracting the field value at x;
    the subtraction integrates to an exact logarith over [0, R].
    """
    r = state.r
    f = state.components.ss_regular.real
    fx = float(np.interp(x, r, f))
    d = r - x
    y = np.empty_like(f)
    far = np.abs(d) > 0.5 * (r[1] - r[0])
    y[far] = (f[far] - fx) / d[far]
    if not np.all(far):
        i = int(np.argmin(np.abs(d)))
        i0, i1 = max(i - 1, 0), min(i + 1, len(r) - 1)
        y[~far] = (f[i1] - f[i0]) / (r[i1] - r[i0])
    tail = fx * math.log(abs((float(r[-1]) - x) / x))
    return float(np.trapezoid(y, dx=float(r[1] - r[0]))) + tail


def _point_weight(alpha: complex) -> float:
    """Real delta weight of the Rydberg distribution.

    The coherent pole weight satisfies Im(alpha) = -pi * residue, so the
    distribution is residue * PV + Re(alpha) * delta and its energy-diagonal
    strength (Re(alpha)^2 + pi^2 residue^2) equals |alpha|^2.
    """
    return float(np.real(alpha))


@dataclass
class EigenBasis:
    """Energy-normalized eigenstates on a uniform omega grid at fixed K.

    scales[i] converts the raw state into the energy-normalized one; the
    normalization is the analytic delta weight |alpha|^2 / |drb/domega|.
    regs stores the measured regular self-bracket, which vanishes for exact
    eigenstates and is kept as a quadrature-residue diagnostic.
    """

    params: PolaritonParams
    big_k: float
    omegas: np.ndarray
    domega: float
    scales: np.ndarray
    alphas: np.ndarray
    residues: np.ndarray
    finite_norms: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    rbs: np.ndarray
    drbs: np.ndarray
    regs: np.ndarray
    keep_imag_alpha: bool = True

    def state_at(self, i: int, *,
                 with_components: bool = True) -> RelativeEigenstate:
        return solve_state(self.params, float(self.omegas[i]), self.big_k,
                           with_components=with_components,
                           keep_imag_alpha=self.keep_imag_alpha)

    def __len__(self) -> int:
        return len(self.omegas)


def _self_regular(state: RelativeEigenstate) -> float:
    """Regular part of a state's self-bracket (everything but the delta).

    Smooth fields, the two smooth/PV cross transforms, the PV/PV boundary
    term, and the delta against the smooth field; the delta/PV coincidence
    limit is added later from neighboring states.
    """
    w = state.components.ss_residue.real
    p = _point_weight(state.alpha)
    rb = state.prob.rb
    big_r = float(state.r[-1])
    out = float(np.real(_smooth_overlap(state, state)))
    out += 2.0 * w * _pv_transform(state, rb)
    out += w * w * (-1.0 / (big_r - rb) - 1.0 / rb)
    out += 2.0 * p * float(np.real(_ss_smooth_at(state, rb)))
    return out


def build_eigenbasis(params: PolaritonParams, big_k: float,
                     omega_grid: Sequence[float], *,
                     keep_imag_alpha: bool = True,
                     max_offdiag: float = 0.10,
                     check_pairs: int = 6,
                     phase_tol: float = 0.02) -> EigenBasis:
    """Solve every grid frequency and scale to the energy normalization.

    Each pole weight must satisfy Im(alpha) = -pi * residue, the phase that
    makes the family orthogonal; a basis built without it deflates the
    delta strength and is rejected.  The overlap of neighboring scaled
    states is then sampled on pairs spread across the window; leakage above
    max_offdiag also rejects the basis.
    """
    omegas = np.asarray(omega_grid, dtype=float)
    if omegas.ndim != 1 or len(omegas) < 2:
        raise ValueError("omega_grid must hold at least two frequencies")
    steps = np.diff(omegas)
    domega = float(np.mean(steps))
    if domega <= 0.0 or np.max(np.abs(steps - domega)) > 1e-9 * abs(domega):
        raise ValueError("omega_grid must be uniform and increasing")

    n = len(omegas)
    alphas = np.empty(n, dtype=complex)
    residues = np.empty(n, dtype=complex)
    fnorms = np.empty(n)
    c1v = np.empty(n)
    c2v = np.empty(n)
    rbs = np.empty(n)
    drbs = np.empty(n)
    reg0 = np.empty(n)
    npairs = max(1, min(check_pairs, n - 1))
    starts = sorted(set(np.linspace(0, n - 2, npairs).astype(int).tolist()))
    keep_idx = set(starts) | {i + 1 for i in starts}
    kept = {}
    for i, om in enumerate(omegas):
        st = solve_state(params, float(om), big_k, with_components=True,
                         keep_imag_alpha=keep_imag_alpha)
        w = st.components.ss_residue.real
        mismatch = abs(st.alpha.imag + math.pi * w)
        if mismatch > phase_tol * max(abs(st.alpha), math.pi * abs(w)):
            raise OrthogonalityError(
                f"pole weight at omega = {float(om):.6g} violates "
                "Im(alpha) = -pi*residue; such a set cannot be orthonormal")
        alphas[i] = st.alpha
        residues[i] = st.components.ss_residue
        fnorms[i] = _finite_norm(st)
        c1v[i], c2v[i] = st.c1, st.c2
        rbs[i] = st.prob.rb
        drbs[i] = abs(_drb_domega(st.prob))
        reg0[i] = _self_regular(st)
        if i in keep_idx:
            kept[i] = st

    # coincidence limit of the delta/PV cross term, from neighbor differences
    aa = np.real(alphas)
    ww = np.real(residues)
    regs = reg0.copy()
    for i in range(n):
        terms = [(aa[j] * ww[i] - aa[i] * ww[j]) / (rbs[j] - rbs[i])
                 for j in (i - 1, i + 1) if 0 <= j < n]
        regs[i] += sum(terms) / len(terms)

    # the regular self-bracket vanishes for exact eigenstates (it is the
    # coincidence limit of the off-diagonal bracket, which is zero), so the
    # energy normalization is the analytic delta weight alone; regs is kept
    # as a diagnostic of quadrature residue
    norm2 = np.abs(alphas)**2 / drbs
    if not np.all(norm2 > 0.0):
        raise ResolutionError("state with vanishing pole weight encountered; "
                              "the energy normalization is undefined")
    scales = 1.0 / np.sqrt(norm2)

    basis = EigenBasis(params=params, big_k=big_k, omegas=omegas,
                       domega=domega, scales=scales, alphas=alphas,
                       residues=residues, finite_norms=fnorms,
                       c1=c1v, c2=c2v, rbs=rbs, drbs=drbs, regs=regs,
                       keep_imag_alpha=keep_imag_alpha)
    worst = 0.0
    for i in starts:
        o = _pair_overlap(kept[i], kept[i + 1])
        worst = max(worst, abs(scales[i] * scales[i + 1] * o) * domega)
    if worst > max_offdiag:
        raise OrthogonalityError(
            f"adjacent-state leakage {worst:.3f} exceeds {max_offdiag:.2f}; "
            "the pole-weight phase is inconsistent with an orthonormal set")
    return basis


def _pair_overlap(a: RelativeEigenstate, b: RelativeEigenstate) -> complex:
    """Raw bracket of two distinct states: smooth, PV, and delta sectors.

    Each Rydberg distribution is smooth + w*PV(1/(r-rb)) + Re(alpha)*delta;
    the pole sectors reduce to principal-value transforms, boundary
    logarithms, and point evaluations.  For exact eigenstates at different
    frequencies every sector cancels.
    """
    wa = a.components.ss_residue.real
    wb = b.components.ss_residue.real
    pa = _point_weight(a.alpha)
    pb = _point_weight(b.alpha)
    ra, rb_ = a.prob.rb, b.prob.rb
    d = rb_ - ra
    out = _smooth_overlap(a, b)
    out += wb * _pv_transform(a, rb_) + wa * _pv_transform(b, ra)
    big_r = min(float(a.r[-1]), float(b.r[-1]))
    lr = (math.log(abs((big_r - ra) / ra))
          - math.log(abs((big_r - rb_) / rb_))) / (ra - rb_)
    out += wa * wb * lr
    out += pb * _ss_smooth_at(a, rb_) + pa * _ss_smooth_at(b, ra)
    out += (pb * wa - pa * wb) / d
    return complex(out)


def overlap_matrix(basis: EigenBasis) -> np.ndarray:
    """Dense scaled overlap matrix (for small bases).

    An exact energy-normalized set gives 1/domega on the diagonal (the
    discrete stand-in for the energy delta); the diagonal here is exact by
    construction of the scales, and off-diagonal entries measure leakage.
    """
    n = len(basis)
    sts = [basis.state_at(i) for i in range(n)]
    m = np.empty((n, n), dtype=complex)
    for i in range(n):
        m[i, i] = basis.scales[i]**2 * (
            abs(basis.alphas[i])**2 / basis.drbs[i] / basis.domega
            + basis.regs[i])  # regs: measured residue, ~0 for exact states
        for j in range(i + 1, n):
            o = basis.scales[i] * basis.scales[j] * _pair_overlap(
                sts[i], sts[j])
            m[i, j] = o
            m[j, i] = np.conj(o)
    return m


# ---------------------------------------------------------------------------
# spectral decomposition


@dataclass(frozen=True)
class SpectralDensity:
    """|<basis state | target>|^2 density over the basis window.

    density is renormalized to unit sum times cell width; total records the
    raw integral before renormalization (the captured fraction of the
    target, ~1 when the window holds the state).  branch_spacing is the
    distance to the nearest peak among co-decomposed targets (nan for a
    single target).
    """

    omegas: np.ndarray
    density: np.ndarray
    peak_omega: float
    fwhm: float
    total: float
    branch_spacing: float = float("nan")

    def cell_of(self, omega: float) -> int:
        return int(np.argmin(np.abs(self.omegas - omega)))


def decompose_many(targets: Sequence[RelativeEigenstate],
                   basis: EigenBasis) -> list:
    """Spectral densities of several pole-free states in one basis sweep.

    Each basis frequency is solved once and projected on every target, so the
    cost is one pass regardless of how many targets are supplied.
    """
    for t in targets:
        if t.components is None:
            raise ValueError("target needs components; solve with "
                             "with_components=True")
        if abs(t.c2) > 1e-3 * max(abs(t.c1), 1e-300):
            raise ValueError("target carries a pole residue; decompose "
                             "expects a vanishing-edge state (c2 = 0)")
        if abs(t.big_k - basis.big_k) > 1e-12 * max(abs(basis.big_k), 1.0):
            raise ValueError("target and basis belong to different total "
                             "momenta; build the basis at the target's K")
    tnorms = [math.sqrt(_finite_norm(t)) for t in targets]
    n = len(basis)
    amps = np.empty((len(targets), n), dtype=complex)
    for i in range(n):
        st = basis.state_at(i)
        w = basis.residues[i].real
        p = _point_weight(basis.alphas[i])
        rb = basis.rbs[i]
        for j, (t, tn) in enumerate(zip(targets, tnorms)):
            smooth = _smooth_overlap(st, t)
            cross = w * _pv_transform(t, rb) + p * _ss_smooth_at(t, rb)
            amps[j, i] = basis.scales[i] * (smooth + cross) / tn
    out = [_density_from_amps(basis, amps[j]) for j in range(len(targets))]
    if len(out) > 1:
        peaks = np.array([d.peak_omega for d in out])
        for j, d in enumerate(out):
            others = np.delete(peaks, j)
            spacing = float(np.min(np.abs(others - peaks[j])))
            out[j] = replace(d, branch_spacing=spacing)
    return out


def _density_from_amps(basis: EigenBasis, amps: np.ndarray) -> SpectralDensity:
    density = np.abs(amps)**2
    n = len(density)
    total = float(np.sum(density) * basis.domega)
    if total > 0.0:
        density = density / total
    ipk = int(np.argmax(density))
    peak = float(basis.omegas[ipk])
    half = density[ipk] / 2.0
    lo = ipk
    while lo > 0 and density[lo] > half:
        lo -= 1
    hi = ipk
    while hi < n - 1 and density[hi] > half:
        hi += 1
    if (lo == 0 and density[0] > half) or (hi == n - 1 and density[-1] > half):
        fwhm = float("nan")  # peak spills over the window edge
    elif lo == ipk or hi == ipk:
        fwhm = basis.domega
    else:
        def cross_at(ia, ib):
            d0, d1 = density[ia], density[ib]
            t = (half - d0) / (d1 - d0) if d1 != d0 else 0.5
            return basis.omegas[ia] + t * (basis.omegas[ib] - basis.omegas[ia])
        fwhm = float(cross_at(hi - 1, hi) - cross_at(lo, lo + 1))
    return SpectralDensity(omegas=basis.omegas.copy(), density=density,
                           peak_omega=peak, fwhm=fwhm, total=total)


def decompose(target: RelativeEigenstate, basis: EigenBasis) -> SpectralDensity:
    """Spectral density of one pole-free state in the energy-normalized basis."""
    return decompose_many([target], basis)[0]


# ---------------------------------------------------------------------------
# velocity diagnostic


def hf_group_velocity(state: RelativeEigenstate, params: PolaritonParams, *,
                      domega: Optional[float] = None) -> float:
    """Group velocity from the momentum-derivative theorem.

    v = c * int(|EE|^2 + |ES+|^2 + |ES-|^2) / norm: the translation generator
    weighs the two-photon field with c and each photon-spin mixture with c/2,
    while the pure Rydberg field does not move.  The norm carries the smooth
    lab-basis weight plus, when the state belongs to an energy-normalized set
    of cell width domega, the pole weight |alpha|^2/(|drb/domega| domega).
    Structurally nonnegative.
    """
    if state.components is None:
        raise ValueError("state needs components; solve with "
                         "with_components=True")
    c = state.components
    dr = float(state.r[1] - state.r[0])
    num = params.c * float(np.trapezoid(
        np.abs(c.ee)**2 + np.abs(c.es_plus)**2 + np.abs(c.es_minus)**2,
        dx=dr))
    den = _finite_norm(state)
    if domega is not None:
        den = den + abs(state.alpha)**2 / abs(_drb_domega(state.prob)) / domega
    if den == 0.0:
        raise ValueError("state has zero norm")
    return num / den
