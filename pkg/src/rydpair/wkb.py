"""Semiclassical spectrum of the blockaded pair well.

The pair potential turns into an attractive well with an inverse-distance
divergence at the blockade radius. The phase integral of the local momentum
over the classically allowed window quantizes the metastable branches; the
divergent edge makes the integral converge and contributes a fixed reflection
phase of 3*pi/4, so the target is n*pi when an inner turning point exists and
(n - 1/4)*pi when the motion reaches r = 0.

In the limit k_bar -> 1 the quantization collapses onto a one-parameter law
(1 + omega_bar) = [(1 - k_bar) * A * merit^2 / n^2]^(3/4) whose constant
A = [Gamma(2/3) / (Gamma(1/6) sqrt(pi))]^2 is exposed as
COULOMB_EDGE_CONSTANT.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .errors import ConvergenceError, DomainError, NoRootError, ValidityError
from .model import EffectiveProblem, PolaritonParams, effective_mass_energy, pair_potential_real

COULOMB_EDGE_CONSTANT = (math.gamma(2.0 / 3.0)
                         / (math.gamma(1.0 / 6.0) * math.sqrt(math.pi))) ** 2

_EDGE_CLEARANCE = 1e-9  # fraction of rb kept away from the divergence when scanning


def local_momentum(prob: EffectiveProblem, r, potential=None):
    """Momentum sqrt(m (E - V(r))) of the relative motion, principal branch.

    Classically forbidden regions give purely imaginary values. `potential`
    may replace the pair potential by any vectorized callable of r.
    """
    r_arr = np.asarray(r, dtype=float)
    if potential is None:
        v = pair_potential_real(prob, r_arr)
    else:
        v = np.asarray(potential(r_arr), dtype=float)
    return np.sqrt(prob.mass * (prob.energy - v) + 0j)


def turning_point(prob: EffectiveProblem, potential=None, samples: int = 1024) -> float:
    """Inner edge of the classically allowed window adjacent to rb.

    Returns 0.0 when the energy clears the potential everywhere. Detected by
    a sign scan of E - V refined by bracketing; the pair potential crosses at
    most once because it falls monotonically toward the edge.
    """
    rb = prob.rb

    def gap(rr):
        if potential is None:
            v = pair_potential_real(prob, np.asarray(rr, dtype=float))
        else:
            v = potential(np.asarray(rr, dtype=float))
        return prob.energy - np.asarray(v, dtype=float)

    xs = np.linspace(0.0, rb * (1.0 - _EDGE_CLEARANCE), samples)
    vals = np.atleast_1d(gap(xs))
    if vals[-1] <= 0.0:
        raise DomainError("no classically allowed window next to the edge")
    below = np.nonzero(vals <= 0.0)[0]
    if below.size == 0:
        return 0.0
    i = int(below[-1])
    scalar = lambda rr: float(np.atleast_1d(gap(rr))[0])
    return float(brentq(scalar, xs[i], xs[i + 1], xtol=1e-13 * rb, rtol=1e-12))


def quantization_integral(prob: EffectiveProblem, potential=None,
                          epsabs: float = 1e-10) -> float:
    """Phase integral of the local momentum from the turning point to rb.

    Both endpoints are tamed by square-root substitutions: u = sqrt(r - r0)
    where the momentum vanishes, t = sqrt(rb - r) where it diverges as
    (rb - r)^(-1/2).
    """
    rb = prob.rb
    r0 = turning_point(prob, potential)
    rm = 0.5 * (r0 + rb)

    def p(rr):
        return float(np.real(local_momentum(prob, rr, potential)))

    if r0 > 0.0:
        ua = math.sqrt(rm - r0)
        inner, _ = quad(lambda u: 2.0 * u * p(r0 + u * u), 0.0, ua,
                        epsabs=epsabs, epsrel=1e-11, limit=300)
    else:
        inner, _ = quad(p, 0.0, rm, epsabs=epsabs, epsrel=1e-11, limit=300)
    tb = math.sqrt(rb - rm)
    outer, _ = quad(lambda t: 2.0 * t * p(rb - t * t), 0.0, tb,
                    epsabs=epsabs, epsrel=1e-11, limit=300)
    return inner + outer


@dataclass(frozen=True)
class WkbSolution:
    """One semiclassical root at fixed center-of-mass wavenumber.

    n               branch label, 1 is the uppermost
    omega           root frequency, rad/us
    phase_integral  value of the quantization integral at the root
    r0              inner turning point, um (0.0 when absent)
    variant         "turning_point" or "no_turning_point"
    """

    n: int
    omega: float
    phase_integral: float
    r0: float
    variant: str


def _has_core(prob: EffectiveProblem) -> bool:
    return prob.energy + prob.pole_strength < 0.0


def closed_form_dispersion(params: PolaritonParams, big_k: float, n: int,
                           damping: float = 0.5, max_iter: int = 200,
                           tol: float = 1e-13) -> float:
    """Edge-limit branch frequency from the one-parameter law.

    Solves (1 + omega_bar) = (1 - k_bar) A merit(omega)^2 / n^2 by damped
    fixed-point iteration; the merit's own frequency dependence makes the
    explicit solution a 3/4 power of the right-hand side at zero frequency.
    """
    if n < 1:
        raise ValueError(f"branch label must be a positive integer, got {n}")
    x = 1.0 - big_k / params.momentum_unit
    if x <= 0.0:
        raise ValidityError(
            f"1 - k_bar = {x:.3g} <= 0: no bound branches beyond the crossing")
    fom0 = params.figure_of_merit(0.0)
    coeff = x * COULOMB_EDGE_CONSTANT * fom0 * fom0 / (n * n)
    y = 1.0
    for _ in range(max_iter):
        y_next = (1.0 - damping) * y + damping * coeff * y ** (-1.0 / 3.0)
        if abs(y_next - y) <= tol * y_next:
            return (y_next - 1.0) * params.light_shift
        y = y_next
    raise ConvergenceError(f"fixed point not settled after {max_iter} iterations")


def _bound_root(params: PolaritonParams, big_k: float, target: float,
                y_seed: float, epsabs: float):
    """Root of phase(1 + omega_bar) = target on the descending bound flank.

    The phase diverges toward the level-shift floor (the mass does) and
    regrows far above it where the motion is free; bound branches live on
    the descending flank in between. Walks a factor-1.3 bracket from the
    seed and returns None when the flank bottoms out above the target.
    """
    light = params.light_shift

    def phase(y):
        prob = effective_mass_energy(params, (y - 1.0) * light, big_k)
        return quantization_integral(prob, epsabs=epsabs)

    a = b = y_seed
    pa = pb = phase(y_seed)
    for _ in range(60):
        if pa >= target >= pb:
            break
        if pb > target:      # still too much phase: climb toward larger y
            a, pa = b, pb
            b *= 1.3
            pb = phase(b)
            if pb >= pa:     # past the flank minimum without reaching the target
                return None
        else:                # too little phase: descend toward the floor
            b, pb = a, pa
            a = max(0.7 * a, 1e-9)
            if a >= b:
                return None
            pa = phase(a)
    else:
        return None
    return float(brentq(
        lambda y: phase(y) - target, a, b,
        xtol=1e-12 * max(1.0, y_seed), rtol=1e-12))


def wkb_dispersion(params: PolaritonParams, big_k: float, n: int,
                   epsabs: float = 1e-10) -> WkbSolution:
    """Semiclassical branch frequency from the full quantization integral.

    Solves the deep-blockade condition (target n*pi) first and keeps it when
    the root indeed has an inner turning point. Otherwise the open-core
    condition (target (n - 1/4)*pi) is solved; if its root is consistent it
    wins. In the narrow crossover where neither condition is self-consistent
    the deep-blockade root is kept for branch continuity, recognizable by
    variant "turning_point" with r0 == 0. Raises when the flank supports no
    such branch at all (the state has merged into the continuum).
    """
    if n < 1:
        raise ValueError(f"branch label must be a positive integer, got {n}")
    light = params.light_shift
    y0 = 1.0 + closed_form_dispersion(params, big_k, n) / light

    def finish(y_root, variant):
        omega = (y_root - 1.0) * light
        prob = effective_mass_energy(params, omega, big_k)
        return WkbSolution(n=n, omega=omega,
                           phase_integral=quantization_integral(prob, epsabs=epsabs),
                           r0=turning_point(prob), variant=variant)

    y_core = _bound_root(params, big_k, n * math.pi, y0, epsabs)
    if y_core is not None:
        prob = effective_mass_energy(params, (y_core - 1.0) * light, big_k)
        if _has_core(prob):
            return finish(y_core, "turning_point")
    y_edge = _bound_root(params, big_k, (n - 0.25) * math.pi,
                         y_core if y_core is not None else y0, epsabs)
    if y_edge is not None:
        prob = effective_mass_energy(params, (y_edge - 1.0) * light, big_k)
        if not _has_core(prob):
            return finish(y_edge, "no_turning_point")
    if y_core is not None:
        return finish(y_core, "turning_point")
    raise NoRootError(
        f"branch {n} is not supported at k_bar = "
        f"{big_k / params.momentum_unit:.4g}: the phase flank stays below "
        "both quantization targets")


def _wave_root(params: PolaritonParams, omega: float, target: float,
               x_seed: float, x_floor: float, epsabs: float):
    """Root of phase(1 - k_bar) = target; the phase grows with 1 - k_bar.

    Returns None when the root would sit below the wavenumber validity
    floor. Works in x = 1 - k_bar, where blockade weakens as x grows.
    """
    munit = params.momentum_unit

    def phase(x):
        prob = effective_mass_energy(params, omega, (1.0 - x) * munit)
        return quantization_integral(prob, epsabs=epsabs)

    a = b = max(x_seed, x_floor)
    pa = pb = phase(a)
    for _ in range(60):
        if pa <= target <= pb:
            break
        if pb < target:      # too little phase: weaken the blockade
            a, pa = b, pb
            b *= 1.6
            pb = phase(b)
        else:                # too much phase: tighten toward the floor
            if a <= x_floor * (1.0 + 1e-9):
                return None
            b, pb = a, pa
            a = max(0.6 * a, x_floor)
            pa = phase(a)
    else:
        return None
    return float(brentq(lambda x: phase(x) - target, a, b,
                        xtol=1e-15, rtol=1e-12))


def wkb_wavenumber(params: PolaritonParams, omega: float, n: int,
                   epsabs: float = 1e-10) -> float:
    """Center-of-mass wavenumber where branch n passes through omega.

    Inverse of wkb_dispersion along the wavenumber axis, with the same
    quantization-target policy: deep-blockade condition first, kept when
    self-consistent, then the open-core condition, then the deep-blockade
    root as crossover fallback.
    """
    if n < 1:
        raise ValueError(f"branch label must be a positive integer, got {n}")
    light = params.light_shift
    munit = params.momentum_unit
    y = 1.0 + omega / light
    if y <= 0.0:
        raise DomainError(
            f"frequency below the level-shift floor: 1 + omega_bar = {y:.3g}")
    fom0 = params.figure_of_merit(0.0)
    x_seed = y ** (4.0 / 3.0) * n * n / (COULOMB_EDGE_CONSTANT * fom0 * fom0)
    x_floor = (params.omega_c / params.delta) ** 3 * (1.0 + 1e-6)

    def core_at(x):
        return _has_core(effective_mass_energy(params, omega, (1.0 - x) * munit))

    x_core = _wave_root(params, omega, n * math.pi, x_seed, x_floor, epsabs)
    if x_core is not None and core_at(x_core):
        return (1.0 - x_core) * munit
    x_edge = _wave_root(params, omega, (n - 0.25) * math.pi,
                        x_core if x_core is not None else x_seed,
                        x_floor, epsabs)
    if x_edge is not None and not core_at(x_edge):
        return (1.0 - x_edge) * munit
    if x_core is not None:
        return (1.0 - x_core) * munit
    raise NoRootError(
        f"branch {n} does not reach omega = {omega:.6g} inside the "
        "wavenumber validity window")


def wkb_branch_velocity(params: PolaritonParams, n: int, omega: float = 0.0,
                        rel_step: float = 1e-3, epsabs: float = 1e-10) -> float:
    """Slope d(omega)/dK of branch n, centered difference over the branch map."""
    h = rel_step * params.light_shift
    kp = wkb_wavenumber(params, omega + h, n, epsabs=epsabs)
    km = wkb_wavenumber(params, omega - h, n, epsabs=epsabs)
    return 2.0 * h / (kp - km)


def wkb_group_velocity(params: PolaritonParams, omega: float, n: int) -> float:
    """Edge-limit branch slope -A merit(omega)^2 v_g / n^2; negative throughout."""
    fom = params.figure_of_merit(omega)
    return -COULOMB_EDGE_CONSTANT * fom * fom * params.v_g / (n * n)
