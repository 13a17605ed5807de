"""Medium parameters and closed-form quantities of the photon-pair problem.

Units: angular frequencies in rad/us, lengths in um, times in us. A
frequency quoted as "nu MHz" enters as 2*pi*nu rad/us. The van der
Waals coefficient carries rad/us * um^6.

Everything in this module is a pure function of immutable inputs.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ValidityError

SPEED_OF_LIGHT = 2.99792458e8  # um/us


@dataclass(frozen=True)
class PolaritonParams:
    """Constants of the medium.

    g        collective photon-spin coupling, rad/us
    omega_c  control Rabi frequency, rad/us
    delta    single-photon detuning, rad/us (positive convention)
    gamma    intermediate-state decay rate, rad/us
    gamma_r  Rydberg-state decay rate, rad/us
    c6       van der Waals coefficient, rad/us * um^6 (same sign as delta)
    c        photon speed inside the medium, um/us
    """

    g: float
    omega_c: float
    delta: float
    gamma: float
    gamma_r: float
    c6: float
    c: float = SPEED_OF_LIGHT

    def __post_init__(self):
        for name in ("g", "omega_c", "delta", "gamma", "gamma_r", "c6", "c"):
            if not math.isfinite(getattr(self, name)):
                raise ValidityError(f"{name} must be finite")
        if self.g <= 0 or self.omega_c <= 0 or self.c <= 0:
            raise ValidityError("g, omega_c and c must be positive")
        if self.delta <= 0:
            raise ValidityError("delta must be positive in this sign convention")
        if self.gamma < 0 or self.gamma_r < 0:
            raise ValidityError("decay rates must be nonnegative")
        if self.c6 * self.delta <= 0:
            raise ValidityError(
                "c6*delta must be positive: the level shift never crosses the "
                "van der Waals curve otherwise, so no blockade radius exists"
            )
        for value, label in ((self.omega_c / self.delta, "omega_c/delta"),
                             (self.omega_c / self.g, "omega_c/g")):
            if value > 0.5:
                raise ValidityError(
                    f"{label} = {value:.3g} is too large for the adiabatic pair model (limit 0.5)")
            if value > 0.1:
                warnings.warn(
                    f"{label} = {value:.3g} above 0.1: derived quantities lose accuracy",
                    stacklevel=2)

    @property
    def light_shift(self) -> float:
        """Two-excitation level shift 2*omega_c^2/delta; the natural frequency unit."""
        return 2.0 * self.omega_c**2 / self.delta

    @property
    def momentum_unit(self) -> float:
        """Natural wavenumber unit 2*g^2/(c*delta) of the pair dispersion."""
        return 2.0 * self.g**2 / (self.c * self.delta)

    @property
    def v_g(self) -> float:
        """Slow-light group velocity (omega_c/g)^2 * c of one dark polariton."""
        return (self.omega_c / self.g) ** 2 * self.c

    def figure_of_merit(self, omega: float = 0.0) -> float:
        """Dimensionless interaction strength g^2 * r_b(omega) / (c*delta)."""
        return self.g**2 * blockade_radius(self, omega) / (self.c * self.delta)

    @classmethod
    def from_dimensionless(cls, *, omega_c_over_g: float, figure_of_merit: float,
                           omega_c_over_delta: float, gamma_over_delta: float = 0.0,
                           gamma_r_over_delta: float = 0.0,
                           delta: float = 2.0 * math.pi * 30.0,
                           c: float = SPEED_OF_LIGHT) -> "PolaritonParams":
        """Build dimensional parameters from the ratios that fix the physics.

        delta anchors the overall frequency scale and c the length scale;
        every dimensionless observable depends only on the three ratios.
        """
        omega_c = omega_c_over_delta * delta
        g = omega_c / omega_c_over_g
        rb0 = figure_of_merit * c * delta / g**2
        c6 = (2.0 * omega_c**2 / delta) * rb0**6
        return cls(g=g, omega_c=omega_c, delta=delta,
                   gamma=gamma_over_delta * delta,
                   gamma_r=gamma_r_over_delta * delta, c6=c6, c=c)


@dataclass(frozen=True)
class NormalizedPoint:
    """Pair frequency and center-of-mass wavenumber in natural units.

    omega_bar = omega * delta / (2 omega_c^2), k_bar = c K delta / (2 g^2).
    """

    omega_bar: float
    k_bar: float

    @classmethod
    def from_physical(cls, params: PolaritonParams, omega: float, big_k: float) -> "NormalizedPoint":
        return cls(omega_bar=omega / params.light_shift,
                   k_bar=big_k / params.momentum_unit)

    def to_physical(self, params: PolaritonParams) -> tuple[float, float]:
        return self.omega_bar * params.light_shift, self.k_bar * params.momentum_unit


@dataclass(frozen=True)
class EffectiveProblem:
    """One slice of the relative-coordinate problem at fixed (omega, K).

    mass           effective mass, 1/(rad/us * um^2)
    energy         relative energy, rad/us
    rb             blockade radius at this omega, um
    u              quoted dimensionless pole strength (reporting value)
    epsilon        pole regularizer, units of rb^6
    omega, big_k   labels of the slice, rad/us and rad/um
    pole_strength  c6/rb^6 = 2*omega_c^2/delta + omega, rad/us
    c6             van der Waals coefficient, rad/us * um^6
    """

    mass: float
    energy: float
    rb: float
    u: float
    epsilon: float
    omega: float
    big_k: float
    pole_strength: float
    c6: float

    @property
    def u_local(self) -> float:
        """Exact pole coefficient of the local equation psi'' = U^2 psi/(x-1).

        Follows from expanding the pair equation about rb; differs from the
        quoted u at order (omega_c/g)^2. This is the value the singular
        matching must use.
        """
        return self.rb * math.sqrt(self.mass * self.pole_strength / 6.0)


def blockade_radius(params: PolaritonParams, omega: float = 0.0) -> float:
    """Separation where the van der Waals shift meets the two-excitation level shift.

    Solves c6/r^6 = 2*omega_c^2/delta + omega; strictly decreasing in omega.
    """
    denom = params.light_shift + omega
    if denom <= 0.0:
        raise DomainError(
            f"no blockade radius: level shift + omega = {denom:.3g} <= 0")
    return (params.c6 / denom) ** (1.0 / 6.0)


def effective_potential(prob: EffectiveProblem, params: PolaritonParams,
                        omega: float, r):
    """Regularized pair potential c6/(r^6 - rb^6 + i*epsilon*rb^6).

    Vectorized over r. As epsilon -> 0 the real part tends to the principal
    value and the imaginary part concentrates at rb (diagnostic use only).
    """
    rb6 = blockade_radius(params, omega) ** 6
    r = np.asarray(r, dtype=float)
    return params.c6 / (r**6 - rb6 + 1j * prob.epsilon * rb6)


def pair_potential_real(prob: EffectiveProblem, r):
    """Principal-value pair potential c6/(r^6 - rb^6), away from r = rb."""
    r = np.asarray(r, dtype=float)
    return prob.c6 / (r**6 - prob.rb**6)


def effective_mass_energy(params: PolaritonParams, omega: float, big_k: float,
                          epsilon: float = 1e-8) -> EffectiveProblem:
    """Effective mass and energy of the relative-coordinate equation.

    Exact in the adiabatic pair model:

      E = (2 omega_c^2/delta) (1+w)^2 [ 1 - k + q(1+2w) - q/(1-k+w q) - 1/(1+w) ]
      m = g^4/(2 omega_c^2 delta c^2) (1+w)^{-2} [ 1 - k + q(1+2w) ]

    with w = omega_bar, k = k_bar, q = (omega_c/g)^2. Raises a validity
    error when 1 - k_bar < (omega_c/delta)^3, where the single-polariton
    dispersion underlying the reduction bends away.
    """
    rb = blockade_radius(params, omega)
    point = NormalizedPoint.from_physical(params, omega, big_k)
    w, k = point.omega_bar, point.k_bar
    q = (params.omega_c / params.g) ** 2
    if 1.0 - k < (params.omega_c / params.delta) ** 3:
        raise ValidityError(
            f"1 - k_bar = {1.0 - k:.3g} below (omega_c/delta)^3 = "
            f"{(params.omega_c / params.delta) ** 3:.3g}: pair reduction invalid")
    one = 1.0 + w
    bracket_m = 1.0 - k + q * (1.0 + 2.0 * w)
    mass = params.g**4 / (2.0 * params.omega_c**2 * params.delta * params.c**2) \
        * bracket_m / one**2
    bracket_e = bracket_m - q / (1.0 - k + w * q) - 1.0 / one
    energy = params.light_shift * one**2 * bracket_e
    u = params.g**2 * rb / (math.sqrt(6.0) * params.delta * params.c) \
        * math.sqrt((1.0 - k) / one)
    return EffectiveProblem(mass=mass, energy=energy, rb=rb, u=u, epsilon=epsilon,
                            omega=omega, big_k=big_k,
                            pole_strength=params.light_shift + omega, c6=params.c6)


def repulsive_core_predicate(params: PolaritonParams, omega: float, big_k: float) -> bool:
    """True when the relative energy lies below the potential floor at r = 0.

    The pair then sees a classically forbidden core and its wavefunction
    peaks near +-rb, a molecule with a bond length. Agrees with the
    small-ratio criterion 1 - k_bar < omega_c/g to leading order.
    """
    prob = effective_mass_energy(params, omega, big_k)
    return prob.energy + prob.pole_strength < 0.0
