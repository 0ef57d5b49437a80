"""Model constants of the kicked rotator and the initial Gaussian packet.

Units follow the torus quantization: both r and p live on [0, 2pi), the
Hilbert space has dimension N and the effective Planck constant is
hbar = T = 2pi/N.  The classical kick strength k = k0*T does not depend on N.
The perturbation is k -> k + eps with sigma = eps/hbar.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

TWO_PI = 2.0 * math.pi


class ValidationError(ValueError):
    """Raised when model, packet or config values are out of range."""


def _finite(name: str, value: float) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{name} must be a real number, got {value!r}") from None
    if not math.isfinite(value):
        raise ValidationError(f"{name} must be finite, got {value!r}")
    return value


def wrap(x: float) -> float:
    """Reduce an angle to [0, 2pi)."""
    y = math.fmod(x, TWO_PI)
    if y < 0.0:
        y += TWO_PI
    # fmod of a tiny negative number can round up to exactly 2pi
    return 0.0 if y >= TWO_PI else y


@dataclass(frozen=True)
class RotorParams:
    k: float
    N: int
    sigma: float

    @property
    def hbar_eff(self) -> float:
        return TWO_PI / self.N

    @property
    def T(self) -> float:
        return TWO_PI / self.N

    @property
    def k0(self) -> float:
        return self.k * self.N / TWO_PI

    @property
    def epsilon(self) -> float:
        return self.sigma * self.hbar_eff

    def with_sigma(self, sigma: float) -> "RotorParams":
        return make_rotor_params(self.k, self.N, sigma)


@dataclass(frozen=True)
class PhasePoint:
    r: float
    p: float

    def __post_init__(self):
        object.__setattr__(self, "r", wrap(_finite("r", self.r)))
        object.__setattr__(self, "p", wrap(_finite("p", self.p)))


@dataclass(frozen=True)
class PacketSpec:
    """Gaussian packet centred at (r0_center, p0_center) with position width xi."""

    r0_center: float
    p0_center: float
    xi: float
    hbar_eff: float

    @property
    def w_p(self) -> float:
        return self.hbar_eff / self.xi

    @property
    def window(self) -> tuple[float, float]:
        return (self.p0_center - self.w_p, self.p0_center + self.w_p)

    @property
    def center(self) -> PhasePoint:
        return PhasePoint(self.r0_center, self.p0_center)


def make_rotor_params(k: float, n_dim: int, sigma: float, d: int = 1) -> RotorParams:
    """Validate and build the model constants.

    Only one-dimensional rotors are supported; ``d`` exists so callers that
    carry a dimension field get a clear refusal instead of silent misuse.
    """
    if d != 1:
        raise ValidationError(f"only d = 1 is supported, got d = {d}")
    k = _finite("k", k)
    sigma = _finite("sigma", sigma)
    if isinstance(n_dim, bool) or int(n_dim) != n_dim:
        raise ValidationError(f"N must be an integer, got {n_dim!r}")
    n_dim = int(n_dim)
    if n_dim < 2:
        raise ValidationError(f"N must be >= 2, got {n_dim}")
    if sigma < 0.0:
        raise ValidationError(f"sigma must be >= 0, got {sigma}")
    return RotorParams(k=k, N=n_dim, sigma=sigma)


def make_packet(r0: float, p0: float, xi_sq_fraction: float, params: RotorParams) -> PacketSpec:
    """Packet with xi**2 = hbar/xi_sq_fraction, hence w_p = sqrt(xi_sq_fraction*hbar)."""
    r0 = _finite("r0", r0)
    p0 = _finite("p0", p0)
    fraction = _finite("xi_sq_fraction", xi_sq_fraction)
    if fraction <= 0.0:
        raise ValidationError(f"xi_sq_fraction must be > 0, got {fraction}")
    xi = math.sqrt(params.hbar_eff / fraction)
    return PacketSpec(r0_center=wrap(r0), p0_center=wrap(p0), xi=xi, hbar_eff=params.hbar_eff)
