"""Weak-turbulence closed forms for beam and transmittance moments.

All formulas apply to a beam focused on the receiver plane and follow from
a second-order expansion in ``sigma_R^2`` of phase-approximation field
correlation functions for a Kolmogorov spectrum (no inner or outer scale).
With ``x = sigma_R^2`` and ``Omega`` the Fresnel number::

    sigma_bw^2 = W0^2 (0.31 x Omega^-7/6 - 0.06 x^2 Omega^-1/3)
    <S>        = W0^2 (Omega^-2 + 2.93 x Omega^-7/6 + 0.24 x^2 Omega^-1/3)
    <S^2>      = W0^4 (Omega^-4 + 6.48 x Omega^-19/6 + 9.40 x^2 Omega^-7/3
                       + 2.60 x^3 Omega^-3/2 - 0.05 x^4 Omega^-2/3)

Two readings of the transmittance mean are offered.  ``"as-printed"``
uses ``1 - exp(-a^2 / (2 W0^2 (Omega^-2 + 1.05 x Omega^-7/6)))``, with the
``W0^2`` applied to both denominator terms so the argument is
dimensionless.  ``"gaussian-consistent"`` (the default) uses the
long-term Gaussian-beam value ``1 - exp(-2 a^2 / W_LT^2)``.  Both share
the second moment

    <eta^2> = [1 - exp(-4 a^2 / (W0^2 Omega^-2 (1 + 2 v Omega^2)))]
              [1 - exp(-a^2 (1 + 2 v Omega^2) / (v W0^2))],
    v = Omega^-2 + 3.17 x Omega^-7/6.

The as-printed pair can violate ``<eta^2> <= <eta>`` in the weak-turbulence
regime it is meant for; such pairs are flagged rather than rejected.
"""

import dataclasses
import math
import warnings

from .channel import ChannelConfig, DerivedChannel, derive_channel
from .errors import AnalyticError
from .matching import BeamStats, EtaMoments
from .pdt import AS_PRINTED, GAUSSIAN

__all__ = [
    "AnalyticBeamStats",
    "AnalyticEtaMoments",
    "WeakTurbulenceWarning",
    "beam_stats_analytic",
    "eta_moments_analytic",
    "beam_wandering_prefactor",
    "VARIANTS",
]

VARIANTS = (AS_PRINTED, GAUSSIAN)
_STRONG = 1.0


class WeakTurbulenceWarning(UserWarning):
    """The weak-turbulence expansion is used outside its range."""


@dataclasses.dataclass(frozen=True)
class AnalyticBeamStats:
    sigma_bw2: float
    mean_s: float
    mean_s2: float
    w_lt: float
    variant: str = "focused, second order"

    def __post_init__(self):
        lhs = self.w_lt**2
        rhs = self.mean_s + 4.0 * self.sigma_bw2
        if abs(lhs - rhs) > 1e-12 * rhs:
            raise AnalyticError("long-term radius inconsistent with <S> + 4 sigma_bw^2")

    def beam_stats(self):
        """As :class:`~turbulux.matching.BeamStats` (needs ``sigma_bw2 > 0``)."""
        return BeamStats(self.sigma_bw2, self.mean_s, self.mean_s2)


@dataclasses.dataclass(frozen=True)
class AnalyticEtaMoments:
    """Transmittance moments plus a validity flag for the pair."""

    mean: float
    second: float
    variant: str
    valid: bool
    prefactor: float = 1.0

    def eta_moments(self):
        """As :class:`~turbulux.matching.EtaMoments`; raises if the pair is invalid."""
        return EtaMoments(self.mean, self.second)


def _derived(channel):
    if isinstance(channel, DerivedChannel):
        return channel
    if isinstance(channel, ChannelConfig):
        return derive_channel(channel)
    raise TypeError("expected a ChannelConfig or DerivedChannel")


def _weak(ch):
    if not ch.config.focused:
        raise AnalyticError(
            f"closed forms hold for a focused beam only (f0 = {ch.config.f0!r}, L = {ch.config.length!r})")
    if ch.rytov > _STRONG:
        warnings.warn(
            f"sigma_R^2 = {ch.rytov:.3g} is outside the weak-turbulence range of the closed forms",
            WeakTurbulenceWarning, stacklevel=3)
    return ch.rytov, ch.fresnel_number, ch.config.w0


def beam_stats_analytic(channel):
    """``sigma_bw^2``, ``<S>``, ``<S^2>`` and ``W_LT`` for a focused beam."""
    ch = _derived(channel)
    x, om, w0 = _weak(ch)
    w2 = w0 * w0
    bw = w2 * (0.31 * x * om ** (-7 / 6) - 0.06 * x**2 * om ** (-1 / 3))
    s1 = w2 * (om**-2 + 2.93 * x * om ** (-7 / 6) + 0.24 * x**2 * om ** (-1 / 3))
    s2 = w2 * w2 * (om**-4 + 6.48 * x * om ** (-19 / 6) + 9.40 * x**2 * om ** (-7 / 3)
                    + 2.60 * x**3 * om**-1.5 - 0.05 * x**4 * om ** (-2 / 3))
    if bw < 0:
        raise AnalyticError(f"negative beam-wandering variance at sigma_R^2 = {x:.3g}")
    if s2 < s1 * s1 * (1 - 1e-12):
        raise AnalyticError(f"<S^2> < <S>^2 at sigma_R^2 = {x:.3g}; expansion has broken down")
    return AnalyticBeamStats(bw, s1, s2, math.sqrt(s1 + 4.0 * bw))


def beam_wandering_prefactor(channel):
    """Factor ``exp(-0.13 sigma_R^2 Omega^-5/6)`` omitted from the mean.

    Close to one in weak turbulence; :func:`eta_moments_analytic` drops it
    unless asked otherwise.
    """
    ch = _derived(channel)
    return math.exp(-0.13 * ch.rytov * ch.fresnel_number ** (-5 / 6))


def eta_moments_analytic(channel, a=None, variant=GAUSSIAN, *, prefactor=False):
    """Closed-form ``<eta>`` and ``<eta^2>`` for aperture radius ``a``.

    ``a`` defaults to the configured aperture.  With ``prefactor`` the
    as-printed mean is multiplied by :func:`beam_wandering_prefactor`.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    ch = _derived(channel)
    a = ch.config.aperture if a is None else float(a)
    if not a > 0:
        raise ValueError("aperture radius must be positive")
    x, om, w0 = _weak(ch)
    w2 = w0 * w0
    v = om**-2 + 3.17 * x * om ** (-7 / 6)
    g = 1.0 + 2.0 * v * om * om
    second = -math.expm1(-4.0 * a * a / (w2 * om**-2 * g)) * -math.expm1(-a * a * g / (v * w2))
    factor = 1.0
    if variant == AS_PRINTED:
        mean = -math.expm1(-a * a / (2.0 * w2 * (om**-2 + 1.05 * x * om ** (-7 / 6))))
        if prefactor:
            factor = beam_wandering_prefactor(ch)
            mean *= factor
    else:
        stats = beam_stats_analytic(ch)
        mean = -math.expm1(-2.0 * a * a / stats.w_lt**2)
    valid = 0 < second <= mean <= 1 and mean * mean <= second * (1 + 1e-12)
    return AnalyticEtaMoments(mean, second, variant, bool(valid), factor)
