"""Circular-beam probability distribution of transmittance (PDT).

For a fixed squared spot radius ``S`` the beam is a circular Gaussian whose
centroid wanders with per-coordinate variance ``sigma_bw2``; transmittance
through the aperture is approximated as ``eta0 * exp(-(r0 / R)^lambda)``
with ``r0`` the centroid distance, giving a log-Weibull conditional law.
``S`` itself is log-normal, and the total PDT mixes the conditional law
over it.

Two conventions exist for the maximal transmittance ``eta0(S)``:

``gaussian-consistent`` (default)
    ``1 - exp(-2 a^2 / S)``, the fraction of a centred Gaussian beam of
    intensity ``2/(pi S) exp(-2 r^2 / S)`` inside radius ``a``.
``as-printed``
    ``1 - exp(-a^2 / S)``.  Kept for comparison only; its shape parameter
    becomes undefined (log argument below one) once ``a^2 / S`` drops below
    about 0.35.
"""

import dataclasses
import json
import math

import numpy as np
from scipy import special as sp

from .errors import MomentError
from .numerics import QuadratureSpec, RngStream, integrate

__all__ = [
    "GAUSSIAN",
    "AS_PRINTED",
    "CONVENTIONS",
    "ConditionalParams",
    "LogNormalParams",
    "CircularBeamPdt",
    "conditional_params",
    "conditional_arrays",
    "conditional_pdt",
    "conditional_cdf",
    "support_cutoff",
    "total_pdt",
    "total_cdf",
    "pdt_moment",
    "sample_pdt",
]

GAUSSIAN = "gaussian-consistent"
AS_PRINTED = "as-printed"
CONVENTIONS = (GAUSSIAN, AS_PRINTED)

# Standard-normal range covered by the S integrals; Phi(-12) ~ 2e-33.
_T_SPAN = 12.0
_SPEC = QuadratureSpec(epsabs=1e-13, epsrel=1e-10, limit=4000)
# densities are tabulated or integrated again, so 1e-8 relative is ample
_DENSITY_SPEC = QuadratureSpec(epsabs=1e-13, epsrel=1e-8, limit=4000)


def _check_convention(convention):
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown eta0 convention {convention!r}; expected one of {CONVENTIONS}")
    return 2.0 if convention == GAUSSIAN else 1.0


@dataclasses.dataclass(frozen=True)
class ConditionalParams:
    eta0: float
    shape: float
    scale: float


@dataclasses.dataclass(frozen=True)
class LogNormalParams:
    """``ln S ~ Normal(mu, sigma2)``."""

    mu: float
    sigma2: float

    def __post_init__(self):
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma2)):
            raise ValueError("log-normal parameters must be finite")
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be >= 0")

    @property
    def sigma(self):
        return math.sqrt(self.sigma2)

    @property
    def mean(self):
        return math.exp(self.mu + 0.5 * self.sigma2)

    @property
    def second_moment(self):
        return math.exp(2.0 * self.mu + 2.0 * self.sigma2)

    def pdf(self, s):
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        pos = s > 0
        z = (np.log(s[pos]) - self.mu) / self.sigma
        out[pos] = np.exp(-0.5 * z * z) / (s[pos] * self.sigma * math.sqrt(2 * math.pi))
        return out

    def cdf(self, s):
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        pos = s > 0
        out[pos] = 0.5 * sp.erfc(-(np.log(s[pos]) - self.mu) / (self.sigma * math.sqrt(2.0)))
        return out


@dataclasses.dataclass(frozen=True)
class CircularBeamPdt:
    """Calibrated circular-beam model.

    ``sigma_bw2`` is the beam-wandering variance per coordinate (m^2),
    ``lognormal`` the law of ``S`` (``mu`` is the log of a value in m^2),
    ``aperture`` the aperture radius (m).
    """

    sigma_bw2: float
    lognormal: LogNormalParams
    aperture: float
    convention: str = GAUSSIAN

    def __post_init__(self):
        if not (self.sigma_bw2 > 0 and math.isfinite(self.sigma_bw2)):
            raise ValueError("sigma_bw2 must be positive")
        if not (self.aperture > 0 and math.isfinite(self.aperture)):
            raise ValueError("aperture must be positive")
        _check_convention(self.convention)

    @property
    def mu(self):
        return self.lognormal.mu

    @property
    def sigma2(self):
        return self.lognormal.sigma2

    def pdf(self, eta, spec=_SPEC):
        return total_pdt(eta, self, spec)

    def cdf(self, eta, spec=_SPEC):
        return total_cdf(eta, self, spec)

    def moment(self, p, route="quadrature"):
        return pdt_moment(p, self, route=route)

    def to_dict(self):
        return {
            "sigma_bw2": self.sigma_bw2,
            "mu": self.lognormal.mu,
            "sigma2": self.lognormal.sigma2,
            "aperture_m": self.aperture,
            "convention": self.convention,
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc):
        return cls(
            sigma_bw2=float(doc["sigma_bw2"]),
            lognormal=LogNormalParams(float(doc["mu"]), float(doc["sigma2"])),
            aperture=float(doc["aperture_m"]),
            convention=doc.get("convention", GAUSSIAN),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _one_minus_i0e(x):
    """``1 - exp(-x) I0(x)`` without cancellation at small ``x``."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x < 1.0
    xs = x[small]
    # I0(x) - 1 = sum_{k>=1} (x^2/4)^k / (k!)^2
    q = 0.25 * xs * xs
    term = q.copy()
    i0m1 = q.copy()
    for k in range(2, 16):
        term = term * q / (k * k)
        i0m1 = i0m1 + term
    out[small] = -np.expm1(-xs) - np.exp(-xs) * i0m1
    out[~small] = 1.0 - sp.i0e(x[~small])
    return out


def conditional_arrays(S, a, convention=GAUSSIAN):
    """Vectorized ``(eta0, lambda, R)``; NaN where the parameters are undefined."""
    kfac = _check_convention(convention)
    S = np.asarray(S, dtype=float)
    c = a * a / S
    eta0 = -np.expm1(-kfac * c)
    x = 4.0 * c
    d = _one_minus_i0e(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        logarg = np.log(2.0 * eta0 / d)
        lam = 8.0 * c * sp.i1e(x) / d / logarg
        scale = a * np.exp(-np.log(logarg) / lam)
    bad = ~(logarg > 0) | ~np.isfinite(lam) | ~np.isfinite(scale)
    lam = np.where(bad, np.nan, lam)
    scale = np.where(bad, np.nan, scale)
    return eta0, lam, scale


def conditional_params(S, a, convention=GAUSSIAN):
    """Maximal transmittance, shape and scale of the conditional PDT at ``S``."""
    if not (S > 0 and a > 0):
        raise ValueError("S and a must be positive")
    eta0, lam, scale = conditional_arrays(float(S), float(a), convention)
    if not np.isfinite(lam):
        raise ValueError(
            f"conditional PDT undefined for a^2/S = {a * a / S:.4g} under the {convention} convention"
        )
    return ConditionalParams(float(eta0), float(lam), float(scale))


def _ln_ratio(eta, eta0, comp0):
    """``ln(eta0 / eta)`` with ``comp0 = 1 - eta0`` supplied exactly.

    Above ``eta = 1/2`` the ratio is formed from the complements, since
    ``1 - eta`` is exact there and the difference of two numbers near one
    would lose the leading digits.
    """
    with np.errstate(divide="ignore"):
        high = np.log1p(((1.0 - eta) - comp0) / eta)
        near = -np.log1p((eta - eta0) / eta0)
        far = np.log(eta0) - np.log(eta)
    return np.where(eta > 0.5, high, np.where(eta > 0.5 * eta0, near, far))


def _complement(S, a, convention):
    return np.exp(-_check_convention(convention) * a * a / S)


def _below(eta, eta0, comp0):
    """``0 < eta < eta0``, decided on the complements above one half."""
    return (eta > 0) & np.where(eta > 0.5, (1.0 - eta) > comp0, eta < eta0)


def _undefined(S, a, convention):
    raise ValueError(
        f"conditional PDT undefined for some S (a^2/S down to {a * a / np.max(S):.3g}) "
        f"under the {convention} convention"
    )


def conditional_pdt(eta, S, sigma_bw2, a, convention=GAUSSIAN):
    """Density of ``eta`` given ``S``; zero outside ``(0, eta0(S))``.

    Arguments broadcast against each other.
    """
    eta, S = np.broadcast_arrays(np.asarray(eta, dtype=float), np.asarray(S, dtype=float))
    eta0, lam, scale = conditional_arrays(S, a, convention)
    if np.any(np.isnan(lam)):
        _undefined(S, a, convention)
    comp0 = _complement(S, a, convention)
    inside = _below(eta, eta0, comp0)
    out = np.zeros(eta.shape)
    if np.any(inside):
        e, e0, lm, R = eta[inside], eta0[inside], lam[inside], scale[inside]
        L = _ln_ratio(e, e0, comp0[inside])
        out[inside] = _density_from_ratio(e, L, lm, R, sigma_bw2)
    return out if out.ndim else float(out)


def _density_from_ratio(eta, L, lam, R, sigma_bw2):
    # conditional density written in terms of L = ln(eta0 / eta)
    with np.errstate(divide="ignore", over="ignore"):
        logL = np.log(L)
        logp = (2 * np.log(R) - math.log(sigma_bw2) - np.log(eta) - np.log(lam)
                + (2.0 / lam - 1.0) * logL
                - R * R / (2 * sigma_bw2) * np.exp(2.0 / lam * logL))
        return np.exp(logp)


def conditional_cdf(eta, S, sigma_bw2, a, convention=GAUSSIAN):
    """``P(eta' <= eta | S) = exp(-R^2/(2 sigma_bw2) ln(eta0/eta)^(2/lambda))``."""
    eta, S = np.broadcast_arrays(np.asarray(eta, dtype=float), np.asarray(S, dtype=float))
    eta0, lam, scale = conditional_arrays(S, a, convention)
    if np.any(np.isnan(lam)):
        _undefined(S, a, convention)
    comp0 = _complement(S, a, convention)
    inside = _below(eta, eta0, comp0)
    out = np.where(inside | (eta <= 0), 0.0, 1.0)
    if np.any(inside):
        L = _ln_ratio(eta[inside], eta0[inside], comp0[inside])
        R = scale[inside]
        with np.errstate(divide="ignore"):
            out[inside] = np.exp(-R * R / (2 * sigma_bw2) * np.exp(2.0 / lam[inside] * np.log(L)))
    return out if out.ndim else float(out)


def support_cutoff(eta, a, convention=GAUSSIAN):
    """Largest ``S`` with ``eta0(S) > eta``."""
    kfac = _check_convention(convention)
    eta = np.asarray(eta, dtype=float)
    with np.errstate(divide="ignore"):
        out = kfac * a * a / -np.log1p(-eta)
    return out if out.ndim else float(out)


def _normal_pdf(t):
    return np.exp(-0.5 * t * t) / math.sqrt(2 * math.pi)


def _pdt_point(eta, model, spec):
    ln = model.lognormal
    a = model.aperture
    if not (0 < eta < 1):
        return 0.0
    if ln.sigma2 == 0.0:
        return float(conditional_pdt(eta, math.exp(ln.mu), model.sigma_bw2, a, model.convention))
    sigma = ln.sigma
    s_max = support_cutoff(eta, a, model.convention)
    t_max = (math.log(s_max) - ln.mu) / sigma
    if t_max <= -_T_SPAN:
        return 0.0

    def dens(t):
        S = np.exp(ln.mu + sigma * t)
        return _normal_pdf(t) * conditional_pdt(eta, S, model.sigma_bw2, a, model.convention)

    if t_max >= _T_SPAN:
        return integrate(dens, -_T_SPAN, _T_SPAN, spec).value
    # Near S_max the integrand behaves like (t_max - t)^(2/lambda - 1).
    # t = t_max - v^q with q = lambda/2 removes the singularity.
    _, lam, _ = conditional_arrays(s_max, a, model.convention)
    q = max(1.0, float(lam) / 2.0) if np.isfinite(lam) else 1.0
    vmax = (t_max + _T_SPAN) ** (1.0 / q)

    # S is parameterized by its offset d = t_max - t, and ln(eta0/eta) is
    # built from d directly; forming it from S would leave only ~1e-15/d
    # relative accuracy next to the support edge.
    x_max = -math.log1p(-eta)  # k a^2 / S_max
    tail = math.exp(-x_max)  # 1 - eta

    def dens_v(v):
        vq1 = v ** (q - 1.0)
        d = vq1 * v
        S = s_max * np.exp(-sigma * d)
        _, lam_s, R = conditional_arrays(S, a, model.convention)
        gap = x_max * np.expm1(sigma * d)  # k a^2/S - k a^2/S_max
        L = np.log1p(tail * -np.expm1(-gap) / eta)
        return _normal_pdf(t_max - d) * _density_from_ratio(eta, L, lam_s, R, model.sigma_bw2) * q * vq1

    return integrate(dens_v, 0.0, vmax, spec).value


def total_pdt(eta, model, spec=_DENSITY_SPEC):
    """Total PDT ``int dS P(eta|S) P(S)`` at each ``eta``.

    The S-integral runs over the support ``S < S_max(eta)`` in the
    standardized log variable ``t = (ln S - mu) / sigma``.
    """
    eta_arr = np.asarray(eta, dtype=float)
    out = np.array([_pdt_point(float(e), model, spec) for e in eta_arr.ravel()]).reshape(eta_arr.shape)
    return out if out.ndim else float(out)


def _cdf_point(eta, model, spec):
    ln = model.lognormal
    a = model.aperture
    if eta <= 0:
        return 0.0
    if eta >= 1:
        return 1.0
    if ln.sigma2 == 0.0:
        return float(conditional_cdf(eta, math.exp(ln.mu), model.sigma_bw2, a, model.convention))
    sigma = ln.sigma
    t_max = (math.log(support_cutoff(eta, a, model.convention)) - ln.mu) / sigma
    # S > S_max contributes F(eta|S) = 1, i.e. the normal tail beyond t_max.
    tail = 0.5 * math.erfc(t_max / math.sqrt(2.0))
    if t_max <= -_T_SPAN:
        return min(1.0, tail)
    hi = min(t_max, _T_SPAN)

    def f(t):
        S = np.exp(ln.mu + sigma * t)
        return _normal_pdf(t) * conditional_cdf(eta, S, model.sigma_bw2, a, model.convention)

    body = integrate(f, -_T_SPAN, hi, spec).value
    return min(1.0, body + tail)


def total_cdf(eta, model, spec=_SPEC):
    """Total CDF from the closed-form conditional CDF, one S-integral per point."""
    eta_arr = np.asarray(eta, dtype=float)
    out = np.array([_cdf_point(float(e), model, spec) for e in eta_arr.ravel()]).reshape(eta_arr.shape)
    return out if out.ndim else float(out)


def _conditional_moment(p, S, model, spec):
    """``E[eta^p | S]`` with the centroid distance drawn from its Rayleigh law.

    With ``w = r0^2 / (2 sigma_bw2) ~ Exp(1)``,
    ``eta^p = eta0^p exp(-p (2 sigma_bw2 w / R^2)^(lambda/2))``.
    """
    eta0, lam, R = conditional_arrays(S, model.aperture, model.convention)
    if not np.isfinite(lam):
        _undefined(np.atleast_1d(S), model.aperture, model.convention)
    base = 2.0 * model.sigma_bw2 / (R * R)
    half = lam / 2.0

    def f(w):
        with np.errstate(under="ignore"):
            return np.exp(-w - p * (base * w) ** half)

    # exp(-w) < 1e-20 beyond w = 46.
    return eta0**p * integrate(f, 0.0, 46.0, spec).value


def pdt_moment(p, model, route="quadrature", spec=_SPEC):
    """``<eta^p>`` of the total PDT.

    ``route``:

    ``"quadrature"``
        Nested adaptive quadrature: outer over ``ln S``, inner over the
        centroid radius through the exact conditional CDF.  Any ``p > 0``.
    ``"density"``
        Integrates ``eta^p`` against :func:`total_pdt` directly (slow;
        cross-check only).
    ``"marcum"``
        ``p`` in {1, 2} only: averages the closed-form conditional moments
        of a wandering Gaussian beam over ``S``.  These are the moments the
        transmittance-matching calibration equates to its targets.
    """
    if not p > 0:
        raise ValueError("moment order must be positive")
    if route == "marcum":
        from .matching import model_eta_moments

        if p not in (1, 2):
            raise ValueError("the Marcum route supports p = 1 and p = 2 only")
        m1, m2 = model_eta_moments(model.lognormal, model.sigma_bw2, model.aperture)
        return m1 if p == 1 else m2
    if route == "density":
        f = lambda e: e**p * total_pdt(e, model, spec)  # noqa: E731
        return integrate(f, 0.0, 1.0, QuadratureSpec(1e-10, 1e-8, 2000)).value
    if route != "quadrature":
        raise ValueError(f"unknown moment route {route!r}")
    ln = model.lognormal
    if ln.sigma2 == 0.0:
        return _conditional_moment(p, math.exp(ln.mu), model, spec)
    sigma = ln.sigma

    def outer(t):
        vals = np.array([_conditional_moment(p, math.exp(ln.mu + sigma * ti), model, spec) for ti in t])
        return _normal_pdf(t) * vals

    return integrate(outer, -_T_SPAN, _T_SPAN, spec).value


def sample_pdt(model, n, rng):
    """Draw ``n`` transmittances: ``S`` log-normal, centroid radius Rayleigh.

    ``rng`` is an :class:`RngStream` or a :class:`numpy.random.Generator`.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    ln = model.lognormal
    S = np.exp(ln.mu + ln.sigma * gen.standard_normal(n))
    r0 = gen.rayleigh(math.sqrt(model.sigma_bw2), n)
    eta0, lam, R = conditional_arrays(S, model.aperture, model.convention)
    if np.any(np.isnan(lam)):
        _undefined(S, model.aperture, model.convention)
    with np.errstate(under="ignore"):
        eta = eta0 * np.exp(-((r0 / R) ** lam))
    return eta


def check_moment_order(m1, m2, where="model"):
    """Raise :class:`MomentError` unless ``m1^2 <= m2 <= m1 <= 1``."""
    tol = 1e-12
    if not (m2 <= m1 + tol and m1 <= 1 + tol and m1 * m1 <= m2 + tol):
        raise MomentError(f"{where}: invalid transmittance moments <eta>={m1!r}, <eta^2>={m2!r}")
