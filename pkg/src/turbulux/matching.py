"""Calibration of the circular-beam PDT.

Two ways of fixing the log-normal law of ``S``:

``s-moments``
    From ``<S>`` and ``<S^2>`` directly (closed form).
``eta-moments``
    Solve for ``(mu, sigma2)`` such that the model reproduces given
    transmittance moments ``<eta>`` and ``<eta^2>``.  The model moments are
    log-normal averages of the conditional moments of a Gaussian beam whose
    centroid is Gaussian-distributed, which have closed forms in terms of
    the Marcum Q-function.

Constant (non-fluctuating) losses ``eta_c`` enter either by rescaling the
calibrated PDT (``rescale``) or by folding them into the targets before
solving (``fold``).
"""

import dataclasses
import math

import numpy as np
from scipy import optimize as sopt
from scipy import special as sp

from .errors import CalibrationError, MomentError
from .numerics import QuadratureSpec, integrate, least_squares_2, marcum_p1, marcum_q1
from .pdt import GAUSSIAN, CircularBeamPdt, LogNormalParams, pdt_moment, sample_pdt, total_cdf, total_pdt

__all__ = [
    "BeamStats",
    "EtaMoments",
    "MatchConstraints",
    "MatchResult",
    "LossyPdt",
    "lognormal_from_s_moments",
    "conditional_eta_moments",
    "model_eta_moments",
    "calibrate_s_moments",
    "match_eta_moments",
    "calibrate",
    "apply_constant_loss",
    "METHODS",
    "LOSS_MODES",
]

METHODS = ("s-moments", "eta-moments")
LOSS_MODES = ("rescale", "fold")

_T_SPAN = 12.0
_FORWARD_SPEC = QuadratureSpec(epsabs=1e-14, epsrel=1e-11, limit=2000)
_LOG_UNDERFLOW = 745.0


@dataclasses.dataclass(frozen=True)
class BeamStats:
    """Beam-wandering variance and the first two moments of ``S``."""

    sigma_bw2: float
    mean_s: float
    mean_s2: float

    def __post_init__(self):
        if not (self.sigma_bw2 > 0 and self.mean_s > 0 and self.mean_s2 > 0):
            raise MomentError("beam statistics must be positive")
        if self.mean_s2 < self.mean_s**2 * (1 - 1e-12):
            raise MomentError(f"<S^2> = {self.mean_s2!r} below <S>^2 = {self.mean_s**2!r}")


@dataclasses.dataclass(frozen=True)
class EtaMoments:
    """Transmittance moments; ``sqrt`` is ``<eta^(1/2)>`` when known."""

    mean: float
    second: float
    sqrt: float = None

    def __post_init__(self):
        tol = 1e-12
        m1, m2 = self.mean, self.second
        if not (0 < m1 <= 1 + tol and 0 < m2):
            raise MomentError(f"transmittance moments out of range: {m1!r}, {m2!r}")
        if m2 > m1 + tol:
            raise MomentError(f"<eta^2> = {m2!r} exceeds <eta> = {m1!r}")
        if m1 * m1 > m2 * (1 + 1e-12) + tol:
            raise MomentError(f"<eta>^2 = {m1 * m1!r} exceeds <eta^2> = {m2!r}")
        if self.sqrt is not None:
            t = self.sqrt
            if not (t * t <= m1 * (1 + 1e-12) + tol and m1 <= t + tol):
                raise MomentError(f"<sqrt(eta)> = {t!r} inconsistent with <eta> = {m1!r}")

    @property
    def variance(self):
        return self.second - self.mean**2


def lognormal_from_s_moments(mean_s, mean_s2):
    """Log-normal parameters reproducing ``<S>`` and ``<S^2>``."""
    if not mean_s > 0:
        raise MomentError("<S> must be positive")
    if mean_s2 < mean_s * mean_s:
        raise MomentError(f"<S^2> = {mean_s2!r} below <S>^2 = {mean_s * mean_s!r}")
    sigma2 = math.log(mean_s2 / (mean_s * mean_s))
    mu = math.log(mean_s * mean_s / math.sqrt(mean_s2))
    return LogNormalParams(mu, max(sigma2, 0.0))


def conditional_eta_moments(S, x02, a, ordering="direct"):
    """``(<eta>_S, <eta^2>_S)`` for a Gaussian beam with Gaussian centroid.

    ``S`` is the squared spot radius, ``x02`` the centroid variance per
    coordinate and ``a`` the aperture radius.  ``ordering`` selects how the
    second Marcum term is evaluated: ``"direct"`` uses ``Q_1(B, A)``,
    ``"identity"`` rewrites it with ``Q_1(a,b) + Q_1(b,a) = 1 +
    exp(-(a^2+b^2)/2) I_0(ab)``.  Both give the same value.
    """
    S, x02 = np.broadcast_arrays(np.asarray(S, dtype=float), np.asarray(x02, dtype=float))
    if np.any(S <= 0) or np.any(x02 < 0) or not a > 0:
        raise ValueError("need S > 0, x02 >= 0, a > 0")
    z = 2.0 * a * a / (4.0 * x02 + S)
    m1 = -np.expm1(-z)
    m2 = np.empty_like(m1)
    still = x02 == 0
    m2[still] = m1[still] ** 2
    mov = ~still
    if np.any(mov):
        s, v = S[mov], x02[mov]
        p = s / (8.0 * v)
        beta = 1.0 / (2.0 * p + 1.0)
        alpha = 2.0 * a / np.sqrt(s) * np.sqrt(2.0 * p / (2.0 * p + 1.0))
        root = 2.0 * np.sqrt(p * (p + 1.0)) / (2.0 * p + 1.0)  # sqrt(1 - beta^2)
        A = alpha / root
        B = A * beta
        half_a2 = 0.5 * alpha * alpha
        bracket = np.zeros_like(A)
        live = half_a2 < _LOG_UNDERFLOW
        if np.any(live):
            Al, Bl = A[live], B[live]
            if ordering == "direct":
                bracket[live] = marcum_p1(Al, Bl) + marcum_q1(Bl, Al)
            elif ordering == "identity":
                bracket[live] = 2.0 * marcum_p1(Al, Bl) + sp.i0e(Al * Bl) * np.exp(-0.5 * (Al - Bl) ** 2)
            else:
                raise ValueError(f"unknown ordering {ordering!r}")
        em = -np.expm1(-z[mov])  # 1 - E
        m2[mov] = em * em - np.exp(-2.0 * z[mov]) + np.exp(-half_a2) * bracket
    if m1.ndim == 0:
        return float(m1), float(m2)
    return m1, m2


def model_eta_moments(lognormal, sigma_bw2, a, spec=_FORWARD_SPEC):
    """Log-normal averages of :func:`conditional_eta_moments` over ``S``."""
    mu = lognormal.mu
    if lognormal.sigma2 == 0.0:
        return conditional_eta_moments(math.exp(mu), sigma_bw2, a)
    sigma = lognormal.sigma

    def weight(t):
        return np.exp(-0.5 * t * t) / math.sqrt(2.0 * math.pi)

    def f1(t):
        S = np.exp(mu + sigma * t)
        return weight(t) * -np.expm1(-2.0 * a * a / (4.0 * sigma_bw2 + S))

    def f2(t):
        S = np.exp(mu + sigma * t)
        return weight(t) * conditional_eta_moments(S, np.full_like(S, sigma_bw2), a)[1]

    m1 = integrate(f1, -_T_SPAN, _T_SPAN, spec).value
    m2 = integrate(f2, -_T_SPAN, _T_SPAN, spec).value
    return m1, m2


def calibrate_s_moments(stats, a, convention=GAUSSIAN):
    """Circular-beam model from beam statistics (matching ``<S>``, ``<S^2>``)."""
    ln = lognormal_from_s_moments(stats.mean_s, stats.mean_s2)
    return CircularBeamPdt(stats.sigma_bw2, ln, a, convention)


@dataclasses.dataclass(frozen=True)
class MatchConstraints:
    """Feasible region for the transmittance-moment solve.

    The mean of ``S`` stays within ``mean_factor`` of the initial guess, the
    chance of ``S`` exceeding ``tail_factor`` times its mean stays below
    ``tail_prob``, and ``sigma2`` lies in ``[sigma2_min, sigma2_max]``.
    """

    sigma2_min: float = 1e-6
    sigma2_max: float = 2.0
    mean_factor: float = 5.0
    tail_factor: float = 10.0
    tail_prob: float = 0.01

    def tail_probability(self, sigma2):
        """``P(S > tail_factor * <S>)`` for a log-normal with this ``sigma2``."""
        if sigma2 <= 0:
            return 0.0
        s = math.sqrt(sigma2)
        return 0.5 * math.erfc((math.log(self.tail_factor) + 0.5 * sigma2) / (s * math.sqrt(2.0)))

    def tail_sigma2_bound(self):
        """Largest ``sigma2`` (starting from ``sigma2_min``) obeying the tail limit."""
        g = lambda s2: self.tail_probability(s2) - self.tail_prob  # noqa: E731
        lo = self.sigma2_min
        hi = lo
        while g(hi) < 0:
            hi *= 1.5
            if hi > 1e3:
                return math.inf
        return sopt.brentq(g, lo if g(lo) < 0 else lo * 0.5, hi, xtol=1e-14)

    def box(self, init):
        """Bounds on ``(ln <S>, sigma2)`` around the initial log-normal."""
        m0 = math.log(init.mean)
        upper = min(self.sigma2_max, self.tail_sigma2_bound())
        lo = np.array([m0 - math.log(self.mean_factor), self.sigma2_min])
        hi = np.array([m0 + math.log(self.mean_factor), upper])
        return lo, hi


@dataclasses.dataclass(frozen=True)
class MatchResult:
    lognormal: LogNormalParams
    sigma_bw2: float
    aperture: float
    targets: EtaMoments
    achieved: tuple
    residual_norm: float
    status: str
    iterations: int

    @property
    def boundary(self):
        return self.status == "boundary"

    def model(self, convention=GAUSSIAN):
        return CircularBeamPdt(self.sigma_bw2, self.lognormal, self.aperture, convention)


def match_eta_moments(targets, sigma_bw2, a, init, constraints=MatchConstraints(), *,
                      strict=True, residual_tol=1e-8):
    """Find ``(mu, sigma2)`` whose model moments equal ``targets``.

    Solved by box-constrained Levenberg-Marquardt on relative residuals in
    the coordinates ``(ln <S>, sigma2)``, where every constraint is a plain
    bound.  With ``strict`` a :class:`CalibrationError` is raised when the
    solver does not converge or stops on the boundary with a residual above
    ``residual_tol``; otherwise the result carries the status.
    """
    if not isinstance(targets, EtaMoments):
        targets = EtaMoments(*targets)
    lo, hi = constraints.box(init)
    t1, t2 = targets.mean, targets.second

    def unpack(z):
        m, s2 = z
        return LogNormalParams(float(m - 0.5 * s2), float(s2))

    def residuals(z):
        m1, m2 = model_eta_moments(unpack(z), sigma_bw2, a)
        return np.array([m1 / t1 - 1.0, m2 / t2 - 1.0])

    z0 = np.array([math.log(init.mean), init.sigma2])
    res = least_squares_2(residuals, z0, lo, hi)
    ln = unpack(res.x)
    achieved = model_eta_moments(ln, sigma_bw2, a)
    out = MatchResult(ln, sigma_bw2, a, targets, achieved, res.residual_norm, res.status, res.n_iter)
    if strict:
        if res.status == "max-iterations":
            raise CalibrationError(
                f"eta-moment matching did not converge (residual {res.residual_norm:.3g})", out)
        if res.status == "boundary" and res.residual_norm > residual_tol:
            raise CalibrationError(
                "eta-moment targets unreachable inside the constraint box "
                f"(residual {res.residual_norm:.3g}, sigma2={ln.sigma2:.4g}, <S>={ln.mean:.4g})", out)
    return out


def calibrate(method, a, *, beam_stats=None, targets=None, sigma_bw2=None,
              convention=GAUSSIAN, constraints=MatchConstraints(), strict=True):
    """Calibrated model by ``"s-moments"`` or ``"eta-moments"``.

    The transmittance method needs ``beam_stats`` for its initial guess (and
    for ``sigma_bw2`` unless given separately) plus the ``targets``.
    """
    if method == "s-moments":
        if beam_stats is None:
            raise ValueError("s-moments calibration needs beam statistics")
        return calibrate_s_moments(beam_stats, a, convention)
    if method == "eta-moments":
        if beam_stats is None or targets is None:
            raise ValueError("eta-moments calibration needs beam statistics and targets")
        bw = beam_stats.sigma_bw2 if sigma_bw2 is None else sigma_bw2
        init = lognormal_from_s_moments(beam_stats.mean_s, beam_stats.mean_s2)
        res = match_eta_moments(targets, bw, a, init, constraints, strict=strict)
        return res.model(convention)
    raise ValueError(f"unknown calibration method {method!r}; expected one of {METHODS}")


@dataclasses.dataclass(frozen=True)
class LossyPdt:
    """PDT of ``eta_c * eta`` for a base model of ``eta``."""

    base: CircularBeamPdt
    eta_c: float

    def pdf(self, eta):
        eta = np.asarray(eta, dtype=float)
        return total_pdt(eta / self.eta_c, self.base) / self.eta_c

    def cdf(self, eta):
        eta = np.asarray(eta, dtype=float)
        return total_cdf(np.minimum(eta / self.eta_c, 1.0), self.base)

    def moment(self, p, route="quadrature"):
        return self.eta_c**p * pdt_moment(p, self.base, route=route)

    def sample(self, n, rng):
        return self.eta_c * sample_pdt(self.base, n, rng)

    @property
    def support_max(self):
        return self.eta_c


def apply_constant_loss(eta_c, mode, obj):
    """Incorporate a constant efficiency ``eta_c``.

    ``"rescale"`` wraps a model so that its density becomes
    ``eta_c^-1 P(eta / eta_c)``.  ``"fold"`` rewrites :class:`EtaMoments`
    targets to ``(eta_c <eta>, eta_c^2 <eta^2>)`` before calibration.
    ``eta_c = 1`` returns ``obj`` unchanged.
    """
    if not (0 < eta_c <= 1):
        raise ValueError("eta_c must lie in (0, 1]")
    if mode not in LOSS_MODES:
        raise ValueError(f"unknown loss mode {mode!r}; expected one of {LOSS_MODES}")
    if eta_c == 1.0:
        return obj
    if mode == "rescale":
        if isinstance(obj, LossyPdt):
            return LossyPdt(obj.base, obj.eta_c * eta_c)
        if not isinstance(obj, CircularBeamPdt):
            raise TypeError("rescale mode applies to a CircularBeamPdt")
        return LossyPdt(obj, eta_c)
    if not isinstance(obj, EtaMoments):
        raise TypeError("fold mode applies to EtaMoments targets")
    sq = None if obj.sqrt is None else math.sqrt(eta_c) * obj.sqrt
    return EtaMoments(eta_c * obj.mean, eta_c * eta_c * obj.second, sq)
