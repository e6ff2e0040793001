"""Transfer of nonclassical light through a fading channel.

The input is an amplitude-squeezed coherent state ``D(alpha0) S(chi)|0>``
with real ``alpha0, chi >= 0``; the quadrature ``x = (a + a^dagger)/sqrt 2``
has vacuum variance 1/2 and is squeezed by ``S(chi)`` to ``e^(-2 chi)/2``.
The channel multiplies the amplitude by ``sqrt(eta_c eta)``, with ``eta``
drawn from a transmittance law supplied by an :class:`EtaAverager`.

Three witnesses are propagated:

* Mandel ``Q`` through the exact moment relation
  ``Q_out = (<eta^2>/<eta>) Q_in + (<d eta^2>/<eta>) <n>_in``;
* click statistics of ``N`` on-off detectors behind an equal ``N``-way
  splitter, and the binomial parameter ``Q_N``;
* the normally ordered quadrature variance
  ``<:dx^2:>_out = <eta><:dx^2:>_in + (<eta> - <sqrt eta>^2) <x>_in^2``.
"""

import csv
import dataclasses
import math

import numpy as np
from scipy import stats as sst

from .errors import QuantumError
from .numerics import gauss_legendre

__all__ = [
    "GaussianInputState",
    "InputMoments",
    "ClickDetector",
    "ClickStatistics",
    "EtaAverager",
    "squeezing_db_to_chi",
    "input_gaussian_moments",
    "photon_amplitudes",
    "photon_distribution",
    "default_cutoff",
    "attenuated_photon_dist",
    "mandel_q_out",
    "click_distribution",
    "click_statistics",
    "squeezing_out",
    "write_curve",
]

VACUUM_VARIANCE = 0.5
_TAIL = 1e-10
_NODES = 129
_CDF_TABLE = 1025


@dataclasses.dataclass(frozen=True)
class GaussianInputState:
    alpha0: float
    chi: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.alpha0) and self.alpha0 >= 0):
            raise QuantumError("alpha0 must be a finite real >= 0")
        if not (math.isfinite(self.chi) and self.chi >= 0):
            raise QuantumError("chi must be a finite real >= 0")


def squeezing_db_to_chi(db):
    """Squeezing parameter for a quadrature-variance reduction of ``db`` dB (negative)."""
    return -db * math.log(10.0) / 20.0


@dataclasses.dataclass(frozen=True)
class InputMoments:
    mean_n: float
    var_n: float
    q: float
    mean_x: float
    normal_var_x: float


def input_gaussian_moments(state):
    """Photon-number and quadrature moments of the input state."""
    a2 = state.alpha0**2
    sh, ch = math.sinh(state.chi), math.cosh(state.chi)
    mean_n = a2 + sh * sh
    var_n = a2 * math.exp(-2 * state.chi) + 2 * sh * sh * ch * ch
    q = var_n / mean_n - 1.0 if mean_n > 0 else math.nan
    return InputMoments(mean_n, var_n, q, math.sqrt(2.0) * state.alpha0, 0.5 * math.expm1(-2 * state.chi))


def default_cutoff(state):
    """Number-basis cutoff ``4<n> + 10 sqrt(<n>) + 20``."""
    n = input_gaussian_moments(state).mean_n
    return int(math.ceil(4 * n + 10 * math.sqrt(n) + 20))


def photon_amplitudes(state, cutoff):
    """``<n|D(alpha0) S(chi)|0>`` for ``n < cutoff``.

    Uses ``sqrt(n+1) cosh(chi) c[n+1] = alpha0 e^chi c[n] - sqrt(n) sinh(chi) c[n-1]``
    with periodic rescaling, so large amplitudes neither overflow nor
    underflow before the final normalization by ``c[0]``.
    """
    if cutoff < 1:
        raise QuantumError("cutoff must be positive")
    a, r = state.alpha0, state.chi
    ch, sh = math.cosh(r), math.sinh(r)
    g = a * math.exp(r)
    log_c0 = -0.5 * a * a * (1.0 + math.tanh(r)) - 0.5 * math.log(ch)
    c = np.zeros(cutoff)
    logs = np.zeros(cutoff)  # c_true[n] = c[n] * exp(logs[n])
    c[0] = 1.0
    scale = 0.0
    prev, cur = 0.0, 1.0
    for n in range(cutoff - 1):
        nxt = (g * cur - math.sqrt(n) * sh * prev) / (ch * math.sqrt(n + 1))
        prev, cur = cur, nxt
        m = abs(cur)
        if m > 1e100 or (0 < m < 1e-100):
            s = math.log(m)
            prev /= m
            cur /= m
            scale += s
        c[n + 1] = cur
        logs[n + 1] = scale
    with np.errstate(over="ignore", under="ignore"):
        mag = np.where(c != 0, np.log(np.abs(c), where=c != 0, out=np.zeros_like(c)) + logs + log_c0, -np.inf)
        return np.sign(c) * np.exp(mag)


def photon_distribution(state, cutoff=None):
    """Photon-number probabilities of the input; raises if the tail exceeds 1e-10.

    Without an explicit ``cutoff`` the default is doubled until the tail
    bound holds (strongly squeezed states decay slower than the default
    assumes).
    """
    if cutoff is None:
        cutoff = default_cutoff(state)
        while True:
            p = photon_amplitudes(state, cutoff) ** 2
            if 1.0 - math.fsum(p) <= _TAIL or cutoff > 1 << 16:
                break
            cutoff *= 2
    else:
        cutoff = int(cutoff)
        p = photon_amplitudes(state, cutoff) ** 2
    tail = 1.0 - math.fsum(p)
    if tail > _TAIL:
        raise QuantumError(f"cutoff {cutoff} leaves probability {tail:.3g} in the tail; increase it")
    return p


def attenuated_photon_dist(state, eta, cutoff=None):
    """Photon statistics after a loss channel of fixed transmittance ``eta``."""
    if not 0 <= eta <= 1:
        raise QuantumError("eta must lie in [0, 1]")
    p = photon_distribution(state, cutoff)
    n = np.arange(p.size)
    kernel = sst.binom.pmf(n[:, None], n[None, :], eta)  # [m, j]
    return kernel @ p


@dataclasses.dataclass(frozen=True)
class ClickDetector:
    n: int

    def __post_init__(self):
        if not (isinstance(self.n, (int, np.integer)) and self.n >= 1):
            raise QuantumError("number of detectors must be a positive integer")


class EtaAverager:
    """Transmittance law used to average channel outputs.

    Build with :meth:`from_model`, :meth:`from_samples` or :meth:`point`.
    ``eta_c`` multiplies every transmittance.  For a model the mean and
    second moment come from the closed-form (Marcum) route, the square-root
    moment from quadrature, and distribution averages from Gauss-Legendre
    nodes in the probability variable.
    """

    def __init__(self, kind, source, eta_c=1.0):
        if kind not in ("model", "samples", "point"):
            raise ValueError(f"unknown averager kind {kind!r}")
        if not 0 < eta_c <= 1:
            raise QuantumError("eta_c must lie in (0, 1]")
        self.kind = kind
        self.source = source
        self.eta_c = float(eta_c)
        self._nodes = None

    @classmethod
    def from_model(cls, model, eta_c=1.0):
        return cls("model", model, eta_c)

    @classmethod
    def from_samples(cls, eta, eta_c=1.0):
        eta = np.asarray(getattr(eta, "eta", eta), dtype=float)
        if eta.ndim != 1 or eta.size == 0 or np.any(eta < 0) or np.any(eta > 1):
            raise QuantumError("sample transmittances must be a non-empty 1-D array in [0, 1]")
        return cls("samples", eta, eta_c)

    @classmethod
    def point(cls, eta, eta_c=1.0):
        if not 0 <= eta <= 1:
            raise QuantumError("eta must lie in [0, 1]")
        return cls("point", float(eta), eta_c)

    def moment(self, p, route=None):
        """``<(eta_c eta)^p>``."""
        c = self.eta_c**p
        if self.kind == "point":
            return c * self.source**p
        if self.kind == "samples":
            return c * float(np.mean(self.source**p))
        if route is None:
            route = "marcum" if p in (1, 2) else "quadrature"
        return c * self.source.moment(p, route=route)

    def nodes(self):
        """Transmittances ``eta_c eta_i`` and weights summing to one."""
        if self._nodes is None:
            if self.kind == "point":
                self._nodes = (np.array([self.source]), np.array([1.0]))
            elif self.kind == "samples":
                self._nodes = (self.source, np.full(self.source.size, 1.0 / self.source.size))
            else:
                self._nodes = _quantile_nodes(self.source)
        eta, w = self._nodes
        return self.eta_c * eta, w


def _quantile_nodes(model, n=_NODES):
    # Gauss-Legendre in the probability variable through a tabulated quantile
    top = getattr(model, "support_max", None) or 1.0
    grid = np.union1d(np.linspace(0.0, top, _CDF_TABLE), np.geomspace(1e-9 * top, top, _CDF_TABLE // 4))
    F = np.maximum.accumulate(np.clip(np.asarray(model.cdf(grid), dtype=float), 0.0, 1.0))
    F = (F - F[0]) / (F[-1] - F[0])
    keep = np.concatenate([[True], np.diff(F) > 1e-15])
    u, w = gauss_legendre(n, 0.0, 1.0)
    return np.clip(np.interp(u, F[keep], grid[keep]), 0.0, top), w


def _averager_stats(averager):
    m1 = averager.moment(1)
    m2 = averager.moment(2)
    if not m1 > 0:
        raise QuantumError("mean transmittance is zero")
    return m1, m2


def mandel_q_out(q_in, mean_n_in, averager):
    """Output Mandel parameter from the moment relation."""
    m1, m2 = _averager_stats(averager)
    return (m2 / m1) * q_in + ((m2 - m1 * m1) / m1) * mean_n_in


def click_distribution(p, eta, n_det):
    """Click probabilities ``c[i, k]`` for photon law ``p`` at transmittances ``eta[i]``.

    Photons are added one at a time: each is lost or lands on an already
    firing detector with probability ``1 - eta + eta k / N`` and fires a new
    detector otherwise, which keeps every term non-negative.
    """
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    N = int(n_det)
    k = np.arange(N + 1)
    stay = 1.0 - eta[:, None] + eta[:, None] * k[None, :] / N
    move = eta[:, None] * (N - k[None, :]) / N  # from k to k + 1
    K = np.zeros((eta.size, N + 1))
    K[:, 0] = 1.0
    out = p[0] * K
    for j in range(1, p.size):
        nxt = K * stay
        nxt[:, 1:] += K[:, :-1] * move[:, :-1]
        K = nxt
        out += p[j] * K
    return out


def _generating(p, z):
    # sum_j p_j z^j for z in [0, 1] (Horner)
    acc = np.zeros_like(z)
    for pj in p[::-1]:
        acc = acc * z + pj
    return acc


@dataclasses.dataclass(frozen=True)
class ClickStatistics:
    probabilities: np.ndarray
    mean: float
    variance: float
    q_n: float


def click_statistics(state, detector, averager, cutoff=None):
    """Averaged click distribution, its mean and variance, and ``Q_N``.

    The moments use the closed forms ``<k> = N(1 - G(1 - eta/N))`` and
    ``<k(k-1)> = N(N-1)(1 - 2G(1 - eta/N) + G(1 - 2 eta/N))`` with ``G`` the
    photon generating function.  ``Q_N`` is NaN when no click can occur.
    """
    p = photon_distribution(state, cutoff)
    eta, w = averager.nodes()
    N = detector.n
    probs = w @ click_distribution(p, eta, N)
    g1 = _generating(p, 1.0 - eta / N)
    g2 = _generating(p, 1.0 - 2.0 * eta / N)
    mean = N * (1.0 - float(w @ g1))
    fact2 = N * (N - 1) * (1.0 - 2.0 * float(w @ g1) + float(w @ g2))
    var = fact2 + mean - mean * mean
    denom = mean * (N - mean)
    q = N * var / denom - 1.0 if denom > 1e-300 else math.nan
    return ClickStatistics(probs, mean, var, q)


def squeezing_out(state, averager):
    """Output quadrature variance ``<dx^2>_out`` (vacuum 1/2)."""
    inp = input_gaussian_moments(state)
    if inp.mean_x == 0 and inp.normal_var_x == 0:
        return VACUUM_VARIANCE
    m1 = averager.moment(1, route="quadrature") if averager.kind == "model" else averager.moment(1)
    sq = averager.moment(0.5)
    if sq is None or not math.isfinite(sq):
        raise QuantumError("averager cannot supply <sqrt(eta)>")
    dt2 = m1 - sq * sq
    if dt2 < -1e-12 * max(m1, 1e-300):
        raise QuantumError(f"<dT^2> = {dt2:.3g} is negative")
    dt2 = max(dt2, 0.0)
    return m1 * inp.normal_var_x + dt2 * inp.mean_x**2 + VACUUM_VARIANCE


def write_curve(path, header, rows):
    """CSV with one header row and full-precision numeric rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])
