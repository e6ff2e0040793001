"""Sample statistics and goodness of fit for simulated ensembles."""

import csv
import dataclasses
import math

import numpy as np
from scipy import stats as sst

from .errors import SampleError
from .pdt import LogNormalParams

__all__ = [
    "EmpiricalSummary",
    "DensityTable",
    "summarize",
    "pearson_s_x02",
    "fit_lognormal",
    "ks_statistic",
    "ks_lognormal",
    "ks_pdt",
    "density_estimate",
    "write_two_column",
]


@dataclasses.dataclass(frozen=True)
class EmpiricalSummary:
    mean_eta: float
    mean_eta2: float
    mean_sqrt_eta: float
    var_eta: float
    sigma_bw2: float
    mean_s: float
    mean_s2: float
    corr_s_x02: float
    n: int

    def eta_moments(self):
        from .matching import EtaMoments

        return EtaMoments(self.mean_eta, self.mean_eta2, self.mean_sqrt_eta)

    def beam_stats(self):
        from .matching import BeamStats

        return BeamStats(self.sigma_bw2, self.mean_s, self.mean_s2)


def pearson_s_x02(S, x0):
    """Correlation of ``S`` and ``x0^2`` from raw sample moments."""
    S = np.asarray(S, dtype=float)
    q = np.asarray(x0, dtype=float) ** 2
    vs = np.mean(S * S) - np.mean(S) ** 2
    vq = np.mean(q * q) - np.mean(q) ** 2
    if not (vs > 0 and vq > 0):
        raise SampleError("correlation undefined for a sample with zero variance")
    r = (np.mean(S * q) - np.mean(S) * np.mean(q)) / math.sqrt(vs * vq)
    return float(np.clip(r, -1.0, 1.0))


def summarize(samples, aperture=None, *, isotropic=False):
    """Moments of a :class:`~turbulux.simulator.SampleSet`.

    ``aperture`` picks a transmittance column (default: the first).
    ``sigma_bw2`` averages the unbiased x and y centroid variances.
    With ``isotropic`` the spot moments use ``(Sx + Sy) / 2``.
    """
    if samples.n < 2:
        raise SampleError("need at least two realizations")
    eta = samples.eta if aperture is None else samples.eta_for(aperture)
    S = samples.S_iso if isotropic else samples.S
    bw = 0.5 * (np.var(samples.x0, ddof=1) + np.var(samples.y0, ddof=1))
    return EmpiricalSummary(
        mean_eta=float(np.mean(eta)),
        mean_eta2=float(np.mean(eta * eta)),
        mean_sqrt_eta=float(np.mean(np.sqrt(eta))),
        var_eta=float(np.var(eta, ddof=1)),
        sigma_bw2=float(bw),
        mean_s=float(np.mean(S)),
        mean_s2=float(np.mean(S * S)),
        corr_s_x02=pearson_s_x02(S, samples.x0),
        n=int(samples.n),
    )


def _check_sample(x, positive=False):
    x = np.asarray(x, dtype=float).ravel()
    if x.size < 10:
        raise SampleError("need at least 10 sample points")
    if not np.all(np.isfinite(x)):
        raise SampleError("sample contains non-finite values")
    if positive and np.any(x <= 0):
        raise SampleError("sample must be strictly positive")
    return x


def fit_lognormal(S, method="mle"):
    """Log-normal parameters from a positive sample.

    ``"mle"`` uses the mean and (biased) variance of ``ln S``;
    ``"moments"`` matches the sample ``<S>`` and ``<S^2>``.
    """
    S = _check_sample(S, positive=True)
    if method == "mle":
        logs = np.log(S)
        return LogNormalParams(float(np.mean(logs)), float(np.var(logs)))
    if method == "moments":
        m1, m2 = float(np.mean(S)), float(np.mean(S * S))
        s2 = math.log(m2 / (m1 * m1))
        return LogNormalParams(math.log(m1) - 0.5 * s2, s2)
    raise ValueError(f"unknown fit method {method!r}")


def ks_statistic(sample, cdf):
    """Kolmogorov-Smirnov distance between a sample and a reference CDF."""
    sample = _check_sample(sample)
    return float(sst.kstest(sample, cdf).statistic)


def ks_lognormal(S, method="mle"):
    """KS distance of ``S`` to a log-normal fitted to it; returns ``(D_N, params)``."""
    params = fit_lognormal(S, method)
    return ks_statistic(S, params.cdf), params


def ks_pdt(eta, model):
    """KS distance between a transmittance sample and a model PDT."""
    eta = _check_sample(eta)
    return ks_statistic(eta, model.cdf)


@dataclasses.dataclass(frozen=True)
class DensityTable:
    x: np.ndarray
    density: np.ndarray
    kind: str
    bandwidth: float  # bin width or kernel bandwidth

    def integral(self):
        if self.kind == "histogram":
            return float(np.sum(self.density) * self.bandwidth)
        return float(np.trapezoid(self.density, self.x))

    def write_csv(self, path, header=("x", "density")):
        write_two_column(path, self.x, self.density, header)


def density_estimate(sample, kind="histogram", points=512):
    """Histogram (Freedman-Diaconis bins) or Gaussian KDE (Silverman bandwidth).

    Histogram output is tabulated at bin centres.  The kernel estimate is
    evaluated on a grid covering the sample plus four bandwidths on each
    side and renormalized to unit trapezoidal area.
    """
    x = _check_sample(sample)
    if kind == "histogram":
        dens, edges = np.histogram(x, bins="fd", density=True)
        return DensityTable(0.5 * (edges[1:] + edges[:-1]), dens, kind, float(edges[1] - edges[0]))
    if kind == "kernel":
        kde = sst.gaussian_kde(x, bw_method="silverman")
        bw = float(kde.factor * np.std(x, ddof=1))
        grid = np.linspace(x.min() - 4 * bw, x.max() + 4 * bw, points)
        dens = kde(grid)
        dens /= np.trapezoid(dens, grid)
        return DensityTable(grid, dens, kind, bw)
    raise ValueError(f"unknown density kind {kind!r}")


def write_two_column(path, x, y, header=("x", "y")):
    """Write two aligned columns as CSV with full float precision."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for a, b in zip(np.asarray(x, dtype=float), np.asarray(y, dtype=float)):
            w.writerow([repr(float(a)), repr(float(b))])
