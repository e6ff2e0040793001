"""Monte-Carlo reference channel: sparse-spectrum phase screens with
split-step propagation of the paraxial wave equation.

Each realization starts from the transmitter Gaussian beam, alternates
vacuum propagation in the spectral domain with ``K`` thin random phase
screens placed at the centres of ``K`` equal slabs, and reads off the
transmittance ``eta``, the centroid ``(x0, y0)`` and the squared spot
radius ``S`` at the receiver plane.

A screen is a sum of ``M`` random plane waves, one per logarithmic annulus
of the spatial-frequency range ``[kappa_min, kappa_max]``.  The phase
spectrum of a slab of thickness ``dz`` is ``2 pi k^2 dz Phi_n(kappa)`` with
the modified von Karman spectrum::

    Phi_n = 0.033 Cn2 exp(-(kappa l0 / 2 pi)^2) / (kappa^2 + L0^-2)^(11/6)

so mode ``m`` carries phase variance
``4 pi^2 k^2 dz * integral(kappa Phi_n dkappa)`` over its annulus and a
wavenumber drawn from the radial density ``kappa Phi_n`` inside it.
"""

import concurrent.futures
import csv
import dataclasses
import functools
import json
import math
import os
import warnings
from pathlib import Path

import numpy as np
from scipy import fft as sfft
from scipy import integrate as sint

from .channel import ChannelConfig, config_from_dict, config_to_dict, derive_channel
from .errors import GridError, SimulationError
from .numerics import RngStream

__all__ = [
    "GridSpec",
    "FieldGrid",
    "Observables",
    "SampleSet",
    "AliasingWarning",
    "spectrum",
    "initial_field",
    "sample_phase_screen",
    "propagate",
    "measure_observables",
    "aperture_mask",
    "run_ensemble",
    "load_samples",
]

_TABLE = 17  # nodes per annulus for the radial inverse CDF
_BAND_LIMIT = 0.01
_ETA_SLACK = 1e-6
FORMAT_VERSION = 1


class AliasingWarning(UserWarning):
    """Noticeable power reached the absorbing boundary band."""


def spectrum(kappa, config):
    """Modified von Karman refractive-index spectrum ``Phi_n(kappa)``."""
    kappa = np.asarray(kappa, dtype=float)
    outer = 0.0 if math.isinf(config.outer_scale) else config.outer_scale**-2
    return (0.033 * config.cn2 * np.exp(-(kappa * config.inner_scale / (2 * math.pi)) ** 2)
            / (kappa * kappa + outer) ** (11.0 / 6.0))


def _estimate_w_lt(config):
    ch = derive_channel(config)
    x, om, w0 = ch.rytov, ch.fresnel_number, config.w0
    vacuum = w0 * w0 * ((1.0 - config.length / config.f0) ** 2 + om**-2)
    return math.sqrt(vacuum + w0 * w0 * 4.17 * x * om ** (-7.0 / 6.0))


@dataclasses.dataclass(frozen=True)
class GridSpec:
    """Numerical grid and screen settings for one channel.

    ``n`` points per side over a square ``window`` (m), ``screens`` phase
    screens with ``modes`` plane waves each, spatial frequencies in
    ``[kappa_min, kappa_max]`` (rad/m), and an absorbing band covering the
    outer ``mask_fraction`` of each half-window.
    """

    n: int
    window: float
    screens: int
    modes: int
    kappa_min: float
    kappa_max: float
    mask_fraction: float = 0.1

    def __post_init__(self):
        if not (isinstance(self.n, (int, np.integer)) and self.n >= 128 and self.n & (self.n - 1) == 0):
            raise GridError(f"n must be a power of two >= 128, got {self.n!r}")
        if not self.window > 0:
            raise GridError("window must be positive")
        if self.screens < 1 or self.modes < 1:
            raise GridError("need at least one screen and one mode")
        if not 0 < self.kappa_min < self.kappa_max:
            raise GridError("need 0 < kappa_min < kappa_max")
        if self.kappa_max > math.pi / self.dx * (1 + 1e-12):
            raise GridError(f"kappa_max {self.kappa_max:.4g} exceeds the grid Nyquist {math.pi / self.dx:.4g}")
        if not 0 < self.mask_fraction < 0.5:
            raise GridError("mask_fraction must lie in (0, 0.5)")

    @property
    def dx(self):
        return self.window / self.n

    @classmethod
    def for_channel(cls, config, n=512, *, window=None, screens=10, modes=512, mask_fraction=0.1):
        """Defaults: window of 8 long-term radii, ``kappa_min = 2 pi / L0``
        and ``kappa_max = min(2 pi / l0, 2 pi / (3 dx))``."""
        if window is None:
            window = 8.0 * max(_estimate_w_lt(config), config.w0)
        dx = window / n
        if math.isinf(config.outer_scale):
            kmin = 2 * math.pi / (100.0 * window)
        else:
            kmin = 2 * math.pi / config.outer_scale
        kmax = min(2 * math.pi / config.inner_scale, 2 * math.pi / (3.0 * dx))
        return cls(int(n), float(window), int(screens), int(modes), kmin, kmax, mask_fraction)

    def check_channel(self, config):
        """Raise :class:`GridError` if the grid cannot hold the beam."""
        need = 6.0 * max(config.w0, _estimate_w_lt(config))
        if self.window < need * (1 - 1e-9):
            raise GridError(f"window {self.window:.4g} m below 6 beam radii ({need:.4g} m)")
        if 2.0 * config.w0 < 16.0 * self.dx:
            raise GridError(f"W0 = {config.w0:.4g} m is resolved by fewer than 16 points across")
        if 4.0 * config.aperture > self.window:
            raise GridError("aperture does not fit well inside the window")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc):
        return cls(int(doc["n"]), float(doc["window"]), int(doc["screens"]), int(doc["modes"]),
                   float(doc["kappa_min"]), float(doc["kappa_max"]), float(doc["mask_fraction"]))

    def coords(self):
        return (np.arange(self.n) - self.n // 2) * self.dx


@dataclasses.dataclass
class FieldGrid:
    """Complex amplitude ``u[iy, ix]`` at axial position ``z``.

    ``absorbed`` is the power removed by the boundary mask so far and
    ``band_power`` the largest fraction of power seen inside the band.
    """

    u: np.ndarray
    dx: float
    z: float
    absorbed: float = 0.0
    band_power: float = 0.0

    @property
    def power(self):
        return float(np.sum(np.abs(self.u) ** 2) * self.dx * self.dx)


def initial_field(config, grid):
    """Transmitter field ``sqrt(2/(pi W0^2)) exp(-r^2/W0^2 - i k r^2 / (2 F0))``."""
    if 2.0 * config.w0 < 16.0 * grid.dx:
        raise GridError(f"W0 = {config.w0:.4g} m is resolved by fewer than 16 points across")
    k = 2 * math.pi / config.wavelength
    x = grid.coords()
    r2 = x[None, :] ** 2 + x[:, None] ** 2
    curv = 0.0 if math.isinf(config.f0) else k / (2.0 * config.f0)
    u = math.sqrt(2.0 / (math.pi * config.w0**2)) * np.exp(-r2 / config.w0**2 - 1j * curv * r2)
    return FieldGrid(u, grid.dx, 0.0)


def _boundary_profile(grid):
    half = grid.window / 2.0
    band = grid.mask_fraction * half
    x = np.abs(grid.coords())
    depth = np.maximum(x - (half - band), 0.0) / (0.5 * band)
    return np.exp(-(depth**4))


@dataclasses.dataclass(frozen=True)
class _ScreenTable:
    variance: np.ndarray  # per-mode phase variance for a slab dz
    knots: np.ndarray  # (M, _TABLE) radial nodes
    cdf: np.ndarray  # (M, _TABLE) normalized cumulative weight


@functools.lru_cache(maxsize=32)
def _screen_table(config, grid, dz):
    k = 2 * math.pi / config.wavelength
    edges = np.geomspace(grid.kappa_min, grid.kappa_max, grid.modes + 1)
    t = np.linspace(0.0, 1.0, _TABLE)
    knots = np.exp(np.log(edges[:-1])[:, None] + np.diff(np.log(edges))[:, None] * t)
    # integral of kappa Phi dkappa = integral of kappa^2 Phi dln(kappa)
    dens = knots**2 * spectrum(knots, config)
    cum = sint.cumulative_trapezoid(dens, np.log(knots), axis=1, initial=0.0)
    total = cum[:, -1]
    variance = 4 * math.pi**2 * k * k * dz * total
    with np.errstate(invalid="ignore", divide="ignore"):
        cdf = np.where(total[:, None] > 0, cum / total[:, None], t)
    return _ScreenTable(variance, knots, cdf)


def _draw_modes(table, rng):
    m = table.variance.size
    u = rng.random(m)
    theta = rng.random(m) * (2 * math.pi)
    g = rng.standard_normal((2, m))
    j = np.clip(np.sum(table.cdf < u[:, None], axis=1), 1, _TABLE - 1)
    rows = np.arange(m)
    c0, c1 = table.cdf[rows, j - 1], table.cdf[rows, j]
    k0, k1 = table.knots[rows, j - 1], table.knots[rows, j]
    w = np.where(c1 > c0, (u - c0) / np.where(c1 > c0, c1 - c0, 1.0), 0.0)
    kappa = np.exp(np.log(k0) + w * (np.log(k1) - np.log(k0)))
    amp = np.sqrt(table.variance) * (g[0] + 1j * g[1])
    return kappa * np.cos(theta), kappa * np.sin(theta), amp


def _phasors(x, kappa, block=16):
    # exp(i kappa x) on a uniform grid: exact on the first block of rows,
    # then shifted block by block
    n = x.size
    if n % block:
        return np.exp(1j * np.outer(x, kappa))
    dx = x[1] - x[0]
    head = np.exp(1j * np.outer(x[:block], kappa))
    shift = np.exp(1j * np.outer(np.arange(n // block) * (block * dx), kappa))
    return (shift[:, None, :] * head[None, :, :]).reshape(n, kappa.size)


def _synthesize(kx, ky, amp, x):
    # phi[iy, ix] = Re sum_m amp_m exp(i ky_m y) exp(i kx_m x), as one real
    # single-precision product (phase error ~1e-6 rad)
    m = amp.size
    ey = _phasors(x, ky) * amp
    ex = _phasors(x, kx)
    left = np.empty((x.size, 2 * m), dtype=np.float32)
    right = np.empty((x.size, 2 * m), dtype=np.float32)
    left[:, :m] = ey.real
    np.negative(ey.imag, out=left[:, m:], casting="same_kind")
    right[:, :m] = ex.real
    right[:, m:] = ex.imag
    return (left @ right.T).astype(float)


def sample_phase_screen(config, dz, grid, rng):
    """One sparse-spectrum phase screen (rad) for a slab of thickness ``dz``."""
    if not dz > 0:
        raise ValueError("dz must be positive")
    table = _screen_table(config, grid, float(dz))
    if not np.all(np.isfinite(table.variance)):
        raise GridError("spectral annuli produced non-finite mode variances")
    kx, ky, amp = _draw_modes(table, rng)
    return _synthesize(kx, ky, amp, grid.coords())


class _Plan:
    """Per-(channel, grid) precomputation shared by all realizations."""

    def __init__(self, config, grid):
        self.config = config
        self.grid = grid
        self.k = 2 * math.pi / config.wavelength
        self.dz = config.length / grid.screens
        kf = 2 * math.pi * sfft.fftfreq(grid.n, d=grid.dx)
        k2 = kf[None, :] ** 2 + kf[:, None] ** 2
        self.h_half = np.exp(-1j * k2 * self.dz / (4.0 * self.k))
        self.h_full = self.h_half * self.h_half
        prof = _boundary_profile(grid)
        w = int(np.count_nonzero(prof[: grid.n // 2] < 1.0))
        self.edge = w
        # the mask differs from one only on four strips of width w
        self.strip_rows = prof[:, None] * prof[None, :]
        self.strip_rows = np.concatenate([self.strip_rows[:w], self.strip_rows[grid.n - w:]])
        self.strip_cols = (prof[w:grid.n - w, None] * prof[None, :])
        self.strip_cols = np.concatenate([self.strip_cols[:, :w], self.strip_cols[:, grid.n - w:]], axis=1)
        self.u0 = initial_field(config, grid).u
        self.table = _screen_table(config, grid, self.dz) if config.cn2 > 0 else None
        self.x = grid.coords()

    def step(self, u, h):
        return sfft.ifft2(sfft.fft2(u, workers=1) * h, workers=1)

    def _absorb(self, u):
        """Apply the boundary mask in place; return (band power, absorbed power)."""
        n, w = self.grid.n, self.edge
        if w == 0:
            return 0.0, 0.0
        rows = np.concatenate([u[:w], u[n - w:]])
        cols = np.concatenate([u[w:n - w, :w], u[w:n - w, n - w:]], axis=1)
        band = float(np.sum(np.abs(rows) ** 2) + np.sum(np.abs(cols) ** 2))
        rows *= self.strip_rows
        cols *= self.strip_cols
        kept = float(np.sum(np.abs(rows) ** 2) + np.sum(np.abs(cols) ** 2))
        u[:w], u[n - w:] = rows[:w], rows[w:]
        u[w:n - w, :w], u[w:n - w, n - w:] = cols[:, :w], cols[:, w:]
        dx2 = self.grid.dx**2
        return band * dx2, (band - kept) * dx2

    def run(self, rng=None, screens=None, u0=None):
        """Propagate to the receiver; ``screens`` overrides random phases."""
        grid = self.grid
        u = (self.u0 if u0 is None else u0).astype(complex, copy=True)
        power = float(np.sum(np.abs(u) ** 2)) * grid.dx**2
        absorbed = 0.0
        band = 0.0
        for j in range(grid.screens + 1):
            u = self.step(u, self.h_half if j in (0, grid.screens) else self.h_full)
            in_band, lost = self._absorb(u)
            if power > 0:
                band = max(band, in_band / power)
            absorbed += lost
            power -= lost
            if j == grid.screens:
                break
            if screens is not None:
                phi = screens[j]
            elif self.table is not None:
                kx, ky, amp = _draw_modes(self.table, rng)
                phi = _synthesize(kx, ky, amp, self.x)
            else:
                phi = None
            if phi is not None:
                rot = np.empty_like(u)
                rot.real = np.cos(phi)
                rot.imag = np.sin(phi)
                u *= rot
        return FieldGrid(u, grid.dx, self.config.length, absorbed, band)


@functools.lru_cache(maxsize=4)
def _plan(config, grid):
    return _Plan(config, grid)


def propagate(field, config, grid, rng=None, *, screens=None, warn=True):
    """Split-step propagation of ``field`` from z = 0 to z = L.

    Half vacuum step, then for each slab a screen followed by a full step
    (the last one a half step), applying the absorbing mask after every
    vacuum step.  ``screens`` may supply ``K`` explicit phase arrays (or
    ``None`` entries); otherwise screens are drawn from ``rng``.
    """
    if field.z != 0.0:
        raise ValueError("propagation starts at z = 0")
    plan = _plan(config, grid)
    if screens is not None and len(screens) != grid.screens:
        raise ValueError(f"expected {grid.screens} screens, got {len(screens)}")
    if screens is None and config.cn2 > 0 and rng is None:
        raise ValueError("need a random generator for turbulent propagation")
    out = plan.run(rng, screens, field.u)
    if warn and out.band_power > _BAND_LIMIT:
        warnings.warn(f"{out.band_power:.2%} of the power reached the absorbing band", AliasingWarning,
                      stacklevel=2)
    return out


@functools.lru_cache(maxsize=16)
def aperture_mask(n, dx, a, sub=4):
    """Centred disk of radius ``a`` with ``sub x sub`` supersampled edges."""
    x = (np.arange(n) - n // 2) * dx
    r = np.hypot(x[None, :], x[:, None])
    mask = (r <= a).astype(float)
    edge = np.abs(r - a) < dx / math.sqrt(2.0)
    iy, ix = np.nonzero(edge)
    off = ((np.arange(sub) + 0.5) / sub - 0.5) * dx
    sx = x[ix][:, None, None] + off[None, None, :]
    sy = x[iy][:, None, None] + off[None, :, None]
    mask[iy, ix] = np.mean(sx * sx + sy * sy <= a * a, axis=(1, 2))
    mask.flags.writeable = False
    return mask


@dataclasses.dataclass(frozen=True)
class Observables:
    eta: np.ndarray  # one entry per aperture, before clipping
    x0: float
    y0: float
    S: float
    Sy: float
    power: float


def measure_observables(field, a):
    """Transmittance for aperture radius (or radii) ``a``, centroid and spot size.

    Centroid and second moments are normalized by the total power on the
    grid; ``S`` uses the x-axis and ``Sy`` the y-axis.
    """
    radii = np.atleast_1d(np.asarray(a, dtype=float))
    n = field.u.shape[0]
    inten = np.abs(field.u) ** 2
    dx2 = field.dx**2
    eta = np.array([float(np.sum(aperture_mask(n, field.dx, float(r)) * inten)) * dx2 for r in radii])
    x = (np.arange(n) - n // 2) * field.dx
    px = inten.sum(axis=0)
    py = inten.sum(axis=1)
    total = float(px.sum())
    x0 = float(px @ x) / total
    y0 = float(py @ x) / total
    S = 4.0 * float(px @ (x - x0) ** 2) / total
    Sy = 4.0 * float(py @ (x - y0) ** 2) / total
    return Observables(eta, x0, y0, S, Sy, total * dx2)


def _clip_eta(eta, index):
    if np.any(eta < -_ETA_SLACK) or np.any(eta > 1 + _ETA_SLACK):
        raise SimulationError(f"transmittance {eta} outside [0, 1]", index)
    return np.clip(eta, 0.0, 1.0)


def _realize(config, grid, seed, index, radii):
    plan = _plan(config, grid)
    rng = RngStream(seed, index).generator()
    out = plan.run(rng)
    obs = measure_observables(out, radii)
    eta = _clip_eta(obs.eta, index)
    return eta, obs.x0, obs.y0, obs.S, obs.Sy, out.band_power


def _realize_chunk(config, grid, seed, indices, radii):
    rows = []
    for i in indices:
        try:
            rows.append(_realize(config, grid, seed, i, radii))
        except SimulationError:
            raise
        except Exception as exc:  # noqa: BLE001
            raise SimulationError(f"realization {i} failed: {exc!r}", i) from exc
    return rows


@dataclasses.dataclass(frozen=True)
class SampleSet:
    """Per-realization observables of an ensemble.

    ``etas`` has one column per radius in ``apertures``; ``eta`` is the
    column for the first radius.  ``Sy`` holds the y-axis spot moment.
    """

    etas: np.ndarray
    x0: np.ndarray
    y0: np.ndarray
    S: np.ndarray
    Sy: np.ndarray
    apertures: tuple
    seed: int
    grid: GridSpec
    config: ChannelConfig
    band_warnings: int = 0

    def __post_init__(self):
        n = self.S.shape[0]
        if self.etas.shape != (n, len(self.apertures)):
            raise ValueError("etas must have one column per aperture")
        for arr in (self.x0, self.y0, self.Sy):
            if arr.shape != (n,):
                raise ValueError("observable arrays must have equal length")
        if np.any(self.etas < 0) or np.any(self.etas > 1):
            raise ValueError("transmittances must lie in [0, 1]")
        if np.any(self.S <= 0):
            raise ValueError("spot moments must be positive")

    @property
    def n(self):
        return self.S.shape[0]

    @property
    def eta(self):
        return self.etas[:, 0]

    def eta_for(self, a):
        """Transmittance column for aperture radius ``a``."""
        for j, r in enumerate(self.apertures):
            if math.isclose(r, a, rel_tol=1e-9):
                return self.etas[:, j]
        raise KeyError(f"aperture {a!r} not simulated; have {self.apertures}")

    @property
    def S_iso(self):
        """Isotropic spot estimate ``(Sx + Sy) / 2``."""
        return 0.5 * (self.S + self.Sy)

    def columns(self):
        names = ["idx", "eta", "x0_m", "y0_m", "S_m2", "Sy_m2"]
        names += [f"eta_{j}" for j in range(1, len(self.apertures))]
        return names

    def save(self, path):
        """Write ``path`` (CSV) and ``path`` with suffix ``.json`` (metadata)."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns())
            for i in range(self.n):
                row = [self.etas[i, 0], self.x0[i], self.y0[i], self.S[i], self.Sy[i]]
                row += list(self.etas[i, 1:])
                w.writerow([i] + [repr(float(v)) for v in row])
        meta = {
            "format": FORMAT_VERSION,
            "seed": int(self.seed),
            "n": int(self.n),
            "apertures_m": [float(a) for a in self.apertures],
            "grid": self.grid.to_dict(),
            "channel": config_to_dict(self.config),
            "band_warnings": int(self.band_warnings),
        }
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return path


def load_samples(path):
    """Read a :class:`SampleSet` written by :meth:`SampleSet.save`."""
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    if meta.get("format") != FORMAT_VERSION:
        raise ValueError(f"unsupported sample format {meta.get('format')!r}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in r] for r in body], dtype=float).reshape(len(body), len(header))
    if not np.array_equal(data[:, 0], np.arange(len(body))):
        raise ValueError("sample rows out of order")
    n_ap = len(meta["apertures_m"])
    etas = np.column_stack([data[:, 1]] + [data[:, 6 + j] for j in range(n_ap - 1)])
    return SampleSet(etas, data[:, 2].copy(), data[:, 3].copy(), data[:, 4].copy(), data[:, 5].copy(),
                     tuple(meta["apertures_m"]), int(meta["seed"]), GridSpec.from_dict(meta["grid"]),
                     config_from_dict(meta["channel"]), int(meta["band_warnings"]))


def _worker_count(workers):
    if workers is None:
        workers = int(os.environ.get("TURBULUX_WORKERS", "1") or 1)
    if workers < 1:
        raise ValueError("workers must be >= 1")
    return workers


def run_ensemble(config, grid, n, seed, workers=None, *, apertures=None, path=None, progress=None):
    """Simulate ``n`` independent realizations.

    Realization ``i`` draws its screens from stream ``(seed, i)``, so the
    result does not depend on ``workers``.  ``apertures`` lists the radii
    to evaluate (default: the configured one).  With ``path`` the set is
    also saved.  ``progress`` is called with the number of finished
    realizations.
    """
    if n < 1:
        raise ValueError("need at least one realization")
    grid.check_channel(config)
    radii = tuple(float(a) for a in (apertures if apertures is not None else (config.aperture,)))
    if any(not 0 < r < grid.window / 2 for r in radii):
        raise GridError("apertures must lie inside the window")
    workers = _worker_count(workers)
    chunk = max(1, min(64, n // (4 * workers) or 1))
    parts = [range(s, min(n, s + chunk)) for s in range(0, n, chunk)]
    rows = []
    if workers == 1:
        for part in parts:
            rows.extend(_realize_chunk(config, grid, seed, part, radii))
            if progress:
                progress(len(rows))
    else:
        with concurrent.futures.ProcessPoolExecutor(workers) as pool:
            futures = [pool.submit(_realize_chunk, config, grid, seed, part, radii) for part in parts]
            done = 0
            results = []
            for fut in futures:
                results.append(fut.result())
                done += len(results[-1])
                if progress:
                    progress(done)
            for r in results:
                rows.extend(r)
    etas = np.array([r[0] for r in rows])
    cols = np.array([r[1:] for r in rows]).T
    band_warnings = int(np.sum(cols[4] > _BAND_LIMIT))
    out = SampleSet(etas, cols[0], cols[1], cols[2], cols[3], radii, int(seed), grid, config, band_warnings)
    if path is not None:
        out.save(path)
    return out
