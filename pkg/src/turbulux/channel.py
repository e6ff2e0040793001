"""Physical channel description and derived dimensionless parameters.

A channel is a horizontal, homogeneous free-space link of length ``L``
carrying a Gaussian beam of wavelength ``lambda`` from a transmitter with
spot radius ``W0`` and wavefront radius ``F0`` to a circular receiver
aperture of radius ``a``.  Turbulence is described by a single path-constant
refractive-index structure constant ``Cn2`` together with inner and outer
scales of the modified von Karman spectrum.

The spatial coherence radius is evaluated as ``(1.46 Cn2 k^2 L)^(-3/5)``.
The -3/5 exponent is the dimensionally consistent one (the result is a
length); a -5/3 exponent appears in some printed versions of this
formula and would not yield metres.
"""

import dataclasses
import json
import math
from pathlib import Path

from .errors import ConfigError

__all__ = [
    "ChannelConfig",
    "DerivedChannel",
    "derive_channel",
    "fresnel_w0",
    "reference_channel",
    "load_config",
    "config_to_dict",
    "db_to_efficiency",
    "CONFIG_KEYS",
]

CONFIG_KEYS = (
    "wavelength_m",
    "length_m",
    "w0_m",
    "f0_m",
    "cn2",
    "l0_m",
    "outer_m",
    "aperture_m",
    "eta_c",
)


def fresnel_w0(length, wavelength):
    """Spot radius giving Fresnel number one, ``sqrt(L lambda / pi)``."""
    return math.sqrt(length * wavelength / math.pi)


@dataclasses.dataclass(frozen=True)
class ChannelConfig:
    """Physical parameters of one channel (SI units).

    ``f0`` defaults to ``length`` (beam focused on the receiver plane).
    ``f0`` and ``outer_scale`` accept ``math.inf``.
    """

    wavelength: float
    length: float
    w0: float
    cn2: float
    inner_scale: float
    outer_scale: float
    aperture: float
    f0: float = None
    eta_c: float = 1.0

    def __post_init__(self):
        if self.f0 is None:
            object.__setattr__(self, "f0", self.length)
        for name in ("wavelength", "length", "w0", "f0", "inner_scale", "outer_scale", "aperture"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or math.isnan(value) or value <= 0:
                raise ConfigError(f"{name} must be a positive length, got {value!r}")
        for name in ("wavelength", "length", "w0", "inner_scale", "aperture"):
            if math.isinf(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")
        if not (math.isfinite(self.cn2) and self.cn2 >= 0):
            raise ConfigError(f"cn2 must be finite and >= 0, got {self.cn2!r}")
        if not self.inner_scale < self.outer_scale:
            raise ConfigError("inner scale must be smaller than outer scale")
        if not (0 < self.eta_c <= 1):
            raise ConfigError(f"eta_c must lie in (0, 1], got {self.eta_c!r}")

    @property
    def focused(self):
        return self.f0 == self.length

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclasses.dataclass(frozen=True)
class DerivedChannel:
    """Dimensionless channel parameters plus the config they came from."""

    config: ChannelConfig
    k: float
    fresnel_number: float
    rytov: float
    coherence_radius: float


def derive_channel(config):
    """Wavenumber, Fresnel number, Rytov parameter and coherence radius.

    >>> ch = derive_channel(reference_channel(1000.0))
    >>> round(ch.fresnel_number, 12)
    1.0
    """
    if not isinstance(config, ChannelConfig):
        raise ConfigError("derive_channel expects a ChannelConfig")
    k = 2.0 * math.pi / config.wavelength
    omega = k * config.w0**2 / (2.0 * config.length)
    rytov = 1.23 * config.cn2 * k ** (7.0 / 6.0) * config.length ** (11.0 / 6.0)
    if config.cn2 > 0:
        rho0 = (1.46 * config.cn2 * k**2 * config.length) ** (-3.0 / 5.0)
    else:
        rho0 = math.inf
    return DerivedChannel(config, k, omega, rytov, rho0)


def reference_channel(length, aperture=0.012, eta_c=1.0, cn2=1e-15):
    """Channel with the parameters used for the validation figures.

    808 nm light, ``W0 = sqrt(L lambda / pi)``, beam focused at the
    receiver, ``Cn2 = 1e-15 m^-2/3``, inner scale 1 um, outer scale 5 km.
    """
    wavelength = 808e-9
    return ChannelConfig(
        wavelength=wavelength,
        length=float(length),
        w0=fresnel_w0(length, wavelength),
        cn2=cn2,
        inner_scale=1e-6,
        outer_scale=5e3,
        aperture=aperture,
        f0=float(length),
        eta_c=eta_c,
    )


def db_to_efficiency(loss_db):
    """Power efficiency of a loss given in dB."""
    return 10.0 ** (-loss_db / 10.0)


def _number(key, value):
    if isinstance(value, str):
        text = value.strip().lower()
        if text in ("inf", "+inf", "infinity"):
            return math.inf
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {value!r} as a number") from None
    if value is None:
        return math.inf
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key}: expected a number, got {value!r}")
    return float(value)


def _parse_key_value(text):
    doc = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else ":" if ":" in line else None
        if sep is None:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split(sep, 1))
        doc[key] = value.strip("\"'")
    return doc


def config_from_dict(doc):
    unknown = set(doc) - set(CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    missing = {"wavelength_m", "length_m", "cn2", "l0_m", "outer_m", "aperture_m"} - set(doc)
    if missing:
        raise ConfigError(f"missing config keys: {sorted(missing)}")
    wavelength = _number("wavelength_m", doc["wavelength_m"])
    length = _number("length_m", doc["length_m"])
    w0 = doc.get("w0_m", "fresnel")
    if isinstance(w0, str) and w0.strip().lower() == "fresnel":
        if not (wavelength > 0 and length > 0):
            raise ConfigError("w0_m = 'fresnel' needs positive wavelength and length")
        w0 = fresnel_w0(length, wavelength)
    else:
        w0 = _number("w0_m", w0)
    f0 = doc.get("f0_m")
    f0 = length if f0 is None and "f0_m" not in doc else _number("f0_m", f0)
    return ChannelConfig(
        wavelength=wavelength,
        length=length,
        w0=w0,
        cn2=_number("cn2", doc["cn2"]),
        inner_scale=_number("l0_m", doc["l0_m"]),
        outer_scale=_number("outer_m", doc["outer_m"]),
        aperture=_number("aperture_m", doc["aperture_m"]),
        f0=f0,
        eta_c=_number("eta_c", doc.get("eta_c", 1.0)),
    )


def load_config(source):
    """Read a channel config from a JSON or ``key = value`` document.

    ``source`` is a path, or a mapping already parsed.
    """
    if isinstance(source, dict):
        return config_from_dict(source)
    path = Path(source)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    else:
        doc = _parse_key_value(text)
    return config_from_dict(doc)


def config_to_dict(config):
    """Inverse of :func:`config_from_dict`; infinities are written as ``"inf"``."""

    def enc(x):
        return "inf" if math.isinf(x) else x

    return {
        "wavelength_m": config.wavelength,
        "length_m": config.length,
        "w0_m": config.w0,
        "f0_m": enc(config.f0),
        "cn2": config.cn2,
        "l0_m": config.inner_scale,
        "outer_m": enc(config.outer_scale),
        "aperture_m": config.aperture,
        "eta_c": config.eta_c,
    }
