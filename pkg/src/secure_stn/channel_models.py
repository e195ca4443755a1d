"""Random channel generation for the satellite and terrestrial links.

Satellite links use Shadowed-Rician fading scaled by a Bessel beam-gain
pattern; terrestrial links use the Kronecker model with a uniform
angle-spread correlation matrix for a half-wavelength ULA.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from numpy.random import Generator
from numpy.typing import NDArray
from scipy import integrate
from scipy.special import jv

ComplexArray = NDArray[np.complex128]

# u = BEAM_GAIN_CONST * sin(phi) / sin(phi_3dB) puts b(phi_3dB) at one half.
BEAM_GAIN_CONST = 2.07123


@dataclass(frozen=True)
class SatChannelSpec:
    """Shadowed-Rician satellite link with a beam-gain factor.

    Attributes:
        beam_angle_deg: Angle between the receiver and the beam center.
        three_db_angle_deg: 3-dB beamwidth angle.
        sr_b: Half the average power of the scatter component.
        sr_m: Nakagami-m parameter of the LOS amplitude.
        sr_omega: Average power of the LOS component.
        los_phase: Deterministic LOS phase in radians.
    """

    beam_angle_deg: float
    three_db_angle_deg: float = 0.4
    sr_b: float = 0.063
    sr_m: float = 2.0
    sr_omega: float = 8.97e-4
    los_phase: float = 0.0

    def __post_init__(self):
        if not self.three_db_angle_deg > 0:
            raise ValueError(f"three_db_angle_deg must be > 0, got {self.three_db_angle_deg}")
        if self.sr_b < 0:
            raise ValueError(f"sr_b must be >= 0, got {self.sr_b}")
        if self.sr_omega < 0:
            raise ValueError(f"sr_omega must be >= 0, got {self.sr_omega}")
        if self.sr_m < 0.5:
            raise ValueError(f"sr_m must be >= 0.5, got {self.sr_m}")


@dataclass(frozen=True)
class TerrestrialChannelSpec:
    """Correlated Rayleigh link from an ULA base station.

    Attributes:
        n_antennas: Number of transmit antennas.
        aod_deg: Mean angle of departure.
        angle_spread_deg: Half-width of the uniform angular spread.
        d_over_lambda: Element spacing in wavelengths.
    """

    n_antennas: int
    aod_deg: float
    angle_spread_deg: float = 5.0
    d_over_lambda: float = 0.5

    def __post_init__(self):
        if self.n_antennas < 1:
            raise ValueError(f"n_antennas must be >= 1, got {self.n_antennas}")
        if self.angle_spread_deg < 0:
            raise ValueError(f"angle_spread_deg must be >= 0, got {self.angle_spread_deg}")
        if not self.d_over_lambda > 0:
            raise ValueError(f"d_over_lambda must be > 0, got {self.d_over_lambda}")


@dataclass
class ChannelSet:
    """All channels seen by the optimizer.

    ``h_*``/``H_e`` originate at the satellite (``n_t`` antennas), ``g_*``/``G_e``
    at the terrestrial base station (``n_s`` antennas).  Eve has ``n_r`` antennas.
    """

    h_p: ComplexArray
    h_s: ComplexArray
    H_e: ComplexArray
    g_p: ComplexArray
    g_s: ComplexArray
    G_e: ComplexArray

    def __post_init__(self):
        self.h_p = np.asarray(self.h_p, dtype=complex).reshape(-1)
        self.h_s = np.asarray(self.h_s, dtype=complex).reshape(-1)
        self.g_p = np.asarray(self.g_p, dtype=complex).reshape(-1)
        self.g_s = np.asarray(self.g_s, dtype=complex).reshape(-1)
        self.H_e = np.atleast_2d(np.asarray(self.H_e, dtype=complex))
        self.G_e = np.atleast_2d(np.asarray(self.G_e, dtype=complex))
        n_t, n_s = self.h_p.size, self.g_p.size
        if self.h_s.size != n_t or self.H_e.shape[0] != n_t:
            raise ValueError("satellite channels disagree on n_t")
        if self.g_s.size != n_s or self.G_e.shape[0] != n_s:
            raise ValueError("terrestrial channels disagree on n_s")
        if self.H_e.shape[1] != self.G_e.shape[1]:
            raise ValueError("H_e and G_e disagree on the number of Eve antennas")
        for name in ("h_p", "h_s", "H_e", "g_p", "g_s", "G_e"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} has non-finite entries")

    @property
    def n_t(self) -> int:
        return self.h_p.size

    @property
    def n_s(self) -> int:
        return self.g_p.size

    @property
    def n_r(self) -> int:
        return self.H_e.shape[1]

    def replace(self, **changes) -> ChannelSet:
        fields = {k: getattr(self, k) for k in ("h_p", "h_s", "H_e", "g_p", "g_s", "G_e")}
        fields.update(changes)
        return ChannelSet(**fields)


@dataclass
class RobustSpec:
    """Norm-bounded CSI error on the BS->PU and BS->Eve links."""

    eps_p: float
    eps_e: float
    nominal_g_p: ComplexArray
    nominal_G_e: ComplexArray

    def __post_init__(self):
        if self.eps_p < 0 or self.eps_e < 0:
            raise ValueError(f"error bounds must be >= 0, got ({self.eps_p}, {self.eps_e})")
        self.nominal_g_p = np.asarray(self.nominal_g_p, dtype=complex).reshape(-1)
        self.nominal_G_e = np.atleast_2d(np.asarray(self.nominal_G_e, dtype=complex))

    @classmethod
    def around(cls, channels: ChannelSet, eps_p: float, eps_e: float | None = None) -> RobustSpec:
        """Uncertainty balls centred on the terrestrial PU/Eve channels of ``channels``."""
        return cls(eps_p, eps_p if eps_e is None else eps_e, channels.g_p, channels.G_e)


@dataclass(frozen=True)
class LinkSpecs:
    """Per-link channel parameters used to draw a full :class:`ChannelSet`."""

    sat_p: SatChannelSpec
    sat_s: SatChannelSpec
    sat_e: SatChannelSpec
    ter_p: TerrestrialChannelSpec
    ter_s: TerrestrialChannelSpec
    ter_e: TerrestrialChannelSpec
    _cache: dict = field(default_factory=dict, init=False, compare=False, repr=False)

    def correlation(self, which: str) -> np.ndarray:
        if which not in self._cache:
            self._cache[which] = correlation_matrix(getattr(self, f"ter_{which}"))
        return self._cache[which]


def beam_gain(phi_deg: float | np.ndarray, three_db_deg: float) -> float | np.ndarray:
    """Bessel beam-pattern gain ``(J1(u)/(2u) + 36 J3(u)/u^3)^2``.

    The pattern is normalised so the gain is 1 on boresight and 1/2 at the
    3-dB angle.
    """
    if not three_db_deg > 0:
        raise ValueError(f"three_db_deg must be > 0, got {three_db_deg}")
    u = BEAM_GAIN_CONST * np.sin(np.radians(phi_deg)) / np.sin(np.radians(three_db_deg))
    u = np.asarray(u, dtype=float)
    small = np.abs(u) < 1e-4
    us = np.where(small, 1.0, u)
    val = jv(1, us) / (2 * us) + 36 * jv(3, us) / us**3
    # series: J1(u)/(2u) = 1/4 - u^2/32, 36 J3(u)/u^3 = 3/4 - 3u^2/64
    val = np.where(small, 1.0 - 5 * u**2 / 64, val)
    gain = val**2
    return float(gain) if gain.ndim == 0 else gain


def sample_sat_channel(spec: SatChannelSpec, rows: int, cols: int, rng: Generator) -> ComplexArray:
    """Draw a ``rows x cols`` Shadowed-Rician channel scaled by ``sqrt(b(phi))``.

    Entries are i.i.d.: a CN(0, 2b) scatter term plus a Nakagami(m, Omega)
    LOS amplitude with a fixed phase.
    """
    if rows < 1 or cols < 1:
        raise ValueError(f"rows and cols must be >= 1, got ({rows}, {cols})")
    shape = (rows, cols)
    scatter = np.sqrt(spec.sr_b) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    if spec.sr_omega > 0:
        los_amp = np.sqrt(rng.gamma(spec.sr_m, spec.sr_omega / spec.sr_m, size=shape))
    else:
        los_amp = np.zeros(shape)
    los = los_amp * np.exp(1j * spec.los_phase)
    return np.sqrt(beam_gain(spec.beam_angle_deg, spec.three_db_angle_deg)) * (scatter + los)


def correlation_matrix(spec: TerrestrialChannelSpec) -> np.ndarray:
    """Toeplitz ULA correlation matrix for a uniform AoD spread.

    ``[R]_{m,n}`` is the average of ``exp(-j 2 pi (m-n) d/lambda sin(a))`` over
    ``a`` uniform in ``[aod - spread, aod + spread]``.
    """
    n = spec.n_antennas
    theta = np.radians(spec.aod_deg)
    half = np.radians(spec.angle_spread_deg)
    kd = 2 * np.pi * spec.d_over_lambda
    first_col = np.ones(n, dtype=complex)
    for lag in range(1, n):
        if half == 0:
            first_col[lag] = np.exp(-1j * kd * lag * np.sin(theta))
            continue
        # a = theta + half * t, so the tolerance applies to the average itself
        def phase(t, lag=lag):
            return kd * lag * np.sin(theta + half * t)

        re, _ = integrate.quad(lambda t: np.cos(phase(t)), -1.0, 1.0, epsabs=1e-12, epsrel=1e-12, limit=200)
        im, _ = integrate.quad(lambda t: -np.sin(phase(t)), -1.0, 1.0, epsabs=1e-12, epsrel=1e-12, limit=200)
        first_col[lag] = 0.5 * (re + 1j * im)
    idx = np.subtract.outer(np.arange(n), np.arange(n))
    R = np.where(idx >= 0, first_col[np.abs(idx)], np.conj(first_col[np.abs(idx)]))
    R = 0.5 * (R + R.conj().T)
    np.fill_diagonal(R, 1.0)
    return R


def psd_sqrt(R: np.ndarray) -> np.ndarray:
    """Hermitian PSD square root, clipping tiny negative eigenvalues."""
    w, V = np.linalg.eigh(0.5 * (R + R.conj().T))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.conj().T


def sample_terrestrial_channel(
    spec: TerrestrialChannelSpec,
    cols: int,
    rng: Generator,
    correlation: np.ndarray | None = None,
) -> ComplexArray:
    """Kronecker-model channel ``R^{1/2} G`` with ``G`` i.i.d. CN(0, 1).

    ``correlation`` overrides ``correlation_matrix(spec)``; tests use it to
    inject an identity or a cached matrix.
    """
    R = correlation_matrix(spec) if correlation is None else correlation
    n = R.shape[0]
    G = (rng.standard_normal((n, cols)) + 1j * rng.standard_normal((n, cols))) / np.sqrt(2)
    return psd_sqrt(R) @ G


def apply_csi_error(
    nominal: np.ndarray,
    eps: float,
    mode: Literal["interior", "boundary"],
    rng: Generator,
) -> np.ndarray:
    """Perturb ``nominal`` by a random error with Frobenius norm at most ``eps``.

    ``interior`` draws uniformly from the ball, ``boundary`` from its sphere.
    """
    if eps < 0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    nominal = np.asarray(nominal, dtype=complex)
    if eps == 0:
        return nominal.copy()
    direction = rng.standard_normal(nominal.shape) + 1j * rng.standard_normal(nominal.shape)
    direction /= np.linalg.norm(direction)
    if mode == "boundary":
        radius = eps
    elif mode == "interior":
        radius = eps * rng.uniform() ** (1.0 / (2 * nominal.size))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return nominal + radius * direction


def sample_csi_errors(
    nominal: np.ndarray,
    eps: float,
    n: int,
    mode: Literal["interior", "boundary"],
    rng: Generator,
) -> np.ndarray:
    """Batched :func:`apply_csi_error`: ``n`` perturbed copies stacked on axis 0."""
    if eps < 0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    nominal = np.asarray(nominal, dtype=complex)
    if eps == 0 or n == 0:
        return np.broadcast_to(nominal, (n, *nominal.shape)).copy()
    shape = (n, *nominal.shape)
    direction = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    axes = tuple(range(1, direction.ndim))
    direction /= np.sqrt(np.sum(np.abs(direction) ** 2, axis=axes, keepdims=True))
    if mode == "boundary":
        radius = np.full(n, eps)
    elif mode == "interior":
        radius = eps * rng.uniform(size=n) ** (1.0 / (2 * nominal.size))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return nominal + radius.reshape((n,) + (1,) * nominal.ndim) * direction


def draw_channel_set(links: LinkSpecs, n_t: int, n_r: int, rng: Generator) -> ChannelSet:
    """Draw one realisation of all six channels."""
    h_p = sample_sat_channel(links.sat_p, n_t, 1, rng)[:, 0]
    h_s = sample_sat_channel(links.sat_s, n_t, 1, rng)[:, 0]
    H_e = sample_sat_channel(links.sat_e, n_t, n_r, rng)
    g_p = sample_terrestrial_channel(links.ter_p, 1, rng, links.correlation("p"))[:, 0]
    g_s = sample_terrestrial_channel(links.ter_s, 1, rng, links.correlation("s"))[:, 0]
    G_e = sample_terrestrial_channel(links.ter_e, n_r, rng, links.correlation("e"))
    return ChannelSet(h_p=h_p, h_s=h_s, H_e=H_e, g_p=g_p, g_s=g_s, G_e=G_e)
