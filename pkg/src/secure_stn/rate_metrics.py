"""Information rates, secrecy rate and constraint residuals.

All rates are in bits/s/Hz.  Covariances are given as a
:class:`CovarianceTriple`; signal vectors are never materialised.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .channel_models import ChannelSet

HERMITIAN_TOL = 1e-9
PSD_TOL = 1e-8
FEASIBILITY_TOL = 1e-6


@dataclass(frozen=True)
class ScenarioConfig:
    """Antenna counts, rate targets, noise powers and power budget.

    Attributes:
        n_t: Satellite antennas (feeds).
        n_s: Terrestrial BS antennas.
        n_r: Eve antennas.
        tau_p: Secrecy-rate target at the PU.
        tau_s: Rate target at the SU.
        p_th: Total transmit power budget in W.
        sigma2_p, sigma2_e, sigma2_s: Receiver noise powers in W.
    """

    n_t: int = 4
    n_s: int = 4
    n_r: int = 2
    tau_p: float = 2.0
    tau_s: float = float(np.log2(10.0))
    p_th: float = 60.0
    sigma2_p: float = 1.0
    sigma2_e: float = 1.0
    sigma2_s: float = 1.0

    def __post_init__(self):
        for name in ("n_t", "n_s", "n_r"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not self.p_th > 0:
            raise ValueError(f"p_th must be > 0, got {self.p_th}")
        for name in ("sigma2_p", "sigma2_e", "sigma2_s"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.tau_p < 0 or self.tau_s < 0:
            raise ValueError(f"rate targets must be >= 0, got ({self.tau_p}, {self.tau_s})")

    def with_(self, **changes) -> ScenarioConfig:
        return ScenarioConfig(**{**asdict(self), **changes})


@dataclass
class CovarianceTriple:
    """Satellite signal, BS signal and BS artificial-noise covariances."""

    q_p: np.ndarray
    q_s: np.ndarray
    q_z: np.ndarray

    def __post_init__(self):
        for name in ("q_p", "q_s", "q_z"):
            Q = np.atleast_2d(np.asarray(getattr(self, name), dtype=complex))
            if Q.shape[0] != Q.shape[1]:
                raise ValueError(f"{name} must be square, got shape {Q.shape}")
            scale = max(1.0, float(np.max(np.abs(Q), initial=0.0)))
            if np.max(np.abs(Q - Q.conj().T), initial=0.0) > HERMITIAN_TOL * scale:
                raise ValueError(f"{name} is not Hermitian")
            setattr(self, name, 0.5 * (Q + Q.conj().T))
        if self.q_s.shape != self.q_z.shape:
            raise ValueError("q_s and q_z must have the same shape")

    @classmethod
    def zeros(cls, n_t: int, n_s: int) -> CovarianceTriple:
        return cls(np.zeros((n_t, n_t)), np.zeros((n_s, n_s)), np.zeros((n_s, n_s)))

    def total_power(self) -> float:
        return float(np.real(np.trace(self.q_p) + np.trace(self.q_s) + np.trace(self.q_z)))

    def signal_power(self) -> float:
        """``Tr(Q_p) + Tr(Q_s)``, the minimised objective."""
        return float(np.real(np.trace(self.q_p) + np.trace(self.q_s)))

    def min_eigs(self) -> dict[str, float]:
        return {k: float(np.linalg.eigvalsh(getattr(self, k))[0]) for k in ("q_p", "q_s", "q_z")}

    def is_psd(self, tol: float = PSD_TOL) -> bool:
        return all(v >= -tol for v in self.min_eigs().values())


@dataclass(frozen=True)
class ResidualReport:
    """Constraint margins; a solution is feasible iff every margin is >= -tol."""

    secrecy_margin: float
    su_rate_margin: float
    power_margin: float
    psd_min_eigs: dict

    def feasible(self, tol: float = FEASIBILITY_TOL) -> bool:
        margins = [self.secrecy_margin, self.su_rate_margin, self.power_margin, *self.psd_min_eigs.values()]
        return all(m >= -tol for m in margins)

    def as_dict(self) -> dict:
        return {
            "secrecy_margin": self.secrecy_margin,
            "su_rate_margin": self.su_rate_margin,
            "power_margin": self.power_margin,
            "psd_min_eig_q_p": self.psd_min_eigs["q_p"],
            "psd_min_eig_q_s": self.psd_min_eigs["q_s"],
            "psd_min_eig_q_z": self.psd_min_eigs["q_z"],
        }


def quad_form(x: np.ndarray, Q: np.ndarray) -> float:
    """Real value of ``x^H Q x`` for Hermitian ``Q``, with a round-off tripwire."""
    val = np.vdot(x, Q @ x)
    if abs(val.imag) >= 1e-9 * abs(val.real) + 1e-12:
        raise ValueError(f"Hermitian form has imaginary part {val.imag:.3e} (real {val.real:.3e})")
    return float(val.real)


def _check_dims(triple: CovarianceTriple, channels: ChannelSet) -> None:
    if triple.q_p.shape != (channels.n_t, channels.n_t):
        raise ValueError(f"q_p has shape {triple.q_p.shape}, expected ({channels.n_t}, {channels.n_t})")
    if triple.q_s.shape != (channels.n_s, channels.n_s):
        raise ValueError(f"q_s has shape {triple.q_s.shape}, expected ({channels.n_s}, {channels.n_s})")


def rate_pu(triple: CovarianceTriple, channels: ChannelSet, config: ScenarioConfig) -> float:
    _check_dims(triple, channels)
    signal = max(quad_form(channels.h_p, triple.q_p), 0.0)
    interference = max(quad_form(channels.g_p, triple.q_s + triple.q_z), 0.0)
    return float(np.log2(1.0 + signal / (interference + config.sigma2_p)))


def rate_eve(triple: CovarianceTriple, channels: ChannelSet, config: ScenarioConfig) -> float:
    """Eve's MIMO rate ``log2 det(I + N^{-1} H_e^H Q_p H_e)``.

    ``N = G_e^H (Q_s + Q_z) G_e + sigma_e^2 I``.  Evaluated through the
    Cholesky factor of ``N`` so the argument of the log-det stays Hermitian.
    """
    _check_dims(triple, channels)
    G, H = channels.G_e, channels.H_e
    N = G.conj().T @ (triple.q_s + triple.q_z) @ G + config.sigma2_e * np.eye(channels.n_r)
    L = np.linalg.cholesky(0.5 * (N + N.conj().T))
    S = H.conj().T @ triple.q_p @ H
    Linv = np.linalg.inv(L)
    M = Linv @ S @ Linv.conj().T
    eigs = np.clip(np.linalg.eigvalsh(0.5 * (M + M.conj().T)), 0.0, None)
    return float(np.sum(np.log2(1.0 + eigs)))


def rate_su(triple: CovarianceTriple, channels: ChannelSet, config: ScenarioConfig) -> float:
    _check_dims(triple, channels)
    signal = max(quad_form(channels.g_s, triple.q_s), 0.0)
    an = max(quad_form(channels.g_s, triple.q_z), 0.0)
    sat = max(quad_form(channels.h_s, triple.q_p), 0.0)
    return float(np.log2(1.0 + signal / (an + sat + config.sigma2_s)))


def secrecy_rate(triple: CovarianceTriple, channels: ChannelSet, config: ScenarioConfig) -> float:
    return max(rate_pu(triple, channels, config) - rate_eve(triple, channels, config), 0.0)


def residuals(triple: CovarianceTriple, channels: ChannelSet, config: ScenarioConfig) -> ResidualReport:
    """Margins of the secrecy, SU-rate, power and PSD constraints."""
    return ResidualReport(
        secrecy_margin=rate_pu(triple, channels, config) - rate_eve(triple, channels, config) - config.tau_p,
        su_rate_margin=rate_su(triple, channels, config) - config.tau_s,
        power_margin=config.p_th - triple.total_power(),
        psd_min_eigs=triple.min_eigs(),
    )
