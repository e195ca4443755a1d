"""Independent oracles used by ``secure-stn validate`` and the test-suite.

Each oracle checks a library result against a computation that does not go
through the same code path: brute-force search, direct determinant
evaluation, random sampling of the uncertainty balls, or sample moments.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.random import Generator

from .channel_models import (
    ChannelSet,
    RobustSpec,
    SatChannelSpec,
    correlation_matrix,
    draw_channel_set,
    sample_sat_channel,
    sample_terrestrial_channel,
)
from .experiments import default_links
from .optimizer import InfeasibleError, sample_uncertainty_margins, solve_perfect, solve_robust
from .rate_metrics import ScenarioConfig
from .sdp_formulation import lemma1_lmi, triple_vars

log = logging.getLogger(__name__)

MARGIN_TOL = 1e-6


@dataclass(frozen=True)
class ScalarOracle:
    objective: float
    q_p: float
    q_s: float
    q_z: float
    resolution: float


def _scalar_gains(channels: ChannelSet) -> dict[str, float]:
    if (channels.n_t, channels.n_s, channels.n_r) != (1, 1, 1):
        raise ValueError("scalar oracle needs n_t = n_s = n_r = 1")
    return {k: float(abs(getattr(channels, k).ravel()[0]) ** 2) for k in ("h_p", "h_s", "H_e", "g_p", "g_s", "G_e")}


def _scalar_eval(gains, config: ScenarioConfig, qs: np.ndarray, qz: np.ndarray):
    """Smallest feasible ``q_p`` and objective on a grid of ``(q_s, q_z)``.

    For fixed interference ``I = q_s + q_z`` the secrecy rate is increasing
    in ``q_p``, so the secrecy constraint gives ``q_p`` in closed form; a
    larger ``q_p`` only hurts the SU, so that value is optimal.
    """
    t = 2.0**config.tau_p
    gamma = 2.0**config.tau_s - 1.0
    interf = qs + qz
    A = gains["h_p"] / (gains["g_p"] * interf + config.sigma2_p)
    B = gains["H_e"] / (gains["G_e"] * interf + config.sigma2_e)
    denom = A - t * B
    with np.errstate(divide="ignore", invalid="ignore"):
        qp = np.where(denom > 0, (t - 1.0) / denom, np.inf)
    if config.tau_p == 0:
        qp = np.zeros_like(qp)
    su = gains["g_s"] * qs - gamma * (gains["g_s"] * qz + gains["h_s"] * qp + config.sigma2_s)
    ok = np.isfinite(qp) & (su >= 0) & (qp + qs + qz <= config.p_th)
    obj = np.where(ok, qp + qs, np.inf)
    return qp, obj


def scalar_brute_force(
    channels: ChannelSet,
    config: ScenarioConfig,
    coarse: int = 401,
    fine: int = 101,
    rounds: int = 40,
    window: int = 8,
) -> ScalarOracle | None:
    """Grid search over ``(q_s, q_z)`` with repeated zoom, for single-antenna links.

    Returns None when no grid point is feasible.  ``resolution`` is the
    largest relative objective change to a feasible neighbour of the final
    grid, a bound on how far the reported optimum can sit from the grid's
    best cell.
    """
    gains = _scalar_gains(channels)
    lo_s, hi_s, lo_z, hi_z = 0.0, config.p_th, 0.0, config.p_th
    n = coarse
    best = None
    for _ in range(rounds + 1):
        s_ax = np.linspace(lo_s, hi_s, n)
        z_ax = np.linspace(lo_z, hi_z, n)
        QS, QZ = np.meshgrid(s_ax, z_ax, indexing="ij")
        qp, obj = _scalar_eval(gains, config, QS, QZ)
        k = int(np.argmin(obj))
        if not np.isfinite(obj.flat[k]):
            if best is None:
                return None
            break
        i, j = np.unravel_index(k, obj.shape)
        cand = (float(obj[i, j]), float(qp[i, j]), float(QS[i, j]), float(QZ[i, j]))
        if best is None or cand[0] < best[0]:
            best = cand
        hs, hz = s_ax[1] - s_ax[0], z_ax[1] - z_ax[0]
        nb = obj[max(i - 1, 0):i + 2, max(j - 1, 0):j + 2]
        nb = nb[np.isfinite(nb)]
        resolution = float(np.max(np.abs(nb - obj[i, j]))) / max(best[0], 1e-12)
        # a wide window lets the search slide along thin feasible ridges
        lo_s, hi_s = max(0.0, QS[i, j] - window * hs), min(config.p_th, QS[i, j] + window * hs)
        lo_z, hi_z = max(0.0, QZ[i, j] - window * hz), min(config.p_th, QZ[i, j] + window * hz)
        n = fine
        if max(hs, hz) < 1e-12 * config.p_th:
            break
    obj, q_p, q_s, q_z = best
    return ScalarOracle(obj, q_p, q_s, q_z, resolution)


def random_scalar_instance(rng: Generator) -> tuple[ChannelSet, ScenarioConfig]:
    """Single-antenna instance with a weaker eavesdropper satellite link.

    Channel phases are random; only magnitudes matter in the scalar problem.
    """
    def c(mag2):
        return np.sqrt(mag2) * np.exp(2j * np.pi * rng.uniform())

    h_p = rng.uniform(0.5, 2.0)
    ch = ChannelSet(
        h_p=[c(h_p)],
        h_s=[c(rng.uniform(0.01, 0.3))],
        H_e=[[c(h_p * rng.uniform(0.05, 0.6))]],
        g_p=[c(rng.uniform(0.05, 1.0))],
        g_s=[c(rng.uniform(0.5, 2.0))],
        G_e=[[c(rng.uniform(0.3, 3.0))]],
    )
    cfg = ScenarioConfig(n_t=1, n_s=1, n_r=1, tau_p=rng.uniform(0.3, 1.5), tau_s=rng.uniform(0.3, 1.5), p_th=60.0)
    return ch, cfg


@dataclass
class SuiteResult:
    name: str
    passed: bool
    worst_margin: float = math.nan
    checks: int = 0
    skipped: bool = False
    detail: str = ""
    extra: dict = field(default_factory=dict)

    def line(self) -> str:
        tag = "SKIP" if self.skipped else ("PASS" if self.passed else "FAIL")
        return f"{tag} {self.name}: checks={self.checks} worst_margin={self.worst_margin:.3e} {self.detail}".rstrip()


def suite_scalar(samples: int, rng: Generator, rel_tol: float = 0.01) -> SuiteResult:
    """Pipeline vs brute force on ``max(1, samples // 2000)`` scalar instances."""
    n = max(1, samples // 2000)
    worst = -math.inf
    done = 0
    attempts = 0
    while done < n and attempts < 20 * n:
        attempts += 1
        ch, cfg = random_scalar_instance(rng)
        oracle = scalar_brute_force(ch, cfg)
        if oracle is None:
            continue
        try:
            sol = solve_perfect(ch, cfg, rng=rng)
        except InfeasibleError:
            worst = math.inf
            done += 1
            continue
        worst = max(worst, abs(sol.objective - oracle.objective) / oracle.objective)
        done += 1
    return SuiteResult("scalar_brute_force", done == n and worst <= rel_tol, worst_margin=rel_tol - worst,
                       checks=done, detail=f"max_rel_err={worst:.2e}")


def suite_lemma1(samples: int, rng: Generator, n_t: int = 3, n_s: int = 3, n_r: int = 2) -> SuiteResult:
    """Rank-one ``Q_p``: PSD-ness of the Eve LMI matches ``det <= beta`` directly.

    ``beta`` is placed 5% above or below the true determinant, so the
    expected answer is unambiguous.
    """
    n = max(1, samples // 10)
    agree = 0
    worst = math.inf
    tv = triple_vars(n_t, n_s)

    def cn(*shape):
        return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)

    for _ in range(n):
        H, G = cn(n_t, n_r), cn(n_s, n_r)
        w = cn(n_t) * rng.uniform(0.2, 3.0)
        Qp = np.outer(w, w.conj())
        A = cn(n_s, n_s)
        Qs = A @ A.conj().T * rng.uniform(0.0, 1.0)
        B = cn(n_s, 1)
        Qz = B @ B.conj().T * rng.uniform(0.0, 1.0)
        s2 = rng.uniform(0.5, 2.0)
        N = G.conj().T @ (Qs + Qz) @ G + s2 * np.eye(n_r)
        det = float(np.real(np.linalg.det(np.eye(n_r) + np.linalg.solve(N, H.conj().T @ Qp @ H))))
        for factor in (0.95, 1.05):
            beta = max(1.0, det * factor)
            expect = beta >= det
            M = lemma1_lmi(tv, beta, H, G, s2).value({"q_p": Qp, "q_s": Qs, "q_z": Qz})
            lam = float(np.linalg.eigvalsh(0.5 * (M + M.conj().T))[0])
            got = lam >= -1e-9 * max(1.0, np.abs(M).max())
            agree += got == expect
            worst = min(worst, lam if expect else -lam)
    total = 2 * n
    return SuiteResult("lemma1_equivalence", agree == total, worst_margin=worst, checks=total,
                       detail=f"agree={agree}/{total}")


def suite_robust_ball(
    samples: int,
    rng: Generator,
    n_instances: int = 2,
    eps: float = 0.1,
    config: ScenarioConfig | None = None,
) -> SuiteResult:
    """Solve robust instances, then sample ``samples`` errors per instance from both balls."""
    config = config or ScenarioConfig()
    links = default_links(config.n_t, config.n_s)
    worst = math.inf
    solved = 0
    attempts = 0
    while solved < n_instances and attempts < 5 * n_instances:
        attempts += 1
        ch = draw_channel_set(links, config.n_t, config.n_r, rng)
        robust = RobustSpec.around(ch, eps)
        try:
            sol = solve_robust(ch, robust, config, rng=rng, n_check=0)
        except InfeasibleError:
            continue
        m = sample_uncertainty_margins(sol.triple, ch, robust, config, sol.beta_star, samples, rng)
        worst = min(worst, m["secrecy"], m["pu"], m["eve"])
        solved += 1
    passed = solved == n_instances and worst >= -MARGIN_TOL
    return SuiteResult("robust_ball_sampling", passed, worst_margin=worst, checks=solved * samples,
                       detail=f"instances={solved}")


def sat_second_moment(spec: SatChannelSpec) -> float:
    """``E|h|^2 = (2b + Omega) * b(phi)``."""
    from .channel_models import beam_gain

    return (2 * spec.sr_b + spec.sr_omega) * beam_gain(spec.beam_angle_deg, spec.three_db_angle_deg)


def suite_channel_moments(samples: int, rng: Generator, z: float = 5.0) -> SuiteResult:
    """Sample moments within ``z`` standard errors of their closed forms.

    Covers the Shadowed-Rician second moment at boresight and the Kronecker
    covariance ``E[g g^H] = R`` for each default terrestrial link.
    """
    n = max(1, samples * 10)
    spec = SatChannelSpec(beam_angle_deg=0.0)
    h = sample_sat_channel(spec, n, 1, rng)[:, 0]
    p = np.abs(h) ** 2
    target = sat_second_moment(spec)
    se = p.std(ddof=1) / math.sqrt(n) if n > 1 else math.inf
    margins = [z * se - abs(p.mean() - target)]
    links = default_links()
    for which in ("p", "s", "e"):
        tspec = getattr(links, f"ter_{which}")
        R = correlation_matrix(tspec)
        g = sample_terrestrial_channel(tspec, n, rng, R)
        S = g @ g.conj().T / n
        # entrywise |R_ij| <= 1 so each sample covariance entry has std <= 1/sqrt(n)
        margins.append(z / math.sqrt(n) - float(np.max(np.abs(S - R))))
    worst = min(margins)
    return SuiteResult("channel_moments", worst >= 0, worst_margin=worst, checks=4 * n,
                       detail=f"sr_second_moment={p.mean():.6g} (expected {target:.6g})")


SUITES = {
    "channel_moments": suite_channel_moments,
    "lemma1_equivalence": suite_lemma1,
    "robust_ball_sampling": suite_robust_ball,
    "scalar_brute_force": suite_scalar,
}


def run_suites(samples: int, seed: int, names: list[str] | None = None) -> list[SuiteResult]:
    """Run the named suites (all by default), each on its own RNG substream.

    ``samples = 0`` skips every suite.
    """
    names = list(SUITES) if names is None else names
    unknown = set(names) - set(SUITES)
    if unknown:
        raise ValueError(f"unknown suites: {sorted(unknown)}")
    if samples < 0:
        raise ValueError(f"samples must be >= 0, got {samples}")
    streams = np.random.SeedSequence(seed).spawn(len(SUITES))
    out = []
    for stream, name in zip(streams, SUITES):
        if name not in names:
            continue
        if samples == 0:
            out.append(SuiteResult(name, True, skipped=True, detail="samples=0"))
            continue
        out.append(SUITES[name](samples, np.random.default_rng(stream)))
    return out
