"""Outer search over the slack beta, beamformer extraction and validation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.random import Generator
from scipy.optimize import minimize_scalar

from . import rate_metrics as rm
from .channel_models import ChannelSet, RobustSpec, sample_csi_errors
from .rate_metrics import CovarianceTriple, ResidualReport, ScenarioConfig
from .sdp_formulation import (
    ConicProgram,
    SolveOutcome,
    beta_upper,
    build_perfect_program,
    build_robust_program,
    min_noise_program,
    solve,
)

log = logging.getLogger(__name__)

RANK_ONE_TOL = 1e-4
POLISH_TOL = 1e-6
RATE_TOL = 1e-8


class InfeasibleError(RuntimeError):
    """No feasible design exists (or none was found) for the given inputs."""


@dataclass
class BeamformingSolution:
    """Result of :func:`solve_perfect` / :func:`solve_robust`.

    ``objective`` is ``Tr(Q_p) + Tr(Q_s)`` of ``triple``; ``sdp_objective`` is
    the relaxation value at ``beta_star`` (a lower bound on ``objective``).
    ``method`` is ``eigendecomposition`` when both covariances are rank-one,
    ``randomization`` when beamformers came from Gaussian randomization, and
    ``covariance`` when randomization failed but the relaxed covariances are
    themselves feasible.
    """

    triple: CovarianceTriple
    beta_star: float
    objective: float
    sdp_objective: float
    rank_info: dict
    method: str
    residuals: ResidualReport
    w_p: np.ndarray | None = None
    w_s: np.ndarray | None = None
    n_solves: int = 0
    robust_margins: dict | None = None
    extra: dict = field(default_factory=dict)

    @property
    def rank_one_qp(self) -> bool:
        return self.rank_info["q_p"]["rank_one"]

    @property
    def rank_one_qs(self) -> bool:
        return self.rank_info["q_s"]["rank_one"]


def beta_interval(h_p: np.ndarray, p_th: float) -> tuple[float, float]:
    if not p_th > 0:
        raise ValueError(f"p_th must be > 0, got {p_th}")
    return 1.0, beta_upper(np.asarray(h_p), p_th)


def search_interval(h_p: np.ndarray, config: ScenarioConfig) -> tuple[float, float]:
    """``beta_interval`` clipped to the PU bound; raises if even beta = 1 is excluded."""
    lo, hi = beta_interval(h_p, config.p_th)
    cap = pu_beta_bound(h_p, config)
    if cap < lo:
        raise InfeasibleError("PU rate target exceeds the interference-free capacity at full power")
    return lo, min(hi, cap)


def objective_lower_bound(channels: ChannelSet, config: ScenarioConfig) -> Callable[[float], float]:
    """Interference-free power floor ``LB(beta)`` on the fixed-beta optimum.

    The PU needs ``h_p^H Q_p h_p >= (beta 2^tau_p - 1) sigma_p^2`` and the SU
    needs ``g_s^H Q_s g_s >= (2^tau_s - 1) sigma_s^2`` whatever the
    interference, so ``Tr(Q_p) + Tr(Q_s)`` is at least the sum of the two
    matched-filter powers.  Holds for the robust problem too, whose feasible
    set at a given beta lies inside the nominal one.
    """
    hp = float(np.vdot(channels.h_p, channels.h_p).real)
    gs = float(np.vdot(channels.g_s, channels.g_s).real)
    su = (2.0**config.tau_s - 1.0) * config.sigma2_s / gs if gs > 0 else np.inf
    su = 0.0 if config.tau_s == 0 else su

    def bound(beta: float) -> float:
        need = max(beta * 2.0**config.tau_p - 1.0, 0.0) * config.sigma2_p
        pu = need / hp if hp > 0 else (0.0 if need == 0 else np.inf)
        # slack keeps round-off in the solver objective from pruning a tie
        return (pu + su) * (1.0 - 1e-9)

    return bound


def pu_beta_bound(h_p: np.ndarray, config: ScenarioConfig) -> float:
    """Largest beta for which the PU constraint can hold at all.

    Needs ``|h_p|^2 P_th >= (beta 2^tau_p - 1) sigma_p^2`` even with no
    interference, so any larger beta is infeasible without solving.
    """
    snr_max = config.p_th * float(np.vdot(h_p, h_p).real) / config.sigma2_p
    return (1.0 + snr_max) / 2.0**config.tau_p


@dataclass
class SearchTrace:
    betas: list = field(default_factory=list)
    statuses: list = field(default_factory=list)
    objectives: list = field(default_factory=list)

    @property
    def n_solves(self) -> int:
        return sum(s != "skipped" for s in self.statuses)


def line_search_beta(
    program_builder: Callable[[float], ConicProgram | SolveOutcome],
    interval: tuple[float, float],
    grid_points: int = 100,
    refine_rounds: int = 2,
    refine_points: int = 10,
    prescreen: Callable[[float], bool] | None = None,
    trace: SearchTrace | None = None,
    polish_tol: float | None = None,
    lower_bound: Callable[[float], float] | None = None,
) -> tuple[float, SolveOutcome]:
    """Grid search for the beta with the smallest fixed-beta SDP optimum.

    A uniform grid over ``interval`` is followed by ``refine_rounds`` uniform
    grids of ``refine_points`` on the sub-interval bracketing the incumbent.
    Non-optimal solves count as infeasible points.  Ties go to the smaller
    beta.  ``prescreen(beta) is False`` marks a point infeasible unsolved.
    With ``polish_tol`` set, a bounded Brent search on the final bracket
    (absolute beta tolerance ``polish_tol``) may further lower the incumbent.

    ``lower_bound(beta)``, if given, must never exceed the optimum at
    ``beta``; points whose bound is strictly above the incumbent are skipped
    since they cannot win, so the result equals that of the full grid.

    Raises:
        InfeasibleError: no evaluated point is feasible.
    """
    if grid_points < 2:
        raise ValueError(f"grid_points must be >= 2, got {grid_points}")
    lo, hi = interval
    trace = trace if trace is not None else SearchTrace()
    seen: dict[float, SolveOutcome | None] = {}
    best: tuple[float, SolveOutcome] | None = None

    def evaluate(beta: float) -> SolveOutcome | None:
        beta = float(beta)
        if beta in seen:
            return seen[beta]
        out = None
        pruned = (
            lower_bound is not None and best is not None
            and lower_bound(beta) > best[1].objective
        )
        if pruned or (prescreen is not None and not prescreen(beta)):
            trace.betas.append(beta)
            trace.statuses.append("skipped")
            trace.objectives.append(np.nan)
        else:
            res = program_builder(beta)
            res = res if isinstance(res, SolveOutcome) else solve(res)
            trace.betas.append(beta)
            trace.statuses.append(res.status)
            trace.objectives.append(res.objective)
            out = res if res.optimal else None
        seen[beta] = out
        return out

    def consider(betas) -> None:
        nonlocal best
        for b in betas:
            res = evaluate(b)
            if res is None:
                continue
            if best is None or (res.objective, b) < (best[1].objective, best[0]):
                best = (float(b), res)

    grid = np.linspace(lo, hi, grid_points) if hi > lo else np.array([lo])
    consider(grid)
    if best is None:
        raise InfeasibleError("no feasible beta on the search grid")
    step = grid[1] - grid[0] if grid.size > 1 else 0.0
    for _ in range(refine_rounds):
        if step <= 0:
            break
        a, b = max(lo, best[0] - step), min(hi, best[0] + step)
        pts = np.linspace(a, b, refine_points)
        consider(pts)
        step = (b - a) / (refine_points - 1)
    if polish_tol is not None and step > polish_tol:
        a, b = max(lo, best[0] - step), min(hi, best[0] + step)
        penalty = 10.0 * abs(best[1].objective) + 1.0

        def f(beta):
            res = evaluate(beta)
            return res.objective if res is not None else penalty

        r = minimize_scalar(f, bounds=(a, b), method="bounded", options={"xatol": polish_tol})
        consider([r.x])
    return best


def psd_project(Q: np.ndarray) -> np.ndarray:
    """Nearest PSD matrix in Frobenius norm (negative eigenvalues set to zero)."""
    w, V = np.linalg.eigh(0.5 * (Q + Q.conj().T))
    return (V * np.clip(w, 0.0, None)) @ V.conj().T


def eig_desc(Q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    w, V = np.linalg.eigh(0.5 * (Q + Q.conj().T))
    return w[::-1], V[:, ::-1]


def extract_rank_one(Q: np.ndarray, rel_tol: float = RANK_ONE_TOL) -> np.ndarray | None:
    """Dominant-eigenvector beamformer ``sqrt(l1) u1`` if ``l2/l1 <= rel_tol``, else None.

    The zero matrix counts as rank one with a zero beamformer.
    """
    w, V = eig_desc(Q)
    if w[0] <= 0:
        return np.zeros(Q.shape[0], dtype=complex)
    if w.size > 1 and w[1] / w[0] > rel_tol:
        return None
    return np.sqrt(w[0]) * V[:, 0]


def rank_summary(Q: np.ndarray, rel_tol: float = RANK_ONE_TOL) -> dict:
    w, _ = eig_desc(Q)
    tr = float(np.sum(np.clip(w, 0, None)))
    if w[0] <= 0:
        return {"lambda_ratio": 1.0, "lambda2_over_lambda1": 0.0, "rank": 0, "rank_one": True}
    second = float(w[1] / w[0]) if w.size > 1 else 0.0
    return {
        "lambda_ratio": float(w[0] / tr) if tr > 0 else 1.0,
        "lambda2_over_lambda1": second,
        "rank": int(np.sum(w > rel_tol * w[0])),
        "rank_one": second <= rel_tol,
    }


# ---------------------------------------------------------------------------
# Gaussian randomization


def _candidate_vectors(Q: np.ndarray, n: int, rng: Generator) -> np.ndarray:
    """``n`` draws from CN(0, Q) as rows."""
    w, V = np.linalg.eigh(0.5 * (Q + Q.conj().T))
    root = V * np.sqrt(np.clip(w, 0, None))
    z = (rng.standard_normal((n, Q.shape[0])) + 1j * rng.standard_normal((n, Q.shape[0]))) / np.sqrt(2)
    return z @ root.T


def _principal(Q: np.ndarray) -> np.ndarray:
    w, V = eig_desc(Q)
    return np.sqrt(max(w[0], 0.0)) * V[:, 0]


def beamformer_feasible(
    c, wp, ws, channels: ChannelSet, config: ScenarioConfig, q_z: np.ndarray, rate_tol: float = RATE_TOL
) -> np.ndarray:
    """Perfect-CSI feasibility of ``Q_p = c wp wp^H, Q_s = c ws ws^H`` per candidate.

    Rates may fall short of their targets by ``rate_tol`` bits, which absorbs
    solver round-off when the SDP optimum sits on an active power budget.
    """
    hp = np.abs(wp @ channels.h_p.conj()) ** 2
    gps = np.abs(ws @ channels.g_p.conj()) ** 2
    gss = np.abs(ws @ channels.g_s.conj()) ** 2
    hss = np.abs(wp @ channels.h_s.conj()) ** 2
    an_p = rm.quad_form(channels.g_p, q_z)
    an_s = rm.quad_form(channels.g_s, q_z)
    r_pu = np.log2(1 + c * hp / (c * gps + an_p + config.sigma2_p))
    r_su = np.log2(1 + c * gss / (an_s + c * hss + config.sigma2_s))
    G, H = channels.G_e, channels.H_e
    a = wp.conj() @ H  # rows: H_e^H w_p (conjugated layout)
    b = ws.conj() @ G
    base = G.conj().T @ q_z @ G + config.sigma2_e * np.eye(channels.n_r)
    N = base[None] + c[:, None, None] * np.einsum("ki,kj->kij", b.conj(), b)
    x = np.linalg.solve(N, a.conj()[..., None])[..., 0]
    r_eve = np.log2(1 + c * np.real(np.einsum("ki,ki->k", a, x)))
    return (r_pu - r_eve >= config.tau_p - rate_tol) & (r_su >= config.tau_s - rate_tol)


def _max_min_eig(M0: np.ndarray, D: np.ndarray, mu_max: np.ndarray, iters: int = 60,
                 target: float | None = None) -> np.ndarray:
    """``max_{0<=mu<=mu_max} lambda_min(M0 + mu D)`` per batch element (concave in mu).

    With ``target`` the search stops once every element is known to reach it,
    so the result is then only a lower bound that is ``>= target``.
    """
    a = np.zeros(M0.shape[0])
    b = np.maximum(mu_max, 0.0)
    gr = (np.sqrt(5) - 1) / 2

    def f(mu):
        return np.linalg.eigvalsh(M0 + mu[:, None, None] * D)[:, 0]

    best = np.maximum(f(a), f(b))
    x1, x2 = b - gr * (b - a), a + gr * (b - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(iters):
        best = np.maximum(best, np.maximum(f1, f2))
        if target is not None and np.all(best >= target):
            break
        if np.all(b - a <= 1e-12 * np.maximum(b, 1.0)):
            break
        left = f1 < f2
        a = np.where(left, x1, a)
        b = np.where(left, b, x2)
        x1n = np.where(left, x2, b - gr * (b - a))
        x2n = np.where(left, a + gr * (b - a), x1)
        f1n = np.where(left, f2, np.nan)
        f2n = np.where(left, np.nan, f1)
        f1n = np.where(~left, f(x1n), f1n)
        f2n = np.where(left, f(x2n), f2n)
        x1, x2, f1, f2 = x1n, x2n, f1n, f2n
    return np.maximum(best, np.maximum(f1, f2))


def _robust_feasible(c, wp, ws, channels, robust: RobustSpec, config, q_z, beta_bar, tol=1e-9) -> np.ndarray:
    """Worst-case feasibility at fixed ``beta_bar`` via the two S-procedure LMIs.

    With ``Q_p`` rank one both LMIs are exact reformulations, so checking
    that some multiplier makes each PSD decides robust feasibility.
    """
    k = c.size
    n_s, n_r = channels.n_s, channels.n_r
    a_bar = 1.0 - beta_bar * 2.0**config.tau_p
    S = c[:, None, None] * np.einsum("ki,kj->kij", ws, ws.conj()) + q_z[None]
    hp = c * np.abs(wp @ channels.h_p.conj()) ** 2
    ok = np.ones(k, dtype=bool)

    g = robust.nominal_g_p
    Sg = S @ g
    if robust.eps_p > 0:
        M = np.zeros((k, n_s + 1, n_s + 1), dtype=complex)
        M[:, :n_s, :n_s] = a_bar * S
        M[:, :n_s, n_s] = a_bar * Sg
        M[:, n_s, :n_s] = a_bar * Sg.conj()
        M[:, n_s, n_s] = a_bar * np.real(np.einsum("i,ki->k", g.conj(), Sg)) + hp + a_bar * config.sigma2_p
        D = np.zeros((n_s + 1, n_s + 1))
        D[:n_s, :n_s] = np.eye(n_s)
        D[n_s, n_s] = -robust.eps_p**2
        mu_max = np.real(M[:, n_s, n_s]) / robust.eps_p**2
        ok &= _max_min_eig(M, D, mu_max, target=-tol) >= -tol
    else:
        ok &= a_bar * (np.real(np.einsum("i,ki->k", g.conj(), Sg)) + config.sigma2_p) + hp >= -tol

    G, H = robust.nominal_G_e, channels.H_e
    b1 = beta_bar - 1.0
    hw = wp.conj() @ H  # (k, n_r): conj of H^H w_p
    leak = c[:, None, None] * np.einsum("ki,kj->kij", hw.conj(), hw)
    top_left = b1 * (np.einsum("ai,kab,bj->kij", G.conj(), S, G) + config.sigma2_e * np.eye(n_r)) - leak
    if robust.eps_e > 0:
        M = np.zeros((k, n_r + n_s, n_r + n_s), dtype=complex)
        M[:, :n_r, :n_r] = top_left
        M[:, :n_r, n_r:] = b1 * np.einsum("ai,kab->kib", G.conj(), S)
        M[:, n_r:, :n_r] = b1 * S @ G
        M[:, n_r:, n_r:] = b1 * S
        D = np.zeros((n_r + n_s, n_r + n_s))
        D[:n_r, :n_r] = -np.eye(n_r)
        D[n_r:, n_r:] = np.eye(n_s) / robust.eps_e**2
        mu_max = np.linalg.eigvalsh(top_left)[:, -1]
        ok &= _max_min_eig(M, D, mu_max, target=-tol) >= -tol
    else:
        ok &= np.linalg.eigvalsh(top_left)[:, 0] >= -tol

    su = c * np.abs(ws @ channels.g_s.conj()) ** 2 - (2.0**config.tau_s - 1) * (
        rm.quad_form(channels.g_s, q_z) + c * np.abs(wp @ channels.h_s.conj()) ** 2 + config.sigma2_s)
    ok &= su >= 0
    return ok


def min_feasible_scale(
    feasible: Callable[[np.ndarray], np.ndarray],
    c_max: np.ndarray,
    tol: float = 1e-6,
    n_scan: int = 60,
    span: float = 1e-8,
    c_lo: np.ndarray | None = None,
) -> np.ndarray:
    """Smallest feasible scale in ``[0, c_max]`` per candidate (inf if none found).

    Rate constraints need not be monotone in a common scale, so a geometric
    scan over ``[c_lo, c_max]`` (default ``c_lo = span * c_max``) locates the
    first feasible point and bisection (relative ``tol``) then closes the gap
    to the last infeasible scan point below it.  Pass ``c_lo`` when scales
    below it are known to be infeasible.
    """
    c_max = np.asarray(c_max, dtype=float)
    out = np.full(c_max.shape, np.inf)
    zero_ok = feasible(np.zeros_like(c_max))
    out[zero_ok] = 0.0
    todo = ~zero_ok
    if not todo.any():
        return out
    c_lo = span * c_max if c_lo is None else np.clip(np.asarray(c_lo, dtype=float), span * c_max, c_max)
    ratio = c_max / c_lo
    lo = np.zeros_like(c_max)
    hi = np.full(c_max.shape, np.nan)
    for f in np.linspace(0.0, 1.0, n_scan):
        active = todo & np.isnan(hi)
        if not active.any():
            break
        c = c_lo * ratio**f
        ok = feasible(c) & active
        hi = np.where(ok, c, hi)
        lo = np.where(active & ~ok, c, lo)
    found = ~np.isnan(hi)
    hi = np.where(found, hi, 0.0)
    while True:
        gap = found & ((hi - lo) > tol * hi)
        if not gap.any():
            break
        mid = 0.5 * (lo + hi)
        ok = feasible(mid)
        hi = np.where(gap & ok, mid, hi)
        lo = np.where(gap & ~ok, mid, lo)
    out[todo & found] = hi[todo & found]
    return out


def _robust_costs(nominal_cost, c_nom, c_max, norms, wp, ws, channels, robust, config, q_z, beta_bar, tol,
                  chunk: int = 16) -> np.ndarray:
    """Worst-case minimal powers, evaluated in order of the nominal lower bound.

    Robust feasibility implies nominal feasibility at the same scale, so
    ``nominal_cost`` bounds each candidate's robust cost from below;
    candidates whose bound exceeds the best robust cost found are skipped.
    """
    cost = np.full(nominal_cost.shape, np.inf)
    order = [int(k) for k in np.argsort(nominal_cost, kind="stable") if np.isfinite(nominal_cost[k])]
    best = np.inf
    for start in range(0, len(order), chunk):
        idx = np.array(order[start:start + chunk])
        if nominal_cost[idx[0]] >= best:
            break

        def feasible(c, idx=idx):
            return _robust_feasible(c, wp[idx], ws[idx], channels, robust, config, q_z, beta_bar)

        c = min_feasible_scale(feasible, c_max[idx], tol, n_scan=30, c_lo=c_nom[idx])
        cost[idx] = c * norms[idx]
        best = min(best, float(np.min(cost[idx])))
    return cost


def gaussian_randomization(
    solution: CovarianceTriple,
    channels: ChannelSet,
    config: ScenarioConfig,
    n_samples: int = 1000,
    rng: Generator | None = None,
    robust: RobustSpec | None = None,
    beta_bar: float | None = None,
    tol: float = 1e-6,
    include_principal: bool = True,
) -> tuple[np.ndarray, np.ndarray] | None:
    """Rank-one beamformers from Gaussian draws around the relaxed covariances.

    Each candidate pair ``(w_p, w_s) ~ CN(0, Q_p*) x CN(0, Q_s*)`` is scaled
    by the smallest common factor (scan plus bisection to relative ``tol``,
    see :func:`min_feasible_scale`) that meets
    the rate constraints with ``Q_z`` kept at ``Q_z*`` and the budget
    respected.  With ``robust`` set, feasibility is worst-case over the error
    balls at the fixed ``beta_bar``.  With ``include_principal`` the pair of
    scaled principal eigenvectors is added as one extra candidate; random
    pairs split power between ``w_p`` and ``w_s`` in random proportion, which
    can leave none of them feasible when the budget is active.  Returns the
    cheapest feasible pair, or None when no candidate is feasible.
    """
    if n_samples < 1:
        return None
    rng = rng if rng is not None else np.random.default_rng()
    q_z = solution.q_z
    wp = _candidate_vectors(solution.q_p, n_samples, rng)
    ws = _candidate_vectors(solution.q_s, n_samples, rng)
    if include_principal:
        wp = np.vstack([_principal(solution.q_p), wp])
        ws = np.vstack([_principal(solution.q_s), ws])
    norms = np.sum(np.abs(wp) ** 2, axis=1) + np.sum(np.abs(ws) ** 2, axis=1)
    room = config.p_th - float(np.real(np.trace(q_z)))
    if room <= 0:
        return None
    usable = norms > 0
    wp, ws, norms = wp[usable], ws[usable], norms[usable]
    if norms.size == 0:
        return None
    c_max = room / norms

    c_nom = min_feasible_scale(lambda c: beamformer_feasible(c, wp, ws, channels, config, q_z), c_max, tol)
    cost = np.where(np.isfinite(c_nom), c_nom * norms, np.inf)
    if robust is not None:
        if beta_bar is None:
            raise ValueError("beta_bar is required for robust randomization")
        cost = _robust_costs(cost, c_nom, c_max, norms, wp, ws, channels, robust, config, q_z, beta_bar, tol)
    if not np.isfinite(cost).any():
        return None
    c = cost / norms
    k = int(np.argmin(cost))
    scale = np.sqrt(c[k])
    return scale * wp[k], scale * ws[k]


# ---------------------------------------------------------------------------
# robust sampling oracle


def sample_uncertainty_margins(
    triple: CovarianceTriple,
    channels: ChannelSet,
    robust: RobustSpec,
    config: ScenarioConfig,
    beta_bar: float,
    n_samples: int,
    rng: Generator,
) -> dict:
    """Worst sampled margins over channel errors drawn from both balls.

    Half the draws lie inside the balls, half on their boundaries.
    Returns the worst PU-ratio margin ``PU SINR factor - beta_bar 2^tau_p``
    (relative), Eve det margin ``beta_bar - det``, and secrecy margin
    ``C_p - C_e - tau_p``.
    """
    if n_samples <= 0:
        return {"n_samples": 0, "secrecy": np.inf, "pu": np.inf, "eve": np.inf}
    S = triple.q_s + triple.q_z
    n_r = channels.n_r
    n_in = (n_samples + 1) // 2
    n_bd = n_samples - n_in
    gps = np.concatenate([
        sample_csi_errors(robust.nominal_g_p, robust.eps_p, n_in, "interior", rng),
        sample_csi_errors(robust.nominal_g_p, robust.eps_p, n_bd, "boundary", rng),
    ])
    Ges = np.concatenate([
        sample_csi_errors(robust.nominal_G_e, robust.eps_e, n_in, "interior", rng),
        sample_csi_errors(robust.nominal_G_e, robust.eps_e, n_bd, "boundary", rng),
    ])
    signal = rm.quad_form(channels.h_p, triple.q_p)
    interf = np.real(np.einsum("ki,ij,kj->k", gps.conj(), S, gps))
    c_p = np.log2(1 + signal / (interf + config.sigma2_p))
    pu_margin = (signal + interf + config.sigma2_p) / (interf + config.sigma2_p) - beta_bar * 2.0**config.tau_p
    N = np.einsum("kai,ab,kbj->kij", Ges.conj(), S, Ges) + config.sigma2_e * np.eye(n_r)
    E = channels.H_e.conj().T @ triple.q_p @ channels.H_e
    _, ld_num = np.linalg.slogdet(N + E[None])
    _, ld_den = np.linalg.slogdet(N)
    det = np.exp(ld_num - ld_den)
    c_e = (ld_num - ld_den) / np.log(2)
    return {
        "n_samples": n_samples,
        "secrecy": float(np.min(c_p - c_e - config.tau_p)),
        "pu": float(np.min(pu_margin)),
        "eve": float(np.min(beta_bar - det)),
    }


# ---------------------------------------------------------------------------
# end-to-end pipelines


def trim_noise(program: ConicProgram, outcome: SolveOutcome, rel_slack: float = 1e-6) -> SolveOutcome:
    """Re-solve with the least artificial noise whose signal power is within ``rel_slack``.

    Returns ``outcome`` unchanged when the program has no noise variable or
    the second solve fails.
    """
    if not any(v.name == "q_z" for v in program.variables):
        return outcome
    cap = outcome.objective + rel_slack * max(1.0, abs(outcome.objective))
    res = solve(min_noise_program(program, cap))
    if not res.optimal:
        log.debug("noise trimming failed (%s); keeping the original solution", res.status)
        return outcome
    # the signal cap makes this program nearly degenerate; clean up round-off
    values = {k: psd_project(x) if np.ndim(x) == 2 else x for k, x in res.values.items()}
    signal = float(np.real(np.trace(values["q_p"]) + np.trace(values["q_s"])))
    return SolveOutcome(status=res.status, values=values, objective=signal,
                        primal_residual=res.primal_residual, dual_residual=res.dual_residual,
                        iterations=res.iterations, solve_time=res.solve_time)


def _finish(
    beta: float,
    outcome: SolveOutcome,
    builder: Callable[[float], ConicProgram],
    channels: ChannelSet,
    config: ScenarioConfig,
    n_solves: int,
    rng: Generator,
    n_random: int,
    robust: RobustSpec | None = None,
) -> BeamformingSolution:
    v = outcome.values
    q_z = v.get("q_z", np.zeros((channels.n_s, channels.n_s), dtype=complex))
    sdp_triple = CovarianceTriple(v["q_p"], v["q_s"], q_z)
    ranks = {k: rank_summary(getattr(sdp_triple, k)) for k in ("q_p", "q_s", "q_z")}
    w_p = extract_rank_one(sdp_triple.q_p)
    w_s = extract_rank_one(sdp_triple.q_s)
    check_channels = channels if robust is None else channels.replace(g_p=robust.nominal_g_p, G_e=robust.nominal_G_e)
    report = rm.residuals(sdp_triple, check_channels, config)
    if w_p is not None and w_s is not None and report.feasible():
        return BeamformingSolution(
            triple=sdp_triple, beta_star=beta, objective=sdp_triple.signal_power(),
            sdp_objective=outcome.objective, rank_info=ranks, method="eigendecomposition",
            residuals=report, w_p=w_p, w_s=w_s, n_solves=n_solves,
        )
    # Noise is free in the objective, so the solver tends to spend the whole
    # budget on it; trimming leaves power headroom for the rescaled candidates.
    trimmed = trim_noise(builder(beta), outcome)
    v = trimmed.values
    base = CovarianceTriple(v["q_p"], v["q_s"], v.get("q_z", q_z))
    pair = gaussian_randomization(base, check_channels, config, n_random, rng, robust=robust, beta_bar=beta)
    if pair is not None:
        wp, ws = pair
        triple = CovarianceTriple(np.outer(wp, wp.conj()), np.outer(ws, ws.conj()), base.q_z)
        rep = rm.residuals(triple, check_channels, config)
        if rep.feasible():
            return BeamformingSolution(
                triple=triple, beta_star=beta, objective=triple.signal_power(),
                sdp_objective=outcome.objective, rank_info=ranks, method="randomization",
                residuals=rep, w_p=wp, w_s=ws, n_solves=n_solves,
            )
    # Without a rank-one Q_p the relaxed Eve constraint is not exact, so the
    # covariances are kept only if they pass the direct rate checks.
    if report.feasible() and w_p is not None:
        return BeamformingSolution(
            triple=sdp_triple, beta_star=beta, objective=sdp_triple.signal_power(),
            sdp_objective=outcome.objective, rank_info=ranks, method="covariance",
            residuals=report, w_p=w_p, w_s=w_s, n_solves=n_solves,
        )
    raise InfeasibleError("relaxation is not rank-one and randomization found no feasible beamformers")


def solve_perfect(
    channels: ChannelSet,
    config: ScenarioConfig,
    with_an: bool = True,
    grid_points: int = 100,
    refine_rounds: int = 2,
    n_random: int = 1000,
    rng: Generator | None = None,
    polish_tol: float | None = POLISH_TOL,
) -> BeamformingSolution:
    """Minimum-power secure design with perfect CSI.

    Raises:
        InfeasibleError: no beta on the search grid admits a feasible SDP.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    trace = SearchTrace()

    def builder(b):
        return build_perfect_program(channels, config, b, with_an=with_an)

    beta, outcome = line_search_beta(
        builder,
        search_interval(channels.h_p, config), grid_points, refine_rounds, trace=trace, polish_tol=polish_tol,
        lower_bound=objective_lower_bound(channels, config),
    )
    return _finish(beta, outcome, builder, channels, config, trace.n_solves, rng, n_random)


def solve_robust(
    nominal_channels: ChannelSet,
    robust: RobustSpec,
    config: ScenarioConfig,
    with_an: bool = True,
    grid_points: int = 100,
    refine_rounds: int = 2,
    n_random: int = 1000,
    n_check: int = 1000,
    rng: Generator | None = None,
    polish_tol: float | None = POLISH_TOL,
) -> BeamformingSolution:
    """Worst-case design for norm-bounded errors on the BS->PU and BS->Eve channels.

    The returned solution carries ``robust_margins`` from ``n_check`` sampled
    channel errors.

    Raises:
        InfeasibleError: no beta on the search grid admits a feasible SDP.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    trace = SearchTrace()

    def builder(b):
        return build_robust_program(nominal_channels, robust, config, b, with_an=with_an)

    beta, outcome = line_search_beta(
        builder,
        search_interval(nominal_channels.h_p, config), grid_points, refine_rounds, trace=trace,
        polish_tol=polish_tol, lower_bound=objective_lower_bound(nominal_channels, config),
    )
    sol = _finish(beta, outcome, builder, nominal_channels, config, trace.n_solves, rng, n_random, robust=robust)
    sol.robust_margins = sample_uncertainty_margins(
        sol.triple, nominal_channels, robust, config, beta, n_check, rng)
    return sol
