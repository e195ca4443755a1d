"""Monte Carlo sweeps of average transmit power over rate targets and CSI error."""
from __future__ import annotations

import csv
import logging
import math
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel_models import (
    ChannelSet,
    LinkSpecs,
    RobustSpec,
    SatChannelSpec,
    TerrestrialChannelSpec,
    draw_channel_set,
)
from .optimizer import (
    BeamformingSolution,
    InfeasibleError,
    beamformer_feasible,
    rank_summary,
    solve_perfect,
    solve_robust,
)
from . import rate_metrics as rm
from .rate_metrics import CovarianceTriple, ScenarioConfig

log = logging.getLogger(__name__)

AXES = ("tau_p", "tau_s", "eps")
CSV_COLUMNS = (
    "scheme", "axis", "axis_value", "mean_power_w", "mean_power_dbw", "feasibility_rate",
    "rank1_qp_rate", "rank1_qs_rate", "mean_beta", "n_trials",
)
_SCHEME_RE = re.compile(r"^(perfect|perfect_no_an|fixed_allocation)$|^(robust|robust_no_an)(?:\(([^)]*)\))?$")


def default_links(n_t: int = 4, n_s: int = 4) -> LinkSpecs:
    """Reference link set: heavy shadowing, beam offsets 0.01/30/0.8 deg for PU/SU/Eve,
    terrestrial AoDs 40/0/20 deg for PU/SU/Eve with a 5 deg spread."""
    del n_t  # satellite links are i.i.d. per antenna
    return LinkSpecs(
        sat_p=SatChannelSpec(0.01),
        sat_s=SatChannelSpec(30.0),
        sat_e=SatChannelSpec(0.8),
        ter_p=TerrestrialChannelSpec(n_s, 40.0),
        ter_s=TerrestrialChannelSpec(n_s, 0.0),
        ter_e=TerrestrialChannelSpec(n_s, 20.0),
    )


@dataclass(frozen=True)
class Scheme:
    """A design method evaluated in a sweep.

    ``eps`` is the CSI error radius for robust schemes; None on an ``eps``
    sweep means "use the axis value".
    """

    kind: str
    eps: float | None = None

    @classmethod
    def parse(cls, text: str) -> Scheme:
        m = _SCHEME_RE.match(text.strip())
        if not m:
            raise ValueError(f"unknown scheme {text!r}")
        if m.group(1):
            return cls(m.group(1))
        eps = m.group(3)
        if eps is None or eps == "":
            return cls(m.group(2))
        value = float(eps)
        if value < 0:
            raise ValueError(f"scheme {text!r}: eps must be >= 0")
        return cls(m.group(2), value)

    @property
    def label(self) -> str:
        if self.kind.startswith("robust") and self.eps is not None:
            return f"{self.kind}({self.eps:g})"
        return self.kind

    @property
    def robust(self) -> bool:
        return self.kind.startswith("robust")


@dataclass(frozen=True)
class SearchSettings:
    grid_points: int = 100
    refine_rounds: int = 2
    polish_tol: float | None = 1e-6
    n_random: int = 1000
    n_check: int = 1000

    def __post_init__(self):
        if self.grid_points < 2:
            raise ValueError(f"grid_points must be >= 2, got {self.grid_points}")
        if self.refine_rounds < 0 or self.n_random < 0 or self.n_check < 0:
            raise ValueError("refine_rounds, n_random and n_check must be >= 0")


@dataclass(frozen=True)
class SweepSpec:
    """One sweep: an axis, its grid, schemes and the Monte Carlo setup."""

    axis: str
    grid: tuple
    n_trials: int
    seed: int = 0
    schemes: tuple = ("perfect",)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    links: LinkSpecs | None = None
    search: SearchSettings = field(default_factory=SearchSettings)

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}, got {self.axis!r}")
        grid = tuple(float(g) for g in self.grid)
        if not grid:
            raise ValueError("grid must be non-empty")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError(f"grid must be strictly increasing, got {list(grid)}")
        object.__setattr__(self, "grid", grid)
        if self.n_trials < 1:
            raise ValueError(f"n_trials must be >= 1, got {self.n_trials}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")
        schemes = tuple(s if isinstance(s, Scheme) else Scheme.parse(s) for s in self.schemes)
        if not schemes:
            raise ValueError("at least one scheme is required")
        labels = [s.label for s in schemes]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate schemes: {labels}")
        for s in schemes:
            if s.robust and s.eps is None and self.axis != "eps":
                raise ValueError(f"scheme {s.kind!r} needs an eps unless the axis is eps")
        if self.axis == "eps" and grid[0] < 0:
            raise ValueError("eps grid must be >= 0")
        object.__setattr__(self, "schemes", schemes)
        if self.links is None:
            object.__setattr__(self, "links", default_links(self.scenario.n_t, self.scenario.n_s))

    def point_config(self, value: float) -> ScenarioConfig:
        if self.axis == "tau_p":
            return self.scenario.with_(tau_p=value)
        if self.axis == "tau_s":
            return self.scenario.with_(tau_s=value)
        return self.scenario


@dataclass(frozen=True)
class TrialRecord:
    scheme: str
    axis_value: float
    trial: int
    feasible: bool
    objective: float = math.nan
    beta: float = math.nan
    rank1_qp: bool = False
    rank1_qs: bool = False
    method: str = ""
    min_residual: float = math.nan
    robust_secrecy_margin: float = math.nan


@dataclass(frozen=True)
class SweepRow:
    scheme: str
    axis: str
    axis_value: float
    mean_power_w: float
    mean_power_dbw: float
    feasibility_rate: float
    rank1_qp_rate: float
    rank1_qs_rate: float
    mean_beta: float
    n_trials: int

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, c) for c in CSV_COLUMNS)


@dataclass
class SweepResult:
    """Aggregated rows plus every per-trial record (for paired comparisons)."""

    rows: list
    records: list = field(default_factory=list)
    elapsed: float = 0.0

    def row(self, scheme: str | Scheme, axis_value: float) -> SweepRow:
        scheme = scheme.label if isinstance(scheme, Scheme) else scheme
        for r in self.rows:
            if r.scheme == scheme and r.axis_value == axis_value:
                return r
        raise KeyError((scheme, axis_value))

    def paired(self, scheme: str | Scheme, axis_value: float) -> dict[int, TrialRecord]:
        scheme = scheme.label if isinstance(scheme, Scheme) else scheme
        return {r.trial: r for r in self.records if r.scheme == scheme and r.axis_value == axis_value}


def to_dbw(watts: float) -> float:
    if watts > 0:
        return 10.0 * math.log10(watts)
    return -math.inf if watts == 0 else math.nan


def trial_rngs(seed: int, trial: int) -> tuple[np.random.Generator, np.random.SeedSequence]:
    """Channel generator and solver seed sequence for one trial."""
    ss = np.random.SeedSequence([seed, trial])
    chan, solver = ss.spawn(2)
    return np.random.default_rng(chan), solver


def fixed_allocation(channels: ChannelSet, config: ScenarioConfig, tol: float = 1e-6) -> BeamformingSolution:
    """Matched-filter beamformers with a common power scale and no AN.

    ``w_p = sqrt(c) h_p/|h_p|`` and ``w_s = sqrt(c) g_s/|g_s|``; ``c`` is the
    smallest value found by bisection (relative ``tol``) below the budget cap
    ``P_th/2`` that meets the secrecy and SU rate targets.

    Raises:
        InfeasibleError: the targets are not met at ``c = P_th/2``.
    """
    n_t, n_s = channels.n_t, channels.n_s

    def unit(v):
        nrm = np.linalg.norm(v)
        return v / nrm if nrm > 0 else np.zeros_like(v)

    up, us = unit(channels.h_p)[None], unit(channels.g_s)[None]
    q_z = np.zeros((n_s, n_s), dtype=complex)
    c_max = np.array([config.p_th / 2.0])

    def feasible(c):
        return bool(beamformer_feasible(np.asarray(c), up, us, channels, config, q_z)[0])

    if feasible([0.0]):
        c = 0.0
    elif not feasible(c_max):
        raise InfeasibleError("fixed allocation misses the rate targets at full power")
    else:
        lo, hi = 0.0, float(c_max[0])
        while hi - lo > tol * hi:
            mid = 0.5 * (lo + hi)
            if feasible([mid]):
                hi = mid
            else:
                lo = mid
        c = hi
    w_p, w_s = np.sqrt(c) * up[0], np.sqrt(c) * us[0]
    triple = CovarianceTriple(np.outer(w_p, w_p.conj()), np.outer(w_s, w_s.conj()), q_z)
    report = rm.residuals(triple, channels, config)
    # implied Eve slack: 2^{C_e}
    beta = 2.0 ** rm.rate_eve(triple, channels, config)
    return BeamformingSolution(
        triple=triple, beta_star=beta, objective=triple.signal_power(), sdp_objective=math.nan,
        rank_info={k: rank_summary(getattr(triple, k)) for k in ("q_p", "q_s", "q_z")},
        method="eigendecomposition", residuals=report, w_p=w_p, w_s=w_s,
    )


def baseline(
    mode: str,
    channels: ChannelSet,
    config: ScenarioConfig,
    robust: RobustSpec | None = None,
    search: SearchSettings | None = None,
    rng: np.random.Generator | None = None,
) -> BeamformingSolution:
    """Comparison designs: ``no_an`` (AN variable removed) or ``fixed_allocation``.

    ``no_an`` follows the robust pipeline when ``robust`` is given.  The
    fixed allocation always uses the nominal channels.
    """
    search = search or SearchSettings()
    if mode == "fixed_allocation":
        return fixed_allocation(channels, config)
    if mode != "no_an":
        raise ValueError(f"mode must be 'no_an' or 'fixed_allocation', got {mode!r}")
    kw = dict(with_an=False, grid_points=search.grid_points, refine_rounds=search.refine_rounds,
              n_random=search.n_random, rng=rng, polish_tol=search.polish_tol)
    if robust is None:
        return solve_perfect(channels, config, **kw)
    return solve_robust(channels, robust, config, n_check=search.n_check, **kw)


def run_scheme(
    scheme: Scheme,
    channels: ChannelSet,
    config: ScenarioConfig,
    eps: float | None,
    search: SearchSettings,
    rng: np.random.Generator,
) -> BeamformingSolution:
    """Dispatch one scheme on one channel draw; raises :class:`InfeasibleError`."""
    common = dict(grid_points=search.grid_points, refine_rounds=search.refine_rounds,
                  n_random=search.n_random, rng=rng, polish_tol=search.polish_tol)
    if scheme.kind == "fixed_allocation":
        return fixed_allocation(channels, config)
    if scheme.robust:
        radius = scheme.eps if scheme.eps is not None else eps
        robust = RobustSpec.around(channels, radius)
        return solve_robust(channels, robust, config, with_an=scheme.kind == "robust",
                            n_check=search.n_check, **common)
    return solve_perfect(channels, config, with_an=scheme.kind == "perfect", **common)


def _record(scheme: Scheme, value: float, trial: int, sol: BeamformingSolution | None) -> TrialRecord:
    if sol is None:
        return TrialRecord(scheme.label, value, trial, False)
    res = sol.residuals.as_dict()
    margins = sol.robust_margins or {}
    return TrialRecord(
        scheme=scheme.label, axis_value=value, trial=trial, feasible=True,
        objective=sol.objective, beta=sol.beta_star, rank1_qp=sol.rank_one_qp, rank1_qs=sol.rank_one_qs,
        method=sol.method, min_residual=min(res.values()),
        robust_secrecy_margin=margins.get("secrecy", math.nan),
    )


def run_trial(spec: SweepSpec, trial: int) -> list[TrialRecord]:
    """All grid points and schemes on one shared channel draw."""
    chan_rng, solver_ss = trial_rngs(spec.seed, trial)
    channels = draw_channel_set(spec.links, spec.scenario.n_t, spec.scenario.n_r, chan_rng)
    seeds = solver_ss.spawn(len(spec.grid) * len(spec.schemes))
    out = []
    k = 0
    for value in spec.grid:
        config = spec.point_config(value)
        eps = value if spec.axis == "eps" else None
        for scheme in spec.schemes:
            rng = np.random.default_rng(seeds[k])
            k += 1
            try:
                sol = run_scheme(scheme, channels, config, eps, spec.search, rng)
            except (InfeasibleError, np.linalg.LinAlgError) as exc:
                log.debug("trial %d %s @ %g: %s", trial, scheme.label, value, exc)
                sol = None
            out.append(_record(scheme, value, trial, sol))
    return out


def aggregate(spec: SweepSpec, records: list[TrialRecord]) -> list[SweepRow]:
    rows = []
    for scheme in spec.schemes:
        for value in spec.grid:
            recs = [r for r in records if r.scheme == scheme.label and r.axis_value == value]
            ok = [r for r in recs if r.feasible]
            n = len(recs)
            if ok:
                mean_w = math.fsum(r.objective for r in ok) / len(ok)
                qp = sum(r.rank1_qp for r in ok) / len(ok)
                qs = sum(r.rank1_qs for r in ok) / len(ok)
                beta = math.fsum(r.beta for r in ok) / len(ok)
            else:
                mean_w = qp = qs = beta = math.nan
            rows.append(SweepRow(
                scheme=scheme.label, axis=spec.axis, axis_value=value, mean_power_w=mean_w,
                mean_power_dbw=to_dbw(mean_w) if ok else math.nan,
                feasibility_rate=len(ok) / n if n else math.nan,
                rank1_qp_rate=qp, rank1_qs_rate=qs, mean_beta=beta, n_trials=n,
            ))
    rows.sort(key=lambda r: (r.scheme, r.axis_value))
    return rows


def _run_trial_star(args):
    return run_trial(*args)


def run_sweep(spec: SweepSpec, threads: int | None = None, progress: bool = False) -> SweepResult:
    """Run every trial (in parallel when ``threads > 1``) and aggregate.

    Trials depend only on ``(spec.seed, trial)``, and records are reduced in
    trial order, so the result does not depend on ``threads``.
    """
    threads = threads or os.cpu_count() or 1
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    t0 = time.perf_counter()
    per_trial: list[list[TrialRecord]] = []
    jobs = [(spec, t) for t in range(spec.n_trials)]
    if threads == 1 or spec.n_trials == 1:
        results = map(_run_trial_star, jobs)
        pool = None
    else:
        pool = ProcessPoolExecutor(max_workers=min(threads, spec.n_trials))
        results = pool.map(_run_trial_star, jobs)
    try:
        for t, recs in enumerate(results):
            per_trial.append(recs)
            if progress:
                log.info("trial %d/%d done (%.1fs)", t + 1, spec.n_trials, time.perf_counter() - t0)
    finally:
        if pool is not None:
            pool.shutdown()
    records = [r for recs in per_trial for r in recs]
    return SweepResult(rows=aggregate(spec, records), records=records, elapsed=time.perf_counter() - t0)


def format_value(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return "%.12g" % float(v)


def write_csv(result: SweepResult, fh) -> None:
    """Write the aggregated rows to an open text stream."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in sorted(result.rows, key=lambda r: (r.scheme, r.axis_value)):
        writer.writerow([format_value(v) for v in r.as_tuple()])


def emit_results(result: SweepResult, path: str | os.PathLike) -> Path:
    """Write the aggregated rows as CSV (UTF-8, LF, ``%.12g`` floats)."""
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8", newline="") as fh:
            write_csv(result, fh)
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
    return path


def read_results(path: str | os.PathLike) -> list[SweepRow]:
    """Parse a CSV written by :func:`emit_results`."""
    with Path(path).open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        rows = []
        for rec in reader:
            vals = {k: float(rec[k]) for k in CSV_COLUMNS if k not in ("scheme", "axis", "n_trials")}
            rows.append(SweepRow(scheme=rec["scheme"], axis=rec["axis"], n_trials=int(rec["n_trials"]), **vals))
        return rows
