"""``secure-stn`` command line: solve one instance, run a sweep, or run the oracles.

Exit codes: 0 success, 1 usage or config error, 2 infeasible, 3 a
validation suite failed.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .channel_models import RobustSpec, draw_channel_set
from .config import ConfigError, RunConfig, load_config, preset_path
from .experiments import emit_results, run_sweep, to_dbw, trial_rngs, write_csv
from .optimizer import BeamformingSolution, InfeasibleError, solve_perfect, solve_robust
from .validation import run_suites

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_VALIDATION = 0, 1, 2, 3
DEFAULT_SAMPLES = 10_000

log = logging.getLogger("secure_stn")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return v


def _pos_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="secure-stn", description="Secure beamforming for cognitive satellite-terrestrial networks.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def config_args(sp):
        src = sp.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", metavar="PATH", help="JSON run configuration")
        src.add_argument("--preset", metavar="NAME", help="bundled preset (scenario, fig2_tau_p, fig3_tau_s)")
        sp.add_argument("--seed", type=_nonneg_int, help="master seed (overrides the config)")
        sp.add_argument("--out", metavar="PATH", help="output file (overrides the config)")

    s = sub.add_parser("solve", help="solve one channel realisation")
    config_args(s)
    s.add_argument("--mode", choices=("perfect", "robust"),
                   help="CSI model (default: robust if the config has a 'robust' section)")
    s.add_argument("--samples", type=_nonneg_int, help="sampled CSI errors checked after a robust solve")

    w = sub.add_parser("sweep", help="Monte Carlo sweep, CSV output")
    config_args(w)
    w.add_argument("--threads", type=_pos_int, help="worker processes (default: all CPUs)")

    v = sub.add_parser("validate", help="run the oracle suites")
    v.add_argument("--samples", type=_nonneg_int, default=DEFAULT_SAMPLES, help="base sample count (0 skips)")
    v.add_argument("--seed", type=_nonneg_int, default=0)
    v.add_argument("--suite", action="append", help="run only this suite (repeatable)")
    return p


def _load(args) -> RunConfig:
    cfg = load_config(preset_path(args.preset) if args.preset else args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _fmt(x: float) -> str:
    return "%.12g" % x


def solution_report(sol: BeamformingSolution, mode: str) -> dict:
    rep = {
        "status": "optimal",
        "mode": mode,
        "objective_w": sol.objective,
        "objective_dbw": to_dbw(sol.objective),
        "sdp_objective_w": sol.sdp_objective,
        "beta_star": sol.beta_star,
        "method": sol.method,
        "n_solves": sol.n_solves,
        "total_power_w": sol.triple.total_power(),
        "rank_info": sol.rank_info,
        "residuals": sol.residuals.as_dict(),
    }
    if sol.robust_margins is not None:
        rep["robust_margins"] = sol.robust_margins
    for name in ("w_p", "w_s"):
        w = getattr(sol, name)
        if w is not None:
            rep[name] = {"re": np.real(w).tolist(), "im": np.imag(w).tolist()}
    return rep


def _print_report(rep: dict, stream) -> None:
    for key in ("status", "mode", "objective_w", "objective_dbw", "sdp_objective_w", "beta_star",
                "method", "n_solves", "total_power_w"):
        v = rep[key]
        print(f"{key}: {_fmt(v) if isinstance(v, float) else v}", file=stream)
    for name, info in rep["rank_info"].items():
        print(f"rank.{name}: {info['rank']} (lambda2/lambda1={info['lambda2_over_lambda1']:.3e})", file=stream)
    for name, v in rep["residuals"].items():
        print(f"residual.{name}: {_fmt(v)}", file=stream)
    for name, v in rep.get("robust_margins", {}).items():
        print(f"robust_margin.{name}: {_fmt(v) if isinstance(v, float) else v}", file=stream)


def cmd_solve(args) -> int:
    cfg = _load(args)
    if cfg.sweep is not None:
        raise ConfigError(f"{cfg.source}: has a 'sweep' section; use the sweep command")
    mode = args.mode or ("robust" if cfg.robust is not None else "perfect")
    if mode == "robust" and cfg.robust is None:
        raise ConfigError(f"{cfg.source}: --mode robust needs a 'robust' section with eps_p")
    chan_rng, solver_ss = trial_rngs(cfg.seed, 0)
    channels = cfg.channels or draw_channel_set(cfg.links, cfg.scenario.n_t, cfg.scenario.n_r, chan_rng)
    rng = np.random.default_rng(solver_ss)
    s = cfg.search
    common = dict(grid_points=s.grid_points, refine_rounds=s.refine_rounds, n_random=s.n_random,
                  rng=rng, polish_tol=s.polish_tol)
    try:
        if mode == "perfect":
            sol = solve_perfect(channels, cfg.scenario, **common)
        else:
            robust = RobustSpec.around(channels, cfg.robust.eps_p, cfg.robust.eps_e)
            n_check = s.n_check if args.samples is None else args.samples
            sol = solve_robust(channels, robust, cfg.scenario, n_check=n_check, **common)
    except InfeasibleError as exc:
        print(f"status: infeasible\nreason: {exc}")
        _write_json(args.out or cfg.output, {"status": "infeasible", "mode": mode, "reason": str(exc)})
        return EXIT_INFEASIBLE
    rep = solution_report(sol, mode)
    _print_report(rep, sys.stdout)
    _write_json(args.out or cfg.output, rep)
    return EXIT_OK


def _write_json(path, obj) -> None:
    if not path:
        return
    try:
        Path(path).write_text(json.dumps(obj, indent=2, default=_json_default) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc


def _json_default(o):
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def cmd_sweep(args) -> int:
    cfg = _load(args)
    if cfg.sweep is None:
        raise ConfigError(f"{cfg.source}: no 'sweep' section")
    threads = args.threads or os.cpu_count() or 1
    log.info("sweep %s over %s: %d trials, %d schemes, %d worker(s)", cfg.sweep.axis, list(cfg.sweep.grid),
             cfg.sweep.n_trials, len(cfg.sweep.schemes), threads)
    result = run_sweep(cfg.sweep, threads=threads, progress=True)
    out = args.out or cfg.output
    if out:
        emit_results(result, out)
        log.info("wrote %s (%.1fs)", out, result.elapsed)
    else:
        write_csv(result, sys.stdout)
    return EXIT_OK


def cmd_validate(args) -> int:
    if args.samples == 0:
        log.warning("--samples 0: all validation suites skipped")
    try:
        results = run_suites(args.samples, args.seed, args.suite)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}")
        return EXIT_VALIDATION
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    handlers = {"solve": cmd_solve, "sweep": cmd_sweep, "validate": cmd_validate}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
