"""Command-line front end: ``ccpmo solve | study | validate``.

Exit codes: 0 success, 2 infeasible, 3 solver failure, 4 configuration error.
On failure a machine-readable ``{"error": ..., "message": ...}`` object is
printed to stderr and written to ``error.json`` in the output directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import svg
from .baselines import UnsupportedProblemError, saa_grid_solve, scenario_solve
from .nlp import NonFiniteError, SolverConfig
from .problem import ProblemError, ProblemInstance, problem_from_config
from .smoothing import SMOOTHING_ID, SampleSet, SmoothingParams, smooth_prob
from .solver import (
    InfeasibleError,
    build_frontier,
    default_alpha_grid,
    mix_from_frontier,
    policy_from_dict,
    solve_deterministic,
    solve_two_point,
)
from .validate import (
    convergence_study,
    feasibility_bound_study,
    fig2_study,
    grid_two_point_oracle,
    monte_carlo_draws,
    monte_carlo_validate,
)

logger = logging.getLogger("ccpmo")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INFEASIBLE, EXIT_SOLVER, EXIT_CONFIG = 0, 2, 3, 4
ORDERING_TOLERANCE = 1e-6
# chord weights below this count as a single frontier point
DEGENERATE_WEIGHT = 1e-3


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Everything a run depends on; emitted with the results so a run can be replayed."""

    problem: dict
    alpha: float
    alpha_prime: float | None = None
    n_samples: int = 10_000
    epsilon: float = 0.01
    gamma: float = 0.01
    seed: int = 0
    solver: dict = field(default_factory=dict)
    out: str = "ccpmo_out"
    frontier_points: int = 50
    saa_resolution: int = 4001
    s_list: list = field(default_factory=lambda: [1, 2, 5, 10, 20, 30, 50])
    n_list: list = field(default_factory=lambda: [100, 1000, 10000])
    eps_list: list = field(default_factory=lambda: [0.1, 0.01])
    repetitions: int = 10
    trials: int = 200
    probe_count: int = 1000
    reference_size: int = 1_000_000
    skip_frontier: bool = False

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.alpha_prime is not None and not 0.0 <= self.alpha_prime <= self.alpha:
            raise ConfigError("alpha_prime must lie in [0, alpha]")
        if self.n_samples < 1:
            raise ConfigError("n_samples must be >= 1")
        if not self.epsilon > 0 or self.gamma < 0:
            raise ConfigError("epsilon must be > 0 and gamma >= 0")
        if not isinstance(self.problem, dict) or not (self.problem.get("builtin") or self.problem.get("problem")):
            raise ConfigError("problem needs a 'builtin' or 'problem' name")

    @property
    def threshold(self) -> float:
        """Threshold used inside the solvers (``alpha_prime`` when given)."""
        return self.alpha if self.alpha_prime is None else self.alpha_prime

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _num(v) -> str:
    """Full-precision, platform-stable text for CSV cells."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return repr(v) if math.isfinite(v) else ("nan" if math.isnan(v) else ("inf" if v > 0 else "-inf"))


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([c if isinstance(c, str) else _num(c) for c in r])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


def _solver_config(cfg: RunConfig, problem: ProblemInstance) -> SolverConfig:
    base = SolverConfig(seed=cfg.seed)
    base = base.with_overrides(**problem.metadata.get("solver_defaults", {}))
    try:
        return base.with_overrides(**cfg.solver)
    except TypeError as exc:
        raise ConfigError(f"unknown solver option: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"invalid solver option: {exc}") from exc


def _setup(cfg: RunConfig):
    try:
        problem = problem_from_config(cfg.problem)
    except (ProblemError, KeyError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    sp = SmoothingParams(cfg.epsilon, cfg.gamma)
    scfg = _solver_config(cfg, problem)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return problem, sp, scfg, out


def _metadata(cfg: RunConfig, scfg: SolverConfig) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "smoothing_id": SMOOTHING_ID,
        "seeds": {"samples": cfg.seed, "solver": scfg.seed},
        "config": cfg.to_dict(),
        "solver_config": asdict(scfg),
    }


def _mixture_prob(problem, policy, D, sp) -> float:
    return float(sum(w * smooth_prob(problem, x, D, sp) for w, x in zip(policy.weights, policy.points)))


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------


def cmd_solve(cfg: RunConfig) -> int:
    problem, sp, scfg, out = _setup(cfg)
    a = cfg.threshold
    D = SampleSet.draw(problem, cfg.n_samples, cfg.seed)
    methods: dict[str, dict] = {}

    det = solve_deterministic(problem, a, D, sp, scfg)
    methods["deterministic"] = {
        "status": "ok" if det.feasible else "infeasible",
        "policy": {"kind": "deterministic", "x": det.point.tolist()},
        "objective": det.objective_value,
        "smooth_prob": det.extra["smooth_prob"],
        "feasible": det.feasible,
        "converged": det.converged,
        "diagnostic": det.diagnostic,
    }
    tp = solve_two_point(problem, a, D, sp, scfg, deterministic=det)
    methods["two_point"] = {
        "status": "ok" if tp.feasible else "infeasible",
        "policy": tp.policy.to_dict(),
        "objective": tp.objective,
        "smooth_prob": _mixture_prob(problem, tp.policy, D, sp),
        "feasible": tp.feasible,
        "converged": tp.converged,
        "diagnostic": tp.result.diagnostic,
    }
    if not cfg.skip_frontier:
        grid = default_alpha_grid(a, cfg.frontier_points)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", RuntimeWarning)
            frontier = build_frontier(problem, grid, D, sp, scfg, stop_at_infeasible=True)
        try:
            mix = mix_from_frontier(frontier, a)
            methods["frontier"] = {
                "status": "ok",
                "policy": mix.policy.to_dict(),
                "objective": mix.objective,
                "smooth_prob": _mixture_prob(problem, mix.policy, D, sp),
                "feasible": True,
                "converged": True,
                "diagnostic": "; ".join(str(w.message) for w in caught),
                "pair": list(mix.extra["pair"]),
            }
        except InfeasibleError as exc:
            dropped = "; ".join(str(w.message) for w in caught)
            methods["frontier"] = {"status": "infeasible", "diagnostic": f"{exc}; {dropped}"}
    sc = scenario_solve(problem, D, scfg)
    methods["scenario"] = {
        "status": "ok" if sc.converged else "infeasible",
        "policy": {"kind": "deterministic", "x": sc.point.tolist()},
        "objective": sc.objective_value,
        "smooth_prob": smooth_prob(problem, sc.point, D, sp),
        "feasible": sc.converged,
        "converged": sc.converged,
        "diagnostic": sc.diagnostic,
    }
    try:
        saa = saa_grid_solve(problem, cfg.alpha, D, cfg.saa_resolution)
        methods["saa"] = {
            "status": "ok",
            "policy": {"kind": "deterministic", "x": saa.point.tolist()},
            "objective": saa.objective_value,
            "smooth_prob": smooth_prob(problem, saa.point, D, sp),
            "feasible": True,
            "converged": True,
            "diagnostic": "",
        }
    except UnsupportedProblemError as exc:
        methods["saa"] = {"status": "unsupported", "diagnostic": str(exc)}
    except InfeasibleError as exc:
        methods["saa"] = {"status": "infeasible", "diagnostic": str(exc)}

    leq = bool(tp.objective <= det.objective_value + ORDERING_TOLERANCE)
    solution = _metadata(cfg, scfg)
    solution.update(problem=problem.name, methods=methods, two_point_leq_deterministic=leq)
    _write_json(out / "solution.json", solution)

    header = ["method", "status", "objective", "smooth_prob", "feasible", "converged", "weights", "support",
              "two_point_leq_deterministic"]
    rows = []
    for name, m in methods.items():
        pol = m.get("policy")
        if pol is not None:
            p = policy_from_dict(pol)
            weights = json.dumps([float(w) for w in p.weights])
            support = json.dumps(np.asarray(p.points).tolist())
        else:
            weights = support = ""
        rows.append([name, m["status"], m.get("objective"), m.get("smooth_prob"), m.get("feasible"),
                     m.get("converged"), weights, support, leq])
    _write_csv(out / "summary.csv", header, rows)
    logger.info("solve: two-point %.6g, deterministic %.6g", tp.objective, det.objective_value)
    if not tp.feasible:
        _error(out, "infeasible", f"no decision reaches smoothed probability {1 - a:g} on the sample set")
        return EXIT_INFEASIBLE
    return EXIT_OK


# ---------------------------------------------------------------------------
# study
# ---------------------------------------------------------------------------


def cmd_study(cfg: RunConfig, study: str) -> int:
    problem, sp, scfg, out = _setup(cfg)
    meta = _metadata(cfg, scfg)
    meta["study"] = study
    a = cfg.threshold
    if study == "fig2":
        D = SampleSet.draw(problem, cfg.n_samples, cfg.seed)
        rows = fig2_study(problem, a, [int(s) for s in cfg.s_list], D, sp, scfg)
        _write_csv(out / "fig2.csv", ["S", "objective", "slack"], [[r.S, r.objective, r.slack] for r in rows])
        svg.line_chart(
            [svg.Series("surrogate optimum", [r.S for r in rows], [r.objective for r in rows])],
            f"{problem.name}: optimum vs. number of support points", "S", "objective", out / "fig2.svg",
        )
        meta["rows"] = [asdict(r) for r in rows]
    elif study == "convergence":
        try:
            oracle = grid_two_point_oracle(problem, cfg.alpha)
        except ProblemError as exc:
            raise ConfigError(f"convergence study needs a closed-form oracle: {exc}") from exc
        rep = convergence_study(problem, cfg.alpha, cfg.n_list, cfg.eps_list, cfg.repetitions,
                                oracle.objective, oracle.policy, cfg.seed, scfg)
        _write_csv(
            out / "convergence.csv",
            ["N", "epsilon", "median_objective_error", "median_solution_distance", "repetitions"],
            [[r.N, r.epsilon, r.median_objective_error, r.median_solution_distance, r.repetitions] for r in rep.rows],
        )
        series = [
            svg.Series(f"epsilon = {eps:g}", [r.N for r in rep.rows if r.epsilon == eps], rep.errors(eps))
            for eps in cfg.eps_list
        ]
        svg.line_chart(series, f"{problem.name}: objective error vs. sample size", "N",
                       "median |objective - oracle|", out / "convergence.svg", logx=True, logy=True)
        meta.update(oracle_objective=oracle.objective, oracle_policy=oracle.policy.to_dict(),
                    rows=[asdict(r) for r in rep.rows])
    elif study == "feasibility-bound":
        if cfg.alpha_prime is None or not cfg.alpha_prime < cfg.alpha:
            raise ConfigError("feasibility-bound needs --alpha-prime below --alpha")
        try:
            rep = feasibility_bound_study(problem, cfg.alpha, cfg.alpha_prime, cfg.n_samples, cfg.trials, sp, scfg,
                                          cfg.seed, cfg.probe_count, cfg.reference_size)
        except ProblemError as exc:
            raise ConfigError(str(exc)) from exc
        header = ["N", "alpha", "alpha_prime", "R_estimate", "bound", "empirical_infeasible_fraction", "trials",
                  "binomial_slack", "holds"]
        _write_csv(out / "feasibility_bound.csv", header,
                   [[rep.N, rep.alpha, rep.alpha_prime, rep.R_estimate, rep.bound,
                     rep.empirical_infeasible_fraction, rep.trials, rep.binomial_slack, rep.holds]])
        meta["report"] = dict(asdict(rep), holds=rep.holds)
    elif study == "frontier":
        D = SampleSet.draw(problem, cfg.n_samples, cfg.seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            frontier = build_frontier(problem, default_alpha_grid(a, cfg.frontier_points), D, sp, scfg,
                                      stop_at_infeasible=True)
        mix = mix_from_frontier(frontier, a)
        _write_csv(
            out / "frontier.csv", ["alpha_tilde", "jstar", "risk", "level", "xstar"],
            [[e.alpha_tilde, e.jstar, e.risk, e.level, json.dumps(e.xstar.tolist())] for e in frontier.entries],
        )
        i, j = mix.extra["pair"]
        ents = frontier.entries
        chord = svg.Series("optimal chord", [ents[i].level, ents[j].level], [ents[i].jstar, ents[j].jstar],
                           dashed=True)
        svg.line_chart(
            [svg.Series("J*(threshold)", [e.alpha_tilde for e in ents], [e.jstar for e in ents], markers=False),
             chord,
             svg.Series("mixture at alpha", [a], [mix.objective])],
            f"{problem.name}: risk-cost frontier", "violation threshold", "optimal objective", out / "frontier.svg",
        )
        meta.update(policy=mix.policy.to_dict(), objective=mix.objective, pair=[i, j], nu=mix.extra["nu"],
                    degenerate=bool(i == j or min(mix.extra["nu"], 1.0 - mix.extra["nu"]) < DEGENERATE_WEIGHT))
    else:
        raise ConfigError(f"unknown study {study!r}")
    _write_json(out / f"{study.replace('-', '_')}.json", meta)
    return EXIT_OK


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------


def _load_policies(path: Path) -> tuple[dict, dict]:
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read policy file {path}: {exc}") from exc
    if "methods" in data:
        problem_cfg = data["config"]["problem"]
        policies = {k: m["policy"] for k, m in data["methods"].items() if "policy" in m}
    elif "policy" in data and "problem" in data:
        problem_cfg, policies = data["problem"], {"policy": data["policy"]}
    else:
        raise ConfigError("policy file needs 'methods' (solve output) or 'problem' and 'policy'")
    return problem_cfg, policies


def cmd_validate(policy_file: str, trials: int, seed: int, out_dir: str, method: str | None = None) -> int:
    problem_cfg, raw = _load_policies(Path(policy_file))
    if method is not None:
        if method not in raw:
            raise ConfigError(f"method {method!r} not in policy file (have {sorted(raw)})")
        raw = {method: raw[method]}
    if not raw:
        raise ConfigError("no usable policies in file")
    if trials < 100:
        raise ConfigError("trials must be >= 100")
    try:
        problem = problem_from_config(problem_cfg)
        policies = {k: policy_from_dict(v) for k, v in raw.items()}
    except (ProblemError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports = {k: monte_carlo_validate(problem, p, trials, seed) for k, p in policies.items()}
    header = ["method", "trials", "seed", "expected_cost", "cost_ci_halfwidth", "violation_probability",
              "violation_ci_halfwidth", "violation_ci_low", "violation_ci_high", "ci_method"]
    _write_csv(out / "validation.csv", header, [
        [k, r.trials, r.seed, r.expected_cost, r.cost_ci_halfwidth, r.violation_probability,
         r.violation_ci_halfwidth, r.violation_ci[0], r.violation_ci[1], r.ci_method]
        for k, r in reports.items()
    ])
    _write_json(out / "validation.json", {
        "schema_version": SCHEMA_VERSION,
        "smoothing_id": SMOOTHING_ID,
        "policy_file": str(policy_file),
        "problem": problem_cfg,
        "reports": {k: r.to_dict() for k, r in reports.items()},
    })
    params = problem.metadata.get("params")
    if params is not None and hasattr(params, "obstacles"):
        _trajectory_svg(problem, params, policies, trials, seed, out)
    return EXIT_OK


def _trajectory_svg(problem, params, policies, trials, seed, out: Path, shown: int = 200) -> None:
    from .quadrotor import batch_rollout

    name = "two_point" if "two_point" in policies else next(iter(policies))
    policy = policies[name]
    draws = monte_carlo_draws(problem, policy, trials, seed)
    k = min(shown, trials)
    paths, ok = [], []
    points = np.asarray(policy.points)
    for i in range(k):
        br = batch_rollout(params, points[draws.support_index[i]], draws.xi[i : i + 1], sensitivities=False)
        paths.append([(float(s[0]), float(s[2])) for s in br.states[0]])
        ok.append(not bool(draws.violated[i]))
    svg.trajectory_plot(paths, ok, params.obstacles, params.goal_center, params.goal_radius,
                        f"{problem.name}: {k} sampled trajectories ({name})", out / "trajectories.svg")


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _float_list(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _add_run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config (see docs/config.md); flags override it")
    p.add_argument("--builtin", help="built-in problem: example1, linear1d, quadrotor")
    p.add_argument("--alpha", type=float)
    p.add_argument("--alpha-prime", type=float)
    p.add_argument("--n-samples", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--multistarts", type=int)
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--frontier-points", type=int)
    p.add_argument("--saa-resolution", type=int)
    p.add_argument("--out")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ccpmo", description="Two-point decisions under chance constraints")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run every method on one problem")
    _add_run_args(p)
    p.add_argument("--skip-frontier", action="store_true", default=None)

    p = sub.add_parser("study", help="fig2 | convergence | feasibility-bound | frontier")
    p.add_argument("study", choices=["fig2", "convergence", "feasibility-bound", "frontier"])
    _add_run_args(p)
    p.add_argument("--s-list", type=_int_list)
    p.add_argument("--n-list", type=_int_list)
    p.add_argument("--eps-list", type=_float_list)
    p.add_argument("--repetitions", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--probe-count", type=int)
    p.add_argument("--reference-size", type=int)

    p = sub.add_parser("validate", help="Monte Carlo validation of stored policies")
    p.add_argument("--policy", required=True, help="solution.json from solve, or a hand-written policy file")
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--method", help="validate only this method")
    p.add_argument("--out", default="ccpmo_out")
    return parser


_FLAG_TO_FIELD = {
    "alpha": "alpha", "alpha_prime": "alpha_prime", "n_samples": "n_samples", "epsilon": "epsilon",
    "gamma": "gamma", "seed": "seed", "frontier_points": "frontier_points", "saa_resolution": "saa_resolution",
    "out": "out", "s_list": "s_list", "n_list": "n_list", "eps_list": "eps_list", "repetitions": "repetitions",
    "trials": "trials", "probe_count": "probe_count", "reference_size": "reference_size",
    "skip_frontier": "skip_frontier",
}


def run_config_from_args(args: argparse.Namespace) -> RunConfig:
    data: dict = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    known = {f.name for f in fields(RunConfig)}
    problem_keys = {"builtin", "problem", "domain", "uncertainty", "quadrotor"}
    nested = data.get("problem")
    problem = dict(nested) if isinstance(nested, dict) else {}
    problem.update({k: v for k, v in data.items() if k in problem_keys and k != "problem"})
    if isinstance(nested, str):
        problem["problem"] = nested
    unknown = set(data) - known - problem_keys
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kw = {k: v for k, v in data.items() if k in known and k != "problem"}
    if args.builtin:
        problem = {"builtin": args.builtin}
    for flag, name in _FLAG_TO_FIELD.items():
        v = getattr(args, flag, None)
        if v is not None:
            kw[name] = v
    solver = dict(kw.get("solver", {}))
    if args.multistarts is not None:
        solver["multistarts"] = args.multistarts
    if args.max_iterations is not None:
        solver["max_iterations"] = args.max_iterations
    kw["solver"] = solver
    if "alpha" not in kw:
        raise ConfigError("--alpha is required")
    try:
        return RunConfig(problem=problem, **kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _error(out: Path | None, kind: str, message: str) -> None:
    payload = {"schema_version": SCHEMA_VERSION, "error": kind, "message": message}
    print(json.dumps(payload), file=sys.stderr)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            _write_json(out / "error.json", payload)
        except OSError:
            pass


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out) if getattr(args, "out", None) else None
    try:
        if args.command == "validate":
            return cmd_validate(args.policy, args.trials, args.seed, args.out, args.method)
        cfg = run_config_from_args(args)
        out = Path(cfg.out)
        if args.command == "solve":
            return cmd_solve(cfg)
        return cmd_study(cfg, args.study)
    except ConfigError as exc:
        _error(out, "config", str(exc))
        return EXIT_CONFIG
    except InfeasibleError as exc:
        _error(out, "infeasible", str(exc))
        return EXIT_INFEASIBLE
    except (NonFiniteError, ProblemError, FloatingPointError, ValueError) as exc:
        _error(out, "solver", f"{type(exc).__name__}: {exc}")
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
