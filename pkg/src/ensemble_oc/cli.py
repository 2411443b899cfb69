"""Command line front end: ``ensemble-oc <command> --config run.ini``.

Exit codes: 0 success, 2 invalid configuration, 3 divergence, 4 failed check.
Every file written starts with ``# config {...}``, the resolved configuration
as JSON; passing such a file back as ``--config`` repeats the run exactly.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import RunConfig, load_config, validate
from .control import PiecewiseControl, TimeGrid, read_control_csv, write_control_csv
from .errors import CapabilityError, ConfigError, DivergenceError
from .gradient import fd_gradient
from .integrator import integrate_adjoint, integrate_forward, write_bundle_csv
from .lq import kalman_rank, solve_lq
from .measures import (
    Beta44Law,
    explicit_measure,
    make_rng,
    quantile_quadrature,
    sample_empirical,
    write_measure_csv,
)
from .objective import CostReport, cost_from_trajectories, write_cost_csv
from .optimizers import OptimizerConfig, pmp_residual, run_iterative_pmp, run_projected_gradient
from .gradient import assemble_gradient
from .problems import builtin_problem

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_CHECK = 0, 2, 3, 4

#: the check suite uses exact rational rank up to this many atoms
EXACT_RANK_MAX_N = 30


# construction from a validated configuration

def build_problem(cfg: RunConfig):
    p = cfg["problem"]
    params = {}
    if p["name"] == "logistic1d":
        if p["x0"] is not None:
            params["x0"] = p["x0"][0]
        if p["y_tar"] is not None:
            params["y_tar"] = p["y_tar"][0]
    else:
        for key in ("x0", "y_tar"):
            if p[key] is not None:
                params[key] = p[key]
        if p["name"] == "generic-lti":
            params.update({key: p[key] for key in ("A0", "A1", "B0", "B1")})
    return builtin_problem(p["name"], **params)


def build_measure(cfg: RunConfig, N: int | None = None, seed: int | None = None):
    m = cfg["measure"]
    N = m["N"] if N is None else N
    seed = m["seed"] if seed is None else seed
    if m["kind"] == "empirical":
        return sample_empirical(Beta44Law(), N, seed)
    if m["kind"] == "quantile":
        return quantile_quadrature(Beta44Law(), N)
    return explicit_measure(m["thetas"], m["weights"])


def build_test_measure(cfg: RunConfig):
    """Fresh parameters drawn from the law, independent of the training measure."""
    o = cfg["optimize"]
    return sample_empirical(Beta44Law(), o["n_test"], o["test_seed"])


def build_grid(cfg: RunConfig) -> TimeGrid:
    d = cfg["discretization"]
    return TimeGrid(d["M"], d["S"])


def initial_control(cfg: RunConfig, problem) -> PiecewiseControl:
    grid = build_grid(cfg)
    c = cfg["control"]
    if c["file"] is not None:
        try:
            u = read_control_csv(c["file"], S=grid.S)
        except (OSError, ValueError) as err:
            raise cfg.error("control", "file", f"cannot read control: {err}") from err
        if u.M != grid.M or u.k != problem.k:
            raise cfg.error("control", "file",
                            f"control has M={u.M}, k={u.k}; expected M={grid.M}, k={problem.k}")
        return u
    if c["value"] is not None:
        return PiecewiseControl.constant(grid, c["value"])
    return PiecewiseControl.zeros(grid, problem.k)


def optimizer_config(cfg: RunConfig) -> OptimizerConfig:
    o = cfg["optimize"]
    return OptimizerConfig(gamma0=o["gamma0"], tau=o["tau"], c=o["c"], max_iter=o["max_iter"],
                           grad_tol=o["grad_tol"], correction=o["correction"])


def run_method(method: str, problem, measure, u0, beta, ocfg):
    runner = run_projected_gradient if method == "grad" else run_iterative_pmp
    return runner(problem, measure, u0, beta, ocfg)


def terminal_errors(problem, measure, u) -> np.ndarray:
    """Distance of every member's end point to its target."""
    ends = integrate_forward(problem, measure, u).terminal()
    return np.linalg.norm(ends - problem.target(measure.thetas), axis=1)


# output helpers

class Writer:
    """Creates files in the output directory, each headed by the config line."""

    def __init__(self, cfg: RunConfig):
        self.header = cfg.header()
        self.full_grid = cfg["output"]["full_grid"]
        self.dir = Path(cfg["output"]["dir"])
        self.dir.mkdir(parents=True, exist_ok=True)
        self.written = []

    def path(self, name):
        p = self.dir / name
        self.written.append(p)
        return p

    def rows(self, name, header, rows):
        with self.path(name).open("w", newline="") as fh:
            fh.write(f"# {self.header}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(v) for v in r])

    def control(self, name, u):
        write_control_csv(self.path(name), u, self.header)

    def measure(self, name, m):
        write_measure_csv(self.path(name), m, self.header)

    def bundle(self, name, b, first_index=0):
        write_bundle_csv(self.path(name), b, self.full_grid, self.header, first_index)

    def cost(self, name, rep):
        write_cost_csv(self.path(name), rep, self.header)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


# commands

def cmd_simulate(cfg: RunConfig, out: Writer) -> int:
    problem = build_problem(cfg)
    measure = build_measure(cfg)
    u = initial_control(cfg, problem)
    traj = integrate_forward(problem, measure, u)
    adj = integrate_adjoint(problem, measure, u, traj)
    out.measure("measure.csv", measure)
    out.control("control.csv", u)
    out.bundle("trajectories.csv", traj)
    out.bundle("costates.csv", adj)
    width = len(str(measure.N - 1))
    for j in range(measure.N):
        member = type(traj)(traj.grid, traj.thetas[j:j + 1], traj.states[j:j + 1])
        out.bundle(f"trajectory_{j:0{width}d}.csv", member, first_index=j)
    beta = cfg["optimize"]["beta"]
    if beta is not None:
        out.cost("cost.csv", cost_from_trajectories(problem, measure, u, beta, traj))
    print(f"simulated {measure.N} members on M={u.M}, S={u.grid.S}; "
          f"{len(out.written)} files in {out.dir}")
    return EXIT_OK


def cmd_optimize(cfg: RunConfig, out: Writer) -> int:
    problem = build_problem(cfg)
    measure = build_measure(cfg)
    o = cfg["optimize"]
    method, beta = o["method"], o["beta"]
    u0 = initial_control(cfg, problem)
    trace = run_method(method, problem, measure, u0, beta, optimizer_config(cfg))
    adj = integrate_adjoint(problem, measure, trace.u, trace.trajectories)

    trace.write_csv(out.path(f"trace_{method}.csv"), out.header)
    out.control(f"control_{method}.csv", trace.u)
    out.bundle(f"trajectories_{method}.csv", trace.trajectories)
    out.bundle(f"costates_{method}.csv", adj)
    out.cost(f"cost_{method}.csv", trace.report)
    out.measure("measure.csv", measure)

    train_err = terminal_errors(problem, measure, trace.u)
    summary = {
        "method": method,
        "iterations": len(trace.records) - 1,
        "accepted": trace.n_accepted,
        "stop_reason": trace.stop_reason,
        "cost": trace.report.total,
        "grad_norm": trace.grad_norm,
        "monotone": trace.is_monotone(),
        "train_mean_err": float(np.sum(measure.alphas * train_err)),
    }
    if o["n_test"] > 0:
        test = build_test_measure(cfg)
        ends = integrate_forward(problem, test, trace.u).terminal()
        err = np.linalg.norm(ends - problem.target(test.thetas), axis=1)
        out.rows(f"validation_{method}.csv",
                 ["j", "theta"] + [f"x{i + 1}" for i in range(problem.n)] + ["err"],
                 ([j, float(test.thetas[j, 0])] + [float(v) for v in ends[j]] + [float(err[j])]
                  for j in range(test.N)))
        summary["test_mean_err"] = float(np.mean(err))
    if problem.is_linear:
        sol = solve_lq(problem, measure, trace.u.M, beta, S=trace.u.grid.S)
        summary["oracle_cost"] = sol.cost_opt
        summary["cost_ratio"] = trace.report.total / sol.cost_opt
        summary["u_dist"] = (trace.u - sol.u_opt).norm()
    out.rows(f"summary_{method}.csv", list(summary), [list(summary.values())])
    for key, value in summary.items():
        print(f"{key:>15}: {value}")
    return EXIT_OK


def cmd_oracle(cfg: RunConfig, out: Writer) -> int:
    problem = build_problem(cfg)
    measure = build_measure(cfg)
    grid = build_grid(cfg)
    beta = cfg["optimize"]["beta"]
    sol = solve_lq(problem, measure, grid.M, beta, S=grid.S)
    reg = 0.5 * beta * sol.u_opt.norm() ** 2
    out.control("oracle_control.csv", sol.u_opt)
    out.cost("oracle_cost.csv", CostReport(sol.cost_opt, sol.cost_opt - reg, reg, None))
    out.rows("oracle_summary.csv", ["cost_opt", "u_norm", "gram_condition", "residual"],
             [[sol.cost_opt, sol.u_opt.norm(), sol.gram_condition, sol.residual]])
    out.measure("measure.csv", measure)
    print(f"cost_opt {sol.cost_opt!r}  |u_opt| {sol.u_opt.norm():.6g}  "
          f"cond {sol.gram_condition:.3g}")
    return EXIT_OK


def _minimize(cfg, solver, problem, measure):
    """Minimizer on the configured grid by the chosen solver; returns (u, cost)."""
    grid = build_grid(cfg)
    beta = cfg["optimize"]["beta"]
    if solver == "oracle":
        sol = solve_lq(problem, measure, grid.M, beta, S=grid.S)
        return sol.u_opt, sol.cost_opt
    u0 = initial_control(cfg, problem)
    trace = run_method(solver, problem, measure, u0, beta, optimizer_config(cfg))
    return trace.u, trace.report.total


def sweep(cfg: RunConfig):
    """Rows ``(N, seed, err, cost)`` of the N-sweep against the reference size."""
    problem = build_problem(cfg)
    s, m = cfg["sweep"], cfg["measure"]
    ref_N = s["reference_N"] if s["reference_N"] is not None else max(s["N_list"])
    seeds = [m["seed"]] if m["kind"] == "quantile" else [
        (m["seed"] + i) % 2**64 for i in range(s["seeds"])]
    rows = []
    for seed in seeds:
        u_ref, cost_ref = _minimize(cfg, s["solver"], problem, build_measure(cfg, ref_N, seed))
        for N in s["N_list"]:
            if N == ref_N:
                u_N, cost = u_ref, cost_ref
            else:
                u_N, cost = _minimize(cfg, s["solver"], problem, build_measure(cfg, N, seed))
            rows.append((N, seed, (u_N - u_ref).norm(), cost))
    return rows


def cmd_sweep_n(cfg: RunConfig, out: Writer) -> int:
    rows = sweep(cfg)
    out.rows("sweep_detail.csv", ["N", "seed", "err", "cost"], rows)
    summary = []
    for N in cfg["sweep"]["N_list"]:
        sel = [r for r in rows if r[0] == N]
        summary.append((N, float(np.median([r[2] for r in sel])),
                        float(np.median([r[3] for r in sel]))))
    out.rows("sweep.csv", ["N", "err", "cost"], summary)
    for N, err, cost in summary:
        print(f"N={N:>6}  err {err:.6e}  cost {cost:.6e}")
    return EXIT_OK


def _random_control(cfg, problem) -> PiecewiseControl:
    grid = build_grid(cfg)
    rng = make_rng(cfg["check"]["control_seed"])
    return PiecewiseControl(grid, rng.standard_normal((grid.M, problem.k)))


def gradient_check(cfg: RunConfig):
    """Adjoint gradient and finite differences at a seeded random control."""
    problem = build_problem(cfg)
    measure = build_measure(cfg)
    beta = cfg["optimize"]["beta"]
    u = _random_control(cfg, problem)
    traj = integrate_forward(problem, measure, u)
    adj = integrate_adjoint(problem, measure, u, traj)
    g = assemble_gradient(problem, measure, u, beta, traj, adj).delta_u
    fd = fd_gradient(problem, measure, u, beta, epsilon=cfg["check"]["fd_epsilon"])
    rel = (g - fd).norm() / fd.norm()
    return u, g, fd, rel


def cmd_check_grad(cfg: RunConfig, out: Writer) -> int:
    u, g, fd, rel = gradient_check(cfg)
    k = u.k
    out.rows("gradcheck.csv",
             ["t"] + [f"adj{i + 1}" for i in range(k)] + [f"fd{i + 1}" for i in range(k)],
             ([l / u.M] + list(g.values[l]) + list(fd.values[l]) for l in range(u.M)))
    ok = rel <= cfg["check"]["grad_threshold"]
    # entrywise errors relative to the largest finite-difference entry
    entry = np.abs(g.values - fd.values) / np.abs(fd.values).max()
    print(f"entrywise relative error: max {entry.max():.3e}, mean {entry.mean():.3e}")
    print(f"relative L2 distance {rel:.3e} (threshold {cfg['check']['grad_threshold']:g}): "
          f"{'pass' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK


def cmd_residual(cfg: RunConfig, out: Writer) -> int:
    problem = build_problem(cfg)
    measure = build_measure(cfg)
    beta = cfg["optimize"]["beta"]
    c = cfg["control"]
    if c["file"] is not None or c["value"] is not None:
        u, source = initial_control(cfg, problem), "configured control"
    else:
        u0 = initial_control(cfg, problem)
        trace = run_method(cfg["optimize"]["method"], problem, measure, u0, beta,
                           optimizer_config(cfg))
        u, source = trace.u, f"{trace.method} result ({trace.stop_reason})"
    res = {rule: pmp_residual(problem, measure, u, beta, rule=rule) for rule in ("interval", "node")}
    out.rows("residual.csv", ["rule", "residual"], list(res.items()))
    ok = res["interval"] <= cfg["check"]["residual_threshold"]
    print(f"{source}: residual {res['interval']:.3e} (left-node rule {res['node']:.3e}): "
          f"{'pass' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK


def check_suite(cfg: RunConfig):
    """Rows ``(name, status, detail)``; status is ``pass``, ``FAIL`` or ``info``."""
    problem = build_problem(cfg)
    measure = build_measure(cfg)
    ch, o = cfg["check"], cfg["optimize"]
    beta = o["beta"]
    rows = []

    _, _, _, rel = gradient_check(cfg)
    rows.append(("gradient", "pass" if rel <= ch["grad_threshold"] else "FAIL",
                 f"adjoint vs finite differences {rel:.3e} <= {ch['grad_threshold']:g}"))

    trace = run_method(o["method"], problem, measure, initial_control(cfg, problem), beta,
                       optimizer_config(cfg))
    rows.append(("monotone", "pass" if trace.is_monotone() else "FAIL",
                 f"{trace.method}: {trace.n_accepted} accepted steps of {len(trace.records) - 1}"))

    res = pmp_residual(problem, measure, trace.u, beta)
    if trace.stop_reason == "grad_tol":
        rows.append(("residual", "pass" if res <= ch["residual_threshold"] else "FAIL",
                     f"{res:.3e} <= {ch['residual_threshold']:g} at grad_tol {o['grad_tol']:g}"))
    else:
        rows.append(("residual", "info", f"{res:.3e}; run not converged to grad_tol"))

    if problem.is_linear:
        sol = solve_lq(problem, measure, trace.u.M, beta, S=trace.u.grid.S)
        ratio = trace.report.total / sol.cost_opt
        rows.append(("oracle", "pass" if ratio <= 1.0 + ch["oracle_rel_tol"] else "FAIL",
                     f"cost / cost_opt = {ratio:.6f} <= {1.0 + ch['oracle_rel_tol']:g}"))
        distinct = len(np.unique(measure.thetas, axis=0))
        exact = measure.N <= EXACT_RANK_MAX_N
        rank = kalman_rank(measure, problem, exact=exact)
        full = problem.n * measure.N
        note = "full" if rank == full else f"deficient ({distinct} distinct atoms)"
        if not exact:
            note += "; floating-point rank is unreliable for many close atoms"
        kind = "exact" if exact else "numerical"
        rows.append(("kalman", "info", f"{kind} rank {rank} of {full}: {note}"))
    else:
        rows.append(("oracle", "info", "skipped: problem is not linear"))
        rows.append(("kalman", "info", "skipped: problem is not linear"))
    return rows


def cmd_check(cfg: RunConfig, out: Writer) -> int:
    rows = check_suite(cfg)
    out.rows("check.csv", ["check", "status", "detail"], rows)
    width = max(len(r[0]) for r in rows)
    for name, status, detail in rows:
        print(f"{name:<{width}}  {status:<4}  {detail}")
    failed = [r for r in rows if r[1] == "FAIL"]
    print(f"{len(failed)} failed" if failed else "all checks passed")
    return EXIT_CHECK if failed else EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "optimize": cmd_optimize,
    "oracle": cmd_oracle,
    "sweep-n": cmd_sweep_n,
    "check-grad": cmd_check_grad,
    "residual": cmd_residual,
    "check": cmd_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ensemble-oc",
                                     description="Optimal control of ensembles of affine-control systems.")
    parser.add_argument("command", choices=list(COMMANDS))
    parser.add_argument("--config", help="INI file, or an output file of an earlier run")
    parser.add_argument("--out", help="output directory (overrides [output] dir)")
    parser.add_argument("--full-grid", action="store_true", help="write every RK4 substep")
    parser.add_argument("--no-correction", action="store_true",
                        help="disable the costate correction of the maximum-principle sweep")
    parser.add_argument("--method", choices=cfgmod.METHODS)
    parser.add_argument("--seed", help="seed of the sampled measure (unsigned 64-bit)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config)
    overrides = {}
    if args.out is not None:
        overrides["output.dir"] = args.out
    if args.full_grid:
        overrides["output.full_grid"] = True
    if args.no_correction:
        overrides["optimize.correction"] = False
    if args.method is not None:
        overrides["optimize.method"] = args.method
    if args.seed is not None:
        try:
            overrides["measure.seed"] = cfgmod._u64(args.seed)
        except ValueError as err:
            raise ConfigError(f"--seed: {err}", key="seed") from err
    if overrides:
        cfg = cfg.with_overrides(**overrides)
    return validate(cfg, args.command)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, Writer(cfg))
    except (ConfigError, CapabilityError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as err:
        print(f"diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
