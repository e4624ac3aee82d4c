"""Command-line entry point: configuration, orchestration and CSV emission.

Three subcommands:

  simulate   integrate paths from stationary starts and dump trajectory CSVs
  gradient   run both gradient routes for one test function at one point
  verify     run the full verification harness and write a consolidated report

Configuration is a strict INI file (unknown sections or keys are rejected)
with sections [problem], [simulation], [inequality] and [output]; the
--seed/--out/--problem/--threads flags override individual entries.  Exit
codes are stable: 0 success, 1 at least one verification check failed,
2 configuration error, 3 runtime or numeric failure.  All emitted files are
deterministic functions of the configuration and seed.
"""
from __future__ import annotations

import argparse
import configparser
import math
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import engine
from .control import HorizonPolicy, build_control, gronwall_sweep, trace_moment_check
from .errors import (
    ConfigError,
    DegeneracyError,
    DivflowError,
    EvaluationError,
    IntegrationError,
    PolicyError,
)
from .estimator import flow_summary, ibp_from_summary
from .functions import TestFunction, battery_for, by_name, coordinate, shifted
from .model import TestProblem, consistency_report, make_problem
from .norms import (
    MomentTestConfig,
    check_gradient_inequality,
    check_hessian_inequality,
    decay_check,
    exp_integrability,
    moment_bound_check,
    operator_symmetry_check,
    r_exponent,
    stationarity_check,
)
from .sde import StationaryEnsemble, WienerGrid, sample_stationary, simulate_path
from .variational import drift_jacobian_path, fundamental_matrix, theta_flow

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

_SCHEMA = {
    "problem": {"tag": str, "h": float},
    "simulation": {
        "dt": float,
        "horizon": float,
        "paths": int,
        "seed": int,
        "r_guard": float,
    },
    "inequality": {
        "p": float,
        "q": float,
        "gamma0": float,
        "t0": str,
        "ensemble": int,
    },
    "output": {"dir": str},
}

_DEFAULTS = {
    "tag": "OU1D",
    "dt": 1.0e-3,
    "horizon": 1.0,
    "paths": 20000,
    "seed": 2026,
    "r_guard": engine.DEFAULT_R_GUARD,
    "p": 2.0,
    "q": 4.0,
    "t0": "auto",
    "ensemble": 40000,
    "dir": "out",
}

# Fixed offsets keep the random streams of independent checks disjoint.
_SEED_TAGS = {
    "ensemble": 11,
    "simulate": 13,
    "gradient": 17,
    "stationarity": 19,
    "control": 23,
    "gronwall": 29,
    "trace": 31,
    "decay": 37,
    "moment": 41,
}


def _fmt(value: float) -> str:
    return f"{value:.12g}"


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment parameters; see the README for the file format."""

    tag: str
    problem_params: dict
    dt: float
    horizon: float
    paths: int
    seed: int
    r_guard: float
    p: float
    q: float
    gamma0: Optional[float]  # None: use the problem default
    t0: str | float  # "auto" or a positive float
    ensemble: int
    out_dir: str
    threads: int = 1

    @property
    def r(self) -> float:
        return r_exponent(self.p, self.q)

    def policy_for(self, problem: TestProblem, t0: Optional[float] = None) -> HorizonPolicy:
        gamma0 = self.gamma0 if self.gamma0 is not None else problem.gamma0_default
        if t0 is None:
            if isinstance(self.t0, str):
                raise ConfigError("t0 is 'auto'; resolve it before building a policy")
            t0 = float(self.t0)
        return HorizonPolicy(t0=t0, gamma0=gamma0, r=self.r)


def parse_config(path: str | Path, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Read and validate the INI configuration, applying CLI overrides."""
    parser = configparser.ConfigParser()
    read = parser.read(str(path))
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    values: dict = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser[section].items():
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            caster = _SCHEMA[section][key]
            try:
                values[key] = caster(raw)
            except ValueError:
                raise ConfigError(f"bad value {raw!r} for {section}.{key}") from None
    overrides = overrides or {}
    for key, val in overrides.items():
        if val is not None:
            values[key] = val

    tag = str(values.get("tag", _DEFAULTS["tag"])).upper()
    problem_params = {}
    if "h" in values:
        if tag != "ROT2D":
            raise ConfigError("parameter 'h' applies to ROT2D only")
        problem_params["h"] = values["h"]
    dt = float(values.get("dt", _DEFAULTS["dt"]))
    horizon = float(values.get("horizon", _DEFAULTS["horizon"]))
    paths = int(values.get("paths", _DEFAULTS["paths"]))
    seed = int(values.get("seed", _DEFAULTS["seed"]))
    r_guard = float(values.get("r_guard", _DEFAULTS["r_guard"]))
    p = float(values.get("p", _DEFAULTS["p"]))
    q = float(values.get("q", _DEFAULTS["q"]))
    gamma0 = float(values["gamma0"]) if "gamma0" in values else None
    t0_raw = str(values.get("t0", _DEFAULTS["t0"])).strip()
    t0: str | float
    if t0_raw.lower() == "auto":
        t0 = "auto"
    else:
        try:
            t0 = float(t0_raw)
        except ValueError:
            raise ConfigError(f"t0 must be 'auto' or a number, got {t0_raw!r}") from None
    ensemble = int(values.get("ensemble", _DEFAULTS["ensemble"]))
    out_dir = str(values.get("dir", _DEFAULTS["dir"]))
    threads = int(values.get("threads", 1))

    if dt <= 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    if horizon <= 0:
        raise ConfigError(f"horizon must be positive, got {horizon}")
    if paths < 1 or ensemble < 1:
        raise ConfigError("paths and ensemble must be positive")
    if not (1.0 <= p < q):
        raise ConfigError(f"need 1 <= p < q, got p={p}, q={q}")
    cfg = ExperimentConfig(
        tag=tag,
        problem_params=problem_params,
        dt=dt,
        horizon=horizon,
        paths=paths,
        seed=seed,
        r_guard=r_guard,
        p=p,
        q=q,
        gamma0=gamma0,
        t0=t0,
        ensemble=ensemble,
        out_dir=out_dir,
        threads=threads,
    )
    cfg.r  # validates r >= 2
    if not isinstance(cfg.t0, str):
        problem = make_problem(tag, **problem_params)
        cfg.policy_for(problem)  # validates t0 <= t_star
    return cfg


def _build_problem(config: ExperimentConfig) -> TestProblem:
    return make_problem(config.tag, **config.problem_params)


def _build_ensemble(config: ExperimentConfig, problem: TestProblem) -> StationaryEnsemble:
    seed = config.seed + _SEED_TAGS["ensemble"]
    if problem.stationary_sampler is not None:
        return sample_stationary(problem, config.ensemble, method="exact", seed=seed)
    return sample_stationary(problem, config.ensemble, method="langevin", seed=seed)


def resolve_t0(
    config: ExperimentConfig,
    problem: TestProblem,
    ensemble: StationaryEnsemble,
    battery: Sequence[TestFunction],
) -> float:
    """Pick the control horizon: fixed value, or the balanced-form minimiser.

    For "auto", scan 8 log-spaced horizons in (0, t_star] and pick the one
    minimising the battery-average of sqrt(t0) ||G f||_q + ||f||_q / sqrt(t0).
    """
    gamma0 = config.gamma0 if config.gamma0 is not None else problem.gamma0_default
    t_star = gamma0 / config.r
    if not isinstance(config.t0, str):
        return float(config.t0)
    from .model import apply_generator
    from .norms import lp_norm

    grid = np.exp(np.linspace(math.log(t_star / 100.0), math.log(t_star), 8))
    pts = ensemble.points
    gen_norms = []
    f_norms = []
    for f in battery:
        gen_norms.append(lp_norm(np.abs(apply_generator(problem.model, f, pts)), config.q, ensemble).value)
        f_norms.append(lp_norm(np.abs(f.value(pts)), config.q, ensemble).value)
    scores = [
        float(np.mean([math.sqrt(t) * g + fv / math.sqrt(t) for g, fv in zip(gen_norms, f_norms)]))
        for t in grid
    ]
    t0 = float(grid[int(np.argmin(scores))])
    # Snap onto the simulation grid without crossing the admissible range.
    steps = max(1, int(round(t0 / config.dt)))
    while steps * config.dt > t_star and steps > 1:
        steps -= 1
    return steps * config.dt


def _write_lines(path: Path, lines: Sequence[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _csv_header(config: ExperimentConfig, extra: Optional[dict] = None) -> list[str]:
    meta = {"problem": config.tag, "seed": config.seed, "dt": _fmt(config.dt)}
    meta.update(extra or {})
    return [f"# {key}={val}" for key, val in meta.items()]


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(config: ExperimentConfig) -> int:
    """Integrate config.paths trajectories and write one CSV per path."""
    problem = _build_problem(config)
    model = problem.model
    d = model.dim
    out = Path(config.out_dir)
    n = engine.steps_for(config.horizon, config.dt)

    ensemble = sample_stationary(
        problem,
        config.paths,
        method="exact" if problem.stationary_sampler is not None else "langevin",
        seed=config.seed + _SEED_TAGS["simulate"],
    )
    coord_cols = [f"x_{j + 1}" for j in range(d)]
    failures: list[tuple[int, int]] = []
    stats_rows = []
    for i in range(config.paths):
        noise = WienerGrid.generate(config.seed, i, n, config.dt, d)
        traj = simulate_path(
            model, ensemble.points[i], config.horizon, config.dt, noise, r_guard=config.r_guard
        )
        lines = _csv_header(config, {"path_index": i, "horizon": _fmt(config.horizon)})
        lines.append(",".join(["t"] + coord_cols + ["exited"]))
        last = traj.states.shape[0] - 1
        for k in range(traj.states.shape[0]):
            flag = 1 if (traj.exited and k == last) else 0
            lines.append(
                ",".join([_fmt(traj.times[k])] + [_fmt(v) for v in traj.states[k]] + [str(flag)])
            )
        _write_lines(out / f"path_{i:05d}.csv", lines)
        stats_rows.append(
            f"{i},{int(traj.exited)},{traj.exit_step if traj.exited else ''}"
        )
        if traj.exited:
            failures.append((i, traj.exit_step))
    stats = _csv_header(config) + ["path_index,exited,exit_step"] + stats_rows
    _write_lines(out / "exit_stats.csv", stats)
    if failures:
        i, step = failures[0]
        print(
            f"error: {len(failures)} path(s) hit the radius guard "
            f"(first: path {i} at step {step}); dt likely too large",
            file=sys.stderr,
        )
        return EXIT_RUNTIME
    print(f"wrote {config.paths} trajectories to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# gradient
# ---------------------------------------------------------------------------


def _parse_point(text: str, dim: int):
    try:
        vals = [float(tok) for tok in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"cannot parse point {text!r}") from None
    if len(vals) != dim:
        raise ConfigError(f"point {text!r} has {len(vals)} coordinates, expected {dim}")
    return np.asarray(vals)


def cmd_gradient(
    config: ExperimentConfig, f_id: str, x_text: str, negate_control: bool = False
) -> int:
    """Run both gradient routes plus the identity check for one function."""
    problem = _build_problem(config)
    model = problem.model
    battery = battery_for(problem)
    f = by_name(battery, f_id)
    x = _parse_point(x_text, model.dim)
    ensemble = _build_ensemble(config, problem)
    t0 = resolve_t0(config, problem, ensemble, battery)
    policy = config.policy_for(problem, t0=t0)

    summary = flow_summary(
        model,
        x,
        policy.t0,
        config.dt,
        config.paths,
        seed=config.seed + _SEED_TAGS["gradient"],
        t0=policy.t0,
        negate_control=negate_control,
        r_guard=config.r_guard,
        threads=config.threads,
    )
    report = ibp_from_summary(f, summary)

    out = Path(config.out_dir)
    lines = _csv_header(config, {"f": f.name, "x": " ".join(_fmt(v) for v in x)})
    lines.append("problem,f,x,route,t0,component,estimate,se,N,seed")
    x_str = ";".join(_fmt(v) for v in x)

    def emit(route: str, est, se):
        for j in range(model.dim):
            lines.append(
                ",".join(
                    [
                        config.tag,
                        f.name,
                        x_str,
                        route,
                        _fmt(policy.t0),
                        str(j),
                        _fmt(est[j]),
                        _fmt(se[j]),
                        str(config.paths),
                        str(config.seed),
                    ]
                )
            )

    emit("frechet", report.frechet.estimate, report.frechet.std_error)
    emit("malliavin", report.malliavin.estimate, report.malliavin.std_error)
    emit("residual", report.residual, report.residual_se)
    lines.append(f"# identity_check={'pass' if report.passed else 'FAIL'}")
    _write_lines(out / "gradient.csv", lines)
    print(
        f"{config.tag} {f.name} at {x_str}: identity check "
        f"{'pass' if report.passed else 'FAIL'}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _reference_point(tag: str, dim: int):
    refs = {"OU1D": [0.3], "ROT2D": [0.2, -0.1], "VARH2D": [0.2, -0.1], "DW1D": [0.0]}
    return np.asarray(refs.get(tag, [0.0] * dim))


def _decay_plan(tag: str) -> tuple[tuple[float, ...], float]:
    if tag == "DW1D":
        return (0.0, 2.0, 10.0), 1.0e-2
    return (0.0, 1.0, 5.0), 1.0e-2


def _mu_mean_1d(problem: TestProblem, f: TestFunction) -> float:
    """Quadrature mean of f under the invariant law (one-dimensional models)."""
    from scipy.integrate import quad

    model = problem.model
    dens = lambda s: math.exp(-float(model.potential(np.array([s]))))
    z = model.normalizer
    if z is None:
        z, _ = quad(dens, -12.0, 12.0)
    num, _ = quad(lambda s: float(f.value(np.array([s]))) * dens(s), -12.0, 12.0)
    return num / z


def run_verify(config: ExperimentConfig, negate_control: bool = False) -> tuple[list[CheckResult], dict]:
    """Run every check on the configured problem; returns results and artifacts."""
    problem = _build_problem(config)
    model = problem.model
    battery = battery_for(problem)
    ensemble = _build_ensemble(config, problem)
    t0 = resolve_t0(config, problem, ensemble, battery)
    policy = config.policy_for(problem, t0=t0)
    seed = config.seed
    results: list[CheckResult] = []
    artifacts: dict = {"policy": policy}

    # 1. structural coefficient identities on sampled points
    rep = consistency_report(model, ensemble.points[:100])
    ok = max(rep.values()) < 1.0e-6
    results.append(
        CheckResult("coefficients", ok, f"max structural deviation {max(rep.values()):.2e}")
    )

    # 2. operator symmetry on six battery pairs
    pairs = [
        (battery[0], battery[0]),
        (battery[0], battery[1]),
        (battery[1], battery[2]),
        (battery[2], battery[3]),
        (battery[3], battery[0]),
        (battery[1], battery[1]),
    ]
    sym = operator_symmetry_check(model, pairs, ensemble)
    worst = max(
        max(abs(r.sym_residual) / (3 * r.sym_se + 1e-300), abs(r.antisym_residual) / (3 * r.antisym_se + 1e-300))
        for r in sym.rows
    )
    results.append(CheckResult("operator_symmetry", sym.passed, f"worst residual {worst:.2f} x 3SE"))
    artifacts["symmetry"] = sym

    # 3. stationarity of ensemble averages along the flow
    stat = stationarity_check(
        model,
        battery[:6],
        ensemble,
        t_grid=(1.0, 5.0),
        n_paths=min(config.paths, 8000),
        dt=5.0e-3,
        seed=seed + _SEED_TAGS["stationarity"],
    )
    results.append(
        CheckResult("stationarity", stat.passed, f"{len(stat.rows)} (f, t) cells at 3 SE")
    )

    # 4. control discrepancy: vanishing after the horizon, two routes agree
    dt_flow = 5.0e-4
    const_coeff = config.tag in ("OU1D", "ROT2D")
    route_tol = 1.0e-6 if const_coeff else 1.0e-4
    theta_max = 0.0
    mismatch_max = 0.0
    n_flow = engine.steps_for(2.0 * policy.t0, dt_flow)
    for k in range(3):
        noise = WienerGrid.generate(seed + _SEED_TAGS["control"], k, n_flow, dt_flow, model.dim)
        traj = simulate_path(
            model, ensemble.points[k], 2.0 * policy.t0, dt_flow, noise, r_guard=config.r_guard
        )
        jac = drift_jacobian_path(model, traj)
        c = fundamental_matrix(jac)
        control = build_control(c, policy)
        if negate_control:
            control = replace(
                control, values=-control.values, boundary=-control.boundary
            )
        theta = theta_flow(jac, control)
        n0 = control.horizon_index
        theta_max = max(theta_max, float(np.max(np.abs(theta.ode[n0:]))))
        mismatch_max = max(mismatch_max, theta.route_mismatch)
    ok = theta_max < 1.0e-5 and mismatch_max < route_tol
    results.append(
        CheckResult(
            "control_discrepancy",
            ok,
            f"max |T| after horizon {theta_max:.2e}, route mismatch {mismatch_max:.2e}",
        )
    )

    # 5. pathwise growth bound
    slack, gap = gronwall_sweep(
        model,
        ensemble.points[: min(1000, ensemble.count)],
        policy,
        dt=config.dt,
        seed=seed + _SEED_TAGS["gronwall"],
    )
    results.append(
        CheckResult("gronwall", slack <= 1.0e-4, f"max slack {slack:.2e}, max gap {gap:.2e}")
    )

    # 6. trace moment estimate
    sub = StationaryEnsemble(
        points=ensemble.points[: min(2000, ensemble.count)],
        provenance=ensemble.provenance,
        diagnostics=ensemble.diagnostics,
        n_chains=ensemble.n_chains,
    )
    trace = trace_moment_check(
        model,
        sub,
        policy,
        paths_per_point=2,
        dt=config.dt,
        seed=seed + _SEED_TAGS["trace"],
        tag=config.tag,
    )
    results.append(
        CheckResult(
            "trace_moment",
            trace.passed,
            f"lhs {trace.lhs:.4f} <= rhs {trace.rhs:.4f} (margin {trace.margin:.4f})",
        )
    )
    artifacts["trace"] = trace

    # 7. gradient-route identity over the battery at the reference point
    x_ref = _reference_point(config.tag, model.dim)
    summary = flow_summary(
        model,
        x_ref,
        policy.t0,
        config.dt,
        min(config.paths, 20000),
        seed=seed + _SEED_TAGS["gradient"],
        t0=policy.t0,
        negate_control=negate_control,
        r_guard=config.r_guard,
        threads=config.threads,
    )
    ibp_rows = []
    ibp_ok = True
    for f in battery:
        rep_f = ibp_from_summary(f, summary)
        ibp_rows.append((f.name, rep_f))
        ibp_ok &= rep_f.passed
    results.append(
        CheckResult("ibp_identity", ibp_ok, f"{len(battery)} functions at 3 SE, common noise")
    )
    artifacts["ibp"] = ibp_rows

    # 8. first-derivative bound
    grad_rep = check_gradient_inequality(model, battery, config.p, config.q, policy, ensemble)
    results.append(
        CheckResult(
            "gradient_inequality",
            grad_rep.passed,
            f"max ratio {max(r.ratio for r in grad_rep.rows):.3f} vs C={grad_rep.constant:.3f}",
        )
    )
    artifacts["gradient_inequality"] = grad_rep
    from .norms import norm_profile

    artifacts["profiles"] = [
        norm_profile(model, f, ensemble, config.p, config.q) for f in battery
    ]

    # 9. second-derivative bound (fitted constant)
    hess_rep = check_hessian_inequality(model, battery, config.p, config.q, ensemble)
    results.append(
        CheckResult(
            "hessian_inequality",
            hess_rep.passed and math.isfinite(hess_rep.constant),
            f"fitted constant {hess_rep.constant:.3f}",
        )
    )
    artifacts["hessian_inequality"] = hess_rep

    # 10. exponential integrability
    integ = exp_integrability(
        model, ensemble, policy.gamma0
    )
    results.append(
        CheckResult(
            "exp_integrability",
            math.isfinite(integ.value) and not integ.heavy_tail,
            f"E(gamma0={policy.gamma0:g}) = {integ.value:.4f} +- {integ.std_error:.4f}",
        )
    )
    artifacts["exp_integrability"] = integ

    # 11. semigroup decay for a centred function
    t_grid, dt_decay = _decay_plan(config.tag)
    if model.dim == 1 and problem.stationary_sampler is None:
        f_dec = shifted(battery[0], _mu_mean_1d(problem, battery[0]))
    else:
        f_dec = coordinate(0, model.dim)
    decay = decay_check(
        model,
        f_dec,
        t_grid,
        ensemble,
        n_outer=1000,
        inner_paths=100,
        dt=dt_decay,
        seed=seed + _SEED_TAGS["decay"],
    )
    results.append(
        CheckResult(
            "decay",
            decay.passed,
            "norms "
            + " -> ".join(f"{pt.norm:.4f}" for pt in decay.points)
            + f" (final ratio {decay.final_ratio:.3f})",
        )
    )
    artifacts["decay"] = decay

    # 12. stopped-moment bound and exit probabilities
    mom = moment_bound_check(
        model,
        MomentTestConfig(rho=0.4, radii=(3.0, 5.0, 8.0), horizon=5.0),
        ensemble,
        n_paths=min(config.paths, 5000),
        dt=config.dt,
        seed=seed + _SEED_TAGS["moment"],
    )
    results.append(
        CheckResult(
            "moment_bound",
            mom.passed,
            f"moments <= {mom.bound:.3f}, exits "
            + " >= ".join(f"{r.exit_probability:.4f}" for r in mom.rows),
        )
    )
    artifacts["moment_bound"] = mom
    return results, artifacts


def _write_verify_outputs(
    config: ExperimentConfig, results: list[CheckResult], artifacts: dict
) -> None:
    out = Path(config.out_dir)
    policy = artifacts["policy"]

    lines = _csv_header(config, {"t0": _fmt(policy.t0), "r": _fmt(policy.r)})
    lines.append("f,p,q,t0,f_lq,gen_lq,grad_lp,hess_lp,sobolev_1p,sobolev_2p,C,ratio,verdict")
    grad_rep = artifacts["gradient_inequality"]
    problem = _build_problem(config)
    for row, prof in zip(grad_rep.rows, artifacts["profiles"]):
        lines.append(
            ",".join(
                [
                    row.name,
                    _fmt(config.p),
                    _fmt(config.q),
                    _fmt(policy.t0),
                    _fmt(prof.f_lq.value),
                    _fmt(prof.gen_lq.value),
                    _fmt(prof.grad_lp.value),
                    _fmt(prof.hess_lp.value),
                    _fmt(prof.sobolev_1p.value),
                    _fmt(prof.sobolev_2p.value),
                    _fmt(grad_rep.constant),
                    _fmt(row.ratio),
                    "pass" if row.passed else "FAIL",
                ]
            )
        )
    _write_lines(out / "norms.csv", lines)

    trace = artifacts["trace"]
    tlines = _csv_header(config)
    tlines.append("problem,t0,r,lhs,rhs,margin,se")
    tlines.append(
        ",".join(
            [
                trace.tag,
                _fmt(trace.t0),
                _fmt(trace.r),
                _fmt(trace.lhs),
                _fmt(trace.rhs),
                _fmt(trace.margin),
                _fmt(trace.combined_se),
            ]
        )
    )
    _write_lines(out / "trace.csv", tlines)

    glines = _csv_header(config)
    glines.append("problem,f,x,route,t0,component,estimate,se,N,seed")
    x_ref = _reference_point(config.tag, problem.model.dim)
    x_str = ";".join(_fmt(v) for v in x_ref)
    for name, rep in artifacts["ibp"]:
        for route, est in (("frechet", rep.frechet), ("malliavin", rep.malliavin)):
            for j in range(problem.model.dim):
                glines.append(
                    ",".join(
                        [
                            config.tag,
                            name,
                            x_str,
                            route,
                            _fmt(policy.t0),
                            str(j),
                            _fmt(est.estimate[j]),
                            _fmt(est.std_error[j]),
                            str(est.n_paths),
                            str(config.seed),
                        ]
                    )
                )
    _write_lines(out / "gradient_routes.csv", glines)

    md = [
        f"# Verification report: {config.tag}",
        "",
        f"- seed: {config.seed}",
        f"- dt: {_fmt(config.dt)}",
        f"- horizon policy: t0 = {_fmt(policy.t0)}, gamma0 = {_fmt(policy.gamma0)}, r = {_fmt(policy.r)}",
        f"- (p, q) = ({_fmt(config.p)}, {_fmt(config.q)})",
        f"- theoretical constant C = {_fmt(grad_rep.constant)} "
        f"(E(gamma0) = {_fmt(artifacts['exp_integrability'].value)})",
        "",
        "| check | verdict | detail |",
        "|---|---|---|",
    ]
    for res in results:
        md.append(f"| {res.name} | {'pass' if res.passed else 'FAIL'} | {res.detail} |")
    md += ["", "## Gradient-bound ratios", "", "| f | ratio | C | verdict |", "|---|---|---|---|"]
    for row in grad_rep.rows:
        md.append(
            f"| {row.name} | {_fmt(row.ratio)} | {_fmt(grad_rep.constant)} | "
            f"{'pass' if row.passed else 'FAIL'} |"
        )
    _write_lines(out / "report.md", md)


def cmd_verify(config: ExperimentConfig, negate_control: bool = False) -> int:
    results, artifacts = run_verify(config, negate_control=negate_control)
    _write_verify_outputs(config, results, artifacts)
    failures = [r for r in results if not r.passed]
    for res in results:
        print(f"[{'PASS' if res.passed else 'FAIL'}] {res.name}: {res.detail}")
    if failures:
        print(
            "verification failed: " + ", ".join(r.name for r in failures), file=sys.stderr
        )
        return EXIT_CHECK_FAILED
    print(f"all {len(results)} checks passed; report written to {config.out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="divflow",
        description="Monte-Carlo gradient estimation and verification for "
        "divergence-form diffusions",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, desc in (
        ("simulate", "integrate trajectories and write CSV dumps"),
        ("gradient", "estimate a gradient by both routes"),
        ("verify", "run the full verification harness"),
    ):
        cmd = sub.add_parser(name, help=desc)
        cmd.add_argument("--config", required=True, help="path to the INI config file")
        cmd.add_argument("--seed", type=int, default=None, help="override the master seed")
        cmd.add_argument("--out", default=None, help="override the output directory")
        cmd.add_argument("--problem", default=None, help="override the problem tag")
        cmd.add_argument("--threads", type=int, default=1, help="batch fan-out width")
        if name == "gradient":
            cmd.add_argument("--function", required=True, help="test function id")
            cmd.add_argument("--x", required=True, help="evaluation point, comma separated")
        if name in ("gradient", "verify"):
            cmd.add_argument(
                "--debug-negate-control",
                action="store_true",
                help="fault injection: flip the control sign (identity check must fail)",
            )
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        overrides = {"seed": args.seed, "dir": args.out, "tag": args.problem, "threads": args.threads}
        config = parse_config(args.config, overrides)
        if args.command == "simulate":
            return cmd_simulate(config)
        if args.command == "gradient":
            return cmd_gradient(
                config, args.function, args.x, negate_control=args.debug_negate_control
            )
        return cmd_verify(config, negate_control=args.debug_negate_control)
    except (ConfigError, PolicyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IntegrationError as exc:
        print(f"integration error at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (EvaluationError, DegeneracyError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except DivflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
