"""Monte-Carlo gradient estimators: pathwise and integration-by-parts routes.

Two unbiased routes to the gradient of the semigroup value P_t f(x):

  * pathwise ("frechet"): d_j P_t f(x) = E[ grad f(X(t;x)) . C_{.,j}(t) ]
    where C is the pathwise derivative of the flow;
  * integration by parts ("malliavin"): with the adapted control g on
    [0, t0), d_j P_{t0} f(x) = E[ f(X(t0;x)) (int g dw)_j ] with the Ito
    integral summed at left endpoints: (int g dw)_j = sum_i int g_ij dw_i.
    No derivative of f is evaluated.

Both are driven by a fused streaming kernel that advances the state, the
propagator and the Ito accumulator together over batches of paths, so the
identity check can run the two routes on common random numbers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import engine
from .control import ControlPath, HorizonPolicy
from .errors import ConfigError, EvaluationError
from .functions import TestFunction
from .model import CoefficientModel, apply_generator, curvature_matrix, total_drift
from .sde import WienerGrid

Array = np.ndarray


@dataclass(frozen=True)
class GradientEstimate:
    """Componentwise gradient estimate with standard errors."""

    estimate: Array  # (d,)
    std_error: Array  # (d,)
    n_paths: int
    route: str  # "frechet" | "malliavin"
    horizon: float
    x: Array
    exited_fraction: float = 0.0


def ito_integral(control: ControlPath, noise: WienerGrid) -> Array:
    """Left-endpoint Ito sum of the control against one Wiener path.

    Column j receives sum_i sum_k g_ij(t_k) dw_i(t_k) over grid points
    strictly before the horizon; evaluating g at the left endpoint keeps
    the integrand adapted, which is what makes the estimator unbiased.
    """
    if abs(noise.dt - control.dt) > 1.0e-12 * max(1.0, control.dt):
        raise ConfigError(
            f"noise grid dt {noise.dt} does not match control dt {control.dt}"
        )
    n0 = control.horizon_index
    if noise.count < n0:
        raise ConfigError(f"noise grid has {noise.count} increments, need {n0}")
    if noise.dim != control.dim:
        raise ConfigError("noise dimension does not match control dimension")
    g = control.values[:n0]
    dw = noise.increments[:n0]
    return np.einsum("kij,ki->j", g, dw)


@dataclass(frozen=True)
class PathSummary:
    """Per-path terminal data shared by both estimator routes.

    Produced by one pass of the fused kernel: terminal states, pathwise
    derivative matrices, Ito integrals of the control, and the guard mask.
    All arrays are aligned on the path axis, so any functional evaluated on
    them uses common random numbers across routes.
    """

    x: Array
    t_end: float
    dt: float
    seed: int
    states: Array  # (N, d) terminal states
    frechet: Array  # (N, d, d) pathwise derivative at t_end
    ito: Optional[Array]  # (N, d) control Ito integrals, None without control
    alive: Array  # (N,) guard mask

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def exited_fraction(self) -> float:
        return 1.0 - float(np.count_nonzero(self.alive)) / self.n_paths


def flow_summary(
    model: CoefficientModel,
    x,
    t_end: float,
    dt: float,
    n_paths: int,
    seed: int = 0,
    t0: Optional[float] = None,
    negate_control: bool = False,
    r_guard: float = engine.DEFAULT_R_GUARD,
    threads: int = 1,
    path_offset: int = 0,
) -> PathSummary:
    """Run the fused kernel: state, propagator and Ito accumulator together.

    When t0 is given, the control C(., 0)/t0 is accumulated against the
    increments up to the horizon (left endpoints), matching the single-path
    construction in the control module step for step.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (model.dim,):
        raise ConfigError(f"x has shape {x.shape}, expected ({model.dim},)")
    if n_paths < 1:
        raise ConfigError(f"n_paths must be positive, got {n_paths}")
    n = engine.steps_for(t_end, dt)
    n0 = engine.steps_for(t0, dt) if t0 is not None else None
    if n0 is not None and n0 > n:
        raise ConfigError(f"control horizon {t0} exceeds the terminal time {t_end}")
    d = model.dim
    sign = -1.0 if negate_control else 1.0

    def worker(spec):
        off, size = spec
        inc = engine.increments_block(seed, path_offset + off, size, n, dt, d)
        xs = np.broadcast_to(x, (size, d)).copy()
        c = np.broadcast_to(np.eye(d), (size, d, d)).copy()
        ito = np.zeros((size, d)) if n0 is not None else None
        a_cur = curvature_matrix(model, xs)
        alive = np.ones(size, dtype=bool)
        with np.errstate(over="ignore", invalid="ignore"):
            for k in range(n):
                dw = inc[:, k]
                if ito is not None and k < n0:
                    contrib = np.einsum("bij,bi->bj", c, dw) * (sign / t0)
                    ito = np.where(alive[:, None], ito + contrib, ito)
                x_safe = np.where(alive[:, None], xs, 0.0)
                step = engine._drift_or_integration_error(model, x_safe, k + 1) * dt + dw
                x_new = np.where(alive[:, None], xs + step, xs)
                bad = alive & ~np.all(np.isfinite(x_new), axis=-1)
                if np.any(bad):
                    from .errors import IntegrationError

                    raise IntegrationError(
                        f"non-finite state at step {k + 1}", step=k + 1
                    )
                tripped = alive & (np.linalg.norm(x_new, axis=-1) > r_guard)
                a_new = curvature_matrix(model, np.where((alive & ~tripped)[:, None], x_new, 0.0))
                c_new = engine.rk4_step(c, dt, a_cur, 0.5 * (a_cur + a_new), a_new)
                c = np.where(alive[:, None, None], c_new, c)
                alive &= ~tripped
                xs = x_new
                a_cur = a_new
        return xs, c, ito, alive

    specs = engine.batch_sizes(n_paths, n, d)
    parts = engine.map_batches(worker, specs, threads)
    states = np.concatenate([p[0] for p in parts], axis=0)
    frechet = np.concatenate([p[1] for p in parts], axis=0)
    ito = np.concatenate([p[2] for p in parts], axis=0) if n0 is not None else None
    alive = np.concatenate([p[3] for p in parts], axis=0)
    return PathSummary(
        x=x, t_end=t_end, dt=dt, seed=seed, states=states, frechet=frechet, ito=ito, alive=alive
    )


def _component_stats(samples: Array, alive: Array) -> tuple[Array, Array, int]:
    kept = samples[alive]
    n = kept.shape[0]
    if n == 0:
        raise EvaluationError("all paths hit the radius guard")
    mean = kept.mean(axis=0)
    se = kept.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
    return mean, se, n


def frechet_from_summary(f: TestFunction, summary: PathSummary) -> GradientEstimate:
    """Pathwise route evaluated on an existing kernel pass."""
    samples = np.einsum("bi,bij->bj", f.grad(summary.states), summary.frechet)
    mean, se, _ = _component_stats(samples, summary.alive)
    return GradientEstimate(
        estimate=mean,
        std_error=se,
        n_paths=summary.n_paths,
        route="frechet",
        horizon=summary.t_end,
        x=summary.x,
        exited_fraction=summary.exited_fraction,
    )


def malliavin_from_summary(f: TestFunction, summary: PathSummary) -> GradientEstimate:
    """Integration-by-parts route evaluated on an existing kernel pass."""
    if summary.ito is None:
        raise ConfigError("summary was computed without a control")
    samples = f.value(summary.states)[:, None] * summary.ito
    mean, se, _ = _component_stats(samples, summary.alive)
    return GradientEstimate(
        estimate=mean,
        std_error=se,
        n_paths=summary.n_paths,
        route="malliavin",
        horizon=summary.t_end,
        x=summary.x,
        exited_fraction=summary.exited_fraction,
    )


def grad_frechet(
    model: CoefficientModel,
    f: TestFunction,
    x,
    t: float,
    n_paths: int,
    dt: float,
    seed: int = 0,
    threads: int = 1,
) -> GradientEstimate:
    """Estimate grad P_t f(x) through the pathwise derivative of the flow."""
    summary = flow_summary(model, x, t, dt, n_paths, seed=seed, threads=threads)
    return frechet_from_summary(f, summary)


def grad_malliavin(
    model: CoefficientModel,
    f: TestFunction,
    x,
    policy: HorizonPolicy,
    n_paths: int,
    dt: float,
    seed: int = 0,
    negate_control: bool = False,
    threads: int = 1,
) -> GradientEstimate:
    """Estimate grad P_{t0} f(x) by integration by parts; f is never differentiated."""
    summary = flow_summary(
        model,
        x,
        policy.t0,
        dt,
        n_paths,
        seed=seed,
        t0=policy.t0,
        negate_control=negate_control,
        threads=threads,
    )
    return malliavin_from_summary(f, summary)


@dataclass(frozen=True)
class IbpReport:
    """Common-random-number comparison of the two gradient routes."""

    frechet: GradientEstimate
    malliavin: GradientEstimate
    residual: Array  # (d,) componentwise mean difference on common paths
    residual_se: Array  # (d,)

    @property
    def passed(self) -> bool:
        return bool(np.all(np.abs(self.residual) <= 3.0 * self.residual_se + 1.0e-12))


def ibp_from_summary(f: TestFunction, summary: PathSummary) -> IbpReport:
    """Both routes and their per-path residual from one kernel pass."""
    fre = frechet_from_summary(f, summary)
    mal = malliavin_from_summary(f, summary)
    per_path = (
        np.einsum("bi,bij->bj", f.grad(summary.states), summary.frechet)
        - f.value(summary.states)[:, None] * summary.ito
    )
    res_mean, res_se, _ = _component_stats(per_path, summary.alive)
    return IbpReport(frechet=fre, malliavin=mal, residual=res_mean, residual_se=res_se)


def ibp_identity_check(
    model: CoefficientModel,
    f: TestFunction,
    x,
    policy: HorizonPolicy,
    n_paths: int,
    dt: float,
    seed: int = 0,
    negate_control: bool = False,
    threads: int = 1,
) -> IbpReport:
    """Run both routes on common random numbers and report the residual."""
    summary = flow_summary(
        model,
        x,
        policy.t0,
        dt,
        n_paths,
        seed=seed,
        t0=policy.t0,
        negate_control=negate_control,
        threads=threads,
    )
    return ibp_from_summary(f, summary)


def grad_generator_variant(
    model: CoefficientModel,
    f: TestFunction,
    x,
    policy: HorizonPolicy,
    t: float,
    n_paths: int,
    dt: float,
    inner_paths: int = 100,
    seed: int = 0,
    threads: int = 1,
) -> GradientEstimate:
    """Decay-route estimate of -d_j P_{t - t0} (G f) weighted by the Ito integral.

    For t >= t0 the estimate is -E[ P_{t-t0} G f (X(t0;x)) (int g dw)_j ],
    with the inner semigroup value itself estimated by nested Monte Carlo
    (inner_paths per outer path) and the inner noise propagated into the
    standard error by the delta method.
    """
    if t < policy.t0 - 1.0e-12:
        raise ConfigError(f"t={t} must be at least the control horizon t0={policy.t0}")
    summary = flow_summary(
        model, x, policy.t0, dt, n_paths, seed=seed, t0=policy.t0, threads=threads
    )
    alive = summary.alive
    n_inner_steps = engine.steps_for(t - policy.t0, dt) if t > policy.t0 + 1.0e-12 else 0
    d = model.dim
    m = inner_paths
    n = summary.n_paths

    def lf(points):
        return apply_generator(model, f, points)

    if n_inner_steps == 0:
        inner_mean = lf(summary.states)
        inner_var = np.zeros(n)
    else:
        starts = np.repeat(summary.states, m, axis=0)
        vals = np.empty(n * m)
        for off, size in engine.batch_sizes(n * m, n_inner_steps, d):
            inc = engine.increments_block(
                seed, n + off, size, n_inner_steps, dt, d
            )
            end, _ = engine.euler_sweep(
                model, starts[off : off + size], dt, inc, store=False
            )
            vals[off : off + size] = lf(end)
        vals = vals.reshape(n, m)
        inner_mean = vals.mean(axis=1)
        inner_var = vals.var(axis=1, ddof=1) / m

    samples = -inner_mean[:, None] * summary.ito
    kept = alive
    n_kept = int(np.count_nonzero(kept))
    mean = samples[kept].mean(axis=0)
    outer_var = samples[kept].var(axis=0, ddof=1)
    inner_term = np.mean(summary.ito[kept] ** 2 * inner_var[kept, None], axis=0)
    se = np.sqrt((outer_var + inner_term) / n_kept)
    return GradientEstimate(
        estimate=mean,
        std_error=se,
        n_paths=n,
        route="malliavin",
        horizon=t,
        x=summary.x,
        exited_fraction=summary.exited_fraction,
    )
