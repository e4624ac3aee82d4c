"""Path simulation, stationary sampling and Monte-Carlo semigroup evaluation.

The diffusion dX = (-grad U + b)/2 dt + dw is integrated with the explicit
Euler scheme (the noise is additive, so the first-order Milstein correction
vanishes).  Explosion is precluded by the model assumptions; a radius guard
only catches misuse such as grossly oversized steps.  The invariant law
exp(-U)/Z is sampled either exactly (Gaussian benchmarks) or with a
Metropolis-adjusted Langevin chain on the reversible part of the dynamics,
for which it is also invariant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import engine
from .errors import ConfigError, EvaluationError
from .model import CoefficientModel, TestProblem
from .functions import TestFunction

Array = np.ndarray

DEFAULT_DT = 1.0e-3
DEFAULT_R_GUARD = engine.DEFAULT_R_GUARD

# Metropolis-adjusted Langevin defaults (time units, not steps).
MALA_BURN_IN = 1.0e3
MALA_THIN = 1.0
MALA_STEP = 0.1
MALA_CHAINS = 64


@dataclass(frozen=True)
class WienerGrid:
    """Increments of a single driving Wiener path on a uniform grid."""

    dt: float
    increments: Array  # (count, dim)
    master_seed: Optional[int] = None
    path_index: Optional[int] = None

    @property
    def count(self) -> int:
        return self.increments.shape[0]

    @property
    def dim(self) -> int:
        return self.increments.shape[1]

    @classmethod
    def generate(
        cls, master_seed: int, path_index: int, count: int, dt: float, dim: int
    ) -> "WienerGrid":
        inc = engine.normal_increments(master_seed, path_index, count, dt, dim)
        return cls(dt=dt, increments=inc, master_seed=master_seed, path_index=path_index)

    @classmethod
    def zeros(cls, count: int, dt: float, dim: int) -> "WienerGrid":
        return cls(dt=dt, increments=np.zeros((count, dim)))


@dataclass(frozen=True)
class Trajectory:
    """A discretised path together with the noise that produced it."""

    x0: Array
    times: Array  # (n+1,)
    states: Array  # (n+1, d)
    noise: WienerGrid
    exited: bool = False
    exit_step: Optional[int] = None

    @property
    def dt(self) -> float:
        return self.noise.dt

    @property
    def dim(self) -> int:
        return self.states.shape[1]


@dataclass(frozen=True)
class StationaryEnsemble:
    """Draws from the invariant law with provenance and sampler diagnostics.

    For chain-based provenance the points are interleaved across independent
    chains, and standard errors of ensemble means use the between-chain
    spread rather than the (optimistic) iid formula.
    """

    points: Array  # (N, d)
    provenance: str  # "exact" | "burn-in"
    diagnostics: dict = field(default_factory=dict)
    n_chains: Optional[int] = None

    @property
    def count(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def mean_and_se(self, values: Array) -> tuple[float, float]:
        """Mean of per-point values and an honest standard error."""
        values = np.asarray(values, dtype=float)
        mean = float(np.mean(values))
        n = values.shape[0]
        if self.n_chains and self.n_chains > 1 and n >= 2 * self.n_chains:
            m = self.n_chains
            rounds = n // m
            chain_means = values[: rounds * m].reshape(rounds, m).mean(axis=0)
            se = float(np.std(chain_means, ddof=1) / math.sqrt(m))
        else:
            se = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return mean, se


def simulate_path(
    model: CoefficientModel,
    x0,
    horizon: float,
    dt: float,
    noise: WienerGrid,
    r_guard: float = DEFAULT_R_GUARD,
) -> Trajectory:
    """Integrate one path to the horizon, stopping early at the radius guard."""
    if dt <= 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    if abs(noise.dt - dt) > 1.0e-12 * max(1.0, dt):
        raise ConfigError(f"noise grid dt {noise.dt} does not match dt {dt}")
    n = engine.steps_for(horizon, dt)
    if noise.count < n:
        raise ConfigError(f"noise grid has {noise.count} increments, need {n}")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (model.dim,):
        raise ConfigError(f"x0 has shape {x0.shape}, expected ({model.dim},)")
    if not np.all(np.isfinite(x0)):
        raise EvaluationError("non-finite initial state", point=x0)
    states, exit_step = engine.euler_sweep(
        model, x0[None, :], dt, noise.increments[None, :n], r_guard=r_guard
    )
    states = states[0]
    step = int(exit_step[0])
    exited = step >= 0
    if exited:
        states = states[: step + 1]
    times = dt * np.arange(states.shape[0])
    return Trajectory(
        x0=x0,
        times=times,
        states=states,
        noise=noise,
        exited=exited,
        exit_step=step if exited else None,
    )


def exit_time(traj: Trajectory, radius: float) -> Optional[float]:
    """First grid time at which |X| >= radius, or None if never reached."""
    if radius <= 0:
        raise ConfigError(f"radius must be positive, got {radius}")
    hits = np.nonzero(np.linalg.norm(traj.states, axis=-1) >= radius)[0]
    if hits.size == 0:
        return None
    return float(traj.times[hits[0]])


def _mala_chain_sample(
    model: CoefficientModel,
    count: int,
    burn_in: float,
    thin: float,
    step: float,
    chains: int,
    rng: np.random.Generator,
) -> tuple[Array, float, int]:
    """Vectorised Metropolis-adjusted Langevin on the reversible part.

    The proposal is one Euler step of dX = -grad U / 2 dt + dw with time
    step `step`, accepted against the target exp(-U).  Returns interleaved
    draws (count, d), the overall acceptance rate and the chain count.
    """
    d = model.dim
    m = max(1, min(chains, count))
    # Start inside the bulk: far tail starts can freeze the chain when the
    # potential grows steeply (every proposal overshoots and is rejected).
    x = 0.8 * rng.standard_normal((m, d))
    logp = -model.potential(x)
    grad = model.grad_potential(x)
    accepted = 0
    proposed = 0

    def advance(n_steps: int):
        nonlocal x, logp, grad, accepted, proposed
        for _ in range(n_steps):
            noise = rng.standard_normal((m, d))
            mean_fwd = x - 0.5 * step * grad
            prop = mean_fwd + math.sqrt(step) * noise
            logp_prop = -model.potential(prop)
            grad_prop = model.grad_potential(prop)
            mean_bwd = prop - 0.5 * step * grad_prop
            fwd = np.sum((prop - mean_fwd) ** 2, axis=-1)
            bwd = np.sum((x - mean_bwd) ** 2, axis=-1)
            log_alpha = logp_prop - logp + (fwd - bwd) / (2.0 * step)
            accept = np.log(rng.uniform(size=m)) < log_alpha
            x = np.where(accept[:, None], prop, x)
            logp = np.where(accept, logp_prop, logp)
            grad = np.where(accept[:, None], grad_prop, grad)
            accepted += int(np.count_nonzero(accept))
            proposed += m

    advance(max(1, int(round(burn_in / step))))
    thin_steps = max(1, int(round(thin / step)))
    rounds = (count + m - 1) // m
    draws = np.empty((rounds, m, d))
    for r in range(rounds):
        advance(thin_steps)
        draws[r] = x
    rate = accepted / proposed if proposed else 0.0
    return draws.reshape(rounds * m, d)[:count], rate, m


def sample_stationary(
    problem: TestProblem,
    count: int,
    method: str = "exact",
    burn_in: float = MALA_BURN_IN,
    thin: float = MALA_THIN,
    step: float = MALA_STEP,
    chains: int = MALA_CHAINS,
    seed: int = 0,
) -> StationaryEnsemble:
    """Draw an ensemble from the invariant law exp(-U)/Z.

    method="exact" requires the problem to carry a closed-form sampler;
    method="langevin" runs the Metropolis-adjusted chain on the reversible
    part (dropping b, for which the law is equally invariant), so no
    correction beyond the accept/reject step is needed.
    """
    if count < 1:
        raise ConfigError(f"ensemble size must be positive, got {count}")
    # Tag keeps the ensemble stream disjoint from per-path noise streams.
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), 0xE25E3B1E)))
    if method == "exact":
        if problem.stationary_sampler is None:
            raise ConfigError(
                f"problem {problem.tag} carries no exact stationary sampler; "
                "use method='langevin'"
            )
        points = problem.stationary_sampler(rng, count)
        return StationaryEnsemble(
            points=points, provenance="exact", diagnostics={"seed": int(seed)}
        )
    if method != "langevin":
        raise ConfigError(f"unknown sampling method {method!r}")
    points, rate, m = _mala_chain_sample(
        problem.model, count, burn_in, thin, step, chains, rng
    )
    diagnostics = {
        "seed": int(seed),
        "acceptance_rate": rate,
        "burn_in": burn_in,
        "thin": thin,
        "step": step,
        "low_acceptance": rate < 0.10,
    }
    return StationaryEnsemble(
        points=points, provenance="burn-in", diagnostics=diagnostics, n_chains=m
    )


@dataclass(frozen=True)
class SemigroupEstimate:
    """Monte-Carlo value of E f(X(t; x)) with its standard error."""

    value: float
    std_error: float
    n_paths: int
    exited_fraction: float


def semigroup_estimate(
    model: CoefficientModel,
    f: TestFunction,
    x,
    t: float,
    n_paths: int,
    dt: float,
    seed: int = 0,
    r_guard: float = DEFAULT_R_GUARD,
    threads: int = 1,
) -> SemigroupEstimate:
    """Estimate the semigroup value E f(X(t; x)) over n_paths paths.

    Guard-stopped paths are excluded from the average and reported in the
    exited fraction.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if n_paths < 1:
        raise ConfigError(f"n_paths must be positive, got {n_paths}")
    n = engine.steps_for(t, dt) if t > 0 else 0
    if n == 0:
        val = float(f.value(x))
        return SemigroupEstimate(value=val, std_error=0.0, n_paths=n_paths, exited_fraction=0.0)

    def worker(spec):
        off, size = spec
        inc = engine.increments_block(seed, off, size, n, dt, model.dim)
        x0 = np.broadcast_to(x, (size, model.dim))
        end, exit_step = engine.euler_sweep(model, x0, dt, inc, r_guard=r_guard, store=False)
        ok = exit_step < 0
        vals = f.value(end[ok])
        return float(np.sum(vals)), float(np.sum(vals**2)), int(np.count_nonzero(ok))

    parts = engine.map_batches(worker, engine.batch_sizes(n_paths, n, model.dim), threads)
    total = sum(p[0] for p in parts)
    total_sq = sum(p[1] for p in parts)
    kept = sum(p[2] for p in parts)
    if kept == 0:
        raise EvaluationError("all paths hit the radius guard", point=x)
    mean = total / kept
    var = max(0.0, total_sq / kept - mean * mean)
    se = math.sqrt(var / kept)
    return SemigroupEstimate(
        value=mean,
        std_error=se,
        n_paths=n_paths,
        exited_fraction=1.0 - kept / n_paths,
    )
