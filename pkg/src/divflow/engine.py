"""Batched numerical kernels shared by the simulation and estimator layers.

Noise is reproducible per path: the increments of path p under master seed s
are a pure function of (s, p), independent of batching, thread count or
which estimator consumes them.  Path sweeps are vectorised over a batch
axis; linear matrix systems along a path are advanced with the classical
4-stage Runge-Kutta step, evaluating the (piecewise-linearly interpolated)
coefficient at the half point.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

import numpy as np

from .errors import EvaluationError, IntegrationError
from .model import CoefficientModel, total_drift


def _drift_or_integration_error(model: CoefficientModel, x: Array, step: int) -> Array:
    """Drift evaluation inside a sweep; overflow means the path exploded."""
    try:
        return total_drift(model, x)
    except EvaluationError as exc:
        raise IntegrationError(
            f"drift evaluation failed at step {step} (state exploded or dt too large)",
            step=step,
        ) from exc

Array = np.ndarray

DEFAULT_R_GUARD = 1.0e6

# Cap on the number of stored doubles per noise block; keeps batch memory
# in the low hundreds of MB.
_BLOCK_BUDGET = 16_000_000


def path_seed_sequence(master_seed: int, path_index: int) -> np.random.SeedSequence:
    """Seed material for a single path; the (seed, index) pair is the identity."""
    return np.random.SeedSequence(entropy=(int(master_seed), int(path_index)))


def normal_increments(
    master_seed: int, path_index: int, count: int, dt: float, dim: int
) -> Array:
    """Wiener increments of one path: count x dim draws from N(0, dt I)."""
    rng = np.random.default_rng(path_seed_sequence(master_seed, path_index))
    return rng.normal(0.0, np.sqrt(dt), size=(count, dim))


def increments_block(
    master_seed: int, start_index: int, n_paths: int, count: int, dt: float, dim: int
) -> Array:
    """Increments for paths [start_index, start_index + n_paths), stacked."""
    out = np.empty((n_paths, count, dim))
    scale = np.sqrt(dt)
    for i in range(n_paths):
        rng = np.random.default_rng(path_seed_sequence(master_seed, start_index + i))
        out[i] = rng.normal(0.0, scale, size=(count, dim))
    return out


def batch_sizes(n_paths: int, count: int, dim: int) -> list[tuple[int, int]]:
    """(offset, size) chunks keeping each noise block under the memory budget."""
    per_path = max(1, count * dim)
    size = max(1, min(n_paths, _BLOCK_BUDGET // per_path))
    return [(off, min(size, n_paths - off)) for off in range(0, n_paths, size)]


def map_batches(worker: Callable[[tuple[int, int]], object], specs: Sequence[tuple[int, int]], threads: int = 1) -> list:
    """Run a batch worker over (offset, size) specs, preserving order."""
    if threads <= 1 or len(specs) <= 1:
        return [worker(spec) for spec in specs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(worker, specs))


def euler_sweep(
    model: CoefficientModel,
    x0: Array,
    dt: float,
    increments: Array,
    r_guard: float = DEFAULT_R_GUARD,
    store: bool = True,
) -> tuple[Array, Array]:
    """Explicit Euler over a batch of paths with an explosion guard.

    x0 has shape (B, d) and increments (B, n, d).  Returns (states, exit_step)
    where states is (B, n+1, d) when store is True and the final (B, d) state
    otherwise.  exit_step[i] is the first step at which |x| exceeded r_guard
    (the offending state is kept and the path frozen afterwards), or -1.
    A non-finite state on a live path raises IntegrationError with the step.
    """
    x = np.array(x0, dtype=float, copy=True)
    n_paths, n_steps = increments.shape[0], increments.shape[1]
    exit_step = np.full(n_paths, -1, dtype=np.int64)
    active = np.linalg.norm(x, axis=-1) <= r_guard
    exit_step[~active] = 0
    states = np.empty((n_paths, n_steps + 1, x.shape[1])) if store else None
    if store:
        states[:, 0] = x
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_steps):
            x_safe = np.where(active[:, None], x, 0.0)
            step = _drift_or_integration_error(model, x_safe, k + 1) * dt + increments[:, k]
            x_new = np.where(active[:, None], x + step, x)
            live_bad = active & ~np.all(np.isfinite(x_new), axis=-1)
            if np.any(live_bad):
                raise IntegrationError(
                    f"non-finite state at step {k + 1} (dt too large or model misuse)",
                    step=k + 1,
                )
            tripped = active & (np.linalg.norm(x_new, axis=-1) > r_guard)
            exit_step[tripped] = k + 1
            active &= ~tripped
            x = x_new
            if store:
                states[:, k + 1] = x
    return (states if store else x), exit_step


def rk4_step(
    y: Array,
    dt: float,
    a0: Array,
    a_half: Array,
    a1: Array,
    f0: Array | float = 0.0,
    f_half: Array | float = 0.0,
    f1: Array | float = 0.0,
) -> Array:
    """One classical Runge-Kutta step for dY/dt = A(t) Y + F(t).

    A and F are supplied at the step endpoints and midpoint; matmul
    broadcasts over leading batch axes.
    """
    k1 = a0 @ y + f0
    k2 = a_half @ (y + (0.5 * dt) * k1) + f_half
    k3 = a_half @ (y + (0.5 * dt) * k2) + f_half
    k4 = a1 @ (y + dt * k3) + f1
    return y + (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)


def trapezoid_prefix(values: Array, dt: float, axis: int = -1) -> Array:
    """Cumulative trapezoid integral along an axis, starting at zero."""
    values = np.asarray(values, dtype=float)
    values = np.moveaxis(values, axis, -1)
    mids = 0.5 * (values[..., 1:] + values[..., :-1]) * dt
    out = np.concatenate(
        [np.zeros(values.shape[:-1] + (1,)), np.cumsum(mids, axis=-1)], axis=-1
    )
    return np.moveaxis(out, -1, axis)


def steps_for(horizon: float, dt: float) -> int:
    """Number of grid steps in a horizon; rejects off-grid combinations."""
    n = int(round(horizon / dt))
    if n <= 0 or abs(n * dt - horizon) > 1.0e-9 * max(1.0, horizon):
        from .errors import ConfigError

        raise ConfigError(f"horizon {horizon} is not a positive multiple of dt {dt}")
    return n
