"""Derivative-free minimization by simultaneous perturbation (SPSA).

Gradient estimates come from two-sided random (Rademacher) perturbations.
Candidate steps are accepted only when they do not increase the objective,
with the step size growing on acceptance and halving on rejection, so the
recorded objective trace is monotone non-increasing. An optional tail
fraction of iterations switches to cyclic block-coordinate central finite
differences for low-dimensional polish.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class SpsaResult:
    x: np.ndarray
    fun: float
    trace: list[float] = field(default_factory=list)
    n_evaluations: int = 0


def _as_vector(value, size: int) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(size, float(arr))
    if arr.shape != (size,):
        raise ValueError("per-parameter scales must match the parameter count")
    return arr


def spsa_step(
    fun,
    x: np.ndarray,
    fx: float,
    rng: np.random.Generator,
    step,
    perturbation: np.ndarray,
    max_move: float,
    direction: np.ndarray | None = None,
) -> tuple[np.ndarray, float, bool, int]:
    """One accept/reject SPSA update. Returns (x, fx, accepted, evals).

    ``step`` and ``perturbation`` may be scalars or per-parameter vectors;
    mixed-scale parameter groups (meters vs. logits) need different steps.
    ``direction`` replaces the Rademacher draw with a fixed probe direction
    (entries in [-1, 1]); the move then follows that direction scaled by the
    estimated directional derivative.
    """
    if direction is not None:
        delta = np.asarray(direction, dtype=float)
        if delta.shape != x.shape:
            raise ValueError("direction must match the parameter shape")
    else:
        delta = rng.integers(0, 2, size=x.size) * 2.0 - 1.0
    f_plus = fun(x + perturbation * delta)
    f_minus = fun(x - perturbation * delta)
    scale = (f_plus - f_minus) / 2.0
    if not math.isfinite(scale) or scale == 0.0:
        return x, fx, False, 2
    grad = scale * delta / perturbation
    move = _as_vector(step, x.size) * grad
    norm = float(np.linalg.norm(move))
    if norm > max_move:
        move *= max_move / norm
    cand = x - move
    f_cand = fun(cand)
    if f_cand <= fx:
        return cand, float(f_cand), True, 3
    return x, fx, False, 3


def _coord_fd_gradient(fun, x: np.ndarray, indices: np.ndarray, h: float):
    g = np.zeros_like(x)
    evals = 0
    for j in indices:
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (fun(x + e) - fun(x - e)) / (2.0 * h)
        evals += 2
    return g, evals


def minimize_spsa(
    fun,
    x0: np.ndarray,
    *,
    iterations: int,
    rng: np.random.Generator,
    step: float = 0.1,
    perturbation=0.05,
    step_growth: float = 1.5,
    step_shrink: float = 0.5,
    min_step: float = 1e-9,
    max_move: float = 0.5,
    coord_blocks: list[np.ndarray] | None = None,
    coord_fraction: float = 0.0,
    coord_step: float | None = None,
) -> SpsaResult:
    """Minimize ``fun`` from ``x0``; the trace of accepted values is monotone.

    ``coord_blocks`` lists index groups refined by central finite differences
    during the final ``coord_fraction`` of iterations, cycling one block per
    iteration.
    """
    x = np.array(x0, dtype=float)
    fx = float(fun(x))
    n_eval = 1
    trace = [fx]
    pert = _as_vector(perturbation, x.size)
    base = _as_vector(step, x.size)
    mult = 1.0
    mult_floor = min_step / float(np.max(base))
    tail_start = iterations
    if coord_blocks and coord_fraction > 0.0:
        tail_start = iterations - int(math.ceil(coord_fraction * iterations))
    block_idx = 0
    for it in range(iterations):
        if it >= tail_start and coord_blocks:
            if it == tail_start:
                # The tail switches to exact block gradients; step adaptation
                # restarts so a collapsed multiplier from the random phase
                # cannot starve it.
                mult = 1.0
            block = coord_blocks[block_idx % len(coord_blocks)]
            block_idx += 1
            h = coord_step if coord_step is not None else float(np.min(pert))
            g, used = _coord_fd_gradient(fun, x, block, h)
            n_eval += used
            gnorm = float(np.linalg.norm(g))
            if gnorm == 0.0 or not math.isfinite(gnorm):
                trace.append(fx)
                continue
            move = mult * base * g
            norm = float(np.linalg.norm(move))
            if norm > max_move:
                move *= max_move / norm
            cand = x - move
            f_cand = fun(cand)
            n_eval += 1
            accepted = f_cand <= fx
            if accepted:
                x, fx = cand, float(f_cand)
        else:
            x, fx, accepted, used = spsa_step(fun, x, fx, rng, mult * base, pert, max_move)
            n_eval += used
        mult = min(mult * step_growth, 10.0) if accepted else max(mult * step_shrink, mult_floor)
        trace.append(fx)
    return SpsaResult(x=x, fun=fx, trace=trace, n_evaluations=n_eval)
