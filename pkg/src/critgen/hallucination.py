"""Per-plan inference of where and when obstacles must have been.

Given a recorded plan, fit for each of N candidate obstacles a 2D Gaussian
over its center (mean + Cholesky factor) and per-timestep presence logits,
such that decoding the sampled obstacles reproduces the recorded plan.
Phase 1 fits positions at full presence; phase 2 adds the logits, sharpening
a Gumbel-Softmax presence mask along a geometric temperature schedule and
finishing with hard one-hot masks. All gradients are estimated through the
decoder with accept/reject SPSA (coordinate finite differences on the
position block for the final stretch), so reconstruction objectives are
monotone within each stage and every fit is deterministic given its RNG.

The noise banks (position samples and Gumbel draws) are frozen per stage, so
each stage minimizes a fixed sample-average objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .decoder import DecoderConfig, TemporalMask, descend_positions, straight_line_plan
from .geometry import DEFAULT_ROBOT_RADIUS, Plan
from .spsa import minimize_spsa, spsa_step

_LOG_2PI = math.log(2.0 * math.pi)
_CHOL_FLOOR = 1e-6
_COV_REGULARIZATION = 1e-6


@dataclass
class ObstacleHypothesis:
    """One fitted obstacle: position Gaussian plus presence logits.

    ``chol`` is the lower-triangular Cholesky factor of the position
    covariance (positive diagonal). ``alpha`` holds one presence logit per
    plan timestep.
    """

    mu: np.ndarray
    chol: np.ndarray
    alpha: np.ndarray

    def __post_init__(self) -> None:
        self.mu = np.asarray(self.mu, dtype=float).reshape(2)
        self.chol = np.asarray(self.chol, dtype=float).reshape(2, 2)
        self.alpha = np.asarray(self.alpha, dtype=float)
        if self.chol[0, 1] != 0.0:
            raise ValueError("chol must be lower triangular")
        if self.chol[0, 0] <= 0.0 or self.chol[1, 1] <= 0.0:
            raise ValueError("chol diagonal must be positive")
        if self.alpha.ndim != 1 or not np.all(np.isfinite(self.alpha)):
            raise ValueError("alpha must be a finite 1-D array")

    def sigma(self) -> np.ndarray:
        return self.chol @ self.chol.T

    def sample_position(self, rng: np.random.Generator) -> np.ndarray:
        return self.mu + self.chol @ rng.standard_normal(2)

    def t_crit(self) -> int:
        """Critical timestep, 1-based; ties resolve to the lowest index."""
        return int(np.argmax(self.alpha)) + 1

    def hard_mask(self) -> TemporalMask:
        return TemporalMask.one_hot(len(self.alpha), self.t_crit() - 1)


@dataclass(frozen=True)
class CriticalPoint:
    """A position/timestep pair at which an obstacle must be present."""

    x: float
    y: float
    t_crit: int  # 1-based timestep in {1..H}


@dataclass
class HallucinationConfig:
    n_obstacles: int = 10
    radius: float = 0.5
    phase1_iters: int = 1000
    phase2_anneal_iters: int = 1000
    phase2_hard_iters: int = 500
    tau_start: float = 2048.0
    tau_end: float = 0.1
    prior_weight: float = 0.01
    overlap_weight: float = 0.01
    samples_per_eval: int = 4
    seed: int | None = None
    robot_radius: float = DEFAULT_ROBOT_RADIUS
    refine_positions_in_phase2: bool = True
    spsa_step: float = 0.2
    spsa_perturbation: float = 0.08
    alpha_perturbation: float = 0.4
    alpha_step: float = 100.0
    active_tau_threshold: float = 32.0
    alpha_bump_width: float = 2.5
    hard_penalty_scale: float = 0.1
    mask_noise_scale: float = 0.0
    coord_fd_fraction: float = 0.1
    decoder: DecoderConfig = field(default_factory=DecoderConfig)

    def __post_init__(self) -> None:
        if self.n_obstacles < 1:
            raise ValueError("n_obstacles must be >= 1")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        # Iteration counts of 0 are legal (useful for initialization tests).
        for name in ("phase1_iters", "phase2_anneal_iters", "phase2_hard_iters"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not (self.tau_start >= self.tau_end > 0):
            raise ValueError("require tau_start >= tau_end > 0")
        if self.samples_per_eval < 1:
            raise ValueError("samples_per_eval must be >= 1")
        if not 0.0 <= self.coord_fd_fraction <= 1.0:
            raise ValueError("coord_fd_fraction must lie in [0, 1]")
        if self.mask_noise_scale < 0.0:
            raise ValueError("mask_noise_scale must be >= 0")
        if not self.active_tau_threshold > 0:
            raise ValueError("active_tau_threshold must be positive")
        if not self.alpha_bump_width > 0:
            raise ValueError("alpha_bump_width must be positive")
        if self.hard_penalty_scale < 0.0:
            raise ValueError("hard_penalty_scale must be >= 0")


@dataclass
class PhaseResult:
    hypotheses: list[ObstacleHypothesis]
    initial_objective: float
    final_objective: float
    objective_trace: list[float]
    n_evaluations: int


@dataclass
class Phase2Result(PhaseResult):
    soft_reconstruction_loss: float = 0.0
    hard_reconstruction_loss: float = 0.0


def _standard_gumbel(rng: np.random.Generator, shape) -> np.ndarray:
    u = np.clip(rng.random(shape), 1e-300, 1.0 - 1e-16)
    return -np.log(-np.log(u))


def _antithetic_normal(rng: np.random.Generator, samples: int, n: int) -> np.ndarray:
    """Standard-normal bank of shape (samples, n, 2) built from antithetic
    pairs (odd counts add one zero draw), so its empirical mean is exactly
    zero and the fitted mean is not pulled into compensating a lopsided
    bank."""
    half = samples // 2
    eps = rng.standard_normal((half, n, 2))
    parts = [eps, -eps]
    if samples % 2:
        parts.append(np.zeros((1, n, 2)))
    return np.concatenate(parts, axis=0)


def gumbel_softmax_mask(
    alpha: np.ndarray,
    tau: float,
    rng: np.random.Generator | None = None,
    noise: np.ndarray | None = None,
) -> TemporalMask:
    """Draw a Gumbel-Softmax presence mask, normalized to unit maximum.

    k = softmax((alpha + g) / tau) with g standard Gumbel noise, then
    m = k / max(k). High tau yields a near-uniform mask of ones; low tau
    concentrates the mask at the argmax of alpha + g. Pass ``noise`` to
    substitute an explicit noise vector (e.g. zeros) for the rng draw.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    a = np.asarray(alpha, dtype=float)
    if a.ndim != 1 or len(a) < 1:
        raise ValueError("alpha must be a non-empty 1-D array")
    if noise is None:
        if rng is None:
            raise ValueError("provide an rng or an explicit noise vector")
        noise = _standard_gumbel(rng, a.shape)
    z = (a + np.asarray(noise, dtype=float)) / tau
    z = z - z.max()
    k = np.exp(z)
    k = k / k.sum()
    return TemporalMask(k / k.max())


def tau_schedule(
    iteration: int, total_iterations: int, tau_start: float = 2048.0, tau_end: float = 0.1
) -> float:
    """Geometric temperature: iteration 0 -> tau_start, total -> tau_end."""
    if total_iterations <= 0:
        return tau_end
    frac = min(max(iteration / total_iterations, 0.0), 1.0)
    return float(tau_start * (tau_end / tau_start) ** frac)


# --- penalties ---------------------------------------------------------------


def _fit_plan_gaussian(plan: Plan) -> tuple[np.ndarray, np.ndarray]:
    pts = plan.positions
    mean = pts.mean(axis=0)
    cov = np.cov(pts, rowvar=False, bias=True) + _COV_REGULARIZATION * np.eye(2)
    return mean, cov


def _prior_terms(plan: Plan) -> tuple[np.ndarray, np.ndarray, float]:
    mean, cov = _fit_plan_gaussian(plan)
    icov = np.linalg.inv(cov)
    _, logdet = np.linalg.slogdet(cov)
    return mean, icov, float(logdet)


def _prior_value(
    positions: np.ndarray, mean: np.ndarray, icov: np.ndarray, logdet: float
) -> float:
    diff = positions - mean
    quad = np.einsum("ni,ij,nj->n", diff, icov, diff)
    n = len(positions)
    return float(0.5 * quad.sum() + 0.5 * n * (logdet + 2.0 * _LOG_2PI))


def gaussian_prior_penalty(positions: np.ndarray, plan: Plan) -> float:
    """Summed negative log density of obstacle centers under a Gaussian
    fitted to the plan's waypoints (covariance regularized by 1e-6 I)."""
    pos = np.asarray(positions, dtype=float).reshape(-1, 2)
    mean, icov, logdet = _prior_terms(plan)
    return _prior_value(pos, mean, icov, logdet)


def _overlap_value(
    positions: np.ndarray, radius: float, plan_pts: np.ndarray, robot_radius: float
) -> float:
    n = len(positions)
    total = 0.0
    if n > 1:
        diff = positions[:, None, :] - positions[None, :, :]
        dist = np.sqrt(np.sum(diff * diff, axis=2))
        iu = np.triu_indices(n, k=1)
        total += float(np.sum(np.maximum(2.0 * radius - dist[iu], 0.0) ** 2))
    dplan = np.linalg.norm(positions[:, None, :] - plan_pts[None, :, :], axis=2)
    total += float(np.sum(np.maximum(radius + robot_radius - dplan, 0.0) ** 2))
    return total


def overlap_penalty(
    positions: np.ndarray, radius: float, plan: Plan, robot_radius: float
) -> float:
    """Squared-hinge penalty for obstacle-obstacle and obstacle-plan overlap.

    Each unordered obstacle pair closer than 2*radius contributes
    hinge(2r - d)^2 once; each (obstacle, waypoint) pair closer than
    radius + robot_radius contributes hinge(r + r_robot - d)^2.
    """
    pos = np.asarray(positions, dtype=float).reshape(-1, 2)
    return _overlap_value(pos, radius, plan.positions, robot_radius)


# --- parameter packing --------------------------------------------------------


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _inv_softplus(y: float) -> float:
    if not y > 0:
        raise ValueError("softplus inverse requires a positive value")
    return float(y + math.log(-math.expm1(-y))) if y < 30 else float(y)


def _pack_positions(mu: np.ndarray, chol: np.ndarray) -> np.ndarray:
    n = len(mu)
    out = np.empty(5 * n)
    for i in range(n):
        out[5 * i : 5 * i + 2] = mu[i]
        out[5 * i + 2] = _inv_softplus(max(chol[i][0, 0] - _CHOL_FLOOR, 1e-9))
        out[5 * i + 3] = chol[i][1, 0]
        out[5 * i + 4] = _inv_softplus(max(chol[i][1, 1] - _CHOL_FLOOR, 1e-9))
    return out


def _unpack_positions(theta: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    block = theta.reshape(n, 5)
    mu = block[:, :2].copy()
    chol = np.zeros((n, 2, 2))
    chol[:, 0, 0] = _softplus(block[:, 2]) + _CHOL_FLOOR
    chol[:, 1, 0] = block[:, 3]
    chol[:, 1, 1] = _softplus(block[:, 4]) + _CHOL_FLOOR
    return mu, chol


# --- shared fit machinery ------------------------------------------------------


class _FitContext:
    """Precomputed per-plan quantities shared by every objective evaluation."""

    def __init__(self, plan: Plan, config: HallucinationConfig):
        self.plan = plan
        self.config = config
        self.horizon = plan.horizon
        self.base_pts = straight_line_plan(plan.goal, plan.horizon, plan.dt).positions
        self.plan_pts = plan.positions
        self.prior_mean, self.prior_icov, self.prior_logdet = _prior_terms(plan)
        self.eff_scale = config.radius + config.decoder.safety_clearance

    def penalties(self, positions: np.ndarray) -> float:
        cfg = self.config
        value = 0.0
        if cfg.prior_weight > 0:
            value += cfg.prior_weight * _prior_value(
                positions, self.prior_mean, self.prior_icov, self.prior_logdet
            )
        if cfg.overlap_weight > 0:
            value += cfg.overlap_weight * _overlap_value(
                positions, cfg.radius, self.plan_pts, cfg.robot_radius
            )
        return value

    def sample_objective(
        self, mu: np.ndarray, chol: np.ndarray, eps: np.ndarray, masks: np.ndarray
    ) -> float:
        """Sample-average of reconstruction MSE plus penalties.

        eps: (S, N, 2) frozen position noise; masks: (N, H) shared across
        samples or (S, N, H) per-sample.
        """
        samples = len(eps)
        per_sample_masks = masks.ndim == 3
        total = 0.0
        for s in range(samples):
            pos = mu + np.einsum("nij,nj->ni", chol, eps[s])
            m = masks[s] if per_sample_masks else masks
            eff = m.T * self.eff_scale
            pts, _, _, _ = descend_positions(
                self.base_pts, pos, eff, self.config.decoder
            )
            diff = pts - self.plan_pts
            total += float(np.mean(diff * diff)) + self.penalties(pos)
        return total / samples

    def sample_mse(
        self, mu: np.ndarray, chol: np.ndarray, eps: np.ndarray, masks: np.ndarray
    ) -> float:
        """Reconstruction MSE only, averaged over the eps bank."""
        samples = len(eps)
        per_sample_masks = masks.ndim == 3
        total = 0.0
        for s in range(samples):
            pos = mu + np.einsum("nij,nj->ni", chol, eps[s])
            m = masks[s] if per_sample_masks else masks
            eff = m.T * self.eff_scale
            pts, _, _, _ = descend_positions(
                self.base_pts, pos, eff, self.config.decoder
            )
            diff = pts - self.plan_pts
            total += float(np.mean(diff * diff))
        return total / samples


def _soft_masks(alpha: np.ndarray, gumbel: np.ndarray, tau: float) -> np.ndarray:
    """Per-sample Gumbel-Softmax masks: alpha (N, H), gumbel (S, N, H)."""
    z = (alpha[None, :, :] + gumbel) / tau
    z = z - z.max(axis=2, keepdims=True)
    k = np.exp(z)
    k = k / k.sum(axis=2, keepdims=True)
    return k / k.max(axis=2, keepdims=True)


def _hard_masks(alpha: np.ndarray) -> np.ndarray:
    n, horizon = alpha.shape
    masks = np.zeros((n, horizon))
    masks[np.arange(n), np.argmax(alpha, axis=1)] = 1.0
    return masks


def _init_means(
    plan: Plan, config: HallucinationConfig, rng: np.random.Generator
) -> np.ndarray:
    """Seed means where the clearance geometry puts obstacles.

    The plan bends away from whatever forced each detour, so a waypoint
    deviating from the start-to-end chord implies a center one clearance
    distance beyond that waypoint, on the side it bent away from. Deviation
    peaks are claimed in magnitude order with a minimum timestep spacing.
    A plan with no deviation at all needs no obstacles inside its window, so
    every hypothesis parks on the track axis beyond the pinned endpoints,
    where it costs neither reconstruction nor cross-track prior (the fitted
    prior for a straight plan is a degenerate ribbon that would otherwise
    crush any off-axis center onto the path). Leftover hypotheses next to
    claimed peaks draw from the plan-fitted Gaussian and get pushed
    perpendicular off the path.
    """
    n = config.n_obstacles
    plan_pts = plan.positions
    horizon = len(plan_pts)
    clearance = config.radius + config.decoder.safety_clearance
    out = np.zeros((n, 2))
    filled = 0
    chord = plan_pts[-1] - plan_pts[0]
    chord_len = float(np.linalg.norm(chord))
    if chord_len > 1e-12:
        u = chord / chord_len
        proj = plan_pts[0] + np.outer((plan_pts - plan_pts[0]) @ u, u)
        dev = plan_pts - proj
        mag = np.linalg.norm(dev, axis=1)
        spacing = max(2, horizon // (2 * n))
        taken: list[int] = []
        for t in np.argsort(-mag):
            if filled >= n or mag[t] < 0.05:
                break
            if any(abs(int(t) - s) < spacing for s in taken):
                continue
            away = -dev[t] / mag[t]
            out[filled] = plan_pts[t] + clearance * away
            taken.append(int(t))
            filled += 1
    if filled == 0 and chord_len > 1e-12:
        u = chord / chord_len
        gap = 2.0 * config.radius + 0.05
        for j in range(n):
            reach = clearance + 0.1 + (j // 2) * gap
            anchor = plan_pts[-1] if j % 2 == 0 else plan_pts[0]
            out[j] = anchor + (u if j % 2 == 0 else -u) * reach
        return out
    if filled < n:
        mean, cov = _fit_plan_gaussian(plan)
        pts = rng.multivariate_normal(mean, cov, size=n - filled, method="cholesky")
        seg = np.diff(plan_pts, axis=0)
        push = max(1.5 * config.radius, clearance + 0.15)
        for j in range(n - filled):
            t = int(np.argmin(np.linalg.norm(plan_pts - pts[j], axis=1)))
            d = seg[min(t, len(seg) - 1)]
            norm = float(np.linalg.norm(d))
            if norm > 1e-12:
                perp = np.array([-d[1], d[0]]) / norm
                sign = 1.0 if j % 2 == 0 else -1.0
                pts[j] = pts[j] + push * sign * perp
        out[filled:] = pts
    return out


_INIT_CHOL_DIAG = 0.25


def fit_phase1(
    plan: Plan, config: HallucinationConfig, rng: np.random.Generator
) -> PhaseResult:
    """Fit obstacle position Gaussians at full temporal presence.

    Minimizes the sample-average (over a frozen noise bank) of the decoder
    reconstruction MSE plus the Gaussian prior and overlap penalties. The
    returned hypotheses carry zero presence logits. The final objective never
    exceeds the initial one.
    """
    n = config.n_obstacles
    ctx = _FitContext(plan, config)
    mu0 = _init_means(plan, config, rng)
    chol0 = [np.diag([_INIT_CHOL_DIAG, _INIT_CHOL_DIAG]) for _ in range(n)]
    theta0 = _pack_positions(mu0, chol0)
    eps = _antithetic_normal(rng, config.samples_per_eval, n)
    ones = np.ones((n, plan.horizon))

    def fun(theta: np.ndarray) -> float:
        mu, chol = _unpack_positions(theta, n)
        return ctx.sample_objective(mu, chol, eps, ones)

    blocks = [np.arange(5 * i, 5 * i + 5) for i in range(n)]
    res = minimize_spsa(
        fun,
        theta0,
        iterations=config.phase1_iters,
        rng=rng,
        step=config.spsa_step,
        perturbation=config.spsa_perturbation,
        coord_blocks=blocks,
        coord_fraction=config.coord_fd_fraction,
    )
    mu, chol = _unpack_positions(res.x, n)
    hyps = [
        ObstacleHypothesis(mu=mu[i], chol=chol[i], alpha=np.zeros(plan.horizon))
        for i in range(n)
    ]
    return PhaseResult(
        hypotheses=hyps,
        initial_objective=res.trace[0],
        final_objective=res.fun,
        objective_trace=res.trace,
        n_evaluations=res.n_evaluations,
    )


def fit_phase2(
    plan: Plan,
    hypotheses: list[ObstacleHypothesis],
    config: HallucinationConfig,
    rng: np.random.Generator,
) -> Phase2Result:
    """Fit presence logits toward one-hot masks, then refine positions.

    Anneals the Gumbel-Softmax temperature geometrically from ``tau_start``
    to ``tau_end`` over ``phase2_anneal_iters`` accept/reject SPSA steps on
    the logits (idle until the temperature reaches ``active_tau_threshold``),
    then freezes each mask to a hard one-hot at argmax(alpha) and polishes
    positions and the argmax choice for ``phase2_hard_iters`` more. By
    default the masks are the mean-field (zero-noise) relaxation; see
    ``mask_noise_scale``. Records the reconstruction loss at the end of soft
    annealing and after hardening.
    """
    n = len(hypotheses)
    if n == 0:
        raise ValueError("phase 2 requires at least one hypothesis")
    horizon = plan.horizon
    ctx = _FitContext(plan, config)
    eps = _antithetic_normal(rng, config.samples_per_eval, n)
    # mask_noise_scale 0 anneals the mean-field relaxation (all-ones mask at
    # zero logits, sharpening as tau falls through the logit scale); the
    # deterministic objective is what lets a few hundred accept/reject SPSA
    # steps steer the logits. Positive scales restore stochastic masks from
    # a frozen draw bank.
    gumbel = config.mask_noise_scale * _standard_gumbel(
        rng, (config.samples_per_eval, n, horizon)
    )
    pos_raw = _pack_positions(
        np.stack([h.mu for h in hypotheses]), [h.chol for h in hypotheses]
    )
    mu, chol = _unpack_positions(pos_raw, n)
    alpha = np.stack([h.alpha for h in hypotheses])
    if config.phase2_anneal_iters > 0 or config.phase2_hard_iters > 0:
        # A hypothesis entering with flat logits gets its presence seeded at
        # the waypoint nearest its center: an obstacle sits one clearance
        # from the waypoint that dodged it, so that timestep is the natural
        # starting argmax. Untouched when zero iterations are requested, so
        # flat logits keep their index-0 tie-break.
        for i in range(n):
            if np.any(alpha[i] != 0.0):
                continue
            t_near = int(np.argmin(np.linalg.norm(ctx.plan_pts - mu[i], axis=1)))
            alpha[i, t_near] = 1.0
    alpha_entry = alpha.copy()
    refine = config.refine_positions_in_phase2
    # The anneal moves only the logits: positions stay at their phase-1 fit,
    # which keeps the geometry the logits are learning against stationary.
    # Refining positions against smeared mid-anneal masks systematically
    # drags them off (a smeared obstacle reconstructs best placed away from
    # the true center, with an inflated covariance diluting its push), so
    # position refinement belongs to the hard stage below. Logits are probed
    # along smooth time bumps (one center per hypothesis per probe, rostered
    # for coverage) so a single decode pair answers "should hypothesis i be
    # more or less present around t0" instead of spreading that bit over
    # every logit at once; probing starts once tau falls to
    # active_tau_threshold, above which the mask barely responds to
    # logit-scale changes. The step multiplier is floored so a run of
    # rejections cannot strand the rest of the schedule.
    alpha_cap = 0.5 * math.sqrt(n * horizon)
    anneal = config.phase2_anneal_iters
    denom = max(anneal - 1, 1)
    if config.tau_start <= config.active_tau_threshold:
        active_start = 0
    elif config.tau_end > config.active_tau_threshold:
        active_start = anneal
    else:
        frac = math.log(config.active_tau_threshold / config.tau_start) / math.log(
            config.tau_end / config.tau_start
        )
        active_start = min(anneal, int(math.ceil(frac * denom)))
    stride = max(1, int(round(config.alpha_bump_width)))
    centers_grid = np.arange(0, horizon, stride)
    rosters = [rng.permutation(centers_grid) for _ in range(n)]
    roster_pos = [0] * n
    t_axis = np.arange(horizon, dtype=float)
    bump_denom = 2.0 * config.alpha_bump_width**2

    def bump_direction() -> np.ndarray:
        signs = rng.integers(0, 2, size=n) * 2.0 - 1.0
        d = np.zeros((n, horizon))
        for i in range(n):
            if roster_pos[i] >= len(rosters[i]):
                rosters[i] = rng.permutation(centers_grid)
                roster_pos[i] = 0
            center = float(rosters[i][roster_pos[i]])
            roster_pos[i] += 1
            b = np.exp(-((t_axis - center) ** 2) / bump_denom)
            b[b < 1e-8] = 0.0
            d[i] = signs[i] * b
        return d.ravel()

    trace: list[float] = []
    n_eval = 0
    mult = 1.0
    for it in range(anneal):
        tau = tau_schedule(it, denom, config.tau_start, config.tau_end)

        def fun(a_flat: np.ndarray, _tau: float = tau) -> float:
            masks = _soft_masks(a_flat.reshape(n, horizon), gumbel, _tau)
            return ctx.sample_objective(mu, chol, eps, masks)

        if it < active_start:
            if not trace:
                trace.append(fun(alpha.ravel()))
                n_eval += 1
            else:
                trace.append(trace[-1])
            continue
        fx = fun(alpha.ravel())
        n_eval += 1
        sub, fx, accepted, used = spsa_step(
            fun,
            alpha.ravel().copy(),
            fx,
            rng,
            mult * config.alpha_step,
            config.alpha_perturbation,
            alpha_cap,
            direction=bump_direction(),
        )
        n_eval += used
        if accepted:
            alpha = sub.reshape(n, horizon).copy()
        mult = min(mult * 1.5, 10.0) if accepted else max(mult * 0.5, 0.05)
        trace.append(fx)

    soft_loss = ctx.sample_mse(
        mu, chol, eps, _soft_masks(alpha, gumbel, config.tau_end)
    )
    n_eval += config.samples_per_eval
    # The anneal needs full-strength penalties (the prior keeps hypotheses in
    # the decoder's influence band, the overlap term keeps them from crowding
    # one explanation), but both bias the final fit: recorded plans clear
    # obstacles by less than radius + robot_radius, so the exact solution
    # always pays overlap, and the prior drags centers toward the waypoint
    # mean. The hard stage starts from well-separated in-band hypotheses, so
    # it runs with the penalties scaled down to finish on reconstruction.
    ctx_hard = _FitContext(
        plan,
        replace(
            config,
            prior_weight=config.prior_weight * config.hard_penalty_scale,
            overlap_weight=config.overlap_weight * config.hard_penalty_scale,
        ),
    )

    def polish_argmax(pos: np.ndarray) -> tuple[int, bool]:
        """Local search over neighboring critical timesteps, one hypothesis
        at a time, under the hard-mask objective; lifts the winning logit so
        the argmax moves. Center and timing sit in a coupled valley (each is
        locally optimal given a small error in the other), so every timestep
        candidate is also tried with the center translated by the plan's
        displacement between the two waypoints, which rides the valley
        instead of stepping across it. Retirement (presence at a pinned
        endpoint, where it cannot move the decode) is deliberately not
        offered: sequentially retiring mediocre pushers cascades into an
        all-retired local optimum. Winning translations are written back
        into ``pos``."""
        mu_c, chol_c = _unpack_positions(pos, n)
        t_star = np.argmax(alpha, axis=1)
        evals = 0
        changed = False
        for i in range(n):
            t0 = int(t_star[i])
            lo = max(0, t0 - 4)
            hi = min(horizon, t0 + 5)
            cands = set(range(lo, hi))
            # The waypoint nearest the (possibly refined) center is always a
            # candidate, so timing can jump back when the window drifted.
            t_near = int(np.argmin(np.linalg.norm(ctx.plan_pts - mu_c[i], axis=1)))
            cands.add(t_near)
            best_t, best_v, best_mu = None, None, None
            for cand in sorted(cands):
                translatable = refine and cand != t0
                variants = (False, True) if translatable else (False,)
                for translate in variants:
                    mu_try = mu_c
                    if translate:
                        mu_try = mu_c.copy()
                        mu_try[i] = mu_c[i] + (ctx.plan_pts[cand] - ctx.plan_pts[t0])
                    ts = t_star.copy()
                    ts[i] = cand
                    masks = np.zeros((n, horizon))
                    masks[np.arange(n), ts] = 1.0
                    v = ctx_hard.sample_objective(mu_try, chol_c, eps, masks)
                    evals += 1
                    if best_v is None or v < best_v:
                        best_t, best_v, best_mu = cand, v, mu_try[i]
            if best_t != t0 or not np.array_equal(best_mu, mu_c[i]):
                changed = True
            t_star[i] = best_t
            mu_c = mu_c.copy()
            mu_c[i] = best_mu
            pos[5 * i : 5 * i + 2] = best_mu
            if best_t != int(np.argmax(alpha[i])):
                alpha[i, best_t] = alpha[i].max() + 1.0
        if trace:
            trace.append(float(best_v))
        return evals, changed

    def hard_value(pos: np.ndarray) -> float:
        m_c, c_c = _unpack_positions(pos, n)
        return ctx_hard.sample_objective(m_c, c_c, eps, _hard_masks(alpha))

    if config.phase2_hard_iters > 0:
        # When no single timestep lets the frozen phase-1 positions explain
        # the detour, annealing rationally hides every obstacle (soft loss
        # collapses to the no-obstacle baseline) and its logits are a poor
        # hard-stage start: polish rides from there into joint spacing
        # mimicry instead of honest pushes. The entry logits stay a rival
        # incumbent; both get one polish pass and the better polished state
        # opens the hard stage.
        starts = [alpha.copy()]
        if not np.array_equal(alpha, alpha_entry):
            starts.append(alpha_entry)
        pos_backup = pos_raw.copy()
        trials = []
        for start in starts:
            alpha[:] = start
            pos_raw[:] = pos_backup
            n_eval += polish_argmax(pos_raw)[0]
            trials.append((hard_value(pos_raw), alpha.copy(), pos_raw.copy()))
            n_eval += config.samples_per_eval
        _, alpha_best, pos_best = min(trials, key=lambda r: r[0])
        alpha[:] = alpha_best
        pos_raw[:] = pos_best
    if refine and config.phase2_hard_iters > 0:
        # Hard-mask position polish is a local problem with cheap exact block
        # gradients, so it runs as pure coordinate descent; the critical
        # timestep and the center are coupled (each is locally optimal given
        # a small error in the other), so descent rounds alternate with the
        # argmax search instead of running once. Only the means descend: the
        # bank-averaged reconstruction is near-flat in the covariance (a
        # hard-masked push is robust to sub-radius center displacement), so
        # those coordinates would cost gradient evaluations without moving.
        blocks = [np.arange(5 * i, 5 * i + 2) for i in range(n)]
        rounds = 2
        per_round = [config.phase2_hard_iters // rounds] * rounds
        per_round[0] += config.phase2_hard_iters - sum(per_round)
        for round_iters in per_round:
            if round_iters <= 0:
                continue
            hard = _hard_masks(alpha)

            def fun_hard(th: np.ndarray, _hard: np.ndarray = hard) -> float:
                m, c = _unpack_positions(th, n)
                return ctx_hard.sample_objective(m, c, eps, _hard)

            res = minimize_spsa(
                fun_hard,
                pos_raw,
                iterations=round_iters,
                rng=rng,
                step=config.spsa_step,
                perturbation=config.spsa_perturbation,
                coord_blocks=blocks,
                coord_fraction=1.0,
            )
            pos_raw = res.x
            trace.extend(res.trace[1:])
            n_eval += res.n_evaluations
            evals, changed = polish_argmax(pos_raw)
            n_eval += evals
        # Valley rides can cascade (one hypothesis retiring frees residual
        # for another), so the search repeats until a pass moves nothing.
        extra = 0
        while changed and extra < 3:
            evals, changed = polish_argmax(pos_raw)
            n_eval += evals
            extra += 1
    hard = _hard_masks(alpha)
    mu, chol = _unpack_positions(pos_raw, n)
    hard_loss = ctx.sample_mse(mu, chol, eps, hard)
    n_eval += config.samples_per_eval

    hyps = [
        ObstacleHypothesis(mu=mu[i], chol=chol[i], alpha=alpha[i].copy())
        for i in range(n)
    ]
    if not trace:
        trace = [soft_loss]
    return Phase2Result(
        hypotheses=hyps,
        initial_objective=trace[0],
        final_objective=trace[-1],
        objective_trace=trace,
        n_evaluations=n_eval,
        soft_reconstruction_loss=soft_loss,
        hard_reconstruction_loss=hard_loss,
    )


def extract_critical_points(
    hypotheses: list[ObstacleHypothesis],
    rng: np.random.Generator,
    samples_per_hypothesis: int = 1,
) -> list[CriticalPoint]:
    """Sample critical points from fitted hypotheses.

    Each hypothesis contributes ``samples_per_hypothesis`` points drawn from
    its position Gaussian, all at its critical timestep (argmax of the
    presence logits, lowest index on ties).
    """
    if samples_per_hypothesis < 1:
        raise ValueError("samples_per_hypothesis must be >= 1")
    points: list[CriticalPoint] = []
    for hyp in hypotheses:
        t = hyp.t_crit()
        for _ in range(samples_per_hypothesis):
            p = hyp.sample_position(rng)
            points.append(CriticalPoint(float(p[0]), float(p[1]), t))
    return points
