"""KL-constrained natural-gradient policy updates.

trpo_step maximizes the likelihood-ratio surrogate mean[ratio * A] under a
mean-KL trust region: conjugate gradients on the damped KL Hessian give the
step direction, the step is scaled to the target KL, and a backtracking
line search accepts the first candidate with measured KL <= 1.5 * step_kl
and a positive surrogate improvement. If no candidate qualifies the update
is skipped.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import policy as pol
from .numerics import cg_solve
from .rollout import (Batch, ValueBaseline, collect_batch, discounted_advantages,
                      fit_baseline, success_estimates)

CG_RESIDUAL_TOL = 1e-10
KL_ACCEPT_SLACK = 1.5


@dataclass
class TrpoConfig:
    step_kl: float = 0.01
    cg_iters: int = 10
    cg_damping: float = 1e-2
    backtrack_ratio: float = 0.8
    max_backtracks: int = 15
    inner_iters: int = 5
    gamma: float = 0.998
    # observations used for Fisher-vector products; None = the whole batch
    fvp_subsample: int | None = 1024

    def __post_init__(self):
        if self.step_kl <= 0:
            raise ValueError("step_kl must be positive")
        if self.inner_iters < 0:
            raise ValueError("inner_iters must be >= 0")


@dataclass
class TrpoData:
    """On-policy update data: one row per (obs, action) pair."""
    obs: np.ndarray
    actions: np.ndarray
    advantages: np.ndarray


def surrogate_and_grad(policy: pol.GaussianPolicy, data: TrpoData):
    """Surrogate value and exact gradient at the policy's current params.

    At the collection parameters all likelihood ratios are 1, so the value
    is the mean advantage and the gradient is mean[A * grad log pi].
    """
    n = len(data.advantages)
    if n == 0:
        return 0.0, np.zeros(policy.n_params)
    value = float(data.advantages.mean())
    grad = policy.log_prob_weighted_grad(data.obs, data.actions, data.advantages / n)
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite surrogate gradient")
    return value, grad


def surrogate_at(policy_template: pol.GaussianPolicy, flat: np.ndarray, data: TrpoData,
                 old_log_prob: np.ndarray) -> float:
    p = policy_template.copy()
    p.set_flat(flat)
    ratio = np.exp(p.log_prob_batch(data.obs, data.actions) - old_log_prob)
    return float((ratio * data.advantages).mean())


def fisher_vector_product(policy: pol.GaussianPolicy, obs: np.ndarray, v: np.ndarray,
                          damping: float) -> np.ndarray:
    """(H + damping I) v with H the mean-KL Hessian at the current params."""
    out = pol.kl_hessian_vec(policy, obs, v) + damping * np.asarray(v)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite Fisher-vector product")
    return out


def trpo_step(policy: pol.GaussianPolicy, data: TrpoData, config: TrpoConfig,
              rng: np.random.Generator):
    """One trust-region update. Returns (new_flat_params, info dict).

    The policy object is left at the returned parameters.
    """
    params = policy.flat()
    info = {"accepted": False, "kl": 0.0, "surrogate_before": 0.0, "surrogate_after": 0.0,
            "backtracks": 0, "warning": None}
    if len(data.advantages) == 0:
        info["warning"] = "empty batch"
        return params, info
    surr0, g = surrogate_and_grad(policy, data)
    info["surrogate_before"] = info["surrogate_after"] = surr0
    if not np.any(g):
        return params, info

    if config.fvp_subsample is not None and config.fvp_subsample < len(data.obs):
        idx = rng.choice(len(data.obs), size=config.fvp_subsample, replace=False)
        fvp_obs = data.obs[idx]
    else:
        fvp_obs = data.obs
    try:
        direction = cg_solve(
            lambda v: fisher_vector_product(policy, fvp_obs, v, config.cg_damping),
            g, max_iters=config.cg_iters, residual_tol=CG_RESIDUAL_TOL)
        dhd = float(direction @ fisher_vector_product(policy, fvp_obs, direction,
                                                      config.cg_damping))
    except FloatingPointError as exc:
        info["warning"] = f"cg failure: {exc}"
        return params, info
    if dhd <= 0 or not np.isfinite(dhd):
        info["warning"] = f"non-positive curvature {dhd!r}"
        return params, info
    full_step = np.sqrt(2.0 * config.step_kl / dhd) * direction

    old = policy.copy()
    old_lp = old.log_prob_batch(data.obs, data.actions)
    scale = 1.0
    for j in range(config.max_backtracks):
        candidate = params + scale * full_step
        policy.set_flat(candidate)
        kl = pol.kl_mean(old, policy, data.obs)
        surr = surrogate_at(old, policy.flat(), data, old_lp)
        if kl <= KL_ACCEPT_SLACK * config.step_kl and surr > surr0:
            info.update(accepted=True, kl=float(kl), surrogate_after=float(surr),
                        backtracks=j)
            return policy.flat(), info
        scale *= config.backtrack_ratio
    policy.set_flat(params)
    info["warning"] = "line search failed; update skipped"
    info["backtracks"] = config.max_backtracks
    return params, info


@dataclass
class BaselineFit:
    steps: int = 200
    lr: float = 1e-3
    subsample: int | None = None


def train_pol(env, policy: pol.GaussianPolicy, starts, baseline: ValueBaseline,
              config: TrpoConfig, batch_timesteps: int, rng: np.random.Generator,
              baseline_fit: BaselineFit | None = None, diagnostics: list | None = None):
    """Inner training loop: inner_iters cycles of collect / fit / update.

    Success estimates are pooled over every inner batch (total wins over
    total visits per start id). With inner_iters == 0 the policy is left
    untouched and the estimates come from a single evaluation batch.
    Returns (rews, env_steps_used) where rews maps start id to
    (success fraction, visit count).
    """
    if baseline_fit is None:
        baseline_fit = BaselineFit()
    wins: dict[int, int] = {}
    visits: dict[int, int] = {}
    env_steps = 0

    def pool(batch: Batch):
        nonlocal env_steps
        env_steps += batch.env_steps
        for sid, (frac, n) in success_estimates(batch).items():
            wins[sid] = wins.get(sid, 0) + int(round(frac * n))
            visits[sid] = visits.get(sid, 0) + n

    if config.inner_iters == 0:
        batch = collect_batch(env, policy, starts, batch_timesteps, rng)
        pool(batch)
        return {sid: (wins[sid] / n, n) for sid, n in visits.items()}, env_steps

    for _ in range(config.inner_iters):
        batch = collect_batch(env, policy, starts, batch_timesteps, rng)
        pool(batch)
        fit_baseline(baseline, batch, config.gamma, steps=baseline_fit.steps,
                     lr=baseline_fit.lr, subsample=baseline_fit.subsample, rng=rng)
        obs, actions, adv = discounted_advantages(batch, baseline, config.gamma)
        _, info = trpo_step(policy, TrpoData(obs, actions, adv), config, rng)
        if diagnostics is not None:
            diagnostics.append({
                "surrogate": info["surrogate_after"],
                "kl": info["kl"],
                "entropy": policy.entropy(),
                "mean_success": batch.success_rate(),
                "accepted": info["accepted"],
                "warning": info["warning"],
            })
    return {sid: (wins[sid] / n, n) for sid, n in visits.items()}, env_steps
