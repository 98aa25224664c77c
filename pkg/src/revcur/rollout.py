"""Trajectory collection and return bookkeeping.

A Path stores the observations at which actions were taken, the actions,
and the per-step rewards (the reward earned by the state each action led
to). A start state that is already inside the goal ball yields an
immediate-success path: one observation, no actions, a single reward of 1,
counting one timestep toward the batch budget.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .envs import EnvState, PointMassMaze
from .numerics import Mlp, mlp_backward, mlp_forward_cached, flatten, unflatten
from .policy import GaussianPolicy


@dataclass
class Path:
    start_id: int
    start_state: EnvState
    obs: np.ndarray       # (L, obs_dim)
    actions: np.ndarray   # (L or 0, act_dim)
    rewards: np.ndarray   # one entry per action, or a single entry for an immediate success
    success: bool

    @property
    def length(self) -> int:
        """Timesteps this path consumes from the batch budget (>= 1)."""
        return max(len(self.actions), 1)

    def validate(self) -> None:
        r = self.rewards
        if not np.isin(r, (0.0, 1.0)).all():
            raise ValueError("rewards must be binary")
        if r.sum() > 1 or (r.sum() == 1 and r[-1] != 1.0):
            raise ValueError("at most one reward of 1, and only at the final step")
        if self.success != bool(len(r) and r[-1] == 1.0):
            raise ValueError("success flag inconsistent with rewards")


@dataclass
class Batch:
    paths: list[Path]
    total_timesteps: int
    n_starts: int
    env_steps: int = 0    # actual simulator steps consumed (immediate successes take none)

    def success_rate(self) -> float:
        if not self.paths:
            return 0.0
        return sum(p.success for p in self.paths) / len(self.paths)


def collect_batch(env: PointMassMaze, policy: GaussianPolicy, starts: list[EnvState],
                  batch_timesteps: int, rng: np.random.Generator) -> Batch:
    """Roll out episodes from Unif(starts) until the timestep budget is met."""
    if not starts:
        raise ValueError("starts must be nonempty")
    for s in starts:
        if not env.is_feasible(s):
            raise ValueError(f"infeasible start state {s}")
    paths: list[Path] = []
    total = 0
    steps_before = env.total_steps
    while total < batch_timesteps:
        start_id = int(rng.integers(len(starts)))
        s0 = starts[start_id]
        obs = env.reset_to(s0)
        if env.is_goal(s0):
            path = Path(start_id, s0, obs[None, :], np.empty((0, env.act_dim)),
                        np.array([1.0]), True)
        else:
            obs_list, act_list, rew_list = [], [], []
            done = False
            reward = 0
            while not done:
                action = policy.act(obs, rng)
                obs_list.append(obs)
                act_list.append(action)
                _, reward, done = env.step(action)
                rew_list.append(float(reward))
                obs = env.observe()
            path = Path(start_id, s0, np.array(obs_list), np.array(act_list),
                        np.array(rew_list), reward == 1)
        paths.append(path)
        total += path.length
    return Batch(paths, total, len(starts), env.total_steps - steps_before)


def success_estimates(batch: Batch) -> dict[int, tuple[float, int]]:
    """Per start id: (successful paths / paths from it, visit count)."""
    wins: dict[int, int] = {}
    visits: dict[int, int] = {}
    for p in batch.paths:
        visits[p.start_id] = visits.get(p.start_id, 0) + 1
        wins[p.start_id] = wins.get(p.start_id, 0) + int(p.success)
    return {sid: (wins[sid] / n, n) for sid, n in visits.items()}


def returns_to_go(path: Path, gamma: float) -> np.ndarray:
    g = np.zeros(len(path.rewards))
    acc = 0.0
    for t in range(len(path.rewards) - 1, -1, -1):
        acc = path.rewards[t] + gamma * acc
        g[t] = acc
    return g


class ValueBaseline:
    """MLP state-value baseline, warm-started across fits."""

    def __init__(self, obs_dim: int, hidden=(32, 32), rng: np.random.Generator | None = None):
        sizes = (obs_dim, *hidden, 1)
        if rng is None:
            self.net = Mlp(sizes)
        else:
            # zero output layer: initial value estimate is 0 everywhere,
            # matching the sparse-reward prior
            self.net = Mlp.init_random(sizes, rng, zero_output=True)

    def predict(self, obs: np.ndarray) -> np.ndarray:
        out, _ = mlp_forward_cached(self.net, obs)
        return out[:, 0]

    def flat(self) -> np.ndarray:
        return flatten(self.net)

    def set_flat(self, flat: np.ndarray) -> None:
        self.net = unflatten(self.net.sizes, flat)


def batch_obs_and_returns(batch: Batch, gamma: float):
    """All observations (including immediate-success ones) with their G_t."""
    obs = [p.obs for p in batch.paths]
    gs = [returns_to_go(p, gamma) for p in batch.paths]
    return np.concatenate(obs), np.concatenate(gs)


def fit_baseline(baseline: ValueBaseline, batch: Batch, gamma: float,
                 steps: int = 200, lr: float = 1e-3,
                 subsample: int | None = None,
                 rng: np.random.Generator | None = None) -> tuple[float, float]:
    """Full-batch gradient regression of baseline(obs) onto returns-to-go.

    Keeps the best-loss parameters seen, so the fitted MSE never exceeds the
    starting MSE. Returns (mse_before, mse_after).
    """
    obs, targets = batch_obs_and_returns(batch, gamma)
    if subsample is not None and subsample < len(targets):
        if rng is None:
            raise ValueError("subsampled fit needs an rng")
        idx = rng.choice(len(targets), size=subsample, replace=False)
        obs, targets = obs[idx], targets[idx]
    n = len(targets)
    flat = baseline.flat()
    sizes = baseline.net.sizes

    def loss_and_grad(fl):
        net = unflatten(sizes, fl)
        pred, cache = mlp_forward_cached(net, obs)
        err = pred[:, 0] - targets
        grad, _ = mlp_backward(net, cache, (2.0 * err / n)[:, None])
        return float((err ** 2).mean()), grad

    mse_before, _ = loss_and_grad(flat)
    best_flat, best_loss = flat, mse_before
    for _ in range(steps):
        loss, grad = loss_and_grad(flat)
        if loss < best_loss:
            best_loss, best_flat = loss, flat
        flat = flat - lr * grad
    loss, _ = loss_and_grad(flat)
    if loss < best_loss:
        best_loss, best_flat = loss, flat
    baseline.set_flat(best_flat)
    return mse_before, best_loss


def discounted_advantages(batch: Batch, baseline: ValueBaseline, gamma: float):
    """Per-timestep normalized advantages, aligned with (obs, action) pairs.

    Returns (obs, actions, advantages) stacked over all paths that took at
    least one action. G_t is the discounted return to go; the advantage is
    G_t - baseline(obs_t), normalized to zero mean and unit variance across
    the batch when the variance is positive.
    """
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must be in (0, 1]")
    obs_parts, act_parts, adv_parts = [], [], []
    for p in batch.paths:
        if len(p.actions) == 0:
            continue
        g = returns_to_go(p, gamma)
        adv_parts.append(g - baseline.predict(p.obs))
        obs_parts.append(p.obs)
        act_parts.append(p.actions)
    if not obs_parts:
        d_obs = batch.paths[0].obs.shape[1] if batch.paths else 0
        return (np.empty((0, d_obs)), np.empty((0, 0)), np.empty(0))
    obs = np.concatenate(obs_parts)
    actions = np.concatenate(act_parts)
    adv = np.concatenate(adv_parts)
    adv = adv - adv.mean()
    std = adv.std()
    if std > 0:
        adv = adv / std
    return obs, actions, adv


def dump_batch_ndjson(batch: Batch) -> str:
    """Debug dump, one path per line. Not a stability-guaranteed format."""
    lines = []
    for p in batch.paths:
        lines.append(json.dumps({
            "start_id": p.start_id,
            "start": [p.start_state.x, p.start_state.y, p.start_state.vx, p.start_state.vy],
            "length": p.length,
            "success": p.success,
            "rewards": p.rewards.tolist(),
        }))
    return "\n".join(lines) + ("\n" if lines else "")
