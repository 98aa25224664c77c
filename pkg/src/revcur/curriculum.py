"""Reverse curriculum generation of start states.

The training loop grows the start-state distribution backwards from the
goal: each iteration seeds short random-action ("Brownian motion") rollouts
from the current good starts, mixes in replayed old good starts, trains the
policy on the uniform mixture, then keeps the starts whose estimated
success probability lies strictly between r_min and r_max.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .envs import EnvState, PointMassMaze
from .rollout import ValueBaseline
from .trpo import BaselineFit, TrpoConfig, train_pol


@dataclass
class CurriculumConfig:
    n_new: int = 200          # nearby states trained on per iteration
    n_old: int = 100          # replayed old good starts per iteration
    m: int = 10000            # total pool accumulated by SampleNearby
    t_b: int = 50             # Brownian rollout horizon
    sigma: float = 1.0        # per-axis std of the action noise (identity covariance scale)
    r_min: float = 0.1
    r_max: float = 0.9
    iters: int = 100          # outer iterations
    min_visits: int = 2       # estimates below this keep a state optimistically

    def __post_init__(self):
        if not 0.0 <= self.r_min < self.r_max <= 1.0:
            raise ValueError("need 0 <= r_min < r_max <= 1")
        if min(self.n_new, self.n_old, self.m, self.t_b) <= 0:
            raise ValueError("n_new, n_old, m, t_b must be positive")


def sample_list(pool: list, k: int, rng: np.random.Generator) -> list:
    """Uniform sample, without replacement unless the pool is smaller than k."""
    if not pool or k <= 0:
        return []
    replace = len(pool) < k
    idx = rng.choice(len(pool), size=k, replace=replace)
    return [pool[i] for i in idx]


def brownian_rollout(env: PointMassMaze, seed_state: EnvState, t_b: int, sigma: float,
                     rng: np.random.Generator) -> list[EnvState]:
    """t_b random-action steps from seed_state; visited states, velocity zeroed.

    Goal termination does not cut the walk short: the walk continues from
    the reached state, so every stored state is a feasible visited state.
    """
    env.reset_to(seed_state)
    visited = []
    for _ in range(t_b):
        action = sigma * rng.standard_normal(2)
        state, _, done = env.step(action)
        visited.append(state.zero_velocity())
        if done:
            env.reset_to(state)
    return visited


def sample_nearby(starts: list[EnvState], n_new: int, sigma: float, t_b: int, m: int,
                  env: PointMassMaze, rng: np.random.Generator) -> list[EnvState]:
    """Grow a pool of feasible nearby states by Brownian rollouts, then subsample.

    Seeds are drawn uniformly from the growing pool itself (newly visited
    states become eligible seeds), so the reachable neighborhood compounds
    while the pool fills up to m states.
    """
    if not starts:
        raise ValueError("starts must be nonempty")
    pool = list(starts)
    while len(pool) < m:
        seed = pool[int(rng.integers(len(pool)))]
        pool.extend(brownian_rollout(env, seed, t_b, sigma, rng))
    return sample_list(pool, n_new, rng)


def select(starts: list[EnvState], rews: dict[int, tuple[float, int]],
           r_min: float, r_max: float, min_visits: int = 2) -> list[EnvState]:
    """Keep starts with r_min < estimate < r_max (strict bounds).

    Starts with fewer than min_visits visits (including never-visited ones)
    are retained optimistically.
    """
    kept = []
    for i, s in enumerate(starts):
        est, visits = rews.get(i, (None, 0))
        if visits < min_visits or (r_min < est < r_max):
            kept.append(s)
    return kept


def good_starts_fraction(rews: dict[int, tuple[float, int]], r_min: float, r_max: float,
                         min_visits: int = 2) -> float | None:
    """Share of well-visited starts whose estimate is strictly inside the band.

    None (unknown) when no start has enough visits; distinct from 0.
    """
    if not rews:
        raise ValueError("rews must be nonempty")
    counted = [(est, n) for est, n in rews.values() if n >= min_visits]
    if not counted:
        return None
    good = sum(1 for est, _ in counted if r_min < est < r_max)
    return good / len(counted)


def identity_select(starts, rews, r_min, r_max, min_visits=2):
    """The ablation selector: keep every trained-on start."""
    return list(starts)


def brownian_proposer(cfg: CurriculumConfig):
    """Default start proposer: SampleNearby around the good starts + replay."""

    def propose(iteration, policy, selected, starts_old, env, rng):
        starts: list[EnvState] = []
        warn = None
        if selected:
            starts.extend(sample_nearby(selected, cfg.n_new, cfg.sigma, cfg.t_b,
                                        cfg.m, env, rng))
        else:
            warn = "no good starts; training on replay samples only"
        if cfg.n_old > 0:
            starts.extend(sample_list(starts_old, cfg.n_old, rng))
        if not starts:
            starts = [starts_old[0]]
            warn = "no good starts and no replay quota; training on the goal state"
        return starts, 0, warn

    return propose


def uniform_proposer(n_starts: int):
    """Baseline proposer: fresh uniform feasible starts every iteration."""

    def propose(iteration, policy, selected, starts_old, env, rng):
        return env.sample_uniform_feasible(n_starts, rng), 0, None

    return propose


@dataclass
class TrainerInfo:
    replay_sizes: list
    starts_per_iter: list      # the starts list trained on at each iteration
    selected_per_iter: list
    replay_buffer: list
    warnings: list
    diagnostics: list


def reverse_curriculum_train(env: PointMassMaze, policy, goal_state: EnvState,
                             cur_cfg: CurriculumConfig, trpo_cfg: TrpoConfig,
                             batch_timesteps: int, run_seed: int,
                             eval_hook=None, proposer=None, selector=select,
                             baseline_hidden=(32, 32),
                             baseline_fit: BaselineFit | None = None):
    """Outer loop: seed from the goal state, expand, train, select, replay.

    eval_hook(iteration, policy, cum_train_steps, cum_proposal_eval_steps,
    good_starts_frac, rews, warn) is called after every iteration; whatever
    it returns is appended to the records list. Returns
    (policy, records, TrainerInfo).
    """
    if not env.is_goal(goal_state):
        raise ValueError("goal_state must lie in the goal set")
    if proposer is None:
        proposer = brownian_proposer(cur_cfg)
    baseline = ValueBaseline(env.obs_dim, baseline_hidden,
                             rngmod.substream(run_seed, rngmod.INIT, 1))
    starts_old = [goal_state]
    selected = [goal_state]
    records = []
    diagnostics: list = []
    info = TrainerInfo([], [], [], starts_old, [], diagnostics)
    cum_train = 0
    cum_proposal_eval = 0

    for i in range(1, cur_cfg.iters + 1):
        prop_rng = rngmod.substream(run_seed, rngmod.CURRICULUM, i)
        steps_before = env.total_steps
        starts, prop_eval_steps, warn = proposer(i, policy, selected, starts_old,
                                                 env, prop_rng)
        cum_proposal_eval += prop_eval_steps
        cum_train += env.total_steps - steps_before   # Brownian expansion steps
        if warn:
            info.warnings.append((i, warn))

        train_rng = rngmod.substream(run_seed, rngmod.COLLECT, i)
        rews, train_steps = train_pol(env, policy, starts, baseline, trpo_cfg,
                                      batch_timesteps, train_rng,
                                      baseline_fit=baseline_fit,
                                      diagnostics=diagnostics)
        cum_train += train_steps

        selected = selector(starts, rews, cur_cfg.r_min, cur_cfg.r_max,
                            cur_cfg.min_visits)
        starts_old.extend(selected)
        gsf = good_starts_fraction(rews, cur_cfg.r_min, cur_cfg.r_max,
                                   cur_cfg.min_visits) if rews else None

        info.replay_sizes.append(len(starts_old))
        info.starts_per_iter.append(starts)
        info.selected_per_iter.append(selected)
        if eval_hook is not None:
            records.append(eval_hook(i, policy, cum_train, cum_proposal_eval,
                                     gsf, rews, warn))
    return policy, records, info


# --- start buffer CSV (x, y, vx, vy, estimate, visits) ---

def start_buffer_to_csv(entries) -> str:
    """entries: iterable of (EnvState, estimate or None, visits)."""
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["x", "y", "vx", "vy", "estimate", "visits"])
    for state, est, visits in entries:
        w.writerow([repr(state.x), repr(state.y), repr(state.vx), repr(state.vy),
                    "" if est is None else repr(float(est)), int(visits)])
    return buf.getvalue()


def start_buffer_from_csv(text: str):
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["x", "y", "vx", "vy", "estimate", "visits"]:
        raise ValueError("bad start buffer CSV header")
    out = []
    for r in rows[1:]:
        state = EnvState(float(r[0]), float(r[1]), float(r[2]), float(r[3]))
        est = None if r[4] == "" else float(r[4])
        out.append((state, est, int(r[5])))
    return out
