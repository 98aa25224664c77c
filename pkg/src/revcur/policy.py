"""Diagonal-Gaussian MLP policy.

The action distribution is N(mean(obs), diag(exp(log_std)^2)) with a
state-independent log-std vector. Flat parameter vectors are the mean
network parameters followed by the log_std tail, so the whole policy
round-trips through a single vector.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from . import numerics
from .numerics import Mlp, ShapeError

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
LOG_2PI = float(np.log(2.0 * np.pi))

CHECKPOINT_MAGIC = b"RCPK"


class GaussianPolicy:
    def __init__(self, obs_dim: int, act_dim: int, hidden=(64, 64),
                 mean_net: Mlp | None = None, log_std: np.ndarray | None = None,
                 train_log_std: bool = True):
        self.obs_dim = int(obs_dim)
        self.act_dim = int(act_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.sizes = (self.obs_dim, *self.hidden, self.act_dim)
        self.mean_net = mean_net if mean_net is not None else Mlp(self.sizes)
        if self.mean_net.sizes != self.sizes:
            raise ShapeError(f"mean net sizes {self.mean_net.sizes} != policy sizes {self.sizes}")
        if log_std is None:
            log_std = np.zeros(self.act_dim)
        self.log_std = np.clip(np.asarray(log_std, dtype=np.float64), LOG_STD_MIN, LOG_STD_MAX)
        if self.log_std.shape != (self.act_dim,):
            raise ShapeError(f"log_std shape {self.log_std.shape} != ({self.act_dim},)")
        self.train_log_std = bool(train_log_std)

    @classmethod
    def init_random(cls, obs_dim, act_dim, rng, hidden=(64, 64), log_std_init=0.0,
                    train_log_std=True) -> "GaussianPolicy":
        net = Mlp.init_random((obs_dim, *hidden, act_dim), rng)
        return cls(obs_dim, act_dim, hidden, net,
                   np.full(act_dim, float(log_std_init)), train_log_std)

    # --- flat parameter vector (mean net params + log_std tail) ---

    @property
    def n_params(self) -> int:
        return self.mean_net.n_params + self.act_dim

    def flat(self) -> np.ndarray:
        return numerics.flatten(self.mean_net, self.log_std)

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_params:
            raise ShapeError(f"flat length {flat.size} != policy parameter count {self.n_params}")
        self.mean_net = numerics.unflatten(self.sizes, flat[:-self.act_dim])
        tail = flat[-self.act_dim:]
        if not np.all(np.isfinite(tail)):
            raise ValueError("non-finite log_std in flat parameters")
        self.log_std = np.clip(tail, LOG_STD_MIN, LOG_STD_MAX)

    def copy(self) -> "GaussianPolicy":
        return GaussianPolicy(self.obs_dim, self.act_dim, self.hidden,
                              self.mean_net.copy(), self.log_std.copy(), self.train_log_std)

    # --- distribution ---

    def std(self) -> np.ndarray:
        return np.exp(self.log_std)

    def mean(self, obs: np.ndarray) -> np.ndarray:
        return numerics.mlp_forward(self.mean_net, obs)

    def act(self, obs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Sample an action; unbounded (the environment clips)."""
        obs = np.asarray(obs, dtype=np.float64)
        if not np.all(np.isfinite(obs)):
            raise ValueError("non-finite observation")
        mu = self.mean(obs)
        return mu + self.std() * rng.standard_normal(self.act_dim)

    def act_batch(self, obs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        mu = self.mean(obs)
        return mu + self.std() * rng.standard_normal(mu.shape)

    def log_prob(self, obs: np.ndarray, action: np.ndarray) -> float:
        return float(self.log_prob_batch(np.asarray(obs)[None, :], np.asarray(action)[None, :])[0])

    def log_prob_batch(self, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Per-row log pi(a|s): sum_k -(a-mu)^2/(2 s^2) - log s - log(2 pi)/2."""
        mu = self.mean(np.asarray(obs, dtype=np.float64))
        actions = np.asarray(actions, dtype=np.float64)
        if actions.shape != mu.shape:
            raise ShapeError(f"action batch {actions.shape} != mean batch {mu.shape}")
        std = self.std()
        z = (actions - mu) / std
        return -0.5 * (z ** 2).sum(axis=1) - self.log_std.sum() - 0.5 * self.act_dim * LOG_2PI

    def entropy(self) -> float:
        return float(self.log_std.sum() + 0.5 * self.act_dim * (1.0 + LOG_2PI))

    # --- gradients ---

    def log_prob_weighted_grad(self, obs: np.ndarray, actions: np.ndarray,
                               weights: np.ndarray) -> np.ndarray:
        """Gradient of sum_i weights[i] * log pi(a_i|s_i) w.r.t. flat params."""
        obs = np.asarray(obs, dtype=np.float64)
        actions = np.asarray(actions, dtype=np.float64)
        weights = np.asarray(weights, dtype=np.float64)
        mu, cache = numerics.mlp_forward_cached(self.mean_net, obs)
        std = self.std()
        var = std ** 2
        # d logp / d mu = (a - mu) / var, scaled per-row by weight
        g_mu = weights[:, None] * (actions - mu) / var
        g_net, _ = numerics.mlp_backward(self.mean_net, cache, g_mu)
        # d logp / d log_std = (a - mu)^2 / var - 1
        g_ls = (weights[:, None] * (((actions - mu) ** 2) / var - 1.0)).sum(axis=0)
        if not self.train_log_std:
            g_ls = np.zeros_like(g_ls)
        return np.concatenate([g_net, g_ls])


def kl_mean(old: GaussianPolicy, new: GaussianPolicy, obs: np.ndarray) -> float:
    """Mean over obs of KL(old || new) for diagonal Gaussians."""
    if old.sizes != new.sizes:
        raise ShapeError(f"architecture mismatch: {old.sizes} vs {new.sizes}")
    obs = np.asarray(obs, dtype=np.float64)
    mu1 = old.mean(obs)
    mu2 = new.mean(obs)
    ls1, ls2 = old.log_std, new.log_std
    v1, v2 = np.exp(2 * ls1), np.exp(2 * ls2)
    per = (ls2 - ls1) + (v1 + (mu1 - mu2) ** 2) / (2.0 * v2) - 0.5
    return float(per.sum(axis=1).mean())


def kl_from_flats(template: GaussianPolicy, old_flat: np.ndarray, new_flat: np.ndarray,
                  obs: np.ndarray) -> float:
    """Mean KL between two parameter settings decoded on `template`'s shape."""
    old = template.copy()
    old.set_flat(old_flat)
    new = template.copy()
    new.set_flat(new_flat)
    return kl_mean(old, new, obs)


def kl_grad_new(old: GaussianPolicy, new: GaussianPolicy, obs: np.ndarray) -> np.ndarray:
    """Gradient of mean KL(old || new) w.r.t. the new policy's flat params.

    Exactly zero when new == old, which the Fisher-vector product relies on.
    """
    if old.sizes != new.sizes:
        raise ShapeError(f"architecture mismatch: {old.sizes} vs {new.sizes}")
    obs = np.asarray(obs, dtype=np.float64)
    n = obs.shape[0]
    mu1 = old.mean(obs)
    mu2, cache = numerics.mlp_forward_cached(new.mean_net, obs)
    v1 = np.exp(2 * old.log_std)
    v2 = np.exp(2 * new.log_std)
    g_mu = (mu2 - mu1) / v2 / n
    g_net, _ = numerics.mlp_backward(new.mean_net, cache, g_mu)
    # d/d ls2 of (ls2 - ls1) + (v1 + dmu^2)/(2 v2): 1 - (v1 + dmu^2)/v2
    g_ls = (1.0 - (v1 + (mu1 - mu2) ** 2) / v2).mean(axis=0)
    if not new.train_log_std:
        g_ls = np.zeros_like(g_ls)
    return np.concatenate([g_net, g_ls])


def kl_hessian_vec(policy: GaussianPolicy, obs: np.ndarray, v: np.ndarray) -> np.ndarray:
    """H v with H the Hessian of mean KL(theta, theta') at theta' = theta.

    At the evaluation point the KL Hessian reduces to the Gauss-Newton form
    J^T diag(1/var) J / n on the mean-net block plus 2 I on the log_std
    block (cross terms vanish), computed here with one jvp and one vjp.
    """
    obs = np.asarray(obs, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if v.size != policy.n_params:
        raise ShapeError(f"vector length {v.size} != parameter count {policy.n_params}")
    n = obs.shape[0]
    v_net, v_ls = v[:-policy.act_dim], v[-policy.act_dim:]
    _, cache = numerics.mlp_forward_cached(policy.mean_net, obs)
    d_mu = numerics.mlp_jvp(policy.mean_net, cache, v_net)
    u = d_mu / np.exp(2 * policy.log_std) / n
    h_net, _ = numerics.mlp_backward(policy.mean_net, cache, u)
    h_ls = 2.0 * v_ls
    if not policy.train_log_std:
        h_ls = np.zeros_like(h_ls)
    return np.concatenate([h_net, h_ls])


# --- checkpoints ---

def save_checkpoint(policy: GaussianPolicy, path) -> None:
    header = json.dumps({
        "obs_dim": policy.obs_dim,
        "act_dim": policy.act_dim,
        "hidden": list(policy.hidden),
        "train_log_std": policy.train_log_std,
    }).encode()
    blob = numerics.params_to_blob(policy.flat())
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC + struct.pack("<I", len(header)) + header + blob)


def load_checkpoint(path) -> GaussianPolicy:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a policy checkpoint (bad magic)")
    (hlen,) = struct.unpack("<I", data[4:8])
    meta = json.loads(data[8:8 + hlen].decode())
    flat = numerics.params_from_blob(data[8 + hlen:])
    policy = GaussianPolicy(meta["obs_dim"], meta["act_dim"], tuple(meta["hidden"]),
                            train_log_std=meta.get("train_log_std", True))
    policy.set_flat(flat)
    return policy
