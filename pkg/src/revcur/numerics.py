"""Dense MLP with reverse-mode gradients, flat parameter vectors, and a
conjugate-gradient solver.

Everything is float64. Networks are small (two hidden layers of 32 to 64
units), so all operations run as plain numpy matrix products. The flat
parameter layout is [W0.ravel(), b0, W1.ravel(), b1, ...]; callers that
append extra trainable scalars (for example a policy log-std vector) manage
the tail themselves.
"""
from __future__ import annotations

import csv
import io
import struct
from typing import Callable, Sequence

import numpy as np

BLOB_MAGIC = b"RCPM"


class ShapeError(ValueError):
    pass


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite values in {what}")


class Mlp:
    """Feed-forward net: tanh hidden layers, identity output.

    sizes = (n_in, h1, ..., n_out). Weights are stored row-major with shape
    (n_out_layer, n_in_layer).
    """

    def __init__(self, sizes: Sequence[int], weights=None, biases=None):
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ShapeError(f"bad layer sizes {sizes}")
        self.sizes = sizes
        if weights is None:
            weights = [np.zeros((sizes[i + 1], sizes[i])) for i in range(len(sizes) - 1)]
            biases = [np.zeros(sizes[i + 1]) for i in range(len(sizes) - 1)]
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i + 1], sizes[i]) or b.shape != (sizes[i + 1],):
                raise ShapeError(f"layer {i}: weight {w.shape} / bias {b.shape} "
                                 f"inconsistent with sizes {sizes}")
            _check_finite(w, f"weight layer {i}")
            _check_finite(b, f"bias layer {i}")

    @property
    def n_in(self) -> int:
        return self.sizes[0]

    @property
    def n_out(self) -> int:
        return self.sizes[-1]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    @classmethod
    def init_random(cls, sizes: Sequence[int], rng: np.random.Generator,
                    zero_output: bool = False) -> "Mlp":
        """Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases."""
        sizes = tuple(int(s) for s in sizes)
        weights, biases = [], []
        for i in range(len(sizes) - 1):
            fan_in, fan_out = sizes[i], sizes[i + 1]
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
            if zero_output and i == len(sizes) - 2:
                w = np.zeros_like(w)
            weights.append(w)
            biases.append(np.zeros(fan_out))
        return cls(sizes, weights, biases)

    def copy(self) -> "Mlp":
        return Mlp(self.sizes, [w.copy() for w in self.weights],
                   [b.copy() for b in self.biases])


def mlp_forward(mlp: Mlp, x: np.ndarray) -> np.ndarray:
    """Forward pass; accepts a single input vector or a (B, n_in) batch."""
    out, _ = mlp_forward_cached(mlp, x)
    return out


def mlp_forward_cached(mlp: Mlp, x: np.ndarray):
    """Forward pass returning (output, activation cache) for backprop.

    The cache holds post-activation values H_0..H_{L-1} where H_0 is the
    input; the raw output is not cached (identity activation).
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.ndim != 2 or h.shape[1] != mlp.n_in:
        raise ShapeError(f"input shape {x.shape} does not match mlp input size {mlp.n_in}")
    cache = [h]
    last = len(mlp.weights) - 1
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        z = h @ w.T + b
        h = z if i == last else np.tanh(z)
        if i != last:
            cache.append(h)
    return (h[0] if single else h), cache


def mlp_backward(mlp: Mlp, cache, output_grad: np.ndarray):
    """Backprop of sum_b output_grad[b] . output[b] through the net.

    Returns (param_grad_flat, input_grad) where param_grad_flat follows the
    flatten() layout and input_grad matches the cached input's shape.
    """
    og = np.asarray(output_grad, dtype=np.float64)
    single = og.ndim == 1
    delta = og[None, :] if single else og
    if delta.shape[1] != mlp.n_out:
        raise ShapeError(f"output_grad shape {og.shape} does not match output size {mlp.n_out}")
    if delta.shape[0] != cache[0].shape[0]:
        raise ShapeError("output_grad batch size does not match cached forward pass")
    grads_w = [None] * len(mlp.weights)
    grads_b = [None] * len(mlp.weights)
    for i in range(len(mlp.weights) - 1, -1, -1):
        h_prev = cache[i]
        grads_w[i] = delta.T @ h_prev
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ mlp.weights[i]) * (1.0 - cache[i] ** 2)
    input_grad = delta @ mlp.weights[0]
    flat = np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(grads_w, grads_b)])
    return flat, (input_grad[0] if single else input_grad)


def mlp_jvp(mlp: Mlp, cache, flat_dir: np.ndarray) -> np.ndarray:
    """Directional derivative of the output w.r.t. parameters (forward mode).

    flat_dir uses the flatten() layout; returns d(output) with the batch
    shape of the cached forward pass.
    """
    dws, dbs = unflatten_into(mlp.sizes, np.asarray(flat_dir, dtype=np.float64))
    dh = np.zeros_like(cache[0])
    last = len(mlp.weights) - 1
    h_post = cache[1:]
    for i, (w, dw, db) in enumerate(zip(mlp.weights, dws, dbs)):
        dz = dh @ w.T + cache[i] @ dw.T + db
        if i == last:
            dh = dz
        else:
            dh = dz * (1.0 - h_post[i] ** 2)
    return dh


def flatten(mlp: Mlp, tail: np.ndarray | None = None) -> np.ndarray:
    """Pack parameters (and an optional extra tail vector) into one vector."""
    parts = [np.concatenate([w.ravel(), b]) for w, b in zip(mlp.weights, mlp.biases)]
    if tail is not None:
        parts.append(np.asarray(tail, dtype=np.float64).ravel())
    return np.concatenate(parts)


def unflatten_into(sizes: Sequence[int], flat: np.ndarray):
    """Split a flat vector into per-layer (weights, biases) lists."""
    flat = np.asarray(flat, dtype=np.float64)
    ws, bs = [], []
    pos = 0
    for i in range(len(sizes) - 1):
        n_out, n_in = sizes[i + 1], sizes[i]
        ws.append(flat[pos:pos + n_out * n_in].reshape(n_out, n_in))
        pos += n_out * n_in
        bs.append(flat[pos:pos + n_out])
        pos += n_out
    if pos != flat.size:
        raise ShapeError(f"flat vector length {flat.size} does not match sizes {tuple(sizes)} "
                         f"(expected {pos})")
    return ws, bs


def unflatten(sizes: Sequence[int], flat: np.ndarray) -> Mlp:
    _check_finite(np.asarray(flat), "flat parameters")
    ws, bs = unflatten_into(sizes, flat)
    return Mlp(sizes, ws, bs)


def param_count(sizes: Sequence[int]) -> int:
    return sum(sizes[i + 1] * sizes[i] + sizes[i + 1] for i in range(len(sizes) - 1))


def cg_solve(apply_a: Callable[[np.ndarray], np.ndarray], b: np.ndarray,
             max_iters: int = 10, residual_tol: float = 1e-10) -> np.ndarray:
    """Conjugate gradients for SPD apply_a; returns the lowest-residual iterate.

    Stops when ||Ax - b|| <= residual_tol * ||b||. Raises on non-finite
    intermediates, naming the offending iteration.
    """
    b = np.asarray(b, dtype=np.float64)
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    b_norm = float(np.sqrt(rs))
    if b_norm == 0.0:
        return x
    best_x, best_res = x.copy(), np.sqrt(rs)
    for it in range(max_iters):
        ap = apply_a(p)
        if not np.all(np.isfinite(ap)):
            raise FloatingPointError(f"cg_solve: non-finite operator output at iteration {it}")
        denom = float(p @ ap)
        if denom <= 0 or not np.isfinite(denom):
            raise FloatingPointError(f"cg_solve: non-SPD curvature {denom!r} at iteration {it}")
        alpha = rs / denom
        x = x + alpha * p
        r = r - alpha * ap
        rs_new = float(r @ r)
        if not np.isfinite(rs_new):
            raise FloatingPointError(f"cg_solve: non-finite residual at iteration {it}")
        res = np.sqrt(rs_new)
        if res < best_res:
            best_x, best_res = x.copy(), res
        if res <= residual_tol * b_norm:
            return x
        p = r + (rs_new / rs) * p
        rs = rs_new
    return best_x


def params_to_blob(flat: np.ndarray) -> bytes:
    """Little-endian binary blob: magic, u32 length, raw f64 array."""
    flat = np.asarray(flat, dtype=np.float64)
    return BLOB_MAGIC + struct.pack("<I", flat.size) + flat.astype("<f8").tobytes()


def params_from_blob(blob: bytes) -> np.ndarray:
    if blob[:4] != BLOB_MAGIC:
        raise ValueError("bad parameter blob: wrong magic bytes")
    (n,) = struct.unpack("<I", blob[4:8])
    arr = np.frombuffer(blob[8:8 + 8 * n], dtype="<f8").astype(np.float64)
    if arr.size != n:
        raise ValueError(f"bad parameter blob: expected {n} values, got {arr.size}")
    return arr


def params_to_csv(flat: np.ndarray) -> str:
    """One-column CSV (repr precision preserves the exact doubles)."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["value"])
    for v in np.asarray(flat, dtype=np.float64):
        writer.writerow([repr(float(v))])
    return buf.getvalue()


def params_from_csv(text: str) -> np.ndarray:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["value"]:
        raise ValueError("bad parameter CSV: missing 'value' header")
    return np.array([float(r[0]) for r in rows[1:]], dtype=np.float64)
