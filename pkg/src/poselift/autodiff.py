"""Minimal reverse-mode automatic differentiation on float64 arrays.

Only the operators the pipeline needs: elementwise arithmetic and
nonlinearities, (batched) matmul, reductions, slicing/stacking, a 1D
temporal convolution, an LSTM cell, the link-transform builder used by
the window optimizer, and the two classification losses.  Graphs are
rebuilt per step; backward accumulates into `.grad` until reset.
"""

from __future__ import annotations

import json

import numpy as np

MAX_DIMS = 3


class Tensor:
    """Array-valued node in a computation graph."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        if self.data.ndim > MAX_DIMS:
            raise ValueError(f"tensors are limited to {MAX_DIMS} dims, got {self.data.ndim}")
        self.grad = np.zeros_like(self.data)
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    # Operator sugar; all call the module-level ops below.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data, (a, b))

    def bw(g):
        a.grad += _unbroadcast(g, a.data.shape)
        b.grad += _unbroadcast(g, b.data.shape)

    out._backward = bw
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data, (a, b))

    def bw(g):
        a.grad += _unbroadcast(g, a.data.shape)
        b.grad -= _unbroadcast(g, b.data.shape)

    out._backward = bw
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data, (a, b))

    def bw(g):
        a.grad += _unbroadcast(g * b.data, a.data.shape)
        b.grad += _unbroadcast(g * a.data, b.data.shape)

    out._backward = bw
    return out


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data / b.data, (a, b))

    def bw(g):
        a.grad += _unbroadcast(g / b.data, a.data.shape)
        b.grad += _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)

    out._backward = bw
    return out


def square(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data * a.data, (a,))

    def bw(g):
        a.grad += 2.0 * a.data * g

    out._backward = bw
    return out


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    root = np.sqrt(a.data)
    out = Tensor(root, (a,))

    def bw(g):
        a.grad += 0.5 / root * g

    out._backward = bw
    return out


def exp(a) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.data)
    out = Tensor(e, (a,))

    def bw(g):
        a.grad += e * g

    out._backward = bw
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.log(a.data), (a,))

    def bw(g):
        a.grad += g / a.data

    out._backward = bw
    return out


def sin(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.sin(a.data), (a,))

    def bw(g):
        a.grad += np.cos(a.data) * g

    out._backward = bw
    return out


def cos(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.cos(a.data), (a,))

    def bw(g):
        a.grad -= np.sin(a.data) * g

    out._backward = bw
    return out


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    out = Tensor(t, (a,))

    def bw(g):
        a.grad += (1.0 - t * t) * g

    out._backward = bw
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(s, (a,))

    def bw(g):
        a.grad += s * (1.0 - s) * g

    out._backward = bw
    return out


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0), (a,))

    def bw(g):
        a.grad += (a.data > 0.0) * g

    out._backward = bw
    return out


def clamp(a, lo=None, hi=None) -> Tensor:
    """Clip values; gradient is zero outside the active range."""
    a = as_tensor(a)
    out = Tensor(np.clip(a.data, lo, hi), (a,))
    inside = np.ones_like(a.data, dtype=bool)
    if lo is not None:
        inside &= a.data >= lo
    if hi is not None:
        inside &= a.data <= hi

    def bw(g):
        a.grad += inside * g

    out._backward = bw
    return out


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data @ b.data, (a, b))

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        a.grad += _unbroadcast(ga, a.data.shape)
        b.grad += _unbroadcast(gb, b.data.shape)

    out._backward = bw
    return out


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), (a,))

    def bw(g):
        if axis is None:
            a.grad += g
        elif keepdims:
            a.grad += np.broadcast_to(g, a.data.shape)
        else:
            a.grad += np.broadcast_to(np.expand_dims(g, axis), a.data.shape)

    out._backward = bw
    return out


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def take(a, key) -> Tensor:
    """Indexing/slicing; duplicate integer indices accumulate on backward."""
    a = as_tensor(a)
    out = Tensor(a.data[key], (a,))
    fancy = isinstance(key, np.ndarray) or (
        isinstance(key, tuple) and any(isinstance(k, np.ndarray) for k in key)
    )

    def bw(g):
        if fancy:
            np.add.at(a.grad, key, g)
        else:
            a.grad[key] += g

    out._backward = bw
    return out


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape), (a,))

    def bw(g):
        a.grad += g.reshape(a.data.shape)

    out._backward = bw
    return out


def concat(parts, axis=0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis), tuple(parts))
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            p.grad += g[tuple(sl)]

    out._backward = bw
    return out


def stack(parts, axis=0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = Tensor(np.stack([p.data for p in parts], axis=axis), tuple(parts))

    def bw(g):
        for i, p in enumerate(parts):
            p.grad += np.take(g, i, axis=axis)

    out._backward = bw
    return out


def dense(x, w, b) -> Tensor:
    """Affine map x @ w + b."""
    return add(matmul(x, w), b)


def conv1d(x, w, b, dilation=1, causal=True) -> Tensor:
    """Temporal convolution over a (T, C_in) sequence.

    w has shape (K, C_in, C_out), b has shape (C_out,).  Out-of-range
    taps are edge-replicated (index clipping), so a constant input stays
    constant.  Causal mode looks only at the present and past.
    """
    x = as_tensor(x)
    w = as_tensor(w)
    if x.data.ndim != 2:
        raise ValueError(f"conv1d input must be (T, C_in), got {x.data.shape}")
    K, c_in, _ = w.data.shape
    if x.data.shape[1] != c_in:
        raise ValueError(
            f"channel mismatch: input has {x.data.shape[1]}, kernel expects {c_in}"
        )
    T = x.data.shape[0]
    t = np.arange(T)
    terms = []
    for k in range(K):
        if causal:
            offset = -(K - 1 - k) * dilation
        else:
            offset = (k - K // 2) * dilation
        idx = np.clip(t + offset, 0, T - 1)
        terms.append(matmul(take(x, idx), take(w, k)))
    out = terms[0]
    for term in terms[1:]:
        out = add(out, term)
    return add(out, b)


def lstm_cell(x, h, c, wx, wh, b):
    """One LSTM step with sigmoid gates and tanh candidate.

    x: (B, D), h/c: (B, H), wx: (D, 4H), wh: (H, 4H), b: (4H,).
    Gate order along the last axis: input, forget, candidate, output.
    Returns (h_next, c_next).
    """
    x, h, c = as_tensor(x), as_tensor(h), as_tensor(c)
    wx, wh, b = as_tensor(wx), as_tensor(wh), as_tensor(b)
    H = h.data.shape[-1]
    if wx.data.shape != (x.data.shape[-1], 4 * H) or wh.data.shape != (H, 4 * H):
        raise ValueError(
            f"LSTM weight shapes {wx.data.shape}, {wh.data.shape} do not match "
            f"input dim {x.data.shape[-1]} and hidden dim {H}"
        )
    gates = add(add(matmul(x, wx), matmul(h, wh)), b)
    i = sigmoid(take(gates, (slice(None), slice(0, H))))
    f = sigmoid(take(gates, (slice(None), slice(H, 2 * H))))
    g = tanh(take(gates, (slice(None), slice(2 * H, 3 * H))))
    o = sigmoid(take(gates, (slice(None), slice(3 * H, 4 * H))))
    c_next = add(mul(f, c), mul(i, g))
    h_next = mul(o, tanh(c_next))
    return h_next, c_next


def link_transform(theta, d, a, alpha: float) -> Tensor:
    """Batched 4x4 link transforms from per-frame joint angles.

    theta: (F,) tensor; d, a: scalar tensors (link lengths); alpha is a
    fixed twist angle.  Returns (F, 4, 4).  Matches the closed form of
    Rot(z, theta) Trans(z, d) Trans(x, a) Rot(x, alpha).
    """
    theta, d, a = as_tensor(theta), as_tensor(d), as_tensor(a)
    th = theta.data
    F = th.shape[0]
    ct, st = np.cos(th), np.sin(th)
    ca, sa = float(np.cos(alpha)), float(np.sin(alpha))
    av = float(a.data)
    dv = float(d.data)
    m = np.zeros((F, 4, 4))
    m[:, 0, 0] = ct
    m[:, 0, 1] = -st * ca
    m[:, 0, 2] = st * sa
    m[:, 0, 3] = av * ct
    m[:, 1, 0] = st
    m[:, 1, 1] = ct * ca
    m[:, 1, 2] = -ct * sa
    m[:, 1, 3] = av * st
    m[:, 2, 1] = sa
    m[:, 2, 2] = ca
    m[:, 2, 3] = dv
    m[:, 3, 3] = 1.0
    out = Tensor(m, (theta, d, a))

    def bw(g):
        theta.grad += (
            -st * g[:, 0, 0]
            - ct * ca * g[:, 0, 1]
            + ct * sa * g[:, 0, 2]
            - av * st * g[:, 0, 3]
            + ct * g[:, 1, 0]
            - st * ca * g[:, 1, 1]
            + st * sa * g[:, 1, 2]
            + av * ct * g[:, 1, 3]
        )
        d.grad += g[:, 2, 3].sum()
        a.grad += (ct * g[:, 0, 3] + st * g[:, 1, 3]).sum()

    out._backward = bw
    return out


def root_transform(position, rotation: np.ndarray) -> Tensor:
    """Batched root matrices from per-frame positions and a fixed rotation.

    position: (F, 3) tensor, rotation: constant (3, 3).  Returns (F, 4, 4).
    """
    position = as_tensor(position)
    F = position.data.shape[0]
    m = np.zeros((F, 4, 4))
    m[:, :3, :3] = rotation
    m[:, :3, 3] = position.data
    m[:, 3, 3] = 1.0
    out = Tensor(m, (position,))

    def bw(g):
        position.grad += g[:, :3, 3]

    out._backward = bw
    return out


PROB_EPS = 1e-7


def bce_loss(pred, target) -> Tensor:
    """Mean binary cross entropy; predictions clamped away from 0 and 1."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.data.shape != target.data.shape:
        raise ValueError(
            f"prediction shape {pred.data.shape} != target shape {target.data.shape}"
        )
    p = clamp(pred, PROB_EPS, 1.0 - PROB_EPS)
    per = add(mul(target, log(p)), mul(sub(1.0, target), log(sub(1.0, p))))
    return mul(tmean(per), -1.0)


def ce_loss(logits, target_index) -> Tensor:
    """Mean cross entropy from raw logits.

    logits: (C,) or (B, C); target_index: int or length-B index array.
    """
    logits = as_tensor(logits)
    if logits.data.ndim == 1:
        logits = reshape(logits, (1, logits.data.shape[0]))
        target_index = np.atleast_1d(target_index)
    target_index = np.asarray(target_index, dtype=int)
    B, C = logits.data.shape
    if target_index.shape != (B,):
        raise ValueError(f"target shape {target_index.shape} != ({B},)")
    if np.any((target_index < 0) | (target_index >= C)):
        raise ValueError("class index out of range")
    # Stable log-sum-exp with a constant shift.
    shift = logits.data.max(axis=1, keepdims=True)
    z = sub(logits, shift)
    lse = log(tsum(exp(z), axis=1))
    picked = take(z, (np.arange(B), target_index))
    return tmean(sub(lse, picked))


def sse(a, b, weights=None) -> Tensor:
    """Sum of squared differences, optionally weighted elementwise."""
    d = sub(a, b)
    q = square(d)
    if weights is not None:
        q = mul(q, weights)
    return tsum(q)


def backward(loss: Tensor) -> None:
    """Reverse-accumulate gradients of a scalar loss into every leaf.

    Interior node gradients are scratch space reset on every call; leaf
    gradients accumulate across calls until explicitly zeroed.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    for node in topo:
        if node._backward is not None:
            node.grad[...] = 0.0
    loss.grad = loss.grad + np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


class Adam:
    """Bias-corrected Adam over an explicit parameter list."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1**t)
            v_hat = v / (1.0 - b2**t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def check_gradients(build_loss, params, rng, n_points=100, step=1e-5,
                    rtol=1e-4, atol=1e-7):
    """Compare analytic gradients against central finite differences.

    build_loss() must rebuild the graph from the current parameter data
    and return a scalar Tensor.  n_points coordinates are sampled across
    the parameter list; returns the worst relative error observed.
    Raises AssertionError on the first coordinate exceeding tolerance.
    """
    for p in params:
        p.zero_grad()
    loss = build_loss()
    backward(loss)
    analytic = [p.grad.copy() for p in params]

    sizes = np.array([p.data.size for p in params])
    total = int(sizes.sum())
    n_points = min(n_points, total)
    coords = rng.choice(total, size=n_points, replace=False)
    bounds = np.cumsum(sizes)
    worst = 0.0
    for flat in sorted(int(c) for c in coords):
        pi = int(np.searchsorted(bounds, flat, side="right"))
        local = flat - (0 if pi == 0 else bounds[pi - 1])
        p = params[pi]
        orig = p.data.flat[local]
        p.data.flat[local] = orig + step
        up = float(build_loss().data)
        p.data.flat[local] = orig - step
        down = float(build_loss().data)
        p.data.flat[local] = orig
        numeric = (up - down) / (2.0 * step)
        a = analytic[pi].flat[local]
        err = abs(a - numeric)
        scale = max(abs(a), abs(numeric))
        rel = err / scale if scale > 0 else 0.0
        worst = max(worst, rel if err > atol else 0.0)
        if err > atol and rel > rtol:
            raise AssertionError(
                f"gradient mismatch at param {pi} flat index {local}: "
                f"analytic {a:.10g} vs numeric {numeric:.10g} (rel {rel:.3g})"
            )
    return worst


WEIGHTS_FORMAT_VERSION = 1


def save_weights(prefix, named_params: dict) -> None:
    """Write parameters as raw little-endian float64 plus a JSON manifest.

    Produces `<prefix>.bin` (concatenated values) and `<prefix>.json`
    (format version, dtype, and per-tensor name/shape/offset).
    """
    entries = []
    offset = 0
    blobs = []
    for name, p in named_params.items():
        arr = np.ascontiguousarray(p.data, dtype="<f8")
        blobs.append(arr.tobytes())
        entries.append({"name": name, "shape": list(arr.shape),
                        "offset": offset, "count": int(arr.size)})
        offset += arr.size
    with open(f"{prefix}.bin", "wb") as fh:
        fh.write(b"".join(blobs))
    manifest = {
        "format_version": WEIGHTS_FORMAT_VERSION,
        "dtype": "<f8",
        "tensors": entries,
    }
    with open(f"{prefix}.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_weights(prefix) -> dict:
    """Inverse of save_weights; returns {name: Tensor}."""
    with open(f"{prefix}.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    version = manifest.get("format_version")
    if version != WEIGHTS_FORMAT_VERSION:
        from .exceptions import FormatVersionError

        raise FormatVersionError(
            f"weights manifest version {version} != {WEIGHTS_FORMAT_VERSION}"
        )
    raw = np.fromfile(f"{prefix}.bin", dtype=manifest["dtype"])
    out = {}
    for entry in manifest["tensors"]:
        lo = entry["offset"]
        hi = lo + entry["count"]
        out[entry["name"]] = Tensor(raw[lo:hi].reshape(entry["shape"]))
    return out
