"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Tensors record their parents and a backward closure; ``Tensor.backward``
walks the graph in reverse topological order accumulating gradients into
every reachable tensor with ``requires_grad``. Named ``Parameter`` sets,
an adaptive-moment optimizer, EMA parameter tracking, gradient clipping,
and a binary checkpoint format round out the training core.
"""

from __future__ import annotations

import json
import math

import numpy as np

from .errors import NameSetMismatch, NonFiniteValue, ShapeMismatch


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self._parents = tuple(parents)
        self._backward_fn = backward_fn

    @property
    def shape(self):
        return self.data.shape

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self):
        """Accumulate d(self)/d(leaf) into every reachable gradient; self must be scalar."""
        if self.data.size != 1:
            raise ShapeMismatch("backward() requires a scalar tensor")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad:
                    stack.append((parent, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # Scalar/elementwise composition used for assembling losses.
    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        if self.shape != other.shape and other.data.size != 1 and self.data.size != 1:
            raise ShapeMismatch(f"add: {self.shape} vs {other.shape}")
        out = Tensor(self.data + other.data, parents=(self, other))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.shape))

        out._backward_fn = bwd
        return out

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        return self + (other * -1.0)

    def __mul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = Tensor(self.data * other.data, parents=(self, other))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.shape))

        out._backward_fn = bwd
        return out

    def __rmul__(self, other):
        return self.__mul__(other)

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    g = g.sum(axis=tuple(range(g.ndim - len(shape))))
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


class Parameter(Tensor):
    __slots__ = ("name",)

    def __init__(self, name, data):
        super().__init__(data, requires_grad=True)
        self.name = name


class ParamSet:
    """Ordered, uniquely named parameter collection."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, data) -> Parameter:
        if name in self._params:
            raise NameSetMismatch(f"duplicate parameter name {name!r}")
        p = Parameter(name, np.array(data, dtype=np.float64))
        self._params[name] = p
        return p

    def __getitem__(self, name) -> Parameter:
        return self._params[name]

    def __contains__(self, name) -> bool:
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def zero_grad(self):
        for p in self._params.values():
            p.zero_grad()

    def clone(self) -> "ParamSet":
        out = ParamSet()
        for name, p in self._params.items():
            out.add(name, p.data.copy())
        return out

    def copy_from(self, other: "ParamSet"):
        _require_same_names(self, other)
        for name, p in self._params.items():
            np.copyto(p.data, other[name].data)

    def detached(self) -> dict[str, Tensor]:
        """Name -> gradient-free view sharing the underlying arrays."""
        return {name: Tensor(p.data) for name, p in self._params.items()}


def _require_same_names(a: ParamSet, b: ParamSet):
    if a.names() != b.names():
        raise NameSetMismatch(f"parameter names differ: {a.names()} vs {b.names()}")
    for name, p in a.items():
        if p.shape != b[name].shape:
            raise ShapeMismatch(f"{name}: {p.shape} vs {b[name].shape}")


def glorot_uniform(shape, rng) -> np.ndarray:
    fan_in = shape[0] if len(shape) > 1 else shape[0]
    fan_out = shape[1] if len(shape) > 1 else shape[0]
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


# --- primitives ---------------------------------------------------------------


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w (+ b); x is (n,) or (N, n), w is (n, m), b is (m,)."""
    if x.data.ndim not in (1, 2) or w.data.ndim != 2:
        raise ShapeMismatch(f"linear: bad ranks {x.shape} @ {w.shape}")
    if x.shape[-1] != w.shape[0]:
        raise ShapeMismatch(f"linear: {x.shape} @ {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeMismatch(f"linear: bias {b.shape} for {w.shape}")
    y = x.data @ w.data
    if b is not None:
        y = y + b.data
    parents = (x, w) if b is None else (x, w, b)
    out = Tensor(y, parents=parents)

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g @ w.data.T)
        if w.requires_grad:
            if x.data.ndim == 1:
                w._accumulate(np.outer(x.data, g))
            else:
                w._accumulate(x.data.T @ g)
        if b is not None and b.requires_grad:
            b._accumulate(g if g.ndim == 1 else g.sum(axis=0))

    out._backward_fn = bwd
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0), parents=(x,))

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g * (x.data > 0.0))

    out._backward_fn = bwd
    return out


def concat(xs, axis: int = -1) -> Tensor:
    xs = [x if isinstance(x, Tensor) else Tensor(x) for x in xs]
    try:
        data = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"concat: {[x.shape for x in xs]}") from exc
    out = Tensor(data, parents=tuple(xs))
    sizes = [x.data.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for x, piece in zip(xs, np.split(g, splits, axis=axis)):
            if x.requires_grad:
                x._accumulate(piece)

    out._backward_fn = bwd
    return out


def weighted_sum(xs, ws) -> Tensor:
    """Sum of w_i * x_i for plain-float weights over same-shape tensors."""
    if len(xs) != len(ws):
        raise ShapeMismatch("weighted_sum: length mismatch")
    if not xs:
        raise ShapeMismatch("weighted_sum: empty input")
    shape = xs[0].shape
    if any(x.shape != shape for x in xs):
        raise ShapeMismatch(f"weighted_sum: {[x.shape for x in xs]}")
    data = sum(float(w) * x.data for w, x in zip(ws, xs))
    out = Tensor(data, parents=tuple(xs))

    def bwd(g):
        for w, x in zip(ws, xs):
            if x.requires_grad:
                x._accumulate(float(w) * g)

    out._backward_fn = bwd
    return out


def mean_pool(x: Tensor) -> Tensor:
    """Mean over rows: (N, d) -> (d,). Gradient spreads uniformly as g/N."""
    if x.data.ndim != 2 or x.shape[0] == 0:
        raise ShapeMismatch(f"mean_pool: need non-empty (N, d), got {x.shape}")
    n = x.shape[0]
    out = Tensor(x.data.mean(axis=0), parents=(x,))

    def bwd(g):
        if x.requires_grad:
            x._accumulate(np.tile(g / n, (n, 1)))

    out._backward_fn = bwd
    return out


def take_rows(x: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    out = Tensor(x.data[idx], parents=(x,))

    def bwd(g):
        if x.requires_grad:
            acc = np.zeros_like(x.data)
            np.add.at(acc, idx, g)
            x._accumulate(acc)

    out._backward_fn = bwd
    return out


def scale_rows(x: Tensor, scales) -> Tensor:
    """Multiply row i of (N, d) by the plain-float scales[i]."""
    s = np.asarray(scales, dtype=np.float64)
    if x.data.ndim != 2 or s.shape != (x.shape[0],):
        raise ShapeMismatch(f"scale_rows: {x.shape} with {s.shape}")
    out = Tensor(x.data * s[:, None], parents=(x,))

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g * s[:, None])

    out._backward_fn = bwd
    return out


def segment_sum(x: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Sum rows of (E, d) into (num_segments, d) buckets.

    Within a bucket each column is summed in ascending value order, so the
    result is independent of row order (bit-exact under relabeling).
    """
    ids = np.asarray(segment_ids, dtype=np.int64)
    if x.data.ndim != 2 or ids.shape != (x.shape[0],):
        raise ShapeMismatch(f"segment_sum: {x.shape} with ids {ids.shape}")
    data = np.zeros((num_segments, x.shape[1]))
    order = np.argsort(ids, kind="stable")
    sorted_ids = ids[order]
    bounds = np.searchsorted(sorted_ids, np.arange(num_segments + 1))
    rows = x.data[order]
    for seg in range(num_segments):
        lo, hi = bounds[seg], bounds[seg + 1]
        if hi > lo:
            data[seg] = np.sort(rows[lo:hi], axis=0).sum(axis=0)
    out = Tensor(data, parents=(x,))

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g[ids])

    out._backward_fn = bwd
    return out


def reshape(x: Tensor, shape) -> Tensor:
    try:
        data = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatch(f"reshape {x.shape} -> {shape}") from exc
    out = Tensor(data, parents=(x,))

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g.reshape(x.shape))

    out._backward_fn = bwd
    return out


def mse(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"mse: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    out = Tensor(np.mean(diff**2), parents=(a, b))
    scale = 2.0 / diff.size

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * scale * diff)
        if b.requires_grad:
            b._accumulate(-g * scale * diff)

    out._backward_fn = bwd
    return out


def sq_distance(a: Tensor, b: Tensor) -> Tensor:
    """Squared L2 distance, summed over all entries."""
    if a.shape != b.shape:
        raise ShapeMismatch(f"sq_distance: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    out = Tensor(np.sum(diff**2), parents=(a, b))

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * 2.0 * diff)
        if b.requires_grad:
            b._accumulate(-g * 2.0 * diff)

    out._backward_fn = bwd
    return out


def cross_entropy(logits: Tensor, classes) -> Tensor:
    """Mean negative log-likelihood of integer classes under softmax(logits)."""
    cls = np.asarray(classes, dtype=np.int64)
    if logits.data.ndim != 2 or cls.shape != (logits.shape[0],):
        raise ShapeMismatch(f"cross_entropy: {logits.shape} with {cls.shape}")
    if cls.min() < 0 or cls.max() >= logits.shape[1]:
        raise ShapeMismatch("cross_entropy: class index out of range")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    out = Tensor(-log_probs[np.arange(n), cls].mean(), parents=(logits,))

    def bwd(g):
        if logits.requires_grad:
            grad = np.exp(log_probs)
            grad[np.arange(n), cls] -= 1.0
            logits._accumulate(g * grad / n)

    out._backward_fn = bwd
    return out


def replace_slice_rows(base: np.ndarray, rows, col_start: int, vec: Tensor) -> Tensor:
    """Copy of the constant base with vec written into base[rows, col_start:...]."""
    rows = np.asarray(rows, dtype=np.int64)
    width = vec.shape[0]
    if vec.data.ndim != 1 or col_start + width > base.shape[1]:
        raise ShapeMismatch(f"replace_slice_rows: {vec.shape} into {base.shape}")
    data = base.copy()
    data[rows, col_start : col_start + width] = vec.data
    out = Tensor(data, parents=(vec,))

    def bwd(g):
        if vec.requires_grad:
            vec._accumulate(g[rows, col_start : col_start + width].sum(axis=0))

    out._backward_fn = bwd
    return out


def assert_finite(x: Tensor, context: str = "value"):
    if not np.all(np.isfinite(x.data)):
        raise NonFiniteValue(f"non-finite {context}")


# --- optimizer / parameter maintenance ----------------------------------------


class Adam:
    """Adaptive-moment optimizer; moment state keyed by parameter name."""

    def __init__(self, params: ParamSet, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = {
            name: (np.zeros_like(p.data), np.zeros_like(p.data))
            for name, p in params.items()
        }
        self.t = 0

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params.items():
            if p.grad is None:
                continue
            if not np.all(np.isfinite(p.grad)):
                raise NonFiniteValue(f"non-finite gradient for {name!r}")
            m, v = self.state[name]
            m *= b1
            m += (1 - b1) * p.grad
            v *= b2
            v += (1 - b2) * p.grad**2
            m_hat = m / (1 - b1**self.t)
            v_hat = v / (1 - b2**self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_global_norm(paramsets, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = 0.0
    for ps in paramsets:
        for p in ps.values():
            if p.grad is not None:
                total += float(np.sum(p.grad**2))
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0.0:
        factor = max_norm / norm
        for ps in paramsets:
            for p in ps.values():
                if p.grad is not None:
                    p.grad *= factor
    return norm


def ema_update(target: ParamSet, online: ParamSet, tau: float) -> ParamSet:
    """target <- tau * target + (1 - tau) * online, elementwise."""
    _require_same_names(target, online)
    for name, p in target.items():
        p.data *= tau
        p.data += (1.0 - tau) * online[name].data
    return target


# --- checkpoints ---------------------------------------------------------------


def save_checkpoint(path, sections: dict[str, ParamSet], meta: dict | None = None):
    """Binary checkpoint: one JSON header line, then raw little-endian float64."""
    header = {
        "format": 1,
        "meta": meta or {},
        "params": [
            [section, name, list(p.shape)]
            for section, ps in sections.items()
            for name, p in ps.items()
        ],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode())
        fh.write(b"\n")
        for ps in sections.values():
            for _, p in ps.items():
                fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_checkpoint(path, expect: dict[str, ParamSet] | None = None):
    """Returns (sections, meta); validates names/shapes against expect if given."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        sections: dict[str, ParamSet] = {}
        for section, name, shape in header["params"]:
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise ShapeMismatch(f"truncated checkpoint at {section}.{name}")
            arr = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
            sections.setdefault(section, ParamSet()).add(name, arr)
    if expect is not None:
        if sorted(expect) != sorted(sections):
            raise ShapeMismatch(
                f"checkpoint sections {sorted(sections)} != expected {sorted(expect)}"
            )
        for key, ps in expect.items():
            _require_same_names(sections[key], ps)
    return sections, header["meta"]
