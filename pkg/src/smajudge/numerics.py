"""Self-contained differentiable-computation core.

Dense tensors over numpy arrays, a linear tape of executed primitives,
reverse-mode gradients, inverted dropout, and an Adam optimizer.  Everything
runs in double precision by default so gradients can be validated against
central finite differences; single precision is available as a build option
via :func:`set_default_dtype`.
"""

from __future__ import annotations

import numpy as np

LOG_CLAMP = 1e-12

_DTYPE = np.float64


def set_default_dtype(dtype) -> None:
    """Switch the scalar precision for newly created tensors."""
    global _DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}")
    _DTYPE = dtype.type


def get_default_dtype():
    return _DTYPE


class NonFiniteError(ArithmeticError):
    """A forward primitive produced a NaN or infinity."""


class GradientError(RuntimeError):
    """Misuse of the tape: detached loss, non-scalar loss, double backward."""


class RngStream:
    """Deterministic random value stream.

    Backed by PCG64, which produces the same sequence for the same seed on
    every platform.  ``counter`` tracks the number of draw calls made.
    """

    def __init__(self, seed: int, spawn_key: tuple[int, ...] = ()):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = int(seed)
        self.spawn_key = tuple(spawn_key)
        self.counter = 0
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=self.spawn_key))
        )

    def spawn(self, key: int) -> "RngStream":
        """Derive an independent child stream; deterministic in (seed, key)."""
        return RngStream(self.seed, self.spawn_key + (int(key),))

    def random(self, shape=None) -> np.ndarray | float:
        self.counter += 1
        return self._gen.random(shape)

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        self.counter += 1
        return self._gen.uniform(low, high, shape)

    def integers(self, low: int, high: int, size=None):
        self.counter += 1
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        self.counter += 1
        return self._gen.permutation(n)

    def choice(self, seq):
        return seq[int(self.integers(0, len(seq)))]


class Tensor:
    """Dense real array plus gradient slot.

    ``data`` is row-major and always finite after a forward primitive;
    ``tracked`` marks tensors produced through (or feeding) the active tape.
    """

    __slots__ = ("data", "requires_grad", "grad", "tracked")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.tracked = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:  # pragma: no cover
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=_DTYPE))


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of executed primitives.

    The reverse pass visits records in exact reverse execution order.  A tape
    may be consumed by :func:`backward` once; reuse raises.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, object]] = []
        self._spent = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self._records)


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite output of {op}")


def _make(out_data: np.ndarray, op: str, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Wrap a forward result; record on the active tape when gradients flow."""
    _check_finite(out_data, op)
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad or t.tracked for t in inputs):
        out.tracked = True
        tape._records.append((out, backward_fn))
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not (t.requires_grad or t.tracked):
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype)
    else:
        t.grad += g


def backward(loss: Tensor, tape: Tape) -> None:
    """Reverse pass: populate ``grad`` on every tensor reachable from ``loss``."""
    if loss.size != 1:
        raise GradientError("backward requires a scalar loss")
    if not loss.tracked:
        raise GradientError("detached loss: no requires_grad ancestor on this tape")
    if tape._spent:
        raise GradientError("tape already consumed; build a fresh tape per backward pass")
    tape._spent = True
    loss.grad = np.ones_like(loss.data)
    for out, fn in reversed(tape._records):
        if out.grad is None:
            continue
        fn(out.grad)


# ---------------------------------------------------------------------------
# forward primitives


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """w @ x + b for a vector x; the FC form used by every head and gate."""
    if w.data.ndim != 2 or x.data.ndim != 1 or b.data.ndim != 1:
        raise ValueError("affine expects matrix w, vector x, vector b")
    if w.shape[1] != x.shape[0] or w.shape[0] != b.shape[0]:
        raise ValueError(f"affine shape mismatch: w{w.shape} x{x.shape} b{b.shape}")
    out_data = w.data @ x.data + b.data

    def back(g):
        _accum(x, w.data.T @ g)
        _accum(w, np.outer(g, x.data))
        _accum(b, g)

    return _make(out_data, "affine", (x, w, b), back)


def matvec(w: Tensor, x: Tensor) -> Tensor:
    if w.data.ndim != 2 or x.data.ndim != 1 or w.shape[1] != x.shape[0]:
        raise ValueError(f"matvec shape mismatch: w{w.shape} x{x.shape}")
    out_data = w.data @ x.data

    def back(g):
        _accum(x, w.data.T @ g)
        _accum(w, np.outer(g, x.data))

    return _make(out_data, "matvec", (w, x), back)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out_data = a.data + b.data

    def back(g):
        _accum(a, g)
        _accum(b, g)

    return _make(out_data, "add", (a, b), back)


def add_n(ts: list[Tensor]) -> Tensor:
    if not ts:
        raise ValueError("add_n of empty list")
    shape = ts[0].shape
    for t in ts:
        if t.shape != shape:
            raise ValueError("add_n shape mismatch")
    out_data = ts[0].data.copy()
    for t in ts[1:]:
        out_data += t.data

    def back(g):
        for t in ts:
            _accum(t, g)

    return _make(out_data, "add_n", tuple(ts), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    out_data = a.data * b.data

    def back(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _make(out_data, "mul", (a, b), back)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out_data = a.data * c

    def back(g):
        _accum(a, g * c)

    return _make(out_data, "scale", (a,), back)


def dot(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape or a.data.ndim != 1:
        raise ValueError(f"dot shape mismatch: {a.shape} vs {b.shape}")
    out_data = np.asarray(a.data @ b.data)

    def back(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _make(out_data, "dot", (a, b), back)


def concat(parts: list[Tensor]) -> Tensor:
    if not parts:
        raise ValueError("concat of empty list")
    for t in parts:
        if t.data.ndim != 1:
            raise ValueError("concat expects vectors")
    out_data = np.concatenate([t.data for t in parts])
    offsets = np.cumsum([0] + [t.size for t in parts])

    def back(g):
        for t, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accum(t, g[lo:hi])

    return _make(out_data, "concat", tuple(parts), back)


def slice_vec(x: Tensor, start: int, stop: int) -> Tensor:
    if x.data.ndim != 1 or not (0 <= start <= stop <= x.size):
        raise ValueError("bad slice bounds")
    out_data = x.data[start:stop].copy()

    def back(g):
        if x.requires_grad or x.tracked:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            x.grad[start:stop] += g

    return _make(out_data, "slice", (x,), back)


def row(x: Tensor, i: int) -> Tensor:
    if x.data.ndim != 2:
        raise ValueError("row expects a matrix")
    if not (0 <= i < x.shape[0]):
        raise ValueError(f"row index {i} out of range")
    out_data = x.data[i].copy()

    def back(g):
        if x.requires_grad or x.tracked:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            x.grad[i] += g

    return _make(out_data, "row", (x,), back)


def gather_rows(table: Tensor, ids, skip_id: int | None = None) -> Tensor:
    """Rows ``table[ids]``; gradient scatter-adds back, skipping ``skip_id`` rows."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise ValueError("gather_rows expects a non-empty id vector")
    if ids.min() < 0 or ids.max() >= table.shape[0]:
        raise ValueError("token id out of range")
    out_data = table.data[ids].copy()

    def back(g):
        if not (table.requires_grad or table.tracked):
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        if skip_id is None:
            np.add.at(table.grad, ids, g)
        else:
            keep = ids != skip_id
            np.add.at(table.grad, ids[keep], g[keep])

    return _make(out_data, "gather_rows", (table,), back)


def stack_scalars(ts: list[Tensor]) -> Tensor:
    if not ts:
        raise ValueError("stack_scalars of empty list")
    for t in ts:
        if t.size != 1:
            raise ValueError("stack_scalars expects scalar tensors")
    out_data = np.array([float(t.data) for t in ts], dtype=_DTYPE)

    def back(g):
        for i, t in enumerate(ts):
            _accum(t, np.asarray(g[i], dtype=t.data.dtype).reshape(t.shape))

    return _make(out_data, "stack_scalars", tuple(ts), back)


def weighted_sum(weights: Tensor, vectors: list[Tensor]) -> Tensor:
    """sum_i weights[i] * vectors[i]; the attention pooling step."""
    if weights.data.ndim != 1 or len(vectors) != weights.size:
        raise ValueError("weighted_sum: weight/vector count mismatch")
    dim = vectors[0].shape
    mat = np.stack([v.data for v in vectors])
    out_data = weights.data @ mat

    def back(g):
        _accum(weights, mat @ g)
        for i, v in enumerate(vectors):
            _accum(v, weights.data[i] * g)

    del dim
    return _make(out_data, "weighted_sum", (weights, *vectors), back)


def matmul_t(a: Tensor, w: Tensor) -> Tensor:
    """a @ w.T for a row-stacked matrix a; the batched form of matvec."""
    if a.data.ndim != 2 or w.data.ndim != 2 or a.shape[1] != w.shape[1]:
        raise ValueError(f"matmul_t shape mismatch: a{a.shape} w{w.shape}")
    out_data = a.data @ w.data.T

    def back(g):
        _accum(a, g @ w.data)
        _accum(w, g.T @ a.data)

    return _make(out_data, "matmul_t", (a, w), back)


def vecmat(v: Tensor, m: Tensor) -> Tensor:
    """v @ m: weighted sum of the rows of m; the attention pooling step."""
    if v.data.ndim != 1 or m.data.ndim != 2 or v.shape[0] != m.shape[0]:
        raise ValueError(f"vecmat shape mismatch: v{v.shape} m{m.shape}")
    out_data = v.data @ m.data

    def back(g):
        _accum(v, m.data @ g)
        _accum(m, np.outer(v.data, g))

    return _make(out_data, "vecmat", (v, m), back)


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ValueError(f"concat_cols shape mismatch: {a.shape} vs {b.shape}")
    out_data = np.concatenate([a.data, b.data], axis=1)
    split = a.shape[1]

    def back(g):
        _accum(a, g[:, :split])
        _accum(b, g[:, split:])

    return _make(out_data, "concat_cols", (a, b), back)


def lstm_sequence(x: Tensor, w_x: Tensor, w_h: Tensor, b: Tensor,
                  reverse: bool = False) -> Tensor:
    """Run one LSTM direction over an N-by-k sequence; one fused primitive.

    Returns the N-by-H hidden-state matrix in original sequence order; with
    ``reverse`` the state at position t has consumed x_t..x_N.  The backward
    pass is hand-derived truncation-free BPTT, validated against finite
    differences in the test suite.  Gate order along the fused axis is
    input, forget, output, candidate.
    """
    if x.data.ndim != 2:
        raise ValueError("lstm_sequence expects an N-by-k input matrix")
    four_h = w_x.shape[0]
    if four_h % 4 != 0 or w_h.shape[0] != four_h or b.shape[0] != four_h:
        raise ValueError("gate dimension mismatch")
    H = four_h // 4
    if w_x.shape[1] != x.shape[1] or w_h.shape[1] != H:
        raise ValueError(f"lstm shape mismatch: x{x.shape} w_x{w_x.shape} w_h{w_h.shape}")
    n = x.shape[0]

    x_proc = x.data[::-1] if reverse else x.data
    pre_all = x_proc @ w_x.data.T + b.data
    gates_i = np.empty((n, H))
    gates_f = np.empty((n, H))
    gates_o = np.empty((n, H))
    gates_g = np.empty((n, H))
    cells = np.empty((n, H))
    tanh_c = np.empty((n, H))
    hidden = np.empty((n, H))
    h = np.zeros(H)
    c = np.zeros(H)
    w_h_t = w_h.data.T
    for t in range(n):
        z = pre_all[t] + h @ w_h_t
        gi = _sigmoid(z[:H])
        gf = _sigmoid(z[H:2 * H])
        go = _sigmoid(z[2 * H:3 * H])
        gg = np.tanh(z[3 * H:])
        c = gf * c + gi * gg
        tc = np.tanh(c)
        h = go * tc
        gates_i[t] = gi
        gates_f[t] = gf
        gates_o[t] = go
        gates_g[t] = gg
        cells[t] = c
        tanh_c[t] = tc
        hidden[t] = h
    out_data = hidden[::-1].copy() if reverse else hidden

    def back(g_out):
        g_proc = g_out[::-1] if reverse else g_out
        dz_all = np.empty((n, 4 * H))
        g_wh = np.zeros_like(w_h.data)
        dh = np.zeros(H)
        dc = np.zeros(H)
        for t in range(n - 1, -1, -1):
            dh_total = g_proc[t] + dh
            gi, gf, go, gg = gates_i[t], gates_f[t], gates_o[t], gates_g[t]
            tc = tanh_c[t]
            dc_total = dh_total * go * (1.0 - tc * tc) + dc
            c_prev = cells[t - 1] if t > 0 else np.zeros(H)
            h_prev = hidden[t - 1] if t > 0 else np.zeros(H)
            dz = dz_all[t]
            dz[:H] = dc_total * gg * gi * (1.0 - gi)
            dz[H:2 * H] = dc_total * c_prev * gf * (1.0 - gf)
            dz[2 * H:3 * H] = dh_total * tc * go * (1.0 - go)
            dz[3 * H:] = dc_total * gi * (1.0 - gg * gg)
            g_wh += np.outer(dz, h_prev)
            dh = w_h.data.T @ dz
            dc = dc_total * gf
        gx = dz_all @ w_x.data
        _accum(x, gx[::-1] if reverse else gx)
        _accum(w_x, dz_all.T @ x_proc)
        _accum(w_h, g_wh)
        _accum(b, dz_all.sum(axis=0))

    return _make(out_data, "lstm_sequence", (x, w_x, w_h, b), back)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # branch keeps exp() in the underflow-safe half-plane
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)

    def back(g):
        _accum(x, g * s * (1.0 - s))

    return _make(s, "sigmoid", (x,), back)


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)

    def back(g):
        _accum(x, g * (1.0 - t * t))

    return _make(t, "tanh", (x,), back)


def activation(x: Tensor, kind: str) -> Tensor:
    """Element-wise squashing; ``kind`` is one of ``sigmoid``/``tanh``."""
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    raise ValueError(f"unknown activation kind {kind!r}")


def softmax(v: Tensor) -> Tensor:
    """Max-subtracted exp-normalize; output sums to 1 within 1e-9."""
    if v.size == 0:
        raise ValueError("softmax of empty input")
    if v.data.ndim != 1:
        raise ValueError("softmax expects a vector")
    shifted = v.data - v.data.max()
    e = np.exp(shifted)
    p = e / e.sum()

    def back(g):
        _accum(v, p * (g - (g @ p)))

    return _make(p, "softmax", (v,), back)


def cross_entropy(pred: Tensor, truth: int) -> Tensor:
    """-log(pred[truth]) with the probability clamped to >= 1e-12."""
    if pred.data.ndim != 1:
        raise ValueError("cross_entropy expects a distribution vector")
    if not (0 <= truth < pred.size):
        raise ValueError(f"truth index {truth} out of range for {pred.size} classes")
    q = max(float(pred.data[truth]), LOG_CLAMP)
    out_data = np.asarray(-np.log(q))

    def back(g):
        if pred.requires_grad or pred.tracked:
            if pred.grad is None:
                pred.grad = np.zeros_like(pred.data)
            pred.grad[truth] += -float(g) / q

    return _make(out_data, "cross_entropy", (pred,), back)


def binary_cross_entropy(p: Tensor, y: int) -> Tensor:
    """-[y log p + (1-y) log(1-p)] with the same 1e-12 clamp."""
    if p.size != 1:
        raise ValueError("binary_cross_entropy expects a scalar probability")
    if y not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {y}")
    pv = float(p.data)
    if not (0.0 <= pv <= 1.0):
        raise ValueError(f"probability {pv} outside [0, 1]")
    if y == 1:
        q = max(pv, LOG_CLAMP)
        out_data = np.asarray(-np.log(q))
        sign = -1.0
    else:
        q = max(1.0 - pv, LOG_CLAMP)
        out_data = np.asarray(-np.log(q))
        sign = 1.0

    def back(g):
        _accum(p, np.asarray(sign * float(g) / q).reshape(p.shape))

    return _make(out_data, "binary_cross_entropy", (p,), back)


def dropout(x: Tensor, rate: float, mode: str, rng: RngStream) -> Tensor:
    """Inverted dropout: train mode zeroes elements and rescales survivors."""
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown dropout mode {mode!r}")
    if not (0.0 <= rate < 1.0):
        raise ValueError(f"dropout rate {rate} must be in [0, 1)")
    if mode == "eval" or rate == 0.0:
        return x
    keep = 1.0 - rate
    mask = (rng.random(x.shape) >= rate) / keep
    out_data = x.data * mask

    def back(g):
        _accum(x, g * mask)

    return _make(out_data, "dropout", (x,), back)


# ---------------------------------------------------------------------------
# optimizer


class AdamState:
    """First/second-moment estimates plus shared step counter."""

    def __init__(self, shapes: dict[str, tuple[int, ...]], lr: float = 0.003,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros(s, dtype=_DTYPE) for k, s in shapes.items()}
        self.v = {k: np.zeros(s, dtype=_DTYPE) for k, s in shapes.items()}

    @classmethod
    def for_params(cls, params: dict[str, Tensor], lr: float = 0.003, **kw) -> "AdamState":
        return cls({k: t.shape for k, t in params.items()}, lr=lr, **kw)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam update, in place, in declared parameter order."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


# ---------------------------------------------------------------------------
# initialization


def glorot_uniform(shape: tuple[int, int], rng: RngStream) -> np.ndarray:
    fan_out, fan_in = shape
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, shape).astype(_DTYPE)


def embedding_uniform(shape: tuple[int, int], rng: RngStream) -> np.ndarray:
    return rng.uniform(-0.05, 0.05, shape).astype(_DTYPE)
