"""Dense-array numerics with tape-based reverse-mode differentiation.

Everything the model computes is expressed through the kernel functions in
this module.  A kernel applied to arrays that live on a Tape records itself,
so a single backward() sweep yields gradients for every leaf.  Applied to
plain arrays (or tape-less DiffArrays) the same kernels run eagerly with no
recording, which is what inference uses.

All math is float64 by default; float32 is supported for training speed but
gradient checks are only reliable in 64-bit.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "DiffArray", "Tape", "GraphError", "forward_kernel", "backward",
    "grad_check", "matmul", "add", "concat", "elementwise_mul", "sigmoid",
    "tanh", "softmax_last_axis", "max_over_axis", "embedding_lookup",
    "broadcast_scale_rows", "reduce_sum", "log_floor", "slice_axis",
    "scatter_add_vector", "transpose", "take", "scale", "set_strict_checks",
]

LOG_FLOOR = 1e-12

# Finiteness checks on every kernel input; cheap at desk scale, and the
# training loop may switch them off.
_STRICT = True


def set_strict_checks(enabled):
    global _STRICT
    _STRICT = bool(enabled)


class GraphError(ValueError):
    """Shape mismatch, non-finite input, or malformed record."""


class DiffArray:
    """A dense array, optionally attached to a Tape node."""

    __slots__ = ("value", "tape", "nid", "name")

    def __init__(self, value, tape=None, nid=-1, name=None):
        self.value = np.asarray(value)
        self.tape = tape
        self.nid = nid
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"DiffArray(shape={self.value.shape}{tag})"


class _Op:
    __slots__ = ("kind", "input_ids", "output_id", "vjp", "replay")

    def __init__(self, kind, input_ids, output_id, vjp, replay):
        self.kind = kind
        self.input_ids = input_ids
        self.output_id = output_id
        self.vjp = vjp          # grad_out -> list of grads aligned w/ input_ids
        self.replay = replay    # input values -> output value


class Tape:
    """Ordered computation record; single-threaded by construction."""

    def __init__(self):
        self.ops = []
        self.values = {}        # nid -> ndarray (leaves and op outputs)
        self.leaf_ids = []
        self.leaf_names = {}    # nid -> name, for named leaves
        self._next = 0

    def _new_id(self, value):
        nid = self._next
        self._next += 1
        self.values[nid] = value
        return nid

    def leaf(self, value, name=None):
        arr = np.asarray(value)
        nid = self._new_id(arr)
        self.leaf_ids.append(nid)
        if name is not None:
            self.leaf_names[nid] = name
        return DiffArray(arr, self, nid, name=name)

    def record(self, kind, inputs, out_value, vjp, replay):
        nid = self._new_id(out_value)
        self.ops.append(_Op(kind, [x.nid for x in inputs], nid, vjp, replay))
        return DiffArray(out_value, self, nid)

    def backward(self, loss):
        """Gradients of a scalar loss node w.r.t. every reachable node."""
        if loss.tape is not self:
            raise GraphError("loss node does not belong to this record")
        if np.asarray(loss.value).size != 1:
            raise GraphError(
                f"backward requires a scalar loss, got shape {loss.value.shape}")
        grads = {loss.nid: np.ones_like(np.asarray(loss.value, dtype=loss.value.dtype))}
        for op in reversed(self.ops):
            g = grads.get(op.output_id)
            if g is None:
                continue
            for nid, gi in zip(op.input_ids, op.vjp(g)):
                if gi is None:
                    continue
                if nid in grads:
                    grads[nid] = grads[nid] + gi
                else:
                    grads[nid] = gi
        return grads

    def replay(self, leaf_values=None):
        """Re-execute the recorded ops, optionally overriding leaf values.

        Returns nid -> value for every node.  Topological order is the
        recording order, so a single pass suffices.
        """
        values = dict(self.values)
        if leaf_values:
            for nid, v in leaf_values.items():
                if nid not in self.values:
                    raise GraphError(f"unknown leaf id {nid}")
                values[nid] = np.asarray(v)
        for op in self.ops:
            values[op.output_id] = op.replay([values[i] for i in op.input_ids])
        return values


def backward(record, loss):
    """Module-level alias matching the record-centric call style."""
    return record.backward(loss)


def _coerce(x):
    if isinstance(x, DiffArray):
        return x
    return DiffArray(np.asarray(x))


def _check_finite(kind, arrays):
    if not _STRICT:
        return
    for a in arrays:
        v = a.value
        # sum is one reduction; any NaN/Inf makes it non-finite
        if v.dtype.kind == "f" and not math.isfinite(float(v.sum())):
            raise GraphError(f"{kind}: non-finite input values")


def _tape_of(inputs):
    tape = None
    for x in inputs:
        if x.tape is not None:
            if tape is not None and tape is not x.tape:
                raise GraphError("inputs belong to different records")
            tape = x.tape
    return tape


def _emit(kind, inputs, out_value, vjp, replay):
    tape = _tape_of(inputs)
    if tape is None:
        return DiffArray(out_value)
    # Constants get a leaf id lazily so the record stays self-contained.
    bound = []
    for x in inputs:
        if x.tape is None:
            bound.append(tape.leaf(x.value))
        else:
            bound.append(x)
    return tape.record(kind, bound, out_value, vjp, replay)


def _unbroadcast(grad, shape):
    """Sum grad down to `shape` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# kernels


def matmul(a, b):
    a, b = _coerce(a), _coerce(b)
    _check_finite("matmul", (a, b))
    av, bv = a.value, b.value
    if av.ndim > 2 or bv.ndim > 2 or av.ndim == 0 or bv.ndim == 0:
        raise GraphError(f"matmul: unsupported ranks {av.shape} x {bv.shape}")
    if av.shape[-1] != (bv.shape[0] if bv.ndim > 0 else None):
        raise GraphError(f"matmul: shape mismatch {av.shape} x {bv.shape}")
    out = av @ bv

    def vjp(g):
        # Promote everything to 2-D, then squeeze back.
        a2 = av.reshape(1, -1) if av.ndim == 1 else av
        b2 = bv.reshape(-1, 1) if bv.ndim == 1 else bv
        g2 = g.reshape(a2.shape[0], b2.shape[1])
        ga = (g2 @ b2.T).reshape(av.shape)
        gb = (a2.T @ g2).reshape(bv.shape)
        return [ga, gb]

    return _emit("matmul", (a, b), out, vjp, lambda vs: vs[0] @ vs[1])


def add(a, b):
    a, b = _coerce(a), _coerce(b)
    _check_finite("add", (a, b))
    try:
        out = a.value + b.value
    except ValueError:
        raise GraphError(f"add: shapes {a.shape} and {b.shape} do not broadcast")

    def vjp(g):
        return [_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)]

    return _emit("add", (a, b), out, vjp, lambda vs: vs[0] + vs[1])


def elementwise_mul(a, b):
    a, b = _coerce(a), _coerce(b)
    _check_finite("elementwise_mul", (a, b))
    try:
        out = a.value * b.value
    except ValueError:
        raise GraphError(
            f"elementwise_mul: shapes {a.shape} and {b.shape} do not broadcast")
    av, bv = a.value, b.value

    def vjp(g):
        return [_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)]

    return _emit("elementwise_mul", (a, b), out, vjp, lambda vs: vs[0] * vs[1])


def scale(a, c):
    """Multiply by a python scalar (recorded as elementwise_mul)."""
    return elementwise_mul(a, np.asarray(c, dtype=_coerce(a).value.dtype))


def concat(parts, axis=-1):
    parts = [_coerce(p) for p in parts]
    if not parts:
        raise GraphError("concat: empty input list")
    _check_finite("concat", parts)
    try:
        out = np.concatenate([p.value for p in parts], axis=axis)
    except ValueError:
        raise GraphError(
            f"concat: incompatible shapes {[p.shape for p in parts]} on axis {axis}")
    sizes = [p.value.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return list(np.split(g, splits, axis=axis))

    return _emit("concat", parts, out, vjp,
                 lambda vs: np.concatenate(vs, axis=axis))


def _sigmoid(v):
    # overflow-safe in both directions; clamp keeps the output strictly
    # inside (0, 1) even when exp underflows
    out = np.empty_like(v, dtype=v.dtype if v.dtype.kind == "f" else np.float64)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    info = np.finfo(out.dtype)
    return np.clip(out, info.tiny, np.nextafter(out.dtype.type(1), out.dtype.type(0)))


def sigmoid(a):
    a = _coerce(a)
    _check_finite("sigmoid", (a,))
    v = np.atleast_1d(np.asarray(a.value))
    out = _sigmoid(v).reshape(a.value.shape)

    def vjp(g):
        return [g * out * (1.0 - out)]

    return _emit("sigmoid", (a,), out, vjp,
                 lambda vs: _sigmoid(np.atleast_1d(vs[0])).reshape(vs[0].shape))


def tanh(a):
    a = _coerce(a)
    _check_finite("tanh", (a,))
    out = np.tanh(a.value)

    def vjp(g):
        return [g * (1.0 - out * out)]

    return _emit("tanh", (a,), out, vjp, lambda vs: np.tanh(vs[0]))


def _softmax(v):
    shifted = v - v.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_last_axis(a):
    a = _coerce(a)
    _check_finite("softmax_last_axis", (a,))
    if a.value.ndim == 0:
        raise GraphError("softmax_last_axis: scalar input")
    out = _softmax(a.value)

    def vjp(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return [out * (g - dot)]

    return _emit("softmax_last_axis", (a,), out, vjp, lambda vs: _softmax(vs[0]))


def max_over_axis(a, axis):
    a = _coerce(a)
    _check_finite("max_over_axis", (a,))
    out = a.value.max(axis=axis)
    # Gradient routes to the first argmax along the reduced axis.
    idx = np.argmax(a.value, axis=axis)

    def vjp(g):
        ga = np.zeros_like(a.value)
        grid = np.indices(idx.shape)
        full = list(grid)
        full.insert(axis if axis >= 0 else a.value.ndim + axis, idx)
        ga[tuple(full)] = g
        return [ga]

    return _emit("max_over_axis", (a,), out, vjp, lambda vs: vs[0].max(axis=axis))


def embedding_lookup(table, ids):
    table = _coerce(table)
    _check_finite("embedding_lookup", (table,))
    ids = np.asarray(ids, dtype=np.int64)
    if table.value.ndim != 2:
        raise GraphError(f"embedding_lookup: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.value.shape[0]):
        raise GraphError(
            f"embedding_lookup: id out of range for table of {table.value.shape[0]} rows")
    out = table.value[ids]

    def vjp(g):
        gt = np.zeros_like(table.value)
        np.add.at(gt, ids, g)
        return [gt]

    return _emit("embedding_lookup", (table,), out, vjp, lambda vs: vs[0][ids])


def broadcast_scale_rows(h, a):
    """Row i of the output is a[i] * h[i]."""
    h, a = _coerce(h), _coerce(a)
    _check_finite("broadcast_scale_rows", (h, a))
    if h.value.ndim != 2 or a.value.ndim != 1 or h.value.shape[0] != a.value.shape[0]:
        raise GraphError(
            f"broadcast_scale_rows: shapes {h.shape} and {a.shape} incompatible")
    hv, av = h.value, a.value
    out = hv * av[:, None]

    def vjp(g):
        return [g * av[:, None], (g * hv).sum(axis=1)]

    return _emit("broadcast_scale_rows", (h, a), out, vjp,
                 lambda vs: vs[0] * vs[1][:, None])


def reduce_sum(a, axis=None):
    a = _coerce(a)
    _check_finite("reduce_sum", (a,))
    out = a.value.sum(axis=axis)
    shape = a.value.shape

    def vjp(g):
        if axis is None:
            return [np.broadcast_to(g, shape).copy()]
        return [np.broadcast_to(np.expand_dims(g, axis), shape).copy()]

    return _emit("reduce_sum", (a,), out, vjp, lambda vs: vs[0].sum(axis=axis))


def log_floor(a, floor=LOG_FLOOR):
    """log(max(x, floor)); keeps the loss finite when probabilities underflow."""
    a = _coerce(a)
    _check_finite("log_floor", (a,))
    clipped = np.maximum(a.value, floor)
    out = np.log(clipped)

    def vjp(g):
        return [np.where(a.value >= floor, g / clipped, 0.0)]

    return _emit("log_floor", (a,), out, vjp,
                 lambda vs: np.log(np.maximum(vs[0], floor)))


def slice_axis(a, start, stop, axis=-1):
    a = _coerce(a)
    _check_finite("slice_axis", (a,))
    n = a.value.shape[axis]
    if not (0 <= start <= stop <= n):
        raise GraphError(f"slice_axis: [{start}:{stop}] invalid for extent {n}")
    index = [slice(None)] * a.value.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    out = a.value[index]

    def vjp(g):
        ga = np.zeros_like(a.value)
        ga[index] = g
        return [ga]

    return _emit("slice_axis", (a,), out, vjp, lambda vs: vs[0][index])


def scatter_add_vector(weights, positions, size):
    """Accumulate weights[i] into out[positions[i]] of a fresh length-`size` vector."""
    weights = _coerce(weights)
    _check_finite("scatter_add_vector", (weights,))
    positions = np.asarray(positions, dtype=np.int64)
    if weights.value.ndim != 1 or positions.shape != weights.value.shape:
        raise GraphError(
            f"scatter_add_vector: weights {weights.shape} vs positions {positions.shape}")
    if positions.size and (positions.min() < 0 or positions.max() >= size):
        raise GraphError("scatter_add_vector: position out of range")

    def fwd(w):
        out = np.zeros(size, dtype=w.dtype)
        np.add.at(out, positions, w)
        return out

    def vjp(g):
        return [g[positions]]

    return _emit("scatter_add_vector", (weights,), fwd(weights.value), vjp,
                 lambda vs: fwd(vs[0]))


def transpose(a):
    a = _coerce(a)
    _check_finite("transpose", (a,))
    if a.value.ndim != 2:
        raise GraphError(f"transpose: expected 2-D input, got {a.shape}")
    out = a.value.T.copy()

    def vjp(g):
        return [g.T]

    return _emit("transpose", (a,), out, vjp, lambda vs: vs[0].T.copy())


def take(a, index):
    """Pick one scalar from a 1-D array."""
    a = _coerce(a)
    _check_finite("take", (a,))
    if a.value.ndim != 1:
        raise GraphError(f"take: expected 1-D input, got {a.shape}")
    index = int(index)
    if not (0 <= index < a.value.shape[0]):
        raise GraphError(f"take: index {index} out of range {a.value.shape[0]}")
    out = a.value[index]

    def vjp(g):
        ga = np.zeros_like(a.value)
        ga[index] = g
        return [ga]

    return _emit("take", (a,), out, vjp, lambda vs: vs[0][index])


_KERNELS = {
    "matmul": matmul,
    "add": add,
    "concat": lambda *xs, axis=-1: concat(list(xs), axis=axis),
    "elementwise_mul": elementwise_mul,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "softmax_last_axis": softmax_last_axis,
    "max_over_axis": max_over_axis,
    "embedding_lookup": embedding_lookup,
    "broadcast_scale_rows": broadcast_scale_rows,
    "reduce_sum": reduce_sum,
    "log_floor": log_floor,
    "slice_axis": slice_axis,
    "scatter_add_vector": scatter_add_vector,
    "transpose": transpose,
    "take": take,
}


def forward_kernel(kind, inputs, **kwargs):
    """Dispatch by kernel name; mostly useful for generic property tests."""
    if kind not in _KERNELS:
        raise GraphError(f"unknown kernel kind {kind!r}")
    return _KERNELS[kind](*inputs, **kwargs)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f, params, epsilon=1e-5, tolerance=1e-4):
    """Compare reverse-mode gradients of a scalar f against central differences.

    `f` receives a list of plain ndarrays (one per entry of `params`) and must
    build its own tape, returning the scalar loss DiffArray.  Returns a list of
    report rows: (name, max_rel_err, passed).
    """
    values = [np.array(p.value if isinstance(p, DiffArray) else p,
                       dtype=np.float64) for p in params]
    names = [getattr(p, "name", None) or f"param{i}"
             for i, p in enumerate(params)]

    loss = f(values)
    grads = loss.tape.backward(loss)
    leaf_ids = loss.tape.leaf_ids[:len(values)]
    analytic = [np.asarray(grads.get(nid, np.zeros_like(v)), dtype=np.float64)
                for nid, v in zip(leaf_ids, values)]

    report = []
    global _STRICT
    was_strict = _STRICT
    _STRICT = False          # the FD loop re-runs f thousands of times
    try:
        for name, v, g in zip(names, values, analytic):
            max_rel = 0.0
            flat = v.reshape(-1)
            gflat = np.asarray(g).reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + epsilon
                up = float(f(values).value)
                flat[i] = orig - epsilon
                down = float(f(values).value)
                flat[i] = orig
                fd = (up - down) / (2.0 * epsilon)
                denom = max(abs(fd), abs(gflat[i]), 1e-8)
                rel = abs(fd - gflat[i]) / denom
                if abs(fd) < 1e-10 and abs(gflat[i]) < 1e-10:
                    rel = 0.0
                max_rel = max(max_rel, rel)
            report.append((name, float(max_rel), bool(max_rel < tolerance)))
    finally:
        _STRICT = was_strict
    return report
