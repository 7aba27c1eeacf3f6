"""Layer graph, forward pass, and hand-written reverse-mode gradients.

Tensors are numpy float64 arrays with a leading batch dimension and
rank <= 5. Layer kinds:

    dense    (N, F) -> (N, units)
    conv2d   (N, C, H, W) -> (N, channels, OH, OW)
    conv3d   (N, C, D, H, W) -> (N, channels, OD, OH, OW)
    relu     elementwise
    sigmoid  elementwise (numerically stable)
    flatten  (N, ...) -> (N, prod)
    concat   rank-2 feature tensors joined on axis 1
    dropout  elementwise mask, active only in training mode

Convolutions are cross-correlations (no kernel flip) built on im2col.
Dropout masks without rescaling so binary occupancy inputs stay binary;
masks are drawn from a per-forward seed, which keeps training runs and
gradient checks deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

KINDS = ("dense", "conv2d", "conv3d", "relu", "sigmoid", "flatten", "concat", "dropout")


class ShapeMismatch(ValueError):
    """Tensor shape disagrees with the graph's declared shapes."""


class StaleCache(RuntimeError):
    """backward() called without a matching forward() activation cache."""


@dataclass
class LayerSpec:
    """One node of the graph. inputs name graph inputs or earlier layers."""

    id: str
    kind: str
    inputs: list
    units: int | None = None      # dense
    channels: int | None = None   # conv2d / conv3d
    kernel: int | None = None
    stride: int = 1
    padding: int = 0
    rate: float | None = None     # dropout

    def to_dict(self):
        d = {"id": self.id, "kind": self.kind, "inputs": list(self.inputs)}
        for k in ("units", "channels", "kernel", "stride", "padding", "rate"):
            v = getattr(self, k)
            if v is not None:
                d[k] = v
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            id=d["id"],
            kind=d["kind"],
            inputs=list(d["inputs"]),
            units=d.get("units"),
            channels=d.get("channels"),
            kernel=d.get("kernel"),
            stride=d.get("stride", 1),
            padding=d.get("padding", 0),
            rate=d.get("rate"),
        )


def _f32_grid(a):
    # keep values exactly representable in float32 so the weight file
    # round-trips without changing network outputs
    return a.astype(np.float32).astype(np.float64)


def _conv_out(size, kernel, stride, padding):
    out = (size + 2 * padding - kernel) // stride + 1
    if out <= 0:
        raise ShapeMismatch(f"kernel {kernel}/stride {stride} too large for size {size}")
    return out


class Network:
    """Ordered layer specs forming a DAG with named inputs and outputs.

    Shapes (without the batch dimension) are inferred and checked at
    construction; parameters live in a dict keyed '<layer id>.<name>'
    and are initialized with fan-in-scaled uniform noise from the seed.
    """

    def __init__(self, specs, input_shapes, outputs, seed=0):
        self.specs = list(specs)
        self.input_shapes = {k: tuple(v) for k, v in input_shapes.items()}
        self.outputs = list(outputs)
        self.seed = int(seed)
        self.params = {}
        self.shapes = dict(self.input_shapes)
        rng = np.random.default_rng(self.seed)
        seen = set(self.input_shapes)
        for spec in self.specs:
            if spec.kind not in KINDS:
                raise ValueError(f"unknown layer kind {spec.kind!r}")
            if spec.id in seen:
                raise ValueError(f"duplicate node id {spec.id!r}")
            for name in spec.inputs:
                if name not in seen:
                    raise ValueError(f"layer {spec.id!r} references unknown input {name!r}")
            self.shapes[spec.id] = self._infer(spec, rng)
            seen.add(spec.id)
        for out in self.outputs:
            if out not in seen:
                raise ValueError(f"unknown output node {out!r}")
        self._cache = None

    # -- construction helpers -------------------------------------------

    def _init(self, rng, shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        return _f32_grid(rng.uniform(-bound, bound, size=shape))

    def _infer(self, spec, rng):
        ins = [self.shapes[n] for n in spec.inputs]
        kind = spec.kind
        if kind == "dense":
            (shape,) = ins
            if len(shape) != 1:
                raise ShapeMismatch(f"dense {spec.id!r} wants rank-1 features, got {shape}")
            fan_in = shape[0]
            self.params[f"{spec.id}.w"] = self._init(rng, (fan_in, spec.units), fan_in)
            self.params[f"{spec.id}.b"] = np.zeros(spec.units)
            return (spec.units,)
        if kind == "conv2d":
            (shape,) = ins
            if len(shape) != 3:
                raise ShapeMismatch(f"conv2d {spec.id!r} wants (C,H,W), got {shape}")
            C, H, W = shape
            k, s, p = spec.kernel, spec.stride, spec.padding
            fan_in = C * k * k
            self.params[f"{spec.id}.w"] = self._init(rng, (spec.channels, C, k, k), fan_in)
            self.params[f"{spec.id}.b"] = np.zeros(spec.channels)
            return (spec.channels, _conv_out(H, k, s, p), _conv_out(W, k, s, p))
        if kind == "conv3d":
            (shape,) = ins
            if len(shape) != 4:
                raise ShapeMismatch(f"conv3d {spec.id!r} wants (C,D,H,W), got {shape}")
            C, D, H, W = shape
            k, s, p = spec.kernel, spec.stride, spec.padding
            fan_in = C * k * k * k
            self.params[f"{spec.id}.w"] = self._init(rng, (spec.channels, C, k, k, k), fan_in)
            self.params[f"{spec.id}.b"] = np.zeros(spec.channels)
            return (spec.channels, _conv_out(D, k, s, p), _conv_out(H, k, s, p), _conv_out(W, k, s, p))
        if kind in ("relu", "sigmoid", "dropout"):
            (shape,) = ins
            if kind == "dropout" and not (spec.rate is not None and 0.0 <= spec.rate < 1.0):
                raise ValueError(f"dropout {spec.id!r} needs a rate in [0, 1)")
            return shape
        if kind == "flatten":
            (shape,) = ins
            return (int(np.prod(shape)),)
        if kind == "concat":
            if len(ins) < 2:
                raise ValueError(f"concat {spec.id!r} needs at least two inputs")
            if any(len(s) != 1 for s in ins):
                raise ShapeMismatch(f"concat {spec.id!r} joins rank-1 features only")
            return (sum(s[0] for s in ins),)
        raise AssertionError(kind)

    # -- forward ----------------------------------------------------------

    def forward(self, inputs, train=False, dropout_seed=0):
        """Run the graph; returns {output name: array}.

        Activations are cached for backward(). Input arrays are copied
        into the cache so later in-place edits are detected as staleness
        rather than silently corrupting gradients.
        """
        values = {}
        for name, shape in self.input_shapes.items():
            if name not in inputs:
                raise ShapeMismatch(f"missing graph input {name!r}")
            x = np.asarray(inputs[name], dtype=float)
            if x.ndim != len(shape) + 1 or x.shape[1:] != shape:
                raise ShapeMismatch(
                    f"input {name!r}: expected (N, {', '.join(map(str, shape))}), got {x.shape}"
                )
            values[name] = x
        batch = {v.shape[0] for v in values.values()}
        if len(batch) != 1:
            raise ShapeMismatch(f"inconsistent batch sizes {sorted(batch)}")
        rng = np.random.default_rng(dropout_seed) if train else None
        aux = {}
        for spec in self.specs:
            xs = [values[n] for n in spec.inputs]
            values[spec.id], aux[spec.id] = self._layer_forward(spec, xs, train, rng)
        # values holds live references (inputs may alias the caller's
        # arrays); the snapshot is what they looked like right now
        self._cache = {
            "values": values,
            "aux": aux,
            "snapshot": {k: values[k].copy() for k in self.input_shapes},
        }
        return {out: values[out] for out in self.outputs}

    def _layer_forward(self, spec, xs, train, rng):
        kind = spec.kind
        if kind == "dense":
            (x,) = xs
            w = self.params[f"{spec.id}.w"]
            b = self.params[f"{spec.id}.b"]
            return x @ w + b, None
        if kind == "conv2d":
            (x,) = xs
            return _conv2d_forward(
                x, self.params[f"{spec.id}.w"], self.params[f"{spec.id}.b"], spec.stride, spec.padding
            )
        if kind == "conv3d":
            (x,) = xs
            return _conv3d_forward(
                x, self.params[f"{spec.id}.w"], self.params[f"{spec.id}.b"], spec.stride, spec.padding
            )
        if kind == "relu":
            (x,) = xs
            return np.maximum(x, 0.0), None
        if kind == "sigmoid":
            (x,) = xs
            return _sigmoid(x), None
        if kind == "flatten":
            (x,) = xs
            return x.reshape(x.shape[0], -1), None
        if kind == "concat":
            return np.concatenate(xs, axis=1), [x.shape[1] for x in xs]
        if kind == "dropout":
            (x,) = xs
            if not train:
                return x, None
            mask = rng.random(x.shape) >= spec.rate
            return x * mask, mask
        raise AssertionError(kind)

    # -- backward ---------------------------------------------------------

    def backward(self, loss_grads):
        """Reverse-mode pass from per-output loss gradients.

        Returns {param key: gradient}; gradients with respect to the
        graph inputs are left in self.input_grads. Outputs missing from
        loss_grads contribute nothing.
        """
        if self._cache is None:
            raise StaleCache("backward() before any forward()")
        values = self._cache["values"]
        for name in self.input_shapes:
            if not np.array_equal(self._cache["snapshot"][name], values[name]):
                raise StaleCache(f"graph input {name!r} changed since forward()")
        node_grads = {}
        for out, g in loss_grads.items():
            if out not in self.outputs:
                raise ValueError(f"{out!r} is not a declared output")
            g = np.asarray(g, dtype=float)
            if g.shape != values[out].shape:
                raise ShapeMismatch(f"loss grad for {out!r} has shape {g.shape}")
            node_grads[out] = node_grads.get(out, 0.0) + g
        param_grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        for spec in reversed(self.specs):
            g = node_grads.pop(spec.id, None)
            if g is None:
                continue
            xs = [values[n] for n in spec.inputs]
            gxs = self._layer_backward(spec, xs, g, self._cache["aux"][spec.id], param_grads)
            for name, gx in zip(spec.inputs, gxs):
                if name in node_grads:
                    node_grads[name] = node_grads[name] + gx
                else:
                    node_grads[name] = gx
        self.input_grads = {
            name: node_grads.get(name, np.zeros_like(values[name]))
            for name in self.input_shapes
        }
        return param_grads

    def _layer_backward(self, spec, xs, g, aux, param_grads):
        kind = spec.kind
        if kind == "dense":
            (x,) = xs
            w = self.params[f"{spec.id}.w"]
            param_grads[f"{spec.id}.w"] += x.T @ g
            param_grads[f"{spec.id}.b"] += g.sum(axis=0)
            return (g @ w.T,)
        if kind == "conv2d":
            (x,) = xs
            dx, dw, db = _conv2d_backward(
                x, self.params[f"{spec.id}.w"], g, aux, spec.stride, spec.padding
            )
            param_grads[f"{spec.id}.w"] += dw
            param_grads[f"{spec.id}.b"] += db
            return (dx,)
        if kind == "conv3d":
            (x,) = xs
            dx, dw, db = _conv3d_backward(
                x, self.params[f"{spec.id}.w"], g, aux, spec.stride, spec.padding
            )
            param_grads[f"{spec.id}.w"] += dw
            param_grads[f"{spec.id}.b"] += db
            return (dx,)
        if kind == "relu":
            (x,) = xs
            return (g * (x > 0.0),)
        if kind == "sigmoid":
            y = _sigmoid(xs[0])
            return (g * y * (1.0 - y),)
        if kind == "flatten":
            (x,) = xs
            return (g.reshape(x.shape),)
        if kind == "concat":
            splits = np.cumsum(aux)[:-1]
            return tuple(np.split(g, splits, axis=1))
        if kind == "dropout":
            if aux is None:   # eval-mode forward
                return (g,)
            return (g * aux,)
        raise AssertionError(kind)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# im2col convolutions
# ---------------------------------------------------------------------------


def _conv2d_forward(x, w, b, stride, pad):
    N, C, H, W = x.shape
    F, _, k, _ = w.shape
    OH = (H + 2 * pad - k) // stride + 1
    OW = (W + 2 * pad - k) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((N, C, k, k, OH, OW))
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i : i + stride * OH : stride, j : j + stride * OW : stride]
    cols = cols.reshape(N, C * k * k, OH * OW)
    y = np.einsum("fc,ncp->nfp", w.reshape(F, -1), cols, optimize=True)
    y = y.reshape(N, F, OH, OW) + b[None, :, None, None]
    return y, cols


def _conv2d_backward(x, w, g, cols, stride, pad):
    N, C, H, W = x.shape
    F, _, k, _ = w.shape
    _, _, OH, OW = g.shape
    g2 = g.reshape(N, F, OH * OW)
    dw = np.einsum("nfp,ncp->fc", g2, cols, optimize=True).reshape(w.shape)
    db = g.sum(axis=(0, 2, 3))
    dcols = np.einsum("fc,nfp->ncp", w.reshape(F, -1), g2, optimize=True)
    dcols = dcols.reshape(N, C, k, k, OH, OW)
    dxp = np.zeros((N, C, H + 2 * pad, W + 2 * pad))
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + stride * OH : stride, j : j + stride * OW : stride] += dcols[:, :, i, j]
    dx = dxp[:, :, pad : pad + H, pad : pad + W] if pad else dxp
    return dx, dw, db


def _conv3d_forward(x, w, b, stride, pad):
    N, C, D, H, W = x.shape
    F = w.shape[0]
    k = w.shape[2]
    OD = (D + 2 * pad - k) // stride + 1
    OH = (H + 2 * pad - k) // stride + 1
    OW = (W + 2 * pad - k) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((N, C, k, k, k, OD, OH, OW))
    for i in range(k):
        for j in range(k):
            for l in range(k):
                cols[:, :, i, j, l] = xp[
                    :,
                    :,
                    i : i + stride * OD : stride,
                    j : j + stride * OH : stride,
                    l : l + stride * OW : stride,
                ]
    cols = cols.reshape(N, C * k ** 3, OD * OH * OW)
    y = np.einsum("fc,ncp->nfp", w.reshape(F, -1), cols, optimize=True)
    y = y.reshape(N, F, OD, OH, OW) + b[None, :, None, None, None]
    return y, cols


def _conv3d_backward(x, w, g, cols, stride, pad):
    N, C, D, H, W = x.shape
    F = w.shape[0]
    k = w.shape[2]
    _, _, OD, OH, OW = g.shape
    g2 = g.reshape(N, F, OD * OH * OW)
    dw = np.einsum("nfp,ncp->fc", g2, cols, optimize=True).reshape(w.shape)
    db = g.sum(axis=(0, 2, 3, 4))
    dcols = np.einsum("fc,nfp->ncp", w.reshape(F, -1), g2, optimize=True)
    dcols = dcols.reshape(N, C, k, k, k, OD, OH, OW)
    dxp = np.zeros((N, C, D + 2 * pad, H + 2 * pad, W + 2 * pad))
    for i in range(k):
        for j in range(k):
            for l in range(k):
                dxp[
                    :,
                    :,
                    i : i + stride * OD : stride,
                    j : j + stride * OH : stride,
                    l : l + stride * OW : stride,
                ] += dcols[:, :, i, j, l]
    dx = dxp[:, :, pad : pad + D, pad : pad + H, pad : pad + W] if pad else dxp
    return dx, dw, db
