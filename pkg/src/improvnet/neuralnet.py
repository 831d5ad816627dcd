"""Small sequence networks with hand-written reverse-mode gradients.

Supported layers are dilated 1-D convolution, max-pooling, flatten, LSTM
and dense. All parameters live in one flat float64 array whose layout is
fixed per layer:

* conv1d: kernel ``[out][in][tap]`` then bias ``[out]``
* lstm: input kernel ``[gate][unit][in]``, recurrent kernel
  ``[gate][unit][unit]``, bias ``[gate][unit]``, gates ordered i, f, g, o
* dense: kernel ``[out][in]`` then bias ``[out]``

Inputs are ``(batch, time, channels)``; a single ``(time, channels)``
sample is accepted and returned without the batch axis.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

KINDS = ("conv1d", "maxpool1d", "flatten", "lstm", "dense")


class ShapeError(ValueError):
    pass


class StaleCacheError(RuntimeError):
    pass


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    units: int = 0
    kernel: int = 1
    dilation: int = 1
    pool: int = 2
    padding: str = "causal"
    activation: str = "linear"
    dropout: float = 0.0
    recurrent_dropout: float = 0.0
    return_sequences: bool = False
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kernel < 1 or self.dilation < 1 or self.pool < 1:
            raise ValueError("kernel, dilation and pool must be >= 1")
        if not (0.0 <= self.dropout < 1.0 and 0.0 <= self.recurrent_dropout < 1.0):
            raise ValueError("dropout rates must lie in [0, 1)")
        if self.padding not in ("causal", "valid"):
            raise ValueError(f"unknown padding {self.padding!r}")
        if self.activation not in ("linear", "relu", "tanh"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.kind in ("conv1d", "lstm", "dense") and self.units < 1:
            raise ValueError(f"{self.kind} needs units >= 1")


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, ...] = (10, 13)
    l2: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        self.shapes()  # validates the chain

    def layer_names(self) -> list[str]:
        return [l.name or f"{i}_{l.kind}" for i, l in enumerate(self.layers)]

    def shapes(self) -> list[tuple[int, ...]]:
        """Per-sample output shape of each layer."""
        shape = self.input_shape
        out = []
        for name, l in zip(self.layer_names(), self.layers):
            shape = _out_shape(l, shape, name)
            out.append(shape)
        return out

    def to_dict(self) -> dict:
        return {"input_shape": list(self.input_shape), "l2": self.l2,
                "layers": [asdict(l) for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> NetworkSpec:
        return cls(tuple(LayerSpec(**l) for l in d["layers"]), tuple(d["input_shape"]), d["l2"])


def _out_shape(l: LayerSpec, shape, name):
    if l.kind in ("conv1d", "maxpool1d", "lstm") and len(shape) != 2:
        raise ShapeError(f"layer {name}: expects (time, channels), got {shape}")
    if l.kind == "conv1d":
        t = shape[0] if l.padding == "causal" else shape[0] - (l.kernel - 1) * l.dilation
        if t < 1:
            raise ShapeError(f"layer {name}: sequence too short for valid convolution")
        return (t, l.units)
    if l.kind == "maxpool1d":
        if shape[0] < l.pool:
            raise ShapeError(f"layer {name}: sequence shorter than pool width")
        return (shape[0] // l.pool, shape[1])
    if l.kind == "flatten":
        return (int(np.prod(shape)),)
    if l.kind == "lstm":
        return (shape[0], l.units) if l.return_sequences else (l.units,)
    if len(shape) != 1:
        raise ShapeError(f"layer {name}: dense expects a flat input, got {shape}")
    return (l.units,)


def _param_shapes(l: LayerSpec, in_shape) -> list[tuple[str, tuple[int, ...]]]:
    if l.kind == "conv1d":
        return [("kernel", (l.units, in_shape[1], l.kernel)), ("bias", (l.units,))]
    if l.kind == "lstm":
        return [("kernel", (4, l.units, in_shape[1])),
                ("recurrent_kernel", (4, l.units, l.units)),
                ("bias", (4, l.units))]
    if l.kind == "dense":
        return [("kernel", (l.units, in_shape[0])), ("bias", (l.units,))]
    return []


def param_layout(spec: NetworkSpec) -> list[dict[str, tuple[int, tuple[int, ...]]]]:
    """Per-layer ``{name: (offset, shape)}`` directory."""
    layout = []
    offset = 0
    in_shape = spec.input_shape
    for l, out_shape in zip(spec.layers, spec.shapes()):
        entry = {}
        for pname, shape in _param_shapes(l, in_shape):
            entry[pname] = (offset, shape)
            offset += int(np.prod(shape))
        layout.append(entry)
        in_shape = out_shape
    return layout


def param_count(spec: NetworkSpec) -> int:
    total = 0
    for entry in param_layout(spec):
        for _, shape in entry.values():
            total += int(np.prod(shape))
    return total


def layer_param_count(spec: NetworkSpec, index: int) -> int:
    return sum(int(np.prod(s)) for _, s in param_layout(spec)[index].values())


class ParameterStore:
    """Flat float64 parameters with a per-layer directory of views."""

    def __init__(self, spec: NetworkSpec, data: np.ndarray | None = None):
        self.spec = spec
        self.layout = param_layout(spec)
        n = param_count(spec)
        if data is None:
            data = np.zeros(n)
        data = np.asarray(data, dtype=np.float64)
        if data.shape != (n,):
            raise ShapeError(f"expected {n} parameters, got {data.shape}")
        self.data = data
        self.version = 0

    def __len__(self):
        return len(self.data)

    def get(self, layer: int, name: str) -> np.ndarray:
        offset, shape = self.layout[layer][name]
        return self.data[offset:offset + int(np.prod(shape))].reshape(shape)

    def zeros_like(self) -> ParameterStore:
        return ParameterStore(self.spec, np.zeros_like(self.data))

    def copy(self) -> ParameterStore:
        return ParameterStore(self.spec, self.data.copy())

    def kernel_mask(self) -> np.ndarray:
        """True where a parameter is a kernel weight (L2-regularised)."""
        mask = np.zeros(len(self.data), dtype=bool)
        for entry in self.layout:
            for pname, (offset, shape) in entry.items():
                if pname != "bias":
                    mask[offset:offset + int(np.prod(shape))] = True
        return mask

    def owner(self, index: int) -> str:
        names = self.spec.layer_names()
        for lname, entry in zip(names, self.layout):
            for pname, (offset, shape) in entry.items():
                if offset <= index < offset + int(np.prod(shape)):
                    return f"{lname}.{pname}"
        raise IndexError(index)


def init_params(spec: NetworkSpec, seed: int = 0) -> ParameterStore:
    """Glorot-uniform kernels, zero biases, LSTM forget-gate bias 1."""
    rng = np.random.default_rng(seed)
    params = ParameterStore(spec)
    for i, (l, entry) in enumerate(zip(spec.layers, params.layout)):
        if l.kind == "conv1d":
            w = params.get(i, "kernel")
            out_c, in_c, k = w.shape
            lim = np.sqrt(6.0 / (in_c * k + out_c * k))
            w[...] = rng.uniform(-lim, lim, w.shape)
        elif l.kind == "lstm":
            wx = params.get(i, "kernel")
            lim = np.sqrt(6.0 / (wx.shape[2] + 4 * l.units))
            wx[...] = rng.uniform(-lim, lim, wx.shape)
            wh = params.get(i, "recurrent_kernel")
            lim = np.sqrt(6.0 / (5 * l.units))
            wh[...] = rng.uniform(-lim, lim, wh.shape)
            params.get(i, "bias")[1] = 1.0
        elif l.kind == "dense":
            w = params.get(i, "kernel")
            lim = np.sqrt(6.0 / (w.shape[0] + w.shape[1]))
            w[...] = rng.uniform(-lim, lim, w.shape)
    return params


# -- forward / backward ----------------------------------------------------


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _activate(kind, z):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _activate_grad(kind, z, a, d):
    if kind == "relu":
        return d * (z > 0)
    if kind == "tanh":
        return d * (1.0 - a * a)
    return d


def _dropout_mask(rng, shape, rate):
    if rate == 0.0 or rng is None:
        return None
    return (rng.random(shape) >= rate) / (1.0 - rate)


def _conv_taps(l: LayerSpec, t_in: int):
    """(input start, output start, length) of each tap's overlap."""
    taps = []
    for j in range(l.kernel):
        if l.padding == "causal":
            shift = (l.kernel - 1 - j) * l.dilation
            n = t_in - shift
            taps.append((0, shift, n) if n > 0 else None)
        else:
            t_out = t_in - (l.kernel - 1) * l.dilation
            taps.append((j * l.dilation, 0, t_out))
    return taps


def _conv_forward(l, w, b, x):
    bsz, t_in, _ = x.shape
    t_out = t_in if l.padding == "causal" else t_in - (l.kernel - 1) * l.dilation
    z = np.broadcast_to(b, (bsz, t_out, l.units)).copy()
    for j, tap in enumerate(_conv_taps(l, t_in)):
        if tap is None:
            continue
        xs, ys, n = tap
        z[:, ys:ys + n] += x[:, xs:xs + n] @ w[:, :, j].T
    return z


def _conv_backward(l, w, x, dz, gw, gb):
    dx = np.zeros_like(x)
    gb += dz.sum(axis=(0, 1))
    for j, tap in enumerate(_conv_taps(l, x.shape[1])):
        if tap is None:
            continue
        xs, ys, n = tap
        d = dz[:, ys:ys + n].reshape(-1, dz.shape[2])
        gw[:, :, j] += d.T @ x[:, xs:xs + n].reshape(-1, x.shape[2])
        dx[:, xs:xs + n] += dz[:, ys:ys + n] @ w[:, :, j]
    return dx


def _lstm_forward(l, wx, wh, b, x, mask_x, mask_h, return_sequences):
    bsz, t_len, n_in = x.shape
    u = l.units
    wx2 = wx.reshape(4 * u, n_in)
    wh2 = wh.reshape(4 * u, u)
    b2 = b.reshape(4 * u)
    xin = x if mask_x is None else x * mask_x[:, None, :]
    zx = xin @ wx2.T + b2
    h = np.zeros((bsz, u))
    c = np.zeros((bsz, u))
    steps = []
    hs = np.empty((bsz, t_len, u))
    for t in range(t_len):
        hp = h if mask_h is None else h * mask_h
        z = zx[:, t] + hp @ wh2.T
        i = _sigmoid(z[:, :u])
        f = _sigmoid(z[:, u:2 * u])
        g = np.tanh(z[:, 2 * u:3 * u])
        o = _sigmoid(z[:, 3 * u:])
        c_prev = c
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        hs[:, t] = h
        steps.append((hp, i, f, g, o, c_prev, tc))
    out = hs if return_sequences else h
    return out, (xin, steps)


def _lstm_backward(l, wx, wh, cache, dout, mask_x, mask_h, return_sequences, gwx, gwh, gb):
    xin, steps = cache
    bsz, t_len, n_in = xin.shape
    u = l.units
    wx2 = wx.reshape(4 * u, n_in)
    wh2 = wh.reshape(4 * u, u)
    gwx2 = gwx.reshape(4 * u, n_in)
    gwh2 = gwh.reshape(4 * u, u)
    gb2 = gb.reshape(4 * u)
    dh_next = np.zeros((bsz, u))
    dc_next = np.zeros((bsz, u))
    dxin = np.empty_like(xin)
    dz = np.empty((bsz, 4 * u))
    for t in reversed(range(t_len)):
        hp, i, f, g, o, c_prev, tc = steps[t]
        dh = dh_next + (dout[:, t] if return_sequences else (dout if t == t_len - 1 else 0.0))
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz[:, :u] = dc * g * i * (1.0 - i)
        dz[:, u:2 * u] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * u:3 * u] = dc * i * (1.0 - g * g)
        dz[:, 3 * u:] = dh * tc * o * (1.0 - o)
        gwx2 += dz.T @ xin[:, t]
        gwh2 += dz.T @ hp
        gb2 += dz.sum(axis=0)
        dxin[:, t] = dz @ wx2
        dhp = dz @ wh2
        dh_next = dhp if mask_h is None else dhp * mask_h
        dc_next = dc * f
    return dxin if mask_x is None else dxin * mask_x[:, None, :]


@dataclass
class ForwardCache:
    spec: NetworkSpec
    store_id: int
    version: int
    single: bool
    layers: list[Any] = field(default_factory=list)


def _as_batch(spec, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == len(spec.input_shape)
    if single:
        x = x[None]
    if x.shape[1:] != spec.input_shape:
        raise ShapeError(f"input: expected per-sample shape {spec.input_shape}, got {x.shape[1:]}")
    return x, single


def _run(spec: NetworkSpec, params: ParameterStore, x, rng, keep):
    if params.spec != spec:
        raise ShapeError("parameter store was built for a different spec")
    names = spec.layer_names()
    caches = []
    for i, (l, name) in enumerate(zip(spec.layers, names)):
        if l.kind == "conv1d":
            if x.ndim != 3:
                raise ShapeError(f"layer {name}: expects (batch, time, channels)")
            z = _conv_forward(l, params.get(i, "kernel"), params.get(i, "bias"), x)
            a = _activate(l.activation, z)
            mask = _dropout_mask(rng, a.shape, l.dropout)
            y = a if mask is None else a * mask
            caches.append((x, z, a, mask))
        elif l.kind == "maxpool1d":
            bsz, t, ch = x.shape
            t_out = t // l.pool
            blocks = x[:, :t_out * l.pool].reshape(bsz, t_out, l.pool, ch)
            arg = blocks.argmax(axis=2)
            y = np.take_along_axis(blocks, arg[:, :, None, :], axis=2)[:, :, 0, :]
            caches.append((x.shape, arg))
        elif l.kind == "flatten":
            caches.append(x.shape)
            y = x.reshape(x.shape[0], -1)
        elif l.kind == "lstm":
            bsz = x.shape[0]
            mask_x = _dropout_mask(rng, (bsz, x.shape[2]), l.dropout)
            mask_h = _dropout_mask(rng, (bsz, l.units), l.recurrent_dropout)
            y, c = _lstm_forward(l, params.get(i, "kernel"), params.get(i, "recurrent_kernel"),
                                 params.get(i, "bias"), x, mask_x, mask_h, l.return_sequences)
            caches.append((c, mask_x, mask_h))
        else:
            if x.ndim != 2:
                raise ShapeError(f"layer {name}: dense expects a flat input")
            z = x @ params.get(i, "kernel").T + params.get(i, "bias")
            a = _activate(l.activation, z)
            mask = _dropout_mask(rng, a.shape, l.dropout)
            y = a if mask is None else a * mask
            caches.append((x, z, a, mask))
        x = y
    return x, (caches if keep else None)


def forward(spec: NetworkSpec, params: ParameterStore, x) -> np.ndarray:
    """Deterministic inference pass without dropout."""
    xb, single = _as_batch(spec, x)
    y, _ = _run(spec, params, xb, None, False)
    return y[0] if single else y


def forward_train(spec: NetworkSpec, params: ParameterStore, x, seed) -> tuple[np.ndarray, ForwardCache]:
    """Training pass with inverted dropout; masks are drawn from ``seed``.

    ``seed`` may be an int or a :class:`numpy.random.Generator`.
    """
    xb, single = _as_batch(spec, x)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    y, caches = _run(spec, params, xb, rng, True)
    cache = ForwardCache(spec, id(params), params.version, single, caches)
    return (y[0] if single else y), cache


def backward(spec: NetworkSpec, params: ParameterStore, cache: ForwardCache, dout,
             l2: float | None = None) -> ParameterStore:
    """Gradients of the loss w.r.t. every parameter.

    ``dout`` is the gradient w.r.t. the network output. The L2 term
    ``2 * l2 * w`` is added to every kernel (not bias) gradient; ``l2``
    defaults to ``spec.l2``.
    """
    if cache.spec != spec or cache.store_id != id(params) or cache.version != params.version:
        raise StaleCacheError("forward cache does not match current parameters")
    l2 = spec.l2 if l2 is None else l2
    grads = params.zeros_like()
    d = np.asarray(dout, dtype=np.float64)
    if cache.single:
        d = d[None]
    for i in reversed(range(len(spec.layers))):
        l = spec.layers[i]
        c = cache.layers[i]
        if l.kind == "conv1d":
            x, z, a, mask = c
            if mask is not None:
                d = d * mask
            dz = _activate_grad(l.activation, z, a, d)
            d = _conv_backward(l, params.get(i, "kernel"), x, dz,
                               grads.get(i, "kernel"), grads.get(i, "bias"))
        elif l.kind == "maxpool1d":
            shape, arg = c
            bsz, t, ch = shape
            t_out = arg.shape[1]
            blocks = np.zeros((bsz, t_out, l.pool, ch))
            np.put_along_axis(blocks, arg[:, :, None, :], d[:, :, None, :], axis=2)
            dx = np.zeros(shape)
            dx[:, :t_out * l.pool] = blocks.reshape(bsz, t_out * l.pool, ch)
            d = dx
        elif l.kind == "flatten":
            d = d.reshape(c)
        elif l.kind == "lstm":
            lc, mask_x, mask_h = c
            d = _lstm_backward(l, params.get(i, "kernel"), params.get(i, "recurrent_kernel"),
                               lc, d, mask_x, mask_h, l.return_sequences,
                               grads.get(i, "kernel"), grads.get(i, "recurrent_kernel"),
                               grads.get(i, "bias"))
        else:
            x, z, a, mask = c
            if mask is not None:
                d = d * mask
            dz = _activate_grad(l.activation, z, a, d)
            grads.get(i, "kernel")[...] += dz.T @ x
            grads.get(i, "bias")[...] += dz.sum(axis=0)
            d = dz @ params.get(i, "kernel")
    if l2:
        mask = params.kernel_mask()
        grads.data[mask] += 2.0 * l2 * params.data[mask]
    return grads


def l2_penalty(params: ParameterStore, l2: float | None = None) -> float:
    l2 = params.spec.l2 if l2 is None else l2
    w = params.data[params.kernel_mask()]
    return float(l2 * np.dot(w, w))


def mse_loss(pred, target) -> tuple[float, np.ndarray]:
    """Mean squared error over components (and batch) with its gradient.

    For a batch of shape ``(B, 13)`` the loss is the batch mean of per-sample
    losses, so the gradient is ``2 (pred - target) / (13 B)``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} and target {target.shape} differ")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


# -- optimizer -------------------------------------------------------------


@dataclass
class TrainState:
    """Adaptive-moment optimizer state."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    @classmethod
    def for_params(cls, params, **kw) -> TrainState:
        n = len(params.data if isinstance(params, ParameterStore) else params)
        return cls(np.zeros(n), np.zeros(n), **kw)


def optimizer_step(state: TrainState, params, grads) -> None:
    """One bias-corrected adaptive-moment update, in place.

    ``params`` and ``grads`` are ParameterStores or flat arrays.
    """
    store = params if isinstance(params, ParameterStore) else None
    p = params.data if store is not None else params
    g = grads.data if isinstance(grads, ParameterStore) else np.asarray(grads, dtype=np.float64)
    if p.shape != state.m.shape or g.shape != p.shape:
        raise ShapeError("optimizer state, parameters and gradients differ in shape")
    bad = np.flatnonzero(~np.isfinite(g))
    if bad.size:
        where = store.owner(int(bad[0])) if store is not None else f"index {bad[0]}"
        raise NonFiniteGradientError(f"non-finite gradient in {where}")
    state.step += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * g
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    if store is not None:
        store.version += 1


# -- finite differences ----------------------------------------------------


def numeric_gradient(f, theta: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f`` at ``theta`` (modified in place, restored)."""
    g = np.zeros_like(theta)
    for k in range(theta.size):
        old = theta[k]
        theta[k] = old + eps
        fp = f()
        theta[k] = old - eps
        fm = f()
        theta[k] = old
        g[k] = (fp - fm) / (2.0 * eps)
    return g


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """Max componentwise ``|a - b| / max(|a|, |b|, floor)``."""
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))
