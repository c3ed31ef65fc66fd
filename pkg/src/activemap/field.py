"""Coordinate MLP signed distance field with hand-written derivatives.

All parameters live in one flat float vector; per-layer weight and bias
arrays are views into it. This keeps Adam, weight perturbation, parameter
deltas and landscape slicing as plain vector arithmetic.

Spatial gradients are carried forward as two tangent channels stacked next
to the primal activations (shape ``(1 + 2, N, width)``), so a single reverse
pass yields parameter gradients for value losses and for losses on the
spatial gradient (the eikonal term).
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np


class DivergenceError(FloatingPointError):
    """Raised when a loss or gradient becomes non-finite."""


@dataclass(frozen=True)
class PositionalEmbedding:
    n_bands: int = 6
    base: float = np.pi
    include_raw: bool = True
    # inputs are mapped by (x - center) / scale before encoding
    center: tuple = (0.0, 0.0)
    scale: float = 1.0

    def __post_init__(self):
        if self.n_bands < 0:
            raise ValueError("n_bands must be >= 0")
        if not self.scale > 0:
            raise ValueError("scale must be > 0")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    def out_dim(self, raw_dim: int = 2) -> int:
        return raw_dim * int(self.include_raw) + 2 * self.n_bands * raw_dim

    @property
    def frequencies(self) -> np.ndarray:
        return self.base * 2.0 ** np.arange(self.n_bands)


def positional_encode(x, emb: PositionalEmbedding, with_jacobian=False):
    """Embed points ``x`` of shape (N, 2).

    Points are first mapped by ``(x - center) / scale``. Layout: raw
    (mapped) coordinates if enabled, then for each band k the sines of all
    coordinates followed by their cosines at frequency ``base * 2**k``.

    With ``with_jacobian`` also returns d(embedding)/dx as an array of shape
    (2, N, D): one tangent channel per input coordinate.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n, d = x.shape
    if emb.scale != 1.0 or any(emb.center):
        x = (x - np.asarray(emb.center[:d])) / emb.scale
    w = emb.frequencies
    n_raw = d if emb.include_raw else 0
    wx = x[:, None, :] * w[None, :, None]                       # (N, L, d)
    sin, cos = np.sin(wx), np.cos(wx)
    e = np.empty((n, n_raw + 2 * d * len(w)))
    if n_raw:
        e[:, :n_raw] = x
    e[:, n_raw:] = np.concatenate([sin, cos], axis=2).reshape(n, 2 * d * len(w))
    if not with_jacobian:
        return e
    jac = np.zeros((d, n, e.shape[1]))
    body = jac[:, :, n_raw:].reshape(d, n, len(w), 2 * d)
    for i in range(d):
        if n_raw:
            jac[i, :, i] = 1.0
        body[i, :, :, i] = w * cos[:, :, i]
        body[i, :, :, d + i] = -w * sin[:, :, i]
    if emb.scale != 1.0:
        jac /= emb.scale
    return e, jac


@dataclass(frozen=True)
class Architecture:
    """Layer layout of the field network.

    The embedding feeds the first hidden layer and is concatenated again to
    the input of hidden layer ``skip_layer`` (0-based; 2 means the third).
    """

    width: int = 64
    n_hidden: int = 4
    embedding: PositionalEmbedding = dc_field(default_factory=PositionalEmbedding)
    skip_layer: int = 2
    in_dim: int = 2

    def layer_shapes(self) -> list[tuple[int, int]]:
        d_emb = self.embedding.out_dim(self.in_dim)
        shapes = []
        prev = d_emb
        for i in range(self.n_hidden):
            fan_in = prev + (d_emb if self.has_skip(i) else 0)
            shapes.append((self.width, fan_in))
            prev = self.width
        shapes.append((1, prev))
        return shapes

    def has_skip(self, layer: int) -> bool:
        return 0 < layer == self.skip_layer < self.n_hidden

    def n_params(self) -> int:
        return sum(o * i + o for o, i in self.layer_shapes())


class FieldParams:
    """Flat parameter vector of the field network plus per-layer views."""

    def __init__(self, arch: Architecture, flat: np.ndarray | None = None, dtype=None):
        self.arch = arch
        self.shapes = arch.layer_shapes()
        n = arch.n_params()
        if flat is None:
            flat = np.zeros(n, dtype=dtype or np.float64)
        if dtype is None:
            dtype = flat.dtype if np.issubdtype(flat.dtype, np.floating) else np.float64
        flat = np.ascontiguousarray(flat, dtype=dtype)
        if flat.shape != (n,):
            raise ValueError(f"expected {n} parameters, got {flat.shape}")
        self.flat = flat
        self.weights, self.biases = _split(flat, self.shapes)

    @classmethod
    def initialize(cls, arch: Architecture, seed: int = 0, dtype=np.float64) -> "FieldParams":
        """Uniform fan-in initialisation, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
        rng = np.random.default_rng(seed)
        p = cls(arch)
        for w, b in zip(p.weights, p.biases):
            bound = 1.0 / np.sqrt(w.shape[1]) if w.shape[1] else 0.0
            w[...] = rng.uniform(-bound, bound, size=w.shape)
            b[...] = rng.uniform(-bound, bound, size=b.shape)
        return p.astype(dtype)

    @property
    def dtype(self):
        return self.flat.dtype

    def astype(self, dtype) -> "FieldParams":
        return FieldParams(self.arch, self.flat.astype(dtype))

    def copy(self) -> "FieldParams":
        return FieldParams(self.arch, self.flat.copy())

    def with_flat(self, flat: np.ndarray) -> "FieldParams":
        return FieldParams(self.arch, flat)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.flat).all())

    def __len__(self):
        return self.flat.size

    # snapshot protocol used by the uncertainty / planner / metrics code
    def sdf(self, x) -> np.ndarray:
        return forward(self, x)

    def grad(self, x) -> np.ndarray:
        return field_gradient(self, x)


def _split(flat, shapes):
    weights, biases = [], []
    i = 0
    for o, n_in in shapes:
        weights.append(flat[i:i + o * n_in].reshape(o, n_in))
        i += o * n_in
        biases.append(flat[i:i + o])
        i += o
    return weights, biases


@dataclass
class ForwardCache:
    """Activations kept for the reverse pass.

    Primal rows and tangent rows share one 2D array per layer: rows ``[0, N)``
    are primal values, rows ``[N, N + m)`` and ``[N + m, N + 2m)`` the
    d/dx and d/dy tangents of the first ``m`` points. ``inputs[l]`` is the
    stacked input of layer ``l``; ``sig[l]`` the softplus derivative of the
    primal pre-activation; ``pre_t[l]`` the stacked tangent pre-activations.
    """

    inputs: list
    sig: list
    pre_t: list
    n_rows: int
    n_tangent: int
    out: np.ndarray
    grad: np.ndarray | None


def _softplus_sigmoid(a):
    """Numerically stable softplus(a) and its derivative sigmoid(a)."""
    e = np.exp(-np.abs(a))
    sp = np.log1p(e)
    sp += np.maximum(a, 0)
    # sigmoid = 1/(1+e) for a >= 0, e/(1+e) = 1 - 1/(1+e) otherwise
    e += 1
    np.reciprocal(e, out=e)
    e -= 0.5
    e *= np.sign(a)
    e += 0.5
    return sp, e


def _softplus(a):
    sp = np.abs(a)
    np.negative(sp, out=sp)
    np.exp(sp, out=sp)
    np.log1p(sp, out=sp)
    sp += np.maximum(a, 0)
    return sp


def _values(params: FieldParams, x) -> np.ndarray:
    """Output only; skips everything backward() would need."""
    arch = params.arch
    e = positional_encode(x, arch.embedding).astype(params.flat.dtype, copy=False)
    h = e
    last = len(params.weights) - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        if arch.has_skip(l):
            h = np.concatenate([h, e], axis=1)
        a = h @ w.T
        a += b
        if l == last:
            return a[:, 0]
        h = _softplus(a)


def _forward(params: FieldParams, x, n_tangent=0) -> ForwardCache:
    arch = params.arch
    dt = params.flat.dtype
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[0]
    m = n_tangent
    if m:
        e, je = positional_encode(x[:m], arch.embedding, with_jacobian=True)
        if m < n:
            e = np.concatenate([e, positional_encode(x[m:], arch.embedding)])
        e = np.concatenate([e, je.reshape(2 * m, -1)]).astype(dt, copy=False)
    else:
        e = positional_encode(x, arch.embedding).astype(dt, copy=False)

    inputs, sigs, pre_ts = [], [], []
    h = e
    last = len(params.weights) - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        if arch.has_skip(l):
            h = np.concatenate([h, e], axis=1)
        inputs.append(h)
        a = h @ w.T
        a[:n] += b
        if l == last:
            break
        sp, sg = _softplus_sigmoid(a[:n])
        sigs.append(sg)
        if m:
            at = a[n:]
            pre_ts.append(at)
            h = np.empty_like(a)
            h[:n] = sp
            h[n:] = (at.reshape(2, m, -1) * sg[:m]).reshape(2 * m, -1)
        else:
            pre_ts.append(None)
            h = sp
    out = a[:n, 0]
    grad = a[n:, 0].reshape(2, m).T if m else None
    return ForwardCache(inputs, sigs, pre_ts, n, m, out, grad)


def forward(params: FieldParams, x, chunk: int = 65536) -> np.ndarray:
    """Signed distance at points ``x`` (N, 2) or a single point (2,)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    out = np.concatenate([_values(params, x[i:i + chunk])
                          for i in range(0, max(1, x.shape[0]), chunk)])
    return out[0] if single else out


def field_gradient(params: FieldParams, x) -> np.ndarray:
    """Exact spatial gradient of the field, shape (N, 2) (or (2,) for one point)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    g = _forward(params, x, n_tangent=x.shape[0]).grad
    return g[0] if single else g


def forward_with_cache(params: FieldParams, x, n_tangent: int = 0) -> ForwardCache:
    """Forward pass keeping activations; tangents for the first ``n_tangent`` rows."""
    return _forward(params, x, n_tangent=n_tangent)


def backward(params: FieldParams, cache: ForwardCache, d_out, d_grad=None) -> np.ndarray:
    """Reverse pass returning the flat parameter gradient.

    ``d_out`` is dLoss/df for every row (N,), ``d_grad`` is dLoss/d(grad f)
    for the tangent rows (n_tangent, 2) or None.
    """
    dt = params.flat.dtype
    d_out = np.asarray(d_out, dtype=dt)
    if not np.isfinite(d_out).all() or (d_grad is not None and not np.isfinite(d_grad).all()):
        raise DivergenceError("non-finite loss derivative")
    arch = params.arch
    n, m = cache.n_rows, cache.n_tangent
    grad = np.zeros_like(params.flat)
    gws, gbs = _split(grad, params.shapes)

    abar = np.zeros((n + 2 * m, 1), dtype=dt)
    abar[:n, 0] = d_out
    if d_grad is not None:
        abar[n:, 0] = np.asarray(d_grad, dtype=dt).T.reshape(-1)
    elif m:
        # no loss on the spatial gradient: drop the tangent rows
        abar = abar[:n]
        m = 0
    for l in range(len(params.weights) - 1, -1, -1):
        w = params.weights[l]
        h = cache.inputs[l][:n + 2 * m]
        gws[l] += abar.T @ h
        gbs[l] += abar[:n].sum(axis=0)
        if l == 0:
            break
        hbar = abar @ w
        if arch.has_skip(l):
            hbar = hbar[:, :arch.width]
        # previous hidden layer: h = softplus(a), h_t = sigmoid(a) * a_t
        s = cache.sig[l - 1]
        abar = hbar
        if m:
            sm = s[:m]
            at = cache.pre_t[l - 1].reshape(2, m, -1)
            hbar_t = hbar[n:].reshape(2, m, -1)
            curv = (hbar_t * at).sum(axis=0)
            curv *= sm * (1.0 - sm)
            hbar_t *= sm
            abar[:n] *= s
            abar[:m] += curv
        else:
            abar *= s
    return grad


@dataclass
class OptimizerState:
    """Adam moments and hyper-parameters for a flat parameter vector."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 0.0013
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: FieldParams | int, **kw) -> "OptimizerState":
        if isinstance(params, int):
            n, dt = params, np.float64
        else:
            n, dt = len(params), params.dtype
        return cls(np.zeros(n, dtype=dt), np.zeros(n, dtype=dt), **kw)

    def copy(self) -> "OptimizerState":
        return OptimizerState(self.m.copy(), self.v.copy(), self.step,
                              self.lr, self.beta1, self.beta2, self.eps)


def adam_step(params: FieldParams, grads: np.ndarray, state: OptimizerState):
    """One bias-corrected Adam update, in place. Returns ``(params, state)``."""
    grads = np.asarray(grads, dtype=params.flat.dtype)
    if grads.shape != params.flat.shape or state.m.shape != grads.shape:
        raise ValueError("gradient / optimizer shapes do not match parameters")
    if not np.isfinite(grads).all():
        raise DivergenceError("non-finite gradient")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grads
    state.v *= b2
    state.v += (1.0 - b2) * grads * grads
    m_hat = state.m / (1.0 - b1 ** state.step)
    v_hat = state.v / (1.0 - b2 ** state.step)
    params.flat -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


@dataclass
class ParamDelta:
    """Exponentially smoothed L2 norm of recent parameter changes."""

    alpha: float = 0.9
    last: float = 0.0
    smoothed: float = 0.0

    def update(self, norm: float) -> float:
        if norm < 0:
            raise ValueError("norm must be >= 0")
        self.last = float(norm)
        self.smoothed = self.alpha * self.smoothed + (1.0 - self.alpha) * self.last
        return self.smoothed

    @property
    def norm(self) -> float:
        return self.smoothed


def perturb_weights(params: FieldParams, b: float, seed=None) -> FieldParams:
    """Copy of ``params`` with i.i.d. N(0, b^2) noise added to every entry.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    if b < 0:
        raise ValueError("perturbation scale must be >= 0")
    if b == 0:
        return params.copy()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    noise = rng.normal(0.0, b, size=params.flat.shape)
    return params.with_flat(params.flat + noise.astype(params.dtype))


# -- checkpoints ------------------------------------------------------------

_MAGIC = "activemap-field v1"


def _header(arch: Architecture) -> str:
    emb = arch.embedding
    shapes = ";".join(f"{o}x{i}" for o, i in arch.layer_shapes())
    return (f"{_MAGIC} width={arch.width} n_hidden={arch.n_hidden} "
            f"skip={arch.skip_layer} bands={emb.n_bands} base={emb.base!r} "
            f"raw={int(emb.include_raw)} center={emb.center[0]!r},{emb.center[1]!r} "
            f"scale={emb.scale!r} shapes={shapes}\n")


def dumps(params: FieldParams) -> bytes:
    """Header line with layer shapes followed by little-endian float32 values."""
    return _header(params.arch).encode("ascii") + params.flat.astype("<f4").tobytes()


def loads(blob: bytes) -> FieldParams:
    nl = blob.index(b"\n")
    head = blob[:nl].decode("ascii")
    if not head.startswith(_MAGIC):
        raise ValueError("not a field checkpoint")
    kv = dict(tok.split("=", 1) for tok in head[len(_MAGIC):].split())
    center = tuple(float(c) for c in kv.get("center", "0.0,0.0").split(","))
    emb = PositionalEmbedding(int(kv["bands"]), float(kv["base"]), kv["raw"] == "1",
                              center, float(kv.get("scale", 1.0)))
    arch = Architecture(int(kv["width"]), int(kv["n_hidden"]), emb, int(kv["skip"]))
    expected = ";".join(f"{o}x{i}" for o, i in arch.layer_shapes())
    if kv["shapes"] != expected:
        raise ValueError(f"layer shapes {kv['shapes']} inconsistent with architecture")
    flat = np.frombuffer(blob[nl + 1:], dtype="<f4").astype(np.float64)
    return FieldParams(arch, flat)


def save(params: FieldParams, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(params))


def load(path) -> FieldParams:
    with open(path, "rb") as fh:
        return loads(fh.read())


__all__ = [
    "Architecture", "DivergenceError", "FieldParams", "ForwardCache",
    "OptimizerState", "ParamDelta", "PositionalEmbedding", "adam_step",
    "backward", "dumps", "field_gradient", "forward", "forward_with_cache",
    "load", "loads", "perturb_weights", "positional_encode", "save",
]
