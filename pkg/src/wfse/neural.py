"""From-scratch dense masking network: forward, backward, Adam, serialization.

The graph is fixed: a stack of hidden blocks, each FC -> batch norm ->
leaky ReLU -> dropout, with an identity residual added around every hidden
block whose input and output widths match (for the default topology that
is the two 512-wide middle blocks), then an output block of batch norm ->
FC -> sigmoid producing a per-bin mask in (0, 1).

Training mode uses batch statistics and inverted dropout; inference mode
uses running statistics and no dropout, and is a pure function of
(model, inputs).  All randomness comes from numpy Generators passed in by
the caller, so runs are reproducible bit for bit.

Model file format ("WFD1"):
    magic           4 bytes  b"WFD1"
    input_dim       <u4
    n_hidden        <u4
    hidden widths   n_hidden * <u4
    output_dim      <u4
    leaky_slope, dropout_rate, bn_epsilon, bn_momentum   4 * <f8
    precision tag   <u1   (4 = float32, 8 = float64)
    step counter    <u8
    payload         per hidden block: W, b, bn_scale, bn_shift,
                    run_mean, run_var; then output block: bn_scale,
                    bn_shift, run_mean, run_var, W, b.  Row-major
                    little-endian in the tagged precision.
    checksum        <u8   blake2b-64 of the payload
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .binio import digest64
from .errors import (
    ChecksumMismatch,
    IoFailure,
    NonFiniteGradient,
    ShapeMismatch,
    StaleCache,
    VersionMismatch,
)

_MAGIC = b"WFD1"


@dataclass(frozen=True)
class Topology:
    input_dim: int = 645
    hidden: tuple[int, ...] = (1024, 512, 512, 512, 256)
    output_dim: int = 129
    leaky_slope: float = 0.01
    dropout_rate: float = 0.2
    bn_epsilon: float = 1e-5
    bn_momentum: float = 0.99

    @property
    def skips(self) -> tuple[bool, ...]:
        """Residual identity around each hidden block with equal in/out width."""
        widths = (self.input_dim,) + self.hidden
        return tuple(widths[i] == widths[i + 1] for i in range(len(self.hidden)))


@dataclass
class _HiddenBlock:
    w: np.ndarray
    b: np.ndarray
    bn_scale: np.ndarray
    bn_shift: np.ndarray
    run_mean: np.ndarray
    run_var: np.ndarray


class Model:
    """Parameter container; exclusively owned by one trainer while training."""

    def __init__(self, topology: Topology, dtype=np.float32, seed: int = 0):
        self.topology = topology
        self.dtype = np.dtype(dtype)
        self.step = 0
        self._adam_m = None
        self._adam_v = None

        rng = np.random.default_rng(seed)
        widths = (topology.input_dim,) + topology.hidden
        self.blocks = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            self.blocks.append(_HiddenBlock(
                w=_glorot(rng, fan_in, fan_out, self.dtype),
                b=np.zeros(fan_out, self.dtype),
                bn_scale=np.ones(fan_out, self.dtype),
                bn_shift=np.zeros(fan_out, self.dtype),
                run_mean=np.zeros(fan_out, self.dtype),
                run_var=np.ones(fan_out, self.dtype),
            ))
        last = widths[-1]
        self.out_bn_scale = np.ones(last, self.dtype)
        self.out_bn_shift = np.zeros(last, self.dtype)
        self.out_run_mean = np.zeros(last, self.dtype)
        self.out_run_var = np.ones(last, self.dtype)
        self.out_w = _glorot(rng, last, topology.output_dim, self.dtype)
        self.out_b = np.zeros(topology.output_dim, self.dtype)

    def parameters(self) -> list[np.ndarray]:
        """Trainable arrays in a fixed order (running stats excluded)."""
        params = []
        for blk in self.blocks:
            params += [blk.w, blk.b, blk.bn_scale, blk.bn_shift]
        params += [self.out_bn_scale, self.out_bn_shift, self.out_w, self.out_b]
        return params

    def state_arrays(self) -> list[np.ndarray]:
        """All persisted arrays in serialization order."""
        arrays = []
        for blk in self.blocks:
            arrays += [blk.w, blk.b, blk.bn_scale, blk.bn_shift,
                       blk.run_mean, blk.run_var]
        arrays += [self.out_bn_scale, self.out_bn_shift,
                   self.out_run_mean, self.out_run_var, self.out_w, self.out_b]
        return arrays


def _glorot(rng, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _bn_forward(z, scale, shift, run_mean, run_var, train: bool,
                eps: float, momentum: float):
    """Returns (out, xhat, inv_std); train mode updates the running stats in place."""
    if train:
        mean = z.mean(axis=0)
        var = z.var(axis=0)  # biased, matching the normalization
        run_mean *= momentum
        run_mean += (1.0 - momentum) * mean
        run_var *= momentum
        run_var += (1.0 - momentum) * var
    else:
        mean, var = run_mean, run_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (z - mean) * inv_std
    return scale * xhat + shift, xhat, inv_std


def _bn_backward(d_out, xhat, inv_std, scale):
    """Gradient through batch-statistics normalization."""
    b = d_out.shape[0]
    d_scale = np.sum(d_out * xhat, axis=0)
    d_shift = np.sum(d_out, axis=0)
    d_xhat = d_out * scale
    d_z = (inv_std / b) * (
        b * d_xhat - np.sum(d_xhat, axis=0) - xhat * np.sum(d_xhat * xhat, axis=0)
    )
    return d_z, d_scale, d_shift


@dataclass
class ForwardCache:
    """Intermediates captured by a train-mode forward for the backward pass."""

    step: int
    train: bool
    inputs: np.ndarray
    hidden: list = field(default_factory=list)  # per block intermediates
    out_bn: tuple = ()
    mask: np.ndarray = None
    block_input_grads: list = field(default_factory=list)  # filled by backward
    input_grad: np.ndarray = None


def forward(model: Model, inputs: np.ndarray, mode: str = "infer",
            rng: np.random.Generator | None = None):
    """Run the network; returns (mask, cache).

    ``inputs`` must already be normalized (pipeline's job).  Train mode
    needs ``rng`` for dropout when the rate is nonzero.
    """
    topo = model.topology
    x = np.asarray(inputs, dtype=model.dtype)
    if x.ndim != 2 or x.shape[1] != topo.input_dim:
        raise ShapeMismatch(f"expected (batch, {topo.input_dim}) inputs, got {x.shape}")
    train = mode == "train"
    if train and topo.dropout_rate > 0.0 and rng is None:
        raise ValueError("train mode with dropout requires an rng")

    cache = ForwardCache(step=model.step, train=train, inputs=x)
    keep = 1.0 - topo.dropout_rate
    h = x
    for blk, skip in zip(model.blocks, topo.skips):
        inp = h
        z = inp @ blk.w + blk.b
        bn_out, xhat, inv_std = _bn_forward(
            z, blk.bn_scale, blk.bn_shift, blk.run_mean, blk.run_var,
            train, topo.bn_epsilon, topo.bn_momentum)
        positive = bn_out > 0
        act = np.where(positive, bn_out, topo.leaky_slope * bn_out)
        if train and topo.dropout_rate > 0.0:
            drop_mask = (rng.random(act.shape) < keep).astype(model.dtype) / keep
            dropped = act * drop_mask
        else:
            drop_mask = None
            dropped = act
        h = dropped + inp if skip else dropped
        cache.hidden.append((inp, xhat, inv_std, positive, drop_mask, skip))

    bn_out_o, xhat_o, inv_std_o = _bn_forward(
        h, model.out_bn_scale, model.out_bn_shift,
        model.out_run_mean, model.out_run_var,
        train, topo.bn_epsilon, topo.bn_momentum)
    logits = bn_out_o @ model.out_w + model.out_b
    mask = _sigmoid(logits)
    cache.out_bn = (bn_out_o, xhat_o, inv_std_o)
    cache.mask = mask
    return mask, cache


def backward(model: Model, cache: ForwardCache, grad_mask: np.ndarray):
    """Exact gradients of the scalar loss whose mask-gradient is grad_mask.

    Returns arrays in ``model.parameters()`` order.  The cache must come
    from a train-mode forward on the current model state.
    """
    if not cache.train:
        raise StaleCache("backward needs a train-mode forward cache")
    if cache.step != model.step:
        raise StaleCache("model was updated after this forward pass")
    topo = model.topology
    g = np.asarray(grad_mask, dtype=model.dtype)
    if g.shape != cache.mask.shape:
        raise ShapeMismatch(f"grad_mask shape {g.shape} != mask shape {cache.mask.shape}")

    bn_out_o, xhat_o, inv_std_o = cache.out_bn
    d_logits = g * cache.mask * (1.0 - cache.mask)
    d_out_w = bn_out_o.T @ d_logits
    d_out_b = d_logits.sum(axis=0)
    d_bn_out_o = d_logits @ model.out_w.T
    d_h, d_out_scale, d_out_shift = _bn_backward(
        d_bn_out_o, xhat_o, inv_std_o, model.out_bn_scale)

    block_grads = []
    cache.block_input_grads = [None] * len(model.blocks)
    for i in range(len(model.blocks) - 1, -1, -1):
        blk = model.blocks[i]
        inp, xhat, inv_std, positive, drop_mask, skip = cache.hidden[i]
        d_dropped = d_h
        d_act = d_dropped * drop_mask if drop_mask is not None else d_dropped
        d_bn_out = d_act * np.where(positive, 1.0, topo.leaky_slope).astype(model.dtype)
        d_z, d_scale, d_shift = _bn_backward(d_bn_out, xhat, inv_std, blk.bn_scale)
        d_w = inp.T @ d_z
        d_b = d_z.sum(axis=0)
        d_inp = d_z @ blk.w.T
        if skip:
            d_inp = d_inp + d_h  # residual branch accumulates
        block_grads.append([d_w, d_b, d_scale, d_shift])
        cache.block_input_grads[i] = d_inp
        d_h = d_inp

    cache.input_grad = d_h
    grads = []
    for quad in reversed(block_grads):
        grads += quad
    grads += [d_out_scale, d_out_shift, d_out_w, d_out_b]
    return grads


def adam_step(model: Model, grads, lr: float = 5e-4, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> Model:
    """One Adam update with bias correction; increments the step counter."""
    params = model.parameters()
    if len(grads) != len(params):
        raise ShapeMismatch("gradient list does not match parameter list")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient("non-finite parameter gradient")
    if model._adam_m is None:
        model._adam_m = [np.zeros_like(p) for p in params]
        model._adam_v = [np.zeros_like(p) for p in params]

    t = model.step + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, model._adam_m, model._adam_v):
        g = g.astype(p.dtype, copy=False)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    model.step = t
    return model


# --- serialization -----------------------------------------------------------

def save_model(model: Model, path) -> None:
    topo = model.topology
    header = b"".join([
        _MAGIC,
        struct.pack("<II", topo.input_dim, len(topo.hidden)),
        struct.pack(f"<{len(topo.hidden)}I", *topo.hidden),
        struct.pack("<I", topo.output_dim),
        struct.pack("<4d", topo.leaky_slope, topo.dropout_rate,
                    topo.bn_epsilon, topo.bn_momentum),
        struct.pack("<B", model.dtype.itemsize),
        struct.pack("<Q", model.step),
    ])
    tag = "<f4" if model.dtype.itemsize == 4 else "<f8"
    payload = b"".join(a.astype(tag).tobytes(order="C") for a in model.state_arrays())
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload)
            fh.write(struct.pack("<Q", digest64(payload)))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_model(path) -> Model:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(blob) < 4 or blob[:4] != _MAGIC:
        raise VersionMismatch(f"{path}: bad magic, expected {_MAGIC!r}")

    view = memoryview(blob)
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(blob):
            raise ChecksumMismatch(f"{path}: truncated header")
        vals = struct.unpack_from(fmt, view, pos)
        pos += size
        return vals

    input_dim, n_hidden = take("<II")
    hidden = take(f"<{n_hidden}I")
    (output_dim,) = take("<I")
    slope, rate, bn_eps, bn_mom = take("<4d")
    (itemsize,) = take("<B")
    (step,) = take("<Q")
    if itemsize not in (4, 8):
        raise VersionMismatch(f"{path}: unknown precision tag {itemsize}")

    topo = Topology(input_dim, tuple(hidden), output_dim, slope, rate, bn_eps, bn_mom)
    model = Model(topo, dtype=np.float32 if itemsize == 4 else np.float64)
    model.step = step

    arrays = model.state_arrays()
    nbytes = sum(a.size for a in arrays) * itemsize
    if pos + nbytes + 8 > len(blob):
        raise ChecksumMismatch(f"{path}: truncated payload")
    payload = bytes(view[pos:pos + nbytes])
    (stored,) = struct.unpack_from("<Q", view, pos + nbytes)
    if digest64(payload) != stored:
        raise ChecksumMismatch(f"{path}: payload checksum mismatch")

    tag = "<f4" if itemsize == 4 else "<f8"
    offset = 0
    for a in arrays:
        count = a.size
        flat = np.frombuffer(payload, dtype=tag, count=count, offset=offset)
        a[...] = flat.reshape(a.shape)
        offset += count * itemsize
    return model
