"""Network building blocks: conv layers, a fused GRU scan, generator and critic."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from ..errors import GridMismatch, ShapeMismatch, StateSizeMismatch
from . import tensor as T
from .tensor import Tensor, get_default_dtype


class Module:
    """Minimal parameter container; parameters are discovered in attribute order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"state dict lacks parameters: {sorted(missing)}")
        for name, p in params.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ShapeMismatch(f"{name}: expected {p.shape}, got {value.shape}")
            p.data = value.astype(p.dtype).copy()

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def _param(rng: np.random.Generator, shape, bound: float) -> Tensor:
    dtype = get_default_dtype()
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        bound = 1.0 / math.sqrt(n_in)
        self.weight = _param(rng, (n_out, n_in), bound)
        self.bias = _param(rng, (n_out,), bound)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight.T + self.bias


class Conv1d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding="same"):
        bound = 1.0 / math.sqrt(c_in * kernel)
        self.weight = _param(rng, (c_out, c_in, kernel), bound)
        self.bias = _param(rng, (c_out,), bound)
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv1d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


# ---------------------------------------------------------------------------
# GRU
# ---------------------------------------------------------------------------
def gru_cell(x: Tensor, h: Tensor, w_ih: Tensor, w_hh: Tensor, b_ih: Tensor, b_hh: Tensor) -> Tensor:
    """One GRU step built from primitives (reference path for the fused scan)."""
    hidden = h.shape[-1]
    gx = x @ w_ih.T + b_ih
    gh = h @ w_hh.T + b_hh
    r = T.sigmoid(gx[..., :hidden] + gh[..., :hidden])
    z = T.sigmoid(gx[..., hidden:2 * hidden] + gh[..., hidden:2 * hidden])
    n = T.tanh(gx[..., 2 * hidden:] + r * gh[..., 2 * hidden:])
    return (1.0 - z) * n + z * h


def gru_scan_op(inputs: Tensor, h0: Tensor, w_ih: Tensor, w_hh: Tensor,
                b_ih: Tensor, b_hh: Tensor) -> Tensor:
    """Fused GRU over (B, T, I) inputs; returns all hidden states (B, T, H).

    Gate order is (reset, update, candidate).  The reverse pass is
    hand-written backpropagation through time, so this primitive is
    first-order only.
    """
    x = inputs.data
    b, steps, _ = x.shape
    hidden = h0.shape[-1]
    wi, wh = w_ih.data, w_hh.data
    xg = x @ wi.T + b_ih.data                       # (B, T, 3H)
    hs = np.empty((b, steps, hidden), dtype=x.dtype)
    rs = np.empty_like(hs)
    zs = np.empty_like(hs)
    ns = np.empty_like(hs)
    hns = np.empty_like(hs)
    h = h0.data
    for t in range(steps):
        hg = h @ wh.T + b_hh.data
        r = T._sigmoid_np(xg[:, t, :hidden] + hg[:, :hidden])
        z = T._sigmoid_np(xg[:, t, hidden:2 * hidden] + hg[:, hidden:2 * hidden])
        hn = hg[:, 2 * hidden:]
        n = np.tanh(xg[:, t, 2 * hidden:] + r * hn)
        h = (1.0 - z) * n + z * h
        hs[:, t], rs[:, t], zs[:, t], ns[:, t], hns[:, t] = h, r, z, n, hn

    def vjp(g: Tensor):
        gout = g.data
        d_x = np.empty_like(xg)
        d_wh = np.zeros_like(wh)
        d_bh = np.zeros_like(b_hh.data)
        dh = np.zeros((b, hidden), dtype=x.dtype)
        for t in range(steps - 1, -1, -1):
            h_prev = hs[:, t - 1] if t > 0 else h0.data
            r, z, n, hn = rs[:, t], zs[:, t], ns[:, t], hns[:, t]
            dh = dh + gout[:, t]
            dn = dh * (1.0 - z)
            dz = dh * (h_prev - n)
            dan = dn * (1.0 - n * n)
            dar = dan * hn * r * (1.0 - r)
            daz = dz * z * (1.0 - z)
            dgh = np.concatenate([dar, daz, dan * r], axis=1)
            d_x[:, t] = np.concatenate([dar, daz, dan], axis=1)
            d_wh += dgh.T @ h_prev
            d_bh += dgh.sum(axis=0)
            dh = dh * z + dgh @ wh
        flat_dx = d_x.reshape(-1, 3 * hidden)
        d_inputs = d_x @ wi
        d_wi = flat_dx.T @ x.reshape(-1, x.shape[-1])
        d_bi = flat_dx.sum(axis=0)
        return tuple(Tensor(a) for a in (d_inputs, dh, d_wi, d_wh, d_bi, d_bh))

    out = T._make(hs, (inputs, h0, w_ih, w_hh, b_ih, b_hh), vjp, "gru_scan")
    out.first_order_only = True
    return out


class GRU(Module):
    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator):
        bound = 1.0 / math.sqrt(hidden)
        self.hidden = hidden
        self.w_ih = _param(rng, (3 * hidden, n_in), bound)
        self.w_hh = _param(rng, (3 * hidden, hidden), bound)
        self.b_ih = _param(rng, (3 * hidden,), bound)
        self.b_hh = _param(rng, (3 * hidden,), bound)

    def initial_state(self, batch: int) -> Tensor:
        return Tensor(np.zeros((batch, self.hidden), dtype=self.w_ih.dtype))

    def __call__(self, inputs: Tensor, state: Tensor | None = None) -> tuple[Tensor, Tensor]:
        return gru_scan(self, inputs, state)


def gru_scan(gru: GRU, inputs: Tensor, state0: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """Run ``gru`` over (B, T, I) inputs; returns (outputs (B, T, H), final state (B, H))."""
    inputs = T.as_tensor(inputs)
    if inputs.ndim != 3:
        raise ShapeMismatch(f"GRU inputs must be (B, T, I), got {inputs.shape}")
    if state0 is None:
        state0 = gru.initial_state(inputs.shape[0])
    state0 = T.as_tensor(state0)
    if state0.shape != (inputs.shape[0], gru.hidden):
        raise StateSizeMismatch(f"state shape {state0.shape}, expected {(inputs.shape[0], gru.hidden)}")
    outputs = gru_scan_op(inputs, state0, gru.w_ih, gru.w_hh, gru.b_ih, gru.b_hh)
    return outputs, outputs[:, -1, :]


def _as(x, dtype) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


# ---------------------------------------------------------------------------
# generator and critic
# ---------------------------------------------------------------------------
class GeneratorNet(Module):
    """Conditional 1-d U-Net whose output features are filtered by a GRU.

    Condition ``y`` is (B, cond_channels, L) on the condition grid.  Noise
    ``z`` (B, z_channels, L_bottleneck) is concatenated to the bottleneck.
    The GRU runs on the condition grid and a linear head emits ``upsample``
    output samples per step, so the output grid is ``upsample`` times finer.
    """

    def __init__(self, cond_channels: int = 21, *, depth: int = 3, base: int = 16, kernel: int = 5,
                 gru_hidden: int = 32, z_channels: int = 4, upsample: int = 1,
                 out_offset: float = 0.0, out_scale: float = 1.0, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.config = dict(cond_channels=cond_channels, depth=depth, base=base, kernel=kernel,
                           gru_hidden=gru_hidden, z_channels=z_channels, upsample=upsample,
                           out_offset=out_offset, out_scale=out_scale, seed=seed)
        self.cond_channels = cond_channels
        self.depth = depth
        self.z_channels = z_channels
        self.upsample = upsample
        self.out_offset = out_offset
        self.out_scale = out_scale
        widths = [base * 2 ** i for i in range(depth)]
        self.enc = []
        self.down = []
        c_prev = cond_channels
        for w in widths:
            self.enc.append(Conv1d(c_prev, w, kernel, rng))
            self.down.append(Conv1d(w, w, kernel, rng, stride=2))
            c_prev = w
        self.bottom = Conv1d(c_prev + z_channels, c_prev, kernel, rng)
        self.up = []
        self.dec = []
        for w in reversed(widths):
            self.up.append(Conv1d(c_prev, w, kernel, rng))
            self.dec.append(Conv1d(2 * w, w, kernel, rng))
            c_prev = w
        self.gru = GRU(c_prev, gru_hidden, rng)
        self.head = Linear(gru_hidden, upsample, rng)

    @property
    def hidden(self) -> int:
        return self.gru.hidden

    def padded_length(self, length: int) -> int:
        m = 2 ** self.depth
        return -(-length // m) * m

    def z_shape(self, length: int) -> tuple[int, int]:
        return self.z_channels, self.padded_length(length) // 2 ** self.depth

    def sample_z(self, batch: int, length: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((batch,) + self.z_shape(length)).astype(self.head.weight.dtype)

    def initial_state(self, batch: int) -> Tensor:
        return self.gru.initial_state(batch)

    def __call__(self, y, z, state=None) -> tuple[Tensor, Tensor]:
        return generator_forward(self, y, z, state)


def generator_forward(net: GeneratorNet, y, z, state=None) -> tuple[Tensor, Tensor]:
    """Generate one window per batch row; returns (x (B, L*upsample), new GRU state)."""
    dtype = net.head.weight.dtype
    y, z = _as(y, dtype), _as(z, dtype)
    if y.ndim != 3 or y.shape[1] != net.cond_channels:
        raise GridMismatch(f"condition must be (B, {net.cond_channels}, L), got {y.shape}")
    batch, _, length = y.shape
    if z.shape != (batch,) + net.z_shape(length):
        raise GridMismatch(f"noise shape {z.shape}, expected {(batch,) + net.z_shape(length)}")
    if state is None:
        state = net.initial_state(batch)
    h = T.pad_last(y, 0, net.padded_length(length) - length)
    skips = []
    for enc, down in zip(net.enc, net.down):
        h = T.leaky_relu(enc(h))
        skips.append(h)
        h = T.leaky_relu(down(h))
    h = T.leaky_relu(net.bottom(T.concat([h, z], axis=1)))
    for up, dec, skip in zip(net.up, net.dec, reversed(skips)):
        h = T.leaky_relu(up(T.repeat_last(h, 2)))
        h = T.leaky_relu(dec(T.concat([h, skip], axis=1)))
    h = h[:, :, :length]
    feats, _ = gru_scan(net.gru, T.transpose(h, (0, 2, 1)), state)
    new_state = feats[:, -1, :]
    out = T.tanh(net.head(feats))                        # (B, L, upsample)
    out = T.reshape(out, (batch, length * net.upsample))
    return out * net.out_scale + net.out_offset, new_state


class CriticNet(Module):
    """Strided conv stack over [x; y] followed by global average pooling.

    No batch-coupled normalisation, so per-sample input gradients are exact.
    """

    def __init__(self, cond_channels: int = 21, *, widths=(16, 32, 32), kernel: int = 5,
                 cond_upsample: int = 1, x_offset: float = 0.0, x_scale: float = 1.0,
                 slope: float = 0.2, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.config = dict(cond_channels=cond_channels, widths=list(widths), kernel=kernel,
                           cond_upsample=cond_upsample, x_offset=x_offset, x_scale=x_scale,
                           slope=slope, seed=seed)
        self.cond_channels = cond_channels
        self.cond_upsample = cond_upsample
        self.x_offset = x_offset
        self.x_scale = x_scale
        self.slope = slope
        self.convs = []
        c_prev = 1 + cond_channels
        for w in widths:
            self.convs.append(Conv1d(c_prev, w, kernel, rng, stride=2))
            c_prev = w
        self.out = Linear(c_prev, 1, rng)

    def __call__(self, x, y) -> Tensor:
        return critic_forward(self, x, y)


def critic_forward(net: CriticNet, x, y) -> Tensor:
    """Score a batch of windows ``x`` (B, L) under conditions ``y`` (B, C, L/cond_upsample)."""
    dtype = net.out.weight.dtype
    x, y = _as(x, dtype), _as(y, dtype)
    if x.ndim != 2 or y.ndim != 3 or y.shape[1] != net.cond_channels:
        raise GridMismatch(f"critic expects x (B, L) and y (B, {net.cond_channels}, L'), "
                           f"got {x.shape}, {y.shape}")
    if x.shape[0] != y.shape[0] or x.shape[1] != y.shape[2] * net.cond_upsample:
        raise GridMismatch(f"x {x.shape} and condition {y.shape} are not on the same grid")
    y = T.repeat_last(y, net.cond_upsample)
    xs = (x - net.x_offset) * (1.0 / net.x_scale)
    h = T.concat([T.reshape(xs, (x.shape[0], 1, x.shape[1])), y], axis=1)
    for conv in net.convs:
        h = T.leaky_relu(conv(h), net.slope)
    pooled = T.mean(h, axis=2)
    return T.reshape(net.out(pooled), (x.shape[0],))


def input_gradient(critic, x_bar, y) -> Tensor:
    """Per-sample gradient of ``critic(x, y)`` w.r.t. its input window.

    ``critic`` is any callable returning one score per batch row (normally a
    :class:`CriticNet`).  The result stays attached to the graph so penalties
    built from it can be differentiated again w.r.t. the critic weights.
    """
    data = x_bar.data if isinstance(x_bar, Tensor) else np.asarray(x_bar)
    dtype = critic.out.weight.dtype if isinstance(critic, CriticNet) else None
    x_bar = Tensor(np.array(data, dtype=dtype or data.dtype), requires_grad=True)
    with T.enable_grad():
        scores = critic(x_bar, y)
        # rows are scored independently, so d(sum)/dx gives each row's own gradient
        (g,) = T.grad(T.tsum(scores), [x_bar], create_graph=True)
    return g
