"""Adversarial training of the HRV and Morph generators (WGAN-GP).

Critic objective: ``-L_W + lambda1 * L_GP``.  Generator objective per copy:
``L_W + lambda2 * L_PSD`` (HRV) or ``L_W + lambda3 * L_MSE`` (Morph), summed
over two consecutive windows that share the GRU state.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import tensor as T
from .autodiff.nn import CriticNet, GeneratorNet, Linear, Module, input_gradient
from .autodiff.tensor import Tensor
from .data import WindowSet
from .dsp import taper_window
from .errors import (BadConfig, BatchMismatch, CorruptFile, EmptySplit, FormatVersionMismatch,
                     LengthMismatch, NoCheckpoint, NonConsecutiveWindows, NonFiniteLoss)
from .provenance import csv_header, provenance

log = logging.getLogger(__name__)

MODULES = ("hrv", "morph")
SELECTIONS = ("val_neg_critic_loss", "last")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------
def default_psd_weights(n: int, rate: float) -> np.ndarray:
    """Weight per rfft bin: 1 below 0.15 Hz, 4 on 0.15-0.5 Hz, 0 above 0.5 Hz."""
    f = np.fft.rfftfreq(n, d=1.0 / rate)
    return np.where(f < 0.15, 1.0, np.where(f <= 0.5, 4.0, 0.0))


@dataclass
class LossWeights:
    lambda1: float = 10.0
    lambda2: float = 1e-2
    lambda3: float = 5.0
    w_f: np.ndarray | None = None

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise BadConfig("loss weights must be non-negative")
        if self.w_f is not None:
            self.w_f = np.asarray(self.w_f, dtype=np.float64)
            if np.any(self.w_f < 0):
                raise BadConfig("PSD weights must be non-negative")


@dataclass
class TrainConfig:
    module: str = "hrv"
    lambda1: float = 10.0
    lambda2: float = 1e-2
    lambda3: float = 5.0
    n_critic: int = 5
    batch: int = 32
    epochs: int = 30
    seed: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    detach_state: bool = True
    warmup_critic_steps: int = 100
    val_repeats: int = 4
    selection: str = "val_neg_critic_loss"
    dtype: str = "float64"
    generator: dict = field(default_factory=dict)
    critic: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.module not in MODULES:
            raise BadConfig(f"module must be one of {MODULES}, got {self.module!r}")
        if self.n_critic < 1 or self.batch < 1 or self.epochs < 1 or self.val_repeats < 1:
            raise BadConfig("n_critic, batch and epochs must be >= 1")
        if self.lr <= 0:
            raise BadConfig("learning rate must be positive")
        if self.selection not in SELECTIONS:
            raise BadConfig(f"selection must be one of {SELECTIONS}, got {self.selection!r}")
        if self.dtype not in ("float32", "float64"):
            raise BadConfig("dtype must be float32 or float64")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda1, self.lambda2, self.lambda3)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known - {"optimizer", "provenance"}
        if unknown:
            raise BadConfig(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        d.pop("provenance", None)
        opt = d.pop("optimizer", None) or {}
        for k in ("lr", "beta1", "beta2", "eps"):
            if k in opt:
                d[k] = opt[k]
        try:
            return cls(**d)
        except TypeError as exc:
            raise BadConfig(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, ValueError) as exc:
            if isinstance(exc, BadConfig):
                raise
            raise BadConfig(f"cannot read config {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------
def _check_batch(x_real, x_fake, y=None):
    if x_real.shape[0] != x_fake.shape[0] or (y is not None and y.shape[0] != x_real.shape[0]):
        raise BatchMismatch(f"batch sizes differ: real {x_real.shape}, fake {x_fake.shape}"
                            + ("" if y is None else f", condition {y.shape}"))


def wasserstein_terms(critic, x_real, x_fake, y) -> Tensor:
    """L_W = E[D(x, y)] - E[D(x_hat, y)] over the batch."""
    _check_batch(x_real, x_fake, y)
    return T.mean(critic(x_real, y)) - T.mean(critic(x_fake, y))


def gradient_penalty(critic, x_real, x_fake, y, rng: np.random.Generator) -> Tensor:
    """E[(||grad_x D(x_bar, y)||_2 - 1)^2] on random interpolates x_bar."""
    _check_batch(x_real, x_fake, y)
    real = x_real.data if isinstance(x_real, Tensor) else np.asarray(x_real)
    fake = x_fake.data if isinstance(x_fake, Tensor) else np.asarray(x_fake)
    alpha = rng.uniform(size=(real.shape[0],) + (1,) * (real.ndim - 1))
    x_bar = (alpha * real + (1.0 - alpha) * fake).astype(real.dtype)
    g = input_gradient(critic, x_bar, y)
    axes = tuple(range(1, g.ndim))
    norms = T.l2_norm(T.reshape(g, (g.shape[0], -1)), axis=1) if len(axes) > 1 else T.l2_norm(g, axis=1)
    return T.mean((norms - 1.0) ** 2)


_DFT_CACHE: dict = {}


def _dft_mats(n: int, taper: str | None, dtype):
    key = (n, taper, np.dtype(dtype).str)
    if key not in _DFT_CACHE:
        k = np.arange(n // 2 + 1)
        ang = 2 * np.pi * np.outer(np.arange(n), k) / n
        w = taper_window(n, taper)[:, None]
        _DFT_CACHE[key] = (Tensor((w * np.cos(ang)).astype(dtype)), Tensor((w * np.sin(ang)).astype(dtype)))
    return _DFT_CACHE[key]


def power_spectrum(x: Tensor, taper: str | None = "hann") -> Tensor:
    """|rfft(taper * x)|^2 per row, differentiable."""
    c, s = _dft_mats(x.shape[-1], taper, x.dtype)
    return T.matmul(x, c) ** 2 + T.matmul(x, s) ** 2


def psd_loss(x_real, x_fake, w_f=None, taper: str | None = "hann") -> Tensor:
    """Batch mean of sum_f w_f (|F x|^2 - |F x_hat|^2)^2 / N_F."""
    x_real, x_fake = T.as_tensor(x_real), T.as_tensor(x_fake)
    if x_real.shape != x_fake.shape:
        raise LengthMismatch(f"window shapes differ: {x_real.shape} vs {x_fake.shape}")
    n_f = x_real.shape[-1] // 2 + 1
    w = np.ones(n_f) if w_f is None else np.asarray(w_f, dtype=np.float64)
    if w.shape != (n_f,):
        raise LengthMismatch(f"w_f has {w.size} entries, spectrum has {n_f} bins")
    diff = power_spectrum(x_real, taper) - power_spectrum(x_fake, taper)
    per_window = T.tsum(diff ** 2 * Tensor(w.astype(x_real.dtype)), axis=-1) * (1.0 / n_f)
    return T.mean(per_window)


def mse_loss(x_real, x_fake) -> Tensor:
    """Batch mean of squared L2 distance."""
    x_real, x_fake = T.as_tensor(x_real), T.as_tensor(x_fake)
    if x_real.shape != x_fake.shape:
        raise LengthMismatch(f"window shapes differ: {x_real.shape} vs {x_fake.shape}")
    return T.mean(T.tsum((x_real - x_fake) ** 2, axis=-1))


# ---------------------------------------------------------------------------
# update steps
# ---------------------------------------------------------------------------
def _finite_or_raise(loss: Tensor, grads) -> None:
    if not np.isfinite(loss.data).all() or any(not np.isfinite(g.data).all() for g in grads):
        raise NonFiniteLoss("non-finite loss or gradient; step skipped")


def critic_update(critic, opt, x_real, x_fake, y, weights: LossWeights, rng) -> dict:
    """One optimiser step on -L_W + lambda1 * L_GP.  ``x_fake`` must be detached."""
    params = critic.parameters()
    with T.enable_grad():
        lw = wasserstein_terms(critic, x_real, x_fake, y)
        gp = gradient_penalty(critic, x_real, x_fake, y, rng)
        loss = -lw + gp * weights.lambda1
        grads = T.grad(loss, params)
    _finite_or_raise(loss, grads)
    opt.step([g.data for g in grads])
    return {"critic_loss": float(loss.data), "L_W": float(lw.data), "L_GP": float(gp.data)}


def generator_terms(kind: str, critic, x_real, x_fake: Tensor, y, weights: LossWeights) -> tuple[Tensor, dict]:
    """L_W + lambda * aux for one copy; the real-score term only shifts the value."""
    lw = wasserstein_terms(critic, x_real, x_fake, y)
    if kind == "hrv":
        w_f = weights.w_f if weights.w_f is not None else np.ones(x_fake.shape[-1] // 2 + 1)
        aux, lam = psd_loss(x_real, x_fake, w_f), weights.lambda2
    else:
        aux, lam = mse_loss(x_real, x_fake), weights.lambda3
    return lw + aux * lam, {"L_W": float(lw.data), "aux": float(aux.data)}


@dataclass
class PairBatch:
    """Two aligned batches of consecutive, non-overlapping windows."""

    x1: np.ndarray
    y1: np.ndarray
    x2: np.ndarray
    y2: np.ndarray
    subject1: np.ndarray
    index1: np.ndarray
    subject2: np.ndarray
    index2: np.ndarray
    gap: int


def check_consecutive(pair: PairBatch) -> None:
    ok = (pair.subject1 == pair.subject2) & (pair.index2 - pair.index1 == pair.gap)
    if not np.all(ok):
        bad = int(np.flatnonzero(~ok)[0])
        raise NonConsecutiveWindows(
            f"row {bad}: window ({pair.subject1[bad]}, {pair.index1[bad]}) is not followed by "
            f"({pair.subject2[bad]}, {pair.index2[bad]}) at gap {pair.gap}")


def dual_copy_loss(kind: str, gen: GeneratorNet, critic, pair: PairBatch, weights: LossWeights,
                   rng: np.random.Generator, state0=None, detach_state: bool = True):
    """Summed generator loss of two copies sharing weights and the GRU state."""
    check_consecutive(pair)
    b, lc = pair.y1.shape[0], pair.y1.shape[2]
    z1 = gen.sample_z(b, lc, rng)
    z2 = gen.sample_z(b, lc, rng)
    out1, s1 = gen(pair.y1, z1, state0)
    if detach_state:
        s1 = Tensor(s1.data)
    out2, _ = gen(pair.y2, z2, s1)
    l1, c1 = generator_terms(kind, critic, pair.x1, out1, pair.y1, weights)
    l2, c2 = generator_terms(kind, critic, pair.x2, out2, pair.y2, weights)
    comps = {k: c1[k] + c2[k] for k in c1}
    return l1 + l2, comps


def generator_update_dual(kind: str, gen: GeneratorNet, critic, opt, pair: PairBatch,
                          weights: LossWeights, rng: np.random.Generator, state0=None,
                          detach_state: bool = True) -> dict:
    params = gen.parameters()
    with T.enable_grad():
        loss, comps = dual_copy_loss(kind, gen, critic, pair, weights, rng, state0, detach_state)
        grads = T.grad(loss, params)
    _finite_or_raise(loss, grads)
    opt.step([g.data for g in grads])
    comps["gen_loss"] = float(loss.data)
    return comps


# ---------------------------------------------------------------------------
# models and data plumbing
# ---------------------------------------------------------------------------
@dataclass
class Normalizer:
    """Affine maps bringing targets and the condition signal near unit range."""

    x_offset: float = 0.0
    x_scale: float = 1.0
    cond_offset: float = 0.0
    cond_scale: float = 1.0

    @classmethod
    def fit(cls, kind: str, ws: WindowSet) -> "Normalizer":
        off = float(np.mean(ws.x))
        scale = float(np.max(np.abs(ws.x - off))) * 1.5 or 1.0
        if kind == "hrv":
            return cls(off, scale, off, scale)
        return cls(off, scale, 0.0, 1.0)

    def conditions(self, ws: WindowSet, idx) -> np.ndarray:
        sub = ws.subset(idx)
        sub.cond = (sub.cond - self.cond_offset) / self.cond_scale
        return sub.conditions()


def build_models(kind: str, norm: Normalizer, cfg: TrainConfig, seed: int | None = None):
    seed = cfg.seed if seed is None else seed
    dtype = np.dtype(cfg.dtype)
    up = 1 if kind == "hrv" else 4
    gcfg = {"upsample": up, "out_offset": norm.x_offset, "out_scale": norm.x_scale, **cfg.generator}
    ccfg = {"cond_upsample": up, "x_offset": norm.x_offset, "x_scale": norm.x_scale, **cfg.critic}
    with T.default_dtype(dtype):
        gen = GeneratorNet(seed=seed, **gcfg)
        critic = CriticNet(seed=seed + 1, **ccfg)
    return gen, critic


def window_pairs(ws: WindowSet, gap: int) -> np.ndarray:
    """Row pairs (i, j) with the same subject and index_j = index_i + gap."""
    lookup = {(int(s), int(k)): i for i, (s, k) in enumerate(zip(ws.subject, ws.index))}
    pairs = [(i, lookup[(int(s), int(k) + gap)]) for i, (s, k) in enumerate(zip(ws.subject, ws.index))
             if (int(s), int(k) + gap) in lookup]
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def make_pair_batch(ws: WindowSet, norm: Normalizer, rows: np.ndarray, gap: int, dtype) -> PairBatch:
    i, j = rows[:, 0], rows[:, 1]
    return PairBatch(ws.x[i].astype(dtype), norm.conditions(ws, i).astype(dtype),
                     ws.x[j].astype(dtype), norm.conditions(ws, j).astype(dtype),
                     ws.subject[i], ws.index[i], ws.subject[j], ws.index[j], gap)


def validation_neg_critic_loss(kind, gen, critic, ws: WindowSet, norm: Normalizer,
                               weights: LossWeights, rng, batch: int, dtype, repeats: int = 1) -> float:
    """L_W - lambda1 * L_GP over the whole validation set (batch-size weighted),
    averaged over ``repeats`` draws of noise and interpolation coefficients."""
    total, count = 0.0, 0
    for lo in [lo for _ in range(repeats) for lo in range(0, len(ws), batch)]:
        idx = np.arange(lo, min(lo + batch, len(ws)))
        x = ws.x[idx].astype(dtype)
        y = norm.conditions(ws, idx).astype(dtype)
        with T.no_grad():
            fake, _ = gen(y, gen.sample_z(len(idx), y.shape[2], rng))
            lw = wasserstein_terms(critic, x, fake, y)
        gp = gradient_penalty(critic, x, fake.data, y, rng)
        total += (float(lw.data) - weights.lambda1 * float(gp.data)) * len(idx)
        count += len(idx)
    return total / count


@dataclass
class Checkpoint:
    kind: str
    epoch: int
    val_neg_critic_loss: float
    generator: dict
    critic: dict
    gen_config: dict
    critic_config: dict
    normalizer: dict
    train_config: dict
    provenance: dict = field(default_factory=dict)

    def build_generator(self, dtype=np.float64) -> GeneratorNet:
        with T.default_dtype(np.dtype(dtype)):
            gen = GeneratorNet(**self.gen_config)
        gen.load_state_dict(self.generator)
        return gen

    def build_critic(self, dtype=np.float64) -> CriticNet:
        with T.default_dtype(np.dtype(dtype)):
            critic = CriticNet(**self.critic_config)
        critic.load_state_dict(self.critic)
        return critic

    def norm(self) -> Normalizer:
        return Normalizer(**self.normalizer)


@dataclass
class TrainResult:
    checkpoints: list[Checkpoint]
    metrics: list[dict]
    best: Checkpoint


METRIC_FIELDS = ("epoch", "L_W", "L_GP", "aux", "critic_loss", "gen_loss", "val_neg_critic_loss")


def train(kind: str, train_set: WindowSet, val_set: WindowSet, cfg: TrainConfig,
          gap: int = 4, log_path=None, progress=None) -> TrainResult:
    """Alternate ``n_critic`` critic steps with one dual-copy generator step.

    An epoch is one pass over the shuffled consecutive-window pairs of the
    training split.  After each epoch the validation negative critic loss is
    recorded and the epoch minimising it is returned as ``best``.
    """
    if kind not in MODULES:
        raise BadConfig(f"unknown module {kind!r}")
    if len(train_set) == 0:
        raise EmptySplit("training split is empty")
    if len(val_set) == 0:
        raise EmptySplit("validation split is empty")
    pairs = window_pairs(train_set, gap)
    if len(pairs) == 0:
        raise EmptySplit(f"no consecutive training windows at gap {gap}")
    dtype = np.dtype(cfg.dtype)
    norm = Normalizer.fit(kind, train_set)
    gen, critic = build_models(kind, norm, cfg)
    weights = cfg.weights
    if kind == "hrv":
        weights.w_f = default_psd_weights(train_set.x.shape[1], train_set.x_rate)
    opt_g = ad.Adam(gen.parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    opt_c = ad.Adam(critic.parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng(cfg.seed)
    prov = provenance(cfg.to_dict(), cfg.seed, module=kind)

    checkpoints, metrics = [], []
    n = len(train_set)

    def critic_step():
        idx = np.sort(rng.choice(n, size=min(cfg.batch, n), replace=False))
        x = train_set.x[idx].astype(dtype)
        y = norm.conditions(train_set, idx).astype(dtype)
        with T.no_grad():
            fake, _ = gen(y, gen.sample_z(len(idx), y.shape[2], rng))
        return critic_update(critic, opt_c, x, fake.data, y, weights, rng)

    # a fresh critic has near-zero input gradients, so its penalty term swamps
    # the validation metric; bring it to a working point before the first epoch
    for _ in range(cfg.warmup_critic_steps):
        critic_step()
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(pairs))
        sums: dict[str, float] = {}
        steps = 0
        for lo in range(0, len(order), cfg.batch):
            rows = pairs[order[lo:lo + cfg.batch]]
            for _ in range(cfg.n_critic):
                c = critic_step()
            pb = make_pair_batch(train_set, norm, rows, gap, dtype)
            g = generator_update_dual(kind, gen, critic, opt_g, pb, weights, rng,
                                      detach_state=cfg.detach_state)
            for k, v in {**c, "aux": g["aux"], "gen_loss": g["gen_loss"]}.items():
                sums[k] = sums.get(k, 0.0) + v
            steps += 1
        val_rng = np.random.default_rng([cfg.seed, epoch, 7])
        vloss = validation_neg_critic_loss(kind, gen, critic, val_set, norm, weights, val_rng,
                                           cfg.batch, dtype, cfg.val_repeats)
        row = {"epoch": epoch, **{k: v / steps for k, v in sums.items()}, "val_neg_critic_loss": vloss}
        metrics.append(row)
        checkpoints.append(Checkpoint(kind, epoch, vloss, gen.state_dict(), critic.state_dict(),
                                      gen.config, critic.config, dataclasses.asdict(norm),
                                      cfg.to_dict(), prov))
        if progress:
            progress(row)
        log.info("epoch %d: %s", epoch, row)
    best = select_best(checkpoints, cfg.selection)
    if log_path is not None:
        write_metrics(metrics, log_path, prov)
    return TrainResult(checkpoints, metrics, best)


def select_best(checkpoints: list[Checkpoint], selection: str = "val_neg_critic_loss") -> Checkpoint:
    """Argmin of the validation metric, or the final epoch with ``selection="last"``.

    Critic scores are only comparable near the generator the critic was
    trained against, so a weak early generator can win the argmin; "last"
    sidesteps that for modules where it matters.
    """
    if not checkpoints:
        raise NoCheckpoint("no checkpoints recorded")
    if selection == "last":
        return max(checkpoints, key=lambda c: c.epoch)
    # first epoch wins ties
    return min(checkpoints, key=lambda c: (c.val_neg_critic_loss, c.epoch))


def write_metrics(metrics: list[dict], path, prov: dict) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(csv_header(prov))
        w = csv.DictWriter(fh, fieldnames=METRIC_FIELDS, extrasaction="ignore")
        w.writeheader()
        for row in metrics:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


# ---------------------------------------------------------------------------
# checkpoint files
# ---------------------------------------------------------------------------
CKPT_MAGIC = b"CGEN"
CKPT_VERSION = 1


def _write_tensors(tensors: dict[str, np.ndarray]) -> bytes:
    out = [struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        key = name.encode()
        arr = np.asarray(arr)
        out.append(struct.pack("<H", len(key)) + key + struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.astype("<f4").tobytes())
    return b"".join(out)


def _read_tensors(buf: bytes, pos: int, path) -> tuple[dict, int]:
    def unpack(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise CorruptFile(f"{path}: truncated tensor table")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    (count,) = unpack("<I")
    tensors = {}
    for _ in range(count):
        (klen,) = unpack("<H")
        name = buf[pos:pos + klen].decode()
        pos += klen
        (ndim,) = unpack("<B")
        shape = unpack(f"<{ndim}I") if ndim else ()
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(buf):
            raise CorruptFile(f"{path}: truncated tensor {name}")
        tensors[name] = np.frombuffer(buf, "<f4", int(np.prod(shape, dtype=np.int64)), pos).reshape(shape).copy()
        pos += nbytes
    return tensors, pos


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """``CGEN`` | u16 version | u32 meta length | JSON metadata | generator
    tensors | critic tensors | CRC32.  Tensor payloads are float32."""
    import zlib
    meta = {k: v for k, v in dataclasses.asdict(ckpt).items() if k not in ("generator", "critic")}
    meta_b = json.dumps(meta, sort_keys=True).encode()
    body = (CKPT_MAGIC + struct.pack("<HI", CKPT_VERSION, len(meta_b)) + meta_b
            + _write_tensors(ckpt.generator) + _write_tensors(ckpt.critic))
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def load_checkpoint(path) -> Checkpoint:
    import zlib
    try:
        raw = Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise NoCheckpoint(f"checkpoint {path} not found") from exc
    if len(raw) < 14 or raw[:4] != CKPT_MAGIC:
        raise CorruptFile(f"{path}: not a checkpoint file")
    version, mlen = struct.unpack_from("<HI", raw, 4)
    if version != CKPT_VERSION:
        raise FormatVersionMismatch(f"{path}: checkpoint version {version}, reader supports {CKPT_VERSION}")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptFile(f"{path}: checksum mismatch")
    meta = json.loads(body[10:10 + mlen])
    gen, pos = _read_tensors(body, 10 + mlen, path)
    crit, pos = _read_tensors(body, pos, path)
    return Checkpoint(generator=gen, critic=crit, **meta)


# ---------------------------------------------------------------------------
# 1-d conditional Gaussian toy
# ---------------------------------------------------------------------------
class MLP(Module):
    def __init__(self, sizes, rng):
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]

    def __call__(self, h):
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < len(self.layers) - 1:
                h = T.tanh(h)
        return h


class ToyCritic(MLP):
    """D(x, y) on scalar x (B, 1) with one-hot y (B, K).

    The last layer has one output per class and y selects it (projection
    conditioning), so the sign of dD/dx can differ between classes.
    """

    def __call__(self, x, y):
        x, y = T.as_tensor(x), T.as_tensor(y)
        heads = super().__call__(T.concat([x, y], axis=1))
        return T.tsum(heads * y, axis=1)


def conditional_gaussian_toy(seed: int, steps: int = 500, means=(-1.0, 0.5, 2.0), sigma: float = 0.3,
                             batch: int = 64, n_critic: int = 5, lr_g: float = 2e-4,
                             lr_c: float = 2e-3, lambda1: float = 0.1, hidden: int = 32,
                             noise_dim: int = 2) -> dict:
    """Train a tiny WGAN-GP on x | c ~ N(means[c], sigma^2).

    Both networks use projection conditioning (one output head per class,
    selected by the one-hot label).  For scalar x the two-sided penalty makes
    dD/dx = 0 cost about lambda1, so a critic cannot reverse its slope once
    the generator overshoots a class mean; the toy therefore runs with a small
    lambda1 and a critic that learns faster than the generator.

    Returns the true means, the generated conditional means (4000 samples
    per class) and the per-step critic losses.
    """
    rng = np.random.default_rng(seed)
    k = len(means)
    mu = np.asarray(means, dtype=np.float64)
    gen = MLP([k + noise_dim, hidden, hidden, k], rng)
    critic = ToyCritic([1 + k, hidden, hidden, k], rng)
    # a zero output layer starts the critic at dD/dx = 0, where the penalty
    # gradient vanishes and the Wasserstein term picks each slope's sign
    critic.layers[-1].weight.data[:] = 0.0
    opt_g = ad.Adam(gen.parameters(), lr_g, 0.5, 0.9, 1e-7)
    opt_c = ad.Adam(critic.parameters(), lr_c, 0.5, 0.9, 1e-7)
    weights = LossWeights(lambda1=lambda1)
    eye = np.eye(k)

    def draw(n):
        c = rng.integers(k, size=n)
        return eye[c], (mu[c] + sigma * rng.standard_normal(n))[:, None]

    def generate(y):
        y = T.as_tensor(y)
        heads = gen(T.concat([y, Tensor(rng.standard_normal((y.shape[0], noise_dim)))], axis=1))
        return T.reshape(T.tsum(heads * y, axis=1), (y.shape[0], 1))

    critic_losses = []
    for _ in range(steps):
        for _ in range(n_critic):
            y, x = draw(batch)
            with T.no_grad():
                fake = generate(y).data
            critic_losses.append(critic_update(critic, opt_c, x, fake, y, weights, rng)["critic_loss"])
        y, _ = draw(batch)
        with T.enable_grad():
            loss = -T.mean(critic(generate(y), y))
            grads = T.grad(loss, gen.parameters())
        _finite_or_raise(loss, grads)
        opt_g.step([g.data for g in grads])
    with T.no_grad():
        gen_means = [float(np.mean(generate(np.repeat(eye[[c]], 4000, axis=0)).data)) for c in range(k)]
    return {"true_means": mu.tolist(), "gen_means": gen_means, "critic_losses": critic_losses}
