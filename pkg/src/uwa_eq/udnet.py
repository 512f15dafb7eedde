"""Trainable unfolded equalizer for one sliding block.

The network unrolls M refinement iterations ("layers") of a block symbol
estimate.  Everything runs in stacked-real arithmetic on one B-symbol
block (so vectors have length 2B).  With Hty = H^T y and HtH = H^T H
fixed per block, layer m maps the running estimate S_m to

    x_m = [S_m ; lambda1_m * Hty ; lambda2_m * HtH @ S_m]      (length 6B)
    v_m = tanh(w1_m @ x_m + b1_m + v_{m-1})                    (hidden)
    z_m = w2_m @ v_m + b2_m + z_{m-1}                          (length 4B)
    q_m = softmax over each symbol's group of 4 logits         (B x 4)
    S_{m+1} = stacked-real of sum_i q_m[k, i] * c_i            (soft demap)

The two residual terms (previous tanh output added to the current tanh
pre-activation, previous logits added to the current logits) vanish for
the first layer.  S_0 is the zero-forcing solution of the block, or zero
when the block is singular.  Training minimises the sum over layers of
the per-symbol cross-entropy against one-hot labels, averaged over the
batch; since labels are one-hot this equals the KL divergence.

Gradients are derived by hand (no autodiff).  Walking layers backwards,
the adjoint of the logits collects three terms: the softmax/cross-entropy
derivative q_m - p, the path through the soft demap into the next layer's
input (both directly and through HtH @ S), and the additive logit
residual.  The adjoint of the tanh output collects the w2 path and the
additive tanh residual.  lambda1/lambda2 pick up the inner products of
their input slots' adjoints with Hty and HtH @ S_m.
"""

from __future__ import annotations

import logging
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .channel import FreqChannelMatrix, SlidingPlan, extract_blocks, freq_matrix, join_vector, split_vector
from .noise import NoiseSpec
from .pipeline import simulate_symbol
from .signal import QPSK, ComplexSignal, Constellation, OfdmConfig, to_stacked_real

__all__ = [
    "LayerParams",
    "UdnetModel",
    "ForwardTrace",
    "LayerOutput",
    "TrainConfig",
    "AdamState",
    "TrainingDivergedError",
    "CheckpointFormatError",
    "init_model",
    "layer_forward",
    "forward",
    "loss_kl",
    "backward",
    "adam_init",
    "adam_step",
    "train",
    "equalize",
    "save_model",
    "load_model",
]

logger = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""


class CheckpointFormatError(ValueError):
    """Raised when a model checkpoint cannot be parsed."""


@dataclass
class LayerParams:
    """Parameters of one unrolled layer (shapes for block size B, hidden H):

    w1 (H, 6B), b1 (H,), w2 (4B, H), b2 (4B,), plus the two input scaling
    factors lambda1 (on Hty) and lambda2 (on HtH @ S).
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    lambda1: float = 1.0
    lambda2: float = 1.0


_ARRAY_FIELDS = ("w1", "b1", "w2", "b2")
_SCALAR_FIELDS = ("lambda1", "lambda2")


@dataclass
class UdnetModel:
    layers: list[LayerParams]
    block_size: int
    hidden_dim: int
    constellation: Constellation = field(default_factory=lambda: QPSK)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("model needs at least one layer")
        b, h = self.block_size, self.hidden_dim
        if b < 1 or h < 1:
            raise ValueError(f"bad dimensions: block_size={b}, hidden_dim={h}")
        for i, lp in enumerate(self.layers):
            shapes = {
                "w1": (h, 6 * b),
                "b1": (h,),
                "w2": (4 * b, h),
                "b2": (4 * b,),
            }
            for name, want in shapes.items():
                got = getattr(lp, name).shape
                if got != want:
                    raise ValueError(f"layer {i}: {name} has shape {got}, expected {want}")

    @property
    def n_layers(self) -> int:
        return len(self.layers)


def init_model(block_size: int, n_layers: int, rng: np.random.Generator,
               hidden_dim: int | None = None) -> UdnetModel:
    """Fresh model: Glorot-uniform weights, zero biases, unit lambdas.

    hidden_dim defaults to 8 * block_size.  Weight entries are uniform on
    [-sqrt(6/(fan_in+fan_out)), +sqrt(...)], giving variance
    2/(fan_in+fan_out).
    """
    if block_size < 1 or n_layers < 1:
        raise ValueError(f"bad dimensions: block_size={block_size}, n_layers={n_layers}")
    hidden = 8 * block_size if hidden_dim is None else hidden_dim
    if hidden < 1:
        raise ValueError(f"hidden_dim must be positive, got {hidden}")
    layers = []
    for _ in range(n_layers):
        lim1 = np.sqrt(6.0 / (6 * block_size + hidden))
        lim2 = np.sqrt(6.0 / (hidden + 4 * block_size))
        layers.append(LayerParams(
            w1=rng.uniform(-lim1, lim1, (hidden, 6 * block_size)),
            b1=np.zeros(hidden),
            w2=rng.uniform(-lim2, lim2, (4 * block_size, hidden)),
            b2=np.zeros(4 * block_size),
        ))
    return UdnetModel(layers=layers, block_size=block_size, hidden_dim=hidden)


@dataclass
class LayerOutput:
    """Everything one layer produces (logits kept for the next residual)."""

    tanh_out: np.ndarray
    logits: np.ndarray
    probs: np.ndarray
    s_next: np.ndarray


def _softmax_groups(z: np.ndarray, block_size: int) -> np.ndarray:
    """Row-stochastic softmax over each symbol's group of 4 logits."""
    z4 = z.reshape(*z.shape[:-1], block_size, 4)
    z4 = z4 - z4.max(axis=-1, keepdims=True)
    e = np.exp(z4)
    return e / e.sum(axis=-1, keepdims=True)


def _layer_step(layer: LayerParams, s: np.ndarray, hty: np.ndarray, hth_s: np.ndarray,
                prev_v, prev_z, points: np.ndarray, block_size: int):
    """One layer on a batch: returns (x, v, z, q, s_next)."""
    x = np.concatenate([s, layer.lambda1 * hty, layer.lambda2 * hth_s], axis=-1)
    a = x @ layer.w1.T + layer.b1
    if prev_v is not None:
        a = a + prev_v
    v = np.tanh(a)
    z = v @ layer.w2.T + layer.b2
    if prev_z is not None:
        z = z + prev_z
    q = _softmax_groups(z, block_size)
    s_next = np.concatenate([q @ points.real, q @ points.imag], axis=-1)
    return x, v, z, q, s_next


def layer_forward(layer: LayerParams, s_m: np.ndarray, hty: np.ndarray, hth: np.ndarray,
                  prev_tanh: np.ndarray | None = None, prev_logits: np.ndarray | None = None,
                  constellation: Constellation = QPSK) -> LayerOutput:
    """Run a single layer on one block in stacked-real form.

    prev_tanh / prev_logits are the previous layer's tanh output and
    pre-softmax logits; leave them None for the first layer, in which case
    the residual terms drop out.
    """
    s_m = np.asarray(s_m, dtype=np.float64)
    hty = np.asarray(hty, dtype=np.float64)
    hth = np.asarray(hth, dtype=np.float64)
    if s_m.ndim != 1 or s_m.size % 2 != 0:
        raise ValueError(f"s_m must be an even-length stacked-real vector, got {s_m.shape}")
    b = s_m.size // 2
    if hty.shape != s_m.shape or hth.shape != (2 * b, 2 * b):
        raise ValueError("Hty / HtH shapes do not match s_m")
    hth_s = hth @ s_m
    x, v, z, q, s_next = _layer_step(layer, s_m, hty, hth_s, prev_tanh, prev_logits,
                                     constellation.points, b)
    return LayerOutput(tanh_out=v, logits=z, probs=q, s_next=s_next)


@dataclass
class ForwardTrace:
    """All intermediates of a (batched) forward pass, kept for backprop."""

    block_size: int
    hidden_dim: int
    batch: int
    hty: np.ndarray             # (batch, 2B)
    hth: np.ndarray             # (batch, 2B, 2B)
    s_init: np.ndarray          # (batch, 2B) zero-forcing start
    zf_fallback: np.ndarray     # (batch,) bool, True where the start is 0
    xs: list                    # per layer (batch, 6B)
    hth_s: list                 # per layer (batch, 2B)
    tanh_out: list              # per layer (batch, hidden)
    logits: list                # per layer (batch, 4B)
    probs: list                 # per layer (batch, B, 4)
    s_next: list                # per layer (batch, 2B)

    @property
    def n_layers(self) -> int:
        return len(self.probs)

    def s_input(self, m: int) -> np.ndarray:
        """Estimate entering layer m (0-based)."""
        return self.s_init if m == 0 else self.s_next[m - 1]


def _prepare_block_batch(model: UdnetModel, y_block, h_block):
    y = np.asarray(y_block, dtype=np.float64)
    h = np.asarray(h_block, dtype=np.float64)
    if y.ndim == 1:
        y = y[None, :]
    if h.ndim == 2:
        h = h[None, :, :]
    two_b = 2 * model.block_size
    if y.ndim != 2 or y.shape[1] != two_b:
        raise ValueError(f"y_block must have stacked-real length {two_b}, got shape {y.shape}")
    if h.shape != (y.shape[0], two_b, two_b):
        raise ValueError(f"h_block shape {h.shape} does not match y {y.shape}")
    return y, h


def _zf_start(y: np.ndarray, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched zero-forcing start; singular blocks fall back to zero."""
    fallback = np.zeros(y.shape[0], dtype=bool)
    try:
        s0 = np.linalg.solve(h, y[..., None])[..., 0]
    except np.linalg.LinAlgError:
        s0 = np.zeros_like(y)
        for i in range(y.shape[0]):
            try:
                s0[i] = np.linalg.solve(h[i], y[i])
            except np.linalg.LinAlgError:
                fallback[i] = True
        logger.warning("zero-forcing start is singular for %d block(s); starting from zero",
                       int(fallback.sum()))
    return s0, fallback


def forward(model: UdnetModel, y_block, h_block) -> ForwardTrace:
    """Full forward pass on one block or a batch of blocks.

    y_block: stacked-real observation(s), shape (2B,) or (batch, 2B).
    h_block: stacked-real channel block(s), (2B, 2B) or (batch, 2B, 2B).
    """
    y, h = _prepare_block_batch(model, y_block, h_block)
    ht = h.transpose(0, 2, 1)
    hty = (ht @ y[..., None])[..., 0]
    hth = ht @ h
    s, fallback = _zf_start(y, h)
    trace = ForwardTrace(
        block_size=model.block_size, hidden_dim=model.hidden_dim, batch=y.shape[0],
        hty=hty, hth=hth, s_init=s, zf_fallback=fallback,
        xs=[], hth_s=[], tanh_out=[], logits=[], probs=[], s_next=[],
    )
    points = model.constellation.points
    prev_v = prev_z = None
    for layer in model.layers:
        hth_s = (hth @ s[..., None])[..., 0]
        x, v, z, q, s = _layer_step(layer, s, hty, hth_s, prev_v, prev_z,
                                    points, model.block_size)
        trace.xs.append(x)
        trace.hth_s.append(hth_s)
        trace.tanh_out.append(v)
        trace.logits.append(z)
        trace.probs.append(q)
        trace.s_next.append(s)
        prev_v, prev_z = v, z
    return trace


def _validate_labels(labels, batch: int, block_size: int) -> np.ndarray:
    p = np.asarray(labels, dtype=np.float64)
    if p.ndim == 2:
        p = p[None, :, :]
    if p.shape != (batch, block_size, 4):
        raise ValueError(f"labels shape {p.shape}, expected ({batch}, {block_size}, 4)")
    if not np.all((p == 0.0) | (p == 1.0)) or not np.all(p.sum(axis=-1) == 1.0):
        raise ValueError("labels must be exact one-hot rows")
    return p


def loss_kl(trace: ForwardTrace, labels) -> float:
    """Sum over layers and symbols of the label cross-entropy, batch mean.

    With one-hot labels the cross-entropy equals the KL divergence from
    the predicted row to the label row.  Computed from the logits with a
    stable log-sum-exp, which is exact for softmax outputs.
    """
    p = _validate_labels(labels, trace.batch, trace.block_size)
    total = 0.0
    for z in trace.logits:
        z4 = z.reshape(trace.batch, trace.block_size, 4)
        zmax = z4.max(axis=-1, keepdims=True)
        lse = zmax[..., 0] + np.log(np.exp(z4 - zmax).sum(axis=-1))
        z_true = (z4 * p).sum(axis=-1)
        total += float((lse - z_true).sum(axis=1).mean())
    return total


def backward(model: UdnetModel, trace: ForwardTrace, labels) -> list[LayerParams]:
    """Analytic gradients of loss_kl with respect to every parameter.

    Returns one LayerParams of gradients per layer (lambda gradients in
    the scalar slots), averaged over the batch exactly like the loss.
    """
    p = _validate_labels(labels, trace.batch, trace.block_size)
    if trace.n_layers != model.n_layers:
        raise ValueError("trace and model disagree on layer count")
    b = trace.batch
    bs = model.block_size
    points = model.constellation.points
    cr, ci = points.real, points.imag
    grads: list[LayerParams | None] = [None] * model.n_layers
    g_z_next = None   # dL/dz_{m+1}, flows back through the logit residual
    g_a_next = None   # dL/da_{m+1}, flows through the tanh residual
    g_s_next = None   # dL/dS_{m+1}, flows through the soft demap
    for m in range(model.n_layers - 1, -1, -1):
        layer = model.layers[m]
        q = trace.probs[m]
        # cross-entropy-through-softmax at this layer
        g_z = (q - p).reshape(b, 4 * bs)
        if g_s_next is not None:
            # S_{m+1} = [q @ Re(c); q @ Im(c)] feeding the next layer
            dq = g_s_next[:, :bs, None] * cr + g_s_next[:, bs:, None] * ci
            dz4 = q * (dq - (dq * q).sum(axis=-1, keepdims=True))
            g_z = g_z + dz4.reshape(b, 4 * bs)
        if g_z_next is not None:
            g_z = g_z + g_z_next
        v = trace.tanh_out[m]
        x = trace.xs[m]
        g_v = g_z @ layer.w2
        if g_a_next is not None:
            g_v = g_v + g_a_next
        g_a = g_v * (1.0 - v * v)
        g_x = g_a @ layer.w1
        g_slot_s = g_x[:, : 2 * bs]
        g_slot_hty = g_x[:, 2 * bs: 4 * bs]
        g_slot_hths = g_x[:, 4 * bs:]
        grads[m] = LayerParams(
            w1=g_a.T @ x / b,
            b1=g_a.mean(axis=0),
            w2=g_z.T @ v / b,
            b2=g_z.mean(axis=0),
            lambda1=float((g_slot_hty * trace.hty).sum() / b),
            lambda2=float((g_slot_hths * trace.hth_s[m]).sum() / b),
        )
        # dL/dS_m: the direct slot plus the HtH @ S slot (transposed map)
        g_s = g_slot_s + layer.lambda2 * np.einsum("bij,bi->bj", trace.hth, g_slot_hths)
        g_z_next, g_a_next, g_s_next = g_z, g_a, g_s
    return grads  # dL/dS_0 is dropped: the zero-forcing start is constant


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 50
    train_snr_db: float = 25.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("learning_rate, batch_size and epochs must be positive")
        if not 0 <= self.adam_beta1 < 1 or not 0 <= self.adam_beta2 < 1:
            raise ValueError("adam betas must lie in [0, 1)")
        if self.adam_epsilon <= 0:
            raise ValueError("adam_epsilon must be positive")


def _zeros_like_layer(lp: LayerParams) -> LayerParams:
    return LayerParams(
        w1=np.zeros_like(lp.w1), b1=np.zeros_like(lp.b1),
        w2=np.zeros_like(lp.w2), b2=np.zeros_like(lp.b2),
        lambda1=0.0, lambda2=0.0,
    )


@dataclass
class AdamState:
    m: list[LayerParams]
    v: list[LayerParams]
    step: int = 0


def adam_init(model: UdnetModel) -> AdamState:
    return AdamState(
        m=[_zeros_like_layer(lp) for lp in model.layers],
        v=[_zeros_like_layer(lp) for lp in model.layers],
    )


def adam_step(model: UdnetModel, grads: list[LayerParams], state: AdamState,
              cfg: TrainConfig) -> tuple[UdnetModel, AdamState]:
    """One bias-corrected Adam update, applied in place."""
    if len(grads) != model.n_layers:
        raise ValueError("gradient list length does not match the model")
    state.step += 1
    t = state.step
    b1, b2, eps, lr = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon, cfg.learning_rate
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for lp, g, ms, vs in zip(model.layers, grads, state.m, state.v):
        for name in _ARRAY_FIELDS:
            gm = getattr(g, name)
            m_new = b1 * getattr(ms, name) + (1.0 - b1) * gm
            v_new = b2 * getattr(vs, name) + (1.0 - b2) * gm * gm
            setattr(ms, name, m_new)
            setattr(vs, name, v_new)
            update = lr * (m_new / c1) / (np.sqrt(v_new / c2) + eps)
            setattr(lp, name, getattr(lp, name) - update)
        for name in _SCALAR_FIELDS:
            gm = float(getattr(g, name))
            m_new = b1 * getattr(ms, name) + (1.0 - b1) * gm
            v_new = b2 * getattr(vs, name) + (1.0 - b2) * gm * gm
            setattr(ms, name, m_new)
            setattr(vs, name, v_new)
            setattr(lp, name, getattr(lp, name) - lr * (m_new / c1) / (np.sqrt(v_new / c2) + eps))
    return model, state


def _stacked_blocks(h_full: FreqChannelMatrix, plan: SlidingPlan) -> np.ndarray:
    """(J, 2B, 2B) stacked-real diagonal blocks of a channel matrix."""
    return np.stack([to_stacked_real(blk) for blk in extract_blocks(h_full, plan)])


def train(channel_source, model: UdnetModel, train_cfg: TrainConfig, plan: SlidingPlan,
          noise_spec: NoiseSpec, progress=None) -> tuple[UdnetModel, list[float]]:
    """Train on symbols synthesised over a set of channel realisations.

    channel_source is a sequence of Cir objects, each covering one symbol
    (N + cp_len time samples).  Every epoch walks the set once in a fresh
    shuffled order; for each step a batch of blocks is built by running
    whole OFDM symbols with fresh random data and noise at train_snr_db
    through the channel.  progress, when given, is called with
    (epoch, mean_loss) after each epoch.  Returns the trained model and
    the per-epoch mean loss history.
    """
    cirs = list(channel_source)
    if not cirs:
        raise ValueError("channel source is empty")
    if plan.block_size != model.block_size:
        raise ValueError(f"plan block size {plan.block_size} does not match "
                         f"model block size {model.block_size}")
    n = plan.n
    sample_counts = {c.sample_count for c in cirs}
    if len(sample_counts) != 1:
        raise ValueError(f"channel realisations disagree on length: {sorted(sample_counts)}")
    cp = sample_counts.pop() - n
    if cp < 0:
        raise ValueError(f"channel realisations are shorter than n_subcarriers={n}")
    cfg = OfdmConfig(n_subcarriers=n, cp_len=cp)
    points = model.constellation.points
    eye4 = np.eye(4)
    slices = plan.slices()
    j = plan.block_count
    # per-realisation stacked channel blocks, computed once
    h_blocks = [_stacked_blocks(freq_matrix(c, cfg), plan) for c in cirs]
    rng = np.random.default_rng(np.random.SeedSequence((train_cfg.seed, 0x5EED)))
    state = adam_init(model)
    group = max(1, train_cfg.batch_size // j)
    history: list[float] = []
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(len(cirs))
        losses = []
        for lo in range(0, order.size, group):
            chunk = order[lo:lo + group]
            ys, hs, labels = [], [], []
            for ci in chunk:
                idx = rng.integers(0, 4, n)
                spectrum = points[idx]
                y = simulate_symbol(spectrum, cirs[ci], cfg, noise_spec,
                                    train_cfg.train_snr_db, rng)
                for bj, sl in enumerate(slices):
                    yb = y[sl]
                    ys.append(np.concatenate([yb.real, yb.imag]))
                    hs.append(h_blocks[ci][bj])
                    labels.append(eye4[idx[sl]])
            trace = forward(model, np.asarray(ys), np.asarray(hs))
            lab = np.asarray(labels)
            loss = loss_kl(trace, lab)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became non-finite at epoch {epoch}, step {lo // group}"
                )
            grads = backward(model, trace, lab)
            adam_step(model, grads, state, train_cfg)
            losses.append(loss)
        history.append(float(np.mean(losses)))
        if progress is not None:
            progress(epoch, history[-1])
    return model, history


def equalize(model: UdnetModel, y, h, plan: SlidingPlan) -> np.ndarray:
    """Block-wise inference: hard decisions from the last layer's softmax.

    y is the length-N frequency-domain observation, h the full channel
    matrix.  All blocks run through the network as one batch.
    """
    if plan.block_size != model.block_size:
        raise ValueError(f"plan block size {plan.block_size} does not match "
                         f"model block size {model.block_size}")
    y = np.asarray(y.samples if isinstance(y, ComplexSignal) else y, dtype=np.complex128)
    blocks_y = split_vector(y, plan)
    blocks_h = extract_blocks(h, plan)
    ys = np.stack([np.concatenate([b.real, b.imag]) for b in blocks_y])
    hs = np.stack([to_stacked_real(b) for b in blocks_h])
    trace = forward(model, ys, hs)
    idx = np.argmax(trace.probs[-1], axis=-1)  # (J, B)
    parts = [model.constellation.points[row] for row in idx]
    return join_vector(parts, plan)


_MODEL_MAGIC = b"UDN1"
_MODEL_VERSION = 1
_MODEL_HEADER = struct.Struct("<4sIIII")


def _layer_byte_len(block_size: int, hidden: int) -> int:
    b = block_size
    n_floats = hidden * 6 * b + hidden + 4 * b * hidden + 4 * b
    return 16 + n_floats * 8  # two lambdas + the four arrays


def save_model(model: UdnetModel, path) -> None:
    """Serialise a model: header, per-layer payload, trailing CRC32."""
    chunks = [_MODEL_HEADER.pack(_MODEL_MAGIC, _MODEL_VERSION, model.n_layers,
                                 model.block_size, model.hidden_dim)]
    for lp in model.layers:
        chunks.append(struct.pack("<dd", lp.lambda1, lp.lambda2))
        for name in _ARRAY_FIELDS:
            chunks.append(np.ascontiguousarray(getattr(lp, name), dtype="<f8").tobytes())
    blob = b"".join(chunks)
    crc = zlib.crc32(blob) & 0xFFFFFFFF
    with open(path, "wb") as f:
        f.write(blob)
        f.write(struct.pack("<I", crc))


def load_model(path) -> UdnetModel:
    """Read a checkpoint written by save_model, verifying layout and CRC."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < _MODEL_HEADER.size + 4:
        raise CheckpointFormatError(f"{path}: file too short ({len(blob)} bytes)")
    magic, version, n_layers, block_size, hidden = _MODEL_HEADER.unpack_from(blob)
    if magic != _MODEL_MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {magic!r}, expected {_MODEL_MAGIC!r}")
    if version != _MODEL_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {version}")
    if n_layers < 1 or block_size < 1 or hidden < 1:
        raise CheckpointFormatError(
            f"{path}: header declares empty dimensions M={n_layers}, B={block_size}, H={hidden}"
        )
    expected = _MODEL_HEADER.size + n_layers * _layer_byte_len(block_size, hidden) + 4
    if len(blob) != expected:
        raise CheckpointFormatError(f"{path}: expected {expected} bytes for the declared "
                                    f"dimensions, found {len(blob)}")
    stored_crc = struct.unpack_from("<I", blob, len(blob) - 4)[0]
    actual_crc = zlib.crc32(blob[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise CheckpointFormatError(f"{path}: CRC mismatch "
                                    f"(stored {stored_crc:#010x}, computed {actual_crc:#010x})")
    off = _MODEL_HEADER.size
    b = block_size
    layers = []
    for _ in range(n_layers):
        lam1, lam2 = struct.unpack_from("<dd", blob, off)
        off += 16
        arrays = {}
        for name, shape in (("w1", (hidden, 6 * b)), ("b1", (hidden,)),
                            ("w2", (4 * b, hidden)), ("b2", (4 * b,))):
            count = int(np.prod(shape))
            arrays[name] = np.frombuffer(blob, dtype="<f8", count=count,
                                         offset=off).reshape(shape).astype(np.float64)
            off += count * 8
        layers.append(LayerParams(lambda1=lam1, lambda2=lam2, **arrays))
    model = UdnetModel(layers=layers, block_size=block_size, hidden_dim=hidden)
    for i, lp in enumerate(model.layers):
        for name in _ARRAY_FIELDS:
            if not np.all(np.isfinite(getattr(lp, name))):
                raise CheckpointFormatError(f"{path}: non-finite values in layer {i} {name}")
        if not np.isfinite(lp.lambda1) or not np.isfinite(lp.lambda2):
            raise CheckpointFormatError(f"{path}: non-finite lambda in layer {i}")
    return model
