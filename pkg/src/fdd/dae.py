"""Convolutional denoising autoencoder used as the FDD feature extractor.

The encoder is a stack of 3x3 / stride 2 / padding 1 convolutions with ReLU,
followed by one dense projection to the latent vector. The decoder mirrors it:
a dense layer back to the final conv map, transposed convolutions with the
channel list reversed, ReLU in between and Tanh at the output.

Training corrupts each clean image with fresh Gaussian noise every epoch and
minimises the MSE between the reconstruction and the *clean* image.
"""

from __future__ import annotations

import binascii
import csv
import hashlib
import logging
import struct
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from . import substrate as sb
from .errors import ChecksumError, ConfigError, InputError, TrainingAborted
from .substrate import ParameterBlock, Tape, Tensor

log = logging.getLogger(__name__)

KERNEL, STRIDE, PADDING = 3, 2, 1


@dataclass(frozen=True)
class DaeConfig:
    """Architecture of a DAE.

    ``input_shape`` is (H, W, C). Kernel, stride and padding are fixed at
    3, 2 and 1; the decoder reuses ``encoder_channels`` in reverse.
    """

    input_shape: tuple[int, int, int] = (64, 64, 1)
    encoder_channels: tuple[int, ...] = (16, 32, 64)
    latent_dim: int = 128
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "encoder_channels", tuple(int(v) for v in self.encoder_channels))
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ConfigError(f"input_shape must be positive (H, W, C), got {self.input_shape}")
        if not self.encoder_channels or min(self.encoder_channels) < 1:
            raise ConfigError("encoder_channels must be a non-empty list of positive ints")
        if self.latent_dim < 1:
            raise ConfigError(f"latent_dim must be positive, got {self.latent_dim}")
        self.geometry()

    @classmethod
    def full_scale(cls, seed: int = 0) -> "DaeConfig":
        """ImageNet-scale architecture: 299x299x3 input, 2048-d latent."""
        return cls((299, 299, 3), (32, 64, 128, 256, 512), 2048, seed)

    @classmethod
    def target(cls, seed: int = 0) -> "DaeConfig":
        """Target-dataset variant: 256x256x1 input, 64-d latent."""
        return cls((256, 256, 1), (32, 64, 128, 256, 512), 64, seed)

    @classmethod
    def desk(cls, seed: int = 0) -> "DaeConfig":
        return cls((64, 64, 1), (16, 32, 64), 128, seed)

    def geometry(self) -> list[tuple[int, int]]:
        """Spatial size before the first conv and after each encoder conv."""
        h, w = self.input_shape[:2]
        sizes = [(h, w)]
        for _ in self.encoder_channels:
            h = sb.conv_output_size(h, KERNEL, STRIDE, PADDING)
            w = sb.conv_output_size(w, KERNEL, STRIDE, PADDING)
            if h < 1 or w < 1:
                raise ConfigError(
                    f"input {self.input_shape[:2]} collapses to nothing after "
                    f"{len(sizes)} stride-2 convolutions"
                )
            sizes.append((h, w))
        return sizes

    def output_paddings(self) -> list[tuple[int, int]]:
        """Per decoder layer output_padding so each transposed conv undoes its encoder conv.

        Ordered like the decoder, i.e. deepest layer first.
        """
        sizes = self.geometry()
        pads = []
        for (h_in, w_in), (h_out, w_out) in zip(sizes[:-1], sizes[1:]):
            ph = h_in - ((h_out - 1) * STRIDE - 2 * PADDING + KERNEL)
            pw = w_in - ((w_out - 1) * STRIDE - 2 * PADDING + KERNEL)
            if not (0 <= ph < STRIDE and 0 <= pw < STRIDE):
                raise ConfigError(f"cannot mirror {h_in}x{w_in} -> {h_out}x{w_out}")
            pads.append((ph, pw))
        return pads[::-1]

    @property
    def flat_dim(self) -> int:
        h, w = self.geometry()[-1]
        return self.encoder_channels[-1] * h * w

    def layer_names(self) -> list[str]:
        k = len(self.encoder_channels)
        return ([f"enc{i}" for i in range(k)] + ["enc_fc", "dec_fc"]
                + [f"dec{i}" for i in range(k)])

    def to_dict(self) -> dict:
        return {"input_shape": list(self.input_shape),
                "encoder_channels": list(self.encoder_channels),
                "latent_dim": self.latent_dim, "seed": self.seed}


@dataclass
class NoiseSpec:
    """Gaussian corruption with standard deviation ``sigma``."""

    sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ConfigError(f"sigma must be >= 0, got {self.sigma}")


@dataclass
class TrainingConfig:
    batch_size: int = 128
    lr: float = 1e-3
    max_epochs: int = 1000
    early_stop_patience: int = 20
    seed: int = 0
    val_fraction: float = 0.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.early_stop_patience < 1:
            raise ConfigError(f"early_stop_patience must be >= 1, got {self.early_stop_patience}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")

    @classmethod
    def desk(cls, seed: int = 0) -> "TrainingConfig":
        return cls(batch_size=16, max_epochs=200, early_stop_patience=20, seed=seed)


class DaeModel:
    """Encoder/decoder parameters plus the config that shaped them."""

    def __init__(self, config: DaeConfig, params: ParameterBlock,
                 history: list[float] | None = None):
        self.config = config
        self.params = params
        self.history = list(history or [])

    @property
    def dtype(self) -> np.dtype:
        return next(self.params.named_parameters())[1].dtype

    @property
    def latent_dim(self) -> int:
        return self.config.latent_dim

    @property
    def encoder_layers(self) -> list[str]:
        return [f"enc{i}" for i in range(len(self.config.encoder_channels))]

    # -- forward passes (Tensor level, NCHW) ---------------------------------

    def encode_tensor(self, x: Tensor, taps: dict | None = None) -> Tensor:
        """Latent codes for a NCHW batch. Conv outputs (pre-ReLU) land in ``taps``."""
        h = x
        for name in self.encoder_layers:
            w, b = self.params[name]
            h = sb.conv2d(h, w, b, STRIDE, PADDING)
            if taps is not None:
                taps[name] = h
            h = sb.relu(h)
        return sb.linear(sb.flatten(h), *self.params["enc_fc"])

    def encode_from(self, layer: str, activation: Tensor) -> Tensor:
        """Finish the encoder pass from the pre-ReLU output of conv ``layer``."""
        names = self.encoder_layers
        if layer not in names:
            raise InputError(f"unknown encoder layer {layer!r}; choose from {names}")
        h = sb.relu(activation)
        for name in names[names.index(layer) + 1:]:
            w, b = self.params[name]
            h = sb.relu(sb.conv2d(h, w, b, STRIDE, PADDING))
        return sb.linear(sb.flatten(h), *self.params["enc_fc"])

    def decode_tensor(self, z: Tensor) -> Tensor:
        cfg = self.config
        h, w = cfg.geometry()[-1]
        x = sb.relu(sb.linear(z, *self.params["dec_fc"]))
        x = sb.reshape(x, (z.shape[0], cfg.encoder_channels[-1], h, w))
        pads = cfg.output_paddings()
        k = len(cfg.encoder_channels)
        for i in range(k):
            wt, b = self.params[f"dec{i}"]
            op = pads[i]
            if op[0] != op[1]:
                x = _conv_transpose_asym(x, wt, b, op)
            else:
                x = sb.conv2d_transpose(x, wt, b, STRIDE, PADDING, op[0])
            x = sb.tanh(x) if i == k - 1 else sb.relu(x)
        return x

    def forward(self, x: Tensor) -> Tensor:
        return self.decode_tensor(self.encode_tensor(x))

    # -- numpy conveniences (NHWC in, no tape) -------------------------------

    def _to_nchw(self, images) -> np.ndarray:
        arr = np.asarray(images)
        if arr.ndim == 3:
            arr = arr[None]
        if arr.ndim != 4 or arr.shape[1:] != self.config.input_shape:
            raise InputError(
                f"images must have shape (N, {', '.join(map(str, self.config.input_shape))}), "
                f"got {arr.shape}"
            )
        return np.ascontiguousarray(arr.transpose(0, 3, 1, 2), dtype=self.dtype)

    def reconstruct(self, images, batch_size: int = 64) -> np.ndarray:
        x = self._to_nchw(images)
        out = [self.forward(Tensor(x[i:i + batch_size])).data
               for i in range(0, len(x), batch_size)]
        return np.concatenate(out).transpose(0, 2, 3, 1)

    def encoder_hash(self) -> str:
        """SHA-256 over the architecture and encoder weights (hex)."""
        h = hashlib.sha256()
        h.update(repr(sorted(self.config.to_dict().items())).encode())
        for name in self.encoder_layers + ["enc_fc"]:
            for t in self.params[name]:
                h.update(np.ascontiguousarray(t.data, dtype=t.dtype.newbyteorder("<")).tobytes())
        return h.hexdigest()


def _conv_transpose_asym(x, w, b, op):
    # Non-square maps: run with the larger output padding and crop the excess.
    big = max(op)
    y = sb.conv2d_transpose(x, w, b, STRIDE, PADDING, big)
    h = y.shape[2] - (big - op[0])
    wd = y.shape[3] - (big - op[1])
    return _crop(y, h, wd)


def _crop(x: Tensor, h: int, w: int) -> Tensor:
    full = x.shape

    def backward(g):
        out = np.zeros(full, dtype=g.dtype)
        out[:, :, :h, :w] = g
        return (out,)

    return sb._emit(np.ascontiguousarray(x.data[:, :, :h, :w]), (x,), backward)


def _layer_shapes(config: DaeConfig) -> "OrderedDict[str, tuple[tuple, int, int]]":
    """name -> (weight shape, fan_in, fan_out) in declaration order."""
    k2 = KERNEL * KERNEL
    chans = config.encoder_channels
    c_in = config.input_shape[2]
    shapes: "OrderedDict[str, tuple[tuple, int, int]]" = OrderedDict()
    prev = c_in
    for i, c in enumerate(chans):
        shapes[f"enc{i}"] = ((c, prev, KERNEL, KERNEL), prev * k2, c * k2)
        prev = c
    flat, lat = config.flat_dim, config.latent_dim
    shapes["enc_fc"] = ((lat, flat), flat, lat)
    shapes["dec_fc"] = ((flat, lat), lat, flat)
    prev = chans[-1]
    for i, c in enumerate(list(chans[::-1][1:]) + [c_in]):
        shapes[f"dec{i}"] = ((prev, c, KERNEL, KERNEL), prev * k2, c * k2)
        prev = c
    return shapes


def _bias_len(name: str, wshape: tuple) -> int:
    # conv: [F, C, k, k]; transposed conv: [C, F, k, k]; dense: [out, in]
    return wshape[1] if name.startswith("dec") and name != "dec_fc" else wshape[0]


def build_dae(config: DaeConfig, dtype=None) -> DaeModel:
    """Allocate and Glorot-initialise a DAE deterministically from ``config.seed``."""
    dtype = np.dtype(dtype or sb.get_default_dtype())
    rng = np.random.default_rng(config.seed)
    params = ParameterBlock()
    for name, (wshape, fan_in, fan_out) in _layer_shapes(config).items():
        params.add(name, sb.glorot_uniform(rng, wshape, fan_in, fan_out, dtype),
                   np.zeros(_bias_len(name, wshape), dtype))
    return DaeModel(config, params)


# ---------------------------------------------------------------------------
# training


class EarlyStopping:
    """Tracks the best monitored loss; ``update`` returns True when training should stop."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = -1
        self.epoch = -1

    def update(self, loss: float) -> bool:
        self.epoch += 1
        if loss < self.best:
            self.best = loss
            self.best_epoch = self.epoch
            return False
        return self.epoch - self.best_epoch >= self.patience

    @property
    def improved(self) -> bool:
        return self.best_epoch == self.epoch


def _batch_loss(model: DaeModel, noisy: np.ndarray, clean: np.ndarray, train: bool):
    if not train:
        recon = model.forward(Tensor(noisy))
        return float(sb.mse_loss(recon, Tensor(clean)).data), None
    with Tape() as tape:
        recon = model.forward(Tensor(noisy))
        loss = sb.mse_loss(recon, Tensor(clean))
    tape.backward(loss)
    grads = {key: tape.grad(p) for key, p in model.params.named_parameters()}
    return float(loss.data), grads


def _train_epoch(model: DaeModel, x: np.ndarray, noise: NoiseSpec, tc: TrainingConfig,
                 epoch: int) -> float:
    order = np.random.default_rng([tc.seed, epoch]).permutation(len(x))
    noise_rng = np.random.default_rng([noise.seed, epoch])
    total = 0.0
    for start in range(0, len(x), tc.batch_size):
        clean = x[order[start:start + tc.batch_size]]
        eta = noise_rng.standard_normal(clean.shape).astype(clean.dtype) * clean.dtype.type(noise.sigma)
        loss, grads = _batch_loss(model, clean + eta, clean, train=True)
        if not np.isfinite(loss):
            return float("nan")
        sb.adam_step(model.params, grads, lr=tc.lr)
        total += loss * len(clean)
    return total / len(x)


def _eval_loss(model: DaeModel, x: np.ndarray, noise: NoiseSpec, batch_size: int) -> float:
    # Fixed noise draw so the monitored value only moves with the weights.
    rng = np.random.default_rng([noise.seed, 0x5EED])
    eta = rng.standard_normal(x.shape).astype(x.dtype) * x.dtype.type(noise.sigma)
    total = 0.0
    for start in range(0, len(x), batch_size):
        loss, _ = _batch_loss(model, x[start:start + batch_size] + eta[start:start + batch_size],
                              x[start:start + batch_size], train=False)
        total += loss * len(x[start:start + batch_size])
    return total / len(x)


def split_holdout(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded (train_idx, held_out_idx) split; held-out gets round(fraction * n) items."""
    perm = np.random.default_rng([seed, 0xA11]).permutation(n)
    n_val = int(round(fraction * n))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def train_dae(model: DaeModel, dataset: Sequence[np.ndarray], noise: NoiseSpec,
              tc: TrainingConfig, progress=None,
              start_epoch: int = 0) -> tuple[DaeModel, list[float]]:
    """Train in place; returns the model restored to its best epoch and the loss history.

    The monitored loss is the training-epoch MSE, or the held-out MSE when
    ``tc.val_fraction > 0``. ``progress(epoch, loss)`` is called after every epoch.
    Epoch numbers seed the shuffles and noise draws, so a resumed run passes
    ``start_epoch`` to continue the stream rather than replay it.
    """
    if len(dataset) == 0:
        raise InputError("training dataset is empty")
    x = model._to_nchw(np.stack([np.asarray(img) for img in dataset]))
    if x.min() < -1.0 - 1e-6 or x.max() > 1.0 + 1e-6:
        raise InputError("training images must lie in [-1, 1]")
    val = None
    if tc.val_fraction > 0:
        tr_idx, val_idx = split_holdout(len(x), tc.val_fraction, tc.seed)
        if len(tr_idx) == 0 or len(val_idx) == 0:
            raise InputError("val_fraction leaves an empty split")
        x, val = x[tr_idx], x[val_idx]

    stopper = EarlyStopping(tc.early_stop_patience)
    best_state = model.params.state()
    history: list[float] = []
    for epoch in range(start_epoch, start_epoch + tc.max_epochs):
        train_loss = _train_epoch(model, x, noise, tc, epoch)
        monitored = train_loss
        if val is not None and np.isfinite(train_loss):
            monitored = _eval_loss(model, val, noise, tc.batch_size)
        if not np.isfinite(monitored):
            model.params.load_state(best_state)
            model.history.extend(history)
            raise TrainingAborted(f"non-finite loss at epoch {epoch}", model)
        history.append(monitored)
        if progress is not None:
            progress(epoch, monitored)
        stop = stopper.update(monitored)
        if stopper.improved:
            best_state = model.params.state()
        if stop:
            log.info("early stop at epoch %d (best %d)", epoch, stopper.best_epoch)
            break
    model.params.load_state(best_state)
    model.history.extend(history)
    return model, history


def write_history(history: Sequence[float], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        for i, loss in enumerate(history):
            writer.writerow([i, repr(float(loss))])


# ---------------------------------------------------------------------------
# inference


def encode(model: DaeModel, images) -> np.ndarray:
    """Latent features (N, latent_dim) as float64. No noise is added.

    Images are encoded one at a time: BLAS blocking depends on the batch
    size, so this is what makes a row independent of its batch neighbours.
    """
    x = model._to_nchw(images)
    out = np.empty((len(x), model.latent_dim), dtype=np.float64)
    for i in range(len(x)):
        out[i] = model.encode_tensor(Tensor(x[i:i + 1])).data[0]
    return out


_LUMA = np.array([0.299, 0.587, 0.114])


def to_unit_range(raw) -> np.ndarray:
    """Map integer images (0..255) or float images in [0, 1] to float64 [0, 1]."""
    arr = np.asarray(raw)
    if arr.size == 0:
        raise InputError("image is empty")
    if arr.dtype.kind in "ui":
        return arr.astype(np.float64) / 255.0
    arr = arr.astype(np.float64)
    if arr.max() > 1.0:
        return arr / 255.0
    return arr


def adapt(img: np.ndarray, shape: tuple[int, int, int]) -> np.ndarray:
    """Bilinear-resize an H x W x C image and adapt channels; values are not rescaled."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[..., None]
    if arr.ndim != 3 or arr.size == 0:
        raise InputError(f"expected a non-empty H x W x C image, got shape {arr.shape}")
    h, w, c = shape
    if arr.shape[2] != c:
        if arr.shape[2] == 1:
            arr = np.repeat(arr, c, axis=2)
        elif arr.shape[2] in (3, 4) and c == 1:
            arr = (arr[..., :3] @ _LUMA)[..., None]
        elif arr.shape[2] == 4 and c == 3:
            arr = arr[..., :3]
        else:
            raise InputError(f"cannot adapt {arr.shape[2]} channels to {c}")
    if arr.shape[:2] != (h, w):
        arr = bilinear_resize(arr, h, w)
    return arr


def bilinear_resize(arr: np.ndarray, h: int, w: int) -> np.ndarray:
    """Half-pixel-centred bilinear resize of an H x W [x C] array."""
    zoom = (h / arr.shape[0], w / arr.shape[1]) + (1,) * (arr.ndim - 2)
    out = ndimage.zoom(arr, zoom, order=1, mode="nearest", grid_mode=True)
    if out.shape[:2] != (h, w):  # zoom rounds the output size
        raise InputError(f"resize produced {out.shape[:2]}, wanted {(h, w)}")
    return out


def preprocess(raw, target: DaeConfig | tuple[int, int, int]) -> np.ndarray:
    """Raw pixels ([0, 255] or [0, 1]) to an ImageTensor of the target shape in [-1, 1]."""
    shape = target.input_shape if isinstance(target, DaeConfig) else tuple(target)
    unit = to_unit_range(raw)
    return np.clip(adapt(unit * 2.0 - 1.0, shape), -1.0, 1.0)


# ---------------------------------------------------------------------------
# checkpoints
#
# layout: b"DAE1" | int32 header | int64 step | params | [adam m | adam v] | crc32
# int32 header = H, W, C, n_layers, channels..., latent_dim, seed, real_bytes, has_moments

MAGIC = b"DAE1"


def _param_order(params: ParameterBlock) -> list[tuple[str, sb.Tensor]]:
    return list(params.named_parameters())


def save_checkpoint(model: DaeModel, path) -> None:
    cfg = model.config
    real_bytes = model.dtype.itemsize
    has_m = int(model.params.has_moments)
    header = [*cfg.input_shape, len(cfg.encoder_channels), *cfg.encoder_channels,
              cfg.latent_dim, cfg.seed, real_bytes, has_m]
    le = np.dtype(f"<f{real_bytes}")
    chunks = [MAGIC, struct.pack(f"<{len(header)}i", *header), struct.pack("<q", model.params.step)]
    order = _param_order(model.params)
    chunks += [np.ascontiguousarray(p.data, dtype=le).tobytes() for _, p in order]
    if has_m:
        chunks += [np.ascontiguousarray(model.params.m[k], dtype=le).tobytes() for k, _ in order]
        chunks += [np.ascontiguousarray(model.params.v[k], dtype=le).tobytes() for k, _ in order]
    body = b"".join(chunks)
    crc = binascii.crc32(body) & 0xFFFFFFFF
    Path(path).write_bytes(body + struct.pack("<I", crc))


def load_checkpoint(path) -> DaeModel:
    blob = Path(path).read_bytes()
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise ChecksumError(f"{path}: not a DAE checkpoint (bad magic)")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if binascii.crc32(body) & 0xFFFFFFFF != crc:
        raise ChecksumError(f"{path}: CRC32 mismatch (corrupt or truncated)")
    try:
        off = 4
        h, w, c, k = struct.unpack_from("<4i", body, off)
        off += 16
        chans = struct.unpack_from(f"<{k}i", body, off)
        off += 4 * k
        latent, seed, real_bytes, has_m = struct.unpack_from("<4i", body, off)
        off += 16
        (step,) = struct.unpack_from("<q", body, off)
        off += 8
    except struct.error as exc:
        raise ChecksumError(f"{path}: truncated header") from exc
    if real_bytes not in (4, 8):
        raise ChecksumError(f"{path}: unsupported real width {real_bytes}")
    config = DaeConfig((h, w, c), chans, latent, seed)
    dtype = np.dtype(f"f{real_bytes}")
    le = np.dtype(f"<f{real_bytes}")
    model = _empty_model(config, dtype)
    order = _param_order(model.params)

    def take(shape):
        nonlocal off
        n = int(np.prod(shape)) * real_bytes
        if off + n > len(body):
            raise ChecksumError(f"{path}: truncated parameter data")
        arr = np.frombuffer(body, dtype=le, count=n // real_bytes, offset=off)
        off += n
        return arr.reshape(shape).astype(dtype)

    for _, p in order:
        p.data = take(p.shape)
    if has_m:
        model.params.m = {key: take(p.shape) for key, p in order}
        model.params.v = {key: take(p.shape) for key, p in order}
    if off != len(body):
        raise ChecksumError(f"{path}: {len(body) - off} trailing bytes")
    model.params.step = step
    return model


def _empty_model(config: DaeConfig, dtype) -> DaeModel:
    params = ParameterBlock()
    for name, (wshape, _, _) in _layer_shapes(config).items():
        params.add(name, np.zeros(wshape, dtype), np.zeros(_bias_len(name, wshape), dtype))
    return DaeModel(config, params)
