"""Attention maps for the DAE encoder.

The objective is the batch statistic ``S = ||mu||^2 + Tr(Sigma)`` of the latent
features (Sigma with the N-1 divisor). Its gradient is pushed back to the
pre-ReLU output of an encoder conv; channel weights are the spatial means of
that gradient and the map is the signed weighted channel sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import substrate as sb
from .dae import DaeModel, bilinear_resize
from .errors import InputError
from .io import write_csv


@dataclass
class AttentionMap:
    raw: np.ndarray  # (h, w) at the layer resolution, signed
    upsampled: np.ndarray  # (H, W) at the input resolution
    layer: str


def feature_scalar(features: np.ndarray) -> float:
    """||mu||^2 + Tr(Sigma) of an N x D feature batch."""
    w = np.asarray(features, dtype=np.float64)
    mu = w.mean(axis=0)
    centered = w - mu
    return float(mu @ mu + np.sum(centered * centered) / (len(w) - 1))


def feature_scalar_grad(features: np.ndarray) -> np.ndarray:
    """dS/dw_i = 2 mu / N + 2 (w_i - mu) / (N - 1)."""
    w = np.asarray(features, dtype=np.float64)
    n = len(w)
    mu = w.mean(axis=0)
    return 2.0 * mu / n + 2.0 * (w - mu) / (n - 1)


def layer_gradient(model: DaeModel, images, layer: str) -> tuple[np.ndarray, np.ndarray]:
    """(activation, dS/dactivation) at conv ``layer``, both N x C x h x w."""
    if layer not in model.encoder_layers:
        raise InputError(f"unknown encoder layer {layer!r}; choose from {model.encoder_layers}")
    x = model._to_nchw(images)
    if len(x) < 2:
        raise InputError("attention maps need a batch of at least 2 images")
    taps: dict[str, sb.Tensor] = {}
    with sb.Tape() as tape:
        z = model.encode_tensor(sb.Tensor(x), taps)
    seed = feature_scalar_grad(z.data).astype(z.dtype)
    tape.backward(z, seed)
    act = taps[layer]
    return act.data, tape.grad(act)


def gradcam(model: DaeModel, images, layer: str | None = None) -> list[AttentionMap]:
    """One signed attention map per image. ``layer`` defaults to the last encoder conv."""
    layer = layer or model.encoder_layers[-1]
    act, grad = layer_gradient(model, images, layer)
    weights = grad.astype(np.float64).mean(axis=(2, 3))  # N x C
    raw = np.einsum("nc,nchw->nhw", weights, act.astype(np.float64))
    h, w = model.config.input_shape[:2]
    return [AttentionMap(r, bilinear_resize(r, h, w), layer) for r in raw]


def write_grid(amap: AttentionMap, path) -> None:
    """The raw grid as CSV, one row per grid row."""
    header = [f"c{j}" for j in range(amap.raw.shape[1])]
    write_csv(path, header, ([float(v) for v in row] for row in amap.raw),
              comment=f"layer: {amap.layer}")
