"""Named metrics: a DAE encoder paired with a distance critic.

``fdd`` = encoder + Frechet distance, ``kdd`` = encoder + polynomial MMD^2,
``tdd`` = encoder + 0-dim persistence distance. A metric whose encoder was
trained on the evaluation domain itself is the same construction with a
different checkpoint, so it only differs by name.

Canonical spec string (hashed with SHA-256 into every report)::

    metric=<name>;critic=<critic>;encoder=<encoder sha256>;input=<H>x<W>x<C>;match_n=<0|1>;seed=<int>[;<param>=<repr>...]

Critic parameters appear sorted by key.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import critics
from .dae import DaeModel, adapt, encode, load_checkpoint
from .errors import ChecksumError, ConfigError, InputError
from .io import content_hash, read_features, write_csv, write_features

CRITICS = ("frechet", "mmd2_poly", "topology")
METRIC_CRITIC = {"fdd": "frechet", "kdd": "mmd2_poly", "tdd": "topology"}
CRITIC_PARAMS = {
    "frechet": {},
    "mmd2_poly": {"degree": int, "gamma": float, "coef": float},
    "topology": {"p": float},
}
CACHE_ENV = "FDD_CACHE_DIR"


@dataclass(frozen=True)
class MetricSpec:
    name: str
    critic: str
    encoder: DaeModel = field(compare=False, repr=False)
    seed: int = 0
    match_n: bool = False
    params: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        if self.critic not in CRITICS:
            raise ConfigError(f"unknown critic {self.critic!r}; choose from {CRITICS}")
        params = dict(self.params)
        allowed = CRITIC_PARAMS[self.critic]
        for key, value in params.items():
            if key not in allowed:
                raise ConfigError(f"critic {self.critic} has no parameter {key!r}")
            params[key] = allowed[key](value)
        if params.get("degree", 1) < 1:
            raise ConfigError("degree must be >= 1")
        if params.get("p", 1.0) <= 0:
            raise ConfigError("p must be positive")
        object.__setattr__(self, "params", tuple(sorted(params.items())))

    @classmethod
    def named(cls, name: str, encoder: DaeModel, seed: int = 0, match_n: bool = False,
              **params) -> "MetricSpec":
        """``fdd`` / ``kdd`` / ``tdd`` with the matching critic."""
        if name not in METRIC_CRITIC:
            raise ConfigError(f"unknown metric {name!r}; choose from {sorted(METRIC_CRITIC)}")
        return cls(name, METRIC_CRITIC[name], encoder, seed, match_n, tuple(params.items()))

    def canonical(self) -> str:
        h, w, c = self.encoder.config.input_shape
        parts = [f"metric={self.name}", f"critic={self.critic}",
                 f"encoder={self.encoder.encoder_hash()}", f"input={h}x{w}x{c}",
                 f"match_n={int(self.match_n)}", f"seed={self.seed}"]
        parts += [f"{k}={v!r}" for k, v in self.params]
        return ";".join(parts)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def distance(self, a: np.ndarray, b: np.ndarray) -> float:
        """Apply the critic to two feature matrices."""
        if a.shape[1] != self.encoder.latent_dim or b.shape[1] != self.encoder.latent_dim:
            raise InputError(f"features have dimension {a.shape[1]}/{b.shape[1]}, "
                             f"encoder emits {self.encoder.latent_dim}")
        params = dict(self.params)
        if self.match_n and self.critic != "topology":
            a, b = critics.match_sizes(a, b, self.seed)
        if self.critic == "frechet":
            return critics.frechet_distance_features(a, b)
        if self.critic == "mmd2_poly":
            return critics.mmd2_poly(a, b, **params)
        return critics.topology_distance(a, b, seed=self.seed, **params)


@dataclass
class MetricReport:
    metric: str
    critic: str
    score: float
    n_real: int
    n_gen: int
    config_hash: str
    seed: int
    wall_time: float
    label: str = ""

    FIELDS = ("label", "metric", "critic", "score", "n_real", "n_gen", "config_hash", "seed",
              "wall_time")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def row(self) -> list:
        d = self.to_dict()
        return [d[k] for k in self.FIELDS]


def write_reports(reports: Sequence[MetricReport], path) -> None:
    """JSON lines for ``.jsonl`` / ``.json`` paths, CSV otherwise."""
    path = Path(path)
    if path.suffix in (".jsonl", ".json"):
        path.write_text("".join(r.to_json() + "\n" for r in reports))
    else:
        write_csv(path, MetricReport.FIELDS, (r.row() for r in reports))


class FeatureCache:
    """Encoded features keyed by (encoder hash, image-set content hash).

    Thread-safe; concurrent inserts of one key keep the last write, which is
    harmless because encoding is deterministic. With ``directory`` (or the
    ``FDD_CACHE_DIR`` environment variable) float32 models also persist
    features as FEAT files.
    """

    def __init__(self, directory=None):
        if directory is None:
            directory = os.environ.get(CACHE_ENV) or None
        self.directory = Path(directory) if directory else None
        self._store: dict[tuple[str, str], np.ndarray] = {}
        self._lock = threading.Lock()
        self.encode_calls = 0

    def _disk_path(self, key: tuple[str, str]) -> Path:
        return self.directory / f"{key[0][:16]}_{key[1][:16]}.feat"

    def features(self, model: DaeModel, images: np.ndarray) -> np.ndarray:
        key = (model.encoder_hash(), content_hash(images))
        with self._lock:
            hit = self._store.get(key)
        if hit is not None:
            return hit
        persist = self.directory is not None and model.dtype == np.float32
        if persist and self._disk_path(key).exists():
            try:
                feats, enc = read_features(self._disk_path(key))
                if enc == key[0] and feats.shape == (len(images), model.latent_dim):
                    feats = feats.astype(np.float64)
                    with self._lock:
                        self._store[key] = feats
                    return feats
            except ChecksumError:
                pass  # stale or damaged entry, recompute
        feats = encode(model, images)
        with self._lock:
            self.encode_calls += 1
            self._store[key] = feats
        if persist:
            self.directory.mkdir(parents=True, exist_ok=True)
            write_features(feats, key[0], self._disk_path(key))
        return feats


def prepare(images, model: DaeModel) -> np.ndarray:
    """Stack ImageTensors, resizing/adapting any whose shape differs from the encoder input."""
    shape = model.config.input_shape
    out = []
    for img in images:
        arr = np.asarray(img, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[..., None]
        if arr.shape != shape:
            arr = np.clip(adapt(arr, shape), -1.0, 1.0)
        out.append(arr)
    if not out:
        raise InputError("image set is empty")
    return np.stack(out)


def evaluate(spec: MetricSpec, real, gen, cache: FeatureCache | None = None,
             label: str = "") -> MetricReport:
    start = time.perf_counter()
    cache = cache if cache is not None else FeatureCache()
    x = prepare(real, spec.encoder)
    y = prepare(gen, spec.encoder)
    for name, s in (("real", x), ("gen", y)):
        if len(s) < 2:
            raise InputError(f"{name} set needs at least 2 images, got {len(s)}")
    score = spec.distance(cache.features(spec.encoder, x), cache.features(spec.encoder, y))
    return MetricReport(spec.name, spec.critic, float(score), len(x), len(y), spec.config_hash,
                        spec.seed, time.perf_counter() - start, label)


def evaluate_matrix(specs: Sequence[MetricSpec], pairs: Sequence[tuple], labels=None,
                    cache: FeatureCache | None = None) -> list[MetricReport]:
    """Every spec on every (real, gen) pair; rows ordered pair-major, then spec."""
    cache = cache if cache is not None else FeatureCache()
    labels = list(labels) if labels is not None else [str(i) for i in range(len(pairs))]
    if len(labels) != len(pairs):
        raise InputError("labels and pairs differ in length")
    return [evaluate(spec, real, gen, cache, label)
            for (real, gen), label in zip(pairs, labels) for spec in specs]


def load_encoder(path) -> DaeModel:
    return load_checkpoint(path)
