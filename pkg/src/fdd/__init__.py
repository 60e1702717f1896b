"""Denoised-feature distances between image sets.

Main entry points:

* :func:`fdd.dae.build_dae`, :func:`fdd.dae.train_dae` for the denoising autoencoder
* :class:`fdd.pipeline.MetricSpec`, :func:`fdd.pipeline.evaluate` for scores
* :mod:`fdd.experiments` for sensitivity, consistency and ranking protocols
"""

from .corpus import CorpusSpec, make_images
from .critics import frechet_distance_features, mmd2_poly, persistence_0d, topology_distance
from .dae import DaeConfig, NoiseSpec, TrainingConfig, build_dae, encode, train_dae
from .disturb import DisturbanceSpec
from .errors import ChecksumError, ConfigError, DimensionError, FddError, InputError, NumericalError
from .pipeline import MetricReport, MetricSpec, evaluate, evaluate_matrix

__version__ = "0.1.0"

__all__ = [
    "ChecksumError", "ConfigError", "CorpusSpec", "DaeConfig", "DimensionError",
    "DisturbanceSpec", "make_images", "FddError", "InputError",
    "MetricReport", "MetricSpec", "NoiseSpec", "NumericalError", "TrainingConfig", "build_dae",
    "encode", "evaluate", "evaluate_matrix", "frechet_distance_features", "mmd2_poly",
    "persistence_0d", "topology_distance", "train_dae",
]
