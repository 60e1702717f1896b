"""Seeded image corruptions for the sensitivity and consistency experiments.

Intensity ``alpha`` means:

* salt_pepper   fraction of pixel positions forced to -1 or +1
* gaussian      per-pixel noise *variance* (std = sqrt(alpha)), then clamp to [-1, 1]
* patch_mask    fraction of grid tiles filled with white (+1)
* patch_swap    fraction of grid tiles, counted in swapped *pairs*
* mixed         patch_swap followed by gaussian

Images are H x W x C float arrays in [-1, 1]. Tiles are ``H // grid`` by
``W // grid``; remainder rows/columns at the bottom/right belong to no tile and
are never modified. Operators are pure functions of (image, parameters, seed).
The tile draw for a given seed is a prefix of one fixed permutation, so a
higher alpha touches a superset of the tiles touched by a lower one.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import InputError

KINDS = ("salt_pepper", "gaussian", "patch_mask", "patch_swap", "mixed")
MASK_FILL = 1.0
DEFAULT_GRID = 4

# Intensities used by the sensitivity experiment (one level per disturbance).
STANDARD_ALPHAS = {"salt_pepper": 0.01, "gaussian": 0.01, "patch_mask": 0.25,
                   "patch_swap": 0.25, "mixed": 0.01}
# Fixed consistency ladders; other kinds scale LADDER_MAX.
STANDARD_LADDERS = {"gaussian": (0.0025, 0.01, 0.04, 0.16), "patch_swap": (0.125, 0.25, 0.5)}
# Largest alpha per kind for the default consistency ladder.
LADDER_MAX = {"salt_pepper": 0.1, "gaussian": 0.16, "patch_mask": 0.5,
              "patch_swap": 0.5, "mixed": 0.16}


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _check_alpha(alpha: float, upper: float | None = 1.0) -> None:
    if not (alpha >= 0 and (upper is None or alpha <= upper)):
        bound = f"[0, {upper}]" if upper is not None else ">= 0"
        raise InputError(f"alpha must be {bound}, got {alpha}")


def _image(img) -> np.ndarray:
    arr = np.array(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[..., None]
    if arr.ndim != 3:
        raise InputError(f"expected an H x W x C image, got shape {arr.shape}")
    return arr


def salt_pepper(img, alpha: float, seed: int) -> np.ndarray:
    """Set round(alpha * H * W) distinct pixel positions to -1 or +1 (all channels)."""
    _check_alpha(alpha)
    out = _image(img)
    h, w = out.shape[:2]
    count = _round_half_up(alpha * h * w)
    if count == 0:
        return out
    rng = np.random.default_rng(seed)
    pos = rng.choice(h * w, size=count, replace=False)
    vals = np.where(rng.random(count) < 0.5, -1.0, 1.0)
    out.reshape(h * w, -1)[pos] = vals[:, None]
    return out


def gaussian_noise(img, alpha: float, seed: int) -> np.ndarray:
    """Add N(0, alpha) per element and clamp to [-1, 1]."""
    _check_alpha(alpha, upper=None)
    out = _image(img)
    if alpha == 0:
        return out
    rng = np.random.default_rng(seed)
    out += math.sqrt(alpha) * rng.standard_normal(out.shape)
    return np.clip(out, -1.0, 1.0, out=out)


def _tiles(shape, grid: int):
    if grid < 2:
        raise InputError(f"patch grid must be >= 2, got {grid}")
    h, w = shape[:2]
    th, tw = h // grid, w // grid
    if th < 1 or tw < 1:
        raise InputError(f"image {h}x{w} too small for a {grid}x{grid} grid")
    return th, tw


def _tile_slice(t: int, grid: int, th: int, tw: int):
    r, c = divmod(int(t), grid)
    return slice(r * th, (r + 1) * th), slice(c * tw, (c + 1) * tw)


def _tile_order(grid: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).permutation(grid * grid)


def patch_mask(img, alpha: float, seed: int, grid: int = DEFAULT_GRID) -> np.ndarray:
    """Fill round(alpha * grid^2) random tiles with white."""
    _check_alpha(alpha)
    out = _image(img)
    th, tw = _tiles(out.shape, grid)
    count = _round_half_up(alpha * grid * grid)
    if count == 0:
        if alpha > 0:
            warnings.warn(f"patch_mask alpha={alpha} selects no tiles on a {grid}x{grid} grid",
                          stacklevel=2)
        return out
    for t in _tile_order(grid, seed)[:count]:
        out[_tile_slice(t, grid, th, tw)] = MASK_FILL
    return out


def swap_pairs(alpha: float, seed: int, grid: int = DEFAULT_GRID) -> list[tuple[int, int]]:
    """The disjoint tile pairs patch_swap exchanges for these parameters."""
    _check_alpha(alpha)
    pairs = _round_half_up(alpha * grid * grid)
    if pairs > (grid * grid) // 2:
        raise InputError(
            f"patch_swap alpha={alpha} asks for {pairs} pairs but a {grid}x{grid} grid "
            f"holds at most {(grid * grid) // 2}"
        )
    order = _tile_order(grid, seed)
    return [(int(order[2 * i]), int(order[2 * i + 1])) for i in range(pairs)]


def patch_swap(img, alpha: float, seed: int, grid: int = DEFAULT_GRID) -> np.ndarray:
    """Exchange round(alpha * grid^2) disjoint pairs of tiles. Preserves the pixel multiset."""
    out = _image(img)
    th, tw = _tiles(out.shape, grid)
    for a, b in swap_pairs(alpha, seed, grid):
        sa, sb = _tile_slice(a, grid, th, tw), _tile_slice(b, grid, th, tw)
        tmp = out[sa].copy()
        out[sa] = out[sb]
        out[sb] = tmp
    return out


def mixed(img, alpha_noise: float, alpha_swap: float, seed: int,
          noise_seed: int | None = None, grid: int = DEFAULT_GRID) -> np.ndarray:
    """patch_swap (with ``seed``) then gaussian_noise (with ``noise_seed``, default seed + 1)."""
    if noise_seed is None:
        noise_seed = seed + 1
    return gaussian_noise(patch_swap(img, alpha_swap, seed, grid), alpha_noise, noise_seed)


@dataclass(frozen=True)
class DisturbanceSpec:
    """One corruption at one intensity. For ``mixed``, ``alpha`` is the noise
    variance and ``alpha_swap`` the swapped-tile fraction."""

    kind: str
    alpha: float
    seed: int = 0
    patch_grid: int = DEFAULT_GRID
    alpha_swap: float = 0.25

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown disturbance {self.kind!r}; choose from {KINDS}")
        _check_alpha(self.alpha, None if self.kind in ("gaussian", "mixed") else 1.0)
        if self.kind in ("patch_mask", "patch_swap", "mixed") and self.patch_grid < 2:
            raise InputError(f"patch_grid must be >= 2, got {self.patch_grid}")

    @property
    def label(self) -> str:
        if self.kind == "mixed":
            return f"mixed:alpha={self.alpha:g},swap={self.alpha_swap:g}"
        return f"{self.kind}:alpha={self.alpha:g}"

    def with_alpha(self, alpha: float) -> "DisturbanceSpec":
        return replace(self, alpha=alpha)

    def apply(self, img, seed: int | None = None) -> np.ndarray:
        s = self.seed if seed is None else seed
        if self.kind == "salt_pepper":
            return salt_pepper(img, self.alpha, s)
        if self.kind == "gaussian":
            return gaussian_noise(img, self.alpha, s)
        if self.kind == "patch_mask":
            return patch_mask(img, self.alpha, s, self.patch_grid)
        if self.kind == "patch_swap":
            return patch_swap(img, self.alpha, s, self.patch_grid)
        return mixed(img, self.alpha, self.alpha_swap, s, grid=self.patch_grid)

    def apply_set(self, images) -> np.ndarray:
        """Corrupt every image; image i uses a seed derived from (self.seed, i)."""
        return np.stack([self.apply(img, image_seed(self.seed, i)) for i, img in enumerate(images)])

    def canonical(self) -> str:
        base = f"{self.kind}:alpha={self.alpha!r},grid={self.patch_grid},seed={self.seed}"
        return base + (f",swap={self.alpha_swap!r}" if self.kind == "mixed" else "")


def image_seed(seed: int, index: int) -> int:
    """Independent stream seed for image ``index`` under a base seed."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint64)[0])


_KEYS = {"alpha": float, "grid": int, "seed": int, "swap": float}


def parse_disturbance(text: str) -> DisturbanceSpec:
    """Parse ``kind[:key=value,...]``, e.g. ``patch_swap:alpha=0.25,grid=4,seed=7``.

    Missing ``alpha`` falls back to the sensitivity-test level for that kind.
    """
    kind, _, rest = text.strip().partition(":")
    kind = kind.strip()
    if kind not in KINDS:
        raise InputError(f"unknown disturbance {kind!r}; choose from {KINDS}")
    fields = {}
    for item in filter(None, (p.strip() for p in rest.split(","))):
        key, eq, value = item.partition("=")
        key = key.strip()
        if not eq or key not in _KEYS:
            raise InputError(f"bad disturbance option {item!r}; keys are {sorted(_KEYS)}")
        try:
            fields[key] = _KEYS[key](value)
        except ValueError as exc:
            raise InputError(f"bad value for {key}: {value!r}") from exc
    return DisturbanceSpec(kind=kind, alpha=fields.get("alpha", STANDARD_ALPHAS[kind]),
                           seed=fields.get("seed", 0), patch_grid=fields.get("grid", DEFAULT_GRID),
                           alpha_swap=fields.get("swap", 0.25))


def default_ladder(kind: str, steps=(0.25, 0.5, 0.75, 1.0)) -> list[float]:
    return [f * LADDER_MAX[kind] for f in steps]


def standard_ladder(kind: str) -> list[float]:
    if kind not in KINDS:
        raise InputError(f"unknown disturbance {kind!r}; choose from {KINDS}")
    return list(STANDARD_LADDERS.get(kind, default_ladder(kind)))


def standard_disturbances(seed: int = 0, grid: int = DEFAULT_GRID) -> list[DisturbanceSpec]:
    """The five sensitivity-test corruptions at their fixed intensities."""
    return [DisturbanceSpec(k, STANDARD_ALPHAS[k], seed, grid) for k in KINDS]
