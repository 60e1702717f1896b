"""Synthetic line-art corpora standing in for design datasets at desk scale.

Three generators draw dark strokes on a white ground:

* ``shapes``  1-3 random ellipses, rectangles and triangles
* ``frames``  chair-like frames: seat, backrest, legs
* ``bikes``   stick-figure bicycles: two wheels, a frame polygon, seat and bars

Images are rendered at 4x and box-filtered down, so edges are anti-aliased.
Every image is a pure function of ``(seed, index)``. The bike generator takes
structural defects (``missing_wheel``, ``detached_seat``) as parameters, which
gives plausibility ladders without human labels.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .errors import ConfigError

SUPERSAMPLE = 4
GENERATORS = ("shapes", "frames", "bikes")
BIKE_DEFECTS = ("none", "missing_wheel", "detached_seat")


@dataclass
class CorpusSpec:
    generator: str = "shapes"
    count: int = 500
    size: int = 64
    seed: int = 0
    stroke: tuple[float, float] = (0.03, 0.06)  # stroke width as a fraction of size
    ink: tuple[int, int] = (0, 60)  # gray level range of strokes
    defect: str = "none"
    defect_rate: float = 0.0

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ConfigError(f"unknown generator {self.generator!r}; choose from {GENERATORS}")
        if self.count < 1 or self.size < 8:
            raise ConfigError("corpus needs count >= 1 and size >= 8")
        if self.defect not in BIKE_DEFECTS:
            raise ConfigError(f"unknown defect {self.defect!r}; choose from {BIKE_DEFECTS}")
        if not 0.0 <= self.defect_rate <= 1.0:
            raise ConfigError("defect_rate must lie in [0, 1]")

    @classmethod
    def desk(cls, count: int = 500, seed: int = 1) -> "CorpusSpec":
        """Low-variability frames corpus a small DAE can learn within minutes."""
        return cls("frames", count, 64, seed, stroke=(0.045, 0.045), ink=(0, 0))


def _canvas(size: int):
    big = size * SUPERSAMPLE
    img = Image.new("L", (big, big), 255)
    return img, ImageDraw.Draw(img), big


def _finish(img: Image.Image, size: int) -> np.ndarray:
    return np.asarray(img.resize((size, size), Image.BOX), dtype=np.uint8)


def _stroke(rng, spec: CorpusSpec, big: int) -> tuple[int, int]:
    width = max(1, int(round(rng.uniform(*spec.stroke) * big)))
    ink = int(rng.integers(spec.ink[0], spec.ink[1] + 1))
    return width, ink


def _draw_shapes(rng, spec: CorpusSpec) -> np.ndarray:
    img, draw, big = _canvas(spec.size)
    for _ in range(int(rng.integers(1, 4))):
        width, ink = _stroke(rng, spec, big)
        kind = rng.integers(3)
        cx, cy = rng.uniform(0.25, 0.75, size=2) * big
        rx, ry = rng.uniform(0.12, 0.3, size=2) * big
        filled = rng.random() < 0.3
        fill = ink if filled else None
        if kind == 0:
            draw.ellipse([cx - rx, cy - ry, cx + rx, cy + ry], outline=ink, fill=fill, width=width)
        elif kind == 1:
            draw.rectangle([cx - rx, cy - ry, cx + rx, cy + ry], outline=ink, fill=fill, width=width)
        else:
            angles = rng.uniform(0, 2 * np.pi) + np.array([0, 2 * np.pi / 3, 4 * np.pi / 3])
            pts = [(cx + rx * np.cos(a), cy + ry * np.sin(a)) for a in angles]
            if filled:
                draw.polygon(pts, fill=ink)
            else:
                draw.line(pts + [pts[0]], fill=ink, width=width, joint="curve")
    return _finish(img, spec.size)


def _draw_frames(rng, spec: CorpusSpec) -> np.ndarray:
    img, draw, big = _canvas(spec.size)
    width, ink = _stroke(rng, spec, big)
    u = big / 100.0
    seat_y = rng.uniform(50, 62) * u
    left, right = rng.uniform(18, 30) * u, rng.uniform(70, 82) * u
    back_top = rng.uniform(10, 22) * u
    floor = rng.uniform(86, 94) * u
    tilt = rng.uniform(-6, 6) * u
    draw.line([(left, seat_y), (right, seat_y)], fill=ink, width=width)
    draw.line([(left, seat_y), (left + tilt, back_top)], fill=ink, width=width)
    if rng.random() < 0.5:
        draw.line([(left + tilt, back_top), (left + tilt + 0.5 * (right - left), back_top)],
                  fill=ink, width=width)
    for x in (left, right):
        splay = rng.uniform(-5, 5) * u
        draw.line([(x, seat_y), (x + splay, floor)], fill=ink, width=width)
    if rng.random() < 0.5:
        draw.line([(left, 0.5 * (seat_y + floor)), (right, 0.5 * (seat_y + floor))],
                  fill=ink, width=max(1, width // 2))
    return _finish(img, spec.size)


def _draw_bikes(rng, spec: CorpusSpec, defect: str) -> np.ndarray:
    img, draw, big = _canvas(spec.size)
    width, ink = _stroke(rng, spec, big)
    u = big / 100.0
    r = rng.uniform(15, 20) * u
    ground = rng.uniform(74, 80) * u
    rear = np.array([rng.uniform(20, 26) * u, ground - r])
    front = np.array([rng.uniform(74, 80) * u, ground - r])
    bracket = np.array([rng.uniform(44, 52) * u, ground - r + rng.uniform(0, 4) * u])
    seat = np.array([rng.uniform(36, 42) * u, rng.uniform(30, 38) * u])
    head = np.array([rng.uniform(64, 70) * u, rng.uniform(30, 38) * u])

    def line(*pts, w=width):
        draw.line([tuple(p) for p in pts], fill=ink, width=w)

    def wheel(c):
        draw.ellipse([c[0] - r, c[1] - r, c[0] + r, c[1] + r], outline=ink, width=width)

    wheel(rear)
    if defect != "missing_wheel":
        wheel(front)
    line(rear, bracket, seat, rear)
    line(seat, head, bracket)
    line(head, front)
    lift = np.array([0.0, -rng.uniform(6, 10) * u])
    # a detached seat floats up and back, leaving a gap above the frame
    shift = np.zeros(2)
    if defect == "detached_seat":
        shift = np.array([-rng.uniform(8, 14) * u, -rng.uniform(8, 12) * u])
    line(seat + shift, seat + shift + lift)
    line(seat + shift + lift + np.array([-6 * u, 0.0]), seat + shift + lift + np.array([6 * u, 0.0]))
    bars = head + np.array([rng.uniform(-4, 2) * u, -rng.uniform(6, 10) * u])
    line(head, bars)
    line(bars, bars + np.array([-7 * u, 0.0]))
    return _finish(img, spec.size)


def render(spec: CorpusSpec, index: int) -> np.ndarray:
    """One uint8 H x W image of the corpus."""
    rng = np.random.default_rng([spec.seed, index])
    if spec.generator == "shapes":
        return _draw_shapes(rng, spec)
    if spec.generator == "frames":
        return _draw_frames(rng, spec)
    defect = spec.defect
    if spec.defect_rate > 0 and defect == "none":
        defect = BIKE_DEFECTS[1 + int(rng.integers(2))] if rng.random() < spec.defect_rate else "none"
    return _draw_bikes(rng, spec, defect)


def generate(spec: CorpusSpec) -> np.ndarray:
    """The whole corpus as uint8 (count, size, size)."""
    return np.stack([render(spec, i) for i in range(spec.count)])


def as_images(raw: np.ndarray) -> np.ndarray:
    """uint8 (N, H, W) -> float64 ImageTensors (N, H, W, 1) in [-1, 1]."""
    return (raw.astype(np.float64) / 255.0 * 2.0 - 1.0)[..., None]


def make_images(spec: CorpusSpec) -> np.ndarray:
    return as_images(generate(spec))


def write_corpus(spec: CorpusSpec, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(spec.count):
        path = out / f"{spec.generator}_{i:05d}.png"
        Image.fromarray(render(spec, i), mode="L").save(path, optimize=False)
        paths.append(path)
    return paths


def parse_corpus_spec(text: str) -> CorpusSpec:
    """``generator[:key=value,...]``, e.g. ``bikes:count=500,size=64,seed=1``."""
    from .io import parse_options

    generator, _, rest = text.strip().partition(":")
    types = {"count": int, "size": int, "seed": int, "defect": str, "defect_rate": float}
    return CorpusSpec(generator=generator.strip(), **parse_options(rest, types))
