"""Evaluation protocols: sensitivity to fixed disturbances, consistency along a
disturbance ladder, ranking generative models against human error, and
pairwise Pearson correlation between metrics."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .disturb import DisturbanceSpec, KINDS
from .errors import InputError
from .io import write_csv
from .pipeline import FeatureCache, MetricSpec, evaluate


def _derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1, dtype=np.uint32)[0])


def _hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


# ---------------------------------------------------------------------------
# sensitivity


@dataclass
class SensitivityConfig:
    n_groups: int = 10
    group_size: int = 300
    disturbances: Sequence[DisturbanceSpec] = ()
    specs: Sequence[MetricSpec] = ()
    seed: int = 0

    def __post_init__(self):
        if self.n_groups < 2:
            raise InputError(f"n_groups must be >= 2, got {self.n_groups}")
        if self.group_size < 2:
            raise InputError(f"group size must be >= 2, got {self.group_size}")
        if not self.disturbances or not self.specs:
            raise InputError("sensitivity test needs at least one disturbance and one metric")

    def canonical(self) -> str:
        parts = [f"sensitivity;groups={self.n_groups};k={self.group_size};seed={self.seed}"]
        parts += [f"disturbance[{d.canonical()}]" for d in self.disturbances]
        parts += [f"metric[{s.canonical()}]" for s in self.specs]
        return "|".join(parts)

    @property
    def config_hash(self) -> str:
        return _hash(self.canonical())


def split_groups(n: int, n_groups: int, group_size: int, seed: int) -> np.ndarray:
    """Seeded disjoint groups: (n_groups, group_size) array of sample indices."""
    need = n_groups * group_size
    if n < need:
        raise InputError(f"need {need} samples for {n_groups} groups of {group_size}, have {n}")
    perm = np.random.default_rng([seed, 0x9E0]).permutation(n)
    return perm[:need].reshape(n_groups, group_size)


@dataclass
class SensitivityResult:
    rows: list[tuple[int, str, str, float]]  # (group, disturbance, metric, score)
    config_hash: str

    def summary(self) -> "OrderedDict[tuple[str, str], tuple[float, float]]":
        """(disturbance, metric) -> (mean, sample std) across groups, in first-seen order."""
        buckets: OrderedDict[tuple[str, str], list[float]] = OrderedDict()
        for _, dist, metric, score in self.rows:
            buckets.setdefault((dist, metric), []).append(score)
        out = OrderedDict()
        for key, vals in buckets.items():
            mean = math.fsum(vals) / len(vals)
            var = math.fsum((v - mean) ** 2 for v in vals) / max(len(vals) - 1, 1)
            out[key] = (mean, math.sqrt(var))
        return out

    def scores(self, disturbance: str, metric: str) -> list[float]:
        return [s for _, d, m, s in self.rows if d == disturbance and m == metric]


def sensitivity_test(dataset, cfg: SensitivityConfig,
                     cache: FeatureCache | None = None) -> SensitivityResult:
    """Score (corrupted group, original group) for every group, disturbance and metric."""
    data = np.asarray(dataset)
    groups = split_groups(len(data), cfg.n_groups, cfg.group_size, cfg.seed)
    cache = cache if cache is not None else FeatureCache()
    rows = []
    for g, idx in enumerate(groups):
        original = data[idx]
        for d in cfg.disturbances:
            seeded = DisturbanceSpec(d.kind, d.alpha, _derive_seed(cfg.seed, g, d.seed),
                                     d.patch_grid, d.alpha_swap)
            corrupted = seeded.apply_set(original)
            for spec in cfg.specs:
                rows.append((g, d.label, spec.name, evaluate(spec, original, corrupted, cache).score))
    return SensitivityResult(rows, cfg.config_hash)


def write_sensitivity(result: SensitivityResult, path) -> None:
    write_csv(path, ("group", "disturbance", "metric", "score"), result.rows,
              comment=f"config_hash: {result.config_hash}")


def write_sensitivity_summary(result: SensitivityResult, path) -> None:
    rows = [(d, m, mean, std) for (d, m), (mean, std) in result.summary().items()]
    write_csv(path, ("disturbance", "metric", "mean", "std"), rows,
              comment=f"config_hash: {result.config_hash}")


# ---------------------------------------------------------------------------
# consistency


def monotone_verdict(scores: Sequence[float]) -> bool:
    """Non-decreasing along the ladder and strictly increasing at least once."""
    steps = [b - a for a, b in zip(scores, scores[1:])]
    return all(s >= 0 for s in steps) and any(s > 0 for s in steps)


@dataclass
class ConsistencyResult:
    kind: str
    ladder: list[float]
    scores: "OrderedDict[str, list[float]]"  # metric -> score per level
    config_hash: str

    @property
    def verdicts(self) -> dict[str, bool]:
        return {m: monotone_verdict(s) for m, s in self.scores.items()}


def consistency_test(dataset, kind: str, ladder: Sequence[float], specs: Sequence[MetricSpec],
                     group_size: int, seed: int = 0, patch_grid: int = 4,
                     alpha_swap: float = 0.25,
                     cache: FeatureCache | None = None) -> ConsistencyResult:
    """Score one seeded sample of ``group_size`` images against itself corrupted at
    each ladder level. The same tile draws and noise streams are reused across
    levels, so each level extends the previous one."""
    if kind not in KINDS:
        raise InputError(f"unknown disturbance {kind!r}; choose from {KINDS}")
    ladder = [float(a) for a in ladder]
    if len(ladder) < 2:
        raise InputError("consistency ladder needs at least 2 levels")
    if any(b <= a for a, b in zip(ladder, ladder[1:])):
        raise InputError(f"ladder must be strictly increasing, got {ladder}")
    if not specs:
        raise InputError("consistency test needs at least one metric")
    data = np.asarray(dataset)
    idx = split_groups(len(data), 1, group_size, seed)[0]
    original = data[idx]
    cache = cache if cache is not None else FeatureCache()
    dseed = _derive_seed(seed, 0xC0)
    scores: OrderedDict[str, list[float]] = OrderedDict((s.name, []) for s in specs)
    for alpha in ladder:
        corrupted = DisturbanceSpec(kind, alpha, dseed, patch_grid, alpha_swap).apply_set(original)
        for spec in specs:
            scores[spec.name].append(evaluate(spec, original, corrupted, cache).score)
    text = (f"consistency;kind={kind};ladder={ladder!r};k={group_size};seed={seed};"
            f"grid={patch_grid};swap={alpha_swap!r}|"
            + "|".join(f"metric[{s.canonical()}]" for s in specs))
    return ConsistencyResult(kind, ladder, scores, _hash(text))


def write_consistency(result: ConsistencyResult, path) -> None:
    verdicts = result.verdicts
    rows = [(level, metric, vals[i], str(verdicts[metric]).lower())
            for metric, vals in result.scores.items() for i, level in enumerate(result.ladder)]
    write_csv(path, ("level", "metric", "score", "verdict"), rows,
              comment=f"config_hash: {result.config_hash}")


# ---------------------------------------------------------------------------
# correlation and ranking


def pearson(x: Sequence[float], y: Sequence[float]) -> float | None:
    """Pearson r, or None when either series has zero variance."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise InputError("pearson needs two 1-D series of equal length")
    if len(x) < 3:
        raise InputError(f"pearson needs at least 3 measurements, got {len(x)}")
    dx = x - math.fsum(x) / len(x)
    dy = y - math.fsum(y) / len(y)
    sxx, syy = math.fsum(dx * dx), math.fsum(dy * dy)
    if sxx == 0.0 or syy == 0.0:
        return None
    r = math.fsum(dx * dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


@dataclass
class CorrelationMatrix:
    names: list[str]
    r: np.ndarray  # NaN where undefined
    undefined: list[tuple[str, str]]


def pearson_matrix(table: dict[str, Sequence[float]]) -> CorrelationMatrix:
    names = list(table)
    n = len(names)
    r = np.full((n, n), np.nan)
    undefined = []
    for i in range(n):
        for j in range(i, n):
            value = pearson(table[names[i]], table[names[j]])
            if value is None:
                undefined.append((names[i], names[j]))
                continue
            r[i, j] = r[j, i] = 1.0 if i == j else value
    return CorrelationMatrix(names, r, undefined)


@dataclass
class RankingRecord:
    model: str
    scores: dict[str, float] = field(default_factory=dict)
    human_error: float | None = None

    def __post_init__(self):
        if self.human_error is not None and not 0.0 <= self.human_error <= 1.0:
            raise InputError(f"human_error for {self.model} must lie in [0, 1], "
                             f"got {self.human_error}")


def read_ranking_csv(path) -> list[RankingRecord]:
    """Long format ``model,metric,score,human_error``; human_error may be blank."""
    records: OrderedDict[str, RankingRecord] = OrderedDict()
    with open(path, newline="") as fh:
        reader = csv.DictReader(ln for ln in fh if not ln.startswith("#"))
        missing = {"model", "metric", "score"} - set(reader.fieldnames or ())
        if missing:
            raise InputError(f"ranking CSV lacks columns {sorted(missing)}")
        for line, row in enumerate(reader, start=2):
            try:
                score = float(row["score"])
                raw_err = (row.get("human_error") or "").strip()
                err = float(raw_err) if raw_err else None
            except ValueError as exc:
                raise InputError(f"{path}:{line}: {exc}") from exc
            name = row["model"].strip()
            rec = records.setdefault(name, RankingRecord(name))
            rec.scores[row["metric"].strip()] = score
            if err is not None:
                if rec.human_error is not None and rec.human_error != err:
                    raise InputError(f"conflicting human_error values for {name}")
                rec.human_error = err
                rec.__post_init__()
    return list(records.values())


def rank_order(scores: dict[str, float]) -> list[str]:
    """Models from best (lowest) to worst; ties broken by name."""
    return sorted(scores, key=lambda m: (scores[m], m))


@dataclass
class RankingResult:
    metrics: "OrderedDict[str, dict]"
    human_order: list[str] | None
    disagreements: list[tuple[str, str]]

    def to_dict(self) -> dict:
        return {"metrics": self.metrics, "human_order": self.human_order,
                "disagreements": [list(p) for p in self.disagreements],
                "orders_agree": not self.disagreements}


def model_ranking(records: Sequence[RankingRecord]) -> RankingResult:
    """Per metric: best-to-worst order, Pearson r against human error, and
    whether the order matches the human one. Metric pairs whose orders differ
    are listed in ``disagreements``."""
    if len(records) < 3:
        raise InputError(f"model ranking needs at least 3 models, got {len(records)}")
    names = [r.model for r in records]
    metric_names: list[str] = []
    for r in records:
        metric_names += [m for m in r.scores if m not in metric_names]
    human = None
    if all(r.human_error is not None for r in records):
        human = {r.model: r.human_error for r in records}
    metrics: OrderedDict[str, dict] = OrderedDict()
    for metric in metric_names:
        absent = [r.model for r in records if metric not in r.scores]
        if absent:
            raise InputError(f"metric {metric} has no score for {absent}")
        scores = {r.model: r.scores[metric] for r in records}
        order = rank_order(scores)
        entry = {"scores": scores, "order": order, "pearson_r": None,
                 "r_defined": False, "matches_human": None}
        if human is not None:
            r = pearson([scores[m] for m in names], [human[m] for m in names])
            entry.update(pearson_r=r, r_defined=r is not None,
                         matches_human=order == rank_order(human))
        metrics[metric] = entry
    disagreements = [(a, b) for i, a in enumerate(metric_names) for b in metric_names[i + 1:]
                     if metrics[a]["order"] != metrics[b]["order"]]
    return RankingResult(metrics, rank_order(human) if human else None, disagreements)


def write_ranking(result: RankingResult, path, config_hash: str) -> None:
    doc = {"config_hash": config_hash, **result.to_dict()}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
