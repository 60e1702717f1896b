"""Command-line interface: ``fdd <command> ...``.

Exit codes: 0 success, 2 usage or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import math
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from .dae import (DaeConfig, NoiseSpec, TrainingConfig, build_dae, load_checkpoint,
                  preprocess, save_checkpoint, train_dae, write_history)
from .disturb import (KINDS, image_seed, parse_disturbance, standard_disturbances,
                      standard_ladder)
from .errors import ConfigError, FddError, InputError
from .experiments import (SensitivityConfig, consistency_test, model_ranking, pearson_matrix,
                          read_ranking_csv, sensitivity_test, write_consistency, write_ranking,
                          write_sensitivity, write_sensitivity_summary)
from .io import list_images, load_images, load_json_config, read_csv, write_csv, write_images
from .pipeline import METRIC_CRITIC, FeatureCache, MetricSpec, evaluate, write_reports

_ARCH_KEYS = {"input_shape", "encoder_channels", "latent_dim"}
_TRAIN_KEYS = {f.name for f in fields(TrainingConfig)} - {"seed"}
_NOISE_KEYS = {"sigma"}
CONFIG_KEYS = _ARCH_KEYS | _TRAIN_KEYS | _NOISE_KEYS


def _images_from(source: str, config: DaeConfig | None, strict: bool = False) -> np.ndarray:
    """A directory of PNGs, or a ``generator:key=value,...`` corpus spec."""
    if Path(source).is_dir():
        return np.stack(load_images(source, config, strict))
    if Path(source).exists():
        raise InputError(f"{source} is not a directory")
    if source.partition(":")[0] not in corpus_mod.GENERATORS:
        raise InputError(f"{source} is neither a directory nor a corpus spec "
                         f"({'|'.join(corpus_mod.GENERATORS)}:key=value,...)")
    raw = corpus_mod.generate(corpus_mod.parse_corpus_spec(source))
    images = corpus_mod.as_images(raw)
    if config is not None and images.shape[1:] != config.input_shape:
        images = np.stack([preprocess(r[..., None], config) for r in raw])
    return images


def _metric_specs(names: str, encoder, seed: int, match_n: bool = False) -> list[MetricSpec]:
    out = []
    for name in filter(None, (n.strip().lower() for n in names.split(","))):
        if name not in METRIC_CRITIC:
            raise ConfigError(f"unknown metric {name!r}; choose from {sorted(METRIC_CRITIC)}")
        out.append(MetricSpec.named(name, encoder, seed=seed, match_n=match_n))
    if not out:
        raise ConfigError("no metrics given")
    return out


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from exc


def _emit_rows(header, rows) -> None:
    print(",".join(header))
    for row in rows:
        print(",".join(f"{v:.6f}" if isinstance(v, float) else str(v) for v in row))


# ---------------------------------------------------------------------------
# commands


def cmd_make_corpus(args) -> int:
    spec = corpus_mod.CorpusSpec(generator=args.generator, count=args.count, size=args.size,
                                 seed=args.seed, defect=args.defect, defect_rate=args.defect_rate)
    paths = corpus_mod.write_corpus(spec, args.out)
    if args.sheet:
        from .plotting import plot_images
        plot_images(corpus_mod.as_images(corpus_mod.generate(
            corpus_mod.CorpusSpec(**{**spec.__dict__, "count": min(spec.count, 32)}))), args.sheet)
    print(f"wrote {len(paths)} images to {args.out}")
    return 0


def cmd_train_dae(args) -> int:
    options = load_json_config(args.config, CONFIG_KEYS) if args.config else {}
    seed = args.seed
    if args.resume:
        model = load_checkpoint(args.resume)
        clash = [k for k in _ARCH_KEYS & set(options)
                 if tuple(np.atleast_1d(options[k])) != tuple(np.atleast_1d(
                     getattr(model.config, k)))]
        if clash:
            raise ConfigError(f"config keys {clash} disagree with the checkpoint being resumed")
    else:
        arch = {k: options[k] for k in _ARCH_KEYS & set(options)}
        try:
            config = DaeConfig(**{**DaeConfig.desk().__dict__, **arch, "seed": seed})
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        model = build_dae(config)
    train = {k: options[k] for k in _TRAIN_KEYS & set(options)}
    tc = TrainingConfig(**{**TrainingConfig.desk().__dict__, **train, "seed": seed})
    noise = NoiseSpec(options.get("sigma", 0.1), seed=seed)
    images = _images_from(args.corpus, model.config, args.strict)
    n_train = len(images) - int(round(tc.val_fraction * len(images)))
    start = math.ceil(model.params.step / max(1, math.ceil(n_train / tc.batch_size)))

    def progress(epoch, loss):
        if args.verbose:
            print(f"epoch {epoch} loss {loss:.6f}", file=sys.stderr)

    _, history = train_dae(model, list(images), noise, tc, progress, start_epoch=start)
    save_checkpoint(model, args.out)
    hist_path = args.history or str(Path(args.out).with_suffix(".loss.csv"))
    write_history(history, hist_path)
    if args.plot:
        from .plotting import plot_loss
        plot_loss(history, args.plot)
    best = min(history) if history else float("nan")
    print(f"trained {len(history)} epochs, best loss {best:.6f}, checkpoint {args.out}")
    return 0


def cmd_score(args) -> int:
    encoder = load_checkpoint(args.encoder)
    spec = MetricSpec.named(args.metric, encoder, seed=args.seed, match_n=args.match_n)
    real = load_images(args.real, encoder.config, args.strict)
    gen = load_images(args.gen, encoder.config, args.strict)
    report = evaluate(spec, real, gen)
    if args.report:
        write_reports([report], args.report)
    print(report.to_json() if args.json else f"{report.score:.6f}")
    return 0


def cmd_disturb(args) -> int:
    dist = parse_disturbance(args.kind)
    dist = replace(dist, seed=args.seed)
    names = [p.name for p in list_images(args.input)]
    images = load_images(args.input, None, strict=True)
    out = [dist.apply(img, image_seed(dist.seed, i)) for i, img in enumerate(images)]
    write_images(out, names, args.out)
    print(f"applied {dist.label} to {len(out)} images -> {args.out}")
    return 0


def cmd_sensitivity(args) -> int:
    encoder = load_checkpoint(args.encoder)
    data = _images_from(args.data, encoder.config, args.strict)
    if args.disturb:
        dists = [parse_disturbance(d) for d in args.disturb]
    else:
        dists = standard_disturbances(grid=args.grid)
    cfg = SensitivityConfig(args.groups, args.k, dists,
                            _metric_specs(args.metrics, encoder, args.seed), args.seed)
    result = sensitivity_test(data, cfg, FeatureCache())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_sensitivity(result, out / "sensitivity.csv")
    write_sensitivity_summary(result, out / "sensitivity_summary.csv")
    if not args.no_plot:
        from .plotting import plot_sensitivity
        plot_sensitivity(result, out / "sensitivity.png")
    _emit_rows(("disturbance", "metric", "mean", "std"),
               [(d, m, mean, std) for (d, m), (mean, std) in result.summary().items()])
    return 0


def cmd_consistency(args) -> int:
    encoder = load_checkpoint(args.encoder)
    data = _images_from(args.data, encoder.config, args.strict)
    ladder = _floats(args.ladder) if args.ladder else standard_ladder(args.kind)
    result = consistency_test(data, args.kind, ladder,
                              _metric_specs(args.metrics, encoder, args.seed), args.k,
                              seed=args.seed, patch_grid=args.grid, cache=FeatureCache())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_consistency(result, out / "consistency.csv")
    if not args.no_plot:
        from .plotting import plot_consistency
        plot_consistency(result, out / "consistency.png")
    verdicts = result.verdicts
    _emit_rows(("level", "metric", "score", "verdict"),
               [(lvl, m, s[i], str(verdicts[m]).lower())
                for m, s in result.scores.items() for i, lvl in enumerate(result.ladder)])
    return 0


def cmd_rank(args) -> int:
    records = read_ranking_csv(args.scores)
    result = model_ranking(records)
    digest = hashlib.sha256(Path(args.scores).read_bytes()).hexdigest()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_ranking(result, out / "ranking.json", digest)
        if not args.no_plot:
            from .plotting import plot_ranking
            plot_ranking(result, out / "ranking.png")
    for metric, entry in result.metrics.items():
        line = f"{metric} order: [{', '.join(entry['order'])}]"
        if entry["r_defined"]:
            line += f"  pearson_r={entry['pearson_r']:.6f}"
        elif result.human_order is not None:
            line += "  pearson_r=undefined"
        print(line)
    if result.human_order is not None:
        print(f"human order: [{', '.join(result.human_order)}]")
    for a, b in result.disagreements:
        print(f"disagreement: {a} vs {b}")
    if not result.disagreements:
        print("all metric orders agree")
    return 0


def cmd_correlate(args) -> int:
    table: dict[str, list[float]] = {}
    rows = read_csv(args.sensitivity)
    keys = sorted({(r["group"], r["disturbance"]) for r in rows},
                  key=lambda k: (int(k[0]), k[1]))
    lookup = {(r["group"], r["disturbance"], r["metric"]): float(r["score"]) for r in rows}
    for metric in dict.fromkeys(r["metric"] for r in rows):
        table[metric] = [lookup[(g, d, metric)] for g, d in keys]
    matrix = pearson_matrix(table)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "correlation.csv", ["metric", *matrix.names],
              [[n, *map(float, matrix.r[i])] for i, n in enumerate(matrix.names)])
    if not args.no_plot:
        from .plotting import plot_correlation
        plot_correlation(matrix, out / "correlation.png")
    _emit_rows(["metric", *matrix.names], [[n, *map(float, matrix.r[i])]
                                           for i, n in enumerate(matrix.names)])
    for a, b in matrix.undefined:
        print(f"undefined: {a} vs {b} (zero variance)")
    return 0


def cmd_gradcam(args) -> int:
    from .gradcam import gradcam, write_grid
    encoder = load_checkpoint(args.encoder)
    names = [p.stem for p in list_images(args.images)]
    images = load_images(args.images, encoder.config, strict=True)
    if args.limit:
        images, names = images[:args.limit], names[:args.limit]
    maps = gradcam(encoder, np.stack(images), args.layer)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    from .plotting import plot_attention
    for name, img, amap in zip(names, images, maps):
        write_grid(amap, out / f"{name}_grid.csv")
        if not args.no_plot:
            plot_attention(img, amap.upsampled, out / f"{name}_attention.png")
    print(f"wrote {len(maps)} attention maps ({maps[0].layer}, grid "
          f"{maps[0].raw.shape[0]}x{maps[0].raw.shape[1]}) to {out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fdd", description="Denoised-feature distances for image sets.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True, strict=True):
        if seed:
            sp.add_argument("--seed", type=int, default=0)
        if strict:
            sp.add_argument("--strict", action="store_true",
                            help="abort on undecodable images instead of skipping them")

    s = sub.add_parser("make-corpus", help="render a synthetic line-art corpus")
    s.add_argument("generator", choices=corpus_mod.GENERATORS)
    s.add_argument("--count", type=int, default=500)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--defect", choices=corpus_mod.BIKE_DEFECTS, default="none")
    s.add_argument("--defect-rate", type=float, default=0.0)
    s.add_argument("--out", required=True)
    s.add_argument("--sheet", help="also write a contact sheet PNG of the first images")
    common(s, strict=False)
    s.set_defaults(func=cmd_make_corpus)

    s = sub.add_parser("train-dae", help="train a denoising autoencoder")
    s.add_argument("--corpus", required=True, help="PNG directory or generator:key=value,... spec")
    s.add_argument("--config", help=f"JSON object with keys from: {', '.join(sorted(CONFIG_KEYS))}")
    s.add_argument("--out", required=True)
    s.add_argument("--resume", help="checkpoint to continue training from")
    s.add_argument("--history", help="loss CSV path (default <out>.loss.csv)")
    s.add_argument("--plot", help="write a loss-curve PNG here")
    common(s)
    s.set_defaults(func=cmd_train_dae)

    s = sub.add_parser("score", help="distance between two image directories")
    s.add_argument("--metric", choices=sorted(METRIC_CRITIC), default="fdd")
    s.add_argument("--encoder", required=True)
    s.add_argument("--real", required=True)
    s.add_argument("--gen", required=True)
    s.add_argument("--json", action="store_true", help="print the full report as JSON")
    s.add_argument("--match-n", action="store_true",
                   help="subsample the larger set to the smaller size")
    s.add_argument("--report", help="write the report (.jsonl or .csv)")
    common(s)
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("disturb", help="corrupt every image in a directory")
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--kind", required=True,
                   help=f"kind[:alpha=..,grid=..,swap=..]; kinds: {', '.join(KINDS)}")
    common(s, strict=False)
    s.set_defaults(func=cmd_disturb)

    s = sub.add_parser("sensitivity", help="score fixed disturbances over seeded groups")
    s.add_argument("--data", required=True, help="PNG directory or corpus spec")
    s.add_argument("--encoder", required=True)
    s.add_argument("--groups", type=int, default=10)
    s.add_argument("--k", type=int, default=300)
    s.add_argument("--metrics", default="fdd")
    s.add_argument("--disturb", action="append",
                   help="disturbance spec; repeatable (default: the five standard levels)")
    s.add_argument("--grid", type=int, default=4)
    s.add_argument("--out", required=True)
    s.add_argument("--no-plot", action="store_true")
    common(s)
    s.set_defaults(func=cmd_sensitivity)

    s = sub.add_parser("consistency", help="score a ladder of increasing disturbance")
    s.add_argument("--data", required=True)
    s.add_argument("--encoder", required=True)
    s.add_argument("--kind", choices=KINDS, default="gaussian")
    s.add_argument("--ladder", help="comma-separated alphas (default: a per-kind ladder)")
    s.add_argument("--k", type=int, default=1000)
    s.add_argument("--metrics", default="fdd")
    s.add_argument("--grid", type=int, default=4)
    s.add_argument("--out", required=True)
    s.add_argument("--no-plot", action="store_true")
    common(s)
    s.set_defaults(func=cmd_consistency)

    s = sub.add_parser("rank", help="rank models from a score CSV and compare orders")
    s.add_argument("--scores", required=True, help="CSV with model,metric,score,human_error")
    s.add_argument("--out", help="directory for ranking.json and ranking.png")
    s.add_argument("--no-plot", action="store_true")
    common(s, strict=False)
    s.set_defaults(func=cmd_rank)

    s = sub.add_parser("correlate", help="pairwise Pearson r between metrics of a sensitivity run")
    s.add_argument("--sensitivity", required=True, help="sensitivity.csv")
    s.add_argument("--out", required=True)
    s.add_argument("--no-plot", action="store_true")
    s.set_defaults(func=cmd_correlate)

    s = sub.add_parser("gradcam", help="attention maps of the encoder")
    s.add_argument("--encoder", required=True)
    s.add_argument("--images", required=True)
    s.add_argument("--layer", help="encoder conv (default: the last one)")
    s.add_argument("--limit", type=int, default=0, help="use only the first N images")
    s.add_argument("--out", required=True)
    s.add_argument("--no-plot", action="store_true")
    common(s, strict=False)
    s.set_defaults(func=cmd_gradcam)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except FddError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
