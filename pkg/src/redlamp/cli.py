"""Command-line front end: train, score, evaluate, contaminate, augment-preview, export-embeddings."""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .augment import ALL_KINDS, ANOMALY_KINDS, AugmentConfig, Kind, augment_instance, build_augmented_set, substream
from .data import CsvSchema, DataError, LabeledSeries, choose_stride, load_csv, load_ucr, minmax_normalize, window
from .evaluation import ContaminationSpec, EvalReport, EvalUsageError, aggregate, contaminate, evaluate, label_ranges
from .nn import ShapeError, UsageError, load_checkpoint, save_checkpoint
from .score import forward_windows, read_score_csv, score_series
from .train import TrainConfig, fit

log = logging.getLogger("redlamp")

OUTPUT_ENV = "REDLAMP_OUTPUT_DIR"
ABLATIONS = ("no-bc", "no-am", "no-ce", "no-mse", "no-faa", "binary")


class ConfigError(ValueError):
    pass


def _sec(name: str, default, **kw):
    return field(default=default, metadata={"section": name}, **kw)


@dataclass
class RunConfig:
    """Merged settings; defaults follow the published hyperparameter table where one exists."""

    data: str = _sec("data", "")  # ucr:<path> or csv:<path>
    features: str = _sec("data", "")  # comma-separated CSV columns; empty means all but the label
    label: str = _sec("data", "")
    train_end: int = _sec("data", -1)  # -1 keeps the file's own convention
    window_size: int = _sec("data", 100)
    train_stride: int = _sec("data", 0)  # 0 picks 1, 10 or 100 automatically
    normalize_train_only: bool = _sec("data", False)

    kinds: str = _sec("augment", "all")
    noise_var: float = _sec("augment", 0.1)
    spike_min_amplitude: float = _sec("augment", 0.1)
    average_divisor: int = _sec("augment", 5)
    contextual_guard: float = _sec("augment", 0.05)

    loss_weight: float = _sec("train", 0.1)
    batch_size: int = _sec("train", 128)
    max_epochs: int = _sec("train", 100)
    lr: float = _sec("train", 1e-3)
    weight_decay: float = _sec("train", 0.01)
    patience: float = _sec("train", 10.0)
    p_n: float = _sec("train", 0.1)
    p_a: float = _sec("train", 0.01)
    val_fraction: float = _sec("train", 0.1)
    use_anomaly_mask: bool = _sec("train", True)
    binary_mode: bool = _sec("train", False)
    resample_each_epoch: bool = _sec("train", True)

    faa_threshold: float = _sec("score", 0.05)
    smoothing: bool = _sec("score", False)

    buffer: int = _sec("eval", -1)  # -1 means half the window
    max_buffer: int = _sec("eval", -1)
    ucr_margin: int = _sec("eval", 0)

    seed: int = _sec("run", 0)

    def kind_list(self) -> tuple[Kind, ...]:
        if self.kinds.strip().lower() == "all":
            return ALL_KINDS
        return tuple(sorted({Kind.NORMAL, *(Kind.parse(k) for k in self.kinds.split(",") if k.strip())}))

    def train_config(self) -> TrainConfig:
        aug = AugmentConfig(self.noise_var, self.spike_min_amplitude, self.average_divisor, self.contextual_guard)
        return TrainConfig(
            loss_weight=self.loss_weight, batch_size=self.batch_size, max_epochs=self.max_epochs, lr=self.lr,
            weight_decay=self.weight_decay, patience=self.patience, p_n=self.p_n, p_a=self.p_a, seed=self.seed,
            val_fraction=self.val_fraction, use_anomaly_mask=self.use_anomaly_mask, kinds=self.kind_list(),
            binary_mode=self.binary_mode, resample_each_epoch=self.resample_each_epoch, augment=aug,
        )

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        for f in fields(self):
            sec = f.metadata["section"]
            if not cp.has_section(sec):
                cp.add_section(sec)
            cp.set(sec, f.name, str(getattr(self, f.name)))
        lines = []
        for sec in cp.sections():
            lines.append(f"[{sec}]")
            lines += [f"{k} = {v}" for k, v in cp.items(sec)]
            lines.append("")
        return "\n".join(lines)


def _convert(f, raw: str):
    kind = f.type if isinstance(f.type, str) else f.type.__name__
    try:
        if kind == "bool":
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{f.name}: cannot read {raw!r} as {kind}") from None
    return raw.strip()


def load_config(path: str | None, overrides: list[str] = ()) -> RunConfig:
    """Defaults, then the config file, then ``key=value`` overrides."""
    by_name = {f.name: f for f in fields(RunConfig)}
    values = {}
    if path:
        cp = configparser.ConfigParser()
        if not cp.read(path):
            raise ConfigError(f"cannot read config file {path}")
        for sec in cp.sections():
            for key, raw in cp.items(sec):
                if key not in by_name:
                    raise ConfigError(f"{path}: unknown key {sec}.{key}")
                values[key] = _convert(by_name[key], raw)
    for item in overrides:
        key, sep, raw = item.partition("=")
        key = key.strip().split(".")[-1]
        if not sep or key not in by_name:
            raise ConfigError(f"bad override {item!r}; expected key=value with a known key")
        values[key] = _convert(by_name[key], raw)
    return RunConfig(**values)


def apply_ablations(cfg: RunConfig, ablations: list[str]) -> RunConfig:
    changes = {
        "no-bc": dict(p_n=0.0, p_a=0.0),
        "no-am": dict(use_anomaly_mask=False),
        "no-ce": dict(loss_weight=0.0),
        "no-mse": dict(loss_weight=1.0),
        "no-faa": dict(faa_threshold=1.0),
        "binary": dict(binary_mode=True),
    }
    for name in ablations:
        cfg = replace(cfg, **changes[name])
    return cfg


def load_series(spec: str, cfg: RunConfig) -> LabeledSeries:
    """Read ``ucr:<path>`` or ``csv:<path>`` (a bare path is dispatched on its suffix) and min-max it."""
    if not spec:
        raise ConfigError("no dataset given (use --data ucr:<path> or csv:<path>)")
    kind, sep, path = spec.partition(":")
    if not sep or kind not in ("ucr", "csv"):
        kind, path = ("csv" if spec.endswith(".csv") else "ucr"), spec
    if kind == "ucr":
        series = load_ucr(path)
    else:
        feats = [c.strip() for c in cfg.features.split(",") if c.strip()] or None
        series = load_csv(path, CsvSchema(feats, cfg.label or None, cfg.train_end if cfg.train_end >= 0 else None))
    if cfg.train_end >= 0 and kind == "ucr":
        series = replace(series, train_end=cfg.train_end)
    return minmax_normalize(series, cfg.normalize_train_only)


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUTPUT_ENV) or "redlamp-out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args) -> RunConfig:
    cfg = load_config(args.config, args.set or [])
    flags = {k: v for k, v in dict(data=args.data, seed=args.seed).items() if v is not None}
    cfg = replace(cfg, **flags)
    return apply_ablations(cfg, args.ablate or [])


def cmd_train(args) -> int:
    cfg = _config(args)
    if args.epochs is not None:
        cfg = replace(cfg, max_epochs=args.epochs)
    if args.stride is not None:
        cfg = replace(cfg, train_stride=args.stride)
    series = load_series(cfg.data, cfg)
    train_values = series.train_values
    if train_values.shape[1] < cfg.window_size:
        raise DataError(f"training part has {train_values.shape[1]} steps, fewer than the window {cfg.window_size}")
    stride = cfg.train_stride or choose_stride(train_values.shape[1], cfg.window_size)
    ds = window(train_values, cfg.window_size, stride)
    out = _out_dir(args)
    (out / "config.snapshot").write_text(cfg.to_ini())
    log.info("training on %d windows (stride %d) from %s", len(ds), stride, series.name)
    result = fit(ds, cfg.train_config())
    save_checkpoint(result.model, out / "model.ckpt")
    with open(out / "train.log", "w") as fh:
        for rec in result.log:
            fh.write(json.dumps(asdict(rec)) + "\n")
    print(f"best epoch {result.best_epoch} of {len(result.log)}; wrote {out / 'model.ckpt'}")
    return 0


def _score_region(series: LabeledSeries, which: str):
    if which == "all" or series.train_end == series.T:
        return series.values, series.labels
    return series.test_values, series.test_labels


def write_svg(path: Path, a: np.ndarray, labels: np.ndarray | None, width: int = 1200, height: int = 300) -> None:
    """Single-pane line plot of the score with labeled ranges shaded."""
    T = len(a)
    lo, hi = float(np.min(a)), float(np.max(a))
    span = hi - lo or 1.0
    xs = np.linspace(0, width, T) if T > 1 else np.zeros(1)
    ys = height - (np.asarray(a) - lo) / span * (height - 10) - 5
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f"<title>{escape('anomaly score a(t)')}</title>",
             f'<rect width="{width}" height="{height}" fill="white"/>']
    if labels is not None:
        scale = width / max(T - 1, 1)
        for s, e in label_ranges(labels):
            parts.append(f'<rect class="anomaly" x="{s * scale:.2f}" y="0" width="{max((e - s) * scale, 1):.2f}" '
                         f'height="{height}" fill="#f4a6a6" fill-opacity="0.5"/>')
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
    parts.append(f'<polyline fill="none" stroke="#1f4e9c" stroke-width="1" points="{pts}"/>')
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")


def cmd_score(args) -> int:
    cfg = _config(args)
    if args.threshold is not None:
        cfg = replace(cfg, faa_threshold=args.threshold)
    if args.smooth:
        cfg = replace(cfg, smoothing=True)
    model = load_checkpoint(args.checkpoint)
    series = load_series(cfg.data, cfg)
    if series.d != model.config.input_features:
        raise ConfigError(f"checkpoint expects {model.config.input_features} features, series has {series.d}")
    values, labels = _score_region(series, args.region)
    trace = score_series(model, values, model.config.window, cfg.faa_threshold, cfg.smoothing,
                         stride=args.test_stride)
    out = _out_dir(args)
    trace.write_csv(out / "scores.csv")
    trace.write_faa_report(out / "faa.json")
    write_svg(out / "scores.svg", trace.a, labels)
    (out / "config.snapshot").write_text(cfg.to_ini())
    zeroed = ", ".join(trace.faa_report()["zeroed"]) or "none"
    print(f"scored {trace.T} steps; FAA zeroed: {zeroed}")
    return 0


def _evaluate_pair(series_spec: str, scores_path: str, cfg: RunConfig, window_size: int) -> EvalReport:
    series = load_series(series_spec, cfg)
    a = read_score_csv(scores_path)
    if series.labels is None:
        raise EvalUsageError(f"{series_spec}: no anomaly labels")
    if len(a) == series.T:
        labels = series.labels
    elif len(a) == series.T - series.train_end:
        labels = series.test_labels
    else:
        raise EvalUsageError(f"{scores_path}: {len(a)} scores match neither the series ({series.T}) "
                             f"nor its test part ({series.T - series.train_end})")
    return evaluate(a, labels, window_size, None if cfg.buffer < 0 else cfg.buffer,
                    None if cfg.max_buffer < 0 else cfg.max_buffer, cfg.ucr_margin)


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    if args.manifest:
        with open(args.manifest, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows or not {"series", "scores"} <= set(rows[0]):
            raise ConfigError(f"{args.manifest}: need columns 'series' and 'scores'")
        base = Path(args.manifest).parent

        def resolve(spec: str) -> str:
            kind, sep, path = spec.partition(":")
            if not (sep and kind in ("ucr", "csv")):
                kind, path = "", spec
            path = path if Path(path).is_absolute() else str(base / path)
            return f"{kind}:{path}" if kind else path

        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            reports = list(pool.map(
                lambda r: _evaluate_pair(resolve(r["series"]), resolve(r["scores"]), cfg, cfg.window_size), rows))
        report = aggregate(reports, [r["series"] for r in rows])
    else:
        if not args.scores:
            raise ConfigError("evaluate needs --scores (or --manifest)")
        report = _evaluate_pair(cfg.data, args.scores, cfg, cfg.window_size)
    report.config = {**report.config, "data": cfg.data, "manifest": args.manifest or ""}
    (out / "report.json").write_text(report.to_json())
    print(json.dumps(report.metrics(), indent=2))
    return 0


def cmd_contaminate(args) -> int:
    cfg = _config(args)
    series = load_series(cfg.data, cfg)
    stride = cfg.train_stride or choose_stride(series.train_values.shape[1], cfg.window_size)
    ds = window(series.train_values, cfg.window_size, stride)
    spec = ContaminationSpec(args.ratio, ANOMALY_KINDS, cfg.seed)
    out_ds, picked = contaminate(ds, spec, cfg.train_config().augment)
    out = _out_dir(args)
    np.savez(out / "contaminated.npz", windows=out_ds.windows, end_indices=out_ds.end_indices,
             injected=out_ds.injected, kinds=picked)
    summary = dict(ratio=args.ratio, seed=cfg.seed, normal_windows=len(ds), injected=int(len(picked)),
                   per_kind={k.title: int(np.sum(picked == int(k))) for k in ANOMALY_KINDS})
    (out / "contamination.json").write_text(json.dumps(summary, indent=2))
    (out / "config.snapshot").write_text(cfg.to_ini())
    print(f"appended {len(picked)} anomalous windows to {len(ds)}")
    return 0


def cmd_augment_preview(args) -> int:
    cfg = _config(args)
    series = load_series(cfg.data, cfg)
    ds = window(series.train_values, cfg.window_size, max(cfg.window_size // 2, 1))
    if not 0 <= args.index < len(ds):
        raise ConfigError(f"--index {args.index} outside [0, {len(ds)})")
    src = ds.windows[args.index]
    out = _out_dir(args)
    aug_cfg = cfg.train_config().augment
    for kind in ALL_KINDS:
        inst = augment_instance(src, kind, substream(cfg.seed, args.index, int(kind)), ds, args.index,
                                int(ds.end_indices[args.index]), config=aug_cfg)
        path = out / f"preview_{int(kind):02d}_{kind.title}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["# kind", kind.title])
            w.writerow(["row", "feature", *range(src.shape[1])])
            for f in range(src.shape[0]):
                w.writerow(["original", f, *(repr(float(v)) for v in src[f])])
                w.writerow(["augmented", f, *(repr(float(v)) for v in inst.instance[f])])
                w.writerow(["mask", f, *inst.mask[f].tolist()])
    (out / "config.snapshot").write_text(cfg.to_ini())
    print(f"wrote {len(ALL_KINDS)} previews to {out}")
    return 0


def cmd_export_embeddings(args) -> int:
    cfg = _config(args)
    model = load_checkpoint(args.checkpoint)
    series = load_series(cfg.data, cfg)
    if series.d != model.config.input_features:
        raise ConfigError(f"checkpoint expects {model.config.input_features} features, series has {series.d}")
    size = model.config.window
    splits = [s.strip() for s in args.splits.split(",") if s.strip()]
    rows = []  # (t, kind order, split, kind name, windows)
    for split in splits:
        if split == "train":
            ds = window(series.train_values, size, 1)
            _, _, emb = forward_windows(model, ds.windows)
            rows += [(int(t), 0, "train", Kind.NORMAL.name, e) for t, e in zip(ds.end_indices, emb)]
        elif split == "test":
            ds = window(series.test_values, size, 1)
            _, _, emb = forward_windows(model, ds.windows)
            off = series.train_end
            rows += [(int(t) + off, 0, "test", "UNLABELED", e) for t, e in zip(ds.end_indices, emb)]
        elif split == "augmented":
            stride = cfg.train_stride or choose_stride(series.train_values.shape[1], size)
            ds = window(series.train_values, size, stride)
            aug = build_augmented_set(ds, cfg.kind_list(), cfg.seed, cfg.train_config().augment)
            _, _, emb = forward_windows(model, aug.instances)
            rows += [(int(t), int(k), "augmented", Kind(int(k)).name, e)
                     for t, k, e in zip(aug.source_end_index, aug.kinds, emb)]
        else:
            raise ConfigError(f"unknown split {split!r}; use train, test or augmented")
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    out = _out_dir(args)
    dim = model.config.embedding_dim
    with open(out / "embeddings.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "split", "kind", *(f"e{i}" for i in range(dim))])
        for t, _, split, kind, e in rows:
            w.writerow([t, split, kind, *(repr(float(v)) for v in e)])
    (out / "config.snapshot").write_text(cfg.to_ini())
    print(f"wrote {len(rows)} embeddings to {out / 'embeddings.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="redlamp", description="Pseudo-anomaly time-series anomaly detector")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="INI file with [data] [augment] [train] [score] [eval] [run] sections")
        sp.add_argument("--data", help="ucr:<path> or csv:<path>")
        sp.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./redlamp-out)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
        sp.add_argument("--ablate", action="append", choices=ABLATIONS)
        return sp

    sp = common(sub.add_parser("train", help="train a model on the training part of a series"))
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--stride", type=int, help="training window stride (0 = automatic)")
    sp.set_defaults(func=cmd_train)

    sp = common(sub.add_parser("score", help="score a series with a trained checkpoint"))
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--threshold", type=float, help="FAA threshold theta")
    sp.add_argument("--smooth", action="store_true", help="moving average of half the window")
    sp.add_argument("--region", choices=("test", "all"), default="test")
    sp.add_argument("--test-stride", type=int, default=1, help="scoring window stride; steps reuse the latest window")
    sp.set_defaults(func=cmd_score)

    sp = common(sub.add_parser("evaluate", help="metrics for a score trace against labels"))
    sp.add_argument("--scores")
    sp.add_argument("--manifest", help="CSV with columns series,scores")
    sp.add_argument("--workers", type=int, default=4)
    sp.set_defaults(func=cmd_evaluate)

    sp = common(sub.add_parser("contaminate", help="append pseudo-anomalies to the training windows"))
    sp.add_argument("--ratio", type=float, required=True, help="percent of injected over normal windows")
    sp.set_defaults(func=cmd_contaminate)

    sp = common(sub.add_parser("augment-preview", help="one example of every augmentation kind"))
    sp.add_argument("--index", type=int, default=0, help="training window to augment")
    sp.set_defaults(func=cmd_augment_preview)

    sp = common(sub.add_parser("export-embeddings", help="write encoder embeddings as CSV"))
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--splits", default="train,test,augmented")
    sp.set_defaults(func=cmd_export_embeddings)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, ShapeError, UsageError, EvalUsageError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
