"""``unrealnas <gen|search|retrain|analyze>``: batch entry points.

Every command resolves its parameters as defaults < ``--config`` JSON file <
command-line flags, writes the resolved set as a config echo next to its
outputs, and exits 0 on success, 2 on a usage or input error and 3 when
training diverges.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    class_count_ablation,
    difficulty_scores,
    distinguishability_study,
    plot_ablation,
    plot_accuracy_curves,
    plot_skip_dynamics,
    silhouette_score,
)
from .datagen import (
    IMAGE_SHAPE,
    DatasetError,
    LabelAssignment,
    UnrealDataset,
    build_real,
    build_rlgd,
    build_rlrd,
    build_rlrn,
    load_cifar_batches,
    load_dataset,
    load_digits_real,
    make_split,
    sample_real_images,
    save_dataset,
)
from .engine import DivergedError, SearchConfig, SearchTrace, TrainConfig, TrainReport, save_checkpoint, search, train_fixed
from .fractal import FractalError
from .rng import stream
from .searchspace import CellSpec, GenotypeError, build_supernet, load_genotype, random_genotype, save_genotype

log = logging.getLogger("unrealnas")

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED = 0, 2, 3
SEED_ENV = "UNREALNAS_SEED"
CONFIG_NAME = "config.json"

# Geometry presets for the search supernet: (channels, cells).
GEOMETRY = {"desk": (8, 4), "full": (16, 8)}


class UsageError(Exception):
    """Bad flags or inputs; mapped to exit code 2."""


@dataclass(frozen=True)
class Param:
    name: str
    type: type
    default: object = None
    help: str = ""
    positional: bool = False
    choices: tuple | None = None
    required: bool = False


def _ints(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    return [int(v) for v in str(text).split(",") if v.strip()]


def _names(text) -> list[str]:
    if isinstance(text, (list, tuple)):
        return [str(v) for v in text]
    return [str(text)]


TRAIN_PARAMS = [
    Param("channels", int, 8, "initial channels of the discrete network"),
    Param("cells", int, 4, "number of cells"),
    Param("batch_size", int, 64),
    Param("lr", float, 0.025, "initial SGD rate, cosine-decayed to 0"),
    Param("momentum", float, 0.9),
    Param("weight_decay", float, 3e-4),
    Param("grad_clip", float, 5.0),
]

SEARCH_PARAMS = [
    Param("warmup_epochs", int, 5),
    Param("search_epochs", int, 50),
    Param("batch_size", int, 64),
    Param("w_lr", float, 0.025),
    Param("w_momentum", float, 0.9),
    Param("w_weight_decay", float, None, "default: 0 on unreal data, 3e-4 on real"),
    Param("a_lr", float, 3e-4),
    Param("a_weight_decay", float, None, "default: 0 on unreal data, 1e-3 on real"),
    Param("grad_clip", float, 5.0),
    Param("order", str, "first", choices=("first", "second")),
]

COMMANDS: dict[str, list[Param]] = {
    "gen": [
        Param("kind", str, None, "dataset construction", positional=True, choices=("rlrd", "rlgd", "rlrn", "real")),
        Param("n", int, None, "samples (rlrn: default 2000; rlrd/real: default all of --source)"),
        Param("classes", int, 5000, "random label count d_rand"),
        Param("categories", int, 100, "rlgd: IFS categories"),
        Param("instances", int, 500, "rlgd: instances per category"),
        Param("source", str, None, "rlrd/real: sklearn:photos, sklearn:digits, a .npy array or CIFAR .bin files (comma separated)"),
        Param("out", str, None, "output path prefix (default data/<kind>)"),
    ],
    "search": [
        Param("dataset", str, None, "dataset path prefix", positional=True),
        Param("out", str, "runs/search"),
        Param("geometry", str, "desk", choices=tuple(GEOMETRY)),
        Param("channels", int, None, "override the geometry preset"),
        Param("cells", int, None, "override the geometry preset"),
        Param("steps", int, 4, "intermediate nodes per cell"),
        *SEARCH_PARAMS,
    ],
    "retrain": [
        Param("genotype", str, None, "genotype JSON", positional=True),
        Param("data", str, None, "dataset path prefix or sklearn:digits", required=True),
        Param("limit", int, None, "use only the first N samples"),
        Param("epochs", int, 10),
        Param("out", str, "runs/retrain"),
        *TRAIN_PARAMS,
    ],
    "analyze difficulty": [
        Param("reports", _names, None, "NAME=REPORT.csv pairs", positional=True),
        Param("tau", float, 0.99, "fraction of the plateau that counts as converged"),
        Param("window", int, 5, "epochs averaged for the plateau"),
        Param("num_classes", int, None, "chance floor is 2/num_classes when given"),
        Param("out", str, "runs/difficulty"),
    ],
    "analyze distinguish": [
        Param("unreal", str, None, "unreal dataset path prefix", required=True),
        Param("target", str, "sklearn:digits", "target dataset path prefix or sklearn:digits"),
        Param("target_limit", int, None, "use only the first N target samples"),
        Param("n_arch", int, 4, "random architectures to rank"),
        Param("probe_epoch", int, 5),
        Param("target_epochs", int, None, "default: probe_epoch"),
        Param("proxy_metric", str, "train_acc", choices=("train_acc", "val_acc")),
        Param("out", str, "runs/distinguish"),
        *TRAIN_PARAMS,
    ],
    "analyze ablate-classes": [
        Param("kind", str, "rlrn", choices=("rlrd", "rlgd", "rlrn")),
        Param("d_values", _ints, "2,10,100,1000", "comma-separated class counts"),
        Param("seeds", _ints, "0", "comma-separated seeds"),
        Param("n", int, 200, "rlrn/rlrd samples"),
        Param("categories", int, 10, "rlgd: IFS categories"),
        Param("instances", int, 20, "rlgd: instances per category"),
        Param("source", str, "sklearn:photos", "rlrd image source"),
        Param("target", str, "sklearn:digits"),
        Param("target_limit", int, None),
        Param("eval_epochs", int, 5),
        Param("supernet_channels", int, 8),
        Param("supernet_cells", int, 4),
        Param("out", str, "runs/ablate-classes"),
        Param("warmup_epochs", int, 5),
        Param("search_epochs", int, 20),
        Param("search_batch_size", int, 64),
        Param("order", str, "first", choices=("first", "second")),
        *TRAIN_PARAMS,
    ],
    "analyze skip-dynamics": [
        Param("traces", _names, None, "trace NDJSON files, optionally NAME=PATH", positional=True),
        Param("out", str, "runs/skip-dynamics"),
    ],
    "analyze silhouette": [
        Param("dataset", str, None, "dataset path prefix or sklearn:digits", positional=True),
        Param("sample_cap", int, 2000),
        Param("out", str, "runs/silhouette"),
    ],
}


# ------------------------------------------------------------------ config


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_params(parser: argparse.ArgumentParser, params: list[Param]) -> None:
    for p in params:
        kw = {"default": None, "help": p.help or None}
        if p.choices:
            kw["choices"] = p.choices
        if p.type is _names:
            if p.positional:
                parser.add_argument(p.name, nargs="*", **kw)
            else:
                parser.add_argument(_flag(p.name), nargs="+", **kw)
            continue
        kw["type"] = str if p.type is _ints else p.type
        if p.positional:
            parser.add_argument(p.name, nargs="?", **kw)
        else:
            parser.add_argument(_flag(p.name), dest=p.name, **kw)
    parser.add_argument("--seed", type=int, default=None, help=f"global seed (fallback: ${SEED_ENV}, then 0)")
    parser.add_argument("--config", default=None, help="JSON file of parameters; flags override it")


def _read_config_file(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"--config: no such file {path}")
    except json.JSONDecodeError as exc:
        raise UsageError(f"--config: {path} is not valid JSON ({exc})")
    if not isinstance(data, dict):
        raise UsageError(f"--config: {path} must hold a JSON object")
    return data


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    """Merge defaults, the config file and flags for ``command``."""
    params = COMMANDS[command]
    names = {p.name for p in params}
    cfg = {p.name: p.default for p in params}
    env_seed = os.environ.get(SEED_ENV)
    if env_seed is not None:
        try:
            cfg["seed"] = int(env_seed)
        except ValueError:
            raise UsageError(f"${SEED_ENV} must be an integer, got {env_seed!r}")
    else:
        cfg["seed"] = 0
    if args.config:
        file_cfg = _read_config_file(args.config)
        if file_cfg.get("command", command) != command:
            raise UsageError(f"--config was written for {file_cfg['command']!r}, not {command!r}")
        unknown = set(file_cfg) - names - {"seed", "command", "version"}
        if unknown:
            raise UsageError(f"--config: unknown keys {sorted(unknown)}")
        cfg.update({k: v for k, v in file_cfg.items() if k in names or k == "seed"})
    for name in [*names, "seed"]:
        v = getattr(args, name, None)
        if v is not None and v != []:
            cfg[name] = v
    for p in params:
        v = cfg[p.name]
        if v is None:
            if p.required or p.positional:
                raise UsageError(f"missing required {'argument' if p.positional else 'flag'} {p.name if p.positional else _flag(p.name)}")
            continue
        cfg[p.name] = _ints(v) if p.type is _ints else (_names(v) if p.type is _names else p.type(v))
    cfg["seed"] = int(cfg["seed"])
    return cfg


def echo_config(command: str, cfg: dict, directory) -> Path:
    """Write the resolved config where ``--config`` can read it back."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    path = d / CONFIG_NAME
    _write_json(path, {"command": command, "version": __version__, **cfg})
    return path


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_text(path, text: str) -> None:
    Path(path).write_text(text)


# ------------------------------------------------------------------- data


def _subset(ds: UnrealDataset, limit: int | None) -> UnrealDataset:
    if limit is None or limit >= ds.n:
        return ds
    if limit < 2:
        raise UsageError("--limit must be >= 2")
    if ds.kind == "REAL":
        return build_real(
            ds.images[:limit], ds.labels.labels[:limit], ds.num_classes,
            source=f"{ds.manifest['generator'].get('source')}[:{limit}]", norm_stats=ds.norm_stats,
        )
    la = LabelAssignment(ds.num_classes, ds.labels.labels[:limit], ds.labels.seed)
    return UnrealDataset(ds.kind, ds.images[:limit], la, {**ds.manifest, "n": limit})


def load_data(spec: str, limit: int | None = None) -> UnrealDataset:
    """A saved dataset prefix, or ``sklearn:digits`` for the bundled REAL set."""
    if spec == "sklearn:digits":
        return _subset(load_digits_real(), limit)
    try:
        return _subset(load_dataset(spec), limit)
    except FileNotFoundError as exc:
        raise UsageError(f"dataset {spec!r} not found ({exc.filename})")


def _source_images(source: str, n: int | None, seed: int) -> tuple[np.ndarray, np.ndarray | None, str]:
    """Images (and labels, when the source has them) for rlrd/real."""
    if source == "sklearn:photos":
        n = 2000 if n is None else n
        if n < 1:
            raise UsageError(f"--n must be >= 1, got {n}")
        return sample_real_images(n, seed), None, f"sklearn-photos:{n}:{seed}"
    if source == "sklearn:digits":
        ds = load_digits_real()
        return ds.images, ds.labels.labels, "sklearn-digits-upscaled"
    paths = [Path(p) for p in source.split(",")]
    for p in paths:
        if not p.exists():
            raise UsageError(f"--source: no such file {p}")
    if len(paths) == 1 and paths[0].suffix == ".npy":
        images = np.load(paths[0]).astype(np.float32)
        if images.ndim != 4 or images.shape[1:] != IMAGE_SHAPE:
            raise UsageError(f"--source: expected an (n, 32, 32, 3) array, got {images.shape}")
        return images, None, paths[0].name
    images, labels = load_cifar_batches(paths)
    return images, labels, ",".join(p.name for p in paths)


# --------------------------------------------------------------- commands


def cmd_gen(cfg: dict) -> int:
    kind = cfg["kind"]
    out = cfg["out"] or f"data/{kind}"
    if kind == "rlrn":
        ds = build_rlrn(2000 if cfg["n"] is None else cfg["n"], cfg["classes"], cfg["seed"])
    elif kind == "rlgd":
        ds = build_rlgd(cfg["categories"], cfg["instances"], cfg["classes"], cfg["seed"])
    else:
        if not cfg["source"]:
            raise UsageError(f"gen {kind} needs --source (sklearn:photos, sklearn:digits, .npy or CIFAR .bin)")
        images, labels, name = _source_images(cfg["source"], cfg["n"], cfg["seed"])
        if cfg["n"] is not None:
            images = images[: cfg["n"]]
            labels = None if labels is None else labels[: cfg["n"]]
        if kind == "rlrd":
            ds = build_rlrd(images, cfg["classes"], cfg["seed"], source=name)
        else:
            if labels is None:
                raise UsageError(f"--source {cfg['source']} has no labels; gen real needs a labelled source")
            ds = build_real(images, labels, int(labels.max()) + 1, source=name)
    written = save_dataset(ds, out)
    prefix = Path(out)
    _write_json(prefix.with_name(prefix.name + "." + CONFIG_NAME), {"command": "gen", "version": __version__, **cfg, "out": out})
    print(f"{ds.kind} n={ds.n} d_rand={ds.num_classes} sha256={written['checksum']['sha256']} -> {out}")
    return EXIT_OK


def _search_config(cfg: dict, kind: str) -> SearchConfig:
    keys = [p.name for p in SEARCH_PARAMS]
    overrides = {k: cfg[k] for k in keys if cfg.get(k) is not None}
    return SearchConfig.for_kind(kind, seed=cfg["seed"], **overrides)


def cmd_search(cfg: dict) -> int:
    ds = load_data(cfg["dataset"])
    scfg = _search_config(cfg, ds.kind)
    channels, cells = GEOMETRY[cfg["geometry"]]
    channels = cfg["channels"] or channels
    cells = cfg["cells"] or cells
    out = Path(cfg["out"])
    echo_config("search", cfg, out)
    net = build_supernet(CellSpec(steps=cfg["steps"]), channels=channels, cells=cells, num_classes=ds.num_classes, seed=cfg["seed"])
    try:
        genotype, trace = search(net, make_split(ds), scfg)
    except DivergedError as exc:
        if exc.partial is not None:
            exc.partial.write(out / "trace.ndjson")
        raise
    trace.write(out / "trace.ndjson")
    save_checkpoint(out / "checkpoint", net, scfg, {"geometry": {"channels": channels, "cells": cells, "steps": cfg["steps"]}})
    meta = {
        "dataset": {"kind": ds.kind, "n": ds.n, "d_rand": ds.num_classes, "sha256": _dataset_digest(ds)},
        "search": scfg.as_dict(),
        "geometry": {"channels": channels, "cells": cells, "steps": cfg["steps"]},
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    save_genotype(genotype, out / "genotype.json", meta)
    skips = trace.skip_counts[-1] if len(trace) else 0
    print(f"genotype -> {out / 'genotype.json'} (skip_connect in normal cell: {skips})")
    return EXIT_OK


def _dataset_digest(ds: UnrealDataset) -> str:
    import hashlib

    h = hashlib.sha256(ds.images.tobytes())
    h.update(ds.labels.labels.astype("<u4").tobytes())
    return h.hexdigest()


def _train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(**{p.name: cfg[p.name] for p in TRAIN_PARAMS}, seed=cfg["seed"])


def cmd_retrain(cfg: dict) -> int:
    try:
        genotype = load_genotype(cfg["genotype"])
    except FileNotFoundError:
        raise UsageError(f"genotype file {cfg['genotype']!r} not found")
    ds = load_data(cfg["data"], cfg["limit"])
    out = Path(cfg["out"])
    echo_config("retrain", cfg, out)
    try:
        report = train_fixed(genotype, ds, cfg["epochs"], _train_config(cfg), label=ds.kind)
    except DivergedError as exc:
        if exc.partial is not None:
            _write_text(out / "report.csv", exc.partial.to_csv())
        raise
    _write_text(out / "report.csv", report.to_csv())
    from .analysis import convergence_epoch

    summary = {
        "epochs": cfg["epochs"],
        "num_classes": ds.num_classes,
        "initial": report.initial,
        "final": report.final if report.epochs else None,
        "convergence_epoch": convergence_epoch(report) if len(report.epochs) >= 2 else None,
    }
    _write_json(out / "summary.json", summary)
    final = summary["final"] or report.initial
    print(f"train_acc={final['train_acc']:.4f} val_acc={final['val_acc']} -> {out / 'report.csv'}")
    return EXIT_OK


def _parse_named(items: list[str], what: str) -> dict[str, str]:
    out = {}
    for item in items:
        name, sep, path = item.partition("=")
        if not sep:
            name, path = Path(item).stem.split(".")[0], item
        if not Path(path).is_file():
            raise UsageError(f"{what} {path!r} not found")
        if name in out:
            raise UsageError(f"duplicate {what} name {name!r}")
        out[name] = path
    return out


def cmd_difficulty(cfg: dict) -> int:
    paths = _parse_named(cfg["reports"], "report")
    reports = {}
    for name, path in paths.items():
        try:
            reports[name] = TrainReport.from_csv(Path(path).read_text(), num_classes=cfg["num_classes"], label=name)
            if len(reports[name].train_acc) < 2:
                raise ValueError("need at least 2 epochs")
        except (KeyError, ValueError) as exc:
            raise UsageError(f"malformed report {path}: {exc}")
    out = Path(cfg["out"])
    echo_config("analyze difficulty", cfg, out)
    scores = difficulty_scores(reports, tau=cfg["tau"], window=cfg["window"])
    _write_json(out / "difficulty.json", {"tau": cfg["tau"], "scores": [s.as_dict() for s in scores]})
    plot_accuracy_curves(reports, out / "accuracy.svg")
    for s in scores:
        print(f"{s.kind}: {'not converged' if s.convergence_epoch is None else s.convergence_epoch}")
    return EXIT_OK


def _random_genotypes(n: int, seed: int):
    return [random_genotype(stream(seed, "distinguish-arch", i)) for i in range(n)]


def cmd_distinguish(cfg: dict) -> int:
    if cfg["n_arch"] < 2:
        raise UsageError("--n-arch must be >= 2")
    unreal = load_data(cfg["unreal"])
    target = load_data(cfg["target"], cfg["target_limit"])
    out = Path(cfg["out"])
    echo_config("analyze distinguish", cfg, out)
    study = distinguishability_study(
        _random_genotypes(cfg["n_arch"], cfg["seed"]), unreal, target, cfg["probe_epoch"],
        _train_config(cfg), cfg["target_epochs"], cfg["proxy_metric"],
    )
    summary = study.summary()
    summary["seeds"] = {**summary["seeds"], "architectures": cfg["seed"]}
    _write_text(out / "study.csv", study.to_csv())
    _write_json(out / "summary.json", summary)
    print(f"kendall tau={study.tau} over n={len(study.genotypes)} (failures={study.failures})")
    return EXIT_OK


def cmd_ablate(cfg: dict) -> int:
    kind = cfg["kind"]
    target = load_data(cfg["target"], cfg["target_limit"])
    if kind == "rlgd":
        data_params = {"num_categories": cfg["categories"], "instances_per_category": cfg["instances"]}
    elif kind == "rlrn":
        data_params = {"n": cfg["n"]}
    else:
        images, _, name = _source_images(cfg["source"], cfg["n"], cfg["seed"])
        data_params = {"source_images": images[: cfg["n"]], "source": name}
    scfg = SearchConfig.for_kind(
        kind, warmup_epochs=cfg["warmup_epochs"], search_epochs=cfg["search_epochs"],
        batch_size=cfg["search_batch_size"], order=cfg["order"],
    )
    out = Path(cfg["out"])
    echo_config("analyze ablate-classes", cfg, out)
    grid = class_count_ablation(
        kind, cfg["d_values"], cfg["seeds"], scfg, _train_config(cfg),
        target=target, eval_epochs=cfg["eval_epochs"], data_params=data_params,
        supernet_channels=cfg["supernet_channels"], supernet_cells=cfg["supernet_cells"],
    )
    _write_text(out / "grid.csv", grid.to_csv())
    means = grid.mean_accuracy()
    _write_json(
        out / "summary.json",
        {"kind": grid.kind, "mean_accuracy": {str(d): a for d, a in means.items()},
         "failures": sum(c.accuracy is None for c in grid.cells), "seeds": grid.seeds},
    )
    plot_ablation(grid, out / "ablation.svg")
    for d, a in means.items():
        print(f"d_rand={d}: {'failed' if a is None else f'{a:.4f}'}")
    return EXIT_OK


def cmd_skip_dynamics(cfg: dict) -> int:
    paths = _parse_named(cfg["traces"], "trace")
    traces = {}
    for name, path in paths.items():
        try:
            traces[name] = SearchTrace.read(path)
        except (KeyError, ValueError, TypeError) as exc:
            raise UsageError(f"malformed trace {path}: {exc}")
    out = Path(cfg["out"])
    echo_config("analyze skip-dynamics", cfg, out)
    plot_skip_dynamics(traces, out / "skip_dynamics.svg")
    _write_json(out / "skip_counts.json", {k: t.skip_counts for k, t in traces.items()})
    for name, t in traces.items():
        print(f"{name}: {' '.join(map(str, t.skip_counts))}")
    return EXIT_OK


def cmd_silhouette(cfg: dict) -> int:
    ds = load_data(cfg["dataset"])
    out = Path(cfg["out"])
    echo_config("analyze silhouette", cfg, out)
    score = silhouette_score(ds, sample_cap=cfg["sample_cap"], seed=cfg["seed"])
    _write_json(out / "silhouette.json", {"kind": ds.kind, "n": ds.n, "sample_cap": cfg["sample_cap"], "silhouette": score})
    print(f"silhouette={score:.6f}")
    return EXIT_OK


HANDLERS = {
    "gen": cmd_gen,
    "search": cmd_search,
    "retrain": cmd_retrain,
    "analyze difficulty": cmd_difficulty,
    "analyze distinguish": cmd_distinguish,
    "analyze ablate-classes": cmd_ablate,
    "analyze skip-dynamics": cmd_skip_dynamics,
    "analyze silhouette": cmd_silhouette,
}


# ------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="unrealnas", description="Architecture search on unreal data.")
    parser.add_argument("--version", action="version", version=f"unrealnas {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("gen", "search", "retrain"):
        p = sub.add_parser(name)
        _add_params(p, COMMANDS[name])
        p.set_defaults(command_key=name)
    analyze = sub.add_parser("analyze").add_subparsers(dest="analysis", required=True)
    for key in COMMANDS:
        if key.startswith("analyze "):
            p = analyze.add_parser(key.split(" ", 1)[1])
            _add_params(p, COMMANDS[key])
            p.set_defaults(command_key=key)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    import torch

    torch.set_num_threads(int(os.environ.get("UNREALNAS_THREADS", "1")))
    key = args.command_key
    try:
        cfg = resolve_config(key, args)
        return HANDLERS[key](cfg)
    except DivergedError as exc:
        print(f"unrealnas {key}: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (UsageError, DatasetError, GenotypeError, FractalError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"unrealnas {key}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
