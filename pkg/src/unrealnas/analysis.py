"""Probes over datasets and architectures: difficulty, rank agreement, ablations."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from sklearn.metrics import silhouette_samples

from .datagen import UnrealDataset, build_dataset, make_split
from .engine import DivergedError, SearchConfig, TrainConfig, TrainReport, genotype_to_dict, search, train_fixed
from .rng import stream
from .searchspace import Genotype, build_supernet

__all__ = [
    "NOT_CONVERGED",
    "ConvergenceScore",
    "RankStudy",
    "AblationCell",
    "AblationGrid",
    "UndefinedCorrelationError",
    "convergence_epoch",
    "difficulty_scores",
    "kendall_counts",
    "kendall_tau",
    "distinguishability_study",
    "class_count_ablation",
    "silhouette_score",
    "plot_accuracy_curves",
    "plot_skip_dynamics",
    "plot_ablation",
]

log = logging.getLogger(__name__)

# Returned by convergence_epoch when the curve never clears the chance floor.
NOT_CONVERGED = None

PAPER_CLASS_COUNTS = (2, 50, 100, 200, 1000, 2000, 5000, 10000)


class UndefinedCorrelationError(ValueError):
    pass


# ------------------------------------------------------------- convergence


def _curve(report) -> tuple[np.ndarray, int | None]:
    if isinstance(report, TrainReport):
        return np.asarray(report.train_acc, dtype=np.float64), report.num_classes
    return np.asarray(report, dtype=np.float64), None


def convergence_epoch(
    report: TrainReport | Sequence[float],
    tau: float = 0.99,
    window: int = 5,
    chance: float | None = None,
    floor_factor: float = 2.0,
) -> int | None:
    """First epoch whose train accuracy reaches ``tau`` times the plateau.

    The plateau is the mean of the last ``window`` epochs. If that mean is
    below ``floor_factor * chance`` the curve has not learned anything and
    ``NOT_CONVERGED`` is returned. ``chance`` defaults to ``1 / num_classes``
    when the report knows its class count, else no floor is applied.
    """
    acc, num_classes = _curve(report)
    if acc.size < 2:
        raise ValueError(f"need at least 2 epochs, got {acc.size}")
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    if chance is None and num_classes:
        chance = 1.0 / num_classes
    plateau = acc[-min(window, acc.size) :].mean()
    if chance is not None and plateau < floor_factor * chance:
        return NOT_CONVERGED
    hits = np.flatnonzero(acc >= tau * plateau)
    return int(hits[0])


@dataclass
class ConvergenceScore:
    kind: str
    convergence_epoch: int | None
    tau: float
    epochs: int
    report: TrainReport | None = None

    def as_dict(self) -> dict:
        return {"kind": self.kind, "convergence_epoch": self.convergence_epoch, "tau": self.tau, "epochs": self.epochs}


def difficulty_scores(reports: dict, tau: float = 0.99, **kwargs) -> list[ConvergenceScore]:
    """Score each named report; sorted easiest first, non-converged last."""
    out = []
    for kind, rep in reports.items():
        e = convergence_epoch(rep, tau, **kwargs)
        n = len(rep.epochs) if isinstance(rep, TrainReport) else len(rep)
        if isinstance(rep, TrainReport):
            rep.convergence_epoch = e
        out.append(ConvergenceScore(kind, e, tau, n, rep if isinstance(rep, TrainReport) else None))
    return sorted(out, key=lambda s: (s.convergence_epoch is None, s.convergence_epoch or 0, s.kind))


# ---------------------------------------------------------------- kendall


def kendall_counts(xs, ys) -> tuple[int, int, int, int, int]:
    """``(concordant, discordant, tied_x, tied_y, pairs)`` over all i < j.

    A pair tied in both lists counts in both ``tied_x`` and ``tied_y``.
    """
    x = np.asarray(xs)
    y = np.asarray(ys)
    if x.ndim != 1 or x.shape != y.shape:
        raise ValueError("xs and ys must be 1-D and of equal length")
    n = x.size
    if n < 2:
        raise ValueError("need at least 2 observations")
    i, j = np.triu_indices(n, k=1)
    dx = np.sign(x[j] - x[i]).astype(np.int64)
    dy = np.sign(y[j] - y[i]).astype(np.int64)
    prod = dx * dy
    return (
        int(np.count_nonzero(prod > 0)),
        int(np.count_nonzero(prod < 0)),
        int(np.count_nonzero(dx == 0)),
        int(np.count_nonzero(dy == 0)),
        int(i.size),
    )


def kendall_tau(xs, ys) -> float:
    """Tie-corrected Kendall tau-b from integer pair counts."""
    nc, nd, tx, ty, n0 = kendall_counts(xs, ys)
    if tx == n0 or ty == n0:
        raise UndefinedCorrelationError("all values tied in one list; tau-b is undefined")
    denom_sq = (n0 - tx) * (n0 - ty)
    root = math.isqrt(denom_sq)
    if root * root == denom_sq:
        # Perfect square: the ratio is rational, divide exactly.
        return (nc - nd) / root
    return (nc - nd) / math.sqrt(denom_sq)


# ---------------------------------------------------------- rank studies


@dataclass
class RankStudy:
    genotypes: list[Genotype]
    proxy_scores: list[float]
    target_scores: list[float]
    tau: float | None
    failures: int = 0
    probe_epoch: int = 0
    proxy_metric: str = "train_acc"
    seeds: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "tau": self.tau,
            "n": len(self.genotypes),
            "failures": self.failures,
            "probe_epoch": self.probe_epoch,
            "proxy_metric": self.proxy_metric,
            "seeds": self.seeds,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["arch", "proxy_score", "target_score", "normal", "reduce"])
        for k, (g, p, t) in enumerate(zip(self.genotypes, self.proxy_scores, self.target_scores)):
            d = genotype_to_dict(g)
            w.writerow([k, repr(p), repr(t), _ops_str(d["normal"]), _ops_str(d["reduce"])])
        return buf.getvalue()


def _ops_str(edges) -> str:
    return " ".join(f"{op}@{src}" for op, src in edges)


def distinguishability_study(
    genotypes: Sequence[Genotype],
    unreal,
    target,
    probe_epoch: int,
    hyper: TrainConfig | None = None,
    target_epochs: int | None = None,
    proxy_metric: str = "train_acc",
) -> RankStudy:
    """Rank architectures by unreal-data accuracy at ``probe_epoch`` and by target accuracy.

    ``proxy_metric`` is ``"train_acc"`` (default) or ``"val_acc"``. Target
    score is the final validation accuracy after ``target_epochs`` (default
    ``probe_epoch``). Architectures whose training diverges are dropped from
    tau and counted in ``failures``.
    """
    if len(genotypes) < 2:
        raise ValueError("need at least 2 genotypes")
    if probe_epoch < 1:
        raise ValueError("probe_epoch must be >= 1")
    if proxy_metric not in ("train_acc", "val_acc"):
        raise ValueError(f"unknown proxy metric {proxy_metric!r}")
    hyper = hyper or TrainConfig()
    target_epochs = target_epochs or probe_epoch
    unreal_hyper = replace(hyper, eval_val=proxy_metric == "val_acc")
    kept, proxies, targets, failures = [], [], [], 0
    for k, g in enumerate(genotypes):
        try:
            rep_u = train_fixed(g, unreal, probe_epoch, unreal_hyper, label=f"proxy-{k}")
            rep_t = train_fixed(g, target, target_epochs, hyper, label=f"target-{k}")
        except DivergedError as exc:
            log.warning("architecture %d diverged and is excluded: %s", k, exc)
            failures += 1
            continue
        kept.append(g)
        proxies.append(float(rep_u.epochs[probe_epoch - 1][proxy_metric]))
        targets.append(float(rep_t.final["val_acc"]))
    tau = None
    if len(kept) >= 2:
        try:
            tau = kendall_tau(proxies, targets)
        except UndefinedCorrelationError as exc:
            log.warning("tau undefined: %s", exc)
    return RankStudy(kept, proxies, targets, tau, failures, probe_epoch, proxy_metric, {"train": hyper.seed})


# --------------------------------------------------------------- ablation


@dataclass
class AblationCell:
    d_rand: int
    seed: int
    accuracy: float | None
    genotype: Genotype | None = None
    error: str | None = None


@dataclass
class AblationGrid:
    kind: str
    d_values: list[int]
    seeds: list[int]
    cells: list[AblationCell] = field(default_factory=list)

    def mean_accuracy(self) -> dict[int, float | None]:
        out = {}
        for d in self.d_values:
            vals = [c.accuracy for c in self.cells if c.d_rand == d and c.accuracy is not None]
            out[d] = float(np.mean(vals)) if vals else None
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["kind", "d_rand", "seed", "accuracy", "error", "normal", "reduce"])
        for c in self.cells:
            d = genotype_to_dict(c.genotype) if c.genotype is not None else None
            w.writerow(
                [
                    self.kind,
                    c.d_rand,
                    c.seed,
                    "" if c.accuracy is None else repr(c.accuracy),
                    c.error or "",
                    _ops_str(d["normal"]) if d else "",
                    _ops_str(d["reduce"]) if d else "",
                ]
            )
        return buf.getvalue()


def class_count_ablation(
    kind: str,
    d_values: Sequence[int],
    seeds: Sequence[int],
    search_cfg: SearchConfig,
    eval_cfg: TrainConfig,
    *,
    target,
    eval_epochs: int,
    data_params: dict | None = None,
    supernet_channels: int = 8,
    supernet_cells: int = 4,
) -> AblationGrid:
    """Search on an unreal dataset per (class count, seed) and score each genotype on ``target``.

    ``data_params`` go to the dataset builder (``n`` or ``num_categories`` /
    ``instances_per_category``, ``source_images`` for RLRD). Failures are
    recorded in the grid and the sweep continues.
    """
    if not d_values:
        raise ValueError("d_values must be nonempty")
    grid = AblationGrid(kind.upper(), list(d_values), list(seeds))
    for d in d_values:
        for seed in seeds:
            try:
                ds = build_dataset(kind, d_rand=int(d), seed=int(seed), **(data_params or {}))
                net = build_supernet(channels=supernet_channels, cells=supernet_cells, num_classes=int(d), seed=int(seed))
                genotype, _ = search(net, make_split(ds), replace(search_cfg, seed=int(seed)))
                rep = train_fixed(genotype, target, eval_epochs, replace(eval_cfg, seed=int(seed)))
                grid.cells.append(AblationCell(int(d), int(seed), float(rep.final["val_acc"]), genotype))
            except Exception as exc:  # recorded in-grid by contract
                log.warning("ablation cell d=%s seed=%s failed: %s", d, seed, exc)
                grid.cells.append(AblationCell(int(d), int(seed), None, None, f"{type(exc).__name__}: {exc}"))
    return grid


# ------------------------------------------------------------- silhouette


def silhouette_score(ds, labels=None, sample_cap: int = 2000, seed: int = 0) -> float:
    """Mean silhouette on flattened raw pixels, Euclidean distance.

    ``ds`` is an UnrealDataset or a 2-D feature array with ``labels``.
    Samples whose class has a single member contribute 0, as do samples whose
    intra- and nearest-cluster distances are both 0.
    """
    if isinstance(ds, UnrealDataset):
        x = ds.images.reshape(ds.n, -1)
        y = ds.labels.labels
    else:
        x = np.asarray(ds, dtype=np.float64).reshape(len(ds), -1)
        y = np.asarray(labels)
    if len(x) != len(y):
        raise ValueError("features and labels differ in length")
    if len(x) > sample_cap:
        pick = np.sort(stream(seed, "silhouette").choice(len(x), size=sample_cap, replace=False))
        x, y = x[pick], y[pick]
    x = np.asarray(x, dtype=np.float64)
    _, y = np.unique(y, return_inverse=True)
    k = int(y.max()) + 1
    if k < 2:
        raise ValueError("need at least 2 classes in the sampled subset")
    if k == len(x):
        return 0.0
    s = silhouette_samples(x, y, metric="euclidean")
    return float(np.nan_to_num(s).mean())


# ------------------------------------------------------------------ plots


def _figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # Fixed hash salt keeps SVG element ids stable between runs.
    matplotlib.rcParams["svg.hashsalt"] = "unrealnas"
    fig, ax = plt.subplots(figsize=(6, 4))
    return plt, fig, ax


def _save(plt, fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None} if str(path).endswith(".svg") else None)
    plt.close(fig)


def plot_accuracy_curves(reports: dict, path, metric: str = "train_acc") -> None:
    plt, fig, ax = _figure()
    for name, rep in reports.items():
        acc = [e[metric] for e in rep.epochs] if isinstance(rep, TrainReport) else list(rep)
        (line,) = ax.plot(range(len(acc)), acc, label=str(name))
        line.set_gid(f"curve-{name}")
    ax.set_xlabel("epoch")
    ax.set_ylabel(metric.replace("_", " "))
    ax.legend()
    _save(plt, fig, path)


def plot_skip_dynamics(traces: dict, path) -> None:
    """One marker per recorded epoch for each named trace."""
    plt, fig, ax = _figure()
    for name, trace in traces.items():
        counts = trace.skip_counts
        (line,) = ax.plot(range(len(counts)), counts, marker="o", label=str(name))
        line.set_gid(f"skip-{name}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("skip connections in normal cell")
    ax.legend()
    _save(plt, fig, path)


def plot_ablation(grid: AblationGrid, path) -> None:
    plt, fig, ax = _figure()
    means = grid.mean_accuracy()
    ds = [d for d in grid.d_values if means[d] is not None]
    (line,) = ax.plot(ds, [means[d] for d in ds], marker="o")
    line.set_gid("ablation")
    ax.set_xscale("log")
    ax.set_xlabel("number of random classes")
    ax.set_ylabel("target accuracy")
    _save(plt, fig, path)
