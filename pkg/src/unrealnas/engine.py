"""Bi-level differentiable search and the plain trainer for fixed networks."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .datagen import DatasetView, SplitPair, UnrealDataset, make_split
from .rng import stream
from .searchspace import Genotype, SuperNet, build_network, count_op, validate_genotype

__all__ = [
    "SearchConfig",
    "TrainConfig",
    "EpochRecord",
    "SearchTrace",
    "TrainReport",
    "DivergedError",
    "Searcher",
    "search",
    "train_fixed",
    "cosine_lr",
    "clip_gradients",
    "save_checkpoint",
    "load_alpha",
]

log = logging.getLogger(__name__)


class DivergedError(RuntimeError):
    """A loss or gradient went non-finite; ``partial`` holds what was recorded."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


@dataclass
class SearchConfig:
    warmup_epochs: int = 5
    search_epochs: int = 50
    batch_size: int = 64
    w_lr: float = 0.025
    w_momentum: float = 0.9
    w_weight_decay: float = 0.0
    a_lr: float = 3e-4
    a_betas: tuple[float, float] = (0.5, 0.99)
    a_weight_decay: float = 0.0
    grad_clip: float = 5.0
    order: str = "first"
    seed: int = 0

    def __post_init__(self):
        self.a_betas = tuple(self.a_betas)
        if self.warmup_epochs < 0 or self.search_epochs < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.w_lr <= 0 or self.a_lr < 0:
            raise ValueError("learning rates must be positive")
        if self.w_weight_decay < 0 or self.a_weight_decay < 0:
            raise ValueError("weight decays must be >= 0")
        if self.order not in ("first", "second"):
            raise ValueError(f"order must be 'first' or 'second', got {self.order!r}")

    @classmethod
    def for_kind(cls, kind: str, **overrides) -> "SearchConfig":
        """Defaults for a dataset kind: weight decay is only used on real data."""
        if kind.upper() == "REAL":
            base = {"w_weight_decay": 3e-4, "a_weight_decay": 1e-3}
        else:
            base = {"w_weight_decay": 0.0, "a_weight_decay": 0.0}
        base.update(overrides)
        return cls(**base)

    @property
    def total_epochs(self) -> int:
        return self.warmup_epochs + self.search_epochs

    def as_dict(self) -> dict:
        d = asdict(self)
        d["a_betas"] = list(self.a_betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SearchConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class TrainConfig:
    channels: int = 8
    cells: int = 4
    batch_size: int = 64
    lr: float = 0.025
    momentum: float = 0.9
    weight_decay: float = 3e-4
    grad_clip: float = 5.0
    seed: int = 0
    eval_val: bool = True

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def cosine_lr(base: float, epoch: int, total: int) -> float:
    """Cosine annealing from ``base`` at epoch 0 to 0 at ``epoch == total``."""
    if total <= 0:
        return base
    return 0.5 * base * (1.0 + math.cos(math.pi * epoch / total))


def clip_gradients(params, max_norm: float) -> float:
    """Rescale gradients to global norm ``max_norm``; returns the norm before clipping."""
    params = [p for p in params if p.grad is not None]
    return float(torch.nn.utils.clip_grad_norm_(params, max_norm))


# ------------------------------------------------------------------ traces


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    lr: float
    train_loss: float
    train_acc: float
    val_loss: float | None
    val_acc: float | None
    skip_count: int
    genotype: dict
    wallclock: float

    def as_dict(self) -> dict:
        return asdict(self)


def genotype_to_dict(g: Genotype) -> dict:
    return {
        "normal": [[op, int(s)] for op, s in g.normal],
        "normal_concat": list(g.normal_concat),
        "reduce": [[op, int(s)] for op, s in g.reduce],
        "reduce_concat": list(g.reduce_concat),
    }


def genotype_from_dict(d: dict) -> Genotype:
    return Genotype(
        [(op, int(s)) for op, s in d["normal"]],
        list(d["normal_concat"]),
        [(op, int(s)) for op, s in d["reduce"]],
        list(d["reduce_concat"]),
    )


@dataclass
class SearchTrace:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def skip_counts(self) -> list[int]:
        return [r.skip_count for r in self.records]

    def to_ndjson(self) -> str:
        return "".join(json.dumps(r.as_dict(), sort_keys=True) + "\n" for r in self.records)

    def write(self, path) -> None:
        Path(path).write_text(self.to_ndjson())

    @classmethod
    def read(cls, path) -> "SearchTrace":
        records = []
        for line in Path(path).read_text().splitlines():
            if line.strip():
                records.append(EpochRecord(**json.loads(line)))
        return cls(records)


@dataclass
class TrainReport:
    epochs: list[dict] = field(default_factory=list)
    initial: dict = field(default_factory=dict)
    num_classes: int | None = None
    label: str = ""
    convergence_epoch: int | None = None

    COLUMNS = ("epoch", "lr", "train_loss", "train_acc", "val_loss", "val_acc")

    @property
    def train_acc(self) -> list[float]:
        return [e["train_acc"] for e in self.epochs]

    @property
    def final(self) -> dict:
        return self.epochs[-1] if self.epochs else self.initial

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.COLUMNS, lineterminator="\n")
        w.writeheader()
        for e in self.epochs:
            w.writerow({k: ("" if e.get(k) is None else e[k]) for k in self.COLUMNS})
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, num_classes: int | None = None, label: str = "") -> "TrainReport":
        rows = []
        for row in csv.DictReader(io.StringIO(text)):
            rows.append(
                {
                    k: (int(row[k]) if k == "epoch" else (float(row[k]) if row.get(k) not in (None, "") else None))
                    for k in cls.COLUMNS
                    if k in row
                }
            )
        return cls(epochs=rows, num_classes=num_classes, label=label)


# ------------------------------------------------------------------ helpers


def _device_dtype(model: torch.nn.Module):
    p = next(model.parameters())
    return p.device, p.dtype


def _to_tensors(batch, model):
    x, y = batch
    device, dtype = _device_dtype(model)
    xt = torch.as_tensor(x, dtype=dtype, device=device).contiguous(memory_format=torch.channels_last)
    yt = torch.as_tensor(y, dtype=torch.long, device=device)
    return xt, yt


def _finite_grads(params) -> bool:
    return all(p.grad is None or bool(torch.isfinite(p.grad).all()) for p in params)


def _batches(n: int, batch_size: int, perm: np.ndarray):
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


# ------------------------------------------------------------------ search


class Searcher:
    """Holds the two optimizers of the bi-level search and steps them.

    ``alpha_step`` updates only the architecture parameters on a validation
    batch; ``weight_step`` updates only the network weights on a training
    batch. ``run`` alternates them per batch after the warm-up epochs.
    """

    def __init__(self, supernet: SuperNet, split: SplitPair, cfg: SearchConfig):
        if supernet.num_classes != split.train.num_classes:
            raise ValueError(
                f"supernet predicts {supernet.num_classes} classes, dataset has {split.train.num_classes}"
            )
        self.net = supernet.to(memory_format=torch.channels_last)
        self.split = split
        self.cfg = cfg
        self.weights = supernet.weight_parameters()
        self.alphas = supernet.arch_parameters()
        self.w_opt = torch.optim.SGD(
            self.weights, lr=cfg.w_lr, momentum=cfg.w_momentum, weight_decay=cfg.w_weight_decay
        )
        self.a_opt = torch.optim.Adam(
            self.alphas, lr=cfg.a_lr, betas=cfg.a_betas, weight_decay=cfg.a_weight_decay
        )
        self.trace = SearchTrace()

    # -- single steps

    def _loss(self, batch):
        x, y = _to_tensors(batch, self.net)
        logits = self.net(x)
        loss = F.cross_entropy(logits, y)
        acc = (logits.argmax(1) == y).double().mean().item()
        return loss, acc

    def alpha_step(self, val_batch, train_batch=None, eta: float | None = None):
        """One Adam step on alpha; returns ``(val_loss, val_acc)``.

        First order uses the validation gradient at the current weights.
        Second order needs ``train_batch`` and the weight step size ``eta``.
        """
        self.a_opt.zero_grad(set_to_none=True)
        if self.cfg.order == "second":
            if train_batch is None or eta is None:
                raise ValueError("second-order alpha step needs a train batch and eta")
            loss, acc = self._unrolled_backward(val_batch, train_batch, eta)
        else:
            loss, acc = self._loss(val_batch)
            if not torch.isfinite(loss):
                raise DivergedError(f"non-finite validation loss {loss.item()}")
            loss.backward(inputs=self.alphas)
        if not _finite_grads(self.alphas):
            raise DivergedError("non-finite architecture gradient")
        self.a_opt.step()
        return loss.item(), acc

    def weight_step(self, train_batch, epoch: int):
        """One momentum-SGD step at the cosine-scheduled rate for ``epoch``."""
        lr = cosine_lr(self.cfg.w_lr, epoch, self.cfg.total_epochs)
        for g in self.w_opt.param_groups:
            g["lr"] = lr
        self.w_opt.zero_grad(set_to_none=True)
        loss, acc = self._loss(train_batch)
        if not torch.isfinite(loss):
            raise DivergedError(f"non-finite training loss {loss.item()}")
        loss.backward(inputs=self.weights)
        if not _finite_grads(self.weights):
            raise DivergedError("non-finite weight gradient")
        clip_gradients(self.weights, self.cfg.grad_clip)
        self.w_opt.step()
        return loss.item(), acc

    def _unrolled_backward(self, val_batch, train_batch, eta):
        # alpha gradient of L_val(w', alpha) with w' = w - eta * dw L_train(w, alpha).
        # The mixed second derivative is an exact Hessian-vector product.
        backup = [w.detach().clone() for w in self.weights]
        loss_t, _ = self._loss(train_batch)
        g_t = torch.autograd.grad(loss_t, self.weights)
        with torch.no_grad():
            for w, g in zip(self.weights, g_t):
                step = g + self.cfg.w_weight_decay * w
                buf = self.w_opt.state.get(w, {}).get("momentum_buffer")
                if buf is not None:
                    step = step + self.cfg.w_momentum * buf
                w.sub_(eta * step)
        loss_v, acc = self._loss(val_batch)
        grads = torch.autograd.grad(loss_v, self.alphas + self.weights)
        d_alpha, d_w = grads[: len(self.alphas)], grads[len(self.alphas) :]
        with torch.no_grad():
            for w, w0 in zip(self.weights, backup):
                w.copy_(w0)
        loss_t, _ = self._loss(train_batch)
        g_w = torch.autograd.grad(loss_t, self.weights, create_graph=True)
        dot = sum((g * v).sum() for g, v in zip(g_w, d_w))
        mixed = torch.autograd.grad(dot, self.alphas)
        for a, da, m in zip(self.alphas, d_alpha, mixed):
            a.grad = (da - eta * m).detach()
        return loss_v, acc

    # -- epochs

    def _epoch(self, epoch: int):
        cfg = self.cfg
        train, val = self.split.train, self.split.val
        warm = epoch < cfg.warmup_epochs
        perm = stream(cfg.seed, "train-order", epoch).permutation(len(train))
        vperm = stream(cfg.seed, "val-order", epoch).permutation(len(val))
        lr = cosine_lr(cfg.w_lr, epoch, cfg.total_epochs)
        t_loss = t_acc = v_loss = v_acc = 0.0
        n_t = n_v = 0
        for step, idx in enumerate(_batches(len(train), cfg.batch_size, perm)):
            aug = stream(cfg.seed, "augment", epoch, step)
            train_batch = train.batch(idx, aug)
            if not warm:
                start = (step * cfg.batch_size) % len(val)
                vidx = np.take(vperm, np.arange(start, start + len(idx)), mode="wrap")
                val_batch = val.batch(vidx, stream(cfg.seed, "val-augment", epoch, step))
                loss, acc = self.alpha_step(val_batch, train_batch, eta=lr)
                v_loss += loss * len(idx)
                v_acc += acc * len(idx)
                n_v += len(idx)
            loss, acc = self.weight_step(train_batch, epoch)
            t_loss += loss * len(idx)
            t_acc += acc * len(idx)
            n_t += len(idx)
        return lr, t_loss / n_t, t_acc / n_t, (v_loss / n_v if n_v else None), (v_acc / n_v if n_v else None)

    def run(self, on_epoch=None) -> tuple[Genotype, SearchTrace]:
        self.net.train()
        for epoch in range(self.cfg.total_epochs):
            t0 = time.perf_counter()
            try:
                lr, tl, ta, vl, va = self._epoch(epoch)
            except DivergedError as exc:
                exc.partial = self.trace
                raise
            g = self.net.genotype()
            rec = EpochRecord(
                epoch=epoch,
                phase="warmup" if epoch < self.cfg.warmup_epochs else "search",
                lr=lr,
                train_loss=tl,
                train_acc=ta,
                val_loss=vl,
                val_acc=va,
                skip_count=count_op(g, "skip_connect"),
                genotype=genotype_to_dict(g),
                wallclock=time.perf_counter() - t0,
            )
            self.trace.records.append(rec)
            log.info(
                "epoch %d/%d %s train_loss=%.4f train_acc=%.4f skip=%d (%.1fs)",
                epoch + 1, self.cfg.total_epochs, rec.phase, tl, ta, rec.skip_count, rec.wallclock,
            )
            if on_epoch is not None:
                on_epoch(self, rec)
        return self.net.genotype(), self.trace


def search(supernet: SuperNet, split: SplitPair, cfg: SearchConfig, on_epoch=None) -> tuple[Genotype, SearchTrace]:
    """Run warm-up then alternating alpha/weight updates; returns the final genotype and trace."""
    return Searcher(supernet, split, cfg).run(on_epoch)


def save_checkpoint(directory, supernet: SuperNet, cfg: SearchConfig, extra: dict | None = None) -> None:
    """Weights as a torch blob; alpha as plain float32 arrays; config as JSON."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    torch.save({k: v for k, v in supernet.state_dict().items() if not k.startswith("alpha_")}, d / "weights.pt")
    np.savez(
        d / "alpha.npz",
        alpha_normal=supernet.alpha_normal.detach().cpu().float().numpy(),
        alpha_reduce=supernet.alpha_reduce.detach().cpu().float().numpy(),
    )
    (d / "config.json").write_text(json.dumps({"search": cfg.as_dict(), **(extra or {})}, indent=2, sort_keys=True) + "\n")


def load_alpha(directory) -> tuple[np.ndarray, np.ndarray]:
    with np.load(Path(directory) / "alpha.npz") as z:
        return z["alpha_normal"], z["alpha_reduce"]


# ----------------------------------------------------------------- training


@torch.no_grad()
def _evaluate(model, view: DatasetView, batch_size: int):
    model.eval()
    loss = acc = 0.0
    for idx in _batches(len(view), batch_size, np.arange(len(view))):
        # Random train-time augmentation is not applied when measuring.
        if view.transform == "crop_flip_normalize":
            eval_view = DatasetView(view.dataset, view.indices[idx], "normalize")
            xb, yb = eval_view.batch(np.arange(len(idx)))
        else:
            xb, yb = view.batch(idx)
        xt, yt = _to_tensors((xb, yb), model)
        logits = model(xt)
        loss += F.cross_entropy(logits, yt, reduction="sum").item()
        acc += (logits.argmax(1) == yt).sum().item()
    model.train()
    return loss / len(view), acc / len(view)


def train_fixed(
    genotype: Genotype,
    data: SplitPair | UnrealDataset,
    epochs: int,
    hyper: TrainConfig | None = None,
    label: str = "",
) -> TrainReport:
    """Train the discrete network of ``genotype`` from scratch with SGD + cosine decay.

    Per-epoch ``train_*`` are running averages over the epoch's batches;
    ``val_*`` are measured in eval mode after the epoch.
    """
    validate_genotype(genotype)
    hyper = hyper or TrainConfig()
    split = make_split(data) if isinstance(data, UnrealDataset) else data
    model = build_network(
        genotype, channels=hyper.channels, cells=hyper.cells, num_classes=split.train.num_classes, seed=hyper.seed
    ).to(memory_format=torch.channels_last)
    opt = torch.optim.SGD(model.parameters(), lr=hyper.lr, momentum=hyper.momentum, weight_decay=hyper.weight_decay)
    report = TrainReport(num_classes=split.train.num_classes, label=label)
    tl, ta = _evaluate(model, split.train, hyper.batch_size)
    vl, va = _evaluate(model, split.val, hyper.batch_size) if hyper.eval_val else (None, None)
    report.initial = {"train_loss": tl, "train_acc": ta, "val_loss": vl, "val_acc": va}
    model.train()
    for epoch in range(epochs):
        lr = cosine_lr(hyper.lr, epoch, epochs)
        for g in opt.param_groups:
            g["lr"] = lr
        perm = stream(hyper.seed, "fixed-train-order", epoch).permutation(len(split.train))
        t_loss = t_acc = 0.0
        for step, idx in enumerate(_batches(len(split.train), hyper.batch_size, perm)):
            x, y = _to_tensors(split.train.batch(idx, stream(hyper.seed, "fixed-augment", epoch, step)), model)
            opt.zero_grad(set_to_none=True)
            logits = model(x)
            loss = F.cross_entropy(logits, y)
            if not torch.isfinite(loss):
                raise DivergedError(f"non-finite training loss at epoch {epoch}", partial=report)
            loss.backward()
            if not _finite_grads(model.parameters()):
                raise DivergedError(f"non-finite gradient at epoch {epoch}", partial=report)
            clip_gradients(model.parameters(), hyper.grad_clip)
            opt.step()
            t_loss += loss.item() * len(idx)
            t_acc += (logits.argmax(1) == y).sum().item()
        row = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": t_loss / len(split.train),
            "train_acc": t_acc / len(split.train),
            "val_loss": None,
            "val_acc": None,
        }
        if hyper.eval_val:
            row["val_loss"], row["val_acc"] = _evaluate(model, split.val, hyper.batch_size)
        report.epochs.append(row)
    return report
