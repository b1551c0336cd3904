"""Cell-based search space: candidate ops, mixed edges, supernet and genotypes."""

from __future__ import annotations

import json
from collections import namedtuple
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

__all__ = [
    "PRIMITIVES",
    "Genotype",
    "CellSpec",
    "GenotypeError",
    "mixed_op_weights",
    "cell_forward",
    "derive_genotype",
    "count_op",
    "validate_genotype",
    "random_genotype",
    "reduction_positions",
    "build_supernet",
    "build_network",
    "SuperNet",
    "Network",
    "save_genotype",
    "load_genotype",
]

# Tie-breaks in derive_genotype prefer lower indices, so order matters.
PRIMITIVES = (
    "sep_conv_3x3",
    "sep_conv_5x5",
    "dil_conv_3x3",
    "dil_conv_5x5",
    "max_pool_3x3",
    "avg_pool_3x3",
    "skip_connect",
    "zero",
)
ZERO_INDEX = PRIMITIVES.index("zero")

Genotype = namedtuple("Genotype", "normal normal_concat reduce reduce_concat")

CellSpec = namedtuple("CellSpec", "steps num_inputs reduction", defaults=(4, 2, False))


class GenotypeError(ValueError):
    pass


def num_edges(steps: int) -> int:
    return sum(2 + i for i in range(steps))


def edge_sources(steps: int) -> list[tuple[int, int]]:
    """``(node, source)`` for every edge, in alpha row order."""
    return [(j, i) for j in range(steps) for i in range(2 + j)]


# ---------------------------------------------------------------- operations


def _bn(c: int, search: bool) -> nn.BatchNorm2d:
    # Search cells normalise with batch statistics only and learn no affine.
    if search:
        return nn.BatchNorm2d(c, affine=False, track_running_stats=False)
    return nn.BatchNorm2d(c)


class ReLUConvBN(nn.Sequential):
    def __init__(self, c_in, c_out, kernel, stride, padding, search):
        super().__init__(
            nn.ReLU(inplace=False),
            nn.Conv2d(c_in, c_out, kernel, stride=stride, padding=padding, bias=False),
            _bn(c_out, search),
        )


class DepthwiseConv(nn.Conv2d):
    """Depthwise conv that evaluates stride-2, dilation-2 kernels on the even grid.

    With stride and dilation both 2 every tap lands on an even input
    coordinate, so subsampling first and running an undilated stride-1 kernel
    is exactly equivalent and far cheaper on CPU.
    """

    def __init__(self, c, kernel, stride, padding, dilation):
        super().__init__(c, c, kernel, stride, padding, dilation=dilation, groups=c, bias=False)
        self._even_grid = stride == 2 and dilation == 2 and padding % 2 == 0

    def forward(self, x):
        x = x.contiguous(memory_format=torch.channels_last)
        if self._even_grid:
            x = x[:, :, ::2, ::2]
            return F.conv2d(x, self.weight, None, 1, self.padding[0] // 2, 1, self.groups)
        return super().forward(x)


class DilConv(nn.Sequential):
    def __init__(self, c_in, c_out, kernel, stride, padding, dilation, search, relu=True):
        layers = [nn.ReLU(inplace=False)] if relu else []
        super().__init__(
            *layers,
            DepthwiseConv(c_in, kernel, stride, padding, dilation),
            nn.Conv2d(c_in, c_out, 1, bias=False),
            _bn(c_out, search),
        )


class SepConv(nn.Sequential):
    """Depthwise-separable conv applied twice."""

    def __init__(self, c_in, c_out, kernel, stride, padding, search, relu=True):
        super().__init__(
            DilConv(c_in, c_in, kernel, stride, padding, 1, search, relu=relu),
            DilConv(c_in, c_out, kernel, 1, padding, 1, search),
        )


class Zero(nn.Module):
    def __init__(self, stride):
        super().__init__()
        self.stride = stride

    def forward(self, x):
        if self.stride == 1:
            return x.mul(0.0)
        return x[:, :, :: self.stride, :: self.stride].mul(0.0)


class FactorizedReduce(nn.Module):
    def __init__(self, c_in, c_out, search, relu=True):
        super().__init__()
        if c_out % 2:
            raise ValueError(f"FactorizedReduce needs an even channel count, got {c_out}")
        self.relu = nn.ReLU(inplace=False) if relu else nn.Identity()
        self.conv_1 = nn.Conv2d(c_in, c_out // 2, 1, stride=2, bias=False)
        self.conv_2 = nn.Conv2d(c_in, c_out // 2, 1, stride=2, bias=False)
        self.bn = _bn(c_out, search)

    def forward(self, x):
        x = self.relu(x)
        return self.bn(torch.cat([self.conv_1(x), self.conv_2(x[:, :, 1:, 1:])], dim=1))


class _Pool(nn.Module):
    def __init__(self, kind, c, stride, search):
        super().__init__()
        if kind == "max":
            self.pool = nn.MaxPool2d(3, stride=stride, padding=1)
        else:
            self.pool = nn.AvgPool2d(3, stride=stride, padding=1, count_include_pad=False)
        # Search-time pools get a BN so their scale matches the conv branches.
        self.bn = _bn(c, True) if search else None

    def forward(self, x):
        x = self.pool(x)
        return self.bn(x) if self.bn is not None else x


def make_op(name: str, c: int, stride: int, search: bool, relu: bool = True) -> nn.Module:
    """Build one candidate op; ``relu=False`` drops the leading ReLU of conv ops."""
    if name == "sep_conv_3x3":
        return SepConv(c, c, 3, stride, 1, search, relu)
    if name == "sep_conv_5x5":
        return SepConv(c, c, 5, stride, 2, search, relu)
    if name == "dil_conv_3x3":
        return DilConv(c, c, 3, stride, 2, 2, search, relu)
    if name == "dil_conv_5x5":
        return DilConv(c, c, 5, stride, 4, 2, search, relu)
    if name == "max_pool_3x3":
        return _Pool("max", c, stride, search)
    if name == "avg_pool_3x3":
        return _Pool("avg", c, stride, search)
    if name == "skip_connect":
        return nn.Identity() if stride == 1 else FactorizedReduce(c, c, search, relu)
    if name == "zero":
        return Zero(stride)
    raise GenotypeError(f"unknown operation {name!r}")


# ------------------------------------------------------------- relaxation


def mixed_op_weights(alpha):
    """Softmax over the candidate-op axis (last axis) of ``alpha``.

    Accepts a torch tensor (differentiable) or anything numpy can convert, in
    which case a float64 numpy array is returned.
    """
    if isinstance(alpha, torch.Tensor):
        if not torch.isfinite(alpha).all():
            raise ValueError("architecture parameters must be finite")
        return torch.softmax(alpha, dim=-1)
    a = np.asarray(alpha, dtype=np.float64)
    if not np.isfinite(a).all():
        raise ValueError("architecture parameters must be finite")
    z = np.exp(a - a.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


_CONV_OPS = ("sep_conv_3x3", "sep_conv_5x5", "dil_conv_3x3", "dil_conv_5x5")


def _shared_branches(x, stride):
    """Parameter-free branches of every edge leaving a node.

    Pools, identity and ReLU do not depend on the edge, so they are computed
    once per source node instead of once per edge.
    """
    bn = lambda t: F.batch_norm(t, None, None, training=True)
    return {
        "relu": F.relu(x),
        "max_pool_3x3": bn(F.max_pool2d(x, 3, stride, 1)),
        "avg_pool_3x3": bn(F.avg_pool2d(x, 3, stride, 1, count_include_pad=False)),
        "skip_connect": x if stride == 1 else None,
    }


class MixedOp(nn.Module):
    """Softmax-weighted sum of all candidate ops on one edge.

    Only the ops with parameters live here; the rest come from
    :func:`_shared_branches`. The ``zero`` term contributes nothing and is
    not evaluated.
    """

    def __init__(self, c, stride):
        super().__init__()
        self.stride = stride
        names = _CONV_OPS + (("skip_connect",) if stride != 1 else ())
        self.ops = nn.ModuleDict({n: make_op(n, c, stride, True, relu=False) for n in names})

    def forward(self, x, weights, shared=None):
        if shared is None:
            shared = _shared_branches(x, self.stride)
        out = 0
        for k, name in enumerate(PRIMITIVES):
            if name == "zero":
                continue
            if name in self.ops:
                branch = self.ops[name](shared["relu"])
            else:
                branch = shared[name]
            out = out + weights[k] * branch
        return out

    def single(self, x, name):
        """Output of candidate ``name`` alone, as a discrete edge would compute it."""
        if name == "zero":
            return Zero(self.stride)(x)
        if name in self.ops:
            return self.ops[name](F.relu(x))
        return _shared_branches(x, self.stride)[name]


class CellDAG(nn.Module):
    """The mixed DAG of a search cell, acting on already preprocessed inputs."""

    def __init__(self, steps: int, c: int, reduction: bool):
        super().__init__()
        self.steps = steps
        self.reduction = reduction
        self.edges = nn.ModuleList()
        for j in range(steps):
            for i in range(2 + j):
                stride = 2 if reduction and i < 2 else 1
                self.edges.append(MixedOp(c, stride))

    def forward(self, s0, s1, alpha):
        if alpha.shape != (len(self.edges), len(PRIMITIVES)):
            raise ValueError(f"alpha has shape {tuple(alpha.shape)}, expected {(len(self.edges), len(PRIMITIVES))}")
        if s0.shape != s1.shape:
            raise ValueError(f"cell inputs disagree in shape: {tuple(s0.shape)} vs {tuple(s1.shape)}")
        weights = mixed_op_weights(alpha)
        states = [s0, s1]
        shared = []
        e = 0
        for j in range(self.steps):
            while len(shared) < len(states):
                i = len(shared)
                shared.append(_shared_branches(states[i], 2 if self.reduction and i < 2 else 1))
            node = 0
            for i, h in enumerate(states):
                node = node + self.edges[e](h, weights[e], shared[i])
                e += 1
            states.append(node)
        return torch.cat(states[2:], dim=1)


def cell_forward(dag: CellDAG, inputs, alpha):
    """Apply a mixed cell DAG to its two (preprocessed) input feature maps."""
    s0, s1 = inputs
    return dag(s0, s1, alpha)


class SearchCell(nn.Module):
    def __init__(self, steps, c_pp, c_p, c, reduction, reduction_prev):
        super().__init__()
        self.reduction = reduction
        if reduction_prev:
            self.preprocess0 = FactorizedReduce(c_pp, c, True)
        else:
            self.preprocess0 = ReLUConvBN(c_pp, c, 1, 1, 0, True)
        self.preprocess1 = ReLUConvBN(c_p, c, 1, 1, 0, True)
        self.dag = CellDAG(steps, c, reduction)

    def forward(self, s0, s1, alpha):
        return self.dag(self.preprocess0(s0), self.preprocess1(s1), alpha)


def reduction_positions(cells: int) -> tuple[int, int]:
    return cells // 3, 2 * cells // 3


class SuperNet(nn.Module):
    """Stacked search cells sharing one alpha per cell type."""

    def __init__(self, channels=8, cells=4, num_classes=10, steps=4, stem_multiplier=3, in_channels=3):
        super().__init__()
        if channels < 1 or cells < 2 or num_classes < 1:
            raise ValueError("need channels >= 1, cells >= 2 and num_classes >= 1")
        self.channels = channels
        self.num_cells = cells
        self.num_classes = num_classes
        self.steps = steps
        c_curr = stem_multiplier * channels
        self.stem = nn.Sequential(
            nn.Conv2d(in_channels, c_curr, 3, padding=1, bias=False),
            _bn(c_curr, True),
        )
        c_pp, c_p, c_curr = c_curr, c_curr, channels
        reductions = reduction_positions(cells)
        self.cells = nn.ModuleList()
        reduction_prev = False
        for k in range(cells):
            reduction = k in reductions
            if reduction:
                c_curr *= 2
            self.cells.append(SearchCell(steps, c_pp, c_p, c_curr, reduction, reduction_prev))
            reduction_prev = reduction
            c_pp, c_p = c_p, steps * c_curr
        self.classifier = nn.Linear(c_p, num_classes)
        n_e = num_edges(steps)
        self.alpha_normal = nn.Parameter(torch.zeros(n_e, len(PRIMITIVES)))
        self.alpha_reduce = nn.Parameter(torch.zeros(n_e, len(PRIMITIVES)))

    def arch_parameters(self) -> list[nn.Parameter]:
        return [self.alpha_normal, self.alpha_reduce]

    def weight_parameters(self) -> list[nn.Parameter]:
        arch = {id(p) for p in self.arch_parameters()}
        return [p for p in self.parameters() if id(p) not in arch]

    def forward(self, x):
        s0 = s1 = self.stem(x)
        for cell in self.cells:
            alpha = self.alpha_reduce if cell.reduction else self.alpha_normal
            s0, s1 = s1, cell(s0, s1, alpha)
        out = F.adaptive_avg_pool2d(s1, 1).flatten(1)
        return self.classifier(out)

    def genotype(self) -> Genotype:
        return derive_genotype(
            self.alpha_normal.detach().cpu().double().numpy(),
            self.alpha_reduce.detach().cpu().double().numpy(),
            steps=self.steps,
        )


def build_supernet(
    spec: CellSpec | None = None,
    channels: int = 8,
    cells: int = 4,
    num_classes: int = 10,
    seed: int | None = 0,
    dtype: torch.dtype = torch.float32,
) -> SuperNet:
    """Build a search supernet with zero-initialised alpha.

    Weight initialisation is drawn from ``torch.manual_seed(seed)`` inside a
    forked RNG scope, so the global torch RNG is untouched.
    """
    steps = (spec or CellSpec()).steps
    with torch.random.fork_rng(devices=[]):
        if seed is not None:
            torch.manual_seed(seed)
        net = SuperNet(channels=channels, cells=cells, num_classes=num_classes, steps=steps)
    return net.to(dtype)


# -------------------------------------------------------------- genotypes


def _derive_cell(alpha: np.ndarray, steps: int) -> list[tuple[str, int]]:
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (num_edges(steps), len(PRIMITIVES)):
        raise GenotypeError(f"alpha has shape {alpha.shape}, expected {(num_edges(steps), len(PRIMITIVES))}")
    weights = mixed_op_weights(alpha)
    keep = [k for k in range(len(PRIMITIVES)) if k != ZERO_INDEX]
    gene = []
    start = 0
    for j in range(steps):
        n_in = 2 + j
        rows = range(start, start + n_in)
        # Strongest edges first; equal strength falls back to the lower source.
        strength = [(-weights[r, keep].max(), src) for src, r in enumerate(rows)]
        chosen = sorted(strength)[:2]
        for _, src in chosen:
            a = alpha[start + src, keep]
            # np.argmax returns the first maximum, i.e. the lowest op index.
            gene.append((PRIMITIVES[keep[int(np.argmax(a))]], src))
        start += n_in
    return gene


def derive_genotype(alpha_normal, alpha_reduce=None, steps: int = 4) -> Genotype:
    """Discretise architecture parameters.

    Each intermediate node keeps its two strongest incoming edges (strength is
    the largest non-zero-op softmax weight); each kept edge takes its best
    non-zero op. Accepts a pair of arrays or a :class:`SuperNet`.
    """
    if isinstance(alpha_normal, SuperNet):
        return alpha_normal.genotype()
    if alpha_reduce is None:
        alpha_reduce = alpha_normal
    concat = list(range(2, 2 + steps))
    return Genotype(
        normal=_derive_cell(alpha_normal, steps),
        normal_concat=concat,
        reduce=_derive_cell(alpha_reduce, steps),
        reduce_concat=list(concat),
    )


def validate_genotype(g: Genotype, steps: int | None = None) -> None:
    for name in ("normal", "reduce"):
        gene = getattr(g, name)
        if len(gene) % 2:
            raise GenotypeError(f"{name} cell has an odd edge count")
        n_steps = len(gene) // 2
        if steps is not None and n_steps != steps:
            raise GenotypeError(f"{name} cell has {n_steps} nodes, expected {steps}")
        for j in range(n_steps):
            (op_a, src_a), (op_b, src_b) = gene[2 * j], gene[2 * j + 1]
            for op, src in ((op_a, src_a), (op_b, src_b)):
                if op not in PRIMITIVES or op == "zero":
                    raise GenotypeError(f"invalid op {op!r} in {name} cell")
                if not 0 <= src < 2 + j:
                    raise GenotypeError(f"node {j} of {name} cell reads from invalid source {src}")
            if src_a == src_b:
                raise GenotypeError(f"node {j} of {name} cell repeats source {src_a}")


def count_op(genotype_or_alpha, op: str = "skip_connect", steps: int = 4) -> int:
    """Number of normal-cell edges whose selected op is ``op``."""
    if op not in PRIMITIVES:
        raise GenotypeError(f"unknown operation {op!r}")
    g = genotype_or_alpha
    if not isinstance(g, Genotype):
        if isinstance(g, SuperNet):
            g = g.genotype()
        elif isinstance(g, (tuple, list)) and len(g) == 2:
            g = derive_genotype(g[0], g[1], steps=steps)
        else:
            g = derive_genotype(g, steps=steps)
    return sum(1 for name, _ in g.normal if name == op)


def random_genotype(rng: np.random.Generator, steps: int = 4) -> Genotype:
    """Uniform over ops (excluding zero) and over distinct source pairs."""
    ops = [p for p in PRIMITIVES if p != "zero"]

    def cell():
        gene = []
        for j in range(steps):
            srcs = rng.choice(2 + j, size=2, replace=False)
            for s in srcs:
                gene.append((ops[int(rng.integers(len(ops)))], int(s)))
        return gene

    concat = list(range(2, 2 + steps))
    return Genotype(cell(), concat, cell(), list(concat))


def save_genotype(g: Genotype, path, meta: dict | None = None) -> None:
    payload = {
        "normal": [[op, int(src)] for op, src in g.normal],
        "normal_concat": list(g.normal_concat),
        "reduce": [[op, int(src)] for op, src in g.reduce],
        "reduce_concat": list(g.reduce_concat),
        "meta": meta or {},
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_genotype(path) -> Genotype:
    payload = json.loads(Path(path).read_text())
    try:
        g = Genotype(
            normal=[(op, int(src)) for op, src in payload["normal"]],
            normal_concat=[int(i) for i in payload["normal_concat"]],
            reduce=[(op, int(src)) for op, src in payload["reduce"]],
            reduce_concat=[int(i) for i in payload["reduce_concat"]],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise GenotypeError(f"malformed genotype file {path}: {exc}") from exc
    validate_genotype(g)
    return g


# ------------------------------------------------------- discrete network


class FixedCell(nn.Module):
    def __init__(self, gene, concat, c_pp, c_p, c, reduction, reduction_prev):
        super().__init__()
        self.reduction = reduction
        if reduction_prev:
            self.preprocess0 = FactorizedReduce(c_pp, c, False)
        else:
            self.preprocess0 = ReLUConvBN(c_pp, c, 1, 1, 0, False)
        self.preprocess1 = ReLUConvBN(c_p, c, 1, 1, 0, False)
        self.sources = [src for _, src in gene]
        self.concat = list(concat)
        self.ops = nn.ModuleList(
            make_op(op, c, 2 if reduction and src < 2 else 1, False) for op, src in gene
        )

    def forward(self, s0, s1):
        states = [self.preprocess0(s0), self.preprocess1(s1)]
        for j in range(len(self.ops) // 2):
            a, b = 2 * j, 2 * j + 1
            states.append(self.ops[a](states[self.sources[a]]) + self.ops[b](states[self.sources[b]]))
        return torch.cat([states[i] for i in self.concat], dim=1)


class Network(nn.Module):
    """Discrete network stacked from a genotype's normal and reduction cells."""

    def __init__(self, genotype: Genotype, channels=8, cells=4, num_classes=10, stem_multiplier=3, in_channels=3):
        super().__init__()
        validate_genotype(genotype)
        c_curr = stem_multiplier * channels
        self.stem = nn.Sequential(nn.Conv2d(in_channels, c_curr, 3, padding=1, bias=False), nn.BatchNorm2d(c_curr))
        c_pp, c_p, c_curr = c_curr, c_curr, channels
        reductions = reduction_positions(cells)
        self.cells = nn.ModuleList()
        reduction_prev = False
        for k in range(cells):
            reduction = k in reductions
            if reduction:
                c_curr *= 2
                gene, concat = genotype.reduce, genotype.reduce_concat
            else:
                gene, concat = genotype.normal, genotype.normal_concat
            self.cells.append(FixedCell(gene, concat, c_pp, c_p, c_curr, reduction, reduction_prev))
            reduction_prev = reduction
            c_pp, c_p = c_p, len(concat) * c_curr
        self.classifier = nn.Linear(c_p, num_classes)

    def forward(self, x):
        s0 = s1 = self.stem(x)
        for cell in self.cells:
            s0, s1 = s1, cell(s0, s1)
        return self.classifier(F.adaptive_avg_pool2d(s1, 1).flatten(1))


def build_network(genotype: Genotype, channels=8, cells=4, num_classes=10, seed: int | None = 0) -> Network:
    with torch.random.fork_rng(devices=[]):
        if seed is not None:
            torch.manual_seed(seed)
        return Network(genotype, channels=channels, cells=cells, num_classes=num_classes)
