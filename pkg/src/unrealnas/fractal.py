"""Iterated-function-system fractals rendered with the chaos game.

Categories are random sets of 2-D affine maps filtered for contraction and
fill rate; instances are produced from a category by scaling one of the six
coefficient slots in every map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numba
import numpy as np

from .rng import derive_seed, stream

__all__ = [
    "AffineMap",
    "RenderParams",
    "IFSSystem",
    "FractalError",
    "ResamplingExhaustedError",
    "EmptyRenderError",
    "PARAM_NAMES",
    "INSTANCE_WEIGHTS",
    "sample_category",
    "perturb_instance",
    "render",
    "fill_fraction",
    "instance_schedule",
    "render_instance",
    "category_seeds",
]

PARAM_NAMES = ("a", "b", "c", "d", "e", "f")

# 6 coefficient slots x 25 weights x 4 render seeds = 600 instances per category.
INSTANCE_WEIGHTS = np.linspace(0.8, 1.2, 25)
INSTANCE_RENDER_SEEDS = 4


class FractalError(ValueError):
    pass


class ResamplingExhaustedError(FractalError):
    pass


class EmptyRenderError(FractalError):
    pass


@dataclass(frozen=True)
class AffineMap:
    """``(x, y) -> (a x + b y + e, c x + d y + f)`` chosen with probability ``p``."""

    a: float
    b: float
    c: float
    d: float
    e: float
    f: float
    p: float

    def __post_init__(self):
        coeffs = self.coefficients
        if not all(math.isfinite(v) for v in coeffs):
            raise FractalError(f"non-finite affine coefficients {coeffs}")
        if not (self.p >= 0.0):
            raise FractalError(f"selection probability must be >= 0, got {self.p}")

    @property
    def coefficients(self) -> tuple[float, ...]:
        return (self.a, self.b, self.c, self.d, self.e, self.f)

    def max_singular_value(self) -> float:
        return float(np.linalg.norm([[self.a, self.b], [self.c, self.d]], ord=2))

    def as_list(self) -> list[float]:
        return [*self.coefficients, self.p]


@dataclass(frozen=True)
class RenderParams:
    """Chaos-game rendering settings.

    ``frame`` is ``(xmin, xmax, ymin, ymax)`` in map coordinates. When it is
    ``None`` the bounding box of the visited points is used, so the whole
    attractor is always framed.
    """

    height: int = 32
    width: int = 32
    channels: int = 3
    point_count: int = 20000
    patch_size: int = 1
    burn_in: int = 20
    fill_threshold: float = 0.2
    frame: tuple[float, float, float, float] | None = None

    def __post_init__(self):
        if self.patch_size not in (1, 3):
            raise FractalError(f"patch_size must be 1 or 3, got {self.patch_size}")
        if not 0.0 < self.fill_threshold < 1.0:
            raise FractalError(f"fill_threshold must lie in (0, 1), got {self.fill_threshold}")
        if min(self.height, self.width, self.channels, self.point_count) < 1 or self.burn_in < 0:
            raise FractalError("render sizes must be positive")
        if self.frame is not None:
            x0, x1, y0, y1 = self.frame
            if not (x1 > x0 and y1 > y0):
                raise FractalError(f"degenerate frame {self.frame}")

    def as_dict(self) -> dict:
        out = {
            "height": self.height,
            "width": self.width,
            "channels": self.channels,
            "point_count": self.point_count,
            "patch_size": self.patch_size,
            "burn_in": self.burn_in,
            "fill_threshold": self.fill_threshold,
            "frame": list(self.frame) if self.frame is not None else None,
        }
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "RenderParams":
        d = dict(d)
        if d.get("frame") is not None:
            d["frame"] = tuple(d["frame"])
        return cls(**d)


@dataclass(frozen=True)
class IFSSystem:
    maps: tuple[AffineMap, ...]
    category_id: int
    render: RenderParams = field(default_factory=RenderParams)

    def __post_init__(self):
        object.__setattr__(self, "maps", tuple(self.maps))
        if not self.maps:
            raise FractalError("an IFS needs at least one map")
        total = sum(m.p for m in self.maps)
        if abs(total - 1.0) > 1e-9:
            raise FractalError(f"selection probabilities sum to {total}, expected 1")

    @property
    def contractive(self) -> bool:
        """True when every map's largest singular value is below 1."""
        return all(m.max_singular_value() < 1.0 for m in self.maps)

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([m.p for m in self.maps], dtype=np.float64)

    def coefficient_array(self) -> np.ndarray:
        return np.array([m.coefficients for m in self.maps], dtype=np.float64)

    def to_record(self) -> dict:
        return {
            "category_id": int(self.category_id),
            "maps": [m.as_list() for m in self.maps],
            "render": self.render.as_dict(),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "IFSSystem":
        return cls(
            maps=tuple(AffineMap(*row) for row in rec["maps"]),
            category_id=int(rec["category_id"]),
            render=RenderParams.from_dict(rec["render"]),
        )


@numba.njit(cache=True)
def _chaos_orbit(coeffs, choices, burn_in):
    n = choices.shape[0] - burn_in
    xs = np.empty(n)
    ys = np.empty(n)
    x = 0.0
    y = 0.0
    for t in range(choices.shape[0]):
        k = choices[t]
        nx = coeffs[k, 0] * x + coeffs[k, 1] * y + coeffs[k, 4]
        ny = coeffs[k, 2] * x + coeffs[k, 3] * y + coeffs[k, 5]
        x = nx
        y = ny
        if t >= burn_in:
            xs[t - burn_in] = x
            ys[t - burn_in] = y
    return xs, ys


def _to_pixels(v: np.ndarray, lo: float, hi: float, size: int) -> np.ndarray:
    if hi - lo <= 0.0:
        return np.full(v.shape, size // 2, dtype=np.int64)
    idx = np.floor((v - lo) / (hi - lo) * size).astype(np.int64)
    # The upper frame edge is inclusive.
    return np.minimum(idx, size - 1)


def render(sys: IFSSystem, seed: int = 0) -> np.ndarray:
    """Render ``sys`` to an ``H x W x C`` float32 image with values in {0, 1}.

    The chaos game starts at the origin, discards ``burn_in`` points and keeps
    ``point_count`` visits. Each visit stamps a ``patch_size`` square of
    intensity 1; the plane is copied to every channel.
    """
    rp = sys.render
    rng = stream(seed, "ifs-render")
    choices = rng.choice(len(sys.maps), size=rp.burn_in + rp.point_count, p=sys.probabilities)
    with np.errstate(over="ignore", invalid="ignore"):
        xs, ys = _chaos_orbit(sys.coefficient_array(), choices.astype(np.int64), rp.burn_in)
    ok = np.isfinite(xs) & np.isfinite(ys)
    xs, ys = xs[ok], ys[ok]
    if rp.frame is None:
        if xs.size == 0:
            raise EmptyRenderError("orbit diverged; no finite points to render")
        x0, x1, y0, y1 = xs.min(), xs.max(), ys.min(), ys.max()
    else:
        x0, x1, y0, y1 = rp.frame
        inside = (xs >= x0) & (xs <= x1) & (ys >= y0) & (ys <= y1)
        xs, ys = xs[inside], ys[inside]
        if xs.size == 0:
            raise EmptyRenderError("orbit never visits the render frame")

    cols = _to_pixels(xs, x0, x1, rp.width)
    rows = _to_pixels(ys, y0, y1, rp.height)
    plane = np.zeros((rp.height, rp.width), dtype=bool)
    plane[rows, cols] = True
    if rp.patch_size == 3:
        padded = np.pad(plane, 1)
        stamped = np.zeros_like(plane)
        for dr in range(3):
            for dc in range(3):
                stamped |= padded[dr : dr + rp.height, dc : dc + rp.width]
        plane = stamped
    img = np.repeat(plane[:, :, None], rp.channels, axis=2)
    return img.astype(np.float32)


def fill_fraction(image: np.ndarray) -> float:
    """Fraction of occupied pixels in the first channel plane."""
    return float(np.count_nonzero(image[..., 0]) / image[..., 0].size)


def _random_system(rng: np.random.Generator, category_id: int, rp: RenderParams) -> IFSSystem:
    k = int(rng.integers(2, 5))
    coeffs = rng.uniform(-1.0, 1.0, size=(k, 6))
    det = np.abs(coeffs[:, 0] * coeffs[:, 3] - coeffs[:, 1] * coeffs[:, 2])
    if det.sum() < 1e-12:
        p = np.full(k, 1.0 / k)
    else:
        p = det / det.sum()
    maps = tuple(AffineMap(*map(float, row), float(pi)) for row, pi in zip(coeffs, p))
    return IFSSystem(maps=maps, category_id=category_id, render=rp)


def sample_category(seed: int, render_params: RenderParams | None = None, max_attempts: int = 1000) -> IFSSystem:
    """Draw a contractive IFS whose seed-0 render meets the fill threshold.

    Candidates are drawn from sub-streams ``(seed, attempt)`` until one is
    accepted, so the result is a pure function of ``(seed, render_params)``.
    """
    rp = render_params or RenderParams()
    for attempt in range(max_attempts):
        cand = _random_system(stream(seed, "ifs-category", attempt), int(seed), rp)
        if not cand.contractive:
            continue
        try:
            img = render(cand, 0)
        except EmptyRenderError:
            continue
        if fill_fraction(img) >= rp.fill_threshold:
            return cand
    raise ResamplingExhaustedError(f"no acceptable IFS for seed {seed} after {max_attempts} attempts")


def perturb_instance(sys: IFSSystem, param_index: int, w: float) -> IFSSystem:
    """Scale coefficient slot ``param_index`` (0..5 for a..f) of every map by ``w``.

    The result may fail the contraction check; callers test ``.contractive``
    and skip such instances.
    """
    if not isinstance(param_index, (int, np.integer)) or not 0 <= param_index < 6:
        raise FractalError(f"param_index must be in 0..5, got {param_index!r}")
    if not w > 0:
        raise FractalError(f"weighting factor must be positive, got {w}")
    name = PARAM_NAMES[param_index]
    maps = tuple(replace(m, **{name: getattr(m, name) * w}) for m in sys.maps)
    return replace(sys, maps=maps)


def instance_schedule(k: int) -> tuple[int, float, int]:
    """``(param_index, w, render_round)`` for instance number ``k``.

    Cycles the six slots fastest, then the 25 weights, then render rounds.
    """
    slot = k % 6
    w = float(INSTANCE_WEIGHTS[(k // 6) % len(INSTANCE_WEIGHTS)])
    return slot, w, k // (6 * len(INSTANCE_WEIGHTS))


def render_instance(sys: IFSSystem, k: int, seed: int) -> np.ndarray | None:
    """Render instance ``k`` of a category, or ``None`` if it must be skipped.

    Odd render rounds use the 3x3 patch, even rounds the 1x1 point render.
    """
    slot, w, rnd = instance_schedule(k)
    inst = perturb_instance(sys, slot, w)
    if not inst.contractive:
        return None
    inst = replace(inst, render=replace(inst.render, patch_size=3 if rnd % 2 else 1))
    try:
        return render(inst, derive_seed(seed, "ifs-instance-render", rnd))
    except EmptyRenderError:
        return None


def category_seeds(seed: int, num_categories: int) -> Sequence[int]:
    return [derive_seed(seed, "ifs-category-seed", i) for i in range(num_categories)]
