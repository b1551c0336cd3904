"""Fractal categories from random iterated function systems.

Run: python demos/01_fractals.py  (a few seconds; writes demos/out/fractals.png)
"""

# %%
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from unrealnas.fractal import (
    AffineMap,
    IFSSystem,
    RenderParams,
    category_seeds,
    fill_fraction,
    render,
    render_instance,
    sample_category,
)

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

# %% A hand-written system first: three half-scale maps give the Sierpinski gasket.
third = 1 / 3
gasket = IFSSystem(
    (
        AffineMap(0.5, 0, 0, 0.5, 0.0, 0.0, third),
        AffineMap(0.5, 0, 0, 0.5, 0.5, 0.0, third),
        AffineMap(0.5, 0, 0, 0.5, 0.0, 0.5, 1 - 2 * third),
    ),
    category_id=-1,
    render=RenderParams(frame=(0, 1, 0, 1)),
)
img = render(gasket, seed=0)
print("gasket fill fraction:", round(fill_fraction(img), 3))

# %% Random categories. Each one is contractive and fills at least 20% of the frame.
seeds = category_seeds(0, 8)
cats = [sample_category(s) for s in seeds]
for c in cats:
    print(f"category {c.category_id}: {len(c.maps)} maps, fill {fill_fraction(render(c)):.2f}")

# %% Instances perturb one coefficient slot of every map; odd render rounds use 3x3 patches.
# A black tile is an instance skipped because the perturbation broke contraction.
fig, axes = plt.subplots(len(cats), 6, figsize=(6, len(cats)))
for row, (cat, seed) in enumerate(zip(cats, seeds)):
    for col, k in enumerate([0, 7, 33, 150, 157, 300]):
        inst = render_instance(cat, k, seed)
        axes[row, col].imshow(np.zeros((32, 32)) if inst is None else inst[..., 0], cmap="gray")
        axes[row, col].axis("off")
fig.savefig(OUT / "fractals.png", dpi=120)
print("wrote", OUT / "fractals.png")
