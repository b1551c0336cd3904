"""Networks fit random labels: a fixed 4-cell net memorizes RLRD.

Run: python demos/04_memorization.py [epochs]  (100 epochs on both datasets take about 15 minutes)
"""

# %%
import sys
from pathlib import Path

import numpy as np
import torch

from unrealnas.analysis import convergence_epoch, plot_accuracy_curves
from unrealnas.datagen import build_rlrd, build_rlrn, sample_real_images
from unrealnas.engine import TrainConfig, train_fixed
from unrealnas.searchspace import derive_genotype

torch.set_num_threads(1)
OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)
epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 100

# %% Zero alpha: ties go to the lowest index, so every node keeps sep_conv_3x3 from inputs 0 and 1.
genotype = derive_genotype(np.zeros((14, 8)), np.zeros((14, 8)))
print(genotype.normal)

# %% No weight decay, so nothing holds the network back from memorizing.
hyper = TrainConfig(channels=8, cells=4, batch_size=32, lr=0.05, weight_decay=0.0, eval_val=False)
reports = {}
for name, ds in [
    ("RLRD", build_rlrd(sample_real_images(500, seed=0), d_rand=10, seed=0, source="sklearn-photos")),
    ("RLRN", build_rlrn(500, d_rand=10, seed=0)),
]:
    reports[name] = train_fixed(genotype, ds, epochs, hyper, label=name)
    final = reports[name].final["train_acc"]
    print(f"{name}: final train accuracy {final:.3f}, converged at epoch {convergence_epoch(reports[name])}")

# %%
plot_accuracy_curves(reports, OUT / "memorization.svg")
print("wrote", OUT / "memorization.svg")
