"""A DARTS-style search on random noise with random labels, small enough for a laptop.

Run: python demos/03_micro_search.py  (about 2 minutes on one core)
"""

# %%
from pathlib import Path

import torch

from unrealnas.analysis import plot_skip_dynamics
from unrealnas.datagen import build_rlrn, make_split
from unrealnas.engine import SearchConfig, save_checkpoint, search
from unrealnas.searchspace import CellSpec, build_supernet, count_op, save_genotype

torch.set_num_threads(1)
OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

# %% 200 noise images, 10 random classes; a 3-cell supernet with 2 nodes per cell.
ds = build_rlrn(200, d_rand=10, seed=0)
net = build_supernet(CellSpec(steps=2), channels=4, cells=3, num_classes=10, seed=0)
cfg = SearchConfig.for_kind("RLRN", warmup_epochs=5, search_epochs=20, batch_size=64)

# %% Warm-up trains weights only; afterwards alpha and W alternate per batch.
genotype, trace = search(net, make_split(ds), cfg)
for rec in trace:
    print(f"epoch {rec.epoch:2d} {rec.phase:6s} lr={rec.lr:.4f} train_acc={rec.train_acc:.3f} skip={rec.skip_count}")

# %%
print("normal cell:", genotype.normal)
print("reduce cell:", genotype.reduce)
print("skip connections in the normal cell:", count_op(genotype, "skip_connect", steps=2))

save_genotype(genotype, OUT / "genotype.json")
trace.write(OUT / "trace.ndjson")
save_checkpoint(OUT / "checkpoint", net, cfg)
plot_skip_dynamics({"RLRN": trace}, OUT / "skip_dynamics.svg")
print("wrote", OUT / "genotype.json", OUT / "skip_dynamics.svg")
