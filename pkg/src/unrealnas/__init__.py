"""Architecture search on unreal data: fractal, random-label and noise datasets."""

from . import analysis, datagen, engine, fractal, searchspace
from .datagen import UnrealDataset, build_rlgd, build_rlrd, build_rlrn, load_dataset, make_split, save_dataset
from .engine import SearchConfig, TrainConfig, search, train_fixed
from .searchspace import PRIMITIVES, Genotype, build_network, build_supernet, derive_genotype

__version__ = "0.1.0"
