from hspk.data.checkpoint import load_checkpoint, save_checkpoint
from hspk.data.dataset import (
    PUBLISHED_SPLIT,
    SPLITS,
    Dataset,
    build_dataset,
    compose_perturbed,
    generate_labels,
    regenerate_record,
    split_counts,
)
from hspk.data.export import read_csv, read_pgm, write_csv, write_pgm
from hspk.data.npyio import read_npy, read_npy_archive, read_npz, write_npy
from hspk.data.synthetic import gen_synthetic_labels

__all__ = [
    "PUBLISHED_SPLIT",
    "SPLITS",
    "Dataset",
    "build_dataset",
    "compose_perturbed",
    "gen_synthetic_labels",
    "generate_labels",
    "load_checkpoint",
    "read_csv",
    "read_npy",
    "read_npy_archive",
    "read_npz",
    "read_pgm",
    "regenerate_record",
    "save_checkpoint",
    "split_counts",
    "write_csv",
    "write_npy",
    "write_pgm",
]
