"""Synthetic range-Doppler datasets and the ``QRDS`` file format.

Layout, little-endian::

    magic b"QRDS", u16 version (1), u32 count, u16 N, u16 M, u64 seed
    per record:
        interfered map  N*M complex values as interleaved (re, im) float32
        clean map       same
        u16 target count, then (u16 row, u16 col) per ground-truth cell

The train, validation and test splits draw from independent child streams
of one ``numpy.random.SeedSequence``, so they never share scenes.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, DatasetError, ShapeError
from ..radar_sim import SceneRanges, sample_random_scene, synthesize
from ..rd import dft_2d

__all__ = ["Dataset", "SPLITS", "generate_split", "generate_dataset", "write_dataset", "read_dataset",
           "dataset_bytes", "split_path", "load_splits"]

MAGIC = b"QRDS"
VERSION = 1
SPLITS = ("train", "val", "test")
_HEADER = "<HIHHQ"


@dataclass
class Dataset:
    """Complex RD maps ``(count, N, M)`` with their ground-truth cells."""

    interfered: np.ndarray
    clean: np.ndarray
    ground_truth: list[list[tuple[int, int]]]
    seed: int = 0

    def __post_init__(self):
        if self.interfered.shape != self.clean.shape or self.interfered.ndim != 3:
            raise ShapeError(f"map stacks differ: {self.interfered.shape} vs {self.clean.shape}")
        if len(self.ground_truth) != len(self.interfered):
            raise ShapeError("one ground-truth list per snapshot is required")

    def __len__(self) -> int:
        return len(self.interfered)

    @property
    def shape(self) -> tuple[int, int]:
        return self.interfered.shape[1], self.interfered.shape[2]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.interfered[idx], self.clean[idx], [self.ground_truth[i] for i in idx], self.seed)


def _split_seeds(seed: int) -> dict[str, np.random.SeedSequence]:
    return dict(zip(SPLITS, np.random.SeedSequence(seed).spawn(len(SPLITS))))


def generate_split(ranges: SceneRanges, count: int, seed: int | np.random.SeedSequence,
                   window: str = "none") -> Dataset:
    """``count`` random scenes turned into interfered/clean RD maps."""
    if count < 1:
        raise ConfigurationError("count must be >= 1")
    rng = np.random.default_rng(seed)
    scene_seeds = rng.integers(0, 2**63, size=count)
    N, M = ranges.n_samples, ranges.n_ramps
    interfered = np.empty((count, N, M), dtype=np.complex64)
    clean = np.empty((count, N, M), dtype=np.complex64)
    gts = []
    for i, s in enumerate(scene_seeds):
        scene = sample_random_scene(ranges, int(s))
        c, x = synthesize(scene)
        clean[i] = dft_2d(c, window).data
        interfered[i] = dft_2d(x, window).data
        gts.append(scene.ground_truth)
    return Dataset(interfered, clean, gts, seed=seed if isinstance(seed, int) else 0)


def dataset_bytes(ds: Dataset) -> bytes:
    N, M = ds.shape
    if max(N, M) >= 2**16:
        raise DatasetError("map dimensions exceed the u16 header fields")
    parts = [MAGIC, struct.pack(_HEADER, VERSION, len(ds), N, M, ds.seed % 2**64)]
    for x, c, gt in zip(ds.interfered, ds.clean, ds.ground_truth):
        for m in (x, c):
            if not np.all(np.isfinite(m)):
                raise DatasetError("refusing to write non-finite map values")
            parts.append(np.ascontiguousarray(m, dtype="<c8").tobytes())
        parts.append(struct.pack("<H", len(gt)))
        parts.append(np.asarray(gt, dtype="<u2").reshape(-1, 2).tobytes())
    return b"".join(parts)


def write_dataset(ds: Dataset, path: str | os.PathLike) -> None:
    data = dataset_bytes(ds)
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise DatasetError(f"cannot write dataset {path}: {exc}") from exc


def read_dataset(path: str | os.PathLike) -> Dataset:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise DatasetError(f"cannot read dataset {path}: {exc}") from exc
    if data[:4] != MAGIC:
        raise DatasetError(f"{path}: not a QRDS file")
    hsize = struct.calcsize(_HEADER)
    if len(data) < 4 + hsize:
        raise DatasetError(f"{path}: truncated header")
    version, count, N, M, seed = struct.unpack_from(_HEADER, data, 4)
    if version != VERSION:
        raise DatasetError(f"{path}: unsupported version {version}")
    pos = 4 + hsize
    map_bytes = N * M * 8
    interfered = np.empty((count, N, M), dtype=np.complex64)
    clean = np.empty((count, N, M), dtype=np.complex64)
    gts = []
    try:
        for i in range(count):
            for dst in (interfered, clean):
                chunk = data[pos:pos + map_bytes]
                if len(chunk) != map_bytes:
                    raise DatasetError(f"{path}: truncated record {i}")
                dst[i] = np.frombuffer(chunk, dtype="<c8").reshape(N, M)
                pos += map_bytes
            (n,) = struct.unpack_from("<H", data, pos)
            pos += 2
            chunk = data[pos:pos + 4 * n]
            if len(chunk) != 4 * n:
                raise DatasetError(f"{path}: truncated record {i}")
            cells = np.frombuffer(chunk, dtype="<u2")
            pos += 4 * n
            gts.append([(int(r), int(c)) for r, c in cells.reshape(-1, 2)])
    except struct.error as exc:
        raise DatasetError(f"{path}: truncated record ({exc})") from exc
    if pos != len(data):
        raise DatasetError(f"{path}: record count does not match header ({len(data) - pos} trailing bytes)")
    if not (np.all(np.isfinite(interfered)) and np.all(np.isfinite(clean))):
        raise DatasetError(f"{path}: non-finite map values")
    return Dataset(interfered, clean, gts, seed=seed)


def split_path(directory: str | os.PathLike, split: str) -> str:
    return os.path.join(directory, f"{split}.qrds")


def generate_dataset(config, out_dir: str | os.PathLike | None = None) -> dict[str, Dataset]:
    """Generate the train/val/test splits of a :class:`DatasetConfig`; optionally write them."""
    seeds = _split_seeds(config.seed)
    counts = {"train": config.n_train, "val": config.n_val, "test": config.n_test}
    splits = {}
    for name in SPLITS:
        ds = generate_split(config.scene, counts[name], seeds[name])
        ds.seed = config.seed
        splits[name] = ds
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        for name, ds in splits.items():
            write_dataset(ds, split_path(out_dir, name))
    return splits


def load_splits(directory: str | os.PathLike) -> dict[str, Dataset]:
    return {name: read_dataset(split_path(directory, name)) for name in SPLITS}
