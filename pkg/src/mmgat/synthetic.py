"""Synthetic multimodal segmentation data with complementary modalities.

Recipe (version 1), per sample:

1. Draw white noise on the ``S x S`` torus and blur it with a Gaussian of
   width ``smoothness`` into a random field ``u``.
2. Rank pixels by ``u``.  The top ``fractions[1]`` share becomes class 1, the
   next ``fractions[2]`` share class 2, and so on; the remainder is
   background.  Classes therefore form nested blobs with exact pixel counts.
3. Class ``c >= 1`` is assigned to modality ``(c - 1)``.  Modality ``m``
   shows its own class at intensity ``high``, every other foreground class at
   ``low`` and background at 0, plus i.i.d. Gaussian noise of std ``noise``.

Draw order from ``numpy.random.default_rng(seed)``: for each sample, the
field noise ``[S, S]`` then the image noise ``[N, S, S]``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

RECIPE_VERSION = 1


@dataclass(frozen=True)
class SyntheticConfig:
    grid: int = 16
    num_modalities: int = 4
    num_classes: int = 5
    num_samples: int = 32
    seed: int = 0
    noise: float = 0.0
    high: float = 1.0
    low: float = 0.3
    smoothness: float = 2.0
    fractions: tuple[float, ...] | None = None  # per class incl. background

    def __post_init__(self):
        if self.grid < 2:
            raise ValueError(f"grid must be >= 2, got {self.grid}")
        if self.num_modalities < 1:
            raise ValueError("num_modalities must be >= 1")
        if not 2 <= self.num_classes <= self.num_modalities + 1:
            raise ValueError(f"num_classes must lie in [2, num_modalities + 1], got "
                             f"{self.num_classes} with {self.num_modalities} modalities")
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        if self.noise < 0 or self.smoothness <= 0:
            raise ValueError("noise must be >= 0 and smoothness > 0")
        if self.fractions is not None:
            object.__setattr__(self, "fractions", tuple(float(f) for f in self.fractions))
            fr = np.asarray(self.fractions)
            if fr.size != self.num_classes or np.any(fr < 0) or not np.isclose(fr.sum(), 1.0):
                raise ValueError(f"fractions must be {self.num_classes} non-negative values summing to 1")

    def class_fractions(self) -> np.ndarray:
        if self.fractions is not None:
            return np.asarray(self.fractions)
        fg = min(0.1, 0.5 / (self.num_classes - 1))
        return np.array([1.0 - fg * (self.num_classes - 1)] + [fg] * (self.num_classes - 1))

    def modality_of_class(self, c: int) -> int | None:
        return None if c == 0 else c - 1


@dataclass
class SyntheticVolume:
    images: np.ndarray   # [N x S x S] float64
    labels: np.ndarray   # [S x S] int64


@dataclass
class Dataset:
    config: SyntheticConfig
    samples: list[SyntheticVolume] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i: int) -> SyntheticVolume:
        return self.samples[i]


def _label_map(field_: np.ndarray, fractions: np.ndarray) -> np.ndarray:
    n = field_.size
    stops = np.round(np.cumsum(fractions[1:]) * n).astype(int)
    order = np.argsort(-field_.ravel(), kind="stable")
    labels = np.zeros(n, dtype=np.int64)
    start = 0
    for c, stop in enumerate(stops, start=1):
        labels[order[start:stop]] = c
        start = stop
    return labels.reshape(field_.shape)


def render_images(labels: np.ndarray, cfg: SyntheticConfig, noise: np.ndarray) -> np.ndarray:
    images = np.zeros((cfg.num_modalities,) + labels.shape)
    fg = labels > 0
    for m in range(cfg.num_modalities):
        own = labels == m + 1
        images[m][fg & ~own] = cfg.low
        images[m][own] = cfg.high
    return images + cfg.noise * noise


def generate_synthetic(cfg: SyntheticConfig) -> Dataset:
    rng = np.random.default_rng(cfg.seed)
    fractions = cfg.class_fractions()
    shape = (cfg.grid, cfg.grid)
    samples = []
    for _ in range(cfg.num_samples):
        field_ = gaussian_filter(rng.standard_normal(shape), cfg.smoothness, mode="wrap")
        labels = _label_map(field_, fractions)
        noise = rng.standard_normal((cfg.num_modalities,) + shape)
        samples.append(SyntheticVolume(render_images(labels, cfg, noise), labels))
    return Dataset(cfg, samples)


# -- on-disk format ---------------------------------------------------------------
#
# <dir>/manifest.json     config fields + recipe_version + sample_count + layout
# <dir>/sample_00000.bin  N float64 LE grids [S x S] in modality order, then the
#                         label grid as int64 LE [S x S], all row-major

MANIFEST = "manifest.json"


def _sample_path(root: Path, i: int) -> Path:
    return root / f"sample_{i:05d}.bin"


def save_dataset(ds: Dataset, root: str | Path) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    cfg = ds.config
    manifest = {"recipe_version": RECIPE_VERSION, "sample_count": len(ds),
                "layout": "modality grids f8<, then labels i8<, row-major", **asdict(cfg)}
    (root / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for i, s in enumerate(ds.samples):
        blob = s.images.astype("<f8").tobytes() + s.labels.astype("<i8").tobytes()
        _sample_path(root, i).write_bytes(blob)
    return root


def load_dataset(root: str | Path) -> Dataset:
    root = Path(root)
    manifest = json.loads((root / MANIFEST).read_text())
    if manifest.pop("recipe_version") != RECIPE_VERSION:
        raise ValueError(f"unsupported dataset recipe in {root}")
    count = manifest.pop("sample_count")
    manifest.pop("layout", None)
    if manifest.get("fractions") is not None:
        manifest["fractions"] = tuple(manifest["fractions"])
    cfg = SyntheticConfig(**manifest)
    n, s = cfg.num_modalities, cfg.grid
    img_bytes = n * s * s * 8
    samples = []
    for i in range(count):
        blob = _sample_path(root, i).read_bytes()
        if len(blob) != img_bytes + s * s * 8:
            raise ValueError(f"sample {i} in {root} has {len(blob)} bytes")
        images = np.frombuffer(blob[:img_bytes], dtype="<f8").reshape(n, s, s).astype(np.float64)
        labels = np.frombuffer(blob[img_bytes:], dtype="<i8").reshape(s, s).astype(np.int64)
        samples.append(SyntheticVolume(images, labels))
    return Dataset(cfg, samples)
