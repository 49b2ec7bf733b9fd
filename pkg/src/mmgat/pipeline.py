"""Patch encoders, segmentation decoders and the Dice objective.

A grid of side ``S`` is cut into non-overlapping ``patch x patch`` tiles, so
the node feature length is ``F = (S / patch)**2``: one feature per tile
position, one node per encoder channel.  Encoders are a two-layer MLP applied
to each tile (a strided convolution in disguise); decoders apply a two-layer
MLP to the stack of node values at each tile and emit per-pixel class logits
for that tile.

Pixels inside the pipeline are kept in *tile order*: tile-major, then
row-major inside the tile.  :func:`to_tiles` and :func:`from_tiles` convert.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .hetgat import HetGatConfig, HetGatParams, init_hetgat_params, layer_forward
from .topology import GraphSpec, ModalityMask

DICE_EPS = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    num_modalities: int = 4
    basic_per_modality: int = 2
    virtual_per_modality: int = 1
    grid: int = 16
    patch: int = 1
    num_classes: int = 5
    enc_hidden: int = 8
    dec_hidden: int = 16
    gat: HetGatConfig = field(default_factory=HetGatConfig)

    def __post_init__(self):
        if self.grid < 1 or self.patch < 1 or self.grid % self.patch:
            raise ValueError(f"grid {self.grid} must be a positive multiple of patch {self.patch}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.enc_hidden < 1 or self.dec_hidden < 1:
            raise ValueError("hidden widths must be >= 1")
        self.spec  # validates the graph fields

    @property
    def feature_len(self) -> int:
        return (self.grid // self.patch) ** 2

    @property
    def spec(self) -> GraphSpec:
        return GraphSpec(self.num_modalities, self.basic_per_modality,
                         self.virtual_per_modality, self.feature_len)

    def hetgat(self, tensors: Mapping) -> HetGatParams:
        return HetGatParams(tensors, self.spec, self.gat)

    def with_gat(self, **changes) -> "ModelConfig":
        return replace(self, gat=replace(self.gat, **changes))


# -- layout -------------------------------------------------------------------

def to_tiles(grid: np.ndarray, patch: int) -> np.ndarray:
    """[S x S (x ...)] -> [tiles x patch*patch (x ...)]."""
    s = grid.shape[0]
    t = s // patch
    rest = grid.shape[2:]
    tiles = grid.reshape(t, patch, t, patch, *rest).swapaxes(1, 2)
    return tiles.reshape(t * t, patch * patch, *rest)


def from_tiles(tiles: np.ndarray, grid: int, patch: int) -> np.ndarray:
    """Inverse of :func:`to_tiles`."""
    t = grid // patch
    rest = tiles.shape[2:]
    return tiles.reshape(t, t, patch, patch, *rest).swapaxes(1, 2).reshape(grid, grid, *rest)


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError(f"labels must lie in [0, {num_classes})")
    return np.eye(num_classes)[labels]


# -- parameters ------------------------------------------------------------------

def _dense(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=(fan_in, fan_out))


def _mlp(prefix: str, rng, n_in: int, hidden: int, n_out: int) -> dict[str, np.ndarray]:
    return {f"{prefix}/w1": _dense(rng, n_in, hidden), f"{prefix}/b1": np.zeros((1, hidden)),
            f"{prefix}/w2": _dense(rng, hidden, n_out), f"{prefix}/b2": np.zeros((1, n_out))}


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """All trainable tensors, keyed by checkpoint name."""
    spec = cfg.spec
    px = cfg.patch * cfg.patch
    out = init_hetgat_params(spec, cfg.gat, rng)
    for m in range(spec.num_modalities):
        out.update(_mlp(f"enc/{m}", rng, px, cfg.enc_hidden, spec.basic_per_modality))
    for m in range(spec.num_modalities):
        out.update(_mlp(f"dec_s/{m}", rng, spec.nodes_per_modality, cfg.dec_hidden,
                        px * cfg.num_classes))
    out.update(_mlp("dec_mm", rng, spec.num_nodes, cfg.dec_hidden, px * cfg.num_classes))
    return out


def param_group(name: str) -> str:
    """Coarse group used in reports: W, a, p, enc, dec_s or dec_mm."""
    parts = name.split("/")
    return parts[1] if parts[0].startswith("L") and parts[0][1:].isdigit() else parts[0]


# -- network pieces --------------------------------------------------------------

def _mlp_apply(x, params: Mapping, prefix: str) -> Var:
    h = ad.elu(x @ params[f"{prefix}/w1"] + params[f"{prefix}/b1"])
    return h @ params[f"{prefix}/w2"] + params[f"{prefix}/b2"]


def encode(image: np.ndarray, params: Mapping, cfg: ModelConfig, modality: int) -> Var:
    """Grid [S x S] of one modality -> basic node block [C x F]."""
    if image.shape != (cfg.grid, cfg.grid):
        raise ValueError(f"image shape {image.shape} != {(cfg.grid, cfg.grid)}")
    tiles = to_tiles(np.asarray(image, dtype=np.float64), cfg.patch)
    return _mlp_apply(tiles, params, f"enc/{modality}").T


def _decode(nodes, params: Mapping, cfg: ModelConfig, prefix: str) -> Var:
    logits = _mlp_apply(nodes.T, params, prefix)        # [tiles x px*L]
    logits = logits.reshape(cfg.feature_len * cfg.patch * cfg.patch, cfg.num_classes)
    return ad.softmax(logits, axis=-1)


def decode_specific(nodes, params: Mapping, cfg: ModelConfig, modality: int) -> Var:
    """[P x F] nodes of one modality -> class probabilities [pixels x L] (tile order)."""
    expected = (cfg.spec.nodes_per_modality, cfg.feature_len)
    if tuple(nodes.shape) != expected:
        raise ValueError(f"specific decoder input {nodes.shape} != {expected}")
    return _decode(nodes, params, cfg, f"dec_s/{modality}")


def decode_multimodal(nodes, params: Mapping, cfg: ModelConfig) -> Var:
    """[N*P x F] GAT-updated nodes -> class probabilities [pixels x L] (tile order)."""
    expected = (cfg.spec.num_nodes, cfg.feature_len)
    if tuple(nodes.shape) != expected:
        raise ValueError(f"multimodal decoder input {nodes.shape} != {expected}")
    return _decode(nodes, params, cfg, "dec_mm")


def segmentation_map(probs, cfg: ModelConfig) -> np.ndarray:
    """Tile-order probabilities -> [S x S x L] grid."""
    value = probs.value if isinstance(probs, Var) else np.asarray(probs)
    tiles = value.reshape(cfg.feature_len, cfg.patch * cfg.patch, cfg.num_classes)
    return from_tiles(tiles, cfg.grid, cfg.patch)


def dice_loss(probs, truth: np.ndarray, eps: float = DICE_EPS) -> Var:
    """Soft Dice loss averaged over classes.

    ``probs`` and ``truth`` are [pixels x L]; ``truth`` is one-hot.
    """
    truth = np.asarray(truth, dtype=np.float64)
    if tuple(probs.shape) != truth.shape:
        raise ValueError(f"prediction {probs.shape} and truth {truth.shape} differ")
    inter = (probs * truth).sum(axis=0)
    denom = probs.sum(axis=0) + (truth.sum(axis=0) + eps)
    dice = (inter * 2.0 + eps) / denom
    return 1.0 - dice.sum() * (1.0 / truth.shape[1])


# -- full objective -----------------------------------------------------------------

@dataclass
class LossTerms:
    total: Var
    specific: list[Var]
    multimodal: Var

    def breakdown(self) -> dict[str, float]:
        out = {f"spec_{m}": float(t.value) for m, t in enumerate(self.specific)}
        out["multimodal"] = float(self.multimodal.value)
        out["total"] = float(self.total.value)
        return out


def tile_truth(labels: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    return to_tiles(one_hot(labels, cfg.num_classes), cfg.patch).reshape(-1, cfg.num_classes)


def total_loss(images: np.ndarray, labels: np.ndarray, mask: ModalityMask,
               params: Mapping, cfg: ModelConfig, static_graph: bool = False) -> LossTerms:
    """Specific-decoder Dice terms on full encoder features plus the
    multimodal Dice term on the masked graph pathway."""
    spec = cfg.spec
    truth = tile_truth(labels, cfg)
    hg = cfg.hetgat(params)
    feats = [encode(images[m], params, cfg, m) for m in range(spec.num_modalities)]
    specific = []
    for m, f in enumerate(feats):
        ext = ad.concat([f, hg.p(m)], axis=0) if spec.virtual_per_modality else f
        specific.append(dice_loss(decode_specific(ext, params, cfg, m), truth))
    updated = layer_forward(feats, mask, hg, static_graph=static_graph)
    multimodal = dice_loss(decode_multimodal(updated, params, cfg), truth)
    total = multimodal
    for term in specific:
        total = total + term
    return LossTerms(total, specific, multimodal)


def predict(images: np.ndarray, mask: ModalityMask, params: Mapping, cfg: ModelConfig,
            static_graph: bool = False) -> np.ndarray:
    """Inference: encoders of missing modalities are skipped entirely.

    Returns [S x S x L] class probabilities from the multimodal decoder.
    """
    hg = cfg.hetgat(params)
    feats = [encode(images[m], params, cfg, m) if mask.available[m] else None
             for m in range(cfg.num_modalities)]
    updated = layer_forward(feats, mask, hg, static_graph=static_graph)
    return segmentation_map(decode_multimodal(updated, params, cfg), cfg)
