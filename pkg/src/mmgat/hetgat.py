"""Heterogeneous graph attention over basic and virtual modality nodes.

Parameters live in a flat ``dict[str, ndarray]`` so they can be checkpointed,
optimised and perturbed by name:

``W/k/m``  projection of head ``k`` for nodes owned by modality ``m`` [F_out x F_in]
``a/k/m``  attention vector of head ``k`` for queries of modality ``m`` [1 x 2 F_out]
``p/m``    virtual nodes of modality ``m`` [C_p x F_in], zero at initialisation

Layers after the first carry an ``L{l}/`` prefix on ``W`` and ``a``.  With
``homogeneous=True`` only the ``m = 0`` tensors exist and every modality
reads them; this is the standard shared-parameter GAT.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .topology import GraphSpec, ModalityMask, adjacency_for, build_full_adjacency

MASK_MODES = ("soft", "hard")


@dataclass(frozen=True)
class HetGatConfig:
    heads: int = 2
    f_out: int | None = None  # defaults to the input feature length
    layers: int = 1
    activation: str = "elu"
    slope: float = 0.2
    mask_mode: str = "soft"
    soft_logit: float = -1e4
    homogeneous: bool = False
    init: str = "identity"  # "identity" (+ small noise) or "glorot"
    init_scale: float = 0.05

    def __post_init__(self):
        if self.heads < 1:
            raise ValueError(f"heads must be >= 1, got {self.heads}")
        if self.layers < 1:
            raise ValueError(f"layers must be >= 1, got {self.layers}")
        if self.activation not in ad.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.mask_mode not in MASK_MODES:
            raise ValueError(f"mask_mode must be one of {MASK_MODES}, got {self.mask_mode!r}")
        if not 0.0 < self.slope < 1.0:
            raise ValueError(f"slope must lie in (0, 1), got {self.slope}")
        if self.init not in ("identity", "glorot"):
            raise ValueError(f"unknown init {self.init!r}")

    def out_len(self, spec: GraphSpec) -> int:
        return self.f_out or spec.feature_len


def _prefix(layer: int) -> str:
    return "" if layer == 0 else f"L{layer}/"


def w_name(k: int, m: int, layer: int = 0) -> str:
    return f"{_prefix(layer)}W/{k}/{m}"


def a_name(k: int, m: int, layer: int = 0) -> str:
    return f"{_prefix(layer)}a/{k}/{m}"


def p_name(m: int) -> str:
    return f"p/{m}"


class HetGatParams:
    """Name-based view over a parameter mapping (arrays or tape variables)."""

    def __init__(self, tensors: Mapping[str, "Var | np.ndarray"], spec: GraphSpec,
                 cfg: HetGatConfig):
        self.tensors = tensors
        self.spec = spec
        self.cfg = cfg

    def _owner(self, m: int) -> int:
        return 0 if self.cfg.homogeneous else m

    def W(self, k: int, m: int, layer: int = 0):
        return self.tensors[w_name(k, self._owner(m), layer)]

    def a(self, k: int, m: int, layer: int = 0):
        return self.tensors[a_name(k, self._owner(m), layer)]

    def p(self, m: int):
        return self.tensors[p_name(m)]


def init_hetgat_params(spec: GraphSpec, cfg: HetGatConfig,
                       rng: np.random.Generator) -> dict[str, np.ndarray]:
    owners = 1 if cfg.homogeneous else spec.num_modalities
    f_out = cfg.out_len(spec)
    out: dict[str, np.ndarray] = {}
    f_in = spec.feature_len
    for layer in range(cfg.layers):
        for k in range(cfg.heads):
            for m in range(owners):
                if cfg.init == "identity":
                    W = np.eye(f_out, f_in) + cfg.init_scale / np.sqrt(f_in) * rng.standard_normal((f_out, f_in))
                else:
                    W = rng.normal(0.0, np.sqrt(2.0 / (f_in + f_out)), size=(f_out, f_in))
                out[w_name(k, m, layer)] = W
                out[a_name(k, m, layer)] = rng.normal(0.0, np.sqrt(1.0 / (2 * f_out)), size=(1, 2 * f_out))
        f_in = f_out
    for m in range(spec.num_modalities):
        out[p_name(m)] = np.zeros((spec.virtual_per_modality, spec.feature_len))
    return out


def attach_virtual_nodes(basic: Sequence, params: HetGatParams, spec: GraphSpec) -> Var:
    """Stack ``[v^m ; p^m]`` per modality into one node matrix [N*P x F]."""
    if len(basic) != spec.num_modalities:
        raise ValueError(f"expected {spec.num_modalities} basic blocks, got {len(basic)}")
    blocks = []
    for m, block in enumerate(basic):
        shape = tuple(getattr(block, "shape", np.shape(block)))
        if shape != (spec.basic_per_modality, spec.feature_len):
            raise ValueError(f"modality {m} block has shape {shape}, expected "
                             f"{(spec.basic_per_modality, spec.feature_len)}")
        blocks.append(block)
        if spec.virtual_per_modality:
            blocks.append(params.p(m))
    return ad.concat(blocks, axis=0)


def project(nodes, params: HetGatParams, head: int, layer: int = 0) -> Var:
    """Row ``i`` becomes ``W[head][m_i] v_i``."""
    spec = params.spec
    return ad.concat([nodes[spec.modality_rows(m)] @ params.W(head, m, layer).T
                      for m in range(spec.num_modalities)], axis=0)


def attention_logits(nodes, params: HetGatParams, head: int, layer: int = 0,
                     projected: Var | None = None) -> Var:
    """``LeakyReLU(a[m_i] . [W[m_i] v_i || W[m_j] v_j])`` for every node pair."""
    spec = params.spec
    z = projected if projected is not None else project(nodes, params, head, layer)
    f_out = z.shape[1]
    blocks = []
    for m in range(spec.num_modalities):
        a = params.a(head, m, layer)
        z_m = z[spec.modality_rows(m)]
        query = z_m @ a[:, :f_out].T          # [P x 1]
        key = a[:, f_out:] @ z.T              # [1 x N*P]
        blocks.append(query + key)
    return ad.leaky_relu(ad.concat(blocks, axis=0), params.cfg.slope)


def attention_weights(logits, adj: np.ndarray, mode: str = "soft",
                      soft_logit: float = -1e4) -> Var:
    if tuple(adj.shape) != tuple(logits.shape):
        raise ValueError(f"adjacency {adj.shape} does not match logits {logits.shape}")
    return ad.masked_softmax(logits, adj, mode=mode, soft_logit=soft_logit,
                             allow_empty_rows=True)


def multi_head_update(nodes, adj: np.ndarray, params: HetGatParams, layer: int = 0) -> Var:
    cfg = params.cfg
    acc = None
    for k in range(cfg.heads):
        z = project(nodes, params, k, layer)
        alpha = attention_weights(attention_logits(nodes, params, k, layer, projected=z),
                                  adj, cfg.mask_mode, cfg.soft_logit)
        msg = alpha @ z
        acc = msg if acc is None else acc + msg
    return ad.ACTIVATIONS[cfg.activation](acc * (1.0 / cfg.heads))


def zero_fill(basic: Sequence, mask: ModalityMask, spec: GraphSpec) -> list:
    """Replace the blocks of missing modalities (or ``None`` blocks) by zeros."""
    zeros = np.zeros((spec.basic_per_modality, spec.feature_len))
    return [zeros if (block is None or not mask.available[m]) else block
            for m, block in enumerate(basic)]


def layer_forward(basic: Sequence, mask: ModalityMask, params: HetGatParams,
                  static_graph: bool = False) -> Var:
    """Full graph stage: attach, zero-fill, dynamic adjacency, attention layers.

    ``static_graph`` keeps the full-modality adjacency regardless of the mask
    (dropped inputs are still zero-filled).
    """
    spec = params.spec
    if len(mask) != spec.num_modalities or mask.is_empty:
        raise ValueError(f"invalid mask {mask.bits()} for {spec.num_modalities} modalities")
    nodes = attach_virtual_nodes(zero_fill(basic, mask, spec), params, spec)
    adj = build_full_adjacency(spec) if static_graph else adjacency_for(spec, mask)
    for layer in range(params.cfg.layers):
        nodes = multi_head_update(nodes, adj, params, layer)
    return nodes
