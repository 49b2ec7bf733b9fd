"""Node layout and rule-based adjacency for the multimodal graph.

Node indices are modality-major; inside a modality the ``C`` basic nodes come
first, followed by the ``C_p`` virtual nodes::

    flat = modality * P + (index          if kind == "basic"
                           C + index      if kind == "virtual")

with ``P = C + C_p``.  ``adj[i, j]`` is True when node ``j`` participates in
updating node ``i`` (an edge from ``j`` to ``i``).
"""

from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Literal, NamedTuple

import numpy as np

BASIC = "basic"
VIRTUAL = "virtual"
NodeKind = Literal["basic", "virtual"]


@dataclass(frozen=True)
class GraphSpec:
    num_modalities: int
    basic_per_modality: int
    virtual_per_modality: int
    feature_len: int = 1

    def __post_init__(self):
        if self.num_modalities < 1:
            raise ValueError(f"num_modalities must be >= 1, got {self.num_modalities}")
        if self.basic_per_modality < 1:
            raise ValueError(f"basic_per_modality must be >= 1, got {self.basic_per_modality}")
        if self.virtual_per_modality < 0:
            raise ValueError(f"virtual_per_modality must be >= 0, got {self.virtual_per_modality}")
        if self.feature_len < 1:
            raise ValueError(f"feature_len must be >= 1, got {self.feature_len}")

    @property
    def nodes_per_modality(self) -> int:
        return self.basic_per_modality + self.virtual_per_modality

    @property
    def num_nodes(self) -> int:
        return self.num_modalities * self.nodes_per_modality

    def modality_of(self) -> np.ndarray:
        """Modality index of every flat node."""
        return np.repeat(np.arange(self.num_modalities), self.nodes_per_modality)

    def is_basic(self) -> np.ndarray:
        """Boolean vector, True at basic-node positions."""
        one = np.zeros(self.nodes_per_modality, dtype=bool)
        one[: self.basic_per_modality] = True
        return np.tile(one, self.num_modalities)

    def basic_rows(self, modality: int) -> slice:
        start = modality * self.nodes_per_modality
        return slice(start, start + self.basic_per_modality)

    def virtual_rows(self, modality: int) -> slice:
        start = modality * self.nodes_per_modality + self.basic_per_modality
        return slice(start, start + self.virtual_per_modality)

    def modality_rows(self, modality: int) -> slice:
        start = modality * self.nodes_per_modality
        return slice(start, start + self.nodes_per_modality)


class NodeId(NamedTuple):
    modality: int
    kind: NodeKind
    index: int


def flat_index(spec: GraphSpec, node: NodeId) -> int:
    limit = spec.basic_per_modality if node.kind == BASIC else spec.virtual_per_modality
    if not 0 <= node.modality < spec.num_modalities or not 0 <= node.index < limit:
        raise IndexError(f"{node} is outside {spec}")
    offset = node.index if node.kind == BASIC else spec.basic_per_modality + node.index
    return node.modality * spec.nodes_per_modality + offset


def node_id(spec: GraphSpec, flat: int) -> NodeId:
    if not 0 <= flat < spec.num_nodes:
        raise IndexError(f"flat index {flat} outside [0, {spec.num_nodes})")
    modality, offset = divmod(flat, spec.nodes_per_modality)
    if offset < spec.basic_per_modality:
        return NodeId(modality, BASIC, offset)
    return NodeId(modality, VIRTUAL, offset - spec.basic_per_modality)


@dataclass(frozen=True)
class ModalityMask:
    """Availability bits, one per modality."""

    available: tuple[bool, ...]

    def __post_init__(self):
        object.__setattr__(self, "available", tuple(bool(b) for b in self.available))

    @classmethod
    def full(cls, n: int) -> "ModalityMask":
        return cls((True,) * n)

    @classmethod
    def from_present(cls, n: int, present: Iterable[int]) -> "ModalityMask":
        present = set(present)
        if not present <= set(range(n)):
            raise ValueError(f"modalities {sorted(present)} out of range for n={n}")
        return cls(tuple(m in present for m in range(n)))

    def __len__(self) -> int:
        return len(self.available)

    @property
    def present(self) -> tuple[int, ...]:
        return tuple(m for m, ok in enumerate(self.available) if ok)

    @property
    def missing(self) -> tuple[int, ...]:
        return tuple(m for m, ok in enumerate(self.available) if not ok)

    @property
    def is_full(self) -> bool:
        return all(self.available)

    @property
    def is_empty(self) -> bool:
        return not any(self.available)

    def label(self) -> str:
        """Filled/hollow circle string in modality order, e.g. '●○○●'."""
        return "".join("●" if ok else "○" for ok in self.available)

    def bits(self) -> str:
        return "".join("1" if ok else "0" for ok in self.available)


def build_full_adjacency(spec: GraphSpec) -> np.ndarray:
    """Full-modality edge matrix."""
    mod = spec.modality_of()
    basic = spec.is_basic()
    within = np.tile(np.arange(spec.nodes_per_modality), spec.num_modalities)

    same_mod = mod[:, None] == mod[None, :]
    both_basic = basic[:, None] & basic[None, :]
    corresponding = both_basic & (within[:, None] == within[None, :])
    # basic i receives from virtual j of any modality; virtual receives only from its own modality
    basic_from_virtual = basic[:, None] & ~basic[None, :]
    adj = same_mod | corresponding | basic_from_virtual
    adj.setflags(write=False)
    return adj


def apply_modality_mask(adj: np.ndarray, mask: ModalityMask, spec: GraphSpec) -> np.ndarray:
    """Cut every outgoing edge of the basic nodes of missing modalities.

    Incoming edges of the dropped nodes are kept, so they are still
    reconstructed from the available modalities and from virtual nodes.
    Virtual nodes are never disconnected.
    """
    if len(mask) != spec.num_modalities:
        raise ValueError(f"mask has {len(mask)} bits, spec has {spec.num_modalities} modalities")
    if mask.is_empty:
        raise ValueError("at least one modality must be available")
    if adj.shape != (spec.num_nodes, spec.num_nodes):
        raise ValueError(f"adjacency shape {adj.shape} does not match {spec.num_nodes} nodes")
    out = np.array(adj, dtype=bool, copy=True)
    out[:, dropped_basic(spec, mask)] = False
    out.setflags(write=False)
    return out


def dropped_basic(spec: GraphSpec, mask: ModalityMask) -> np.ndarray:
    """Boolean vector marking basic nodes that belong to missing modalities."""
    missing = ~np.asarray(mask.available, dtype=bool)
    return missing[spec.modality_of()] & spec.is_basic()


def adjacency_for(spec: GraphSpec, mask: ModalityMask | None = None) -> np.ndarray:
    adj = build_full_adjacency(spec)
    if mask is None or mask.is_full:
        return adj
    return apply_modality_mask(adj, mask, spec)


def in_neighborhood(adj: np.ndarray, spec: GraphSpec, node: NodeId) -> set[NodeId]:
    i = flat_index(spec, node)
    return {node_id(spec, int(j)) for j in np.flatnonzero(adj[i])}


def enumerate_subsets(n: int) -> list[ModalityMask]:
    """All non-empty masks: singles first, then pairs, triples, ..., full set.

    Within one size the order is lexicographic in modality index, which is
    the row order of the usual missing-modality results table.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return [ModalityMask.from_present(n, combo)
            for size in range(1, n + 1)
            for combo in itertools.combinations(range(n), size)]


# -- fixture export ----------------------------------------------------------

def to_text(adj: np.ndarray) -> str:
    return "\n".join("".join("1" if v else "0" for v in row) for row in adj) + "\n"


def from_text(text: str) -> np.ndarray:
    rows = [line.strip() for line in text.splitlines() if line.strip()]
    adj = np.array([[c == "1" for c in row] for row in rows], dtype=bool)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ValueError(f"adjacency text is not square: {adj.shape}")
    return adj


def to_bits(adj: np.ndarray) -> bytes:
    """uint32 LE node count, then each row packed LSB-first, padded to a byte."""
    n = adj.shape[0]
    packed = np.packbits(np.asarray(adj, dtype=bool), axis=1, bitorder="little")
    return struct.pack("<I", n) + packed.tobytes()


def from_bits(blob: bytes) -> np.ndarray:
    (n,) = struct.unpack_from("<I", blob)
    row_bytes = (n + 7) // 8
    body = np.frombuffer(blob, dtype=np.uint8, offset=4)
    if body.size != n * row_bytes:
        raise ValueError(f"expected {n * row_bytes} payload bytes, got {body.size}")
    bits = np.unpackbits(body.reshape(n, row_bytes), axis=1, bitorder="little")
    return bits[:, :n].astype(bool)


def save_adjacency(adj: np.ndarray, path: str | Path) -> None:
    path = Path(path)
    if path.suffix == ".txt":
        path.write_text(to_text(adj))
    else:
        path.write_bytes(to_bits(adj))


def load_adjacency(path: str | Path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".txt":
        return from_text(path.read_text())
    return from_bits(path.read_bytes())
