"""Pair-by-pair evaluation of the edge rules, independent of the vectorised builder.

Used by ``verify-adjacency`` and the test-suite as the reference for
:func:`mmgat.topology.build_full_adjacency` and
:func:`mmgat.topology.apply_modality_mask`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .topology import (BASIC, VIRTUAL, GraphSpec, ModalityMask, apply_modality_mask,
                       build_full_adjacency, enumerate_subsets)


def _nodes(spec: GraphSpec) -> list[tuple[int, str, int]]:
    out = []
    for m in range(spec.num_modalities):
        out += [(m, BASIC, c) for c in range(spec.basic_per_modality)]
        out += [(m, VIRTUAL, c) for c in range(spec.virtual_per_modality)]
    return out


def rule_table(spec: GraphSpec, mask: ModalityMask | None = None) -> np.ndarray:
    nodes = _nodes(spec)
    n = len(nodes)
    e = [[None] * n for _ in range(n)]
    for i, (m, kind_i, ci) in enumerate(nodes):
        for j, (k, kind_j, cj) in enumerate(nodes):
            if m == k:
                e[i][j] = e[j][i] = 1
            elif kind_i == BASIC and kind_j == BASIC:
                e[i][j] = e[j][i] = 1 if ci == cj else 0
            elif kind_i == BASIC and kind_j == VIRTUAL:
                e[i][j], e[j][i] = 1, 0
            elif kind_i == VIRTUAL and kind_j == BASIC:
                e[i][j], e[j][i] = 0, 1
            else:
                e[i][j] = e[j][i] = 0
    if mask is not None:
        for kk, (m, kind, _) in enumerate(nodes):
            if kind == BASIC and not mask.available[m]:
                for i in range(n):
                    e[i][kk] = 0
    return np.array(e, dtype=bool)


@dataclass
class Mismatch:
    mask: ModalityMask
    row: int
    col: int
    expected: bool
    got: bool


def verify(spec: GraphSpec, corrupt=None) -> list[Mismatch]:
    """First mismatch per mask (empty list when everything agrees).

    ``corrupt`` is a fault-injection hook ``(mask, adj) -> adj`` applied to
    the generated matrix before comparison.
    """
    full = build_full_adjacency(spec)
    out = []
    for mask in enumerate_subsets(spec.num_modalities):
        got = full if mask.is_full else apply_modality_mask(full, mask, spec)
        if corrupt is not None:
            got = corrupt(mask, np.array(got))
        want = rule_table(spec, mask)
        bad = np.argwhere(got != want)
        if bad.size:
            r, c = (int(v) for v in bad[0])
            out.append(Mismatch(mask, r, c, bool(want[r, c]), bool(got[r, c])))
    return out
