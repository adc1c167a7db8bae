"""Index structures turning scene graphs into batched tensor inputs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..scenegraph import NODE_KINDS, N_RELATIONS


class VocabularyError(ValueError):
    pass


@dataclass
class RelationGroup:
    """Edges of one relation, grouped by destination.

    ``dst_unique[local[i]]`` is the destination of edge ``i``; ``norm`` holds
    1 / |N_r(v)| per edge.
    """

    relation: int
    src: np.ndarray
    local: np.ndarray
    dst_unique: np.ndarray
    norm: np.ndarray


def relation_groups(edges, n_nodes):
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 3)
    if edges.size and (edges[:, :2].min() < 0 or edges[:, :2].max() >= n_nodes):
        raise IndexError(f"edge endpoint out of range for {n_nodes} nodes")
    groups = []
    if not edges.size:
        return groups
    order = np.lexsort((edges[:, 0], edges[:, 1], edges[:, 2]))
    e = edges[order]
    rels, starts = np.unique(e[:, 2], return_index=True)
    bounds = list(starts) + [len(e)]
    for r, lo, hi in zip(rels, bounds[:-1], bounds[1:]):
        if not 0 <= r < N_RELATIONS:
            raise IndexError(f"relation index {r} out of range")
        src, dst = e[lo:hi, 0].copy(), e[lo:hi, 1].copy()
        dst_unique, local, counts = np.unique(dst, return_inverse=True, return_counts=True)
        groups.append(RelationGroup(int(r), src, local.astype(np.int64), dst_unique,
                                    (1.0 / counts[local])[:, None]))
    return groups


@dataclass
class PreparedClip:
    """One clip's graph sequence flattened to arrays, built once and reused."""

    clip_id: str
    label: int
    kinds: np.ndarray         # node kind index per node, frames concatenated
    frame_ptr: np.ndarray     # (T + 1,) node offsets
    edges: np.ndarray         # (E, 3) with clip-level node indices
    node_ids: list            # per frame list of node ids
    node_kinds: list

    @property
    def n_frames(self):
        return len(self.frame_ptr) - 1


def prepare_clip(clip_id, label, graphs, vocab=NODE_KINDS):
    if not graphs:
        raise ValueError(f"clip {clip_id!r} has no graphs")
    index = {k: i for i, k in enumerate(vocab)}
    kinds, edges, ptr = [], [], [0]
    for t, g in enumerate(graphs):
        try:
            kinds.extend(index[k] for k in g.node_kinds)
        except KeyError as exc:
            raise VocabularyError(f"clip {clip_id!r} frame {t}: node kind {exc.args[0]!r} "
                                  f"not in vocabulary") from None
        e = np.asarray(g.edges, dtype=np.int64).reshape(-1, 3).copy()
        if e.size and (e[:, :2].min() < 0 or e[:, :2].max() >= g.n_nodes):
            raise IndexError(f"clip {clip_id!r} frame {t}: edge endpoint out of range")
        e[:, :2] += ptr[-1]
        edges.append(e)
        ptr.append(ptr[-1] + g.n_nodes)
    return PreparedClip(clip_id, int(label), np.array(kinds, dtype=np.int64),
                        np.array(ptr, dtype=np.int64), np.concatenate(edges),
                        [list(g.node_ids) for g in graphs], [list(g.node_kinds) for g in graphs])


@dataclass
class GraphBatch:
    kinds: np.ndarray
    graph_ptr: np.ndarray      # (G + 1,)
    node_graph: np.ndarray     # (N,)
    groups: list               # RelationGroup per relation present
    clip_graph_ptr: np.ndarray  # (B + 1,) graph offsets per clip
    lengths: np.ndarray        # (B,) frames per clip
    labels: np.ndarray         # (B,)
    clips: list

    @property
    def n_nodes(self):
        return len(self.kinds)

    @property
    def n_graphs(self):
        return len(self.graph_ptr) - 1

    @property
    def n_clips(self):
        return len(self.lengths)


def make_batch(prepared):
    kinds, edges, gptr, cptr = [], [], [0], [0]
    offset = 0
    for pc in prepared:
        kinds.append(pc.kinds)
        e = pc.edges.copy()
        e[:, :2] += offset
        edges.append(e)
        gptr.extend((pc.frame_ptr[1:] + offset).tolist())
        cptr.append(cptr[-1] + pc.n_frames)
        offset += len(pc.kinds)
    graph_ptr = np.array(gptr, dtype=np.int64)
    sizes = np.diff(graph_ptr)
    node_graph = np.repeat(np.arange(len(sizes), dtype=np.int64), sizes)
    all_edges = np.concatenate(edges) if edges else np.zeros((0, 3), dtype=np.int64)
    return GraphBatch(np.concatenate(kinds), graph_ptr, node_graph,
                      relation_groups(all_edges, offset), np.array(cptr, dtype=np.int64),
                      np.array([pc.n_frames for pc in prepared], dtype=np.int64),
                      np.array([pc.label for pc in prepared], dtype=np.int64), list(prepared))
