"""Spatio-temporal risk network: relational graph convolutions, attention
pooling and readout per frame, an LSTM over frames, and an MLP risk head."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .. import numcore as nc
from ..numcore import Tensor, ceil_ratio, kernels
from ..scenegraph import NODE_KINDS, N_RELATIONS, Relation
from .batch import GraphBatch, PreparedClip, make_batch, relation_groups

POOLING = ("none", "topk", "sagpool")
READOUTS = ("sum", "mean", "max")
TEMPORAL = ("mean", "lstm_mean", "lstm_last", "lstm_attn")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture. ``n_mrgcn_layers = 0`` swaps the relational stack for a
    single per-node linear layer of width ``hidden``.

    Temporal modes: ``mean`` averages the per-frame graph embeddings with no
    recurrence, ``lstm_mean`` averages the LSTM hidden states, ``lstm_last``
    keeps the final hidden state and ``lstm_attn`` adds attention and a
    one-step decoder."""

    n_mrgcn_layers: int = 2
    hidden: int = 100
    pooling: str = "sagpool"
    pool_ratio: float = 0.5
    readout: str = "sum"
    temporal: str = "lstm_attn"
    lstm_hidden: int = 100
    dropout: float = 0.2
    vocab: tuple = NODE_KINDS

    def __post_init__(self):
        object.__setattr__(self, "vocab", tuple(self.vocab))
        if self.n_mrgcn_layers not in (0, 1, 2, 3):
            raise ValueError(f"n_mrgcn_layers must be 0..3, got {self.n_mrgcn_layers}")
        if self.pooling not in POOLING:
            raise ValueError(f"pooling must be one of {POOLING}")
        if not 0.0 < self.pool_ratio <= 1.0:
            raise ValueError("pool_ratio must be in (0, 1]")
        if self.readout not in READOUTS:
            raise ValueError(f"readout must be one of {READOUTS}")
        if self.temporal not in TEMPORAL:
            raise ValueError(f"temporal must be one of {TEMPORAL}")
        if self.hidden < 1 or self.lstm_hidden < 1:
            raise ValueError("layer widths must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def spatial_width(self):
        return len(self.vocab) + max(self.n_mrgcn_layers, 1) * self.hidden

    @property
    def z_width(self):
        return self.spatial_width if self.temporal == "mean" else self.lstm_hidden

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["vocab"] = list(self.vocab)
        return d


# ---------------------------------------------------------------- building blocks

def init_node_embeddings(graph, vocab=NODE_KINDS):
    from .batch import VocabularyError

    index = {k: i for i, k in enumerate(vocab)}
    x = np.zeros((graph.n_nodes, len(vocab)))
    for v, kind in enumerate(graph.node_kinds):
        if kind not in index:
            raise VocabularyError(f"node kind {kind!r} not in vocabulary")
        x[v, index[kind]] = 1.0
    return x


class RelationalConv:
    """h'_v = Phi_0 h_v + sum_r mean_{u in N_r(v)} Phi_r h_u (+ bias)."""

    def __init__(self, params, prefix, d_in, d_out, rng, bias=True):
        self.d_in, self.d_out = d_in, d_out
        limit = np.sqrt(6.0 / (d_in + d_out))
        self.self_weight = params.add(f"{prefix}.self", rng.uniform(-limit, limit, (d_in, d_out)))
        self.rel_weights = [params.add(f"{prefix}.rel.{Relation(r).name}",
                                       rng.uniform(-limit, limit, (d_in, d_out)))
                            for r in range(N_RELATIONS)]
        self.bias = params.add(f"{prefix}.bias", np.zeros(d_out)) if bias else None

    def __call__(self, x, groups):
        if x.shape[1] != self.d_in:
            raise nc.DimensionError(f"feature width {x.shape[1]} != layer input {self.d_in}")
        out = nc.matmul(x, self.self_weight)
        if self.bias is not None:
            out = out + self.bias
        msgs, targets = [], []
        for grp in groups:
            rows = nc.index_select(x, grp.src) * grp.norm
            agg = nc.scatter_add(Tensor(np.zeros((len(grp.dst_unique), self.d_in))), grp.local, rows)
            msgs.append(nc.matmul(agg, self.rel_weights[grp.relation]))
            targets.append(grp.dst_unique)
        if msgs:
            out = nc.scatter_add(out, np.concatenate(targets), nc.concat(msgs, axis=0))
        return out


def mrgcn_forward(layer: RelationalConv, x, edges, activation=None):
    """One relational convolution over a single graph's (src, dst, rel) edges."""
    x = nc.as_tensor(x)
    out = layer(x, relation_groups(edges, x.shape[0]))
    return activation(out) if activation is not None else out


def spatial_concat(blocks):
    n = {b.shape[0] for b in blocks}
    if len(n) != 1:
        raise ValueError(f"node counts differ across layers: {sorted(n)}")
    return blocks[0] if len(blocks) == 1 else nc.concat(blocks, axis=1)


def topk_select(alpha, graph_ptr, ratio):
    """Indices kept per graph: ceil(ratio * n_g) highest scores, ties to lower index."""
    sizes = np.diff(graph_ptr)
    k = np.array([ceil_ratio(ratio, int(n)) for n in sizes], dtype=np.int64)
    return kernels.segment_topk(np.asarray(alpha, dtype=float).reshape(-1), graph_ptr, k)


def topk_pool(x_prop, edges, alpha, ratio):
    """Single-graph pooling: gated features of the kept nodes and their induced edges."""
    x_prop, alpha = nc.as_tensor(x_prop), nc.as_tensor(alpha)
    n = x_prop.shape[0]
    keep = topk_select(alpha.data, np.array([0, n]), ratio)
    gated = x_prop * nc.tanh(alpha.reshape(n, 1))
    x_pool = nc.index_select(gated, keep)
    relabel = np.full(n, -1, dtype=np.int64)
    relabel[keep] = np.arange(len(keep))
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 3)
    inside = (relabel[e[:, 0]] >= 0) & (relabel[e[:, 1]] >= 0)
    e_pool = np.c_[relabel[e[inside, 0]], relabel[e[inside, 1]], e[inside, 2]]
    return x_pool, e_pool, keep


def readout(x, mode, segments=None, n_segments=1):
    x = nc.as_tensor(x)
    if segments is None:
        segments = np.zeros(x.shape[0], dtype=np.int64)
    if mode == "sum":
        return nc.segment_sum(x, segments, n_segments)
    if mode == "mean":
        counts = np.bincount(segments, minlength=n_segments).astype(float)
        if np.any(counts == 0):
            raise ValueError("readout over an empty graph")
        return nc.segment_sum(x, segments, n_segments) * (1.0 / counts)[:, None]
    if mode == "max":
        return nc.segment_max(x, segments, n_segments)
    raise ValueError(f"unknown readout {mode!r}")


class LSTMCell:
    def __init__(self, params, prefix, d_in, hidden, rng):
        self.hidden = hidden
        k = 1.0 / np.sqrt(hidden)
        self.w_x = params.add(f"{prefix}.w_x", rng.uniform(-k, k, (d_in, 4 * hidden)))
        self.w_h = params.add(f"{prefix}.w_h", rng.uniform(-k, k, (hidden, 4 * hidden)))
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = 1.0  # forget gate starts open
        self.bias = params.add(f"{prefix}.bias", b)

    def project_inputs(self, x):
        return nc.matmul(x, self.w_x) + self.bias

    def step(self, xw, h, c):
        """One step from pre-projected inputs ``xw``; gates ordered i, f, o, g."""
        H = self.hidden
        gates = xw if h is None else xw + nc.matmul(h, self.w_h)
        sig = nc.sigmoid(gates[:, :3 * H])
        i, f, o = sig[:, :H], sig[:, H:2 * H], sig[:, 2 * H:]
        g = nc.tanh(gates[:, 3 * H:])
        c = i * g if c is None else f * c + i * g
        return o * nc.tanh(c), c


def temporal_encode(cell: LSTMCell, sequence):
    """Run the LSTM from a zero state over one (T, d) sequence; returns p and c lists."""
    xw = cell.project_inputs(nc.as_tensor(sequence))
    h = c = None
    ps, cs = [], []
    for t in range(xw.shape[0]):
        h, c = cell.step(xw[t:t + 1], h, c)
        ps.append(h)
        cs.append(c)
    return ps, cs


def segment_softmax(e, segments, n_segments):
    """Softmax of column ``e`` (n, 1) within each segment."""
    shift = np.full(n_segments, -np.inf)
    np.maximum.at(shift, segments, e.data[:, 0])
    ex = nc.exp(e - shift[segments][:, None])
    denom = nc.segment_sum(ex, segments, n_segments)
    return ex / nc.index_select(denom, segments)


# ---------------------------------------------------------------- parameters

class ParameterSet:
    def __init__(self):
        self._params = {}

    def add(self, name, value):
        if name in self._params:
            raise KeyError(f"duplicate parameter {name}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def n_scalars(self):
        return sum(p.size for p in self)


@dataclass
class AttentionTrace:
    clip_id: str
    alpha: list          # per frame: raw node scores (or None without pooling)
    selected: list       # per frame: bool mask of pooled nodes
    beta: list           # temporal attention weights (LSTM-attn only)
    node_ids: list
    node_kinds: list
    probs: np.ndarray


class RiskModel:
    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        self.params = p = ParameterSet()
        d0 = len(config.vocab)
        cfg = config
        if cfg.n_mrgcn_layers == 0:
            lim = np.sqrt(6.0 / (d0 + cfg.hidden))
            self.node_linear = (p.add("node_linear.weight", rng.uniform(-lim, lim, (d0, cfg.hidden))),
                                p.add("node_linear.bias", np.zeros(cfg.hidden)))
            self.convs = []
        else:
            widths = [d0] + [cfg.hidden] * cfg.n_mrgcn_layers
            self.convs = [RelationalConv(p, f"mrgcn.{l}", widths[l], widths[l + 1], rng)
                          for l in range(cfg.n_mrgcn_layers)]
        dp = cfg.spatial_width
        # Score weights start non-negative. Node features are non-negative, so
        # this ranks feature-rich nodes (ego, close neighbours) first and keeps
        # them from being pruned before their scores have learned anything.
        if cfg.pooling == "topk":
            self.pool_w = p.add("pool.topk.w", rng.uniform(0, 1, (dp, 1)) / np.sqrt(dp))
        elif cfg.pooling == "sagpool":
            self.pool_conv = RelationalConv(p, "pool.sag", dp, 1, rng)
            for w in [self.pool_conv.self_weight] + self.pool_conv.rel_weights:
                np.abs(w.data, out=w.data)
        H = cfg.lstm_hidden
        if cfg.temporal != "mean":
            self.encoder = LSTMCell(p, "lstm.encoder", dp, H, rng)
        if cfg.temporal == "lstm_attn":
            k = 1.0 / np.sqrt(H)
            self.w_init = p.add("attn.w_init", rng.uniform(-k, k, (H, H)))
            self.w_s = p.add("attn.w_s", rng.uniform(-k, k, (H, H)))
            self.w_p = p.add("attn.w_p", rng.uniform(-k, k, (H, H)))
            self.v_a = p.add("attn.v_a", rng.uniform(-k, k, (H, 1)))
            self.decoder = LSTMCell(p, "lstm.decoder", H, H, rng)
        dz = cfg.z_width
        lim = np.sqrt(6.0 / (dz + dz))
        self.head_w1 = p.add("head.w1", rng.uniform(-lim, lim, (dz, dz)))
        self.head_b1 = p.add("head.b1", np.zeros(dz))
        lim = np.sqrt(6.0 / (dz + 2))
        self.head_w2 = p.add("head.w2", rng.uniform(-lim, lim, (dz, 2)))
        self.head_b2 = p.add("head.b2", np.zeros(2))

    # ------------------------------------------------------------ spatial

    def spatial(self, batch: GraphBatch, training=False, rng=None):
        """Per-graph embeddings (G, spatial_width) plus pooling diagnostics."""
        cfg = self.config
        x0 = Tensor(np.eye(len(cfg.vocab))[batch.kinds])
        blocks = [x0]
        h = x0
        if cfg.n_mrgcn_layers == 0:
            w, b = self.node_linear
            h = nc.dropout(nc.relu(nc.matmul(h, w) + b), cfg.dropout, training, rng)
            blocks.append(h)
        for conv in self.convs:
            h = nc.dropout(nc.relu(conv(h, batch.groups)), cfg.dropout, training, rng)
            blocks.append(h)
        x_prop = spatial_concat(blocks)

        alpha, keep = None, None
        if cfg.pooling == "none":
            x_pool, seg = x_prop, batch.node_graph
        else:
            alpha = self.score_nodes(x_prop, batch.groups)
            keep = topk_select(alpha.data, batch.graph_ptr, cfg.pool_ratio)
            x_pool = nc.index_select(x_prop * nc.tanh(alpha), keep)
            seg = batch.node_graph[keep]
        h_graph = readout(x_pool, cfg.readout, seg, batch.n_graphs)
        return h_graph, alpha, keep

    def score_nodes(self, x_prop, groups):
        if self.config.pooling == "topk":
            w = self.pool_w
            norm = nc.reduce_sum(w * w)
            if norm.item() == 0.0:
                raise FloatingPointError("TopkPool projection vector has zero norm")
            return nc.matmul(x_prop, w) / nc.exp(nc.log(norm) * 0.5)
        return nc.tanh(self.pool_conv(x_prop, groups))

    # ------------------------------------------------------------ temporal

    def temporal(self, h_graph, lengths):
        """Clip embeddings Z (B, z_width) from per-frame embeddings stacked clip
        by clip, plus the per-clip temporal attention weights (or None)."""
        cfg = self.config
        lengths = np.asarray(lengths, dtype=np.int64)
        B = len(lengths)
        if cfg.temporal == "mean":
            return readout(h_graph, "mean", np.repeat(np.arange(B), lengths), B), None

        # packed sequences: clips sorted by length, active set shrinks over time
        order = np.argsort(-lengths, kind="stable")
        starts = (np.cumsum(lengths) - lengths)[order]
        sorted_len = lengths[order]
        xw = self.encoder.project_inputs(h_graph)
        h = c = None
        finals_h, finals_c, rows, row_clip = [], [], [], []
        for t in range(int(sorted_len[0])):
            n_t = int(np.sum(sorted_len > t))
            if h is not None and n_t < h.shape[0]:
                finals_h.append(h[n_t:])
                finals_c.append(c[n_t:])
                h, c = h[:n_t], c[:n_t]
            h, c = self.encoder.step(nc.index_select(xw, starts[:n_t] + t), h, c)
            rows.append(h)
            row_clip.append(np.arange(n_t))
        finals_h.append(h)
        finals_c.append(c)
        unsort = np.argsort(order, kind="stable")
        p_last = nc.index_select(nc.concat(finals_h[::-1], axis=0), unsort)
        if cfg.temporal == "lstm_last":
            return p_last, None
        p_flat = nc.concat(rows, axis=0)
        seg = order[np.concatenate(row_clip)]       # original clip index of each row
        if cfg.temporal == "lstm_mean":
            return readout(p_flat, "mean", seg, B), None

        c_last = nc.index_select(nc.concat(finals_c[::-1], axis=0), unsort)
        beta, q = self.attend(p_flat, seg, p_last)
        z, _ = self.decoder.step(self.decoder.project_inputs(q), p_last, c_last)
        # rows are time-major; recover per-clip beta in frame order
        t_of_row = np.concatenate([np.full(len(r), t) for t, r in enumerate(row_clip)])
        betas = []
        for b in range(B):
            m = seg == b
            betas.append(beta.data[m, 0][np.argsort(t_of_row[m], kind="stable")])
        return z, betas

    def attend(self, p_flat, seg, p_last):
        """Additive attention over hidden-state rows ``p_flat`` grouped by clip
        index ``seg``; returns (beta column, context q per clip)."""
        p_flat, p_last = nc.as_tensor(p_flat), nc.as_tensor(p_last)
        seg = np.asarray(seg, dtype=np.int64)
        B = p_last.shape[0]
        s0 = nc.tanh(nc.matmul(p_last, self.w_init))
        energy_in = nc.index_select(nc.matmul(s0, self.w_s), seg) + nc.matmul(p_flat, self.w_p)
        e = nc.matmul(nc.tanh(energy_in), self.v_a)
        beta = segment_softmax(e, seg, B)
        return beta, nc.segment_sum(p_flat * beta, seg, B)

    def head(self, z, training=False, rng=None):
        z = nc.dropout(z, self.config.dropout, training, rng)
        hidden = nc.relu(nc.matmul(z, self.head_w1) + self.head_b1)
        return nc.softmax(nc.matmul(hidden, self.head_w2) + self.head_b2, axis=1)

    # ------------------------------------------------------------ full passes

    def forward_batch(self, batch: GraphBatch, training=False, rng=None, trace=False):
        if training and rng is None:
            raise ValueError("training mode needs an rng for dropout")
        h_graph, alpha, keep = self.spatial(batch, training, rng)
        z, betas = self.temporal(h_graph, batch.lengths)
        probs = self.head(z, training, rng)
        if not trace:
            return probs
        return probs, self._traces(batch, probs, alpha, keep, betas)

    def _traces(self, batch, probs, alpha, keep, betas):
        mask = np.zeros(batch.n_nodes, dtype=bool)
        if keep is not None:
            mask[keep] = True
        traces = []
        gi = 0
        for b, pc in enumerate(batch.clips):
            al, sel = [], []
            for _ in range(pc.n_frames):
                lo, hi = batch.graph_ptr[gi], batch.graph_ptr[gi + 1]
                al.append(None if alpha is None else alpha.data[lo:hi, 0].copy())
                sel.append(mask[lo:hi].copy() if keep is not None else np.ones(hi - lo, dtype=bool))
                gi += 1
            traces.append(AttentionTrace(pc.clip_id, al, sel, None if betas is None else betas[b],
                                         pc.node_ids, pc.node_kinds, probs.data[b].copy()))
        return traces

    def forward_clip(self, prepared: PreparedClip, training=False, rng=None):
        """Returns (probabilities (2,), AttentionTrace) for one clip."""
        probs, traces = self.forward_batch(make_batch([prepared]), training, rng, trace=True)
        return probs[0], traces[0]

    def predict(self, prepared, batch_size=64):
        out = []
        with nc.no_grad():
            for i in range(0, len(prepared), batch_size):
                out.append(self.forward_batch(make_batch(prepared[i:i + batch_size])).data)
        return np.concatenate(out) if out else np.zeros((0, 2))


def weighted_cross_entropy(probs, labels, class_weights):
    """Mean over the batch of -w_c * ln(p_c) for the true class c."""
    labels = np.asarray(labels)
    if labels.ndim == 2:
        if not (np.all((labels == 0) | (labels == 1)) and np.all(labels.sum(axis=1) == 1)):
            raise ValueError("labels must be one-hot")
        labels = labels.argmax(axis=1)
    elif not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0/1 class indices")
    probs = nc.as_tensor(probs)
    onehot = np.eye(2)[labels]
    p_true = nc.reduce_sum(probs * onehot, axis=1)
    w = np.asarray(class_weights, dtype=float)[labels]
    return nc.reduce_mean(nc.log(nc.clamp_min(p_true, 1e-12)) * (-w))


def class_weights(labels):
    """Balanced weights N / (2 N_c); a class absent from ``labels`` gets weight 1."""
    labels = np.asarray(labels)
    n = len(labels)
    out = []
    for c in (0, 1):
        nc_ = int(np.sum(labels == c))
        out.append(n / (2.0 * nc_) if nc_ else 1.0)
    return np.array(out)
