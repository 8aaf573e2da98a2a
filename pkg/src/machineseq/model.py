"""Geometry-aware dynamic graph transformer for operation-sequence prediction.

Encoder: per-timestep GAT with edge features over the in-process STL graph,
cross-attention fusion against the design graph, one-hot time encoding, a
fusion FFN, and attention pooling to one vector per timestep.  Decoder: a
causal transformer over the label history and the graph-embedding prefix with
dual classification heads (main / sub operation).

Two ablation variants are selectable through the config: a per-node FFN
encoder that ignores adjacency, and a bidirectional (unmasked) sequence
encoder that can see future graphs and labels.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError
from .graphs import DesignGraph, ProcessGraph, LAYOUT
from .synth import MAIN_OPS, SUB_OPS
from .tensor import Tensor

ENCODERS = ("gat", "nn")
DECODER_MODES = ("causal", "bidirectional")


@dataclass
class ModelConfig:
    d_latent: int = 64
    n_heads: int = 4
    n_decoder_layers: int = 2
    T_max: int = 16
    n_main_classes: int = len(MAIN_OPS)
    n_sub_classes: int = len(SUB_OPS)
    dropout: float = 0.1
    leaky_relu_slope: float = 0.2
    ffn_width: int = 128
    encoder: str = "gat"
    decoder_mode: str = "causal"
    d_process: int = LAYOUT.widths()[0]
    e_process: int = LAYOUT.widths()[1]
    d_design: int = LAYOUT.widths()[2]
    e_design: int = LAYOUT.widths()[3]

    def __post_init__(self):
        if self.d_latent % self.n_heads != 0:
            raise ConfigError(
                f"d_latent {self.d_latent} not divisible by n_heads {self.n_heads}")
        if self.encoder not in ENCODERS:
            raise ConfigError(f"encoder must be one of {ENCODERS}, got {self.encoder!r}")
        if self.decoder_mode not in DECODER_MODES:
            raise ConfigError(
                f"decoder_mode must be one of {DECODER_MODES}, got {self.decoder_mode!r}")
        for name in ("d_latent", "n_heads", "n_decoder_layers", "T_max", "ffn_width"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")

    @property
    def d_head(self):
        return self.d_latent // self.n_heads


# --------------------------------------------------------------------------
# Parameter store.

def _parameter_shapes(cfg: ModelConfig):
    """Ordered (name, shape, kind) list; kind in {weight, bias, embed}."""
    d = cfg.d_latent
    out = []
    if cfg.encoder == "gat":
        for dom, dn, de in (("proc", cfg.d_process, cfg.e_process),
                            ("design", cfg.d_design, cfg.e_design)):
            for m in range(cfg.n_heads):
                out.append((f"gat.{dom}.h{m}.Wn", (dn, d), "weight"))
                out.append((f"gat.{dom}.h{m}.We", (de, d), "weight"))
                out.append((f"gat.{dom}.h{m}.a", (3 * d, 1), "weight"))
    else:
        for dom, dn in (("proc", cfg.d_process), ("design", cfg.d_design)):
            out.append((f"nn.{dom}.W1", (dn, d), "weight"))
            out.append((f"nn.{dom}.b1", (1, d), "bias"))
            out.append((f"nn.{dom}.W2", (d, d), "weight"))
            out.append((f"nn.{dom}.b2", (1, d), "bias"))
    out.append(("time.Wt", (cfg.T_max, d), "weight"))
    for p in ("WQ", "WK", "WV"):
        out.append((f"fuse.{p}", (d, d), "weight"))
    out.append(("fuse.ffn.W1", (3 * d, cfg.ffn_width), "weight"))
    out.append(("fuse.ffn.b1", (1, cfg.ffn_width), "bias"))
    out.append(("fuse.ffn.W2", (cfg.ffn_width, d), "weight"))
    out.append(("fuse.ffn.b2", (1, d), "bias"))
    out.append(("pool.Wp", (d, d), "weight"))
    out.append(("pool.w", (d, 1), "weight"))
    out.append(("labels.main", (cfg.n_main_classes, d), "embed"))
    out.append(("labels.sub", (cfg.n_sub_classes, d), "embed"))
    out.append(("labels.bos", (1, d), "embed"))
    for layer in range(cfg.n_decoder_layers):
        for site in ("label", "graph", "cross"):
            for p in ("WQ", "WK", "WV"):
                out.append((f"dec.l{layer}.{site}.{p}", (d, d), "weight"))
    out.append(("head.main.W", (d, cfg.n_main_classes), "weight"))
    out.append(("head.main.b", (1, cfg.n_main_classes), "bias"))
    out.append(("head.sub.W", (d, cfg.n_sub_classes), "weight"))
    out.append(("head.sub.b", (1, cfg.n_sub_classes), "bias"))
    return out


def init_parameters(cfg: ModelConfig, seed: int) -> dict:
    rng = np.random.default_rng([seed, 7001])
    params = {}
    for name, shape, kind in _parameter_shapes(cfg):
        if kind == "bias":
            data = np.zeros(shape)
        elif kind == "embed":
            data = rng.normal(scale=0.1, size=shape)
        else:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            data = rng.uniform(-limit, limit, size=shape)
        params[name] = T.parameter(data)
    return params


class Model:
    def __init__(self, config: ModelConfig, seed: int = 0, params: dict | None = None):
        self.config = config
        self.params = params if params is not None else init_parameters(config, seed)

    def parameters(self):
        return [self.params[k] for k in sorted(self.params)]

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()


# --------------------------------------------------------------------------
# Shared building blocks.

_LN_EPS = 1e-5


def layer_norm(x: Tensor) -> Tensor:
    n, d = x.shape
    ones_col = T.constant(np.ones((d, 1)) / d)
    ones_row = T.constant(np.ones((1, d)))
    mu = T.matmul(T.matmul(x, ones_col), ones_row)
    c = T.sub(x, mu)
    var = T.matmul(T.matmul(T.mul(c, c), ones_col), ones_row)
    return T.div(c, T.sqrt(T.add(var, T.constant(np.full((n, d), _LN_EPS)))))


def dropout(x: Tensor, p: float, rng) -> Tensor:
    if rng is None or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(np.float64) / (1.0 - p)
    return T.mul(x, T.constant(keep))


def causal_mask(n: int) -> np.ndarray:
    """Boolean (n, n) mask, True strictly above the diagonal."""
    return np.triu(np.ones((n, n), dtype=bool), k=1)


def multi_head_attention(params, prefix, x_q, x_kv, cfg, mask=None, trace=None,
                         trace_key=None):
    """softmax(Q K^T / sqrt(d_head)) V per head, heads concatenated."""
    q = T.matmul(x_q, params[f"{prefix}.WQ"])
    k = T.matmul(x_kv, params[f"{prefix}.WK"])
    v = T.matmul(x_kv, params[f"{prefix}.WV"])
    dk = cfg.d_head
    outs = []
    for m in range(cfg.n_heads):
        qh = T.slice_cols(q, m * dk, (m + 1) * dk)
        kh = T.slice_cols(k, m * dk, (m + 1) * dk)
        vh = T.slice_cols(v, m * dk, (m + 1) * dk)
        logits = T.scale(T.matmul(qh, T.transpose(kh)), 1.0 / math.sqrt(dk))
        if mask is not None:
            logits = T.masked_fill(logits, mask, -np.inf)
        attn = T.softmax(logits, axis=-1)
        if trace is not None:
            trace.setdefault(trace_key, []).append(attn.data.copy())
        outs.append(T.matmul(attn, vh))
    return T.concat(outs, axis=1)


# --------------------------------------------------------------------------
# Encoder.

def gat_layer(params, domain, node_x, edge_index, edge_x, cfg, trace=None):
    """One GAT layer with edge features, self-loops, multi-head mean, ELU."""
    n = node_x.shape[0]
    if len(edge_index):
        dst = np.concatenate([edge_index[:, 0], np.arange(n)])
        src = np.concatenate([edge_index[:, 1], np.arange(n)])
    else:
        dst = src = np.arange(n)
    n_real = len(edge_index)
    x = T.constant(node_x)
    head_sums = []
    for m in range(cfg.n_heads):
        z = T.matmul(x, params[f"gat.{domain}.h{m}.Wn"])
        if n_real:
            w_real = T.matmul(T.constant(edge_x), params[f"gat.{domain}.h{m}.We"])
            w_edge = T.concat([w_real, T.constant(np.zeros((n, cfg.d_latent)))], axis=0)
        else:
            w_edge = T.constant(np.zeros((n, cfg.d_latent)))
        z_dst = T.gather_rows(z, dst)
        z_src = T.gather_rows(z, src)
        scores = T.leaky_relu(
            T.matmul(T.concat([z_dst, z_src, w_edge], axis=1),
                     params[f"gat.{domain}.h{m}.a"]),
            alpha=cfg.leaky_relu_slope)
        # Segment softmax over incoming edges of each dst node, shifted by the
        # per-segment max for stability (the shift is a constant).
        seg_max = np.full(n, -np.inf)
        np.maximum.at(seg_max, dst, scores.data[:, 0])
        e = T.exp(T.sub(scores, T.constant(seg_max[dst][:, None])))
        denom = T.gather_rows(T.scatter_add_rows(e, dst, n), dst)
        alpha = T.div(e, denom)
        if trace is not None:
            tr = np.zeros((n, n))
            np.add.at(tr, (dst, src), alpha.data[:, 0])
            trace.setdefault(f"gat.{domain}", []).append(tr)
        msg = T.scale_rows(T.add(z_src, w_edge), alpha)
        head_sums.append(T.scatter_add_rows(msg, dst, n))
    total = head_sums[0]
    for h in head_sums[1:]:
        total = T.add(total, h)
    return T.elu(T.scale(total, 1.0 / cfg.n_heads))


def nn_encoder(params, domain, node_x, cfg):
    """Ablation encoder: per-node FFN, adjacency and edge features ignored."""
    h = T.elu(T.add(T.matmul(T.constant(node_x), params[f"nn.{domain}.W1"]),
                    params[f"nn.{domain}.b1"]))
    return T.elu(T.add(T.matmul(h, params[f"nn.{domain}.W2"]),
                       params[f"nn.{domain}.b2"]))


def encode_nodes(params, domain, node_x, edge_index, edge_x, cfg, trace=None):
    if cfg.encoder == "gat":
        return gat_layer(params, domain, node_x, edge_index, edge_x, cfg, trace)
    return nn_encoder(params, domain, node_x, cfg)


def time_encode(params, t: int, cfg) -> Tensor:
    if not 1 <= t <= cfg.T_max:
        raise ContractError(f"timestep {t} outside [1, T_max={cfg.T_max}]")
    return T.slice_rows(params["time.Wt"], t - 1, t)


def fuse_design(params, h_proc, h_design, cfg, trace=None):
    if h_design.shape[0] == 0:
        raise ContractError("empty design graph in fusion")
    return multi_head_attention(params, "fuse", h_proc, h_design, cfg,
                                trace=trace, trace_key="fuse")


def fuse_features(params, h_fused, h_proc, h_time, cfg, rng=None):
    n = h_proc.shape[0]
    time_rows = T.matmul(T.constant(np.ones((n, 1))), h_time)
    stacked = T.concat([h_fused, h_proc, time_rows], axis=1)
    hidden = T.elu(T.add(T.matmul(stacked, params["fuse.ffn.W1"]),
                         params["fuse.ffn.b1"]))
    hidden = dropout(hidden, cfg.dropout, rng)
    return T.add(T.matmul(hidden, params["fuse.ffn.W2"]), params["fuse.ffn.b2"])


def attention_pool(params, f_nodes, cfg, trace=None):
    scores = T.matmul(T.tanh(T.matmul(f_nodes, params["pool.Wp"])), params["pool.w"])
    beta = T.softmax(T.transpose(scores), axis=-1)
    if trace is not None:
        trace.setdefault("pool", []).append(beta.data.copy())
    return T.matmul(beta, f_nodes)


def positional_encoding(n: int, d: int) -> np.ndarray:
    """Sinusoidal encoding, positions 0..n-1, frequency base 10000."""
    pe = np.zeros((n, d))
    pos = np.arange(n)[:, None]
    i = np.arange(0, d, 2)
    freq = 1.0 / (10000.0 ** (i / d))
    pe[:, 0::2] = np.sin(pos * freq)
    pe[:, 1::2] = np.cos(pos * freq[: pe[:, 1::2].shape[1]])
    return pe


def encode_sequence(model: Model, design: DesignGraph, process, rng=None,
                    trace=None) -> Tensor:
    """Per-timestep encoder: one positional-encoded row per graph (T, d_latent)."""
    cfg, params = model.config, model.params
    h_design = encode_nodes(params, "design", design.node_features,
                            design.edge_index, design.edge_features, cfg, trace)
    rows = []
    for g in process:
        h_proc = encode_nodes(params, "proc", g.node_features, g.edge_index,
                              g.edge_features, cfg, trace)
        h_time = time_encode(params, g.timestep, cfg)
        fused = fuse_design(params, h_proc, h_design, cfg, trace)
        f_nodes = fuse_features(params, fused, h_proc, h_time, cfg, rng)
        rows.append(attention_pool(params, f_nodes, cfg, trace))
    s = T.concat(rows, axis=0)
    return T.add(s, T.constant(positional_encoding(len(process), cfg.d_latent)))


# --------------------------------------------------------------------------
# Decoder.

def embed_labels(params, history) -> Tensor:
    """BOS row followed by one row per past label (main + sub embeddings)."""
    rows = [params["labels.bos"]]
    for lab in history:
        main = T.embedding_lookup(params["labels.main"], [lab.main_index])
        sub = T.embedding_lookup(params["labels.sub"], [lab.sub_index])
        rows.append(T.add(main, sub))
    return T.concat(rows, axis=0) if len(rows) > 1 else rows[0]


def decoder_step(model: Model, l_y: Tensor, s_prefix: Tensor, rng=None,
                 trace=None, prefix_masked=False) -> Tensor:
    """Stacked 3-sublayer decoder; returns the transformed label rows.

    With prefix_masked=True the cross-attention sublayer is also causally
    masked, so one full-length pass computes the same rows as successive
    truncated calls (row t sees only graphs and labels 1..t).
    """
    cfg, params = model.config, model.params
    t = l_y.shape[0]
    if s_prefix.shape[0] != t:
        raise ContractError(
            f"label history length {t} != graph prefix length {s_prefix.shape[0]}")
    causal = cfg.decoder_mode == "causal"
    mask = causal_mask(t) if causal else None
    cross_mask = mask if (causal and prefix_masked) else None
    x, s = l_y, s_prefix
    for layer in range(cfg.n_decoder_layers):
        a = multi_head_attention(params, f"dec.l{layer}.label", x, x, cfg,
                                 mask=mask, trace=trace, trace_key="dec.label")
        x = layer_norm(T.add(x, dropout(a, cfg.dropout, rng)))
        a = multi_head_attention(params, f"dec.l{layer}.graph", s, s, cfg,
                                 mask=mask, trace=trace, trace_key="dec.graph")
        s = layer_norm(T.add(s, dropout(a, cfg.dropout, rng)))
        a = multi_head_attention(params, f"dec.l{layer}.cross", x, s, cfg,
                                 mask=cross_mask, trace=trace,
                                 trace_key="dec.cross")
        x = layer_norm(T.add(x, dropout(a, cfg.dropout, rng)))
    return x


def classify(params, g_label: Tensor):
    main = T.add(T.matmul(g_label, params["head.main.W"]), params["head.main.b"])
    sub = T.add(T.matmul(g_label, params["head.sub.W"]), params["head.sub.b"])
    return main, sub


# --------------------------------------------------------------------------
# Full forward.

TEACHER_FORCED = "tf"
AUTOREGRESSIVE = "ar"


@dataclass
class ForwardResult:
    main_logits: list = field(default_factory=list)  # T tensors, each (1, 3)
    sub_logits: list = field(default_factory=list)   # T tensors, each (1, 12)
    pred_main: list = field(default_factory=list)    # T ints
    pred_sub: list = field(default_factory=list)     # T ints
    embeddings: list = field(default_factory=list)   # T tensors, each (1, d_latent)


def forward(model: Model, design: DesignGraph, process, labels,
            mode: str = TEACHER_FORCED, rng=None, trace=None) -> ForwardResult:
    """Run the encoder once and the decoder per step.

    In causal mode step t sees only graphs 1..t and labels y_1..y_{t-1}; in
    the bidirectional ablation every step sees the full sequence unmasked.
    """
    from .synth import OperationLabel

    cfg = model.config
    n_steps = len(process)
    if mode == TEACHER_FORCED and len(labels) != n_steps:
        raise ContractError(f"{len(labels)} labels for {n_steps} graphs")
    s_hat = encode_sequence(model, design, process, rng=rng, trace=trace)
    result = ForwardResult()

    def record(g_label, main, sub):
        result.embeddings.append(g_label)
        result.main_logits.append(main)
        result.sub_logits.append(sub)
        pm = int(np.argmax(main.data[0]))
        ps = int(np.argmax(sub.data[0]))
        result.pred_main.append(pm)
        result.pred_sub.append(ps)
        return pm, ps

    if mode == TEACHER_FORCED:
        # One full-length decoder pass.  In causal mode every sublayer is
        # masked so row t sees only graphs/labels 1..t (identical rows to
        # successive truncated decoder_step calls); in the bidirectional
        # ablation nothing is masked and every step sees the full sequence.
        x = decoder_step(model, embed_labels(model.params, labels[: n_steps - 1]),
                         s_hat, rng=rng, trace=trace, prefix_masked=True)
        for t in range(1, n_steps + 1):
            g_label = T.slice_rows(x, t - 1, t)
            record(g_label, *classify(model.params, g_label))
        return result

    history = []
    for t in range(1, n_steps + 1):
        hist = labels[: t - 1] if mode == TEACHER_FORCED else history
        l_y = embed_labels(model.params, hist)
        if cfg.decoder_mode == "causal":
            prefix = T.slice_rows(s_hat, 0, t)
        else:
            # Bidirectional + autoregressive: all graphs remain visible;
            # not-yet-predicted label rows are zeros.
            prefix = s_hat
            pad = n_steps - t
            if pad:
                l_y = T.concat([l_y, T.constant(np.zeros((pad, cfg.d_latent)))], axis=0)
        x = decoder_step(model, l_y, prefix, rng=rng, trace=trace)
        g_label = T.slice_rows(x, t - 1, t)
        _, ps = record(g_label, *classify(model.params, g_label))
        if mode == AUTOREGRESSIVE:
            history.append(OperationLabel.for_sub(SUB_OPS[ps]))
    return result


# --------------------------------------------------------------------------
# Checkpoints.

_CKPT_MAGIC = b"machineseq-checkpoint v1\n"


def save_checkpoint(model: Model) -> bytes:
    out = io.BytesIO()
    out.write(_CKPT_MAGIC)
    header = json.dumps(asdict(model.config), sort_keys=True).encode("ascii")
    out.write(struct.pack("<I", len(header)))
    out.write(header)
    names = sorted(model.params)
    out.write(struct.pack("<I", len(names)))
    for name in names:
        data = model.params[name].data
        nb = name.encode("ascii")
        out.write(struct.pack("<H", len(nb)))
        out.write(nb)
        out.write(struct.pack("<B", data.ndim))
        for s in data.shape:
            out.write(struct.pack("<I", s))
        out.write(data.astype("<f8").tobytes())
    return out.getvalue()


def load_checkpoint(blob: bytes) -> Model:
    if not blob.startswith(_CKPT_MAGIC):
        raise ConfigError("not a model checkpoint (bad magic)")
    pos = len(_CKPT_MAGIC)
    (hlen,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    cfg = ModelConfig(**json.loads(blob[pos:pos + hlen].decode("ascii")))
    pos += hlen
    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    params = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos:pos + nlen].decode("ascii")
        pos += nlen
        (ndim,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) * 8
        data = np.frombuffer(blob[pos:pos + size], dtype="<f8").reshape(shape).copy()
        pos += size
        params[name] = T.parameter(data)
    expected = {n for n, _s, _k in _parameter_shapes(cfg)}
    if set(params) != expected:
        raise ConfigError("checkpoint parameter names do not match its config")
    return Model(cfg, params=params)
