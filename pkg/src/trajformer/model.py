"""Sequence-to-sequence Transformer over graph-embedded agent trajectories.

Attention runs over time independently per agent (all agents share
weights); spatial mixing happens exclusively in the graph convolution
input embedding. Batched activations are shaped [B, T, n, d]: batch,
frame, agent, channel.
"""

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import container, graph
from . import tensor as T

# Additive logit penalty for masked attention positions. exp(-1e9) underflows
# to exactly 0.0 in float64, so causality holds bitwise, not approximately.
_MASKED_LOGIT = -1e9


@dataclass
class TransformerConfig:
    d_model: int = 64
    heads: int = 4
    ff_width: int = 2048
    encoder_layers: int = 2
    decoder_layers: int = 2
    dropout: float = 0.1
    use_gcn: bool = True
    gcn_layers: int = 1
    history_len: int = 15
    future_len: int = 25
    features: int = 2
    max_agents: int = 8

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ValueError(
                f"d_model {self.d_model} not divisible by heads {self.heads}")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{f.name: d[f.name] for f in dataclasses.fields(cls) if f.name in d})


# ----------------------------------------------------------------------
# parameters


def _glorot(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def _linear_params(rng, params, name, d_in, d_out):
    params[f"{name}.w"] = T.Tensor(_glorot(rng, d_in, d_out), requires_grad=True)
    params[f"{name}.b"] = T.Tensor(np.zeros(d_out), requires_grad=True)


def _norm_params(params, name, d):
    params[f"{name}.g"] = T.Tensor(np.ones(d), requires_grad=True)
    params[f"{name}.b"] = T.Tensor(np.zeros(d), requires_grad=True)


def init_params(cfg, rng):
    """Fresh parameter dict for the full prediction model (no discriminator)."""
    d = cfg.d_model
    params = {}
    if cfg.use_gcn:
        params.update(graph.init_gcn_params(rng, cfg.features, d, cfg.gcn_layers))
    else:
        _linear_params(rng, params, "embed", cfg.features, d)
    for side, n_layers in (("enc", cfg.encoder_layers), ("dec", cfg.decoder_layers)):
        for i in range(n_layers):
            base = f"{side}.{i}"
            for proj in ("q", "k", "v", "o"):
                _linear_params(rng, params, f"{base}.attn.{proj}", d, d)
            if side == "dec":
                for proj in ("q", "k", "v", "o"):
                    _linear_params(rng, params, f"{base}.cross.{proj}", d, d)
                _norm_params(params, f"{base}.ln_cross", d)
            _linear_params(rng, params, f"{base}.ff.1", d, cfg.ff_width)
            _linear_params(rng, params, f"{base}.ff.2", cfg.ff_width, d)
            _norm_params(params, f"{base}.ln_attn", d)
            _norm_params(params, f"{base}.ln_ff", d)
    _linear_params(rng, params, "out", d, cfg.features)
    return params


def _linear(params, name, x):
    return x @ params[f"{name}.w"] + params[f"{name}.b"]


def _dropout(x, p, rng):
    if rng is None or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(np.float64) / (1.0 - p)
    return x * T.Tensor(keep)


# ----------------------------------------------------------------------
# building blocks


def positional_encoding(length, d_model):
    """Sinusoidal table [length, 1, d_model], broadcastable over agents."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(d_model, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * np.floor(i / 2.0) / d_model)
    pe = np.where(i.astype(np.int64) % 2 == 0, np.sin(angle), np.cos(angle))
    return pe[:, None, :]


def positional_encode(x, table=None):
    """Add PE(t) over the time axis of x [B, T, n, d]."""
    length, d = x.shape[1], x.shape[3]
    if table is None:
        table = positional_encoding(length, d)
    return x + T.Tensor(table[:length])


def _split_heads(x, heads):
    """[B, T, n, d] -> [B, n, h, T, d/h]."""
    b, t, n, d = x.shape
    x = T.transpose(x, (0, 2, 1, 3))
    x = T.reshape(x, (b, n, t, heads, d // heads))
    return T.transpose(x, (0, 1, 3, 2, 4))


def _merge_heads(x):
    """[B, n, h, T, dk] -> [B, T, n, d]."""
    b, n, h, t, dk = x.shape
    x = T.transpose(x, (0, 1, 3, 2, 4))
    x = T.reshape(x, (b, n, t, h * dk))
    return T.transpose(x, (0, 2, 1, 3))


def causal_mask(t_q, t_k=None):
    """Additive [t_q, t_k] mask: 0 where key <= query position, -1e9 after."""
    t_k = t_q if t_k is None else t_k
    return np.triu(np.full((t_q, t_k), _MASKED_LOGIT), k=1)


def multi_head_attention(params, prefix, query, key_value, cfg, mask_bias=None):
    """Scaled dot-product attention per agent over the time axis.

    query [B, Tq, n, d], key_value [B, Tk, n, d]; mask_bias is an additive
    [Tq, Tk] matrix (0 allowed / -1e9 disallowed) or None.
    """
    if query.shape[-1] != cfg.d_model or key_value.shape[-1] != cfg.d_model:
        raise T.ShapeError(
            f"attention expects channel dim {cfg.d_model}, got "
            f"{query.shape} / {key_value.shape}")
    q = _split_heads(_linear(params, f"{prefix}.q", query), cfg.heads)
    k = _split_heads(_linear(params, f"{prefix}.k", key_value), cfg.heads)
    v = _split_heads(_linear(params, f"{prefix}.v", key_value), cfg.heads)
    scale = 1.0 / np.sqrt(cfg.d_model / cfg.heads)
    scores = T.matmul(q, T.transpose(k, (0, 1, 2, 4, 3))) * scale
    if mask_bias is not None:
        if mask_bias.shape != (query.shape[1], key_value.shape[1]):
            raise T.ShapeError(
                f"mask shape {mask_bias.shape} does not match attention "
                f"span ({query.shape[1]}, {key_value.shape[1]})")
        scores = scores + T.Tensor(mask_bias)
    weights = T.softmax(scores, axis=-1)
    out = _merge_heads(T.matmul(weights, v))
    return _linear(params, f"{prefix}.o", out)


def feed_forward(params, prefix, x):
    return _linear(params, f"{prefix}.2", T.relu(_linear(params, f"{prefix}.1", x)))


def _sublayer(params, ln_name, x, residual, cfg, rng):
    return T.layer_norm(x + _dropout(residual, cfg.dropout, rng),
                        params[f"{ln_name}.g"], params[f"{ln_name}.b"])


def _agent_mask(mask):
    """[B, n] validity -> [B, 1, n, 1] multiplicative tensor."""
    m = np.asarray(mask, dtype=np.float64)
    return T.Tensor(m[:, None, :, None])


def embed_frames(params, cfg, coords, norm_adjacency, mask):
    """Graph-convolve (or linearly embed) per-frame coordinates to d_model.

    The embedding is scaled by sqrt(d_model) so the coordinate signal stays
    comparable in magnitude to the positional encoding added afterwards.
    """
    x = coords if isinstance(coords, T.Tensor) else T.Tensor(coords)
    m = _agent_mask(mask)
    scale = np.sqrt(cfg.d_model)
    if cfg.use_gcn:
        adj = norm_adjacency if isinstance(norm_adjacency, T.Tensor) else T.Tensor(norm_adjacency)
        return graph.gcn_forward(x, adj, params, layers=cfg.gcn_layers, mask=m) * scale
    return _linear(params, "embed", x) * m * scale


# ----------------------------------------------------------------------
# encoder / decoder


def encode(params, cfg, history, adjacency, mask, rng=None):
    """History [B, 15, n, 2] + per-frame adjacency -> memory [B, 15, n, d]."""
    x = embed_frames(params, cfg, history, adjacency, mask)
    x = positional_encode(x)
    for i in range(cfg.encoder_layers):
        base = f"enc.{i}"
        attn = multi_head_attention(params, f"{base}.attn", x, x, cfg)
        x = _sublayer(params, f"{base}.ln_attn", x, attn, cfg, rng)
        x = _sublayer(params, f"{base}.ln_ff", x, feed_forward(params, f"{base}.ff", x), cfg, rng)
    return x * _agent_mask(mask)


def decode(params, cfg, memory, target_in, last_adjacency, mask, rng=None):
    """Causal decoder pass over `target_in` [B, Td, n, 2] -> [B, Td, n, 2].

    Target frames are embedded with the last observed scene graph
    (future graphs are unknown at inference time).
    """
    t_d = target_in.shape[1]
    adj = np.asarray(last_adjacency, dtype=np.float64)[:, None, :, :]
    x = embed_frames(params, cfg, target_in, adj, mask)
    x = positional_encode(x)
    cmask = causal_mask(t_d)
    for i in range(cfg.decoder_layers):
        base = f"dec.{i}"
        self_attn = multi_head_attention(params, f"{base}.attn", x, x, cfg, mask_bias=cmask)
        x = _sublayer(params, f"{base}.ln_attn", x, self_attn, cfg, rng)
        cross = multi_head_attention(params, f"{base}.cross", x, memory, cfg)
        x = _sublayer(params, f"{base}.ln_cross", x, cross, cfg, rng)
        x = _sublayer(params, f"{base}.ln_ff", x, feed_forward(params, f"{base}.ff", x), cfg, rng)
    return _linear(params, "out", x) * _agent_mask(mask)


def shift_right(last_history_frame, future):
    """Teacher-forcing input: last observed frame + future frames 1..T-1."""
    last = np.asarray(last_history_frame)
    future = np.asarray(future)
    return np.concatenate([last[:, None, :, :], future[:, :-1, :, :]], axis=1)


def decode_train(params, cfg, memory, history, future, last_adjacency, mask, rng=None):
    """One teacher-forced decoder pass over the right-shifted future."""
    target_in = shift_right(history[:, -1], future)
    return decode(params, cfg, memory, T.Tensor(target_in), last_adjacency, mask, rng=rng)


def decode_infer(params, cfg, memory, last_history_frame, last_adjacency, mask):
    """Autoregressive rollout of `future_len` frames (no gradient retained)."""
    seq = np.asarray(last_history_frame)[:, None, :, :].copy()
    outputs = []
    for _ in range(cfg.future_len):
        pred = decode(params, cfg, memory, T.Tensor(seq), last_adjacency, mask)
        newest = pred.data[:, -1:, :, :]
        outputs.append(newest)
        seq = np.concatenate([seq, newest], axis=1)
    return np.concatenate(outputs, axis=1)


def forward_train(params, cfg, batch, rng=None):
    """Encode + teacher-forced decode for a batch dict of arrays."""
    memory = encode(params, cfg, T.Tensor(batch["history"]), batch["adjacency"],
                    batch["mask"], rng=rng)
    preds = decode_train(params, cfg, memory, batch["history"], batch["future"],
                         batch["adjacency"][:, -1], batch["mask"], rng=rng)
    return memory, preds


def predict(params, cfg, batch):
    """Autoregressive predictions [B, future_len, n, 2] in normalized space."""
    memory = encode(params, cfg, T.Tensor(batch["history"]), batch["adjacency"],
                    batch["mask"])
    return decode_infer(params, cfg, memory, batch["history"][:, -1],
                        batch["adjacency"][:, -1], batch["mask"])


# ----------------------------------------------------------------------
# checkpoints


class CheckpointError(IOError):
    """Raised when a checkpoint fails to load or validate."""


def save_checkpoint(path, params, cfg, extra_meta=None, moments=None):
    """Write parameters (and optional optimizer moments) with the config header."""
    meta = {"config": cfg.to_dict(), "format": "trajformer-checkpoint"}
    if extra_meta:
        meta.update(extra_meta)
    blocks = {f"param:{k}": v.data for k, v in params.items()}
    if moments is not None:
        m, v, step = moments
        meta["adam_step"] = step
        blocks.update({f"adam.m:{k}": arr for k, arr in m.items()})
        blocks.update({f"adam.v:{k}": arr for k, arr in v.items()})
    container.write_container(path, container.CKPT_MAGIC, meta, blocks)


def load_checkpoint(path):
    """Read (params, cfg, meta, moments) and validate shapes against the header."""
    try:
        meta, blocks = container.read_container(path, container.CKPT_MAGIC)
    except container.ContainerError as exc:
        raise CheckpointError(str(exc)) from exc
    cfg = TransformerConfig.from_dict(meta["config"])
    params = {}
    m, v = {}, {}
    for name, arr in blocks.items():
        kind, key = name.split(":", 1)
        if kind == "param":
            params[key] = T.Tensor(arr, requires_grad=True)
        elif kind == "adam.m":
            m[key] = arr
        elif kind == "adam.v":
            v[key] = arr
    expected = {k: t.data.shape for k, t in init_params(cfg, np.random.default_rng(0)).items()}
    for key, shape in expected.items():
        if key not in params:
            raise CheckpointError(f"{path}: missing parameter {key!r}")
        if params[key].data.shape != shape:
            raise CheckpointError(
                f"{path}: parameter {key!r} has shape {params[key].data.shape}, "
                f"config implies {shape}")
    moments = (m, v, meta.get("adam_step", 0)) if m else None
    return params, cfg, meta, moments
