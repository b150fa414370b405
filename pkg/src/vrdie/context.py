"""Multi-modal context block: layout/visual/textual embeddings, LayerNorm fusion,
spatial-aware multi-head self-attention and per-character context fusion."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numkit as nk
from .docdata import BoundingBox
from .numkit import Conv1d, Conv2d, ContractError, Linear, ParamStore, Tensor

COORD_RANGE = 1000
KERNELS = (3, 5, 7, 9)


@dataclass
class ContextConfig:
    d_model: int = 64
    layers: int = 1
    heads: int = 4
    buckets: int = 32
    d_kernel: int = 16
    use_visual: bool = True
    use_layout: bool = True
    use_textual: bool = True
    fusion: str = "gating"
    prior: str = "toy"

    def __post_init__(self):
        if self.heads < 1 or self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        if self.layers < 1:
            raise ValueError(f"layers must be >= 1, got {self.layers}")


# -- layout -------------------------------------------------------------------
def normalize_box(box: BoundingBox, page_size: tuple[int, int]) -> np.ndarray:
    w, h = page_size
    raw = np.array([box.x0 / w, box.y0 / h, box.x1 / w, box.y1 / h]) * COORD_RANGE
    return np.clip(np.floor(raw + 0.5), 0, COORD_RANGE).astype(np.int64)


def embed_position(norm_boxes: np.ndarray, coord_embed: Tensor) -> Tensor:
    """Sum of the four coordinate embeddings per box: (m, 4) -> (m, d_e)."""
    nb = np.atleast_2d(norm_boxes)
    if nb.min() < 0 or nb.max() > COORD_RANGE:
        raise ContractError(f"normalized coordinates outside [0, {COORD_RANGE}]")
    return nk.embedding_lookup(coord_embed, nb).sum(axis=1)


def relative_positions(norm_boxes: np.ndarray) -> np.ndarray:
    nb = np.atleast_2d(np.asarray(norm_boxes, dtype=np.int64))
    return nb[:, None, :] - nb[None, :, :]


def bucket(delta, n_buckets: int = 32) -> np.ndarray:
    """Signed log bucketing of coordinate offsets into [0, 2B]; 0 maps to B."""
    d = np.clip(np.asarray(delta), -COORD_RANGE, COORD_RANGE)
    mag = np.ceil(n_buckets * np.log1p(np.abs(d)) / math.log1p(COORD_RANGE)).astype(np.int64)
    return n_buckets + np.sign(d).astype(np.int64) * np.minimum(mag, n_buckets)


def embed_relative(deltas: np.ndarray, rel_tables: Tensor, n_buckets: int = 32) -> Tensor:
    """(m, m, 4) offsets -> (heads, m, m) attention bias.

    ``rel_tables`` has shape (4, 2B+1, heads): one table per coordinate.
    """
    m = deltas.shape[0]
    heads = rel_tables.shape[2]
    width = 2 * n_buckets + 1
    rows = bucket(deltas, n_buckets) + np.arange(4) * width        # (m, m, 4)
    flat = rel_tables.reshape(4 * width, heads)
    bias = nk.embedding_lookup(flat, rows).sum(axis=2)              # (m, m, heads)
    return bias.transpose(2, 0, 1) if m else bias


# -- attention ----------------------------------------------------------------
class AttentionLayer:
    def __init__(self, store: ParamStore, name: str, d: int, heads: int, first: bool):
        self.d, self.heads = d, heads
        mk = lambda k: store.new(f"{name}.{k}", (d, d), fan_in=d)
        self.wq, self.wk, self.wv, self.w_info = mk("wq"), mk("wk"), mk("wv"), mk("w_info")
        self.first = first
        if not first:
            self.ln_g = store.new(f"{name}.ln_g", (d,), init="const", value=1.0)
            self.ln_b = store.new(f"{name}.ln_b", (d,), init="const", value=0.0)

    def attend(self, x: Tensor, bias: Tensor | None) -> tuple[Tensor, Tensor]:
        m, d, n = x.shape[0], self.d, self.heads
        split = lambda t: t.reshape(m, n, d // n).transpose(1, 0, 2)   # (heads, m, d_n)
        q, k, v = split(x @ self.wq), split(x @ self.wk), split(x @ self.wv)
        scores = nk.matmul(q, k.transpose(0, 2, 1)) / math.sqrt(d)
        if bias is not None:
            scores = scores + bias
        probs = nk.softmax_rowwise(scores)
        heads = nk.matmul(probs, v).transpose(1, 0, 2).reshape(m, d)
        return heads @ self.w_info, probs

    def __call__(self, x: Tensor, bias: Tensor | None) -> tuple[Tensor, Tensor]:
        if self.first:
            return self.attend(x, bias)
        out, probs = self.attend(nk.layer_normalize(x, self.ln_g, self.ln_b), bias)
        return x + out, probs


def spatial_self_attention(emb: Tensor, bias: Tensor | None, layers: list[AttentionLayer]):
    """Stacked multi-head attention; returns (context, per-layer attention maps)."""
    x, maps = emb, []
    for layer in layers:
        x, probs = layer(x, bias)
        maps.append(probs)
    return x, maps


def fuse_context(o: Tensor, ctx: Tensor) -> Tensor:
    """u_t = [o_t, ctx] for every step; o is (..., T, d_s), ctx is (..., d_info)."""
    steps = o.shape[-2]
    tiled = ctx.reshape(ctx.shape[:-1] + (1, ctx.shape[-1])) * np.ones((steps, 1))
    return nk.concat([o, tiled], axis=-1)


# -- the block ------------------------------------------------------------------
class ContextBlock:
    def __init__(self, store: ParamStore, d_conv: int, d_state: int, cfg: ContextConfig | None = None,
                 prefix: str = "context"):
        self.cfg = cfg = cfg or ContextConfig()
        d = cfg.d_model
        p = prefix
        self.coord_embed = store.new(f"{p}.coord_embed", (COORD_RANGE + 1, d), fan_in=d)
        self.rel_tables = store.new(f"{p}.rel_tables", (4, 2 * cfg.buckets + 1, cfg.heads),
                                    init="const", value=0.0)
        self.visual_conv = Conv2d(store, f"{p}.visual_conv", d_conv, d)
        self.text_convs = [Conv1d(store, f"{p}.text_conv{k}", d_state, cfg.d_kernel, k) for k in KERNELS]
        self.text_mix = Linear(store, f"{p}.text_mix", cfg.d_kernel * len(KERNELS), d)
        self.ln_g = store.new(f"{p}.ln_g", (d,), init="const", value=1.0)
        self.ln_b = store.new(f"{p}.ln_b", (d,), init="const", value=0.0)
        self.layers = [AttentionLayer(store, f"{p}.layer{i}", d, cfg.heads, first=(i == 0))
                       for i in range(cfg.layers)]

    def embed_visual(self, grid: Tensor, col_mask: np.ndarray) -> Tensor:
        """(batch, rows, L, d_conv) instance features -> (batch, d_e) by conv + masked max."""
        h = self.visual_conv(grid)
        b, r, l, d = h.shape
        mask = np.broadcast_to(col_mask[:, None, :, None], (b, r, l, 1)).reshape(b, r * l, 1)
        return nk.max_pool_1d(h.reshape(b, r * l, d), axis=1, mask=mask)

    def embed_textual(self, o: Tensor, lengths: np.ndarray) -> Tensor:
        """(batch, T, d_s) modulated features -> (batch, d_e).

        Steps past T_i are zeroed and each sequence is treated as zero-padded
        to at least 9 steps, so pooling windows do not depend on batch padding.
        """
        b, steps, _ = o.shape
        span = np.maximum(lengths, max(KERNELS))
        width = max(steps, int(span.max()))
        valid = (np.arange(steps)[None, :] < lengths[:, None]).astype(np.float64)[:, :, None]
        x = o * valid
        if width > steps:
            x = nk.concat([x, Tensor(np.zeros((b, width - steps, o.shape[2])))], axis=1)
        pool_mask = (np.arange(width)[None, :] < span[:, None])[:, :, None]
        pooled = [nk.max_pool_1d(conv(x), axis=1, mask=pool_mask) for conv in self.text_convs]
        return self.text_mix(nk.concat(pooled, axis=-1))

    def fuse_embeddings(self, c_hat: Tensor | None, z_hat: Tensor | None, pe: Tensor | None) -> Tensor:
        parts = [t for t in (c_hat, z_hat, pe) if t is not None]
        if not parts:
            raise ContractError("all modalities disabled")
        total = parts[0]
        for t in parts[1:]:
            total = total + t
        return nk.layer_normalize(total, self.ln_g, self.ln_b)

    def instance_embeddings(self, grid: Tensor, col_mask: np.ndarray, o: Tensor, lengths: np.ndarray,
                            norm_boxes: np.ndarray) -> Tensor:
        """Fused per-instance embeddings for a batch of instances (any documents)."""
        cfg = self.cfg
        c_hat = self.embed_visual(grid, col_mask) if cfg.use_visual else None
        z_hat = self.embed_textual(o, lengths) if cfg.use_textual else None
        pe = embed_position(norm_boxes, self.coord_embed) if cfg.use_layout else None
        if c_hat is None and z_hat is None and pe is None:
            # every modality off: constant input, LayerNorm maps it to beta
            return nk.layer_normalize(Tensor(np.zeros((len(lengths), cfg.d_model))), self.ln_g, self.ln_b)
        return self.fuse_embeddings(c_hat, z_hat, pe)

    def document_context(self, emb: Tensor, norm_boxes: np.ndarray):
        """Context vectors for one document's instances: (m, d) -> (m, d), maps."""
        bias = None
        if self.cfg.use_layout:
            bias = embed_relative(relative_positions(norm_boxes), self.rel_tables, self.cfg.buckets)
        return spatial_self_attention(emb, bias, self.layers)
