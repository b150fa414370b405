"""Toy text reading: crop features from ground-truth boxes, encode, attend and decode.

All functions work on a batch of text instances padded to a common
length; validity masks keep each instance's result independent of what
else is in the batch.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numkit as nk
from .docdata import BoundingBox, DocumentSample, Vocabulary
from .numkit import LSTM, BiLSTM, Conv2d, ContractError, Linear, ParamStore, Tensor

ROWS = 8
MIN_COLS, MAX_COLS = 4, 128


SKIP_WIDTH = {"none": 0, "mean": 1, "rows": ROWS}


@dataclass
class ReaderConfig:
    d_conv: int = 16
    d_enc: int = 64
    d_state: int = 64
    d_att: int = 64
    d_char: int = 16
    t_max: int = 64
    bidirectional: bool = True  # encoder runs both directions, d_enc/2 each
    position_code: int = 16     # fixed sinusoidal column code appended to encoded steps
    conv_skip: str = "rows"     # conv columns appended to encoded steps: "none", "mean" or "rows"

    def __post_init__(self):
        if self.bidirectional and self.d_enc % 2:
            raise ValueError(f"bidirectional encoder needs an even d_enc, got {self.d_enc}")
        if self.conv_skip not in SKIP_WIDTH:
            raise ValueError(f"conv_skip must be one of {sorted(SKIP_WIDTH)}, got {self.conv_skip!r}")
        if self.position_code % 2:
            raise ValueError(f"position_code must be even, got {self.position_code}")

    @property
    def d_step(self) -> int:
        return self.d_enc + self.position_code + SKIP_WIDTH[self.conv_skip] * self.d_conv


@dataclass
class InstanceFeatures:
    """Per-instance conv feature maps, shape (batch, 8, L_max, d_conv)."""
    grid: Tensor
    lengths: np.ndarray

    @property
    def mask(self) -> np.ndarray:
        return np.arange(self.grid.shape[2])[None, :] < self.lengths[:, None]


@dataclass
class EncodedSequence:
    steps: Tensor  # (batch, l_max, d_enc)
    lengths: np.ndarray

    @property
    def mask(self) -> np.ndarray:
        return np.arange(self.steps.shape[1])[None, :] < self.lengths[:, None]


@dataclass
class DecoderState:
    h: Tensor
    c: Tensor
    t: int
    y_prev: np.ndarray


@dataclass
class Recognition:
    """Decoder output for a batch: transcripts and the textual features z."""
    texts: list[str]
    states: Tensor     # (batch, T_max, d_state); z_i = states[i, :T_i]
    logits: Tensor     # (batch, T_max, |V|)
    lengths: np.ndarray  # T_i, EOS step included
    attention: Tensor  # (batch, T_max, l_max)

    @property
    def mask(self) -> np.ndarray:
        return np.arange(self.states.shape[1])[None, :] < self.lengths[:, None]


# -- crop / resize ------------------------------------------------------------
def feature_width(box: BoundingBox) -> int:
    return int(np.clip(round(ROWS * box.width / box.height), MIN_COLS, MAX_COLS))


def bilinear_resize(img: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Half-pixel-centre bilinear resize with edge clamping (no antialiasing)."""
    def axis(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    r0, r1, fr = axis(img.shape[0], rows)
    c0, c1, fc = axis(img.shape[1], cols)
    top = img[r0][:, c0] * (1 - fc) + img[r0][:, c1] * fc
    bot = img[r1][:, c0] * (1 - fc) + img[r1][:, c1] * fc
    return top * (1 - fr)[:, None] + bot * fr[:, None]


def crop_resize(sample: DocumentSample, box: BoundingBox) -> np.ndarray:
    if sample.raster is None:
        raise ContractError("sample has no raster")
    if not box.within(sample.page_size):
        raise ContractError(f"box {box.as_list()} outside page {sample.page_size}")
    crop = sample.raster[box.y0:box.y1, box.x0:box.x1]
    return bilinear_resize(crop, ROWS, feature_width(box))


def column_code(width: int, dim: int, longest: float = 200.0) -> np.ndarray:
    """Sinusoidal code of column index, periods from 2*pi up to 2*pi*longest."""
    half = dim // 2
    freq = np.exp(-np.arange(half) * np.log(longest) / max(half - 1, 1))
    ang = np.arange(width)[:, None] * freq[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


class Reader:
    def __init__(self, store: ParamStore, vocab_size: int, cfg: ReaderConfig | None = None,
                 prefix: str = "reader"):
        self.cfg = cfg = cfg or ReaderConfig()
        self.vocab_size = vocab_size
        p = prefix
        self.conv1 = Conv2d(store, f"{p}.conv1", 1, cfg.d_conv)
        self.conv2 = Conv2d(store, f"{p}.conv2", cfg.d_conv, cfg.d_conv)
        if cfg.bidirectional:
            self.encoder = BiLSTM(store, f"{p}.encoder", cfg.d_conv, cfg.d_enc // 2)
        else:
            self.encoder = LSTM(store, f"{p}.encoder", cfg.d_conv, cfg.d_enc)
        self.att_s = Linear(store, f"{p}.att_s", cfg.d_state, cfg.d_att, bias=False)
        self.att_h = Linear(store, f"{p}.att_h", cfg.d_step, cfg.d_att)  # carries b
        self.att_w = store.new(f"{p}.att_w", (cfg.d_att,), fan_in=cfg.d_att)
        self.char_embed = store.new(f"{p}.char_embed", (vocab_size, cfg.d_char), fan_in=cfg.d_char)
        self.decoder = LSTM(store, f"{p}.decoder", cfg.d_step + cfg.d_char, cfg.d_state)
        self.out = Linear(store, f"{p}.out", cfg.d_state, vocab_size)
        self.prefix = prefix

    # -- stage 1: features ------------------------------------------------
    def extract_instance_features(self, crops: Sequence[np.ndarray]) -> InstanceFeatures:
        lengths = np.array([c.shape[1] for c in crops])
        width = int(lengths.max())
        x = np.zeros((len(crops), ROWS, width, 1))
        for k, c in enumerate(crops):
            x[k, :, :c.shape[1], 0] = c
        colmask = (np.arange(width)[None, :] < lengths[:, None]).astype(np.float64)[:, None, :, None]
        h = nk.relu(self.conv1(Tensor(x))) * colmask
        h = nk.relu(self.conv2(h)) * colmask
        return InstanceFeatures(h, lengths)

    def features_for(self, sample: DocumentSample, boxes: Sequence[BoundingBox] | None = None) -> InstanceFeatures:
        boxes = boxes if boxes is not None else [i.box for i in sample.instances]
        return self.extract_instance_features([crop_resize(sample, b) for b in boxes])

    # -- stage 2: encoder -------------------------------------------------
    def encode_sequence(self, feat: InstanceFeatures) -> EncodedSequence:
        cols = nk.mean(feat.grid, axis=1)  # (batch, L, d_conv)
        parts = [self.encoder(cols, feat.mask)]
        if self.cfg.conv_skip == "mean":
            parts.append(cols)
        elif self.cfg.conv_skip == "rows":
            b, rows, width, d = feat.grid.shape
            parts.append(feat.grid.transpose(0, 2, 1, 3).reshape(b, width, rows * d))
        if self.cfg.position_code:
            batch, width = cols.shape[0], cols.shape[1]
            code = column_code(width, self.cfg.position_code)
            parts.append(Tensor(np.broadcast_to(code, (batch,) + code.shape)))
        steps = nk.concat(parts, axis=-1) if len(parts) > 1 else parts[0]
        return EncodedSequence(steps, feat.lengths.copy())

    # -- stage 3: attention decoder ---------------------------------------
    def initial_state(self, batch: int, go: int = Vocabulary.go) -> DecoderState:
        z = Tensor(np.zeros((batch, self.cfg.d_state)))
        return DecoderState(z, Tensor(np.zeros((batch, self.cfg.d_state))), 0, np.full(batch, go))

    def attention_decode_step(self, enc: EncodedSequence, state: DecoderState,
                              h_proj: Tensor | None = None):
        """One decoder step.  Returns (alpha, glimpse, next_state, char_logits)."""
        if state.t >= self.cfg.t_max:
            raise ContractError(f"decoder step {state.t} >= t_max {self.cfg.t_max}")
        if h_proj is None:
            h_proj = self.att_h(enc.steps)
        batch = enc.steps.shape[0]
        q = self.att_s(state.h).reshape(batch, 1, self.cfg.d_att)
        energy = nk.matmul(nk.tanh(h_proj + q), self.att_w)          # (batch, l)
        alpha = nk.softmax_rowwise(energy, mask=enc.mask)
        glimpse = nk.matmul(alpha.reshape(batch, 1, -1), enc.steps).reshape(batch, -1)
        y_emb = nk.embedding_lookup(self.char_embed, state.y_prev)
        x = nk.concat([glimpse, y_emb], axis=-1)
        proj = nk.add(nk.matmul(x, self.decoder.wx), self.decoder.b)
        h, c = self.decoder.cell(proj, state.h, state.c)
        logits = self.out(h)
        return alpha, glimpse, DecoderState(h, c, state.t + 1, state.y_prev), logits

    def recognize(self, enc: EncodedSequence, vocab: Vocabulary,
                  targets: Sequence[str] | None = None) -> Recognition:
        """Teacher-forced when ``targets`` is given, greedy free-running otherwise."""
        batch = enc.steps.shape[0]
        h_proj = self.att_h(enc.steps)
        state = self.initial_state(batch)
        states, logits, alphas = [], [], []
        if targets is not None:
            codes = [vocab.encode(t) for t in targets]
            lengths = np.array([len(c) + 1 for c in codes])
            if lengths.max() > self.cfg.t_max:
                raise ContractError(f"target of length {lengths.max() - 1} exceeds t_max")
            prev = np.full((batch, lengths.max()), vocab.pad)
            for k, c in enumerate(codes):
                prev[k, 0] = vocab.go
                prev[k, 1:len(c) + 1] = c
            for t in range(lengths.max()):
                state.y_prev = prev[:, t]
                alpha, _, state, lg = self.attention_decode_step(enc, state, h_proj)
                states.append(state.h)
                logits.append(lg)
                alphas.append(alpha)
            texts = list(targets)
        else:
            lengths = np.full(batch, self.cfg.t_max)
            done = np.zeros(batch, dtype=bool)
            emitted = []
            for t in range(self.cfg.t_max):
                alpha, _, state, lg = self.attention_decode_step(enc, state, h_proj)
                y = nk.argmax_rowwise(lg)
                states.append(state.h)
                logits.append(lg)
                alphas.append(alpha)
                emitted.append(y)
                newly = (~done) & (y == vocab.eos)
                lengths[newly] = t + 1
                done |= newly
                state.y_prev = y
                if done.all():
                    break
            seqs = np.stack(emitted, axis=1)
            texts = [vocab.decode_aligned(seqs[k, :lengths[k]]) for k in range(batch)]
        return Recognition(texts, nk.stack(states, axis=1), nk.stack(logits, axis=1), lengths,
                           nk.stack(alphas, axis=1))


def encode_targets(texts: Sequence[str], vocab: Vocabulary) -> tuple[np.ndarray, np.ndarray]:
    """Target indices (text + EOS) padded with PAD, and the matching step mask."""
    codes = [vocab.encode(t) + [vocab.eos] for t in texts]
    width = max(len(c) for c in codes)
    out = np.full((len(codes), width), vocab.pad)
    for k, c in enumerate(codes):
        out[k, :len(c)] = c
    return out, out != vocab.pad


def recognition_loss(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of the target characters over valid steps."""
    batch, steps, v = logits.shape
    targets = targets[:, :steps]
    mask = mask[:, :steps]
    logp = nk.log_softmax(logits)
    flat = (np.arange(batch * steps) * v + targets.reshape(-1)).reshape(batch, steps)
    picked = nk.take(logp, flat)
    return -(picked * mask.astype(np.float64)).sum() / float(mask.sum())


def focus_columns(cols: np.ndarray, n_chars: np.ndarray) -> np.ndarray:
    """Centre column of each character under a uniform-advance (monospace) layout.

    Returns (batch, max(n_chars)) indices; entries past an instance's length are -1.
    """
    width = max(int(n_chars.max()), 1)
    t = np.arange(width)[None, :]
    n = np.maximum(n_chars, 1)[:, None]
    centre = ((2 * t + 1) * cols[:, None]) // (2 * n)
    return np.where(t < n_chars[:, None], centre, -1)


def attention_focus_loss(attention: Tensor, cols: np.ndarray, n_chars: np.ndarray) -> Tensor:
    """Mean -log attention mass on each character's centre column (character steps only).

    Supervises alignment the way a focusing attention network does, with the
    character positions implied by the fixed-advance glyph layout.
    """
    target = focus_columns(cols, n_chars)
    batch, steps, width = attention.shape
    target = target[:, :steps]
    valid = target >= 0
    flat = (np.arange(batch)[:, None] * steps + np.arange(target.shape[1])[None, :]) * width
    flat = np.where(valid, flat + target, -1)
    picked = nk.take(attention, flat)
    eps = np.where(valid, 1e-12, 1.0)  # invalid picks read 0; log(1) contributes nothing
    return -(nk.log(picked + eps)).sum() / float(max(valid.sum(), 1))
