"""The assembled reading + extraction network."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import numkit as nk
from .context import ContextBlock, ContextConfig, fuse_context, normalize_box
from .docdata import DocumentSample, Entity, Vocabulary
from .extractor import Extractor, TagSpace, extract_entities
from .numkit import ParamStore, Tensor
from .prior import PriorAbsorber
from .reader import (Reader, ReaderConfig, attention_focus_loss, crop_resize, encode_targets,
                     recognition_loss)


@dataclass
class ModelConfig:
    reader: ReaderConfig = field(default_factory=ReaderConfig)
    context: ContextConfig = field(default_factory=ContextConfig)
    d_lstm: int = 64
    d_prior: int = 32
    share_vocab_head: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        reader = ReaderConfig(**d.pop("reader", {}))
        context = ContextConfig(**d.pop("context", {}))
        return cls(reader=reader, context=context, **d)


@dataclass
class PreparedDoc:
    """A sample plus everything about it that does not depend on the weights."""
    sample: DocumentSample
    crops: list[np.ndarray]
    norm_boxes: np.ndarray
    texts: list[str]
    tags: list[list[int]]


@dataclass
class InstancePrediction:
    bbox: list[int]
    text_pred: str
    tags_pred: list[str]
    entities: list[Entity]

    def to_json(self) -> dict:
        return {"bbox": self.bbox, "text_pred": self.text_pred, "tags_pred": self.tags_pred,
                "entities": [{"class": e.cls, "value": e.value} for e in self.entities]}


class DocumentIE:
    def __init__(self, vocab: Vocabulary, classes: Sequence[str], cfg: ModelConfig | None = None,
                 seed: int = 0):
        self.cfg = cfg = cfg or ModelConfig()
        self.vocab = vocab
        self.tag_space = TagSpace(classes)
        self.store = store = ParamStore(seed)
        self.reader = Reader(store, len(vocab), cfg.reader)
        self.prior = PriorAbsorber(store, len(vocab), cfg.reader.d_state, cfg.context.prior,
                                   cfg.context.fusion, cfg.d_prior)
        if cfg.share_vocab_head:
            for k in ("w", "b"):
                del store.tensors[f"prior.vocab_head.{k}"]
            self.prior.vocab_head = self.reader.out
        self.context = ContextBlock(store, cfg.reader.d_conv, cfg.reader.d_state, cfg.context)
        self.extractor = Extractor(store, cfg.reader.d_state + cfg.context.d_model, self.tag_space,
                                   cfg.d_lstm)

    # -- data ---------------------------------------------------------------
    def prepare(self, samples: Sequence[DocumentSample]) -> list[PreparedDoc]:
        out = []
        for s in samples:
            crops = [crop_resize(s, i.box) for i in s.instances]
            boxes = np.stack([normalize_box(i.box, s.page_size) for i in s.instances])
            out.append(PreparedDoc(s, crops, boxes, [i.text for i in s.instances],
                                   [self.tag_space.encode(i.tags) for i in s.instances]))
        return out

    # -- shared pieces ------------------------------------------------------------
    def _read(self, docs: Sequence[PreparedDoc], teacher: bool):
        crops = [c for d in docs for c in d.crops]
        feat = self.reader.extract_instance_features(crops)
        enc = self.reader.encode_sequence(feat)
        texts = [t for d in docs for t in d.texts] if teacher else None
        rec = self.reader.recognize(enc, self.vocab, texts)
        return feat, rec

    def _contextualize(self, docs, grid, col_mask, states, step_mask, lengths):
        o, vocab_logits = self.prior(states, step_mask)
        boxes = np.concatenate([d.norm_boxes for d in docs])
        emb = self.context.instance_embeddings(grid, col_mask, o, lengths, boxes)
        ctx, start = [], 0
        for d in docs:
            m = len(d.texts)
            c, _ = self.context.document_context(emb[start:start + m], d.norm_boxes)
            ctx.append(c)
            start += m
        ctx = nk.concat(ctx, axis=0) if len(ctx) > 1 else ctx[0]
        return fuse_context(o, ctx), vocab_logits

    # -- training -----------------------------------------------------------------
    def _reading_losses(self, feat, rec) -> dict[str, Tensor]:
        targets, mask = encode_targets(rec.texts, self.vocab)
        n_chars = rec.lengths - 1
        return {"recog": recognition_loss(rec.logits, targets, mask),
                "focus": attention_focus_loss(rec.attention, feat.lengths, n_chars)}

    def recognition_only(self, docs: Sequence[PreparedDoc]) -> dict[str, Tensor]:
        """Reading losses alone: recognition NLL and attention focus."""
        feat, rec = self._read(docs, teacher=True)
        return self._reading_losses(feat, rec)

    def losses(self, docs: Sequence[PreparedDoc], detach_reader: bool = False) -> dict[str, Tensor]:
        """Teacher-forced pass returning reading, extraction and auxiliary losses."""
        feat, rec = self._read(docs, teacher=True)
        out = self._reading_losses(feat, rec)
        targets, tmask = encode_targets(rec.texts, self.vocab)
        grid, states = feat.grid, rec.states
        if detach_reader:
            grid, states = grid.detach(), states.detach()
        u, vocab_logits = self._contextualize(docs, grid, feat.mask, states, rec.mask, rec.lengths)
        l_aux = recognition_loss(vocab_logits, targets, tmask)
        n_chars = rec.lengths - 1
        width = int(n_chars.max())
        char_mask = np.arange(width)[None, :] < n_chars[:, None]
        tags = np.zeros((len(n_chars), width), dtype=np.int64)
        for k, t in enumerate(t for d in docs for t in d.tags):
            tags[k, :len(t)] = t
        out["info"] = self.extractor.loss(u[:, :width], tags, char_mask)
        out["aux"] = l_aux
        return out

    # -- inference -------------------------------------------------------------------
    def predict(self, docs: Sequence[PreparedDoc]) -> list[list[InstancePrediction]]:
        with nk.no_grad():
            feat, rec = self._read(docs, teacher=False)
            u, _ = self._contextualize(docs, feat.grid, feat.mask, rec.states, rec.mask, rec.lengths)
            n_chars = np.array([len(t) for t in rec.texts])
            width = max(int(n_chars.max()), 1)
            char_mask = np.arange(width)[None, :] < n_chars[:, None]
            if u.shape[1] < width:
                width = u.shape[1]
            paths = self.extractor.decode(u[:, :width], char_mask[:, :width])
        out, k = [], 0
        for d in docs:
            preds = []
            for inst in d.sample.instances:
                text, path = rec.texts[k], paths[k]
                preds.append(InstancePrediction(inst.box.as_list(), text, self.tag_space.decode(path),
                                                extract_entities(text, path, self.tag_space)))
                k += 1
            out.append(preds)
        return out

    # -- checkpoint helpers ---------------------------------------------------------
    def state(self) -> dict[str, np.ndarray]:
        return self.store.state()

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        self.store.load_state(state)
