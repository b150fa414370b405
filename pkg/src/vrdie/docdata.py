"""Document data model, IOB span decoding, vocabulary and annotation I/O."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

CATEGORIES = ("I", "II", "III", "IV")


class ValidationError(ValueError):
    """An annotation breaks a data-model invariant."""


class AnnotationParseError(ValueError):
    def __init__(self, msg: str, byte_offset: int):
        super().__init__(f"{msg} (at byte {byte_offset})")
        self.byte_offset = byte_offset


@dataclass(frozen=True)
class BoundingBox:
    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if min(self.x0, self.y0) < 0 or self.x0 >= self.x1 or self.y0 >= self.y1:
            raise ValidationError(f"degenerate box {self.as_list()}")

    def as_list(self) -> list[int]:
        return [self.x0, self.y0, self.x1, self.y1]

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    def within(self, page_size: tuple[int, int]) -> bool:
        return self.x1 <= page_size[0] and self.y1 <= page_size[1]


@dataclass(frozen=True)
class Entity:
    cls: str
    value: str

    def __post_init__(self):
        if not self.value:
            raise ValidationError(f"entity {self.cls!r} has an empty value")


@dataclass
class TextInstance:
    box: BoundingBox
    text: str
    tags: list[str]

    def __post_init__(self):
        if len(self.text) < 1:
            raise ValidationError("text instance has empty text")
        if len(self.tags) != len(self.text):
            raise ValidationError(f"tags length {len(self.tags)} != text length {len(self.text)}")
        for t in self.tags:
            parse_tag(t)


@dataclass
class DocumentSample:
    page_size: tuple[int, int]
    instances: list[TextInstance]
    category: str
    raster: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.page_size = (int(self.page_size[0]), int(self.page_size[1]))
        if self.category not in CATEGORIES:
            raise ValidationError(f"unknown category {self.category!r}")
        if not self.instances:
            raise ValidationError("document has no text instances")
        for k, inst in enumerate(self.instances):
            if not inst.box.within(self.page_size):
                raise ValidationError(f"instances[{k}].bbox {inst.box.as_list()} outside page {self.page_size}")
        if self.raster is not None and self.raster.shape != (self.page_size[1], self.page_size[0]):
            raise ValidationError(f"raster shape {self.raster.shape} != page (H, W) "
                                  f"{(self.page_size[1], self.page_size[0])}")

    def entities(self) -> list[Entity]:
        return [e for inst in self.instances for e in gold_entities(inst)]


# -- IOB --------------------------------------------------------------------
def parse_tag(tag: str) -> tuple[str, str | None]:
    """Split an IOB tag into (prefix, class)."""
    if tag == "O":
        return "O", None
    if len(tag) > 2 and tag[:2] in ("B-", "I-"):
        return tag[0], tag[2:]
    raise ValidationError(f"unknown tag {tag!r}")


def decode_spans(tags: Sequence[str]) -> list[tuple[str, int, int]]:
    """Maximal B-k (I-k)* runs as (class, start, end_exclusive).

    An I-k that does not continue a run of class k opens a new one.
    """
    spans: list[tuple[str, int, int]] = []
    cur_cls, start = None, 0
    for i, tag in enumerate(tags):
        prefix, cls = parse_tag(tag)
        if prefix == "I" and cls == cur_cls:
            continue
        if cur_cls is not None:
            spans.append((cur_cls, start, i))
        cur_cls, start = (cls, i) if prefix != "O" else (None, i)
    if cur_cls is not None:
        spans.append((cur_cls, start, len(tags)))
    return spans


def entities_from_tags(text: str, tags: Sequence[str]) -> list[Entity]:
    if len(text) != len(tags):
        raise ValidationError(f"tags length {len(tags)} != text length {len(text)}")
    return [Entity(cls, text[a:b]) for cls, a, b in decode_spans(tags)]


def gold_entities(instance: TextInstance) -> list[Entity]:
    return entities_from_tags(instance.text, instance.tags)


def span_tags(length: int, spans: Iterable[tuple[str, int, int]]) -> list[str]:
    """Inverse of :func:`decode_spans` for non-overlapping spans."""
    tags = ["O"] * length
    for cls, a, b in spans:
        tags[a] = f"B-{cls}"
        for i in range(a + 1, b):
            tags[i] = f"I-{cls}"
    return tags


# -- vocabulary -------------------------------------------------------------
PAD, GO, EOS, UNK = "<pad>", "<go>", "<eos>", "<unk>"
RESERVED = (PAD, GO, EOS, UNK)


class Vocabulary:
    def __init__(self, chars: Iterable[str]):
        self.symbols: list[str] = list(RESERVED)
        for ch in chars:
            if ch not in self.symbols:
                self.symbols.append(ch)
        self.index = {s: i for i, s in enumerate(self.symbols)}

    pad, go, eos, unk = 0, 1, 2, 3

    def __len__(self) -> int:
        return len(self.symbols)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.symbols == other.symbols

    def encode(self, text: str) -> list[int]:
        return [self.index.get(ch, self.unk) for ch in text]

    def decode(self, indices: Iterable[int]) -> str:
        out = []
        for i in indices:
            i = int(i)
            if i == self.eos:
                break
            if i >= len(RESERVED):
                out.append(self.symbols[i])
        return "".join(out)

    def decode_aligned(self, indices: Iterable[int], placeholder: str = "?") -> str:
        """One character per decoder step up to EOS; reserved symbols become ``placeholder``."""
        out = []
        for i in indices:
            i = int(i)
            if i == self.eos:
                break
            out.append(self.symbols[i] if i >= len(RESERVED) else placeholder)
        return "".join(out)

    def to_json(self) -> list[str]:
        return self.symbols[len(RESERVED):]

    @classmethod
    def from_json(cls, chars: list[str]) -> "Vocabulary":
        return cls(chars)


def build_vocabulary(samples: Sequence[DocumentSample]) -> Vocabulary:
    if not samples:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    seen: dict[str, None] = {}
    for s in samples:
        for inst in s.instances:
            for ch in inst.text:
                seen.setdefault(ch, None)
    return Vocabulary(seen)


def entity_classes(samples: Sequence[DocumentSample]) -> list[str]:
    """Entity classes in first-appearance order."""
    seen: dict[str, None] = {}
    for s in samples:
        for inst in s.instances:
            for t in inst.tags:
                cls = parse_tag(t)[1]
                if cls is not None:
                    seen.setdefault(cls, None)
    return list(seen)


# -- annotation files ---------------------------------------------------------
def sample_to_json(s: DocumentSample) -> dict:
    return {
        "page_size": list(s.page_size),
        "category": s.category,
        "instances": [{"bbox": i.box.as_list(), "text": i.text, "tags": list(i.tags)} for i in s.instances],
    }


def _sample_from_json(k: int, obj: dict) -> DocumentSample:
    def fail(fld, err):
        raise ValidationError(f"samples[{k}].{fld}: {err}") from None

    try:
        page = obj["page_size"]
        cat = obj["category"]
        raw = obj["instances"]
    except (KeyError, TypeError) as exc:
        fail("", f"missing field {exc}")
    instances = []
    for j, inst in enumerate(raw):
        try:
            box = BoundingBox(*[int(v) for v in inst["bbox"]])
        except (ValidationError, TypeError, KeyError) as exc:
            fail(f"instances[{j}].bbox", exc)
        try:
            instances.append(TextInstance(box, str(inst["text"]), list(inst["tags"])))
        except ValidationError as exc:
            fail(f"instances[{j}].tags", exc)
        except KeyError as exc:
            fail(f"instances[{j}]", f"missing field {exc}")
    try:
        return DocumentSample(tuple(page), instances, cat)
    except ValidationError as exc:
        fail("instances" if instances else "category", exc)


def raster_dir(path: str | Path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + "_raster")


def save_annotations(path: str | Path, samples: Sequence[DocumentSample], rasters: bool = True) -> None:
    path = Path(path)
    path.write_text(json.dumps({"samples": [sample_to_json(s) for s in samples]}, indent=1))
    if rasters and any(s.raster is not None for s in samples):
        rdir = raster_dir(path)
        rdir.mkdir(parents=True, exist_ok=True)
        for k, s in enumerate(samples):
            if s.raster is not None:
                write_pgm(rdir / f"{k:06d}.pgm", s.raster)


def load_annotations(path: str | Path, rasters: bool = True) -> list[DocumentSample]:
    path = Path(path)
    blob = path.read_bytes()
    text = blob.decode("utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise AnnotationParseError(f"{path}: {exc.msg}", len(text[:exc.pos].encode("utf-8"))) from None
    if not isinstance(obj, dict) or not isinstance(obj.get("samples"), list):
        raise ValidationError(f"{path}: top level must be an object with a 'samples' list")
    samples = [_sample_from_json(k, s) for k, s in enumerate(obj["samples"])]
    rdir = raster_dir(path)
    if rasters and rdir.is_dir():
        for k, s in enumerate(samples):
            f = rdir / f"{k:06d}.pgm"
            if f.exists():
                s.raster = read_pgm(f)
                s.__post_init__()
    return samples


def write_pgm(path: str | Path, grid: np.ndarray) -> None:
    h, w = grid.shape
    pix = np.clip(np.rint(grid * 255.0), 0, 255).astype(np.uint8)
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pix.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            pos = blob.index(b"\n", pos) + 1
            continue
        end = pos
        while not blob[end:end + 1].isspace():
            end += 1
        fields.append(blob[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise AnnotationParseError(f"{path}: not a binary PGM", 0)
    w, h, maxval = (int(f) for f in fields[1:])
    pos += 1
    pix = np.frombuffer(blob, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w)
    return pix.astype(np.float64) / maxval
