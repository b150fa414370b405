"""Synthetic page generator covering the four layout/text-type categories.

    I    fixed layout,  structured key-value fields   (taxi-invoice-like)
    II   fixed layout,  free text with embedded entities (email-like)
    III  random layout, structured key-value fields   (receipt-like)
    IV   random layout, free text with embedded entities (resume-like)

Samples are deterministic per (seed, index).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .docdata import CATEGORIES, BoundingBox, DocumentSample, TextInstance, span_tags
from .glyphs import render_text, text_extent

SCALE = 2
ROW_H = text_extent("X", SCALE)[1]
CHAR_W = text_extent("X", SCALE)[0]

Rng = np.random.Generator

WORDS = ["ACME", "NOVA", "ORBIT", "PINE", "DELTA", "LUNA", "METRO", "CEDAR", "POLAR", "RAPID", "SOLAR", "ZENITH"]
SHOPS = ["MART", "FOODS", "STORE", "DELI", "SHOP", "CAFE"]
FIRST = ["ANN", "BOB", "CARL", "DORA", "EVAN", "FAYE", "GUS", "HANA", "IVAN", "JUNE", "KAI", "LENA"]
LAST = ["SMITH", "BROWN", "CHEN", "DIAZ", "EVANS", "FORD", "GRAY", "HUANG", "KING", "LOPEZ"]
CITIES = ["PARIS", "OSLO", "LIMA", "ROME", "DUBLIN", "CAIRO", "TOKYO", "QUITO", "SEOUL"]
SCHOOLS = ["MIT", "ETH", "UCLA", "NYU", "KTH", "EPFL", "CMU", "UCL"]
DEGREES = ["BSC", "MSC", "PHD", "BA", "MBA"]
FIRMS = ["IBM", "SAP", "ACME CO", "NOVA LTD", "ORBIT INC", "DELTA AG"]


def _digits(rng: Rng, n: int) -> str:
    return "".join(str(d) for d in rng.integers(0, 10, size=n))


def _date(rng: Rng) -> str:
    return f"{rng.integers(2015, 2025)}-{rng.integers(1, 13):02d}-{rng.integers(1, 29):02d}"


def _time(rng: Rng) -> str:
    return f"{rng.integers(0, 24):02d}:{rng.integers(0, 60):02d}"


def _amount(rng: Rng, whole_digits: int = 2) -> str:
    return f"{_digits(rng, whole_digits)}.{_digits(rng, 2)}"


def _pick(rng: Rng, pool: list[str]) -> str:
    return pool[int(rng.integers(len(pool)))]


@dataclass(frozen=True)
class Field:
    key: str
    cls: str | None
    value: Callable[[Rng], str]
    bold: bool = False


# Category I: nine fixed-width fields so every page shares one box list.
TAXI_FIELDS = [
    Field("CODE", "CODE", lambda r: _digits(r, 12)),
    Field("NO.", "NUMBER", lambda r: _digits(r, 8)),
    Field("DATE", "DATE", _date),
    Field("ON", "PICKUP", _time),
    Field("OFF", "DROPOFF", _time),
    Field("PRICE", "PRICE", lambda r: _amount(r, 1)),
    Field("KM", "MILEAGE", lambda r: f"{_digits(r, 2)}.{_digits(r, 1)}"),
    Field("TOTAL", "AMOUNT", lambda r: _amount(r, 2)),
    Field("CAR", "PLATE", lambda r: chr(65 + int(r.integers(26))) + _digits(r, 5)),
]

# Category III: same-format amounts only separable through their key / layout.
RECEIPT_FIELDS = [
    Field("DATE", "DATE", _date),
    Field("TIME", "TIME", _time),
    Field("TEL", "TEL", lambda r: f"{_digits(r, 3)}-{_digits(r, 4)}"),
    Field("SUBTOTAL", "SUBTOTAL", _amount),
    Field("TAX", "TAX", lambda r: f"0{_amount(r, 1)}"),
    Field("TOTAL", "TOTAL", _amount, bold=True),
    Field("CASH", None, _amount),
    Field("CHANGE", None, _amount),
]

EMAIL_TEMPLATES = [
    ("SHIP {QTY} TO {CITY}", {"QTY": lambda r: _digits(r, 2), "CITY": lambda r: _pick(r, CITIES)}),
    ("REF {REF} DUE SOON", {"REF": lambda r: f"#{_digits(r, 5)}"}),
    ("MEET IN {CITY}", {"CITY": lambda r: _pick(r, CITIES)}),
    ("ORDER {REF} X{QTY}", {"REF": lambda r: f"#{_digits(r, 5)}", "QTY": lambda r: _digits(r, 2)}),
]

RESUME_TEMPLATES = [
    ("NAME: {NAME}", {"NAME": lambda r: f"{_pick(r, FIRST)} {_pick(r, LAST)}"}),
    ("{DEGREE} AT {SCHOOL}", {"DEGREE": lambda r: _pick(r, DEGREES), "SCHOOL": lambda r: _pick(r, SCHOOLS)}),
    ("WORKED AT {COMPANY}", {"COMPANY": lambda r: _pick(r, FIRMS)}),
    ("TEL {PHONE}", {"PHONE": lambda r: f"{_digits(r, 3)}-{_digits(r, 4)}"}),
    ("FROM {YEAR} TO {YEAR2}", {"YEAR": lambda r: str(r.integers(1995, 2010)),
                                "YEAR2": lambda r: str(r.integers(2010, 2024))}),
]

CATEGORY_CLASSES = {
    "I": [f.cls for f in TAXI_FIELDS],
    "II": ["SENDER", "DATE", "QTY", "CITY", "REF"],
    "III": ["STORE"] + [f.cls for f in RECEIPT_FIELDS if f.cls],
    "IV": ["NAME", "DEGREE", "SCHOOL", "COMPANY", "PHONE", "YEAR"],
}

PAGE_SIZES = {"I": (256, 224), "II": (288, 160), "III": (320, 320), "IV": (320, 224)}


def fill_template(rng: Rng, template: str, slots: dict[str, Callable[[Rng], str]]):
    """Render ``template`` and return (text, [(class, start, end)])."""
    text, spans, pos = "", [], 0
    while pos < len(template):
        open_ = template.find("{", pos)
        if open_ < 0:
            text += template[pos:]
            break
        text += template[pos:open_]
        close = template.index("}", open_)
        slot = template[open_ + 1:close]
        value = slots[slot](rng)
        cls = slot.rstrip("0123456789")
        spans.append((cls, len(text), len(text) + len(value)))
        text += value
        pos = close + 1
    return text, spans


class _Page:
    def __init__(self, category: str):
        self.category = category
        self.size = PAGE_SIZES[category]
        self.raster = np.zeros((self.size[1], self.size[0]))
        self.instances: list[TextInstance] = []

    def put(self, x: int, y: int, text: str, spans=(), bold: bool = False) -> None:
        w, h = text_extent(text, SCALE)
        if x + w > self.size[0] or y + h > self.size[1]:
            raise RuntimeError(f"{text!r} at ({x},{y}) overflows page {self.size}")
        self.raster[y:y + h, x:x + w] = np.maximum(self.raster[y:y + h, x:x + w],
                                                    render_text(text, SCALE, bold))
        self.instances.append(TextInstance(BoundingBox(x, y, x + w, y + h), text,
                                           span_tags(len(text), spans)))

    def sample(self) -> DocumentSample:
        return DocumentSample(self.size, self.instances, self.category, self.raster)


def _category_i(rng: Rng) -> DocumentSample:
    page = _Page("I")
    page.put(8, 4, "TAXI", bold=True)
    for row, f in enumerate(TAXI_FIELDS):
        y = 26 + row * (ROW_H + 4)
        value = f.value(rng)
        page.put(8, y, f.key)
        page.put(80, y, value, [(f.cls, 0, len(value))])
    return page.sample()


def _category_ii(rng: Rng) -> DocumentSample:
    page = _Page("II")
    sender = f"{_pick(rng, FIRST)} {_pick(rng, LAST)}"
    date = _date(rng)
    page.put(8, 6, "FROM:")
    page.put(80, 6, sender, [("SENDER", 0, len(sender))])
    page.put(8, 28, "DATE:")
    page.put(80, 28, date, [("DATE", 0, len(date))])
    for line, k in enumerate(rng.choice(len(EMAIL_TEMPLATES), size=3, replace=False)):
        text, spans = fill_template(rng, *EMAIL_TEMPLATES[k])
        page.put(8, 60 + line * (ROW_H + 8), text, spans)
    return page.sample()


def _category_iii(rng: Rng) -> DocumentSample:
    page = _Page("III")
    store = f"{_pick(rng, WORDS)} {_pick(rng, SHOPS)}"
    page.put(int(rng.integers(4, 60)), int(rng.integers(2, 12)), store, [("STORE", 0, len(store))], bold=True)
    order = rng.permutation(len(RECEIPT_FIELDS))
    y = 36 + int(rng.integers(0, 8))
    key_x = int(rng.integers(4, 30))
    val_x = key_x + 8 * CHAR_W + int(rng.integers(4, 60))
    for k in order:
        f = RECEIPT_FIELDS[k]
        value = f.value(rng)
        page.put(key_x + int(rng.integers(0, 6)), y, f.key)
        page.put(val_x + int(rng.integers(0, 10)), y, value, [(f.cls, 0, len(value))] if f.cls else (),
                 bold=f.bold)
        y += ROW_H + int(rng.integers(4, 14))
    return page.sample()


def _category_iv(rng: Rng) -> DocumentSample:
    page = _Page("IV")
    order = rng.permutation(len(RESUME_TEMPLATES))
    y = 4 + int(rng.integers(0, 10))
    for k in order:
        text, spans = fill_template(rng, *RESUME_TEMPLATES[k])
        x = int(rng.integers(4, page.size[0] - text_extent(text, SCALE)[0] - 4))
        page.put(x, y, text, spans)
        y += ROW_H + int(rng.integers(8, 20))
    return page.sample()


_BUILDERS = {"I": _category_i, "II": _category_ii, "III": _category_iii, "IV": _category_iv}


def synthesize_one(category: str, seed: int, index: int) -> DocumentSample:
    if category not in _BUILDERS:
        raise ValueError(f"unknown category {category!r}; expected one of {', '.join(CATEGORIES)}")
    return _BUILDERS[category](np.random.default_rng([seed, index]))


def synthesize_documents(category: str, count: int, seed: int, start: int = 0) -> list[DocumentSample]:
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if category not in _BUILDERS:
        raise ValueError(f"unknown category {category!r}; expected one of {', '.join(CATEGORIES)}")
    return [synthesize_one(category, seed, start + i) for i in range(count)]


def layout_signature(sample: DocumentSample) -> tuple:
    return tuple(tuple(i.box.as_list()) for i in sample.instances)
