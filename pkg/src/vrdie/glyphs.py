"""Built-in 5x7 bitmap font used to rasterize synthetic pages."""
from __future__ import annotations

import numpy as np

_FONT = {
    "0": ["01110", "10001", "10011", "10101", "11001", "10001", "01110"],
    "1": ["00100", "01100", "00100", "00100", "00100", "00100", "01110"],
    "2": ["01110", "10001", "00001", "00010", "00100", "01000", "11111"],
    "3": ["11111", "00010", "00100", "00010", "00001", "10001", "01110"],
    "4": ["00010", "00110", "01010", "10010", "11111", "00010", "00010"],
    "5": ["11111", "10000", "11110", "00001", "00001", "10001", "01110"],
    "6": ["00110", "01000", "10000", "11110", "10001", "10001", "01110"],
    "7": ["11111", "00001", "00010", "00100", "01000", "01000", "01000"],
    "8": ["01110", "10001", "10001", "01110", "10001", "10001", "01110"],
    "9": ["01110", "10001", "10001", "01111", "00001", "00010", "01100"],
    "A": ["01110", "10001", "10001", "11111", "10001", "10001", "10001"],
    "B": ["11110", "10001", "10001", "11110", "10001", "10001", "11110"],
    "C": ["01110", "10001", "10000", "10000", "10000", "10001", "01110"],
    "D": ["11100", "10010", "10001", "10001", "10001", "10010", "11100"],
    "E": ["11111", "10000", "10000", "11110", "10000", "10000", "11111"],
    "F": ["11111", "10000", "10000", "11110", "10000", "10000", "10000"],
    "G": ["01110", "10001", "10000", "10111", "10001", "10001", "01111"],
    "H": ["10001", "10001", "10001", "11111", "10001", "10001", "10001"],
    "I": ["01110", "00100", "00100", "00100", "00100", "00100", "01110"],
    "J": ["00111", "00010", "00010", "00010", "00010", "10010", "01100"],
    "K": ["10001", "10010", "10100", "11000", "10100", "10010", "10001"],
    "L": ["10000", "10000", "10000", "10000", "10000", "10000", "11111"],
    "M": ["10001", "11011", "10101", "10101", "10001", "10001", "10001"],
    "N": ["10001", "10001", "11001", "10101", "10011", "10001", "10001"],
    "O": ["01110", "10001", "10001", "10001", "10001", "10001", "01110"],
    "P": ["11110", "10001", "10001", "11110", "10000", "10000", "10000"],
    "Q": ["01110", "10001", "10001", "10001", "10101", "10010", "01101"],
    "R": ["11110", "10001", "10001", "11110", "10100", "10010", "10001"],
    "S": ["01111", "10000", "10000", "01110", "00001", "00001", "11110"],
    "T": ["11111", "00100", "00100", "00100", "00100", "00100", "00100"],
    "U": ["10001", "10001", "10001", "10001", "10001", "10001", "01110"],
    "V": ["10001", "10001", "10001", "10001", "10001", "01010", "00100"],
    "W": ["10001", "10001", "10001", "10101", "10101", "10101", "01010"],
    "X": ["10001", "10001", "01010", "00100", "01010", "10001", "10001"],
    "Y": ["10001", "10001", "10001", "01010", "00100", "00100", "00100"],
    "Z": ["11111", "00001", "00010", "00100", "01000", "10000", "11111"],
    " ": ["00000"] * 7,
    ".": ["00000", "00000", "00000", "00000", "00000", "01100", "01100"],
    ",": ["00000", "00000", "00000", "00000", "01100", "00100", "01000"],
    ":": ["00000", "01100", "01100", "00000", "01100", "01100", "00000"],
    "-": ["00000", "00000", "00000", "11111", "00000", "00000", "00000"],
    "/": ["00000", "00001", "00010", "00100", "01000", "10000", "00000"],
    "$": ["00100", "01111", "10100", "01110", "00101", "11110", "00100"],
    "#": ["01010", "01010", "11111", "01010", "11111", "01010", "01010"],
    "(": ["00010", "00100", "01000", "01000", "01000", "00100", "00010"],
    ")": ["01000", "00100", "00010", "00010", "00010", "00100", "01000"],
    "@": ["01110", "10001", "00001", "01101", "10101", "10101", "01110"],
    "&": ["01100", "10010", "10100", "01000", "10101", "10010", "01101"],
    "%": ["11000", "11001", "00010", "00100", "01000", "10011", "00011"],
    "'": ["01100", "00100", "01000", "00000", "00000", "00000", "00000"],
}

GLYPH_W, GLYPH_H = 5, 7
CHARSET = "".join(_FONT)
_UNKNOWN = np.ones((GLYPH_H, GLYPH_W), dtype=np.float64)
_BITMAPS = {ch: np.array([[int(b) for b in row] for row in rows], dtype=np.float64)
            for ch, rows in _FONT.items()}


def glyph(ch: str) -> np.ndarray:
    """7x5 bitmap for ``ch``; characters outside the font render as a solid block."""
    return _BITMAPS.get(ch, _UNKNOWN)


def text_extent(text: str, scale: int) -> tuple[int, int]:
    """(width, height) in pixels of a rendered line, padding included.

    Each character occupies a (GLYPH_W + 1) * scale cell; the line has
    ``scale`` blank rows below the glyphs so an 8-row resize of the box
    samples one glyph row per output row.
    """
    return (GLYPH_W + 1) * scale * len(text), (GLYPH_H + 1) * scale


def render_text(text: str, scale: int, bold: bool = False) -> np.ndarray:
    w, h = text_extent(text, scale)
    out = np.zeros((h, w))
    cell = (GLYPH_W + 1) * scale
    for k, ch in enumerate(text):
        bmp = glyph(ch)
        if bold:
            bmp = np.maximum(bmp, np.pad(bmp, ((0, 0), (1, 0)))[:, :GLYPH_W])
        big = np.kron(bmp, np.ones((scale, scale)))
        out[: GLYPH_H * scale, k * cell: k * cell + GLYPH_W * scale] = big
    return out
