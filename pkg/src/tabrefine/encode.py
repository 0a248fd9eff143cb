"""Leakage-free encoding layer between typed tables and model matrices.

Categorical columns become big-endian binary code spans zero-padded to one
dataset-wide width; the missingness mask expands so a missing source cell
marks its whole span. Standardization statistics come from observed entries
only and are exactly invertible on observed cells.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import CATEGORICAL, NUMERICAL, Column, RawTable, Schema
from .masks import Mask

SIGMA_FLOOR = 1e-8


class ShapeMismatch(ValueError):
    pass


class LayoutMismatch(ValueError):
    pass


class EmptyColumn(ValueError):
    def __init__(self, j: int):
        super().__init__(f"encoded column {j} has no observed entries")
        self.column = j


@dataclass(frozen=True)
class SpanInfo:
    origin: int          # source column index
    start: int           # first encoded column of the span
    width: int
    codes: np.ndarray    # (K, width) uint8, row k = big-endian code of k


@dataclass
class CodeBook:
    schema: Schema
    numeric_targets: dict     # source column -> encoded column
    spans: list               # SpanInfo per categorical source column
    d: int

    @property
    def numeric_encoded_cols(self) -> list:
        return sorted(self.numeric_targets.values())

    def span_for(self, source_col: int) -> SpanInfo:
        for s in self.spans:
            if s.origin == source_col:
                return s
        raise KeyError(source_col)


@dataclass
class EncodedMatrix:
    values: np.ndarray   # (m, d) float64
    mask: np.ndarray     # (m, d) uint8, 1 = missing

    @property
    def shape(self):
        return self.values.shape


@dataclass
class Standardizer:
    mu: np.ndarray
    sigma: np.ndarray    # floored at SIGMA_FLOOR

    @property
    def d(self) -> int:
        return len(self.mu)


def _binary_codes(n_categories: int, width: int) -> np.ndarray:
    ks = np.arange(n_categories, dtype=np.uint32)
    shifts = np.arange(width - 1, -1, -1, dtype=np.uint32)
    return ((ks[:, None] >> shifts[None, :]) & 1).astype(np.uint8)


def code_width(schema: Schema) -> int:
    """Dataset-wide span width: max over categorical columns of ceil(log2 K)."""
    widths = [int(np.ceil(np.log2(len(c.categories))))
              for c in schema.columns if c.kind == CATEGORICAL]
    return max(widths) if widths else 0


def binary_encode(table: RawTable, mask: Mask) -> tuple:
    """Expand a typed table and its mask into a float matrix.

    Numerical columns copy through; category index k becomes its big-endian
    binary code zero-padded to the uniform width. A missing categorical cell
    marks its entire span missing. Absent values sit at 0.0 under mask 1.
    """
    m, n = table.n_rows, table.n_cols
    if mask.shape != (m, n):
        raise ShapeMismatch(f"mask {mask.shape} vs table {(m, n)}")
    width = code_width(table.schema)

    numeric_targets = {}
    spans = []
    enc_col = 0
    for j, col in enumerate(table.schema.columns):
        if col.kind == NUMERICAL:
            numeric_targets[j] = enc_col
            enc_col += 1
        else:
            spans.append(SpanInfo(j, enc_col, width,
                                  _binary_codes(len(col.categories), width)))
            enc_col += width
    d = enc_col
    book = CodeBook(table.schema, numeric_targets, spans, d)

    values = np.zeros((m, d))
    emask = np.zeros((m, d), dtype=np.uint8)
    for j, col in enumerate(table.schema.columns):
        src_missing = mask.bits[:, j].astype(bool)
        if col.kind == NUMERICAL:
            t = numeric_targets[j]
            data = np.asarray(table.columns[j], dtype=np.float64)
            absent = np.isnan(data)
            values[:, t] = np.where(absent, 0.0, data)
            emask[:, t] = src_missing | absent
        else:
            span = book.span_for(j)
            idx = table.columns[j]
            absent = idx < 0
            codes = span.codes[np.where(absent, 0, idx)]
            sl = slice(span.start, span.start + span.width)
            values[:, sl] = np.where(absent[:, None], 0.0, codes)
            emask[:, sl] = (src_missing | absent)[:, None]
    return EncodedMatrix(values, emask), book


def expand_mask(mask: Mask, book: CodeBook) -> np.ndarray:
    """Expanded (m, d) mask without touching values."""
    m = mask.shape[0]
    out = np.zeros((m, book.d), dtype=np.uint8)
    for j, t in book.numeric_targets.items():
        out[:, t] = mask.bits[:, j]
    for span in book.spans:
        sl = slice(span.start, span.start + span.width)
        out[:, sl] = mask.bits[:, span.origin][:, None]
    return out


def fit_standardizer(encoded: EncodedMatrix) -> Standardizer:
    """Per-column mean and population std over observed entries only."""
    m, d = encoded.shape
    mu = np.empty(d)
    sigma = np.empty(d)
    obs = encoded.mask == 0
    for j in range(d):
        col = encoded.values[obs[:, j], j]
        if col.size == 0:
            raise EmptyColumn(j)
        mu[j] = col.mean()
        sigma[j] = max(col.std(), SIGMA_FLOOR)
    return Standardizer(mu, sigma)


def standardize(encoded: EncodedMatrix, std: Standardizer) -> EncodedMatrix:
    """Observed cells -> (x - mu) / sigma; missing cells -> exactly 0."""
    if encoded.shape[1] != std.d:
        raise LayoutMismatch(f"matrix d={encoded.shape[1]} vs standardizer d={std.d}")
    z = (encoded.values - std.mu) / std.sigma
    z[encoded.mask == 1] = 0.0
    return EncodedMatrix(z, encoded.mask.copy())


def destandardize(matrix: np.ndarray, std: Standardizer) -> np.ndarray:
    if matrix.shape[1] != std.d:
        raise LayoutMismatch(f"matrix d={matrix.shape[1]} vs standardizer d={std.d}")
    return matrix * std.sigma + std.mu


def decode_span(raw_bits: np.ndarray, span: SpanInfo) -> np.ndarray:
    """Threshold a real-valued span at 0.5, then snap to the nearest valid
    code by Hamming distance (ties to the lowest category index)."""
    bits = (raw_bits >= 0.5).astype(np.uint8)
    ham = (bits[:, None, :] != span.codes[None, :, :]).sum(axis=2)
    return ham.argmin(axis=1)


def destandardize_and_decode(matrix: np.ndarray, std: Standardizer,
                             book: CodeBook) -> RawTable:
    """Invert standardization and binary encoding into a complete RawTable."""
    raw = destandardize(np.asarray(matrix, dtype=np.float64), std)
    if raw.shape[1] != book.d:
        raise LayoutMismatch(f"matrix d={raw.shape[1]} vs codebook d={book.d}")
    columns = []
    for j, col in enumerate(book.schema.columns):
        if col.kind == NUMERICAL:
            columns.append(raw[:, book.numeric_targets[j]].copy())
        else:
            span = book.span_for(j)
            sl = slice(span.start, span.start + span.width)
            columns.append(decode_span(raw[:, sl], span).astype(np.int64))
    return RawTable(book.schema, columns)


# -- serialization ------------------------------------------------------------

def save_transform(path, std: Standardizer, book: CodeBook) -> None:
    """Key-value text dump of the fitted transform, for out-of-sample reuse."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("format_version = 1\n")
        f.write(f"d = {book.d}\n")
        f.write(f"mu = {','.join(repr(v) for v in std.mu)}\n")
        f.write(f"sigma = {','.join(repr(v) for v in std.sigma)}\n")
        for j, col in enumerate(book.schema.columns):
            if col.kind == NUMERICAL:
                f.write(f"col.{j} = numerical:{book.numeric_targets[j]}\n")
            else:
                s = book.span_for(j)
                f.write(f"col.{j} = categorical:{s.start}:{s.width}\n")


def load_transform(path, schema: Schema) -> tuple:
    from .util import read_kv
    kv = read_kv(path)
    mu = np.array([float(v) for v in kv["mu"].split(",")])
    sigma = np.array([float(v) for v in kv["sigma"].split(",")])
    numeric_targets = {}
    spans = []
    for j, col in enumerate(schema.columns):
        desc = kv[f"col.{j}"]
        kind, _, rest = desc.partition(":")
        if kind == "numerical":
            numeric_targets[j] = int(rest)
        else:
            start, _, width = rest.partition(":")
            spans.append(SpanInfo(j, int(start), int(width),
                                  _binary_codes(len(col.categories), int(width))))
    book = CodeBook(schema, numeric_targets, spans, int(kv["d"]))
    return Standardizer(mu, sigma), book
