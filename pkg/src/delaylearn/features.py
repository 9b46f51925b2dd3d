"""Hashed sparse feature extraction for click records.

Raw clicks arrive as ordered (field, value) string pairs, one record per TSV
line. Every field becomes a hashed one-hot term, and (optionally) every
unordered pair of fields becomes a hashed cross term, all sharing one
2**hash_bits index space. Numeric columns are bucketized into categorical
fields first so the whole pipeline is hashed-categorical.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

import numpy as np

# Seed folded into the feature hash. Fixed so corpora are reproducible across
# runs and machines; override only to build deliberately disjoint corpora.
DEFAULT_HASH_SEED = 0x5EED_1205_CAFE_F00D

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes, seed: int = 0) -> int:
    """Seeded 64-bit FNV-1a. Pure-Python, byte-order independent."""
    h = (_FNV_OFFSET ^ seed) & _MASK64
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


class FeatureError(ValueError):
    """Invalid featurization input or configuration."""


class RecordError(ValueError):
    """A single malformed input line; carries the 1-based line number."""

    def __init__(self, message: str, line_no: int = 0):
        super().__init__(f"line {line_no}: {message}" if line_no else message)
        self.line_no = line_no


@dataclass
class RawRecord:
    """One click: identity, time, categorical fields, optional conversion."""

    click_id: str
    click_ts: float
    fields: list[tuple[str, str]]
    conversion_delay: Optional[float] = None
    conversion_value: Optional[float] = None

    def __post_init__(self):
        if (self.conversion_delay is None) != (self.conversion_value is None):
            raise ValueError(
                f"record {self.click_id}: conversion delay and value must "
                "be present together"
            )
        if self.conversion_delay is not None:
            if not self.conversion_delay > 0:
                raise ValueError(
                    f"record {self.click_id}: conversion delay must be > 0"
                )
            if self.conversion_value < 0:
                raise ValueError(
                    f"record {self.click_id}: conversion value must be >= 0"
                )

    @property
    def converted(self) -> bool:
        return self.conversion_delay is not None


class SparseVector:
    """Sorted sparse vector over a hashed index space.

    Indices are strictly increasing (duplicate hashes were summed during
    construction) and values are finite.
    """

    __slots__ = ("indices", "values")

    def __init__(self, indices, values, validate: bool = True):
        self.indices = np.asarray(indices, dtype=np.int64)
        self.values = np.asarray(values, dtype=np.float64)
        if validate:
            if self.indices.shape != self.values.shape or self.indices.ndim != 1:
                raise FeatureError("indices and values must be 1-d and same length")
            if self.indices.size:
                if self.indices[0] < 0:
                    raise FeatureError("indices must be nonnegative")
                if np.any(np.diff(self.indices) <= 0):
                    raise FeatureError("indices must be strictly increasing")
            if not np.all(np.isfinite(self.values)):
                raise FeatureError("values must be finite")

    def __len__(self) -> int:
        return int(self.indices.size)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SparseVector)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self) -> str:
        pairs = ", ".join(
            f"{i}:{v:g}" for i, v in zip(self.indices, self.values)
        )
        return f"SparseVector({{{pairs}}})"


class Featurizer:
    """Turns RawRecords into hashed SparseVectors.

    Stateless apart from a hash memo; the same record and configuration
    always produce the same vector, on any platform.
    """

    def __init__(self, hash_bits: int, crosses: bool = True,
                 seed: int = DEFAULT_HASH_SEED):
        if not isinstance(hash_bits, int) or not 1 <= hash_bits <= 30:
            raise FeatureError(f"hash_bits must be in [1, 30], got {hash_bits!r}")
        self.hash_bits = hash_bits
        self.crosses = crosses
        self.seed = seed
        self._mod = 1 << hash_bits
        self._memo: dict[str, int] = {}

    def _bucket(self, term: str) -> int:
        h = self._memo.get(term)
        if h is None:
            h = fnv1a64(term.encode("utf-8"), self.seed)
            self._memo[term] = h
        return h % self._mod

    def featurize(self, record: RawRecord) -> SparseVector:
        fields = record.fields
        if not fields:
            raise FeatureError(f"record {record.click_id}: no fields to featurize")
        singles = [f"{name}={value}" for name, value in fields]
        accum: dict[int, float] = {}
        for term in singles:
            b = self._bucket(term)
            accum[b] = accum.get(b, 0.0) + 1.0
        if self.crosses:
            k = len(singles)
            for i in range(k):
                left = singles[i]
                for j in range(i + 1, k):
                    b = self._bucket(left + "&" + singles[j])
                    accum[b] = accum.get(b, 0.0) + 1.0
        idx = sorted(accum)
        return SparseVector(
            np.fromiter(idx, dtype=np.int64, count=len(idx)),
            np.fromiter((accum[i] for i in idx), dtype=np.float64, count=len(idx)),
            validate=False,
        )

    def __call__(self, record: RawRecord) -> SparseVector:
        return self.featurize(record)


def featurize(record: RawRecord, hash_bits: int, crosses: bool = True,
              seed: int = DEFAULT_HASH_SEED) -> SparseVector:
    """One-shot convenience wrapper; loops should hold a Featurizer."""
    return Featurizer(hash_bits, crosses=crosses, seed=seed).featurize(record)


# --- TSV ingestion ------------------------------------------------------

#: Roles a schema may assign to a column.
_SIMPLE_ROLES = ("click_id", "click_ts", "delay", "value", "skip")


@dataclass
class _NumericColumn:
    name: str
    edges: list[float]

    def bucketize(self, raw: str) -> tuple[str, str]:
        if raw == "":
            return (self.name, "na")
        v = float(raw)
        if not math.isfinite(v):
            raise ValueError(f"non-finite numeric value {raw!r} in column {self.name}")
        return (self.name, f"b{bisect_right(self.edges, v)}")


class TsvSchema:
    """Maps TSV column positions to roles.

    Built from a plain-text file of ``column_index=role`` lines where role is
    one of ``click_id``, ``click_ts``, ``delay``, ``value``, ``skip``,
    ``cat:<field name>`` or ``num:<field name>:<edge,edge,...>``. Lines
    starting with ``#`` are comments. Exactly one ``click_ts``, ``delay`` and
    ``value`` column each; ``click_id`` is optional (a line-number id is
    synthesized when absent).
    """

    def __init__(self, roles: dict[int, str]):
        self.n_columns = max(roles) + 1 if roles else 0
        self.click_id_col: Optional[int] = None
        self.click_ts_col: Optional[int] = None
        self.delay_col: Optional[int] = None
        self.value_col: Optional[int] = None
        self.feature_cols: list[tuple[int, object]] = []
        for col in sorted(roles):
            role = roles[col].strip()
            if role == "click_id":
                self._set_once("click_id_col", col)
            elif role == "click_ts":
                self._set_once("click_ts_col", col)
            elif role == "delay":
                self._set_once("delay_col", col)
            elif role == "value":
                self._set_once("value_col", col)
            elif role == "skip":
                continue
            elif role.startswith("cat:"):
                name = role[4:].strip()
                if not name:
                    raise FeatureError(f"column {col}: empty cat field name")
                self.feature_cols.append((col, name))
            elif role.startswith("num:"):
                parts = role.split(":", 2)
                if len(parts) != 3 or not parts[1].strip():
                    raise FeatureError(
                        f"column {col}: num role needs a name and bucket edges"
                    )
                edges = sorted(float(e) for e in parts[2].split(",") if e.strip())
                if not edges:
                    raise FeatureError(f"column {col}: num role has no bucket edges")
                self.feature_cols.append((col, _NumericColumn(parts[1].strip(), edges)))
            else:
                raise FeatureError(f"column {col}: unknown role {role!r}")
        if self.click_ts_col is None:
            raise FeatureError("schema must assign a click_ts column")
        if self.delay_col is None or self.value_col is None:
            raise FeatureError("schema must assign delay and value columns")
        if not self.feature_cols:
            raise FeatureError("schema must assign at least one feature column")

    def _set_once(self, attr: str, col: int) -> None:
        if getattr(self, attr) is not None:
            raise FeatureError(f"duplicate {attr[:-4]} column at {col}")
        setattr(self, attr, col)

    @classmethod
    def from_text(cls, text: str) -> "TsvSchema":
        roles: dict[int, str] = {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, role = line.partition("=")
            if not sep:
                raise FeatureError(f"schema line {line!r} is not index=role")
            col = int(key.strip())
            if col in roles:
                raise FeatureError(f"duplicate schema entry for column {col}")
            roles[col] = role
        return cls(roles)

    @classmethod
    def load(cls, path) -> "TsvSchema":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_text(fh.read())


def parse_tsv_record(line: str, schema: TsvSchema, line_no: int = 0,
                     full_window: Optional[float] = None) -> RawRecord:
    """Parse one TSV line into a RawRecord.

    Empty or negative delay column means no conversion; a delay of zero is
    clamped to one second (the quantizer owns delays strictly above zero);
    a delay beyond ``full_window`` means the conversion is outside the
    attribution window and the click is kept as non-converting. Negative
    conversion values are an unreported-value sentinel and map to 0.0.

    Raises RecordError (carrying ``line_no``) on malformed lines; the caller
    decides whether to skip or abort.
    """
    cols = line.rstrip("\n").split("\t")
    if len(cols) < schema.n_columns:
        raise RecordError(
            f"expected at least {schema.n_columns} columns, got {len(cols)}",
            line_no,
        )
    try:
        ts = float(cols[schema.click_ts_col])
        if not math.isfinite(ts):
            raise ValueError(f"non-finite click_ts {cols[schema.click_ts_col]!r}")

        delay: Optional[float] = None
        value: Optional[float] = None
        raw_delay = cols[schema.delay_col].strip()
        if raw_delay != "":
            d = float(raw_delay)
            if not math.isfinite(d):
                raise ValueError(f"non-finite delay {raw_delay!r}")
            if d >= 0 and (full_window is None or d <= full_window):
                delay = max(d, 1.0)
                raw_value = cols[schema.value_col].strip()
                if raw_value == "":
                    raise ValueError("conversion has a delay but no value")
                value = float(raw_value)
                if not math.isfinite(value):
                    raise ValueError(f"non-finite value {raw_value!r}")
                value = max(value, 0.0)

        fields = []
        for col, spec in schema.feature_cols:
            if isinstance(spec, _NumericColumn):
                fields.append(spec.bucketize(cols[col].strip()))
            else:
                fields.append((spec, cols[col].strip()))

        click_id = (
            cols[schema.click_id_col].strip()
            if schema.click_id_col is not None
            else f"line{line_no}"
        )
        if not click_id:
            raise ValueError("empty click_id")
        return RawRecord(click_id, ts, fields, delay, value)
    except RecordError:
        raise
    except (ValueError, IndexError) as exc:
        raise RecordError(str(exc), line_no) from exc


def read_tsv(path, schema: TsvSchema, full_window: Optional[float] = None,
             on_error: str = "raise",
             errors: Optional[list[RecordError]] = None) -> Iterator[RawRecord]:
    """Yield RawRecords from a TSV file.

    ``on_error`` is ``"raise"`` (abort on the first malformed line) or
    ``"skip"`` (collect the RecordError into ``errors`` and continue).
    """
    if on_error not in ("raise", "skip"):
        raise ValueError(f"on_error must be 'raise' or 'skip', got {on_error!r}")
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield parse_tsv_record(line, schema, line_no, full_window)
            except RecordError as exc:
                if on_error == "raise":
                    raise
                if errors is not None:
                    errors.append(exc)
