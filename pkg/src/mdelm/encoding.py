"""Tabular record encoding.

Raw records (publication-channel rows or any other tabular data) are turned
into a dense numeric matrix. Each variable has one of a handful of encoding
kinds; categorical vocabularies are learned from data by :func:`fit_schema`
and stored in an :class:`EncodingSchema` that serializes to JSON.

Missing values are ``None``, absent keys, empty strings and float NaN.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import ValidationError

KINDS = (
    "onehot",
    "presence",
    "bow_projected",
    "log_age",
    "real_with_indicator",
    "count",
    "multihot",
)
OTHER = "<other>"
MISSING = "<missing>"
SCHEMA_FORMAT = "mdelm-schema/1"

_TOKEN_RE = re.compile(r"[^\W_]+")


@dataclass(frozen=True)
class RawRecord:
    id: str
    values: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise ValidationError("record id must be a non-empty string")


def is_missing(value) -> bool:
    if value is None:
        return True
    if isinstance(value, str):
        return value.strip() == ""
    if isinstance(value, float):
        return math.isnan(value)
    return False


# ---------------------------------------------------------------------------
# Sparse random projection


@dataclass(frozen=True)
class ProjectionSpec:
    """Seeded sparse random projection from ``in_dim`` to ``out_dim``.

    Entries are ``-s``, ``0`` or ``+s`` with ``P(nonzero) = density`` and
    ``s = 1 / sqrt(density * out_dim)``, so squared norms are preserved in
    expectation. ``density`` defaults to ``1 / sqrt(in_dim)``.
    """

    in_dim: int
    out_dim: int
    density: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValidationError("projection dimensions must be positive")
        if self.out_dim > self.in_dim:
            raise ValidationError(
                f"projection out_dim={self.out_dim} exceeds in_dim={self.in_dim}"
            )
        if self.density is None:
            object.__setattr__(self, "density", 1.0 / math.sqrt(self.in_dim))
        if not 0.0 < self.density <= 1.0:
            raise ValidationError(f"projection density {self.density} not in (0, 1]")

    @cached_property
    def matrix(self) -> np.ndarray:
        return make_projection(self)


def make_projection(spec: ProjectionSpec) -> np.ndarray:
    rng = np.random.default_rng(spec.seed)
    shape = (spec.out_dim, spec.in_dim)
    nonzero = rng.random(shape) < spec.density
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    scale = 1.0 / math.sqrt(spec.density * spec.out_dim)
    P = np.where(nonzero, sign * scale, 0.0)
    P.setflags(write=False)
    return P


def project(v, P: np.ndarray) -> np.ndarray:
    """Apply projection ``P`` to a vector, or to each row of a matrix."""
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != P.shape[1]:
        raise ValidationError(
            f"vector dimension {v.shape[-1]} does not match projection input {P.shape[1]}"
        )
    return v @ P.T


# ---------------------------------------------------------------------------
# Per-kind encoders


def encode_onehot(value, vocab: Sequence[str], include_missing: bool = False) -> np.ndarray:
    """One-hot encode ``value`` over ``vocab``.

    Unknown values go to the ``<other>`` slot if the vocabulary has one,
    otherwise to the missing slot. ``include_missing`` appends a missing slot
    when the vocabulary does not already end with one.
    """
    if len(vocab) == 0:
        raise ValidationError("one-hot vocabulary is empty")
    slots = list(vocab)
    if include_missing and MISSING not in slots:
        slots.append(MISSING)
    out = np.zeros(len(slots))
    if is_missing(value):
        target = MISSING
    else:
        target = str(value).strip()
        if target not in slots:
            target = OTHER if OTHER in slots else MISSING
    if target in slots:
        out[slots.index(target)] = 1.0
    return out


def encode_presence(value) -> float:
    return 0.0 if is_missing(value) else 1.0


def encode_log_age(start_year, reference_year: int) -> tuple[float, float]:
    if is_missing(start_year):
        return 0.0, 1.0
    year = _as_int(start_year, "start year")
    if year > reference_year:
        raise ValidationError(
            f"start year {year} is after reference year {reference_year}"
        )
    return math.log(reference_year - year + 1), 0.0


def tokenize(text: str) -> list[str]:
    return [t for t in _TOKEN_RE.findall(text.lower()) if len(t) > 1]


def encode_bow(text, vocabulary: Sequence[str]) -> np.ndarray:
    out = np.zeros(len(vocabulary))
    if is_missing(text):
        return out
    index = {tok: k for k, tok in enumerate(vocabulary)}
    for tok in tokenize(str(text)):
        k = index.get(tok)
        if k is not None:
            out[k] += 1.0
    return out


def _as_float(value, what):
    if isinstance(value, bool):
        raise ValidationError(f"{what}: boolean {value!r} is not a number")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            pass
    raise ValidationError(f"{what}: {value!r} is not a number")


def _as_int(value, what):
    x = _as_float(value, what)
    if not x.is_integer():
        raise ValidationError(f"{what}: {value!r} is not an integer")
    return int(x)


def _split_items(value, separator):
    if isinstance(value, (list, tuple)):
        items = [str(v).strip() for v in value]
    elif isinstance(value, str):
        items = [v.strip() for v in value.split(separator)]
    else:
        raise ValidationError(f"expected a list or delimited string, got {value!r}")
    return [v for v in items if v]


# ---------------------------------------------------------------------------
# Schema


@dataclass
class VariableSpec:
    """How one variable becomes feature columns.

    ``sources`` lists the record keys read by this variable; it defaults to
    ``[name]``. Bag-of-words variables concatenate all their sources.
    """

    name: str
    kind: str
    sources: list[str] = field(default_factory=list)
    vocabulary: list[str] = field(default_factory=list)
    include_missing_slot: bool = False
    other_slot: bool = False
    max_categories: int | None = None
    reference_year: int | None = None
    separator: str = ";"
    out_dim: int | None = None
    density: float | None = None
    seed: int = 0
    projection: ProjectionSpec | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"variable {self.name!r}: unknown kind {self.kind!r}")
        if not self.sources:
            self.sources = [self.name]
        if self.max_categories is not None and self.max_categories < 1:
            raise ValidationError(
                f"variable {self.name!r}: max_categories must be >= 1"
            )
        if len(set(self.vocabulary)) != len(self.vocabulary):
            raise ValidationError(f"variable {self.name!r}: duplicate vocabulary entries")
        if self.kind == "log_age" and self.reference_year is None:
            raise ValidationError(f"variable {self.name!r}: log_age needs reference_year")
        if self.kind == "bow_projected" and self.out_dim is None and self.projection is None:
            raise ValidationError(f"variable {self.name!r}: bow_projected needs out_dim")

    def feature_names(self) -> list[str]:
        n = self.name
        if self.kind in ("onehot", "multihot"):
            return [f"{n}={v}" for v in self.vocabulary]
        if self.kind == "bow_projected":
            dim = self.projection.out_dim if self.projection else self.out_dim
            return [f"{n}:rp{k}" for k in range(dim)]
        if self.kind == "log_age":
            return [f"{n}:log_age", f"{n}:missing"]
        if self.kind == "real_with_indicator":
            return [n, f"{n}:missing"]
        return [n]

    def raw_value(self, record: Mapping[str, Any]):
        if self.kind == "bow_projected":
            parts = [record.get(s) for s in self.sources]
            parts = [str(p) for p in parts if not is_missing(p)]
            return " ".join(parts) if parts else None
        return record.get(self.sources[0])

    def encode(self, record: Mapping[str, Any]) -> np.ndarray:
        value = self.raw_value(record)
        where = f"variable {self.name!r}"
        kind = self.kind
        if kind == "onehot":
            if isinstance(value, (list, tuple, dict)):
                raise ValidationError(f"{where}: expected a scalar, got {value!r}")
            return encode_onehot(value, self.vocabulary)
        if kind == "presence":
            return np.array([encode_presence(value)])
        if kind == "log_age":
            return np.array(encode_log_age(value, self.reference_year))
        if kind == "real_with_indicator":
            if is_missing(value):
                return np.array([0.0, 1.0])
            x = _as_float(value, where)
            if not math.isfinite(x):
                raise ValidationError(f"{where}: non-finite value {value!r}")
            return np.array([x, 0.0])
        if kind == "count":
            if is_missing(value):
                return np.array([0.0])
            if isinstance(value, (int, float)) and not isinstance(value, bool):
                if value < 0 or not float(value).is_integer():
                    raise ValidationError(f"{where}: bad count {value!r}")
                return np.array([float(value)])
            return np.array([float(len(set(_split_items(value, self.separator))))])
        if kind == "multihot":
            out = np.zeros(len(self.vocabulary))
            if is_missing(value):
                if MISSING in self.vocabulary:
                    out[self.vocabulary.index(MISSING)] = 1.0
                return out
            for item in set(_split_items(value, self.separator)):
                if item in self.vocabulary:
                    out[self.vocabulary.index(item)] = 1.0
                elif OTHER in self.vocabulary:
                    out[self.vocabulary.index(OTHER)] = 1.0
            return out
        # bow_projected
        if value is not None and not isinstance(value, str):
            raise ValidationError(f"{where}: expected text, got {value!r}")
        counts = encode_bow(value, self.vocabulary)
        return project(counts, self.projection.matrix)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["projection"] = dataclasses.asdict(self.projection) if self.projection else None
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "VariableSpec":
        d = dict(d)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValidationError(f"unknown variable keys: {sorted(unknown)}")
        proj = d.pop("projection", None)
        spec = cls(**d)
        if proj is not None:
            spec.projection = ProjectionSpec(**proj)
        return spec


@dataclass
class EncodingSchema:
    variables: list[VariableSpec]
    label: str | None = None

    def __post_init__(self):
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise ValidationError("duplicate variable names in schema")
        feats = self.feature_names
        if len(set(feats)) != len(feats):
            dup = sorted(k for k, c in Counter(feats).items() if c > 1)
            raise ValidationError(f"duplicate feature names: {dup}")

    @property
    def feature_names(self) -> list[str]:
        return [f for v in self.variables for f in v.feature_names()]

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def to_dict(self) -> dict:
        return {
            "format": SCHEMA_FORMAT,
            "label": self.label,
            "variables": [v.to_dict() for v in self.variables],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EncodingSchema":
        if d.get("format") != SCHEMA_FORMAT:
            raise ValidationError(f"not an encoding schema (format={d.get('format')!r})")
        return cls([VariableSpec.from_dict(v) for v in d["variables"]], d.get("label"))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps() + "\n")

    @classmethod
    def load(cls, path) -> "EncodingSchema":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _ranked(counter: Counter) -> list[str]:
    # frequency descending, ties lexicographic
    return [k for k, _ in sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))]


def fit_schema(
    records: Sequence[RawRecord],
    spec: Sequence[VariableSpec | Mapping[str, Any]],
    label: str | None = None,
) -> EncodingSchema:
    """Learn vocabularies and projections for ``spec`` from ``records``."""
    if not records:
        raise ValidationError("cannot fit a schema on zero records")
    specs = [s if isinstance(s, VariableSpec) else VariableSpec.from_dict(s) for s in spec]
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ValidationError("duplicate variable names in spec")

    fitted = []
    for s in specs:
        s = dataclasses.replace(s, sources=list(s.sources), vocabulary=[])
        values = [s.raw_value(r.values) for r in records]
        if s.kind == "onehot":
            counts = Counter(str(v).strip() for v in values if not is_missing(v))
            s.vocabulary = _learn_vocab(s, counts)
        elif s.kind == "multihot":
            counts = Counter()
            for v in values:
                if not is_missing(v):
                    counts.update(set(_split_items(v, s.separator)))
            s.vocabulary = _learn_vocab(s, counts)
        elif s.kind == "bow_projected":
            counts = Counter()
            for v in values:
                if not is_missing(v):
                    counts.update(tokenize(str(v)))
            vocab = _ranked(counts)
            if s.max_categories is not None:
                vocab = vocab[: s.max_categories]
            s.vocabulary = vocab
            out_dim = s.out_dim if s.out_dim is not None else s.projection.out_dim
            s.projection = ProjectionSpec(
                in_dim=len(vocab), out_dim=out_dim, density=s.density, seed=s.seed
            )
        fitted.append(s)
    return EncodingSchema(fitted, label=label)


def _learn_vocab(s: VariableSpec, counts: Counter) -> list[str]:
    if not counts:
        return [MISSING]
    ranked = _ranked(counts)
    vocab = ranked if s.max_categories is None else ranked[: s.max_categories]
    if s.other_slot or len(vocab) < len(ranked):
        vocab.append(OTHER)
    if s.include_missing_slot:
        vocab.append(MISSING)
    return vocab


# ---------------------------------------------------------------------------
# Dataset-level encoding


@dataclass
class FeatureMatrix:
    values: np.ndarray
    feature_names: list[str]
    sample_ids: list[str]
    labels: np.ndarray | None = None

    def __post_init__(self):
        if self.values.shape != (len(self.sample_ids), len(self.feature_names)):
            raise ValidationError("feature matrix shape does not match names/ids")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("feature matrix contains NaN or Inf")


def encode_dataset(records: Sequence[RawRecord], schema: EncodingSchema) -> FeatureMatrix:
    D = schema.n_features
    X = np.zeros((len(records), D))
    for row, rec in enumerate(records):
        parts = []
        for v in schema.variables:
            try:
                parts.append(v.encode(rec.values))
            except ValidationError as exc:
                raise ValidationError(f"record {rec.id!r}: {exc}") from None
        if parts:
            X[row] = np.concatenate(parts)
    labels = None
    if schema.label is not None:
        labels = np.array(
            [_as_int(r.values.get(schema.label), f"record {r.id!r} label") for r in records],
            dtype=np.int64,
        )
    return FeatureMatrix(X, schema.feature_names, [r.id for r in records], labels)


# ---------------------------------------------------------------------------
# File IO


def read_records(path, id_column: str = "id") -> list[RawRecord]:
    """Read raw records from CSV (header row) or JSON lines (``.jsonl``)."""
    path = Path(path)
    rows: Iterable[Mapping[str, Any]]
    if path.suffix in (".jsonl", ".ndjson"):
        with path.open() as fh:
            rows = [json.loads(line) for line in fh if line.strip()]
    else:
        with path.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
    records = []
    seen = set()
    for lineno, row in enumerate(rows, start=1):
        rid = row.get(id_column)
        if is_missing(rid):
            raise ValidationError(f"{path}: row {lineno} has no {id_column!r}")
        rid = str(rid)
        if rid in seen:
            raise ValidationError(f"{path}: duplicate id {rid!r}")
        seen.add(rid)
        values = {k: v for k, v in row.items() if k != id_column}
        records.append(RawRecord(rid, values))
    return records


def write_feature_csv(fm: FeatureMatrix, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ["id"] + (["label"] if fm.labels is not None else []) + fm.feature_names
        w.writerow(head)
        for i, sid in enumerate(fm.sample_ids):
            lab = [int(fm.labels[i])] if fm.labels is not None else []
            w.writerow([sid] + lab + [repr(float(x)) for x in fm.values[i]])


def read_feature_csv(path) -> FeatureMatrix:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        head = next(reader)
        rows = list(reader)
    if not head or head[0] != "id":
        raise ValidationError(f"{path}: first column must be 'id'")
    has_label = len(head) > 1 and head[1] == "label"
    start = 2 if has_label else 1
    names = head[start:]
    X = np.zeros((len(rows), len(names)))
    labels = np.zeros(len(rows), dtype=np.int64) if has_label else None
    ids = []
    for r, row in enumerate(rows):
        if len(row) != len(head):
            raise ValidationError(f"{path}: row {r + 1} has {len(row)} cells, expected {len(head)}")
        ids.append(row[0])
        if has_label:
            labels[r] = _as_int(row[1], f"{path}: row {r + 1} column 'label'")
        for c, cell in enumerate(row[start:]):
            X[r, c] = _as_float(cell, f"{path}: row {r + 1} column {names[c]!r}")
    return FeatureMatrix(X, names, ids, labels)
