"""Typed trial datasets: schema, validation, CSV + JSON-manifest I/O."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

REAL = "real"
POSITIVE = "positive"
COUNT = "count"
CATEGORICAL = "categorical"
KINDS = (REAL, POSITIVE, COUNT, CATEGORICAL)

ROLES = ("covariate", "treatment", "time", "event")


class DatasetError(ValueError):
    """Invalid data or manifest; carries the offending row/column when known."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


@dataclass(frozen=True)
class FeatureKind:
    kind: str
    levels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DatasetError(f"unknown feature kind {self.kind!r}")
        if self.kind == CATEGORICAL:
            if len(self.levels) < 2:
                raise DatasetError("categorical kind needs at least 2 levels")
            if len(set(self.levels)) != len(self.levels):
                raise DatasetError(f"duplicate categorical levels {self.levels}")
        elif self.levels:
            raise DatasetError(f"levels given for non-categorical kind {self.kind!r}")

    @classmethod
    def real(cls) -> "FeatureKind":
        return cls(REAL)

    @classmethod
    def positive(cls) -> "FeatureKind":
        return cls(POSITIVE)

    @classmethod
    def count(cls) -> "FeatureKind":
        return cls(COUNT)

    @classmethod
    def categorical(cls, levels: Iterable[str]) -> "FeatureKind":
        return cls(CATEGORICAL, tuple(str(v) for v in levels))

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL

    @property
    def is_continuous(self) -> bool:
        return self.kind != CATEGORICAL

    def to_json(self) -> dict:
        out = {"kind": self.kind}
        if self.levels:
            out["levels"] = list(self.levels)
        return out


BINARY = FeatureKind.categorical(("0", "1"))


@dataclass(frozen=True)
class Column:
    name: str
    kind: FeatureKind


@dataclass(frozen=True)
class Schema:
    """Covariate columns plus the three outcome/design columns."""

    columns: tuple[Column, ...]
    treatment_column: str = "treatment"
    time_column: str = "time"
    event_column: str = "event"

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise DatasetError(f"duplicate column names in schema: {names}")
        roles = (self.treatment_column, self.time_column, self.event_column)
        if len(set(roles)) != 3:
            raise DatasetError("treatment, time and event columns must be distinct")
        clash = set(names) & set(roles)
        if clash:
            raise DatasetError(f"covariates overlap role columns: {sorted(clash)}")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def kind_of(self, name: str) -> FeatureKind:
        for c in self.columns:
            if c.name == name:
                return c.kind
        if name in (self.treatment_column, self.event_column):
            return BINARY
        if name == self.time_column:
            return FeatureKind.positive()
        raise KeyError(name)

    def kind_counts(self) -> dict[str, int]:
        """Covariate counts by kind, in the (categorical, positive, real, count) convention."""
        counts = {CATEGORICAL: 0, POSITIVE: 0, REAL: 0, COUNT: 0}
        for c in self.columns:
            counts[c.kind.kind] += 1
        return counts

    def to_manifest(self) -> dict:
        cols = [{"name": c.name, "role": "covariate", **c.kind.to_json()} for c in self.columns]
        cols.append({"name": self.treatment_column, "role": "treatment"})
        cols.append({"name": self.time_column, "role": "time"})
        cols.append({"name": self.event_column, "role": "event"})
        return {"version": 1, "columns": cols}

    @classmethod
    def from_manifest(cls, manifest: Mapping) -> "Schema":
        if "columns" not in manifest:
            raise DatasetError("manifest has no 'columns' list")
        covs: list[Column] = []
        roles: dict[str, str] = {}
        for entry in manifest["columns"]:
            name = entry.get("name")
            if not name:
                raise DatasetError(f"manifest column without a name: {entry}")
            role = entry.get("role", "covariate")
            if role not in ROLES:
                raise DatasetError(f"unknown role {role!r} for column {name!r}", column=name)
            if role == "covariate":
                kind = entry.get("kind")
                if kind is None:
                    raise DatasetError(f"covariate {name!r} has no kind", column=name)
                covs.append(Column(name, FeatureKind(kind, tuple(str(v) for v in entry.get("levels", ())))))
            else:
                if role in roles:
                    raise DatasetError(f"more than one {role} column")
                roles[role] = name
        for role in ("treatment", "time", "event"):
            if role not in roles:
                raise DatasetError(f"manifest declares no {role} column")
        return cls(tuple(covs), roles["treatment"], roles["time"], roles["event"])

    def digest(self) -> str:
        blob = json.dumps(self.to_manifest(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True, eq=False)
class TrialDataset:
    """Immutable column store. Categorical covariates are stored as integer level codes."""

    schema: Schema
    covariates: Mapping[str, np.ndarray]
    treatment: np.ndarray
    time: np.ndarray
    event: np.ndarray

    def __post_init__(self):
        n = len(self.time)
        cov = {}
        for col in self.schema.columns:
            if col.name not in self.covariates:
                raise DatasetError(f"missing column {col.name!r}", column=col.name)
            dtype = np.int64 if col.kind.is_categorical else np.float64
            arr = np.array(self.covariates[col.name], dtype=dtype)
            if arr.shape != (n,):
                raise DatasetError(f"column {col.name!r} has length {arr.shape} != {n}", column=col.name)
            arr.setflags(write=False)
            cov[col.name] = arr
        object.__setattr__(self, "covariates", cov)
        for attr, dtype in (("treatment", np.int64), ("time", np.float64), ("event", np.int64)):
            arr = np.array(getattr(self, attr), dtype=dtype)
            if arr.shape != (n,):
                raise DatasetError(f"{attr} has length {arr.shape} != {n}")
            arr.setflags(write=False)
            object.__setattr__(self, attr, arr)
        self._validate()

    def _validate(self):
        s = self.schema
        bad = np.flatnonzero(~np.isfinite(self.time) | (self.time <= 0))
        if bad.size:
            raise DatasetError(f"nonpositive time at row {bad[0] + 1}", row=int(bad[0]) + 1, column=s.time_column)
        for arr, name in ((self.event, s.event_column), (self.treatment, s.treatment_column)):
            bad = np.flatnonzero((arr != 0) & (arr != 1))
            if bad.size:
                raise DatasetError(f"{name} not in {{0,1}} at row {bad[0] + 1}", row=int(bad[0]) + 1, column=name)
        for col in s.columns:
            x = self.covariates[col.name]
            k = col.kind
            if k.is_categorical:
                bad = np.flatnonzero((x < 0) | (x >= len(k.levels)))
                msg = "unknown categorical level"
            elif k.kind == POSITIVE:
                bad = np.flatnonzero(~np.isfinite(x) | (x <= 0))
                msg = "nonpositive value"
            elif k.kind == COUNT:
                bad = np.flatnonzero(~np.isfinite(x) | (x < 0) | (x != np.round(x)))
                msg = "non-count value"
            else:
                bad = np.flatnonzero(~np.isfinite(x))
                msg = "non-finite value"
            if bad.size:
                r = int(bad[0]) + 1
                raise DatasetError(f"{msg} in column {col.name!r} at row {r}", row=r, column=col.name)

    @property
    def n(self) -> int:
        return int(self.time.shape[0])

    def __len__(self) -> int:
        return self.n

    def take(self, index: Sequence[int] | np.ndarray) -> "TrialDataset":
        idx = np.asarray(index, dtype=np.int64)
        return TrialDataset(
            self.schema,
            {k: v[idx] for k, v in self.covariates.items()},
            self.treatment[idx],
            self.time[idx],
            self.event[idx],
        )

    def with_treatment(self, value: int) -> "TrialDataset":
        return TrialDataset(self.schema, self.covariates, np.full(self.n, value), self.time, self.event)

    def column(self, name: str) -> np.ndarray:
        s = self.schema
        if name == s.treatment_column:
            return self.treatment
        if name == s.time_column:
            return self.time
        if name == s.event_column:
            return self.event
        return self.covariates[name]

    def levels(self, name: str) -> tuple[str, ...]:
        return self.schema.kind_of(name).levels

    def censoring_fraction(self) -> float:
        return float(1.0 - self.event.mean()) if self.n else float("nan")

    def equals(self, other: "TrialDataset") -> bool:
        if self.schema != other.schema or self.n != other.n:
            return False
        arrays = [(self.treatment, other.treatment), (self.time, other.time), (self.event, other.event)]
        arrays += [(self.covariates[k], other.covariates[k]) for k in self.covariates]
        return all(np.array_equal(a, b) for a, b in arrays)


def concat(datasets: Sequence[TrialDataset]) -> TrialDataset:
    first = datasets[0]
    for d in datasets[1:]:
        if d.schema != first.schema:
            raise DatasetError("cannot concatenate datasets with different schemas")
    return TrialDataset(
        first.schema,
        {k: np.concatenate([d.covariates[k] for d in datasets]) for k in first.covariates},
        np.concatenate([d.treatment for d in datasets]),
        np.concatenate([d.time for d in datasets]),
        np.concatenate([d.event for d in datasets]),
    )


# -- I/O ---------------------------------------------------------------------


def read_manifest(path: str | Path) -> Schema:
    try:
        with open(path) as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"manifest {path} is not valid JSON: {exc}") from exc
    return Schema.from_manifest(manifest)


def write_manifest(schema: Schema, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(schema.to_manifest(), fh, indent=2)
        fh.write("\n")


def _parse_float(text: str, what: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DatasetError(f"non-numeric {what} at row {row}", row=row, column=column) from None
    if not math.isfinite(value):
        raise DatasetError(f"non-finite {what} at row {row}", row=row, column=column)
    return value


def _parse_binary(text: str, name: str, row: int) -> int:
    try:
        value = float(text)
    except ValueError:
        value = float("nan")
    if value not in (0.0, 1.0):
        raise DatasetError(f"{name} not in {{0,1}} at row {row}", row=row, column=name)
    return int(value)


def load_csv(path: str | Path, manifest: str | Path | Schema) -> TrialDataset:
    """Read a header-first CSV and validate it against a JSON manifest.

    Columns not mentioned in the manifest are ignored. Missing values are
    rejected; rows are numbered from 1, excluding the header.
    """
    schema = manifest if isinstance(manifest, Schema) else read_manifest(manifest)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path} is empty") from None
        header = [h.strip() for h in header]
        index = {h: i for i, h in enumerate(header)}
        needed = schema.names + [schema.treatment_column, schema.time_column, schema.event_column]
        for name in needed:
            if name not in index:
                raise DatasetError(f"missing column {name!r}", column=name)
        cov: dict[str, list] = {c.name: [] for c in schema.columns}
        lookup = {c.name: {lv: i for i, lv in enumerate(c.kind.levels)} for c in schema.columns if c.kind.is_categorical}
        treat, times, events = [], [], []
        for r, raw in enumerate(reader, start=1):
            if not raw or all(not f.strip() for f in raw):
                continue
            if len(raw) < len(header):
                raise DatasetError(f"row {r} has {len(raw)} fields, expected {len(header)}", row=r)
            for name in needed:
                if raw[index[name]].strip() == "":
                    raise DatasetError(f"missing value in column {name!r} at row {r}", row=r, column=name)
            t = _parse_float(raw[index[schema.time_column]], "time", r, schema.time_column)
            if t <= 0:
                raise DatasetError(f"nonpositive time at row {r}", row=r, column=schema.time_column)
            times.append(t)
            events.append(_parse_binary(raw[index[schema.event_column]], schema.event_column, r))
            treat.append(_parse_binary(raw[index[schema.treatment_column]], schema.treatment_column, r))
            for col in schema.columns:
                text = raw[index[col.name]].strip()
                if col.kind.is_categorical:
                    code = lookup[col.name].get(text)
                    if code is None:
                        raise DatasetError(
                            f"unknown categorical level {text!r} in column {col.name!r} at row {r}", row=r, column=col.name
                        )
                    cov[col.name].append(code)
                else:
                    cov[col.name].append(_parse_float(text, f"value in column {col.name!r}", r, col.name))
    return TrialDataset(schema, cov, treat, times, events)


def _fmt(x: float) -> str:
    return repr(float(x))


def save_csv(data: TrialDataset, path: str | Path, manifest: str | Path | None = None) -> None:
    s = data.schema
    header = s.names + [s.treatment_column, s.time_column, s.event_column]
    cols = []
    for c in s.columns:
        x = data.covariates[c.name]
        if c.kind.is_categorical:
            cols.append([c.kind.levels[v] for v in x])
        elif c.kind.kind == COUNT:
            cols.append([str(int(v)) for v in x])
        else:
            cols.append([_fmt(v) for v in x])
    cols.append([str(int(v)) for v in data.treatment])
    cols.append([_fmt(v) for v in data.time])
    cols.append([str(int(v)) for v in data.event])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(zip(*cols))
    if manifest is not None:
        write_manifest(s, manifest)


# -- arm handling --------------------------------------------------------------


def split_arms(data: TrialDataset) -> tuple[TrialDataset, TrialDataset]:
    """(control, treated) by the treatment flag; row order is preserved."""
    return data.take(np.flatnonzero(data.treatment == 0)), data.take(np.flatnonzero(data.treatment == 1))


def subsample_size(n: int, fraction: float) -> int:
    return int(math.floor(fraction * n + 0.5))


def subsample(data: TrialDataset, fraction: float, seed) -> TrialDataset:
    """Uniform subset without replacement of size round(fraction * n).

    Selected rows keep their original relative order; ``fraction == 1``
    returns the rows unchanged.
    """
    if not 0.0 < fraction <= 1.0:
        raise DatasetError(f"fraction must lie in (0, 1], got {fraction}")
    size = subsample_size(data.n, fraction)
    if size < 1:
        raise DatasetError(f"subsample of {data.n} rows at fraction {fraction} is empty")
    if size >= data.n:
        return data.take(np.arange(data.n))
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(data.n, size=size, replace=False))
    return data.take(idx)
