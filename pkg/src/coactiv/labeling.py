"""Labeled state datasets.

A dataset is a list of state vectors, each carrying one label from a label
alphabet declared up front.  Labels either tag a whole dataset with the
property it was extracted for, or classify states individually (critical
vs. non-critical, or any boolean predicate over the features).

On disk a dataset is a CSV file with header ``f1,...,fd,label`` plus a JSON
provenance sidecar next to it.
"""
from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DatasetError, DatasetFormatError, DimensionError, ModelSyntaxError
from .model_lang import compile_expr, parse_expr_text
from .policy import MlpPolicy, q_values

CRITICAL, NON_CRITICAL = "critical", "non-critical"


def deterministic_timestamp() -> str:
    """``SOURCE_DATE_EPOCH`` as an ISO timestamp, or the Unix epoch when unset.

    Wall-clock time is never used so that artifacts stay byte-reproducible.
    """
    epoch = int(os.environ.get("SOURCE_DATE_EPOCH", "0"))
    return datetime.fromtimestamp(epoch, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class Provenance:
    model_digest: str = ""
    policy_digest: str = ""
    property_text: str = ""
    selection: str = ""
    labeler: str = ""
    created: str = field(default_factory=deterministic_timestamp)


@dataclass(frozen=True)
class LabeledDataset:
    feature_names: tuple
    rows: tuple  # ((state tuple, label), ...)
    label_set: tuple
    provenance: Provenance = field(default_factory=Provenance)

    def __post_init__(self):
        if not self.rows:
            raise DatasetError("a dataset needs at least one state")
        d = len(self.feature_names)
        for k, (state, label) in enumerate(self.rows):
            if len(state) != d:
                raise DimensionError(f"row {k} has {len(state)} features, expected {d}")
            if label not in self.label_set:
                raise DatasetError(f"row {k} has label {label!r} outside the alphabet {list(self.label_set)}")

    def __len__(self):
        return len(self.rows)

    @property
    def states(self) -> list:
        return [s for s, _ in self.rows]

    @property
    def labels(self) -> list:
        return [label for _, label in self.rows]

    def counts(self) -> dict:
        out = {label: 0 for label in self.label_set}
        for _, label in self.rows:
            out[label] += 1
        return out

    def groups(self) -> dict:
        """States per label, in row order; labels without rows are omitted."""
        out = {}
        for state, label in self.rows:
            out.setdefault(label, []).append(state)
        return out


def _names(states, feature_names):
    if feature_names is not None:
        return tuple(feature_names)
    if not states:
        raise DatasetError("a dataset needs at least one state")
    return tuple(f"f{i}" for i in range(len(states[0])))


def make_property_dataset(states: Sequence, property_label: str, provenance: Provenance | None = None,
                          feature_names: Sequence[str] | None = None) -> LabeledDataset:
    """Tag every state with the label of the property it was extracted for."""
    states = [tuple(s) for s in states]
    if not states:
        raise DatasetError(f"no states to label with {property_label!r}")
    prov = provenance or Provenance()
    if not prov.labeler:
        prov = replace(prov, labeler=f"property:{property_label}")
    return LabeledDataset(_names(states, feature_names), tuple((s, property_label) for s in states),
                          (property_label,), prov)


def q_gaps(p: MlpPolicy, states) -> np.ndarray:
    """Spread between the highest and lowest raw Q-value of each state."""
    q = q_values(p, np.asarray(states, dtype=np.float64))
    return q.max(axis=1) - q.min(axis=1)


def label_critical(p: MlpPolicy, states: Sequence, tau: float, provenance: Provenance | None = None,
                   feature_names: Sequence[str] | None = None) -> LabeledDataset:
    """Label a state critical when its raw Q-value spread is at least ``tau``."""
    if not tau >= 0:
        raise ValueError(f"threshold must be non-negative, got {tau}")
    states = [tuple(s) for s in states]
    if not states:
        raise DatasetError("no states to label")
    gaps = q_gaps(p, states)
    rows = tuple((s, CRITICAL if g >= tau else NON_CRITICAL) for s, g in zip(states, gaps))
    prov = provenance or Provenance()
    if not prov.labeler:
        prov = replace(prov, labeler=f"critical:q_gap>={tau!r}")
    return LabeledDataset(_names(states, feature_names), rows, (CRITICAL, NON_CRITICAL), prov)


def label_by_predicate(states: Sequence, predicate: str, labels: tuple = ("true", "false"),
                       feature_names: Sequence[str] | None = None,
                       provenance: Provenance | None = None) -> LabeledDataset:
    """Two-way labeling by a boolean expression over the feature names."""
    states = [tuple(s) for s in states]
    names = _names(states, feature_names)
    try:
        fn = compile_expr(parse_expr_text(predicate), names)
    except ModelSyntaxError as exc:
        raise DatasetError(f"predicate {predicate!r}: {exc}") from None
    if not states:
        raise DatasetError("no states to label")
    true_label, false_label = labels
    rows = tuple((s, true_label if fn(s) else false_label) for s in states)
    prov = provenance or Provenance()
    if not prov.labeler:
        prov = replace(prov, labeler=f"predicate:{predicate}")
    return LabeledDataset(names, rows, (true_label, false_label), prov)


# --------------------------------------------------------------------------- io

def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".provenance.json")


def dataset_to_csv(ds: LabeledDataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([*ds.feature_names, "label"])
    for state, label in ds.rows:
        writer.writerow([*state, label])
    return buf.getvalue()


def provenance_record(ds: LabeledDataset) -> dict:
    return {
        "feature_names": list(ds.feature_names),
        "label_set": list(ds.label_set),
        "counts": ds.counts(),
        "provenance": asdict(ds.provenance),
    }


def write_dataset(ds: LabeledDataset, path) -> Path:
    path = Path(path)
    path.write_text(dataset_to_csv(ds), encoding="utf-8")
    sidecar_path(path).write_text(json.dumps(provenance_record(ds), sort_keys=True, indent=2) + "\n",
                                  encoding="utf-8")
    return path


def dataset_from_csv(text: str, meta: dict | None = None) -> LabeledDataset:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DatasetFormatError("empty dataset file", 1) from None
    if not header or header[-1] != "label":
        raise DatasetFormatError("header must end with a 'label' column", 1)
    names = tuple(header[:-1])
    if meta is not None and tuple(meta.get("feature_names", names)) != names:
        raise DatasetFormatError(
            f"header features {list(names)} do not match provenance features {meta['feature_names']}", 1
        )
    rows = []
    for line_no, record in enumerate(reader, start=2):
        if not record:
            continue
        if len(record) != len(header):
            raise DatasetFormatError(f"expected {len(header)} fields, found {len(record)}", line_no)
        try:
            state = tuple(int(v) for v in record[:-1])
        except ValueError:
            raise DatasetFormatError(f"non-integer feature value in {record[:-1]}", line_no) from None
        rows.append((state, record[-1]))
    if not rows:
        raise DatasetFormatError("dataset has no rows", 2)
    seen = list(dict.fromkeys(label for _, label in rows))
    label_set = tuple(meta["label_set"]) if meta and "label_set" in meta else tuple(seen)
    for line_no, (_, label) in enumerate(rows, start=2):
        if label not in label_set:
            raise DatasetFormatError(f"label {label!r} not in declared alphabet {list(label_set)}", line_no)
    prov = Provenance(**meta["provenance"]) if meta and "provenance" in meta else Provenance()
    return LabeledDataset(names, tuple(rows), label_set, prov)


def read_dataset(path) -> LabeledDataset:
    """Read a dataset CSV and, when present, its provenance sidecar."""
    path = Path(path)
    meta = None
    side = sidecar_path(path)
    if side.exists():
        try:
            meta = json.loads(side.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"provenance sidecar {side.name} is not valid JSON: {exc}") from None
    return dataset_from_csv(path.read_text(encoding="utf-8"), meta)
