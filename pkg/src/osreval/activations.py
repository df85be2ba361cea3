"""Activation datasets: loading, validation, stratified splits and open-set views.

An :class:`ActivationDataset` is the interchange object of the package. Every
row carries a sample id, a 0-based class label, a split tag and a vector of
``dim`` finite activations (usually classifier logits).

On disk a dataset is a comma-delimited file with header
``sample_id,label,split,a_0,...,a_{D-1}`` plus a JSON manifest holding the
class names (``{"class_names": [...], "dim": D, "known_classes": [...]}``).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._io import atomic_write_text

SPLITS = ("train", "val", "test", "unassigned")
UNKNOWN_LABEL = 0
UNKNOWN_NAME = "unknown"


class DatasetError(ValueError):
    """Raised for malformed activation files or invalid dataset contents."""

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


@dataclass(frozen=True, eq=False)
class ActivationDataset:
    sample_ids: tuple[str, ...]
    labels: np.ndarray
    activations: np.ndarray
    splits: tuple[str, ...]
    class_names: tuple[str, ...]

    def __post_init__(self):
        ids = tuple(str(s) for s in self.sample_ids)
        splits = tuple(self.splits)
        names = tuple(str(c) for c in self.class_names)
        labels = np.asarray(self.labels)
        acts = np.asarray(self.activations, dtype=np.float64)
        if acts.ndim == 1 and len(ids) == 0:
            acts = acts.reshape(0, 0)
        if acts.ndim != 2:
            raise DatasetError("activations must be a 2-D array")
        n = len(ids)
        if acts.shape[0] != n or labels.shape != (n,) or len(splits) != n:
            raise DatasetError("sample_ids, labels, activations and splits disagree in length")
        if not names or any(not c for c in names):
            raise DatasetError("class_names must be non-empty strings")
        if len(set(names)) != len(names):
            raise DatasetError("class_names must be unique")
        if n and not np.issubdtype(labels.dtype, np.integer):
            if not np.all(np.equal(np.mod(labels, 1), 0)):
                raise DatasetError("labels must be integers")
        labels = labels.astype(np.int64)
        bad = np.flatnonzero((labels < 0) | (labels >= len(names)))
        if bad.size:
            raise DatasetError(f"label {labels[bad[0]]} out of range [0, {len(names)})", row=int(bad[0]))
        nonfinite = np.argwhere(~np.isfinite(acts))
        if nonfinite.size:
            raise DatasetError("non-finite activation", row=int(nonfinite[0, 0]))
        seen = set()
        for i, s in enumerate(ids):
            if s in seen:
                raise DatasetError(f"duplicate sample_id {s!r}", row=i)
            seen.add(s)
        for i, s in enumerate(splits):
            if s not in SPLITS:
                raise DatasetError(f"split {s!r} not one of {SPLITS}", row=i)
        labels.flags.writeable = False
        acts = acts.copy()
        acts.flags.writeable = False
        object.__setattr__(self, "sample_ids", ids)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "activations", acts)
        object.__setattr__(self, "splits", splits)
        object.__setattr__(self, "class_names", names)

    def __len__(self):
        return len(self.sample_ids)

    def __eq__(self, other):
        if not isinstance(other, ActivationDataset):
            return NotImplemented
        return (
            self.sample_ids == other.sample_ids
            and self.splits == other.splits
            and self.class_names == other.class_names
            and np.array_equal(self.labels, other.labels)
            and self.activations.shape == other.activations.shape
            and np.array_equal(self.activations, other.activations)
        )

    @property
    def dim(self) -> int:
        return self.activations.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def split_mask(self, split: str) -> np.ndarray:
        return np.array([s == split for s in self.splits], dtype=bool)

    def select(self, mask) -> "ActivationDataset":
        """Return the rows where ``mask`` is true (boolean mask or index array)."""
        idx = np.arange(len(self))[mask]
        return ActivationDataset(
            sample_ids=tuple(self.sample_ids[i] for i in idx),
            labels=self.labels[idx],
            activations=self.activations[idx],
            splits=tuple(self.splits[i] for i in idx),
            class_names=self.class_names,
        )

    def replace(self, **changes) -> "ActivationDataset":
        fields = dict(
            sample_ids=self.sample_ids,
            labels=self.labels,
            activations=self.activations,
            splits=self.splits,
            class_names=self.class_names,
        )
        fields.update(changes)
        return ActivationDataset(**fields)


@dataclass(frozen=True)
class Manifest:
    class_names: tuple[str, ...]
    dim: int
    known_classes: tuple[str, ...] | None = None

    def to_dict(self) -> dict:
        d = {"class_names": list(self.class_names), "dim": self.dim}
        if self.known_classes is not None:
            d["known_classes"] = list(self.known_classes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Manifest":
        try:
            names = tuple(d["class_names"])
            dim = int(d["dim"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"invalid manifest: {exc}") from None
        known = d.get("known_classes")
        return cls(names, dim, tuple(known) if known is not None else None)


def manifest_path_for(path) -> Path:
    """Sidecar manifest location for an activation file: ``x.csv`` -> ``x.manifest.json``."""
    path = Path(path)
    return path.with_name(path.stem + ".manifest.json")


def read_manifest(path) -> Manifest:
    with open(path, encoding="utf-8") as fh:
        try:
            return Manifest.from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise DatasetError(f"manifest {path} is not valid JSON: {exc}") from None


def write_manifest(manifest: Manifest, path) -> None:
    atomic_write_text(path, json.dumps(manifest.to_dict(), indent=2) + "\n")


def load_dataset(path, manifest=None) -> ActivationDataset:
    """Read an activation file.

    Class names come from ``manifest`` (a :class:`Manifest` or a path), else from
    the sidecar ``<stem>.manifest.json`` when present, else they default to
    ``"0".."K-1"`` with K one past the largest label. Row numbers in errors are
    1-based data rows (the header is row 0).
    """
    path = Path(path)
    if manifest is None and manifest_path_for(path).exists():
        manifest = manifest_path_for(path)
    if manifest is not None and not isinstance(manifest, Manifest):
        manifest = read_manifest(manifest)

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError("empty file: missing header", row=0) from None
        if header[:3] != ["sample_id", "label", "split"]:
            raise DatasetError("header must start with sample_id,label,split", row=0)
        dim = len(header) - 3
        if header[3:] != [f"a_{j}" for j in range(dim)]:
            raise DatasetError("activation columns must be named a_0..a_{D-1} in order", row=0)
        if manifest is not None and manifest.dim != dim:
            raise DatasetError(f"manifest dim {manifest.dim} does not match header dim {dim}", row=0)

        ids, labels, splits, rows = [], [], [], []
        seen = set()
        n_classes = len(manifest.class_names) if manifest is not None else None
        for rownum, rec in enumerate(reader, start=1):
            if len(rec) != dim + 3:
                raise DatasetError(f"expected {dim} activations, found {len(rec) - 3}", row=rownum)
            sid, lab, split = rec[0], rec[1], rec[2]
            if sid in seen:
                raise DatasetError(f"duplicate sample_id {sid!r}", row=rownum)
            seen.add(sid)
            try:
                label = int(lab)
            except ValueError:
                raise DatasetError(f"label {lab!r} is not an integer", row=rownum) from None
            if label < 0 or (n_classes is not None and label >= n_classes):
                raise DatasetError(f"unknown label {label}", row=rownum)
            if split not in SPLITS:
                raise DatasetError(f"split {split!r} not one of {SPLITS}", row=rownum)
            try:
                vec = [float(x) for x in rec[3:]]
            except ValueError as exc:
                raise DatasetError(f"bad activation value: {exc}", row=rownum) from None
            if not all(math.isfinite(x) for x in vec):
                raise DatasetError("non-finite activation", row=rownum)
            ids.append(sid)
            labels.append(label)
            splits.append(split)
            rows.append(vec)

    if manifest is not None:
        names = manifest.class_names
    else:
        names = tuple(str(i) for i in range(max(labels, default=0) + 1))
    acts = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    return ActivationDataset(tuple(ids), np.array(labels, dtype=np.int64), acts, tuple(splits), names)


def format_dataset(ds: ActivationDataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["sample_id", "label", "split", *[f"a_{j}" for j in range(ds.dim)]])
    for sid, lab, split, vec in zip(ds.sample_ids, ds.labels, ds.splits, ds.activations):
        # repr() of a Python float is the shortest string that round-trips exactly
        writer.writerow([sid, int(lab), split, *[repr(float(x)) for x in vec]])
    return buf.getvalue()


def write_dataset(ds: ActivationDataset, path, known_classes=None) -> None:
    """Write ``ds`` to ``path`` and its manifest to the sidecar location."""
    atomic_write_text(path, format_dataset(ds))
    known = tuple(known_classes) if known_classes is not None else None
    write_manifest(Manifest(ds.class_names, ds.dim, known), manifest_path_for(path))


def split_counts(n: int, ratios) -> list[int]:
    """Largest-remainder apportionment of ``n`` items over ``ratios``.

    Leftover items go to the largest fractional parts; ties favour the
    earlier split (train, then val, then test).
    """
    exact = [n * r for r in ratios]
    # absorb float noise such as 7 * 0.7 == 4.8999999999999995 only at integer boundaries
    floors = [math.floor(x + 1e-9) for x in exact]
    rema = [max(x - f, 0.0) for x, f in zip(exact, floors)]
    leftover = n - sum(floors)
    order = sorted(range(len(ratios)), key=lambda i: (-rema[i], i))
    for i in order[:leftover]:
        floors[i] += 1
    return floors


def split_dataset(ds: ActivationDataset, ratios=(0.7, 0.1, 0.2), seed: int = 0) -> ActivationDataset:
    """Stratified train/val/test split with per-class largest-remainder counts.

    Rows of each class are shuffled with a generator seeded by ``seed`` (classes
    are visited in label order, so the assignment is a pure function of the
    inputs) and the first ``n_train`` go to train, the next ``n_val`` to val,
    the rest to test.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ValueError("ratios must be three nonnegative numbers (train, val, test)")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)!r}")
    rng = np.random.default_rng(seed)
    tags = np.empty(len(ds), dtype=object)
    for c, name in enumerate(ds.class_names):
        idx = np.flatnonzero(ds.labels == c)
        if idx.size == 0:
            raise ValueError(f"class {name!r} has no samples")
        idx = idx[rng.permutation(idx.size)]
        n_train, n_val, _ = split_counts(idx.size, ratios)
        tags[idx[:n_train]] = "train"
        tags[idx[n_train:n_train + n_val]] = "val"
        tags[idx[n_train + n_val:]] = "test"
    return ds.replace(splits=tuple(tags))


@dataclass(frozen=True, eq=False)
class OpenSetView:
    """A dataset relabelled into the open-set label space.

    Known classes get labels ``1..K`` in the order given by ``known_class_names``;
    every other class collapses onto label 0 (unknown).
    """

    base: ActivationDataset
    known_class_names: tuple[str, ...]
    labels: np.ndarray = field(repr=False)

    @property
    def known_count(self) -> int:
        return len(self.known_class_names)

    @property
    def label_names(self) -> tuple[str, ...]:
        return (UNKNOWN_NAME, *self.known_class_names)

    @property
    def is_closed_set(self) -> bool:
        return self.known_count == self.base.n_classes

    @property
    def activations(self) -> np.ndarray:
        return self.base.activations

    @property
    def sample_ids(self) -> tuple[str, ...]:
        return self.base.sample_ids

    def remap(self) -> dict[str, int]:
        table = self._remap_table()
        return {name: int(table[c]) for c, name in enumerate(self.base.class_names)}

    def _remap_table(self) -> np.ndarray:
        table = np.zeros(self.base.n_classes, dtype=np.int64)
        for k, name in enumerate(self.known_class_names, start=1):
            table[self.base.class_names.index(name)] = k
        return table

    def partition(self, split: str | None = None, known_only: bool = False):
        """Activations and open-set labels for one split (``None`` = all rows).

        Returns ``(activations, labels)``.
        """
        mask = np.ones(len(self.base), dtype=bool) if split is None else self.base.split_mask(split)
        if known_only:
            mask &= self.labels != UNKNOWN_LABEL
        return self.base.activations[mask], self.labels[mask]

    def calibration_data(self, split: str = "train"):
        """Known-class rows of ``split``, the only rows calibration may see."""
        return self.partition(split, known_only=True)


def apply_openset_protocol(ds: ActivationDataset, known_class_names) -> OpenSetView:
    known = tuple(known_class_names)
    if len(known) < 2:
        raise ValueError("at least 2 known classes are required")
    if len(set(known)) != len(known):
        raise ValueError("known class names must be unique")
    for name in known:
        if name not in ds.class_names:
            raise ValueError(f"unknown class name {name!r}; available: {list(ds.class_names)}")
    view = OpenSetView(ds, known, np.zeros(0, dtype=np.int64))
    labels = view._remap_table()[ds.labels]
    labels.flags.writeable = False
    object.__setattr__(view, "labels", labels)
    return view
