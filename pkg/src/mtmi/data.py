"""Bags, bag collections and spectral libraries, plus their CSV formats.

Bag CSV
    UTF-8, LF line endings, header ``bag_id,label,b1,...,bD`` and one
    instance per row. Rows belonging to the same bag keep their relative
    order; bags are ordered by first appearance.

Library CSV
    Header ``name,<band label 1>,...,<band label D>``, one spectrum per row.

All values are written with 17 significant digits so float64 values
survive a round trip exactly.
"""

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError

__all__ = [
    "Bag",
    "BagCollection",
    "SpectralLibrary",
    "format_float",
    "load_bags",
    "save_bags",
    "load_library",
    "save_library",
]


def format_float(value):
    return format(float(value), ".17g")


def _frozen(array):
    out = np.array(array, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Bag:
    """A labelled group of instances.

    ``instances`` is an (n, D) float64 array; label 1 marks a positive bag.
    """

    id: int
    label: int
    instances: np.ndarray

    def __post_init__(self):
        inst = np.asarray(self.instances, dtype=np.float64)
        if inst.ndim == 1:
            inst = inst[None, :]
        if inst.ndim != 2 or inst.shape[0] == 0:
            raise ValidationError(f"bag {self.id} has no instances")
        if inst.shape[1] < 2:
            raise ValidationError(f"bag {self.id}: dimensionality must be >= 2")
        if not np.all(np.isfinite(inst)):
            raise ValidationError(f"bag {self.id} contains non-finite values")
        if self.label not in (0, 1):
            raise ValidationError(f"bag {self.id}: label must be 0 or 1, got {self.label!r}")
        object.__setattr__(self, "id", int(self.id))
        object.__setattr__(self, "label", int(self.label))
        object.__setattr__(self, "instances", _frozen(inst))

    def __len__(self):
        return self.instances.shape[0]

    @property
    def dim(self):
        return self.instances.shape[1]

    @property
    def positive(self):
        return self.label == 1

    def __eq__(self, other):
        if not isinstance(other, Bag):
            return NotImplemented
        return (
            self.id == other.id
            and self.label == other.label
            and self.instances.shape == other.instances.shape
            and bool(np.array_equal(self.instances, other.instances))
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class BagCollection:
    bags: tuple
    dim: int = field(default=None)

    def __post_init__(self):
        bags = tuple(self.bags)
        if not bags:
            raise ValidationError("collection contains no bags")
        dims = {b.dim for b in bags}
        if len(dims) != 1:
            raise ValidationError(f"bags disagree on dimensionality: {sorted(dims)}")
        (dim,) = dims
        if self.dim is not None and self.dim != dim:
            raise ValidationError(f"declared dimensionality {self.dim} != {dim}")
        ids = [b.id for b in bags]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate bag ids")
        object.__setattr__(self, "bags", bags)
        object.__setattr__(self, "dim", dim)

    def __len__(self):
        return len(self.bags)

    def __iter__(self):
        return iter(self.bags)

    def __eq__(self, other):
        if not isinstance(other, BagCollection):
            return NotImplemented
        return self.dim == other.dim and self.bags == other.bags

    __hash__ = None

    @property
    def positive_bags(self):
        return tuple(b for b in self.bags if b.label == 1)

    @property
    def negative_bags(self):
        return tuple(b for b in self.bags if b.label == 0)

    @property
    def n_positive(self):
        return sum(1 for b in self.bags if b.label == 1)

    @property
    def n_negative(self):
        return sum(1 for b in self.bags if b.label == 0)

    @property
    def n_instances(self):
        return sum(len(b) for b in self.bags)

    def require_trainable(self):
        """Raise unless there is at least one positive and one negative bag."""
        if self.n_positive < 1 or self.n_negative < 1:
            raise ValidationError(
                "training needs at least one positive and one negative bag "
                f"(got {self.n_positive} positive, {self.n_negative} negative)"
            )

    def all_instances(self):
        return np.vstack([b.instances for b in self.bags])

    def with_bags(self, bags):
        return BagCollection(tuple(bags))


@dataclass(frozen=True, eq=False)
class SpectralLibrary:
    names: tuple
    spectra: np.ndarray
    band_labels: tuple

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        spectra = np.asarray(self.spectra, dtype=np.float64)
        if spectra.ndim != 2 or spectra.shape[0] != len(names):
            raise ValidationError("spectra must be an (entries, D) array matching names")
        if len(set(names)) != len(names):
            dup = next(n for n in names if names.count(n) > 1)
            raise ValidationError(f"duplicate library entry {dup!r}")
        if len(self.band_labels) != spectra.shape[1]:
            raise ValidationError("band label count does not match spectrum length")
        if spectra.shape[1] < 2:
            raise ValidationError("spectra must have at least 2 bands")
        if not np.all(np.isfinite(spectra)):
            raise ValidationError("library contains non-finite values")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "spectra", _frozen(spectra))
        object.__setattr__(self, "band_labels", tuple(str(b) for b in self.band_labels))

    @property
    def dim(self):
        return self.spectra.shape[1]

    def __len__(self):
        return len(self.names)

    def __getitem__(self, name):
        try:
            return self.spectra[self.names.index(name)]
        except ValueError:
            raise KeyError(f"no spectrum named {name!r} in library") from None

    def __contains__(self, name):
        return name in self.names


def _parse_float(text, line, path, column):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"malformed value {text!r} in column {column} at line {line}", line, path) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite value {text!r} in column {column} at line {line}", line, path)
    return value


def _read_rows(path):
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        text = fh.read()
    if not text.strip():
        raise ParseError("empty file", None, path)
    return list(csv.reader(io.StringIO(text)))


def load_bags(path):
    """Read a Bag CSV file into a validated :class:`BagCollection`."""
    rows = _read_rows(path)
    header = rows[0]
    if len(header) < 4 or header[0].strip() != "bag_id" or header[1].strip() != "label":
        raise ParseError("header must be 'bag_id,label,b1,...,bD' with D >= 2", 1, path)
    dim = len(header) - 2

    order = []
    labels = {}
    values = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) - 2 != dim:
            raise ParseError(f"inconsistent dimensionality at line {lineno}: "
                             f"expected {dim} values, found {len(row) - 2}", lineno, path)
        try:
            bag_id = int(row[0])
        except ValueError:
            raise ParseError(f"malformed bag id {row[0]!r} at line {lineno}", lineno, path) from None
        label_text = row[1].strip()
        if label_text not in ("0", "1"):
            raise ParseError(f"non-binary label {row[1]!r} at line {lineno}", lineno, path)
        label = int(label_text)
        vec = [_parse_float(v, lineno, path, c + 3) for c, v in enumerate(row[2:])]
        if bag_id not in labels:
            order.append(bag_id)
            labels[bag_id] = label
            values[bag_id] = []
        elif labels[bag_id] != label:
            raise ParseError(f"bag {bag_id} changes label at line {lineno}", lineno, path)
        values[bag_id].append(vec)

    if not order:
        raise ParseError("file has a header but no instances", None, path)
    return BagCollection(tuple(Bag(i, labels[i], np.array(values[i])) for i in order))


def _bags_text(collection):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["bag_id", "label"] + [f"b{i + 1}" for i in range(collection.dim)])
    for bag in collection.bags:
        for inst in bag.instances:
            writer.writerow([str(bag.id), str(bag.label)] + [format_float(v) for v in inst])
    return buf.getvalue()


def save_bags(collection, path):
    if not isinstance(collection, BagCollection):
        collection = BagCollection(tuple(collection))
    for bag in collection.bags:
        if len(bag) == 0:
            raise ValidationError(f"bag {bag.id} is empty")
    text = _bags_text(collection)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def load_library(path):
    rows = _read_rows(path)
    header = rows[0]
    if len(header) < 3 or header[0].strip() != "name":
        raise ParseError("header must be 'name,<band labels...>' with at least 2 bands", 1, path)
    bands = header[1:]
    dim = len(bands)
    names, spectra = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) - 1 != dim:
            raise ParseError(f"inconsistent dimensionality at line {lineno}: "
                             f"expected {dim} values, found {len(row) - 1}", lineno, path)
        name = row[0]
        if name in names:
            raise ParseError(f"duplicate name {name!r} at line {lineno}", lineno, path)
        names.append(name)
        spectra.append([_parse_float(v, lineno, path, c + 2) for c, v in enumerate(row[1:])])
    if not names:
        raise ParseError("library has no entries", None, path)
    return SpectralLibrary(tuple(names), np.array(spectra), tuple(bands))


def save_library(library, path):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["name"] + list(library.band_labels))
    for name, spec in zip(library.names, library.spectra):
        writer.writerow([name] + [format_float(v) for v in spec])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())
