"""Synthetic bagged mixed-pixel datasets.

Each instance is a linear mix ``p * target + (1 - p) * background`` plus
i.i.d. Gaussian noise. Negative bags hold background-only instances;
positive bags hold ``targets_per_pos_bag`` mixed target instances at random
positions and background instances elsewhere.
"""

import csv
import io
import math
from dataclasses import dataclass, fields

import numpy as np

from .data import Bag, BagCollection, SpectralLibrary, format_float
from .errors import ParseError, ValidationError

__all__ = [
    "SimConfig",
    "TruthRecord",
    "mix_instance",
    "proportion_bounds",
    "draw_proportions",
    "generate",
    "generate_dataset",
    "save_truth",
    "load_truth",
    "synthetic_rock_library",
    "NO_TARGET",
]

NO_TARGET = "none"
ASSIGNMENTS = ("per_bag", "per_instance")


@dataclass
class SimConfig:
    targets: tuple = ("basalt", "verde_antique")
    backgrounds: tuple = ("pyroxenite", "phyllite", "slate")
    num_pos_bags: int = 10
    num_neg_bags: int = 20
    points_per_bag: int = 500
    targets_per_pos_bag: int = 250
    mean_target_proportion: float = 0.3
    snr_db: float = 20.0
    seed: int = 0
    target_assignment: str = "per_bag"

    def __post_init__(self):
        if isinstance(self.targets, str):
            self.targets = tuple(t.strip() for t in self.targets.split(",") if t.strip())
        if isinstance(self.backgrounds, str):
            self.backgrounds = tuple(t.strip() for t in self.backgrounds.split(",") if t.strip())
        self.targets = tuple(self.targets)
        self.backgrounds = tuple(self.backgrounds)
        if not self.targets or not self.backgrounds:
            raise ValidationError("need at least one target and one background spectrum")
        if set(self.targets) & set(self.backgrounds):
            raise ValidationError("target and background names must be disjoint")
        for name in ("num_pos_bags", "num_neg_bags", "points_per_bag", "targets_per_pos_bag"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be a positive integer")
            setattr(self, name, int(getattr(self, name)))
        if self.targets_per_pos_bag > self.points_per_bag:
            raise ValidationError("targets_per_pos_bag cannot exceed points_per_bag")
        if not 0 < self.mean_target_proportion <= 1:
            raise ValidationError("mean_target_proportion must lie in (0, 1]")
        self.snr_db = float(self.snr_db)
        if math.isnan(self.snr_db):
            raise ValidationError("snr_db must be a number or inf")
        if self.target_assignment not in ASSIGNMENTS:
            raise ValidationError(f"target_assignment must be one of {ASSIGNMENTS}")

    def items(self):
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            out.append((f.name, ",".join(v) if isinstance(v, tuple) else v))
        return out


@dataclass(frozen=True)
class TruthRecord:
    bag_id: int
    instance_index: int
    target_name: str
    proportion: float

    @property
    def is_target(self):
        return self.proportion > 0


def mix_instance(target, background, proportion, noise_scale, rng):
    """``proportion * target + (1 - proportion) * background + noise``.

    ``target`` may be None, in which case the proportion must be 0.
    """
    if not 0 <= proportion <= 1:
        raise ValidationError(f"proportion {proportion} outside [0, 1]")
    background = np.asarray(background, dtype=np.float64)
    if target is None:
        if proportion != 0:
            raise ValidationError("a non-zero proportion needs a target spectrum")
        clean = background.copy()
    else:
        target = np.asarray(target, dtype=np.float64)
        if target.shape != background.shape:
            raise ValidationError("target and background lengths differ")
        clean = proportion * target + (1.0 - proportion) * background
    if noise_scale > 0:
        clean = clean + rng.normal(0.0, noise_scale, size=clean.shape)
    return clean


def proportion_bounds(mean):
    return max(0.0, 2.0 * mean - 1.0), min(1.0, 2.0 * mean)


def draw_proportions(mean, size, rng):
    lo, hi = proportion_bounds(mean)
    return lo + (hi - lo) * rng.random(size)


def _noise_scale(clean, snr_db):
    if math.isinf(snr_db) and snr_db > 0:
        return 0.0
    per_band_rms = np.sqrt(np.mean(clean * clean, axis=0))
    return float(np.mean(per_band_rms) / 10.0 ** (snr_db / 20.0))


def generate(library, config):
    """Build a dataset; returns ``(BagCollection, [TruthRecord, ...])``.

    Positive bags get ids ``1..num_pos_bags``, negative bags follow. With
    ``target_assignment='per_bag'`` each positive bag carries a single
    target type, cycled through ``config.targets`` in order; with
    ``'per_instance'`` the type is drawn uniformly for every target
    instance.
    """
    for name in config.targets + config.backgrounds:
        if name not in library:
            raise ValidationError(f"spectrum {name!r} not found in library")
        if name == NO_TARGET:
            raise ValidationError(f"{NO_TARGET!r} is reserved and cannot name a spectrum")
    T = np.array([library[n] for n in config.targets])
    B = np.array([library[n] for n in config.backgrounds])
    rng = np.random.default_rng(config.seed)
    n_bag = config.points_per_bag

    plan = []  # (bag_id, label, target index per instance (-1 none), proportions, background idx)
    for j in range(config.num_pos_bags):
        slots = rng.permutation(n_bag)[: config.targets_per_pos_bag]
        tidx = np.full(n_bag, -1)
        if config.target_assignment == "per_bag":
            tidx[slots] = j % len(config.targets)
        else:
            tidx[slots] = rng.integers(len(config.targets), size=slots.size)
        props = np.zeros(n_bag)
        props[slots] = draw_proportions(config.mean_target_proportion, slots.size, rng)
        plan.append((j + 1, 1, tidx, props, rng.integers(len(B), size=n_bag)))
    for j in range(config.num_neg_bags):
        plan.append((config.num_pos_bags + j + 1, 0, np.full(n_bag, -1), np.zeros(n_bag),
                     rng.integers(len(B), size=n_bag)))

    clean = []
    for _, _, tidx, props, bidx in plan:
        tgt = np.where((tidx >= 0)[:, None], T[np.maximum(tidx, 0)], 0.0)
        clean.append(props[:, None] * tgt + (1.0 - props[:, None]) * B[bidx])
    scale = _noise_scale(np.vstack(clean), config.snr_db)

    bags, truth = [], []
    for (bag_id, label, tidx, props, _), X in zip(plan, clean):
        if scale > 0:
            X = X + rng.normal(0.0, scale, size=X.shape)
        bags.append(Bag(bag_id, label, X))
        for i in range(n_bag):
            name = config.targets[tidx[i]] if tidx[i] >= 0 else NO_TARGET
            truth.append(TruthRecord(bag_id, i, name, float(props[i])))
    return BagCollection(tuple(bags)), truth


def generate_dataset(library, config):
    return generate(library, config)[0]


def save_truth(truth, path):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bag_id", "instance_index", "target_name", "proportion"])
    for r in truth:
        w.writerow([r.bag_id, r.instance_index, r.target_name, format_float(r.proportion)])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def load_truth(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["bag_id", "instance_index", "target_name", "proportion"]:
        raise ParseError("header must be 'bag_id,instance_index,target_name,proportion'", 1, path)
    out = []
    for lineno, r in enumerate(rows[1:], start=2):
        if not r:
            continue
        try:
            out.append(TruthRecord(int(r[0]), int(r[1]), r[2], float(r[3])))
        except (ValueError, IndexError):
            raise ParseError(f"malformed ground-truth row at line {lineno}", lineno, path) from None
    return out


def _band(wl, centre, width, depth):
    return depth * np.exp(-0.5 * ((wl - centre) / width) ** 2)


def synthetic_rock_library():
    """Five smooth rock-like reflectance spectra, 211 bands over 400-2500 nm.

    Stand-ins for laboratory spectra: broad continua with Gaussian
    absorption features at mineralogically plausible positions. Basalt is
    dark and featureless, close to slate; verde antique is bright with a
    raised 1.5-2.3 um shoulder and a deep 2.32 um band.
    """
    wl = np.linspace(400.0, 2500.0, 211)
    x = (wl - 400.0) / 2100.0
    spectra = {
        "basalt": (0.08 + 0.04 * x + _band(wl, 750, 150, 0.06))
        * (1 - _band(wl, 1050, 180, 0.40) - _band(wl, 2000, 250, 0.12)),
        "pyroxenite": (0.16 + 0.10 * x) * (1 - _band(wl, 950, 110, 0.28) - _band(wl, 2000, 210, 0.22)),
        "verde_antique": (0.22 + 0.06 * x + _band(wl, 550, 50, 0.04) + _band(wl, 1900, 300, 0.12))
        * (1 - _band(wl, 1000, 160, 0.15) - _band(wl, 1400, 25, 0.15) - _band(wl, 2320, 30, 0.35)),
        "phyllite": (0.20 + 0.05 * x) * (1 - _band(wl, 1400, 30, 0.10) - _band(wl, 1910, 40, 0.15)
                                         - _band(wl, 2200, 30, 0.15) - _band(wl, 2350, 30, 0.08)),
        "slate": (0.085 + 0.025 * x) * (1 - _band(wl, 1000, 170, 0.06) - _band(wl, 2200, 40, 0.08)),
    }
    names = tuple(spectra)
    return SpectralLibrary(names, np.array([spectra[n] for n in names]),
                           tuple(f"{w:g}" for w in wl))
