"""Labeled datasets, stratified splits and finite-measurement features."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .features import (
    DEFAULT_QUADRATURE,
    FeatureVector,
    QuadratureSpec,
    efficiency_surface,
    feature_matrix,
)
from .noise import DEFAULT_GAMMA, ETA_RANGE, SIGMA1, SIGMA2_FACTOR, NoiseSpec, sample_quasistatic
from .quantum import FEATURE_DRIVES, transfer_efficiency
from .rng import derive_rng

TASK_CLASSES = {
    "four": ("1", "2", "3", "4"),
    "five": ("1", "2", "3", "4a", "4b"),
}
DEFAULT_RATIOS = (0.6, 0.2, 0.2)


class DatasetFormatError(ValueError):
    """A dataset file that cannot be parsed; the message names the line."""


def task_for_classes(n_classes: int) -> str:
    for task, tags in TASK_CLASSES.items():
        if len(tags) == n_classes:
            return task
    raise ValueError(f"no task with {n_classes} classes")


@dataclass(frozen=True)
class LabeledSample:
    features: FeatureVector
    label: tuple
    spec: NoiseSpec

    def __post_init__(self):
        label = tuple(int(v) for v in self.label)
        if len(label) not in (4, 5) or sorted(label) != [0] * (len(label) - 1) + [1]:
            raise ValueError(f"label {list(label)} is not one-hot of length 4 or 5")
        object.__setattr__(self, "label", label)
        f = self.features.as_array()
        if not np.all((f >= 0) & (f <= 1)):
            raise ValueError("features must lie in [0, 1]")

    @property
    def class_index(self) -> int:
        return self.label.index(1)

    @property
    def class_tag(self) -> str:
        return self.spec.class_tag

    def to_record(self) -> dict:
        return {
            "features": [float(v) for v in self.features.as_array()],
            "label": list(self.label),
            "class_tag": self.spec.class_tag,
            "params": {k: v for k, v in self.spec.to_dict().items() if k != "class_tag"},
        }

    @classmethod
    def from_record(cls, rec: dict) -> "LabeledSample":
        spec = NoiseSpec(class_tag=rec["class_tag"], **rec["params"])
        return cls(FeatureVector.from_array(rec["features"]), tuple(rec["label"]), spec)


@dataclass
class DatasetSplit:
    train: list = field(default_factory=list)
    validation: list = field(default_factory=list)
    test: list = field(default_factory=list)


def one_hot(index: int, n_classes: int) -> tuple:
    return tuple(int(i == index) for i in range(n_classes))


def as_arrays(samples):
    """``(X, Y)`` with features of shape ``(n, 3)`` and one-hot labels ``(n, K)``."""
    samples = list(samples)
    if not samples:
        return np.zeros((0, 3)), np.zeros((0, 0))
    x = np.array([s.features.as_array() for s in samples])
    y = np.array([s.label for s in samples], dtype=float)
    return x, y


# --------------------------------------------------------------------------
# sampling and generation


def sample_noise_spec(class_tag: str, rng: np.random.Generator, sigma1: float = SIGMA1,
                      gamma: float = DEFAULT_GAMMA) -> NoiseSpec:
    """Draw the class parameters uniformly from their interval.

    ``sigma2`` for class 3 is uniform on ``(0, 5 sigma1]``.
    """
    u = rng.random()
    if class_tag == "3":
        return NoiseSpec("3", sigma1=sigma1, sigma2=SIGMA2_FACTOR * sigma1 * (1.0 - u))
    lo, hi = ETA_RANGE[class_tag]
    eta = lo + (hi - lo) * u
    if class_tag in ("1", "2"):
        return NoiseSpec(class_tag, eta=eta, sigma1=sigma1)
    return NoiseSpec(class_tag, eta=eta, sigma1=sigma1, gamma=gamma)


def sample_specs(task: str, per_class: int, seed: int, gamma: float = DEFAULT_GAMMA):
    """Noise specs in class order; sample ``i`` of a class uses its own stream."""
    if task not in TASK_CLASSES:
        raise ValueError(f"unknown task {task!r}")
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    specs, labels = [], []
    tags = TASK_CLASSES[task]
    for k, tag in enumerate(tags):
        for i in range(per_class):
            specs.append(sample_noise_spec(tag, derive_rng(seed, "spec", tag, i), gamma=gamma))
            labels.append(one_hot(k, len(tags)))
    return specs, labels


def generate_dataset(task: str, per_class: int = 500, quad: QuadratureSpec = DEFAULT_QUADRATURE,
                     gamma: float = DEFAULT_GAMMA, seed: int = 0, drives=FEATURE_DRIVES,
                     cache_dir=None) -> list:
    specs, labels = sample_specs(task, per_class, seed, gamma)
    feats = feature_matrix(specs, quad, drives, cache_dir)
    return [LabeledSample(FeatureVector.from_array(f), lab, s)
            for f, lab, s in zip(feats, labels, specs)]


def dataset_metadata(task: str, per_class: int, seed: int, gamma: float,
                     quad: QuadratureSpec = DEFAULT_QUADRATURE, drives=FEATURE_DRIVES) -> dict:
    return {
        "task": task,
        "classes": list(TASK_CLASSES[task]),
        "per_class": per_class,
        "seed": seed,
        "gamma": gamma,
        "sigma1": SIGMA1,
        "quadrature": quad.to_dict(),
        "drives": [d.to_dict() for d in drives],
        "version": __version__,
    }


# --------------------------------------------------------------------------
# splitting


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _allocate(counts, ratio: float, target: int):
    """Per-class quotas summing to ``target``, each within 1 of ``ratio * n``."""
    exact = [ratio * n for n in counts]
    quota = [int(math.floor(e)) for e in exact]
    order = sorted(range(len(counts)), key=lambda c: (-(exact[c] - quota[c]), c))
    short = target - sum(quota)
    for c in order:
        if short <= 0:
            break
        if quota[c] < counts[c]:
            quota[c] += 1
            short -= 1
    return quota


def _allocate_within(counts, val_q, ratios, target: int):
    """Test quotas keeping both the test and the train share within 1 per class."""
    lo, hi, want = [], [], []
    for n, v in zip(counts, val_q):
        t = ratios[2] * n
        rest = n - v - ratios[0] * n  # test count that leaves train exactly proportional
        lo.append(max(math.ceil(t - 1 - 1e-9), math.ceil(rest - 1 - 1e-9), 0))
        hi.append(min(math.floor(t + 1 + 1e-9), math.floor(rest + 1 + 1e-9), n - v))
        want.append(t)
    quota = [min(a, b) for a, b in zip(lo, hi)]
    while sum(quota) < target:
        open_ = [c for c in range(len(counts)) if quota[c] < hi[c]]
        if not open_:
            open_ = [c for c in range(len(counts)) if quota[c] < counts[c] - val_q[c]]
        c = max(open_, key=lambda c: (want[c] - quota[c], -c))
        quota[c] += 1
    while sum(quota) > target:
        c = max((c for c in range(len(counts)) if quota[c] > 0), key=lambda c: (quota[c] - want[c], -c))
        quota[c] -= 1
    return quota


def split_dataset(data, ratios=DEFAULT_RATIOS, seed: int = 0) -> DatasetSplit:
    """Stratified shuffle split.

    Validation and test sizes are ``ratio * N`` rounded to nearest; train
    takes the remainder.  Each class contributes to each split within one
    sample of its proportional share.
    """
    data = list(data)
    if not data:
        raise ValueError("cannot split an empty dataset")
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must be three non-negative numbers summing to 1")
    by_class: dict = {}
    for i, s in enumerate(data):
        by_class.setdefault(s.class_index, []).append(i)
    classes = sorted(by_class)
    counts = [len(by_class[c]) for c in classes]
    n = len(data)
    n_val = _round_half_up(ratios[1] * n)
    n_test = min(_round_half_up(ratios[2] * n), n - n_val)
    val_q = _allocate(counts, ratios[1], n_val)
    test_q = _allocate_within(counts, val_q, ratios, n_test)
    rng = derive_rng(seed, "split")
    train, val, test = [], [], []
    for k, c in enumerate(classes):
        idx = [by_class[c][j] for j in rng.permutation(counts[k])]
        val += idx[:val_q[k]]
        test += idx[val_q[k]:val_q[k] + test_q[k]]
        train += idx[val_q[k] + test_q[k]:]
    parts = []
    for part in (train, val, test):
        part = [part[j] for j in rng.permutation(len(part))]
        parts.append([data[j] for j in part])
    return DatasetSplit(*parts)


# --------------------------------------------------------------------------
# finite number of measurements


def finite_measurement_features(spec: NoiseSpec, m: int, rng: np.random.Generator,
                                drives=FEATURE_DRIVES, exact: FeatureVector | None = None,
                                quad: QuadratureSpec = DEFAULT_QUADRATURE,
                                direct: bool = False) -> FeatureVector:
    """Efficiencies estimated from ``m`` simulated projective measurements.

    Each measurement yields 1 with the target population of its own run.
    For quasistatic classes every run has a fresh noise draw and its
    population comes from the cached efficiency surface (or, with
    ``direct=True``, from propagation).  For Markovian classes every run
    has the ensemble population ``exact`` (computed if not supplied).
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    drives = tuple(drives)
    out = np.empty(len(drives))
    if spec.markovian:
        if exact is None:
            exact = FeatureVector.from_array(feature_matrix([spec], quad, drives)[0])
        p = exact.as_array()
        for k in range(len(drives)):
            out[k] = rng.binomial(m, p[k]) / m
        return FeatureVector.from_array(out)
    for k, drive in enumerate(drives):
        x1, x2 = sample_quasistatic(spec, rng, size=m)
        if direct:
            p = transfer_efficiency(drive, x1, x2, steps=quad.steps)
        else:
            p = efficiency_surface(drive, spec.sigma1, quad)(x1, x2)
        out[k] = np.count_nonzero(rng.random(m) < p) / m
    return FeatureVector.from_array(out)


def finite_measurement_dataset(samples, m: int, seed: int, repetition: int = 0,
                               drives=FEATURE_DRIVES, quad: QuadratureSpec = DEFAULT_QUADRATURE) -> list:
    """Replace each sample's features by a finite-``m`` estimate.

    Sample ``i`` draws from stream ``(seed, "finite", m, repetition, i)``.
    """
    out = []
    for i, s in enumerate(samples):
        rng = derive_rng(seed, "finite", m, repetition, i)
        f = finite_measurement_features(s.spec, m, rng, drives,
                                        exact=s.features, quad=quad)
        out.append(LabeledSample(f, s.label, s.spec))
    return out


# --------------------------------------------------------------------------
# serialization


def _meta_path(path) -> Path:
    path = Path(path)
    stem = path.name[:-len(".jsonl")] if path.name.endswith(".jsonl") else path.name
    return path.with_name(stem + ".meta.json")


def save_dataset(samples, path, metadata: dict | None = None) -> None:
    """Write one JSON record per line, plus a ``.meta.json`` sidecar."""
    path = Path(path)
    with open(path, "w") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_record(), sort_keys=True) + "\n")
    if metadata is not None:
        with open(_meta_path(path), "w") as fh:
            json.dump(metadata, fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_metadata(path) -> dict | None:
    p = _meta_path(path)
    if not p.exists():
        return None
    with open(p) as fh:
        return json.load(fh)


def load_dataset(path) -> list:
    samples = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if not isinstance(rec, dict):
                    raise ValueError("record is not an object")
                missing = {"features", "label", "class_tag", "params"} - rec.keys()
                if missing:
                    raise ValueError(f"missing fields {sorted(missing)}")
                s = LabeledSample.from_record(rec)
            except (ValueError, TypeError, KeyError) as exc:
                raise DatasetFormatError(f"{path}: line {lineno}: {exc}") from exc
            if width is None:
                width = len(s.label)
            elif len(s.label) != width:
                raise DatasetFormatError(f"{path}: line {lineno}: label length {len(s.label)} != {width}")
            samples.append(s)
    return samples
