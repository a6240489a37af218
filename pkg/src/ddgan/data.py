"""Feature records, word embeddings, zero-shot splits and triplet sampling.

Feature file (UTF-8 CSV, ``#`` lines ignored)::

    id,domain,label,v1,...,vD        domain is A (3D shape) or B (sketch)

Embedding file (whitespace separated, one token per line)::

    token v1 v2 ... vd
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, MissingLabelError, ParseError, SamplingError

FEATURE_DIM = 2048
EMBED_DIM = 300


class Domain(str, enum.Enum):
    SHAPE = "A"
    SKETCH = "B"

    @classmethod
    def parse(cls, tag):
        try:
            return cls(tag)
        except ValueError:
            raise ValueError(f"unknown domain tag {tag!r}; expected 'A' or 'B'") from None


@dataclass(frozen=True, eq=False)
class FeatureRecord:
    id: str
    domain: Domain
    label: str | None
    feature: np.ndarray
    generated: bool = False

    def __post_init__(self):
        feat = np.asarray(self.feature, dtype=np.float64).reshape(-1)
        feat.setflags(write=False)
        object.__setattr__(self, "feature", feat)
        object.__setattr__(self, "domain", Domain(self.domain))

    def without_label(self):
        return FeatureRecord(self.id, self.domain, None, self.feature, self.generated)

    def __eq__(self, other):
        if not isinstance(other, FeatureRecord):
            return NotImplemented
        return (
            self.id == other.id
            and self.domain == other.domain
            and self.label == other.label
            and self.generated == other.generated
            and np.array_equal(self.feature, other.feature)
        )

    __hash__ = None


@dataclass(frozen=True)
class ZeroShotSplit:
    seen: frozenset
    unseen: frozenset

    def __post_init__(self):
        object.__setattr__(self, "seen", frozenset(self.seen))
        object.__setattr__(self, "unseen", frozenset(self.unseen))
        overlap = self.seen & self.unseen
        if overlap:
            raise ValueError(f"seen and unseen labels overlap: {sorted(overlap)}")

    @property
    def labels(self):
        return self.seen | self.unseen

    def to_json(self):
        return {"seen": sorted(self.seen), "unseen": sorted(self.unseen)}

    @classmethod
    def from_json(cls, obj):
        return cls(obj["seen"], obj["unseen"])

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class Triplet:
    anchor: FeatureRecord
    positive: FeatureRecord
    negative: FeatureRecord


class Dataset:
    """Immutable collection of feature records with per-class indexes."""

    def __init__(self, records):
        self.records = tuple(records)
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            seen, dup = set(), []
            for i in ids:
                if i in seen:
                    dup.append(i)
                seen.add(i)
            raise ValueError(f"duplicate record ids: {sorted(set(dup))[:5]}")
        dims = {r.feature.shape[0] for r in self.records}
        if len(dims) > 1:
            raise DimensionError(f"records have mixed feature widths {sorted(dims)}")
        self.dim = dims.pop() if dims else 0
        if self.records:
            self.features = np.stack([r.feature for r in self.records])
        else:
            self.features = np.zeros((0, 0))
        self.features.setflags(write=False)
        self.domains = np.array([r.domain.value for r in self.records])
        self.labels = [r.label for r in self.records]
        self._by_class = {}
        for i, r in enumerate(self.records):
            self._by_class.setdefault((r.label, r.domain), []).append(i)
        self._by_class = {k: np.array(v, dtype=np.intp) for k, v in self._by_class.items()}

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def label_set(self):
        return {lab for lab in self.labels if lab is not None}

    def indices(self, label, domain):
        return self._by_class.get((label, Domain(domain)), np.zeros(0, dtype=np.intp))

    def domain_indices(self, domain):
        return np.flatnonzero(self.domains == Domain(domain).value)

    def filter(self, labels=None, domain=None):
        keep = []
        for r in self.records:
            if labels is not None and r.label not in labels:
                continue
            if domain is not None and r.domain != Domain(domain):
                continue
            keep.append(r)
        return Dataset(keep)

    def without_labels(self):
        return Dataset([r.without_label() for r in self.records])

    def class_sizes(self, domain=None):
        sizes = {}
        for r in self.records:
            if domain is None or r.domain == Domain(domain):
                sizes[r.label] = sizes.get(r.label, 0) + 1
        return sizes

    def __add__(self, other):
        return Dataset(self.records + tuple(other.records))


# ---------------------------------------------------------------- feature files

def load_features(path, expected_dim=FEATURE_DIM):
    records = []
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) < 4:
                raise ParseError("expected id,domain,label,v1..vD", line=lineno, path=path)
            rid, tag, label = parts[0], parts[1], parts[2]
            try:
                domain = Domain.parse(tag)
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno, path=path) from None
            try:
                values = np.array([float(v) for v in parts[3:]], dtype=np.float64)
            except ValueError as exc:
                raise ParseError(f"bad feature value ({exc})", line=lineno, path=path) from None
            if expected_dim is not None and values.shape[0] != expected_dim:
                raise DimensionError(
                    f"{path}:{lineno}: feature has {values.shape[0]} values, expected {expected_dim}"
                )
            records.append(FeatureRecord(rid, domain, label or None, values))
    return records


def save_features(records, path):
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            values = ",".join(repr(float(v)) for v in r.feature)
            fh.write(f"{r.id},{r.domain.value},{r.label or ''},{values}\n")


# ---------------------------------------------------------------- embeddings

_TOKEN_SPLIT = re.compile(r"[_\s]+")


class WordEmbeddingTable:
    """Label to embedding lookup. Vectors are read-only float64 rows."""

    def __init__(self, vectors):
        self._vectors = {}
        dim = None
        for label, vec in vectors.items():
            vec = np.asarray(vec, dtype=np.float64).reshape(-1).copy()
            if dim is None:
                dim = vec.shape[0]
            elif vec.shape[0] != dim:
                raise DimensionError(f"embedding for {label!r} has width {vec.shape[0]}, expected {dim}")
            if not np.any(vec):
                raise ValueError(f"embedding for {label!r} is the zero vector")
            vec.setflags(write=False)
            self._vectors[label] = vec
        self.dim = dim or 0

    def __len__(self):
        return len(self._vectors)

    def __contains__(self, label):
        return label in self._vectors

    def __getitem__(self, label):
        try:
            return self._vectors[label]
        except KeyError:
            raise MissingLabelError([label]) from None

    def labels(self):
        return sorted(self._vectors)

    def matrix(self, labels):
        missing = [lab for lab in labels if lab not in self._vectors]
        if missing:
            raise MissingLabelError(set(missing))
        return np.stack([self._vectors[lab] for lab in labels]) if labels else np.zeros((0, self.dim))

    def save(self, path):
        with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
            for label in self.labels():
                fh.write(label + " " + " ".join(repr(float(v)) for v in self._vectors[label]) + "\n")


def load_embeddings(path, labels, dim=EMBED_DIM):
    """Read the embeddings for ``labels`` from a token-per-line text file.

    A label missing from the file is looked up token by token (split on
    underscores and spaces) and embedded as the mean of its token vectors.
    """
    labels = list(dict.fromkeys(labels))
    wanted = set(labels)
    for lab in labels:
        wanted.update(t for t in _TOKEN_SPLIT.split(lab) if t)
    found = {}
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split()
            if not parts or parts[0] not in wanted:
                continue
            try:
                vec = np.array([float(v) for v in parts[1:]], dtype=np.float64)
            except ValueError as exc:
                raise ParseError(f"bad embedding value ({exc})", line=lineno, path=path) from None
            if dim is not None and vec.shape[0] != dim:
                raise DimensionError(f"{path}:{lineno}: embedding has {vec.shape[0]} values, expected {dim}")
            found.setdefault(parts[0], vec)
    table, missing = {}, []
    for lab in labels:
        if lab in found:
            table[lab] = found[lab]
            continue
        tokens = [t for t in _TOKEN_SPLIT.split(lab) if t]
        if tokens and all(t in found for t in tokens):
            table[lab] = np.mean([found[t] for t in tokens], axis=0)
        else:
            missing.append(lab)
    if missing:
        raise MissingLabelError(missing)
    return WordEmbeddingTable(table)


# ---------------------------------------------------------------- synthesis

@dataclass
class SyntheticData:
    records: list
    embeddings: WordEmbeddingTable
    class_means: dict = field(default_factory=dict)
    domain_offsets: dict = field(default_factory=dict)


def class_names(n):
    width = max(2, len(str(n - 1)))
    return [f"class{i:0{width}d}" for i in range(n)]


def synth_dataset(n_classes, per_class_per_domain, dim=64, domain_offset_scale=1.0,
                  noise_scale=0.1, seed=0, embed_dim=EMBED_DIM, class_rank=None):
    """Gaussian class clusters shifted by a fixed offset per domain.

    Each sample of class ``c`` in domain ``X`` is ``mu_c + delta_X + eps`` with
    ``mu_c ~ N(0, I)``, ``||delta_X|| = domain_offset_scale`` and
    ``eps ~ N(0, noise_scale^2 I)``.  Class embeddings are a fixed random
    linear projection of ``mu_c`` to ``embed_dim`` dimensions.

    With ``class_rank=k`` the means are instead ``A z_c`` for a fixed random
    ``A`` (dim x k, entries ``N(0, 1/k)``) and ``z_c ~ N(0, I_k)``, so every
    class mean lies in a shared k-dimensional subspace with the same
    expected norm as the full-rank draw.
    """
    if n_classes < 1 or per_class_per_domain < 1 or dim < 1:
        raise ValueError("n_classes, per_class_per_domain and dim must be positive")
    rng = np.random.default_rng(seed)
    labels = class_names(n_classes)
    if class_rank is None:
        means = rng.standard_normal((n_classes, dim))
    else:
        if class_rank < 1:
            raise ValueError("class_rank must be positive")
        basis = rng.standard_normal((class_rank, dim)) / np.sqrt(class_rank)
        means = rng.standard_normal((n_classes, class_rank)) @ basis
    offsets = {}
    for domain in (Domain.SHAPE, Domain.SKETCH):
        direction = rng.standard_normal(dim)
        offsets[domain] = domain_offset_scale * direction / np.linalg.norm(direction)
    projection = rng.standard_normal((dim, embed_dim)) / np.sqrt(dim)
    records = []
    for c, label in enumerate(labels):
        for domain in (Domain.SHAPE, Domain.SKETCH):
            noise = rng.standard_normal((per_class_per_domain, dim)) * noise_scale
            for k in range(per_class_per_domain):
                rid = f"{'shape' if domain is Domain.SHAPE else 'sketch'}_{label}_{k:03d}"
                records.append(FeatureRecord(rid, domain, label, means[c] + offsets[domain] + noise[k]))
    embeddings = WordEmbeddingTable({lab: means[c] @ projection for c, lab in enumerate(labels)})
    return SyntheticData(
        records, embeddings, {lab: means[c] for c, lab in enumerate(labels)}, offsets
    )


def make_split(labels, n_unseen, seed=0):
    labels = sorted(set(labels))
    if not 0 <= n_unseen < len(labels):
        raise ValueError(f"n_unseen must be in [0, {len(labels)}), got {n_unseen}")
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(labels), size=n_unseen, replace=False) if n_unseen else []
    unseen = {labels[i] for i in picked}
    return ZeroShotSplit(set(labels) - unseen, unseen)


# ---------------------------------------------------------------- triplets

class TripletSampler:
    """Draws (sketch anchor, same-class shape, other-class shape) index triples.

    ``labels`` restricts every triplet member to those classes. Anchors are
    uniform over eligible sketches; negatives are uniform over the other
    eligible classes, then uniform within the class.
    """

    def __init__(self, dataset, labels, rng):
        self.dataset = dataset
        self.rng = rng
        classes = sorted(
            lab for lab in set(labels)
            if len(dataset.indices(lab, Domain.SKETCH)) and len(dataset.indices(lab, Domain.SHAPE))
        )
        if len(classes) < 2:
            raise SamplingError(
                f"triplets need at least 2 classes with both domains present, found {len(classes)}"
            )
        self.classes = classes
        self._shapes = [dataset.indices(lab, Domain.SHAPE) for lab in classes]
        anchors, anchor_class = [], []
        for ci, lab in enumerate(classes):
            idx = dataset.indices(lab, Domain.SKETCH)
            anchors.append(idx)
            anchor_class.append(np.full(len(idx), ci, dtype=np.intp))
        self._anchors = np.concatenate(anchors)
        self._anchor_class = np.concatenate(anchor_class)

    def sample_indices(self, n):
        """Return ``(anchor, positive, negative)`` index arrays of length ``n``."""
        rng = self.rng
        pick = rng.integers(0, len(self._anchors), size=n)
        anchor = self._anchors[pick]
        cls = self._anchor_class[pick]
        k = len(self.classes)
        neg_cls = (cls + rng.integers(1, k, size=n)) % k
        positive = np.empty(n, dtype=np.intp)
        negative = np.empty(n, dtype=np.intp)
        for i in range(n):
            pool = self._shapes[cls[i]]
            positive[i] = pool[rng.integers(0, len(pool))]
            pool = self._shapes[neg_cls[i]]
            negative[i] = pool[rng.integers(0, len(pool))]
        return anchor, positive, negative

    def sample(self):
        a, p, n = self.sample_indices(1)
        ds = self.dataset
        return Triplet(ds[int(a[0])], ds[int(p[0])], ds[int(n[0])])


def sample_triplet(dataset, split, rng):
    labels = split.seen if isinstance(split, ZeroShotSplit) else split
    return TripletSampler(dataset, labels, rng).sample()
