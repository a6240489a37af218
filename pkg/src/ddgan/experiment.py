"""The seeded synthetic benchmark and its four-way ablation.

The benchmark is small enough to train every variant on one CPU core in
well under a minute: 12 classes (3 unseen), 64-D features, 20 samples per
class and domain, well-separated domains, and 128-wide hidden layers.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, Domain, make_split, synth_dataset
from .networks import ModelBundle, NetworkConfig, invariant_features, specific_features
from .retrieval import evaluate
from .training import TrainConfig, synthesize_unseen, train_phase1, train_phase2_retrain

VARIANTS = {
    "baseline": dict(use_semantic=False, use_combination=False, transductive=False),
    "baseline_sa": dict(use_semantic=True, use_combination=False, transductive=False),
    "ddgan_inductive": dict(use_semantic=True, use_combination=True, transductive=False),
    "ddgan_transductive": dict(use_semantic=True, use_combination=True, transductive=True),
}


@dataclass(frozen=True)
class BenchmarkConfig:
    n_classes: int = 12
    n_unseen: int = 3
    dim: int = 64
    per_class_per_domain: int = 20
    domain_offset_scale: float = 10.0
    noise_scale: float = 2.0
    class_rank: int | None = None
    seed: int = 0
    epochs_phase1: int = 200
    epochs_phase2: int = 100
    batch_size: int = 32
    hidden: int = 128

    def network_config(self):
        h = self.hidden
        return NetworkConfig(feature_dim=self.dim, encoder_hidden=(h, h), mapper_hidden=(h, h),
                             generator_hidden=(h, h), discriminator_hidden=(h, h // 2))

    def train_config(self, **overrides):
        base = dict(seed=self.seed, epochs_phase1=self.epochs_phase1,
                    epochs_phase2=self.epochs_phase2, batch_size=self.batch_size)
        return TrainConfig(**{**base, **overrides})


@dataclass
class Benchmark:
    config: BenchmarkConfig
    synthetic: object
    dataset: Dataset
    split: object
    queries: list
    gallery: list

    @property
    def unseen(self):
        return self.dataset.filter(labels=self.split.unseen)


def build_benchmark(config=None):
    config = config or BenchmarkConfig()
    syn = synth_dataset(config.n_classes, config.per_class_per_domain, config.dim,
                        config.domain_offset_scale, config.noise_scale, config.seed,
                        class_rank=config.class_rank)
    dataset = Dataset(syn.records)
    split = make_split(dataset.label_set(), config.n_unseen, config.seed)
    test = dataset.filter(labels=split.unseen)
    return Benchmark(config, syn, dataset, split,
                     list(test.filter(domain=Domain.SKETCH)), list(test.filter(domain=Domain.SHAPE)))


@dataclass
class VariantResult:
    name: str
    map_phase1: float
    map: float
    seconds: float
    history: list = field(repr=False, default_factory=list)
    model: ModelBundle = field(repr=False, default=None)
    phase1_model: ModelBundle = field(repr=False, default=None)


def run_variant(name, bench, **overrides):
    """Train one ablation variant and score it on the unseen classes.

    Variants with the generator go through both phases; the others stop after
    phase 1.
    """
    cfg = bench.config.train_config(**{**VARIANTS[name], **overrides})
    start = time.perf_counter()
    model = ModelBundle(bench.config.network_config(), seed=bench.config.seed)
    result = train_phase1(model, bench.dataset, bench.split, bench.synthetic.embeddings, cfg,
                          unlabeled=bench.unseen if cfg.transductive else None)
    map1 = evaluate(model, bench.queries, bench.gallery).map
    final, history, phase1_model = map1, result.history, model
    if cfg.use_combination and cfg.epochs_phase2:
        phase1_model = model.copy()
        seen = bench.dataset.filter(labels=bench.split.seen)
        fake = synthesize_unseen(model, bench.synthetic.embeddings, bench.split, seen, cfg)
        phase2 = train_phase2_retrain(model, seen, fake, bench.synthetic.embeddings, cfg, split=bench.split)
        history = result.history + phase2.history
        final = evaluate(model, bench.queries, bench.gallery).map
    return VariantResult(name, map1, final, time.perf_counter() - start, history, model,
                         phase1_model)


def run_ablation(bench=None, names=tuple(VARIANTS)):
    bench = bench or build_benchmark()
    return {name: run_variant(name, bench) for name in names}


# ---------------------------------------------------------------- disentanglement

def nearest_centroid_accuracy(features, labels):
    """Leave-one-out nearest-centroid accuracy of ``labels`` from ``features``."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    classes = sorted(set(labels.tolist()))
    if len(classes) < 2:
        raise ValueError("need at least two classes")
    sums = {c: features[labels == c].sum(axis=0) for c in classes}
    counts = {c: int(np.sum(labels == c)) for c in classes}
    correct = 0
    for x, y in zip(features, labels):
        best, best_d = None, np.inf
        for c in classes:
            n = counts[c] - (c == y)
            if n == 0:
                continue
            centroid = (sums[c] - x * (c == y)) / n
            d = float(np.sum((x - centroid) ** 2))
            if d < best_d:
                best, best_d = c, d
        correct += best == y
    return correct / len(labels)


def domain_separability(model, dataset):
    """Domain-classification accuracy from invariant and from specific features."""
    records = list(dataset)
    inv, spec, domains = [], [], []
    for domain in (Domain.SHAPE, Domain.SKETCH):
        feats = np.stack([r.feature for r in records if r.domain is domain])
        inv.append(invariant_features(model, feats, domain))
        spec.append(specific_features(model, feats, domain))
        domains += [domain.value] * len(feats)
    return (nearest_centroid_accuracy(np.vstack(inv), domains),
            nearest_centroid_accuracy(np.vstack(spec), domains))


def with_seed(config, seed):
    return replace(config, seed=seed)
