"""Two-phase training.

Phase 1 trains every network on seen-class triplets (plus, in transductive
mode, adversarial matching of generated unseen-class samples against
unlabeled unseen features).  The trained generator then synthesizes unseen
samples from word embeddings, and phase 2 retrains on real seen data plus the
synthetic unseen set without the unlabeled branch.
"""

from __future__ import annotations

import contextlib
import csv
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import kernels
from . import losses as L
from . import tensor as T
from .data import Dataset, Domain, FeatureRecord, TripletSampler, ZeroShotSplit
from .errors import MissingLabelError, TrainingError
from .networks import ModelBundle, encode, save_checkpoint

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("L_tri", "L_sem", "L_rec", "L_GAN_D", "L_GAN_G", "L_uGAN_D", "L_uGAN_G", "total")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 32
    epochs_phase1: int = 200
    epochs_phase2: int = 100
    iterations_per_epoch: int | None = None
    d_steps_per_g_step: int = 1
    unseen_samples_per_class_per_domain: int = 50
    seed: int = 0
    transductive: bool = True
    ugan_wiring: str = "corrected"
    eta: float = 20.0
    lambda_rec: float = 10.0
    rec_reduction: str = "mean"
    use_semantic: bool = True
    use_combination: bool = True
    reinit_phase2: bool = False
    checkpoint_every: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.d_steps_per_g_step < 1:
            raise ValueError("d_steps_per_g_step must be at least 1")
        if self.epochs_phase1 < 0 or self.epochs_phase2 < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.unseen_samples_per_class_per_domain < 0:
            raise ValueError("unseen_samples_per_class_per_domain must be non-negative")
        if self.iterations_per_epoch is not None and self.iterations_per_epoch < 1:
            raise ValueError("iterations_per_epoch must be at least 1")
        if self.ugan_wiring not in L.UGAN_WIRINGS:
            raise ValueError(f"ugan_wiring must be one of {L.UGAN_WIRINGS}")
        if self.transductive and not self.use_combination:
            raise ValueError("transductive training needs the generator (use_combination)")
        L.LossConfig(self.eta, self.lambda_rec, self.rec_reduction)

    @property
    def loss_config(self):
        return L.LossConfig(self.eta, self.lambda_rec, self.rec_reduction)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]

    def to_json(self):
        return asdict(self)


# ---------------------------------------------------------------- Adam

class AdamState:
    def __init__(self, params):
        self.m = {p.node_id: np.zeros(p.shape) for p in params}
        self.v = {p.node_id: np.zeros(p.shape) for p in params}
        self.step = 0


def adam_step(params, grads, state, config):
    """One Adam update with bias correction, in place.

    ``grads`` is a sequence aligned with ``params``.  Raises
    :class:`TrainingError` naming the first parameter whose gradient is not
    finite, before anything is modified.
    """
    for p, g in zip(params, grads):
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for {p.name or p.node_id}")
    state.step += 1
    for p, g in zip(params, grads):
        kernels.adam_update(
            p.value.reshape(-1),
            np.ascontiguousarray(g, dtype=np.float64).reshape(-1),
            state.m[p.node_id].reshape(-1),
            state.v[p.node_id].reshape(-1),
            config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps,
            state.step,
        )
    return params, state


class Adam:
    def __init__(self, params, config):
        self.params = list(params)
        self.config = config
        self.state = AdamState(self.params)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        adam_step(self.params, [p.grad for p in self.params], self.state, self.config)


@contextlib.contextmanager
def frozen(params):
    """Temporarily exclude ``params`` from gradient recording."""
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, flag in zip(params, saved):
            p.requires_grad = flag


# ---------------------------------------------------------------- loop

@dataclass
class TrainResult:
    model: ModelBundle
    history: list


class _Trainer:
    def __init__(self, model, dataset, labels, embeddings, config, rng, unlabeled=None,
                 unseen_labels=(), phase=1, checkpoint_dir=None):
        self.model = model
        self.dataset = dataset
        self.config = config
        self.loss_config = config.loss_config
        self.rng = rng
        self.phase = phase
        self.checkpoint_dir = checkpoint_dir
        self.sampler = TripletSampler(dataset, labels, rng)
        label_list = sorted(set(self.sampler.classes) | set(unseen_labels))
        missing = [lab for lab in label_list if lab not in embeddings]
        if missing:
            raise MissingLabelError(missing)
        self.embed_index = {lab: i for i, lab in enumerate(label_list)}
        self.embed_matrix = embeddings.matrix(label_list)
        self.transductive = phase == 1 and config.transductive
        if self.transductive:
            if unlabeled is None or not len(unlabeled.domain_indices(Domain.SHAPE)) \
                    or not len(unlabeled.domain_indices(Domain.SKETCH)):
                raise ValueError("transductive training needs unlabeled features of both domains")
            if not unseen_labels:
                raise ValueError("transductive training needs at least one unseen label")
            self.unlabeled = unlabeled
            self.unl_a = unlabeled.features[unlabeled.domain_indices(Domain.SHAPE)]
            self.unl_b = unlabeled.features[unlabeled.domain_indices(Domain.SKETCH)]
            self.unseen_rows = np.array([self.embed_index[lab] for lab in sorted(unseen_labels)])
        labels_arr = dataset.labels
        self.row_embed = np.array(
            [self.embed_index.get(lab, -1) for lab in labels_arr], dtype=np.intp
        )
        gen_names = ("ei_a", "ei_b")
        if config.use_semantic or config.use_combination:
            gen_names += ("phi",)
        if config.use_combination:
            gen_names += ("es_a", "es_b", "gen")
        self.gen_params = model.parameters(gen_names)
        self.disc_params = model.parameters(ModelBundle.DISCRIMINATOR_SIDE)
        self.gen_opt = Adam(self.gen_params, config)
        self.disc_opt = Adam(self.disc_params, config) if config.use_combination else None
        if config.iterations_per_epoch:
            self.iterations = config.iterations_per_epoch
        else:
            self.iterations = max(1, math.ceil(len(self.sampler._anchors) / config.batch_size))

    def columns(self):
        cols = ["L_tri"]
        if self.config.use_semantic:
            cols.append("L_sem")
        if self.config.use_combination:
            cols += ["L_rec", "L_GAN_D", "L_GAN_G"]
        if self.transductive:
            cols += ["L_uGAN_D", "L_uGAN_G"]
        return cols + ["total"]

    def run(self, epochs):
        history = []
        for epoch in range(1, epochs + 1):
            sums = dict.fromkeys(self.columns(), 0.0)
            for it in range(1, self.iterations + 1):
                values = self.iteration()
                if not math.isfinite(values["total"]):
                    raise TrainingError(
                        f"non-finite total loss in phase {self.phase}, epoch {epoch}, iteration {it}"
                    )
                for key, val in values.items():
                    sums[key] += val
            row = {"epoch": epoch, **{k: v / self.iterations for k, v in sums.items()}}
            history.append(row)
            log.debug("phase %d epoch %d: %s", self.phase, epoch, row)
            every = self.config.checkpoint_every
            if self.checkpoint_dir is not None and every and epoch % every == 0:
                save_checkpoint(
                    self.model,
                    Path(self.checkpoint_dir) / f"phase{self.phase}_epoch{epoch:04d}.ckpt",
                    meta={"phase": self.phase, "epoch": epoch},
                )
        return history

    def iteration(self):
        cfg, model, ds = self.config, self.model, self.dataset
        a_idx, p_idx, n_idx = self.sampler.sample_indices(cfg.batch_size)
        feat_b = T.constant(ds.features[a_idx])
        feat_a = T.constant(ds.features[p_idx])
        feat_c = T.constant(ds.features[n_idx])
        word_pos = T.constant(self.embed_matrix[self.row_embed[a_idx]])
        word_neg = T.constant(self.embed_matrix[self.row_embed[n_idx]])
        if self.transductive:
            word_unseen = T.constant(
                self.embed_matrix[self.unseen_rows[self.rng.integers(0, len(self.unseen_rows), cfg.batch_size)]]
            )
            unl_a = T.constant(self.unl_a[self.rng.integers(0, len(self.unl_a), cfg.batch_size)])
            unl_b = T.constant(self.unl_b[self.rng.integers(0, len(self.unl_b), cfg.batch_size)])

        values = {}
        with T.Tape() as tape:
            code_a = encode(model, feat_a, Domain.SHAPE)
            code_b = encode(model, feat_b, Domain.SKETCH)
            code_c = encode(model, feat_c, Domain.SHAPE)
            parts = {"tri": L.triplet_loss(code_b.invariant, code_a.invariant, code_c.invariant,
                                           self.loss_config.eta)}
            if cfg.use_semantic:
                parts["sem"] = L.semantic_loss(code_a.semantic, code_b.semantic, code_c.semantic,
                                               word_pos, word_neg)
            if cfg.use_combination:
                rec_a = model.gen(T.concat_cols(code_a.semantic, code_a.specific))
                rec_b = model.gen(T.concat_cols(code_b.semantic, code_b.specific))
                rec_c = model.gen(T.concat_cols(code_c.semantic, code_c.specific))
                parts["rec"] = L.reconstruction_loss(rec_a, feat_a, rec_b, feat_b, rec_c, feat_c,
                                                     self.loss_config.rec_reduction)
                gen_a = model.gen(T.concat_cols(code_b.semantic, code_a.specific))
                gen_b = model.gen(T.concat_cols(code_a.semantic, code_b.specific))
                if self.transductive:
                    gen_ua = model.gen(T.concat_cols(word_unseen, code_a.specific))
                    gen_ub = model.gen(T.concat_cols(word_unseen, code_b.specific))

                for _ in range(cfg.d_steps_per_g_step):
                    d_vals = self._discriminator_step(feat_a, feat_b, gen_a, gen_b,
                                                      (unl_a, unl_b, gen_ua, gen_ub) if self.transductive else None)
                values.update(d_vals)
                with frozen(self.disc_params):
                    parts["gan"] = L.gan_loss_G(model, gen_a, gen_b)
                    if self.transductive:
                        parts["ugan"] = L.ugan_loss_G(model, gen_ua, gen_ub)
            total = L.total_loss(parts, self.loss_config, transductive=self.transductive)
            if not math.isfinite(total.item()):
                values["total"] = total.item()
                return values
            self.gen_opt.zero_grad()
            tape.backward(total)
        self.gen_opt.step()

        values["L_tri"] = parts["tri"].item()
        if "sem" in parts:
            values["L_sem"] = parts["sem"].item()
        if "rec" in parts:
            values["L_rec"] = parts["rec"].item()
            values["L_GAN_G"] = parts["gan"].item()
        if "ugan" in parts:
            values["L_uGAN_G"] = parts["ugan"].item()
        values["total"] = total.item()
        return values

    def _discriminator_step(self, feat_a, feat_b, gen_a, gen_b, unlabeled):
        model = self.model
        with T.Tape() as tape:
            loss_d = L.gan_loss_D(model, feat_a, feat_b, gen_a, gen_b)
            out = {"L_GAN_D": loss_d.item()}
            if unlabeled is not None:
                unl_a, unl_b, gen_ua, gen_ub = unlabeled
                loss_u = L.ugan_loss_D(model, unl_a, unl_b, gen_ua, gen_ub,
                                       wiring=self.config.ugan_wiring)
                out["L_uGAN_D"] = loss_u.item()
                loss_d = T.add(loss_d, loss_u)
            if not math.isfinite(loss_d.item()):
                raise TrainingError(f"non-finite discriminator loss in phase {self.phase}")
            self.disc_opt.zero_grad()
            tape.backward(loss_d)
        self.disc_opt.step()
        return out


def _rngs(seed):
    seq = np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in seq.spawn(4)]


def train_phase1(model, dataset, split, embeddings, config, unlabeled=None, checkpoint_dir=None):
    """Train ``model`` in place on the seen classes of ``dataset``.

    ``unlabeled`` holds unseen-class features for the transductive branch;
    their labels are stripped here and never read.
    """
    if unlabeled is not None:
        unlabeled = unlabeled.without_labels()
    rng = _rngs(config.seed)[0]
    trainer = _Trainer(
        model, dataset.filter(labels=split.seen), split.seen, embeddings, config, rng,
        unlabeled=unlabeled if config.transductive else None,
        unseen_labels=sorted(split.unseen) if config.transductive else (),
        phase=1, checkpoint_dir=checkpoint_dir,
    )
    return TrainResult(model, trainer.run(config.epochs_phase1))


def synthesize_unseen(model, embeddings, split, seen_dataset, config, rng=None):
    """Generate labelled unseen-class features from word embeddings.

    For each unseen label and domain, ``unseen_samples_per_class_per_domain``
    seen samples of that domain supply the specific features.
    """
    if rng is None:
        rng = _rngs(config.seed)[1]
    n = config.unseen_samples_per_class_per_domain
    labels = sorted(split.unseen)
    missing = [lab for lab in labels if lab not in embeddings]
    if missing:
        raise MissingLabelError(missing)
    records = []
    if n == 0:
        return records
    seen = seen_dataset.filter(labels=split.seen)
    for label in labels:
        word = np.repeat(embeddings[label].reshape(1, -1), n, axis=0)
        for domain in (Domain.SHAPE, Domain.SKETCH):
            pool = seen.domain_indices(domain)
            if not len(pool):
                raise ValueError(f"no seen samples of domain {domain.value} to condition on")
            picks = pool[rng.integers(0, len(pool), size=n)]
            specific = model.specific_encoder(domain)(T.constant(seen.features[picks]))
            out = model.gen(T.concat_cols(T.constant(word), specific)).value
            for k in range(n):
                records.append(FeatureRecord(f"gen_{label}_{domain.value}_{k:04d}", domain, label,
                                             out[k].copy(), generated=True))
    return records


def train_phase2_retrain(model, seen_dataset, synthetic_unseen, embeddings, config, split=None,
                         checkpoint_dir=None):
    """Retrain on real seen data plus generated unseen data.

    Phase-1 weights are continued unless ``config.reinit_phase2``.
    """
    if config.epochs_phase2 == 0:
        return TrainResult(model, [])
    synthetic_unseen = list(synthetic_unseen)
    if not synthetic_unseen:
        raise ValueError("phase 2 needs a non-empty synthetic unseen set")
    seen = seen_dataset.filter(labels=split.seen) if split is not None else seen_dataset
    union = seen + Dataset(synthetic_unseen)
    if config.reinit_phase2:
        model.init(config.seed + 1)
    rng = _rngs(config.seed)[2]
    trainer = _Trainer(model, union, union.label_set(), embeddings, config, rng, phase=2,
                       checkpoint_dir=checkpoint_dir)
    return TrainResult(model, trainer.run(config.epochs_phase2))


def write_history(history, path):
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("epoch",) + HISTORY_COLUMNS)
        for row in history:
            writer.writerow([row["epoch"]] + [repr(row[c]) if c in row else "" for c in HISTORY_COLUMNS])


def read_history(path):
    rows = []
    with Path(path).open(encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append({k: (int(v) if k == "epoch" else float(v)) for k, v in row.items() if v != ""})
    return rows
