"""Training objectives as taped scalars.

Batched inputs are ``(n, width)`` tensors, one triplet per row; every loss is
the batch mean of its per-row value and is returned as a ``1 x 1`` tensor.
Adversarial terms take discriminator logits and use ``log_sigmoid`` so the
log never sees a saturated probability.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .errors import ContractError
from .networks import discriminator_logits
from .data import Domain

UGAN_WIRINGS = ("corrected", "literal")
REC_REDUCTIONS = ("sum", "mean")


@dataclass(frozen=True)
class LossConfig:
    eta: float = 20.0
    lambda_rec: float = 10.0
    rec_reduction: str = "sum"

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if not self.lambda_rec >= 0:
            raise ValueError(f"lambda_rec must be non-negative, got {self.lambda_rec}")
        if self.rec_reduction not in REC_REDUCTIONS:
            raise ValueError(f"rec_reduction must be one of {REC_REDUCTIONS}, got {self.rec_reduction!r}")


def triplet_loss(anchor, positive, negative, eta):
    """Mean of ``max(|a - p| - |a - n| + eta, 0)`` over rows."""
    gap = T.sub(T.l2_distance(anchor, positive), T.l2_distance(anchor, negative))
    return T.mean(T.relu_max0(T.add(gap, T.constant(eta))))


def semantic_loss(sem_pos, sem_anchor, sem_neg, word_pos, word_neg):
    """``(1 - cos(E_A, w_A)) + (1 - cos(E_B, w_A)) + (1 - cos(E_C, w_C))`` per row.

    ``word_pos`` is the embedding of the anchor/positive class and
    ``word_neg`` that of the negative class.
    """
    cos = T.add(
        T.add(T.cosine_similarity(sem_pos, word_pos), T.cosine_similarity(sem_anchor, word_pos)),
        T.cosine_similarity(sem_neg, word_neg),
    )
    return T.sub(T.constant(3.0), T.mean(cos))


def reconstruction_loss(rec_a, feat_a, rec_b, feat_b, rec_c, feat_c, reduction="sum"):
    """Summed L1 error of the three reconstructions, batch mean.

    ``reduction="mean"`` divides each L1 distance by the feature width, which
    keeps the term on a similar scale to the others as the width grows.
    """
    if reduction not in REC_REDUCTIONS:
        raise ValueError(f"reduction must be one of {REC_REDUCTIONS}, got {reduction!r}")
    per_row = T.add(
        T.add(T.l1_distance(rec_b, feat_b), T.l1_distance(rec_a, feat_a)),
        T.l1_distance(rec_c, feat_c),
    )
    if reduction == "mean":
        per_row = T.scale(per_row, 1.0 / _width(feat_a))
    return T.mean(per_row)


def _width(x):
    return x.shape[1] if hasattr(x, "shape") and len(x.shape) == 2 else len(x)


# ---------------------------------------------------------------- adversarial

def discriminator_objective(real_a, fake_a, real_b, fake_b):
    """Negated GAN value function from discriminator logits.

    ``-(E log D(real) + E log(1 - D(fake)))`` summed over both domains, each
    expectation a mean over its own batch.
    """
    terms = [
        T.mean(T.log_sigmoid(real_a)),
        T.mean(T.log_sigmoid(T.scale(fake_a, -1.0))),
        T.mean(T.log_sigmoid(real_b)),
        T.mean(T.log_sigmoid(T.scale(fake_b, -1.0))),
    ]
    return T.scale(T.add(T.add(terms[0], terms[1]), T.add(terms[2], terms[3])), -1.0)


def generator_objective(fake_a, fake_b):
    """Non-saturating generator loss ``-(E log D_A(fake_a) + E log D_B(fake_b))``."""
    return T.scale(
        T.add(T.mean(T.log_sigmoid(fake_a)), T.mean(T.log_sigmoid(fake_b))), -1.0
    )


def gan_loss_D(model, feat_a, feat_b, gen_a, gen_b):
    """Discriminator loss; generated inputs are detached from the generator."""
    return discriminator_objective(
        discriminator_logits(model, Domain.SHAPE, feat_a),
        discriminator_logits(model, Domain.SHAPE, _detach(gen_a)),
        discriminator_logits(model, Domain.SKETCH, feat_b),
        discriminator_logits(model, Domain.SKETCH, _detach(gen_b)),
    )


def gan_loss_G(model, gen_a, gen_b):
    return generator_objective(
        discriminator_logits(model, Domain.SHAPE, gen_a),
        discriminator_logits(model, Domain.SKETCH, gen_b),
    )


def ugan_loss_D(model, unl_a, unl_b, gen_a, gen_b, wiring="corrected", transductive=True):
    """Discriminator loss against unlabeled unseen-class features.

    With ``wiring="corrected"`` each discriminator sees its own domain's
    unlabeled features; ``"literal"`` swaps them (shape discriminator gets
    sketches and vice versa).
    """
    _check_mode(transductive, wiring)
    real_for_a, real_for_b = (unl_a, unl_b) if wiring == "corrected" else (unl_b, unl_a)
    return discriminator_objective(
        discriminator_logits(model, Domain.SHAPE, real_for_a),
        discriminator_logits(model, Domain.SHAPE, _detach(gen_a)),
        discriminator_logits(model, Domain.SKETCH, real_for_b),
        discriminator_logits(model, Domain.SKETCH, _detach(gen_b)),
    )


def ugan_loss_G(model, gen_a, gen_b, transductive=True):
    _check_mode(transductive, "corrected")
    return gan_loss_G(model, gen_a, gen_b)


def _check_mode(transductive, wiring):
    if not transductive:
        raise ContractError("the unlabeled-data adversarial loss is only defined in transductive mode")
    if wiring not in UGAN_WIRINGS:
        raise ValueError(f"ugan wiring must be one of {UGAN_WIRINGS}, got {wiring!r}")


def _detach(x):
    return x.detach() if isinstance(x, T.Tensor) else x


# ---------------------------------------------------------------- total

LOSS_TERMS = ("tri", "sem", "rec", "gan", "ugan")


def total_loss(parts, config, transductive=False):
    """``tri + sem + lambda_rec * rec + gan (+ ugan)``; missing parts count as 0.

    ``ugan`` is only added when ``transductive`` is true.
    """
    unknown = set(parts) - set(LOSS_TERMS)
    if unknown:
        raise KeyError(f"unknown loss terms: {sorted(unknown)}")
    total = T.constant(0.0)
    for name in LOSS_TERMS:
        if name not in parts or parts[name] is None:
            continue
        if name == "ugan" and not transductive:
            continue
        term = parts[name]
        if not isinstance(term, T.Tensor):
            term = T.constant(float(term))
        if name == "rec":
            term = T.scale(term, config.lambda_rec)
        total = T.add(total, term)
    return total
