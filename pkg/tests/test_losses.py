import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ddgan import losses as L
from ddgan import tensor as T
from ddgan.errors import ContractError, DegenerateInputError, DimensionError
from ddgan.gradcheck import max_relative_error
from ddgan.networks import ModelBundle

c = T.constant
LN2 = math.log(2.0)


def fixed_discriminators(config, p_a, p_b=None):
    """Bundle whose discriminators output ``p`` for every input."""
    model = ModelBundle(config, seed=0)
    for net, p in ((model.disc_a, p_a), (model.disc_b, p_a if p_b is None else p_b)):
        for w, b in net.layers:
            w.value[...] = 0.0
            b.value[...] = 0.0
        net.layers[-1][1].value[...] = math.log(p / (1 - p))
    return model


class TestTriplet:
    def test_boundary_of_hinge(self):
        assert L.triplet_loss(c([[0.0, 0.0]]), c([[0.0, 0.0]]), c([[20.0, 0.0]]), 20.0).item() == 0.0

    def test_collapsed(self):
        x = c([[1.0, 2.0, 3.0]])
        assert L.triplet_loss(x, x, x, 20.0).item() == 20.0

    def test_hand_distances(self):
        assert L.triplet_loss(c([[0.0, 0.0]]), c([[3.0, 4.0]]), c([[6.0, 8.0]]), 2.0).item() == 0.0
        assert L.triplet_loss(c([[0.0, 0.0]]), c([[6.0, 8.0]]), c([[3.0, 4.0]]), 2.0).item() == pytest.approx(7.0)

    def test_negative_distance_enters_with_minus_sign(self):
        a, p = c([[0.0, 0.0]]), c([[1.0, 0.0]])
        near = L.triplet_loss(a, p, c([[2.0, 0.0]]), 5.0).item()
        far = L.triplet_loss(a, p, c([[3.0, 0.0]]), 5.0).item()
        assert near == pytest.approx(4.0) and far == pytest.approx(3.0)

    def test_batch_mean(self):
        a = c([[0.0], [0.0]])
        assert L.triplet_loss(a, c([[0.0], [0.0]]), c([[1.0], [30.0]]), 20.0).item() == pytest.approx(9.5)

    def test_deadzone_gradients_are_exactly_zero(self, rng):
        a, p = T.parameter(rng.standard_normal((4, 3))), T.parameter(rng.standard_normal((4, 3)))
        n = T.parameter(a.value + 100.0)
        with T.Tape() as tape:
            loss = L.triplet_loss(a, p, n, 20.0)
            tape.backward(loss)
        assert loss.item() == 0.0
        for leaf in (a, p, n):
            assert not np.any(leaf.grad)


class TestSemantic:
    def test_perfect_alignment(self):
        w_a, w_c = c([[1.0, 2.0]]), c([[-3.0, 1.0]])
        assert L.semantic_loss(w_a, w_a, w_c, w_a, w_c).item() == pytest.approx(0.0, abs=1e-15)

    def test_orthogonal(self):
        w_a, w_c = c([[1.0, 0.0]]), c([[0.0, 1.0]])
        assert L.semantic_loss(c([[0.0, 2.0]]), c([[0.0, -1.0]]), c([[5.0, 0.0]]), w_a, w_c).item() == 3.0

    def test_hand_cosine(self):
        w_a, w_c = c([[1.0, 0.0]]), c([[0.0, 1.0]])
        value = L.semantic_loss(w_a, c([[1.0, 1.0]]), w_c, w_a, w_c).item()
        assert value == pytest.approx(1 - 1 / math.sqrt(2), abs=1e-12)

    def test_anchor_uses_positive_class_embedding(self):
        w_a, w_c = c([[1.0, 0.0]]), c([[0.0, 1.0]])
        assert L.semantic_loss(w_a, w_c, w_c, w_a, w_c).item() == pytest.approx(1.0)

    def test_zero_vector_rejected(self):
        w = c([[1.0, 0.0]])
        with pytest.raises(DegenerateInputError):
            L.semantic_loss(c([[0.0, 0.0]]), w, w, w, w)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(1e-3, 1e3), st.integers(0, 2))
    def test_scale_invariance(self, factor, which):
        rng = np.random.default_rng(7)
        e = [rng.standard_normal((3, 4)) for _ in range(3)]
        w_a, w_c = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
        base = L.semantic_loss(*map(c, e), c(w_a), c(w_c)).item()
        e[which] = e[which] * factor
        assert L.semantic_loss(*map(c, e), c(w_a), c(w_c)).item() == pytest.approx(base, abs=1e-12)


class TestReconstruction:
    def test_perfect(self):
        f = c(np.ones((1, 4)))
        assert L.reconstruction_loss(f, f, f, f, f, f).item() == 0.0

    def test_offset_by_one(self):
        f = np.arange(4.0).reshape(1, 4)
        r = c(f + 1)
        assert L.reconstruction_loss(r, c(f), r, c(f), r, c(f)).item() == 12.0

    def test_only_negative_off(self):
        f = c(np.zeros((1, 4)))
        assert L.reconstruction_loss(f, f, f, f, c([[2.0, 0, 0, 0]]), f).item() == 2.0

    def test_mean_reduction_divides_by_width(self):
        f = np.zeros((1, 4))
        r = c(f + 1)
        assert L.reconstruction_loss(r, c(f), r, c(f), r, c(f), reduction="mean").item() == 3.0

    def test_width_mismatch(self):
        with pytest.raises(DimensionError):
            L.reconstruction_loss(c(np.zeros((1, 4))), c(np.zeros((1, 3))),
                                  c(np.zeros((1, 4))), c(np.zeros((1, 4))),
                                  c(np.zeros((1, 4))), c(np.zeros((1, 4))))

    def test_unknown_reduction(self):
        f = c(np.zeros((1, 2)))
        with pytest.raises(ValueError):
            L.reconstruction_loss(f, f, f, f, f, f, reduction="max")


class TestAdversarial:
    def test_half_probability_discriminator(self, tiny_config, rng):
        model = fixed_discriminators(tiny_config, 0.5)
        x = [rng.standard_normal((5, 6)) for _ in range(4)]
        assert L.gan_loss_D(model, *x).item() == pytest.approx(4 * LN2, abs=1e-12)
        assert L.gan_loss_G(model, x[0], x[1]).item() == pytest.approx(2 * LN2, abs=1e-12)
        assert L.ugan_loss_D(model, *x).item() == pytest.approx(4 * LN2, abs=1e-12)
        assert L.ugan_loss_G(model, x[0], x[1]).item() == pytest.approx(2 * LN2, abs=1e-12)

    def test_clamp_floor(self):
        hi = math.log((1 - 1e-7) / 1e-7)
        value = L.discriminator_objective(c([[hi]]), c([[-hi]]), c([[hi]]), c([[-hi]])).item()
        assert value == pytest.approx(4e-7, rel=1e-6)

    def test_identical_real_and_fake(self, tiny_config, rng):
        model = fixed_discriminators(tiny_config, 0.3, 0.8)
        u_a, u_b = rng.standard_normal((4, 6)), rng.standard_normal((4, 6))
        expected = -(math.log(0.3) + math.log(0.7)) - (math.log(0.8) + math.log(0.2))
        assert L.ugan_loss_D(model, u_a, u_b, u_a, u_b).item() == pytest.approx(expected, abs=1e-12)

    def test_saturated_logits_stay_finite(self):
        big = c([[800.0]])
        assert math.isfinite(L.discriminator_objective(big, big, big, big).item())
        assert math.isfinite(L.generator_objective(c([[-800.0]]), c([[-800.0]])).item())

    def test_each_term_is_its_own_mean(self):
        real = c([[0.0], [0.0]])
        fake = c([[0.0]])
        assert L.discriminator_objective(real, fake, real, fake).item() == pytest.approx(4 * LN2)

    def test_discriminator_loss_does_not_reach_generator(self, tiny_model, rng):
        fake = T.parameter(rng.standard_normal((3, 6)))
        with T.Tape() as tape:
            loss = L.gan_loss_D(tiny_model, rng.standard_normal((3, 6)), rng.standard_normal((3, 6)),
                                fake, fake)
            tape.backward(loss)
        assert not np.any(fake.grad)

    def test_literal_wiring_swaps_reals(self, tiny_model, rng):
        u_a, u_b, g_a, g_b = (rng.standard_normal((3, 6)) for _ in range(4))
        literal = L.ugan_loss_D(tiny_model, u_a, u_b, g_a, g_b, wiring="literal").item()
        swapped = L.ugan_loss_D(tiny_model, u_b, u_a, g_a, g_b, wiring="corrected").item()
        assert literal == swapped

    def test_inductive_mode_contract(self, tiny_model):
        x = np.zeros((1, 6))
        with pytest.raises(ContractError):
            L.ugan_loss_D(tiny_model, x, x, x, x, transductive=False)
        with pytest.raises(ContractError):
            L.ugan_loss_G(tiny_model, x, x, transductive=False)

    def test_unknown_wiring(self, tiny_model):
        x = np.zeros((1, 6))
        with pytest.raises(ValueError):
            L.ugan_loss_D(tiny_model, x, x, x, x, wiring="sideways")


class TestTotal:
    cfg = L.LossConfig()

    def test_all_zero(self):
        assert L.total_loss({n: 0.0 for n in L.LOSS_TERMS}, self.cfg, transductive=True).item() == 0.0

    def test_rec_weight(self):
        assert L.total_loss({"rec": 1.0, "tri": 0.0}, self.cfg).item() == 10.0

    def test_all_ones(self):
        assert L.total_loss({n: 1.0 for n in L.LOSS_TERMS}, self.cfg, transductive=True).item() == 14.0

    def test_ugan_skipped_when_inductive(self):
        assert L.total_loss({n: 1.0 for n in L.LOSS_TERMS}, self.cfg, transductive=False).item() == 13.0

    def test_unknown_term(self):
        with pytest.raises(KeyError):
            L.total_loss({"style": 1.0}, self.cfg)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            L.LossConfig(eta=0)
        with pytest.raises(ValueError):
            L.LossConfig(lambda_rec=-1)
        with pytest.raises(ValueError):
            L.LossConfig(rec_reduction="median")


finite = arrays(np.float64, (3, 4), elements=st.floats(-50, 50, allow_nan=False))


@settings(max_examples=60, deadline=None)
@given(finite, finite, finite, finite, finite, st.floats(0.1, 30))
def test_non_negative(a, b, n, w1, w2, eta):
    assert L.triplet_loss(c(a), c(b), c(n), eta).item() >= 0
    assert L.reconstruction_loss(c(a), c(b), c(b), c(n), c(n), c(a)).item() >= 0
    assert L.discriminator_objective(c(a[:, :1]), c(b[:, :1]), c(n[:, :1]), c(w1[:, :1])).item() >= 0
    assert L.generator_objective(c(a[:, :1]), c(b[:, :1])).item() >= 0
    vectors = [a, b, n, w1, w2]
    if all(np.all(np.linalg.norm(v, axis=1) > 1e-6) for v in vectors):
        assert L.semantic_loss(*map(c, vectors)).item() >= -1e-12


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 10), st.floats(0.01, 5))
def test_triplet_is_monotone_in_negative_distance(d, extra):
    a, p = c([[0.0, 0.0]]), c([[3.0, 0.0]])
    near = L.triplet_loss(a, p, c([[0.0, d]]), 20.0).item()
    far = L.triplet_loss(a, p, c([[0.0, d + extra]]), 20.0).item()
    assert far <= near


# ---------------------------------------------------------------- gradients

def _leaves(rng, *shapes):
    return [T.parameter(rng.standard_normal(s)) for s in shapes]


@pytest.mark.parametrize("seed", range(3))
def test_gradients_triplet(seed):
    rng = np.random.default_rng(seed)
    leaves = _leaves(rng, (4, 5), (4, 5), (4, 5))
    assert max_relative_error(lambda: L.triplet_loss(*leaves, 3.0), leaves) < 1e-4


@pytest.mark.parametrize("seed", range(3))
def test_gradients_semantic(seed):
    rng = np.random.default_rng(seed)
    leaves = _leaves(rng, *[(4, 5)] * 5)
    assert max_relative_error(lambda: L.semantic_loss(*leaves), leaves) < 1e-4


@pytest.mark.parametrize("reduction", L.REC_REDUCTIONS)
def test_gradients_reconstruction(reduction):
    rng = np.random.default_rng(0)
    leaves = _leaves(rng, *[(3, 6)] * 6)
    assert max_relative_error(lambda: L.reconstruction_loss(*leaves, reduction=reduction), leaves) < 1e-4


def test_gradients_adversarial(tiny_model, rng):
    feats = _leaves(rng, *[(3, 6)] * 4)
    disc = tiny_model.parameters(ModelBundle.DISCRIMINATOR_SIDE)
    assert max_relative_error(lambda: L.gan_loss_D(tiny_model, *feats), disc + feats[:2]) < 1e-4
    assert max_relative_error(lambda: L.ugan_loss_D(tiny_model, *feats), disc + feats[0:2]) < 1e-4
    assert max_relative_error(lambda: L.gan_loss_G(tiny_model, feats[2], feats[3]), feats[2:]) < 1e-4
    assert max_relative_error(lambda: L.ugan_loss_G(tiny_model, feats[2], feats[3]), feats[2:]) < 1e-4


def test_gradients_total(rng):
    leaves = _leaves(rng, *[(1, 1)] * 5)
    parts = lambda: dict(zip(L.LOSS_TERMS, [T.mul(x, x) for x in leaves]))  # noqa: E731
    assert max_relative_error(lambda: L.total_loss(parts(), L.LossConfig(), transductive=True), leaves) < 1e-4
