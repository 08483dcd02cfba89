import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rsbm.prior import (LearnedPrior, PriorKind, gaussian_kl, make_train_sampler, sample_prior,
                        train_prior)
from rsbm.toy import default_tasks, generate_dataset


class ZeroRng:
    """Stand-in generator whose normal draws are all zero."""

    def standard_normal(self, shape):
        return np.zeros(shape)


def test_prior_kind_validation():
    assert PriorKind().variant == "learned"
    assert PriorKind().gaussian_scale == 10.0 and PriorKind().perturb_scale == 1.0
    with pytest.raises(ValueError):
        PriorKind("uniform")
    with pytest.raises(ValueError):
        PriorKind("gaussian", gaussian_scale=0.0)


def test_gaussian_zero_draw():
    out = sample_prior(PriorKind("gaussian"), np.zeros((3, 8)), rng=ZeroRng())
    assert out.shape == (3, 8, 2)
    np.testing.assert_array_equal(out, 0.0)


def test_perturbed_zero_scale_is_identity():
    a0 = np.random.default_rng(0).normal(size=(4, 8, 2))
    out = sample_prior(PriorKind("perturbed_gt", perturb_scale=0.0), np.zeros((4, 8)), a0,
                       np.random.default_rng(1))
    np.testing.assert_array_equal(out, a0)


def test_perturbed_needs_ground_truth():
    with pytest.raises(ValueError):
        sample_prior(PriorKind("perturbed_gt"), np.zeros((1, 8)), None, np.random.default_rng(0))
    with pytest.raises(ValueError):
        sample_prior(PriorKind("learned"), np.zeros((1, 8)), None, np.random.default_rng(0))


def test_perturbed_transport_distance():
    rng = np.random.default_rng(2)
    a0 = rng.normal(size=(20_000, 8, 2))
    pert = 0.7
    aT = sample_prior(PriorKind("perturbed_gt", perturb_scale=pert), np.zeros((20_000, 8)), a0, rng)
    sq = np.mean(np.sum((aT - a0) ** 2, axis=(1, 2)))
    assert sq == pytest.approx(16 * pert ** 2, rel=0.03)


def test_gaussian_scale():
    rng = np.random.default_rng(3)
    aT = sample_prior(PriorKind("gaussian"), np.zeros((20_000, 8)), rng=rng)
    assert aT.std() == pytest.approx(10.0, rel=0.01)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(0.01, 3.0))
def test_elbo_kl_nonnegative(seed, scale):
    rng = np.random.default_rng(seed)
    mean = scale * rng.normal(size=(4, 8))
    logvar = scale * rng.normal(size=(4, 8))
    assert np.all(gaussian_kl(mean, logvar) >= -1e-12)


def test_decoder_shape_and_architecture():
    lp = LearnedPrior().init(np.random.default_rng(0))
    assert lp.sample(np.zeros((5, 8)), np.random.default_rng(0)).shape == (5, 8, 2)
    assert lp.architecture() == {"horizon": 8, "context_dim": 8, "latent_dim": 8, "hidden": 64, "beta": 0.1}


def test_prior_gradient_finite_differences():
    rng = np.random.default_rng(4)
    lp = LearnedPrior(hidden=6, latent_dim=3, horizon=2, context_dim=3).init(rng)
    lp.params += 0.2 * rng.normal(size=lp.params.size)
    c = rng.normal(size=(5, 3))
    a0 = rng.normal(size=(5, 2, 2))
    noise = rng.normal(size=(5, 3))
    _, grad, _, _ = lp.loss_and_grad(c, a0, noise=noise)
    base = lp.params.copy()
    h = 1e-5
    for i in range(lp.params.size):
        lp.params[:] = base
        lp.params[i] += h
        up = lp.loss_and_grad(c, a0, noise=noise)[0]
        lp.params[i] -= 2 * h
        down = lp.loss_and_grad(c, a0, noise=noise)[0]
        fd = (up - down) / (2 * h)
        if abs(grad[i]) > 1e-8:
            assert abs(fd - grad[i]) / max(abs(fd), abs(grad[i])) < 1e-4
    lp.params[:] = base


def test_zero_epochs_unchanged():
    ds = generate_dataset(32, default_tasks(), np.random.default_rng(0))
    lp = LearnedPrior().init(np.random.default_rng(0))
    before = lp.params.copy()
    train_prior(lp, ds.context, ds.a0, 0, np.random.default_rng(0))
    np.testing.assert_array_equal(lp.params, before)


def test_memorises_a_single_trajectory():
    ds = generate_dataset(1, default_tasks(), np.random.default_rng(0))
    c = np.repeat(ds.context, 128, axis=0)
    a0 = np.repeat(ds.a0, 128, axis=0)
    lp = train_prior(LearnedPrior().init(np.random.default_rng(1)), c, a0, 150,
                     np.random.default_rng(2))
    recon = lp.sample_posterior(c, a0, np.random.default_rng(3))
    assert np.mean((recon - a0) ** 2) < 0.05


def test_learned_prior_beats_gaussian_draw():
    ds = generate_dataset(1200, default_tasks(), np.random.default_rng(5), hide_phase=True)
    train, test = ds.split(200)
    lp = train_prior(LearnedPrior().init(np.random.default_rng(0)), train.context, train.a0, 60,
                     np.random.default_rng(1))
    rng = np.random.default_rng(2)
    learned = sample_prior(PriorKind("learned"), test.context, rng=rng, learned=lp)
    gauss = sample_prior(PriorKind("gaussian"), test.context, rng=rng)
    assert np.mean((learned - test.a0) ** 2) < np.mean((gauss - test.a0) ** 2)


def test_train_sampler_variants():
    ds = generate_dataset(16, default_tasks(), np.random.default_rng(0))
    lp = LearnedPrior().init(np.random.default_rng(0))
    rng = np.random.default_rng(1)
    for kind in (PriorKind("gaussian"), PriorKind("perturbed_gt"), PriorKind("learned")):
        for posterior in (True, False):
            aT = make_train_sampler(kind, lp, posterior)(ds.context, ds.a0, rng)
            assert aT.shape == ds.a0.shape and np.all(np.isfinite(aT))
