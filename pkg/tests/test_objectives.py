import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from disbench import autodiff as ad
from disbench import objectives as O
from disbench.errors import ConfigurationError, UsageError
from disbench.vae import Discriminator, ModelConfig, VaeModel, vae_loss

from _util import OBJECTIVES, objective_gradient_error

small = st.floats(-3, 3, allow_nan=False)
T = ad.tensor


def test_paper_grids():
    assert O.PAPER_GRIDS["beta_vae"] == (1, 2, 4, 6, 8, 16)
    assert O.PAPER_GRIDS["annealed_vae"] == (5, 10, 25, 50, 75, 100)
    assert O.PAPER_GRIDS["factor_vae"] == (10, 20, 30, 40, 50, 100)
    assert O.PAPER_GRIDS["dip_vae_i"] == O.PAPER_GRIDS["dip_vae_ii"] == (1, 2, 5, 10, 20, 50)
    assert O.PAPER_GRIDS["beta_tcvae"] == (1, 2, 4, 6, 8, 10)
    assert O.ANNEALED_GAMMA == 1000


def test_derived_constants():
    assert O.ObjectiveConfig("dip_vae_i", 5).lambda_d == 50
    assert O.ObjectiveConfig("dip_vae_ii", 5).lambda_d == 5
    assert O.ObjectiveConfig("annealed_vae", 5).threshold_for(300_000) == 100_000
    assert O.ObjectiveConfig("annealed_vae", 5).threshold_for(5000) == 1667
    with pytest.raises(ConfigurationError):
        O.ObjectiveConfig("vanilla", 1)
    cfg = O.ObjectiveConfig("annealed_vae", 25, iteration_threshold=10)
    assert O.ObjectiveConfig.from_dict(cfg.to_dict()) == cfg


def test_kl_closed_forms():
    assert O.kl_term(T([[0.0]]), T([[0.0]])).item() == 0.0
    assert O.kl_term(T([[1.0]]), T([[0.0]])).item() == 0.5


@given(arrays(np.float64, (4, 3), elements=small), arrays(np.float64, (4, 3), elements=small))
def test_kl_nonnegative(mean, logvar):
    assert O.kl_term(T(mean), T(logvar)).item() >= -1e-12


def test_recon_closed_forms_and_gradient():
    assert O.recon_nll(T([[0.0]]), np.array([[1.0]])).item() == pytest.approx(math.log(2))
    assert O.recon_nll(T([[800.0]]), np.array([[1.0]])).item() == pytest.approx(0.0)
    logits = ad.parameter(np.array([[0.3, -1.2, 2.0]]))
    x = np.array([[1.0, 0.0, 0.5]])
    (g,) = ad.gradients(O.recon_nll(logits, x), [logits])
    np.testing.assert_allclose(g, 1 / (1 + np.exp(-logits.data)) - x)


@given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)), arrays(np.float64, (3, 5), elements=st.integers(0, 1).map(float)))
def test_recon_nonnegative_for_binary_targets(logits, x):
    assert O.recon_nll(T(logits), x).item() >= 0


def test_beta_and_annealed_arithmetic():
    assert O.beta_vae_loss(T(10.0), T(2.0), 4).item() == 18
    assert O.beta_vae_loss(T(10.0), T(2.0), 0).item() == 10
    assert O.annealed_capacity(0, 50, 100) == 0
    assert O.annealed_capacity(50, 50, 100) == 25
    assert O.annealed_capacity(500, 50, 100) == 50
    assert O.annealed_vae_loss(T(3.0), T(2.0), 0, 50, 1000, 100).item() == 2003
    assert O.annealed_vae_loss(T(3.0), T(25.0), 50, 50, 1000, 100).item() == 3
    with pytest.raises(UsageError):
        O.annealed_capacity(1, 5, 0)


def test_reparameterize_zero_noise_is_mean():
    mean = np.array([[0.3, -2.0]])
    z = O.reparameterize(T(mean), T([[1.0, -4.0]]), T(np.zeros((1, 2))))
    np.testing.assert_array_equal(z.data, mean)


def test_shuffle_preserves_columns_and_breaks_pairing():
    rng = np.random.default_rng(0)
    col = rng.normal(size=64)
    z = np.stack([col, col], axis=1)
    out = O.shuffle_dims(z, rng)
    for j in range(2):
        np.testing.assert_array_equal(np.sort(out[:, j]), np.sort(z[:, j]))
    assert abs(np.corrcoef(out.T)[0, 1]) < 0.3


def test_discriminator_with_zero_head_gives_zero_tc():
    rng = np.random.default_rng(0)
    disc = Discriminator(3, (8,), rng)
    disc.params[-2].data[...] = 0.0
    z = T(rng.normal(size=(6, 3)))
    assert O.density_ratio_tc(disc(z, frozen=True)).item() == 0.0


def test_discriminator_loss_on_identical_rows_is_ln2():
    logits = T(np.zeros((5, 2)))
    assert O.discriminator_loss(logits, logits).item() == pytest.approx(math.log(2))


def test_factor_vae_tc_flows_through_z_only():
    rng = np.random.default_rng(0)
    model = VaeModel(6, ModelConfig(latent_dim=2, hidden=(4,)), rng)
    disc = Discriminator(2, (4,), rng)
    x = rng.uniform(size=(5, 6))
    loss, _, _ = vae_loss(model, O.ObjectiveConfig("factor_vae", 10), x, rng.normal(size=(5, 2)), discriminator=disc)
    grads = ad.gradients(loss, disc.params)
    assert all(not g.any() for g in grads)


def test_tcvae_beta_one_equals_elbo_and_beta_vae():
    rng = np.random.default_rng(0)
    model = VaeModel(8, ModelConfig(latent_dim=3, hidden=(6,)), rng)
    x, noise = rng.uniform(size=(7, 8)), rng.normal(size=(7, 3))
    a = vae_loss(model, O.ObjectiveConfig("beta_vae", 1), x, noise)[2]
    b = vae_loss(model, O.ObjectiveConfig("beta_tcvae", 1), x, noise)[2]
    assert a["loss"] == b["loss"] == pytest.approx(a["recon"] + a["kl"])


def test_tc_single_dimension_is_zero_and_stable():
    rng = np.random.default_rng(0)
    z = T(rng.normal(size=(4, 1)))
    assert O.total_correlation_mws(z, z, T(np.zeros((4, 1))), 100).item() == 0.0
    mean = T(np.zeros((2, 3)))
    logvar = T(np.full((2, 3), -30.0))
    tc = O.total_correlation_mws(mean, mean, logvar, 1000).item()
    assert math.isfinite(tc)
    with pytest.raises(UsageError):
        O.total_correlation_mws(T(np.zeros((1, 2))), T(np.zeros((1, 2))), T(np.zeros((1, 2))), 10)


def test_dip_penalty_examples():
    # Mean batch with covariance diag(2, 2).
    mean = T(np.array([[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]]) * math.sqrt(2))
    zero_logvar = T(np.zeros((4, 2)))
    assert O.dip_vae_penalty(mean, zero_logvar, "i", 1, 10).item() == pytest.approx(20.0)
    unit = T(np.array([[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]]))
    assert O.dip_vae_penalty(unit, zero_logvar, "i", 3, 30).item() == pytest.approx(0.0)
    tiny = T(np.full((4, 2), -80.0))
    assert O.dip_vae_penalty(mean, tiny, "ii", 1, 10).item() == pytest.approx(
        O.dip_vae_penalty(mean, tiny, "i", 1, 10).item())
    with pytest.raises(UsageError):
        O.dip_vae_penalty(T(np.zeros((1, 2))), T(np.zeros((1, 2))), "i", 1, 1)


@given(arrays(np.float64, (5, 3), elements=small), arrays(np.float64, (5, 3), elements=small),
       st.sampled_from(["i", "ii"]))
def test_dip_penalty_nonnegative(mean, logvar, mode):
    assert O.dip_vae_penalty(T(mean), T(logvar), mode, 2.0, 5.0).item() >= 0


@pytest.mark.parametrize("kind", OBJECTIVES)
def test_objective_gradients_match_finite_differences(kind):
    assert objective_gradient_error(kind, seed=0) < 1e-4
