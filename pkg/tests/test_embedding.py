import math

import numpy as np
import pytest
from helpers import LOSS_COMPONENTS, feature_row_masks, loss_gradient_error
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.base import clone

from normball.cohort import STATE_DIM, Outcome, PatientTrajectory
from normball.embedding import (
    DenoisingAutoencoder,
    EmbeddingModel,
    LossConfig,
    NormedEmbedding,
    PlainTripletEmbedding,
    SamplingError,
    StateIndex,
    batch_components,
    config_hash,
    corrupt,
    cosine_loss,
    loss_components,
    loss_contrastive,
    loss_intermediate,
    loss_terminal,
    sample_triplet_batch,
    total_loss,
    train,
)
from normball.numerics import Tape, backward

TINY = dict(hidden_dim=8, num_layers=2, gru_hidden_dim=4, gru_layers=1, horizon=3)


def vec_with_d(d, dim=3):
    v = np.zeros(dim)
    v[0] = math.sqrt(d)
    return v


def toy_patient(pid, died, T=6, level=0.0, seed=0):
    rng = np.random.default_rng(seed)
    states = rng.normal(level, 1.0, size=(T, STATE_DIM))
    states[:, 10:15] = 0
    return PatientTrajectory(pid, states, np.zeros((T, 2), dtype=int), Outcome.DEATH if died else Outcome.RELEASE)


# ---------------------------------------------------------------- loss examples

@pytest.mark.trivial
@pytest.mark.parametrize("death,d,expected", [(True, 1.0, 0.0), (False, 0.0, 0.0), (True, 0.64, 0.1296)])
def test_terminal_loss_examples(death, d, expected):
    assert loss_terminal(vec_with_d(d), death, 0.7).item() == pytest.approx(expected, abs=1e-12)


def test_terminal_loss_release_scales_with_lambda1():
    assert loss_terminal(vec_with_d(0.5), Outcome.RELEASE, 0.7).item() == pytest.approx(0.35, abs=1e-12)


@pytest.mark.trivial
def test_triplet_loss_examples():
    from normball.embedding import triplet_loss
    a = np.zeros(3)
    assert triplet_loss(a, a, np.array([0.5, 0, 0]), 0.2).item() == 0.0
    assert triplet_loss(a, np.array([0.3, 0, 0]), np.array([0, 0.1, 0]), 0.2).item() == pytest.approx(0.4, abs=1e-12)
    p = np.array([0.1, 0.2, -0.2])
    assert triplet_loss(a, p, a, 0.2).item() == pytest.approx(0.3 + 0.2, abs=1e-12)


@pytest.mark.trivial
def test_cosine_loss_examples():
    a = np.array([0.3, 0.4, 0.0])
    assert cosine_loss(a, a, 1, "standard").item() == pytest.approx(0.0, abs=1e-12)
    assert cosine_loss(np.array([1.0, 0, 0]), np.array([0, 1.0, 0]), 0, "standard", 0.05).item() == 0.0
    u = np.array([0.6, 0.8, 0.0])
    assert cosine_loss(u, u, 0, "inner_product").item() == pytest.approx(1.0, abs=1e-12)
    assert cosine_loss(u, u, 1, "inner_product").item() == 0.0


def test_cosine_standard_rejects_zero_embedding():
    with pytest.raises(ZeroDivisionError):
        cosine_loss(np.zeros(3), np.ones(3), 1, "standard")
    with pytest.raises(ValueError):
        cosine_loss(np.ones(3), np.ones(3), 1, "bogus")


@pytest.mark.trivial
def test_contrastive_examples():
    from normball.embedding import triplet_loss
    cfg = LossConfig()
    rng = np.random.default_rng(0)
    a, p, n = rng.normal(size=(3, 3)) * 0.3
    assert loss_contrastive(a, p, n, False, 0, cfg).item() == pytest.approx(triplet_loss(a, p, n, 0.2).item(), abs=1e-15)
    assert loss_contrastive(a, a, n, True, 1, cfg).item() == pytest.approx(0.0, abs=1e-12)
    u = np.array([0.0, 0.6, 0.8])
    assert loss_contrastive(u, -u, n, True, 0, cfg).item() == 0.0


def test_contrastive_dispatch_is_exhaustive():
    from normball.embedding import triplet_loss
    cfg = LossConfig()
    rng = np.random.default_rng(1)
    a, p, n = (rng.normal(size=(6, 3)) * 0.4 for _ in range(3))
    death = np.array([True, False, True, False, False, True])
    y = np.array([1, 0, 0, 0, 0, 1])
    per_row = loss_contrastive(a, p, n, death, y, cfg, reduction="none").data
    rel = triplet_loss(a, p, n, 0.2, reduction="none").data
    dead = cosine_loss(a, p, y, "standard", 0.05, reduction="none").data
    assert np.allclose(per_row, np.where(death, dead, rel), atol=1e-15, rtol=0)


@pytest.mark.trivial
def test_intermediate_examples():
    quiet = LossConfig(alpha=0.0, lambda3=0.0, lambda4=0.0)
    inside = np.full((4, 3), 0.5)
    assert loss_intermediate(inside, inside, inside, [True, False, True, False], quiet).item() == 0.0
    got = loss_intermediate(vec_with_d(1.2), vec_with_d(0.1), vec_with_d(0.3), True, LossConfig()).item()
    assert got == pytest.approx(10 * 1.2 + 0.2 * math.exp(-3.6) + 0.05 * 0.1, abs=1e-12)
    got = loss_intermediate(vec_with_d(0.4), np.zeros(3), np.zeros(3), False, LossConfig(lambda4=0.0)).item()
    assert got == pytest.approx(0.2, abs=1e-12)


def test_intermediate_release_target_flag():
    p, n, a = vec_with_d(0.3), vec_with_d(0.0), vec_with_d(0.5)
    base = LossConfig(lambda3=0.0)
    assert loss_intermediate(p, n, a, False, base).item() == pytest.approx(0.05 * 0.5, abs=1e-12)
    alt = base.replace(lambda4_release_target="positive")
    assert loss_intermediate(p, n, a, False, alt).item() == pytest.approx(0.05 * 0.3, abs=1e-12)


@pytest.mark.trivial
def test_total_single_triplet_is_sum_of_components():
    cfg = LossConfig()
    a, p, n = vec_with_d(0.7), np.array([0.2, 0.5, 0.1]), np.array([0.4, -0.1, 0.3])
    for death, y in ((True, 1), (True, 0), (False, 0)):
        expected = (cfg.beta * loss_terminal(a, death, cfg.lambda1).item()
                    + (1 - cfg.beta) * loss_contrastive(a, p, n, death, y, cfg).item()
                    + loss_intermediate(p, n, a, death, cfg).item())
        assert total_loss(a, p, n, death, y, cfg).item() == pytest.approx(expected, abs=1e-12)


def _grads(cfg, a, p, n, death, y):
    tape = Tape()
    w = tape.watch({"a": a, "p": p, "n": n})
    parts = loss_components(w["a"], w["p"], w["n"], death, y, cfg)
    return parts, w, tape


@pytest.mark.trivial
def test_beta_one_contrastive_has_no_gradient():
    rng = np.random.default_rng(2)
    a, p, n = (rng.normal(size=(5, 3)) * 0.4 for _ in range(3))
    death = np.array([True, False, True, False, True])
    y = np.array([1, 0, 0, 0, 1])
    parts, w, tape = _grads(LossConfig(beta=1.0), a, p, n, death, y)
    grads = backward(tape, parts["contrastive"])
    assert all(np.all(g == 0.0) for g in grads.values())


def test_beta_zero_terminal_weightless():
    rng = np.random.default_rng(3)
    a, p, n = (rng.normal(size=(4, 3)) * 0.6 for _ in range(3))
    death = np.array([True, False, True, False])
    cfg = LossConfig(beta=0.0)
    parts = loss_components(a, p, n, death, np.zeros(4), cfg)
    assert parts["terminal"].item() == 0.0
    assert parts["intermediate"].item() > 0.0


def test_beta_one_terminal_path_independent():
    rng = np.random.default_rng(4)
    a, p, n = (rng.normal(size=(4, 3)) * 0.5 for _ in range(3))
    death = np.array([True, False, False, True])
    cfg = LossConfig(beta=1.0)
    before = loss_components(a, p, n, death, np.ones(4), cfg)["terminal"].item()
    after = loss_components(a, p + 0.3, n - 0.2, death, np.ones(4), cfg)["terminal"].item()
    assert before == after


finite_rows = arrays(np.float64, (3, 3), elements=st.floats(-1.5, 1.5, allow_nan=False))


@settings(max_examples=60, deadline=None)
@given(a=finite_rows, p=finite_rows, n=finite_rows,
       death=arrays(np.bool_, (3,)), y=arrays(np.int64, (3,), elements=st.integers(0, 1)),
       beta=st.floats(0, 1))
def test_losses_nonnegative(a, p, n, death, y, beta):
    # the standard cosine needs nonzero rows
    p = np.where(np.linalg.norm(p, axis=1, keepdims=True) > 1e-6, p, 0.5)
    a = np.where(np.linalg.norm(a, axis=1, keepdims=True) > 1e-6, a, 0.5)
    parts = loss_components(a, p, n, death, y, LossConfig(beta=beta))
    for name, value in parts.items():
        assert value.item() >= 0.0, name


def test_inner_product_variant_can_be_negative():
    u = np.array([0.6, 0.8, 0.0])
    assert cosine_loss(u, -u, 0, "inner_product").item() < 0.0


@pytest.mark.parametrize("encoder", ["mlp", "gru"])
def test_gradient_checks_cover_every_entry_over_twenty_seeds(encoder):
    params = EmbeddingModel.create(encoder, 3, 4, 2, 2, 1, 2, rng=np.random.default_rng(0)).params
    covered = {k: np.zeros(v.shape, dtype=bool) for k, v in params.items()}
    for seed in range(20):
        masks = feature_row_masks(params, seed, 8)
        for k in covered:
            covered[k] |= masks.get(k, True)
    assert all(c.all() for c in covered.values())
    assert any(m.sum() < m.size for m in feature_row_masks(params, 0, 8).values())


@pytest.mark.parametrize("encoder", ["mlp", "gru"])
@pytest.mark.parametrize("component", LOSS_COMPONENTS)
def test_loss_gradients_match_finite_differences(small_cohort, encoder, component):
    for seed in range(2):
        assert loss_gradient_error(small_cohort, encoder, component, seed) < 1e-4


# ---------------------------------------------------------------- config

def test_loss_config_defaults_and_validation():
    cfg = LossConfig()
    assert (cfg.beta, cfg.lambda1, cfg.lambda2, cfg.lambda3, cfg.lambda4, cfg.alpha) == (0.75, 0.7, 10.0, 0.2, 0.05, 3.0)
    assert cfg.resolved_batch_size("gru") == 128 and cfg.resolved_batch_size("mlp") == 256
    for bad in ({"beta": 1.5}, {"lambda2": -1}, {"cosine_variant": "x"}, {"near_terminal_t": 0},
                {"nonsurvivor_weight": 0}, {"lambda4_release_target": "negative"}):
        with pytest.raises(ValueError):
            LossConfig(**bad)


def test_loss_config_dict_roundtrip_and_hash():
    cfg = LossConfig(beta=0.25, batch_size=64, cosine_variant="inner_product")
    text = {k: str(v) for k, v in cfg.as_dict().items()}
    assert LossConfig.from_dict(text) == cfg
    assert config_hash(cfg.as_dict()) == config_hash(LossConfig.from_dict(text).as_dict())
    assert config_hash(cfg.as_dict()) != config_hash(LossConfig().as_dict())


# ---------------------------------------------------------------- sampling

@pytest.mark.trivial
def test_sampling_labels_follow_anchor_outcome(small_cohort):
    index = StateIndex(small_cohort)
    batch = sample_triplet_batch(index, LossConfig(), np.random.default_rng(0), 500)
    d = batch.anchor_death
    assert np.all(index.died[batch.positive_patient] == d)
    assert np.all(index.died[batch.negative_patient] == ~d)
    assert np.all(index.died[batch.anchor_patient] == d)
    assert d.any() and (~d).any()
    assert np.all(batch.positive_patient != batch.anchor_patient)
    assert np.all(batch.negative_patient != batch.anchor_patient)
    assert np.all(batch.positive_patient != batch.negative_patient)
    for patients, hours in ((batch.positive_patient, batch.positive_hour), (batch.negative_patient, batch.negative_hour)):
        assert np.all(index.lengths[patients] - hours <= 24) and np.all(hours >= 0)
    same = batch.anchor_organ == batch.positive_organ
    assert np.array_equal(batch.y_ap.astype(bool), d & same)
    assert np.all(batch.negative_organ[d] == -1)


def test_sampling_anchor_is_terminal_state(small_cohort):
    index = StateIndex(small_cohort)
    batch = sample_triplet_batch(index, LossConfig(), np.random.default_rng(1), 50)
    for row, patient in enumerate(batch.anchor_patient):
        assert np.array_equal(batch.anchor[row], small_cohort[patient].states[-1])


def test_sampling_nonsurvivor_weighting():
    cohort = [toy_patient(f"P{i}", died=i < 10, T=3, seed=i) for i in range(100)]
    batch = sample_triplet_batch(cohort, LossConfig(), np.random.default_rng(5), 10_000)
    expected = 0.1 * 5 / (0.1 * 5 + 0.9)
    assert abs(batch.anchor_death.mean() - expected) < 0.03


def test_sampling_gru_histories(small_cohort):
    batch = sample_triplet_batch(small_cohort, LossConfig(), np.random.default_rng(2), 8, horizon=12)
    assert batch.anchor.shape == (8, 12, STATE_DIM)
    for row, patient in enumerate(batch.anchor_patient):
        assert np.array_equal(batch.anchor[row, -1], small_cohort[patient].states[-1])


def test_sampling_single_outcome_errors():
    cohort = [toy_patient(f"P{i}", died=False) for i in range(3)]
    with pytest.raises(SamplingError):
        sample_triplet_batch(cohort, LossConfig(), np.random.default_rng(0), 4)


# ---------------------------------------------------------------- training

def _tiny_model(encoder="mlp", seed=0, cohort=None):
    model = EmbeddingModel.create(encoder, 3, rng=np.random.default_rng(seed), **TINY)
    if cohort is not None:
        model.fit_scaler(np.concatenate([p.states for p in cohort]))
    return model


def test_two_patient_smoke():
    cohort = [toy_patient("A", True, T=8, level=1.0, seed=1), toy_patient("B", False, T=8, level=-1.0, seed=2)]
    decreased = 0
    for seed in range(3):
        ckpt = train(_tiny_model(seed=seed, cohort=cohort), cohort, cohort,
                     LossConfig(epochs=1, learning_rate=1e-2, batch_size=16),
                     np.random.default_rng(seed), steps_per_epoch=40)
        losses = ckpt.history.batch_losses[0]
        decreased += losses[-1] < losses[0]
    assert decreased >= 1


@pytest.mark.trivial
def test_checkpoint_selects_best_epoch(small_cohort):
    snaps = {}
    cfg = LossConfig(epochs=5, learning_rate=3e-3, batch_size=32)
    ckpt = train(_tiny_model(cohort=small_cohort), small_cohort[:30], small_cohort[30:], cfg,
                 np.random.default_rng(0), steps_per_epoch=5, callback=lambda e, p, v: snaps.__setitem__(e, p))
    vals = ckpt.history.val_losses
    assert ckpt.best_epoch == int(np.argmin(vals))
    for name, value in ckpt.model.params.items():
        assert np.array_equal(value, snaps[ckpt.best_epoch][name])


@pytest.mark.trivial
def test_training_deterministic(tmp_path, small_cohort):
    cfg = LossConfig(epochs=2, batch_size=16)
    paths = []
    for run in range(2):
        est = NormedEmbedding(**TINY, loss_config=cfg, steps_per_epoch=3, random_state=7).fit(small_cohort)
        path = tmp_path / f"run{run}.nbck"
        est.checkpoint_.save(path)
        paths.append(path)
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_training_rejects_single_outcome_validation(small_cohort):
    survivors = [p for p in small_cohort if not p.died]
    with pytest.raises(SamplingError):
        train(_tiny_model(cohort=small_cohort), small_cohort, survivors, LossConfig(epochs=1),
              np.random.default_rng(0), steps_per_epoch=1)


def test_checkpoint_save_load_roundtrip(tmp_path, small_cohort):
    model = _tiny_model("gru", cohort=small_cohort)
    path = tmp_path / "m.nbck"
    model.save(path, {"seed": 3})
    loaded, meta = EmbeddingModel.load(path)
    batch = sample_triplet_batch(small_cohort, LossConfig(), np.random.default_rng(0), 5, horizon=3)
    assert np.array_equal(loaded.embed(batch.anchor), model.embed(batch.anchor))
    assert meta["seed"] == "3" and meta["arch.encoder"] == "gru"


def test_batch_components_consistent_with_total(small_cohort):
    model = _tiny_model(cohort=small_cohort)
    cfg = LossConfig()
    batch = sample_triplet_batch(small_cohort, cfg, np.random.default_rng(0), 10)
    parts = batch_components(batch, model, cfg)
    total = parts["terminal"].item() + parts["contrastive"].item() + parts["intermediate"].item()
    assert parts["total"].item() == pytest.approx(total, abs=1e-12)


# ---------------------------------------------------------------- estimator API

def test_estimator_api(small_cohort):
    est = NormedEmbedding(**TINY, loss_config=LossConfig(epochs=1, batch_size=16), steps_per_epoch=2)
    assert clone(est).get_params()["hidden_dim"] == 8
    est.fit(small_cohort)
    emb = est.transform(small_cohort)
    assert emb.shape == (sum(p.length for p in small_cohort), 3)
    assert np.allclose(est.score_samples(small_cohort), (emb ** 2).sum(axis=1))
    states = small_cohort[0].states
    assert np.array_equal(est.transform(states), emb[: small_cohort[0].length])
    assert [e.shape[0] for e in est.embed_cohort(small_cohort)] == [p.length for p in small_cohort]
    with pytest.raises(ValueError):
        est.transform(np.zeros((2, 5)))


def test_estimator_gru_requires_histories(small_cohort):
    est = NormedEmbedding(encoder="gru", **TINY, loss_config=LossConfig(epochs=1, batch_size=8),
                          steps_per_epoch=1).fit(small_cohort)
    with pytest.raises(ValueError):
        est.transform(small_cohort[0].states)
    assert est.transform(np.zeros((2, 3, STATE_DIM))).shape == (2, 3)


# ---------------------------------------------------------------- baselines

def test_corruption_rate():
    x = np.ones(100_000)
    zeroed = 1.0 - corrupt(x, 0.1, np.random.default_rng(0)).mean()
    assert abs(zeroed - 0.1) < 0.01
    assert np.array_equal(corrupt(x, 0.0, np.random.default_rng(0)), x)
    with pytest.raises(ValueError):
        corrupt(x, 1.0, np.random.default_rng(0))


def test_dae_beats_corrupted_input_baseline(medium_cohort):
    # code as wide as the input, so an identity map is representable
    dae = DenoisingAutoencoder(n_components=STATE_DIM, hidden_dim=64, num_layers=2, corruption=0.0,
                               learning_rate=3e-3, epochs=3, batch_size=128, random_state=0)
    dae.fit(medium_cohort[:120])
    test = np.concatenate([p.states for p in medium_cohort[200:260]])
    clean = dae.model_.standardize(test)
    recon_mse = np.mean((dae.reconstruct(test) - clean) ** 2)
    corrupted_mse = np.mean((corrupt(clean, 0.1, np.random.default_rng(1)) - clean) ** 2)
    assert recon_mse < corrupted_mse


@pytest.mark.trivial
def test_dae_deterministic(small_cohort):
    kw = dict(hidden_dim=8, num_layers=2, epochs=2, steps_per_epoch=3, random_state=4)
    a = DenoisingAutoencoder(**kw).fit(small_cohort)
    b = DenoisingAutoencoder(**kw).fit(small_cohort)
    for k in a.model_.params:
        assert np.array_equal(a.model_.params[k], b.model_.params[k])
    assert a.model_.head.output_activation is None


@pytest.mark.trivial
def test_plain_triplet_unit_norm_and_determinism(small_cohort):
    kw = dict(hidden_dim=8, num_layers=2, epochs=2, steps_per_epoch=3, random_state=4)
    a = PlainTripletEmbedding(**kw).fit(small_cohort)
    b = PlainTripletEmbedding(**kw).fit(small_cohort)
    for k in a.model_.params:
        assert np.array_equal(a.model_.params[k], b.model_.params[k])
    x = np.random.default_rng(0).normal(50, 30, size=(200, STATE_DIM))
    assert np.allclose(np.linalg.norm(a.transform(x), axis=1), 1.0, atol=1e-9)


def test_plain_triplet_positive_noise_is_centered(small_cohort):
    est = PlainTripletEmbedding(noise_std=0.1)
    anchor, noise, negative = est.make_triplets(StateIndex(small_cohort), np.random.default_rng(0), 10_000)
    assert noise.shape == anchor.shape == negative.shape
    assert np.all(np.abs(noise.mean(axis=0)) < 3 * 0.1 / 100)
    assert noise.std() == pytest.approx(0.1, rel=0.02)
