import math

import numpy as np
import pytest
from helpers import hat_projection, single_transition
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from normball.cohort import N_ACTIONS, STATE_DIM, Outcome, PatientTrajectory
from normball.rlshape import (
    C51Agent,
    C51Config,
    RewardKind,
    RewardSpec,
    RiskModel,
    action_percentages,
    bellman_target,
    bootstrap_ensemble,
    bootstrap_patients,
    build_mdp,
    c51_project,
    expected_values,
    greedy_action,
    load_transitions_csv,
    majority_vote,
    minmax_scale,
    policy_report,
    reward,
    save_transitions_csv,
    support,
)

Z = support()
SMALL_C51 = dict(hidden_dim=16, hidden_layers=1)


class FixedMember:
    """Embeds a state as a fixed vector scaled by the state's first feature."""

    def __init__(self, vector):
        self.vector = np.asarray(vector, dtype=float)

    def embed(self, states):
        states = np.atleast_2d(states)
        return states[:, :1] * self.vector[None, :]


class RiskFromColumn:
    """d(s) = s[0]; embedding = (sqrt(s[0]), 0)."""

    def embed(self, states):
        states = np.atleast_2d(states)
        return np.column_stack([np.sqrt(states[:, 0]), np.zeros(len(states))])


def make_traj(d_values, died, pid="P", actions=None):
    T = len(d_values)
    states = np.zeros((T, STATE_DIM))
    states[:, 0] = d_values
    states[:, 1] = np.arange(T)
    acts = np.zeros((T, 2), dtype=int) if actions is None else np.asarray(actions)
    return PatientTrajectory(pid, states, acts, Outcome.DEATH if died else Outcome.RELEASE)


# ---------------------------------------------------------------- risk and rewards

@pytest.mark.trivial
def test_compute_d_examples():
    x = np.ones((1, STATE_DIM))
    assert RiskModel([FixedMember(np.zeros(10))] * 3).compute_d(x)[0] == 0.0
    unit = np.eye(10)
    assert RiskModel([FixedMember(unit[i]) for i in range(10)]).compute_d(x)[0] == pytest.approx(1.0, abs=1e-15)
    members = [FixedMember(np.sqrt(0.1 * k) * unit[0]) for k in range(1, 11)]
    assert RiskModel(members).compute_d(x)[0] == pytest.approx(0.55, abs=1e-12)
    with pytest.raises(ValueError):
        RiskModel([])


@pytest.mark.trivial
def test_reward_examples():
    assert reward(RewardSpec("r1"), 0.8, 0.4) == pytest.approx(0.15, abs=1e-15)
    assert reward(RewardSpec("r2"), 0.4, 0.8) == pytest.approx(-1.7, abs=1e-12)
    assert reward(RewardSpec("r2"), 0.8, 0.4) == pytest.approx(3.75 * 0.4, abs=1e-12)
    assert reward(RewardSpec("terminal"), 0.1, 0.4, Outcome.RELEASE) == pytest.approx(9.0, abs=1e-12)
    assert reward(RewardSpec("r1"), 0.1, 0.4, Outcome.DEATH) == -15.0
    assert reward(RewardSpec("terminal"), 0.8, 0.4) == 0.0
    with pytest.raises(ValueError):
        RewardSpec("r3")


@pytest.mark.trivial
def test_build_mdp_counts_and_terminals():
    cohort = [make_traj([0.1, 0.2, 0.4, 0.3], False, "A"), make_traj([0.5, 0.9], True, "B"), make_traj([0.2], False, "C")]
    rm = RiskModel([RiskFromColumn()])
    ts = build_mdp(cohort, rm, RewardSpec("terminal"))
    assert len(ts) == 3 + 1 + 0
    assert list(ts.done) == [False, False, True, True]
    assert np.all(ts.r[~ts.done] == 0.0)
    assert ts.r[2] == pytest.approx(15 * (1 - 0.3), abs=1e-12) and ts.r[3] == -15.0
    assert np.array_equal(ts.s_next[0], cohort[0].states[1])
    assert len(list(iter(ts))) == 4 and ts[3].done


@pytest.mark.parametrize("kind", ["terminal", "r1", "r2"])
def test_build_mdp_is_pure(small_cohort, kind):
    rm = RiskModel([FixedMember(np.full(3, 0.01))])
    a = build_mdp(small_cohort, rm, RewardSpec(kind))
    b = build_mdp(small_cohort, rm, RewardSpec(kind))
    assert np.array_equal(a.r, b.r) and np.array_equal(a.s, b.s)
    assert len(a) == sum(p.length - 1 for p in small_cohort)


def test_r1_telescoping_exact():
    rng = np.random.default_rng(0)
    spec = RewardSpec("r1")
    for i in range(50):
        T = int(rng.integers(2, 40))
        d = np.round(rng.uniform(0, 1, T), 6)
        died = bool(rng.random() < 0.5)
        ts = build_mdp([make_traj(d, died)], RiskModel([RiskFromColumn()]), spec)
        total = math.fsum(ts.r)
        term = -15.0 if died else 15.0 * (1.0 - ts.d_next[-1])
        # the terminal transition swaps its shaping term for the terminal reward
        expected = math.fsum(0.375 * (ts.d_s[:-1] - ts.d_next[:-1])) + term
        assert total == expected
        assert total == pytest.approx(0.375 * (ts.d_s[0] - ts.d_s[-1]) + term, abs=1e-12)


def test_transitions_csv_roundtrip(tmp_path, small_cohort):
    rm = RiskModel([FixedMember(np.array([0.01, 0.02]))])
    ts = build_mdp(small_cohort, rm, RewardSpec("r2"))
    path = tmp_path / "t.csv"
    save_transitions_csv(ts, small_cohort, path)
    cohort, back = load_transitions_csv(path)
    assert len(cohort) == len(small_cohort)
    for name in ("s", "a", "r", "s_next", "done", "d_s", "d_next"):
        assert np.array_equal(getattr(back, name), getattr(ts, name)), name


# ---------------------------------------------------------------- projection

@pytest.mark.trivial
def test_projection_examples():
    z = np.array([-1.0, 0.0, 1.0])
    assert np.allclose(c51_project([0.5], [1.0], z), [0, 0.5, 0.5], atol=0)
    assert np.array_equal(c51_project([7.0], [1.0], z), [0, 0, 1.0])
    assert np.array_equal(c51_project([-9.0, 0.0], [0.5, 0.5], z), [0.5, 0.5, 0])


def test_projection_matches_hat_oracle():
    rng = np.random.default_rng(0)
    for _ in range(200):
        atoms = rng.uniform(-25, 25, 51)
        atoms[rng.random(51) < 0.1] = Z[rng.integers(0, 51)]  # exact support hits
        probs = rng.dirichlet(np.ones(51))
        got = c51_project(atoms, probs, Z)
        assert np.max(np.abs(got - hat_projection(atoms, probs, Z))) < 1e-12
        assert abs(got.sum() - 1.0) < 1e-9


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, 51, elements=st.floats(-17.99, 17.99)), st.integers(0, 2**32 - 1))
def test_projection_preserves_mean_in_range(atoms, seed):
    probs = np.random.default_rng(seed).dirichlet(np.ones(51))
    got = c51_project(atoms, probs, Z)
    assert abs(got.sum() - 1.0) < 1e-9
    assert abs(got @ Z - probs @ atoms) < 1e-9


@pytest.mark.trivial
def test_bellman_target_discount_zero_is_reward_projection():
    rng = np.random.default_rng(1)
    p_next = rng.dirichlet(np.ones(51), size=6)
    r = rng.uniform(-16, 16, 6)
    done = np.array([0, 1, 0, 1, 0, 0])
    got = bellman_target(r, done, p_next, Z, gamma=0.0)
    for i in range(6):
        assert np.allclose(got[i], c51_project([r[i]], [1.0], Z), atol=1e-15)
    # terminal rows ignore the next-state distribution
    got = bellman_target(r, done, p_next, Z, gamma=0.999)
    assert np.allclose(got[1], c51_project([r[1]], [1.0], Z), atol=1e-15)


# ---------------------------------------------------------------- greedy actions

@pytest.mark.trivial
def test_greedy_examples():
    same = np.tile(np.full(51, 1 / 51), (N_ACTIONS, 1))
    assert greedy_action(same, Z) == 0
    dists = np.zeros((N_ACTIONS, 51))
    dists[:, 0] = 1.0
    dists[4] = 0.0
    dists[4, -1] = 1.0
    assert greedy_action(dists, Z) == 4


def test_greedy_matches_brute_force_and_shift_invariance():
    rng = np.random.default_rng(2)
    dists = rng.dirichlet(np.ones(51), size=(300, N_ACTIONS))
    got = greedy_action(dists, Z)
    for i in range(300):
        values = [sum(p * z for p, z in zip(dists[i, a], Z)) for a in range(N_ACTIONS)]
        assert got[i] == int(np.argmax(values))
    assert np.array_equal(greedy_action(dists, Z + 7.5), got)
    assert np.allclose(expected_values(dists, Z), dists @ Z)


def test_majority_vote_ties_to_lowest():
    votes = np.array([[3, 1, 2], [1, 1, 5], [3, 2, 5], [1, 2, 2]])
    assert list(majority_vote(votes)) == [1, 1, 2]


@pytest.mark.trivial
def test_minmax_and_percentages():
    scaled = minmax_scale(np.array([2.0, 4.0, 3.0]))
    assert list(scaled) == [0.0, 1.0, 0.5]
    assert np.all(minmax_scale(np.ones(3)) == 0)
    pct = action_percentages([0, 0, 8, 3])
    assert pct[0] == 50.0 and pct.sum() == pytest.approx(100.0)


# ---------------------------------------------------------------- c51 training

def test_overfit_terminal_transition():
    cfg = C51Config(**SMALL_C51, learning_rate=1e-2, epochs=1, steps_per_epoch=400)
    agent = C51Agent(cfg, random_state=0).fit(single_transition(-15.0, True))
    q = agent.q_values(np.ones((1, STATE_DIM)))[0, 2]
    assert abs(q + 15.0) < 0.5
    assert agent.history_.max_mass_error < 1e-6
    dist = agent.predict_distributions(np.ones((1, STATE_DIM)))
    assert np.allclose(dist.sum(-1), 1.0, atol=1e-6) and np.all(dist >= 0)


@pytest.mark.trivial
def test_c51_deterministic(small_cohort):
    ts = build_mdp(small_cohort, RiskModel([FixedMember(np.full(3, 0.01))]), RewardSpec("r1"))
    cfg = C51Config(**SMALL_C51, epochs=1, steps_per_epoch=5)
    a = C51Agent(cfg, random_state=3).fit(ts)
    b = C51Agent(cfg, random_state=3).fit(ts)
    assert all(np.array_equal(a.params_[k], b.params_[k]) for k in a.params_)
    assert a.history_.losses == b.history_.losses
    assert a.predict(ts.s).shape == (len(ts),)


def test_c51_rejects_bad_input():
    with pytest.raises(TypeError):
        C51Agent().fit(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        C51Config(n_atoms=1)
    with pytest.raises(ValueError):
        C51Config(v_min=1, v_max=-1)


# ---------------------------------------------------------------- ensembles

@pytest.mark.trivial
def test_bootstrap_patients_range():
    rng = np.random.default_rng(0)
    for _ in range(500):
        k, idx = bootstrap_patients(200, rng)
        assert 0.6 <= k <= 0.85
        assert len(idx) == math.floor(k * 200) and len(set(idx)) == len(idx)


@pytest.mark.trivial
def test_ensemble_and_policy_report(small_cohort):
    rm = RiskModel([FixedMember(np.full(3, 0.01))])
    cfg = C51Config(**SMALL_C51, epochs=1, steps_per_epoch=3)
    ens = bootstrap_ensemble(small_cohort, rm, RewardSpec("r1"), cfg, n_members=5, rng=np.random.default_rng(0))
    assert len(ens.members) == 5 and all(0.6 <= k <= 0.85 for k in ens.fractions)
    subsets = [tuple(s) for s in ens.subsets]
    assert len(set(subsets)) == 5
    assert all(set(s) <= set(range(len(small_cohort))) for s in subsets)
    rep = policy_report(ens, small_cohort)
    for mode in ("averaged_actions", "averaged_values", "clinician"):
        assert abs(rep.percentages[mode].sum() - 100.0) < 0.1
    assert rep.scaled_values.min() == 0.0 and rep.scaled_values.max() == 1.0
    assert set(rep.value_quartiles) == {"survivors", "nonsurvivors", "survivors_last24", "nonsurvivors_last24"}
    n = sum(p.length for p in small_cohort)
    assert rep.groups["survivors"].sum() + rep.groups["nonsurvivors"].sum() == n


@pytest.mark.trivial
def test_single_member_modes_coincide(small_cohort):
    rm = RiskModel([FixedMember(np.full(3, 0.01))])
    cfg = C51Config(**SMALL_C51, epochs=1, steps_per_epoch=3)
    ens = bootstrap_ensemble(small_cohort, rm, RewardSpec("terminal"), cfg, n_members=1,
                             rng=np.random.default_rng(1))
    rep = policy_report(ens, small_cohort)
    assert np.array_equal(rep.percentages["averaged_actions"], rep.percentages["averaged_values"])


def test_augmented_ensemble_inputs(small_cohort):
    rm = RiskModel([FixedMember(np.array([0.01, 0.02]))])
    cfg = C51Config(**SMALL_C51, epochs=1, steps_per_epoch=2, augment=True)
    ens = bootstrap_ensemble(small_cohort, rm, RewardSpec("r2"), cfg, n_members=2, rng=np.random.default_rng(2))
    assert ens.inputs(small_cohort[0].states).shape == (small_cohort[0].length, STATE_DIM + 2)
    assert ens.member_distributions(small_cohort[0].states).shape == (2, small_cohort[0].length, 9, 51)


def test_reward_kind_values():
    assert [k.value for k in RewardKind] == ["terminal", "r1", "r2"]
