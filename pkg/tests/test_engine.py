import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from actsim import engine, kernels
from actsim.engine import (
    CategoricalDist,
    LikelihoodMatrix,
    Policy,
    PrecisionSet,
    TransitionSet,
    expected_free_energy,
    expected_observations,
    normalize,
    percept_readout,
    policy_posterior,
    predict,
    select_action,
    state_update,
)
from actsim.errors import DegenerateDistribution, HorizonExceeded, InvalidPrecision, ShapeError, UnknownLabel
from actsim.scenarios import build_duet_model

SOUND_SILENCE = ("sound", "silence")
HQ = ("hear", "quiet")
A_SYM = LikelihoodMatrix(SOUND_SILENCE, HQ, [[0.9, 0.1], [0.1, 0.9]])

probs = st.lists(st.floats(0.01, 10.0), min_size=2, max_size=6).map(lambda v: list(normalize(v)))


def dist(p, labels=SOUND_SILENCE):
    return CategoricalDist(labels, p)


# ---------------------------------------------------------------- types


def test_categorical_rejects_bad_input():
    with pytest.raises(DegenerateDistribution):
        CategoricalDist(("a", "b"), [0.6, 0.6])
    with pytest.raises(DegenerateDistribution):
        CategoricalDist(("a", "b"), [1.2, -0.2])
    with pytest.raises(ShapeError):
        CategoricalDist(("a", "b"), [1.0])


def test_categorical_is_read_only_and_labelled():
    d = dist([0.25, 0.75])
    assert d["silence"] == 0.75
    with pytest.raises(ValueError):
        d.probs[0] = 1.0
    with pytest.raises(UnknownLabel):
        d["nope"]


def test_likelihood_floor_keeps_logs_finite():
    a = LikelihoodMatrix(SOUND_SILENCE, HQ, [[1.0, 0.0], [0.0, 1.0]])
    assert a.matrix.min() > 0
    assert np.allclose(a.matrix.sum(axis=1), 1.0, atol=1e-12)
    assert a.matrix[0, 1] == pytest.approx(1e-6, rel=1e-5)


def test_model_rejects_mixed_horizons():
    model = build_duet_model(0.9, "full", 2)
    with pytest.raises(ShapeError):
        model.replace(
            policies=(Policy("a", ("listen",)), Policy("b", ("listen", "speak"))),
            E=CategoricalDist.uniform(("a", "b")),
        )


def test_precision_set_validation():
    with pytest.raises(InvalidPrecision):
        PrecisionSet(-0.1, 1.0)
    with pytest.raises(InvalidPrecision):
        PrecisionSet(1.0, float("inf"))


# ---------------------------------------------------------------- normalize


@pytest.mark.parametrize(
    "v, expected",
    [([2, 2], [0.5, 0.5]), ([1, 0, 3], [0.25, 0.0, 0.75])],
)
def test_normalize_examples(v, expected):
    assert np.allclose(normalize(v), expected, atol=1e-12)


@pytest.mark.parametrize("v", [[0, 0], [1, -1], []])
def test_normalize_degenerate(v):
    with pytest.raises(DegenerateDistribution):
        normalize(v)


# ---------------------------------------------------------------- state update


def test_state_update_exact_bayes_example():
    post = state_update(dist([0.5, 0.5]), "hear", A_SYM, 1.0)
    assert np.allclose(post.probs, [0.9, 0.1], atol=1e-9)


def test_state_update_low_precision_keeps_sound():
    a = LikelihoodMatrix(SOUND_SILENCE, ("quiet", "hear"), [[0.1, 0.9], [0.9, 0.1]])
    post = state_update(dist([0.9, 0.1]), "quiet", a, 0.2)
    assert np.allclose(post.probs, oracles.bayes([0.9, 0.1], [0.1, 0.9], 0.2), atol=1e-12)
    assert post.probs[0] == pytest.approx(0.8529313603914379, abs=1e-12)
    assert post.argmax() == "sound"


@given(probs, st.integers(0, 1))
def test_state_update_zero_precision_is_identity(p, obs):
    labels = tuple(f"s{i}" for i in range(len(p)))
    rng = np.random.default_rng(len(p))
    a = LikelihoodMatrix(labels, HQ, rng.dirichlet([1, 1], size=len(p)))
    prior = CategoricalDist(labels, p)
    assert state_update(prior, HQ[obs], a, 0.0) is prior


@settings(max_examples=60)
@given(probs, st.floats(0.0, 3.0))
def test_state_update_matches_plain_bayes(p, zeta):
    labels = tuple(f"s{i}" for i in range(len(p)))
    rng = np.random.default_rng(len(p) + 7)
    a = LikelihoodMatrix(labels, HQ, rng.dirichlet([1, 1], size=len(p)))
    post = state_update(CategoricalDist(labels, p), "quiet", a, zeta)
    ref = oracles.bayes(p, list(a.matrix[:, 1]), zeta)
    assert np.allclose(post.probs, ref, atol=1e-9)
    assert abs(post.probs.sum() - 1.0) <= 1e-9


def test_state_update_moves_toward_evidence_with_zeta():
    prior = dist([0.9, 0.1])
    values = [state_update(prior, "quiet", A_SYM, z)["silence"] for z in np.linspace(0, 2, 9)]
    assert all(b > a for a, b in zip(values, values[1:]))


def test_state_update_errors():
    with pytest.raises(UnknownLabel):
        state_update(dist([0.5, 0.5]), "roar", A_SYM, 1.0)
    with pytest.raises(InvalidPrecision):
        state_update(dist([0.5, 0.5]), "hear", A_SYM, float("nan"))


# ---------------------------------------------------------------- predict / expected obs


def test_predict_examples():
    ident = TransitionSet(SOUND_SILENCE, {"stay": np.eye(2), "swap": [[0, 1], [1, 0]], "m": [[0.2, 0.8], [0.7, 0.3]]})
    assert np.allclose(predict(dist([1, 0]), "stay", ident).probs, [1, 0])
    assert np.allclose(predict(dist([0.5, 0.5]), "swap", ident).probs, [0.5, 0.5])
    assert np.allclose(predict(dist([1, 0]), "m", ident).probs, [0.2, 0.8])
    with pytest.raises(UnknownLabel):
        predict(dist([1, 0]), "jump", ident)


def test_expected_observations_examples():
    assert np.allclose(expected_observations(dist([1, 0]), A_SYM).probs, [0.9, 0.1], atol=1e-6)
    assert np.allclose(expected_observations(dist([0.5, 0.5]), A_SYM).probs, [0.5, 0.5])
    assert np.allclose(expected_observations(dist([0.8, 0.2]), A_SYM).probs, [0.74, 0.26], atol=1e-6)
    with pytest.raises(ShapeError):
        expected_observations(CategoricalDist(("a", "b", "c"), [1, 0, 0]), A_SYM)


# ---------------------------------------------------------------- expected free energy


def _one_step_model(a_rows, c):
    model = build_duet_model(0.9, "full", 2)
    labels = model.states
    return model.replace(
        A=LikelihoodMatrix(labels, model.observations, a_rows),
        C=CategoricalDist(model.observations, c),
    )


def test_efe_near_zero_when_prediction_matches_preference():
    model = _one_step_model([[0.0, 1.0], [1.0, 0.0]], [0.9, 0.1])
    belief = CategoricalDist(model.states, [0.5, 0.5])
    pol = Policy("s", ("speak",))  # speak -> silence 0.9 -> quiet 0.9
    g = expected_free_energy(model, pol, belief)
    assert abs(g) < 1e-4


def test_efe_prefers_policy_closer_to_preferences():
    model = _one_step_model([[0.0, 1.0], [1.0, 0.0]], [0.9, 0.1])
    belief = CategoricalDist(model.states, [0.5, 0.5])
    assert expected_free_energy(model, Policy("s", ("speak",)), belief) < expected_free_energy(
        model, Policy("l", ("listen",)), belief
    )


# frozen from oracles.efe on the default duet matrices, belief = D = [0.9, 0.1]
EFE_UNIFORM_C = 2.1873466685651977
EFE_HEAR_PREFERRED = {"LLLL": 1.3054640915885767, "SSSS": 4.854377656055497, "LSLS": 3.0799208738220365}


def test_efe_duet_regression_values():
    model = build_duet_model(0.9, "full", 4)
    belief = model.D
    for pid in ("LLLL", "SSSS", "LSLS"):
        assert expected_free_energy(model, model.policy(pid), belief) == pytest.approx(EFE_UNIFORM_C, abs=1e-9)
    pref = build_duet_model(0.9, "full", 4, preferences={"quiet": 0.2, "hear": 0.8})
    for pid, g in EFE_HEAR_PREFERRED.items():
        assert expected_free_energy(pref, pref.policy(pid), belief) == pytest.approx(g, abs=1e-9)


def test_efe_matches_plain_oracle_on_random_models():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n_s, n_o = int(rng.integers(2, 5)), int(rng.integers(2, 4))
        states = tuple(f"s{i}" for i in range(n_s))
        obs = tuple(f"o{i}" for i in range(n_o))
        a = LikelihoodMatrix(states, obs, rng.dirichlet(np.ones(n_o), size=n_s))
        mats = {x: rng.dirichlet(np.ones(n_s), size=n_s) for x in ("x", "y")}
        b = TransitionSet(states, mats)
        c = CategoricalDist(obs, rng.dirichlet(np.ones(n_o)))
        pols = [Policy("".join(p), p) for p in itertools.product("xy", repeat=3)]
        model = engine.GenerativeModel(
            states, obs, ("x", "y"), a, b, c, CategoricalDist.uniform(states), pols, CategoricalDist.uniform([p.id for p in pols])
        )
        belief = CategoricalDist(states, rng.dirichlet(np.ones(n_s)))
        arr = model.arrays()
        fast = kernels.efe_all(belief.probs, arr["b_stack"], arr["pol_actions"], 1, arr["a_mat"], arr["log_c"], arr["row_entropy"])
        for i, p in enumerate(pols):
            rolled = [p.actions[(1 + k) % 3] for k in range(3)]
            ref = oracles.efe(list(belief.probs), rolled, {k: v.tolist() for k, v in b.matrices.items()}, a.matrix.tolist(), list(c.probs))
            assert expected_free_energy(model, p, belief, start=1) == pytest.approx(ref, abs=1e-9)
            assert fast[i] == pytest.approx(ref, abs=1e-9)


# ---------------------------------------------------------------- policy posterior


E2 = CategoricalDist.uniform(("p0", "p1"))


@pytest.mark.parametrize(
    "gamma, expected",
    [(0.0, [0.5, 0.5]), (1.0, [0.7310585786300049, 0.2689414213699951])],
)
def test_policy_posterior_examples(gamma, expected):
    assert np.allclose(policy_posterior(E2, [1.0, 2.0], gamma).probs, expected, atol=1e-12)


def test_policy_posterior_high_gamma_concentrates():
    assert policy_posterior(E2, [1.0, 2.0], 20.0).probs[0] > 0.999


def test_policy_posterior_shape_error():
    with pytest.raises(ShapeError):
        policy_posterior(E2, [1.0, 2.0, 3.0], 1.0)


def test_policy_posterior_zero_gamma_uniform_on_support():
    e = CategoricalDist(("a", "b", "c"), [0.7, 0.3, 0.0])
    assert np.allclose(policy_posterior(e, [5.0, 0.0, 1.0], 0.0).probs, [0.5, 0.5, 0.0])


def _entropy(p):
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def test_policy_entropy_non_increasing_in_gamma():
    rng = np.random.default_rng(11)
    gammas = np.linspace(0, 12, 25)
    for _ in range(25):
        n = int(rng.integers(2, 9))
        e = CategoricalDist([f"p{i}" for i in range(n)], rng.dirichlet(np.ones(n)))
        g = rng.normal(0, 2, n)
        h = [_entropy(policy_posterior(e, g, x).probs) for x in gammas]
        assert all(b <= a + 1e-12 for a, b in zip(h, h[1:]))


def test_policy_evidence_not_scaled_by_gamma():
    q = policy_posterior(E2, [0.0, 0.0], 0.0, evidence=[0.0, math.log(3.0)])
    assert np.allclose(q.probs, [0.75, 0.25])


# ---------------------------------------------------------------- action selection / percept


POLS = [Policy("ll", ("listen", "listen")), Policy("ss", ("speak", "speak"))]


def test_select_action_examples():
    ids = CategoricalDist.uniform(("ll", "ss")).labels
    assert select_action(CategoricalDist(ids, [1, 0]), POLS, 0) == "listen"
    assert select_action(CategoricalDist(ids, [0.5, 0.5]), POLS, 1) == "listen"
    with pytest.raises(HorizonExceeded):
        select_action(CategoricalDist(ids, [1, 0]), POLS, 2)


def test_select_action_sample_is_seeded():
    q = CategoricalDist(("ll", "ss"), [0.3, 0.7])
    # frozen draws of numpy's default generator
    assert select_action(q, POLS, 0, "sample", 7) == "speak"
    assert select_action(q, POLS, 0, "sample", 11) == "listen"
    assert all(select_action(q, POLS, 1, "sample", 5) == select_action(q, POLS, 1, "sample", 5) for _ in range(3))


def test_percept_readout_examples():
    a = LikelihoodMatrix(SOUND_SILENCE, ("quiet", "hear"), [[0.1, 0.9], [0.9, 0.1]])
    p = percept_readout(dist([0.0, 1.0]), a)
    assert p.label == "quiet" and p.confidence >= 0.9
    p = percept_readout(dist([0.8529313603914379, 0.14706863960856217]), a)
    assert p.label == "hear"
    assert np.allclose(p.source_posterior.probs, [0.21765, 0.78235], atol=1e-4)
    p = percept_readout(dist([0.5, 0.5]), a)
    assert p.label == "quiet" and p.confidence == pytest.approx(0.5)


def test_argmax_tie_tolerance():
    assert engine.argmax_lowest([0.5, 0.5 + 1e-15]) == 0
    assert engine.argmax_lowest([0.5, 0.5 + 1e-9]) == 1


# ---------------------------------------------------------------- step


POLICIES4 = [tuple(p) for p in itertools.product(("listen", "speak"), repeat=4)]


def test_initial_belief_and_first_step_match_hand_composition():
    model = build_duet_model(0.9, "full", 4)
    ref_prior0, ref_post0, ref_q1, ref_prior1 = oracles.duet_first_step(0.9, 1.0, 1.0, POLICIES4, [1 / 16] * 16, 0.4)
    b0 = engine.initial_belief(model, 1.0)
    assert np.allclose(b0.q_state.probs, ref_prior0, atol=1e-12)
    b1, percept, action = engine.step(b0, "quiet", model, PrecisionSet(1.0, 1.0))
    assert np.allclose(b1.posterior.probs, ref_post0, atol=1e-12)
    assert np.allclose(b1.q_policy.probs, ref_q1, atol=1e-12)
    assert np.allclose(b1.q_state.probs, ref_prior1, atol=1e-12)
    assert percept.label == "quiet" and action == "listen" and b1.t == 1


# frozen from oracles.duet_first_step(0.9, 1, 1, all 16 policies, uniform E, omega=0.4)
FROZEN_PRIOR0 = [0.7065921139768864, 0.29340788602311374]
FROZEN_POST0 = [0.2110954816999591, 0.7889045183000409]


def test_first_step_regression_values():
    model = build_duet_model(0.9, "full", 4)
    b1, _, _ = engine.step(engine.initial_belief(model, 1.0), "quiet", model, PrecisionSet(1.0, 1.0))
    assert np.allclose(engine.initial_belief(model, 1.0).q_state.probs, FROZEN_PRIOR0, atol=1e-12)
    assert np.allclose(b1.posterior.probs, FROZEN_POST0, atol=1e-12)


def test_zero_zeta_beliefs_ignore_observations():
    model = build_duet_model(0.9, "full", 4)
    prec = PrecisionSet(0.0, 1.0)

    def run(obs_seq):
        b = engine.initial_belief(model, 1.0)
        trace = []
        for o in obs_seq:
            b, _, _ = engine.step(b, o, model, prec)
            trace.append(b.q_state.probs.copy())
        return trace

    a = run(["quiet", "hear", "quiet", "hear", "quiet"])
    b = run(["hear", "hear", "hear", "quiet", "quiet"])
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_step_is_deterministic_and_normalized():
    model = build_duet_model(0.9, "listening_biased", 4)
    prec = PrecisionSet(0.5, 4.0)
    b1 = b2 = engine.initial_belief(model, 4.0)
    for t in range(12):
        obs = "quiet" if t % 2 == 0 else "hear"
        b1, p1, a1 = engine.step(b1, obs, model, prec, "sample", t)
        b2, p2, a2 = engine.step(b2, obs, model, prec, "sample", t)
        assert b1 == b2 and a1 == a2 and p1.label == p2.label
        for d in (b1.q_state, b1.q_policy, b1.posterior):
            assert abs(d.probs.sum() - 1.0) <= 1e-9
    assert b1.t == 12


def test_filter_sequence_chains_update_and_predict():
    model = build_duet_model(0.7, "full", 2)
    obs = ["quiet", "hear", "quiet"]
    acts = ["listen", "speak", "listen"]
    out = engine.filter_sequence(model, acts, obs, 0.5)
    b = {k: v.tolist() for k, v in model.B.matrices.items()}
    prior = list(model.D.probs)
    for t, o in enumerate(obs):
        post = oracles.bayes(prior, list(model.A.column(o)), 0.5)
        assert np.allclose(out[t].probs, post, atol=1e-12)
        prior = oracles.matvec(post, b[acts[t]])
