import numpy as np
import pytest

from actsim.engine import PrecisionSet
from actsim.errors import DuplicatePolicy, InvalidConfig, NotEnrolled
from actsim.fixtures import _policy_from_id
from actsim.scenarios import TrialConfig, build_duet_model, hallucination_rate, run_trial
from actsim.services import (
    CourseRecord,
    InterventionSpec,
    PatientAgent,
    ServiceProgram,
    apply_intervention,
    enroll,
    policy_learning_step,
    run_course,
    run_episode,
    update_perceptual_prior,
    withdraw_service,
)


def rate_of(patient, world, seed=0):
    cfg = TrialConfig(patient.model, world, patient.precisions, seed=seed)
    return hallucination_rate(run_trial(cfg))


@pytest.fixture
def pinned(fx):
    return PatientAgent.from_model(fx.figure4_model(), fx.figure4_precisions())


def pols(*ids):
    return [_policy_from_id(pid, 4) for pid in ids]


# ---------------------------------------------------------------- interventions


def test_flatten_full_mix(pinned):
    out = apply_intervention(pinned, InterventionSpec.flatten_perceptual_prior(1.0))
    assert np.allclose(out.D.probs, [0.5, 0.5])
    assert out.prior_counts.sum() == pytest.approx(pinned.prior_counts.sum())


def test_boost_arithmetic(pinned):
    out = apply_intervention(pinned, InterventionSpec.boost_sensory_precision(0.8))
    assert out.precisions.zeta == pytest.approx(1.0)
    assert pinned.precisions.zeta == 0.2


def test_reduce_policy_precision_clamps(pinned):
    assert apply_intervention(pinned, InterventionSpec.reduce_policy_precision(20)).precisions.gamma == 0.0


def test_expand_dedups_and_uniform_e(pinned):
    out = apply_intervention(pinned, InterventionSpec.expand_policy_space(pols("LSLS", "LLLL")))
    assert out.model.policy_ids == ("LLLL", "LSSS", "SSLS", "SSSS", "LSLS")
    assert np.allclose(out.model.E.probs, 0.2)
    with pytest.raises(DuplicatePolicy):
        InterventionSpec.expand_policy_space(pols("LSLS", "LSLS"))


def test_spec_ranges():
    with pytest.raises(InvalidConfig):
        InterventionSpec.boost_sensory_precision(0.0)
    with pytest.raises(InvalidConfig):
        InterventionSpec.flatten_perceptual_prior(1.5)


def test_each_intervention_cures_pinned_fixture(fx, pinned, world):
    assert rate_of(pinned, world) > 0.5
    for spec in fx.figure4_interventions():
        assert rate_of(apply_intervention(pinned, spec), world) < 0.05, spec.kind


def test_severe_patients_cap_flattening(pinned):
    severe = pinned.evolve(severity="severe")
    out = apply_intervention(severe, InterventionSpec.flatten_perceptual_prior(1.0))
    assert out.D.probs[0] == pytest.approx(0.8 * 0.9 + 0.2 * 0.5)


# ---------------------------------------------------------------- prior learning


def _fake_record(percepts):
    from actsim.scenarios import TrialRecord, TrialStep

    steps = [TrialStep(t, "silence", "quiet", None, p, 1.0, "listen", "LLLL", p == "hear", False, True) for t, p in enumerate(percepts)]
    return TrialRecord(tuple(steps))


def test_update_prior_examples(pinned):
    p = pinned.evolve(prior_counts=[9.0, 1.0], eta=0.1)
    out = update_perceptual_prior(p, _fake_record(["hear"] * 10))
    assert np.allclose(out.prior_counts, [10.0, 1.0])
    assert np.allclose(out.D.probs, [10 / 11, 1 / 11])
    assert update_perceptual_prior(p.evolve(eta=0.0), _fake_record(["hear"] * 10)) == p.evolve(eta=0.0)


def test_update_prior_deepens_monotonically(pinned):
    p = pinned.evolve(prior_counts=[9.0, 1.0], eta=0.1)
    rec = _fake_record(["hear"] * 20)
    first = update_perceptual_prior(p, rec)
    second = update_perceptual_prior(first, rec)
    assert second.D["other_speaking"] > first.D["other_speaking"] > p.D["other_speaking"]


def test_severe_patients_only_deepen(pinned):
    p = pinned.evolve(prior_counts=[9.0, 1.0], eta=0.1, severity="severe")
    out = update_perceptual_prior(p, _fake_record(["quiet"] * 10 + ["hear"] * 5))
    assert np.allclose(out.prior_counts, [9.5, 1.0])


# ---------------------------------------------------------------- policy learning and withdrawal


SIX = ("LSLS", "LLLS", "LLSL", "LSLL", "SLSL", "SLLS")


def _enrolled(pinned, p_learn):
    prog = ServiceProgram("ACT", (InterventionSpec.expand_policy_space(pols(*SIX)),))
    return enroll(pinned.evolve(p_learn=p_learn), prog), prog


def test_policy_learning_extremes(pinned):
    e0, _ = _enrolled(pinned, 0.0)
    assert policy_learning_step(e0, 3).supplemented_ids == frozenset(SIX)
    e1, _ = _enrolled(pinned, 1.0)
    assert policy_learning_step(e1, 3).supplemented_ids == frozenset()


def test_policy_learning_frozen_draw(pinned):
    e, _ = _enrolled(pinned, 0.5)
    # still on loan after one step with seed 0 (frozen outcome of the seeded draw)
    assert sorted(policy_learning_step(e, 0).supplemented_ids) == ["LLLS", "SLLS", "SLSL"]
    assert policy_learning_step(e, 0) == policy_learning_step(e, 0)


def test_withdraw_immediately_restores_patient(fx, pinned):
    act = fx.program("ACT")
    enrolled = enroll(pinned, act)
    assert enrolled.precisions != pinned.precisions and "LSLS" in enrolled.model.policy_ids
    back = withdraw_service(enrolled, act)
    assert back == pinned


def test_withdraw_keeps_internalized_policies(fx, pinned):
    act = fx.program("ACT")
    learned = policy_learning_step(enroll(pinned.evolve(p_learn=1.0), act), 1)
    back = withdraw_service(learned, act)
    assert "LSLS" in back.model.policy_ids
    assert back.precisions == pinned.precisions


def test_withdraw_not_enrolled(fx, pinned):
    with pytest.raises(NotEnrolled):
        withdraw_service(pinned, fx.program("ACT"))
    with pytest.raises(NotEnrolled):
        withdraw_service(enroll(pinned, fx.program("ACT")), fx.program("CSC"))


def test_enroll_withdraw_inverse_on_precisions(pinned):
    for dz, dg in [(0.3, 2.0), (1.0, 8.0), (0.5, 20.0)]:
        prog = ServiceProgram(
            "ACT", (InterventionSpec.boost_sensory_precision(dz), InterventionSpec.reduce_policy_precision(dg))
        )
        back = withdraw_service(enroll(pinned, prog), prog)
        assert back.precisions == pinned.precisions


def test_withdrawal_raises_rate_without_learning(fx, world):
    act = fx.program("ACT")
    patient = fx.patient("chronic")
    patient, enrolled_ep = run_episode(patient, act, world, 1)
    patient = withdraw_service(patient, act)
    _, after = run_episode(patient, None, world, 2)
    assert after.rate > enrolled_ep.rate


# ---------------------------------------------------------------- episodes and courses


def test_episode_without_program_equals_bare_trial(fx, world):
    patient = fx.patient("vulnerable", eta=0.0)
    out, ep = run_episode(patient, None, world, 5)
    assert out == patient
    assert ep.rate == rate_of(patient, world)


def test_act_episode_cures_pinned(fx, world):
    _, ep = run_episode(fx.patient("vulnerable"), fx.program("ACT"), world, 0)
    assert ep.rate < 0.05


def test_treatment_as_usual_insufficient_for_low_precision(fx, world):
    model = build_duet_model(0.9, "full", 4)
    patient = PatientAgent(model, PrecisionSet(0.1, 1.0), [9.0, 1.0])
    _, ep = run_episode(patient, fx.program("TreatmentAsUsual"), world, 0)
    assert ep.rate > 0.05


def test_healthy_course_never_relapses(fx, world):
    c = run_course(fx.patient("healthy"), [None] * 10, 10, range(10), world)
    assert c.relapse_count == 0


def test_untreated_course_deepens(fx, world):
    c = run_course(fx.patient("vulnerable"), [None] * 6, 6, range(6), world)
    d = c.d_trace()
    assert all(b >= a for a, b in zip(d, d[1:]))


def test_course_argument_checks(fx, world):
    with pytest.raises(InvalidConfig):
        run_course(fx.patient("healthy"), [None] * 3, 4, range(4), world)
    with pytest.raises(InvalidConfig):
        run_course(fx.patient("healthy"), [], 0, [], world)


def test_course_is_deterministic(fx, world):
    sched = [None, None] + [fx.program("TreatmentAsUsual")] * 4
    a = run_course(fx.patient("vulnerable"), sched, 6, range(50, 56), world)
    b = run_course(fx.patient("vulnerable"), sched, 6, range(50, 56), world)
    assert a == b


def test_recovery_time_definition():
    from actsim.services import EpisodeRecord

    def ep(i, active, rate):
        return EpisodeRecord(i, active, rate, rate >= 0.5, (1.0, 1.0), 1, None)

    c = CourseRecord((ep(0, False, 1.0), ep(1, True, 1.0), ep(2, True, 0.5), ep(3, True, 0.0), ep(4, True, 0.0)))
    assert c.recovery_times == (3,)
    never = CourseRecord((ep(0, False, 1.0), ep(1, True, 1.0), ep(2, True, 1.0)))
    assert never.recovery_times == (3,)
