"""Treatment layer: interventions, service programs, learning and courses.

A :class:`PatientAgent` is an immutable value. Enrolling in a program applies its
precision and policy components once and records what was applied, so that
:func:`withdraw_service` can undo exactly that. Prior flattening is different:
it is applied at the start of every enrolled episode and never undone, like the
percept-driven prior learning that follows each episode.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import engine
from .engine import CategoricalDist, GenerativeModel, Policy, PrecisionSet
from .errors import DuplicatePolicy, InvalidConfig, NotEnrolled, UnknownLabel
from .scenarios import TrialConfig, TrialRecord, WorldScript, hallucination_rate, lesion_policy_space, run_trial

SEVERE_FLATTEN_CAP = 0.2
RELAPSE_THRESHOLD = 0.5
REMISSION_THRESHOLD = 0.05

BOOST_SENSORY_PRECISION = "BoostSensoryPrecision"
EXPAND_POLICY_SPACE = "ExpandPolicySpace"
REDUCE_POLICY_PRECISION = "ReducePolicyPrecision"
FLATTEN_PERCEPTUAL_PRIOR = "FlattenPerceptualPrior"
INTERVENTION_KINDS = (BOOST_SENSORY_PRECISION, EXPAND_POLICY_SPACE, REDUCE_POLICY_PRECISION, FLATTEN_PERCEPTUAL_PRIOR)
PROGRAM_KINDS = ("ACT", "CSC", "TreatmentAsUsual")


@dataclass(frozen=True)
class InterventionSpec:
    """One Figure-4 style change. Only the field matching ``kind`` is used."""

    kind: str
    delta_zeta: float = 0.0
    added: tuple = ()
    delta_gamma: float = 0.0
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in INTERVENTION_KINDS:
            raise InvalidConfig(f"unknown intervention kind {self.kind!r}")
        object.__setattr__(self, "added", tuple(self.added))
        if self.kind == BOOST_SENSORY_PRECISION and not self.delta_zeta > 0:
            raise InvalidConfig("BoostSensoryPrecision needs delta_zeta > 0")
        if self.kind == REDUCE_POLICY_PRECISION and not self.delta_gamma > 0:
            raise InvalidConfig("ReducePolicyPrecision needs delta_gamma > 0")
        if self.kind == FLATTEN_PERCEPTUAL_PRIOR and not 0.0 <= self.lam <= 1.0:
            raise InvalidConfig("FlattenPerceptualPrior needs lambda in [0, 1]")
        if self.kind == EXPAND_POLICY_SPACE:
            if not self.added:
                raise InvalidConfig("ExpandPolicySpace needs at least one policy")
            ids = [p.id for p in self.added]
            if len(set(ids)) != len(ids):
                raise DuplicatePolicy(f"duplicate ids in added policies: {ids}")

    @classmethod
    def boost_sensory_precision(cls, delta_zeta: float) -> "InterventionSpec":
        return cls(BOOST_SENSORY_PRECISION, delta_zeta=delta_zeta)

    @classmethod
    def expand_policy_space(cls, added) -> "InterventionSpec":
        return cls(EXPAND_POLICY_SPACE, added=tuple(added))

    @classmethod
    def reduce_policy_precision(cls, delta_gamma: float) -> "InterventionSpec":
        return cls(REDUCE_POLICY_PRECISION, delta_gamma=delta_gamma)

    @classmethod
    def flatten_perceptual_prior(cls, lam: float) -> "InterventionSpec":
        return cls(FLATTEN_PERCEPTUAL_PRIOR, lam=lam)


@dataclass(frozen=True)
class Enrollment:
    """What enrolling actually changed (deltas after clamping)."""

    program: str
    delta_zeta: float
    delta_gamma: float
    added_ids: tuple
    original_E: CategoricalDist
    before: PrecisionSet
    after: PrecisionSet


@dataclass(frozen=True, eq=False)
class PatientAgent:
    model: GenerativeModel
    precisions: PrecisionSet
    prior_counts: np.ndarray
    eta: float = 0.0
    p_learn: float = 0.0
    supplemented_ids: frozenset = frozenset()
    severity: str = "mild"
    enrollment: Enrollment | None = None

    def __post_init__(self):
        counts = np.array(self.prior_counts, dtype=np.float64)
        if counts.shape != (len(self.model.states),):
            raise InvalidConfig(f"prior_counts needs {len(self.model.states)} entries")
        if not np.all(np.isfinite(counts)) or np.any(counts < 0) or counts.sum() <= 0:
            raise InvalidConfig("prior_counts must be non-negative with a positive total")
        counts.setflags(write=False)
        object.__setattr__(self, "prior_counts", counts)
        if self.eta < 0:
            raise InvalidConfig("eta must be >= 0")
        if not 0.0 <= self.p_learn <= 1.0:
            raise InvalidConfig("p_learn must lie in [0, 1]")
        if self.severity not in ("mild", "severe"):
            raise InvalidConfig(f"severity must be 'mild' or 'severe', got {self.severity!r}")
        object.__setattr__(self, "supplemented_ids", frozenset(self.supplemented_ids))
        if not self.supplemented_ids <= set(self.model.policy_ids):
            raise InvalidConfig("supplemented_ids must be policies of the model")
        d = CategoricalDist(self.model.states, engine.normalize(counts))
        if not d.allclose(self.model.D):
            object.__setattr__(self, "model", self.model.replace(D=d))

    @classmethod
    def from_model(cls, model: GenerativeModel, precisions: PrecisionSet, concentration: float = 10.0, **kw):
        """Patient whose counts reproduce ``model.D`` with total mass ``concentration``."""
        return cls(model, precisions, model.D.probs * concentration, **kw)

    @property
    def D(self) -> CategoricalDist:
        return self.model.D

    def evolve(self, **changes) -> "PatientAgent":
        return replace(self, **changes)

    def __eq__(self, other):
        if not isinstance(other, PatientAgent):
            return NotImplemented
        return (
            self.model == other.model
            and self.precisions == other.precisions
            and np.array_equal(self.prior_counts, other.prior_counts)
            and (self.eta, self.p_learn, self.supplemented_ids, self.severity, self.enrollment)
            == (other.eta, other.p_learn, other.supplemented_ids, other.severity, other.enrollment)
        )

    __hash__ = None


@dataclass(frozen=True)
class ServiceProgram:
    """A bundle of interventions delivered while enrolled.

    ``adherence_effect`` is an extra policy-precision reduction held while
    enrolled. ``application_prob`` is the per-episode chance that the
    policy-precision components actually act (partial medication adherence).
    ``active`` is the per-episode enrollment schedule used by :func:`run_course`.
    """

    kind: str
    components: tuple = ()
    adherence_effect: float = 0.0
    application_prob: float = 1.0
    active: tuple = ()

    def __post_init__(self):
        if self.kind not in PROGRAM_KINDS:
            raise InvalidConfig(f"unknown program kind {self.kind!r}")
        object.__setattr__(self, "components", tuple(self.components))
        object.__setattr__(self, "active", tuple(bool(a) for a in self.active))
        if self.adherence_effect < 0:
            raise InvalidConfig("adherence_effect must be >= 0")
        if not 0.0 <= self.application_prob <= 1.0:
            raise InvalidConfig("application_prob must lie in [0, 1]")
        if self.kind == "TreatmentAsUsual" and any(c.kind != REDUCE_POLICY_PRECISION for c in self.components):
            raise InvalidConfig("TreatmentAsUsual carries only ReducePolicyPrecision")

    def with_schedule(self, active) -> "ServiceProgram":
        return replace(self, active=tuple(active))


# ------------------------------------------------------------------ interventions


def _flatten_counts(patient: PatientAgent, lam: float) -> np.ndarray:
    if patient.severity == "severe":
        lam = min(lam, SEVERE_FLATTEN_CAP)
    d = patient.D.probs
    mixed = (1.0 - lam) * d + lam / d.size
    return mixed * patient.prior_counts.sum()


def _expand(model: GenerativeModel, added) -> GenerativeModel:
    existing = set(model.policy_ids)
    new = [p for p in added if p.id not in existing]
    for p in new:
        if p.horizon != model.horizon:
            raise InvalidConfig(f"policy {p.id!r} has horizon {p.horizon}, model uses {model.horizon}")
        for a in p.actions:
            if a not in model.B.matrices:
                raise UnknownLabel(f"policy {p.id!r} uses unknown action {a!r}")
    policies = model.policies + tuple(new)
    return model.replace(policies=policies, E=CategoricalDist.uniform([p.id for p in policies]))


def apply_intervention(patient: PatientAgent, spec: InterventionSpec) -> PatientAgent:
    prec = patient.precisions
    if spec.kind == BOOST_SENSORY_PRECISION:
        return patient.evolve(precisions=PrecisionSet(prec.zeta + spec.delta_zeta, prec.gamma))
    if spec.kind == REDUCE_POLICY_PRECISION:
        return patient.evolve(precisions=PrecisionSet(prec.zeta, max(0.0, prec.gamma - spec.delta_gamma)))
    if spec.kind == FLATTEN_PERCEPTUAL_PRIOR:
        return patient.evolve(prior_counts=_flatten_counts(patient, spec.lam))
    return patient.evolve(model=_expand(patient.model, spec.added))


def enroll(patient: PatientAgent, program: ServiceProgram) -> PatientAgent:
    """Start a program: hold its precision and policy components until withdrawal."""
    if patient.enrollment is not None:
        raise InvalidConfig(f"patient is already enrolled in {patient.enrollment.program}")
    before = patient
    added = []
    for spec in program.components:
        if spec.kind == FLATTEN_PERCEPTUAL_PRIOR:
            continue
        if spec.kind == EXPAND_POLICY_SPACE:
            present = set(patient.model.policy_ids)
            added.extend(p.id for p in spec.added if p.id not in present)
        patient = apply_intervention(patient, spec)
    if program.adherence_effect > 0:
        patient = apply_intervention(patient, InterventionSpec.reduce_policy_precision(program.adherence_effect))
    record = Enrollment(
        program=program.kind,
        delta_zeta=patient.precisions.zeta - before.precisions.zeta,
        delta_gamma=before.precisions.gamma - patient.precisions.gamma,
        added_ids=tuple(added),
        original_E=before.model.E,
        before=before.precisions,
        after=patient.precisions,
    )
    return patient.evolve(enrollment=record, supplemented_ids=patient.supplemented_ids | set(added))


def withdraw_service(patient: PatientAgent, program: ServiceProgram) -> PatientAgent:
    """End enrollment: undo the recorded deltas and drop policies still on loan.

    Internalized policies stay. Learned prior counts are not touched.
    """
    rec = patient.enrollment
    if rec is None or rec.program != program.kind:
        raise NotEnrolled(f"patient is not enrolled in {program.kind}")
    if patient.precisions == rec.after:
        # untouched since enrollment: restore exactly rather than via float round trips
        prec = rec.before
    else:
        prec = PrecisionSet(max(0.0, patient.precisions.zeta - rec.delta_zeta), patient.precisions.gamma + rec.delta_gamma)
    on_loan = [pid for pid in rec.added_ids if pid in patient.supplemented_ids]
    model = lesion_policy_space(patient.model, on_loan) if on_loan else patient.model
    if set(model.policy_ids) == set(rec.original_E.labels):
        model = model.replace(E=rec.original_E)
    return patient.evolve(
        model=model,
        precisions=prec,
        supplemented_ids=patient.supplemented_ids - set(on_loan),
        enrollment=None,
    )


# ------------------------------------------------------------------ learning


def _percept_states(model: GenerativeModel) -> dict:
    # each observation label maps to the state most likely to emit it
    a = model.A.matrix
    return {o: model.states[engine.argmax_lowest(a[:, j])] for j, o in enumerate(model.observations)}


def update_perceptual_prior(patient: PatientAgent, record: TrialRecord) -> PatientAgent:
    """Add ``eta`` to the count of the state each percept implies.

    Severe patients only deepen: percepts implying the state ``D`` already favours
    are counted, the others are ignored.
    """
    if patient.eta == 0 or not record.steps:
        return patient
    to_state = _percept_states(patient.model)
    favoured = patient.D.argmax()
    counts = patient.prior_counts.copy()
    for s in record.steps:
        state = to_state[s.percept]
        if patient.severity == "severe" and state != favoured:
            continue
        counts[patient.model.states.index(state)] += patient.eta
    return patient.evolve(prior_counts=counts)


def policy_learning_step(patient: PatientAgent, rng_seed: int) -> PatientAgent:
    """Each supplemented policy is internalized with probability ``p_learn``."""
    if not patient.supplemented_ids:
        return patient
    rng = np.random.default_rng(rng_seed)
    ordered = sorted(patient.supplemented_ids)
    learned = {pid for pid, u in zip(ordered, rng.random(len(ordered))) if u < patient.p_learn}
    return patient.evolve(supplemented_ids=patient.supplemented_ids - learned)


# ------------------------------------------------------------------ episodes


@dataclass(frozen=True)
class EpisodeRecord:
    index: int
    service_active: bool
    rate: float
    relapse: bool
    prior_counts: tuple
    utilized_policies: int
    trial: TrialRecord = field(repr=False, compare=False)


def _seeds(seed: int, n: int) -> list:
    return [int(s) for s in np.random.SeedSequence(seed & 0xFFFFFFFFFFFFFFFF).generate_state(n)]


def run_episode(
    patient: PatientAgent,
    program: ServiceProgram | None,
    world: WorldScript,
    seed: int,
    index: int = 0,
    relapse_threshold: float = RELAPSE_THRESHOLD,
):
    """One clinical episode.

    Order: program components, trial, prior learning, policy learning (enrolled
    only). With ``program`` given the patient is enrolled on entry if needed; with
    ``None`` the patient's current enrollment (if any) is left as is.
    """
    trial_seed, adherence_seed, learn_seed = _seeds(seed, 3)
    if program is not None:
        if patient.enrollment is None:
            patient = enroll(patient, program)
        elif patient.enrollment.program != program.kind:
            raise InvalidConfig(f"patient is enrolled in {patient.enrollment.program}, not {program.kind}")
        for spec in program.components:
            if spec.kind == FLATTEN_PERCEPTUAL_PRIOR:
                patient = apply_intervention(patient, spec)
    acting = patient
    if program is not None and program.application_prob < 1.0:
        if np.random.default_rng(adherence_seed).random() >= program.application_prob:
            # missed doses: policy-precision reduction does not act this episode
            p = patient.precisions
            acting = patient.evolve(precisions=PrecisionSet(p.zeta, p.gamma + patient.enrollment.delta_gamma))
    record = run_trial(TrialConfig(acting.model, world, acting.precisions, seed=trial_seed))
    patient = update_perceptual_prior(patient, record)
    if program is not None:
        patient = policy_learning_step(patient, learn_seed)
    rate = hallucination_rate(record)
    episode = EpisodeRecord(
        index=index,
        service_active=program is not None,
        rate=rate,
        relapse=rate >= relapse_threshold,
        prior_counts=tuple(float(c) for c in patient.prior_counts),
        utilized_policies=len({s.argmax_policy for s in record.steps}),
        trial=record,
    )
    return patient, episode


@dataclass(frozen=True)
class CourseRecord:
    episodes: tuple
    relapse_threshold: float = RELAPSE_THRESHOLD
    remission_threshold: float = REMISSION_THRESHOLD
    final_patient: PatientAgent | None = field(default=None, compare=False, repr=False)

    @property
    def relapse_count(self) -> int:
        return sum(e.relapse for e in self.episodes)

    @property
    def rates(self) -> tuple:
        return tuple(e.rate for e in self.episodes)

    def d_trace(self, state_index: int = 0) -> tuple:
        return tuple(e.prior_counts[state_index] / sum(e.prior_counts) for e in self.episodes)

    @property
    def recovery_times(self) -> tuple:
        """Length of each treated stretch that starts in relapse, up to remission.

        A stretch that never reaches remission counts as its full length plus one.
        """
        out = []
        i, eps = 0, self.episodes
        while i < len(eps):
            if eps[i].service_active and (i == 0 or not eps[i - 1].service_active):
                if i > 0 and eps[i - 1].relapse:
                    n, j = 0, i
                    while j < len(eps) and eps[j].service_active:
                        n += 1
                        if eps[j].rate < self.remission_threshold:
                            break
                        j += 1
                    else:
                        n += 1
                    out.append(n)
            i += 1
        return tuple(out)


def run_course(
    patient: PatientAgent,
    schedule,
    n_episodes: int,
    seeds,
    world: WorldScript,
    relapse_threshold: float = RELAPSE_THRESHOLD,
    remission_threshold: float = REMISSION_THRESHOLD,
) -> CourseRecord:
    """Chain episodes; ``schedule[e]`` is the program for episode ``e`` or None.

    A change of program between episodes withdraws the old one first.
    """
    schedule = list(schedule)
    seeds = list(seeds)
    if n_episodes < 1:
        raise InvalidConfig("n_episodes must be >= 1")
    if len(schedule) != n_episodes or len(seeds) != n_episodes:
        raise InvalidConfig("schedule and seeds need one entry per episode")
    episodes = []
    current = None
    for e in range(n_episodes):
        program = schedule[e]
        if current is not None and (program is None or program.kind != current.kind):
            patient = withdraw_service(patient, current)
        current = program
        patient, ep = run_episode(patient, program, world, seeds[e], e, relapse_threshold)
        episodes.append(ep)
    return CourseRecord(tuple(episodes), relapse_threshold, remission_threshold, patient)
