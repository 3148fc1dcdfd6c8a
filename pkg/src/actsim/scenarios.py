"""Worlds, trials and hallucination metrics.

Two scenarios are provided:

* the turn-taking duet: a scripted partner speaks on every odd step, the agent
  chooses between listening and speaking and must infer whether the partner is
  speaking or there is silence;
* the song: the partner sings a fixed word order, the agent may believe the
  order is standard or has its last two words swapped.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import engine
from .engine import (
    CategoricalDist,
    GenerativeModel,
    LikelihoodMatrix,
    Policy,
    PrecisionSet,
    TransitionSet,
)
from .errors import EmptyPolicySpace, InvalidConfig, PolicySpaceTooLarge, UndefinedRate, UnknownLabel

# duet labels; observation order puts the silence-class label first so that
# argmax ties resolve to the non-hallucinatory percept
OTHER_SPEAKING = "other_speaking"
SILENCE = "silence"
HEAR = "hear"
QUIET = "quiet"
LISTEN = "listen"
SPEAK = "speak"
DUET_STATES = (OTHER_SPEAKING, SILENCE)
DUET_OBSERVATIONS = (QUIET, HEAR)
DUET_ACTIONS = (LISTEN, SPEAK)
SOUND_OBS = frozenset({HEAR})
SILENCE_STATES = frozenset({SILENCE})
SOUND_STATES = frozenset({OTHER_SPEAKING})
PERCEPT_TO_STATE = {HEAR: OTHER_SPEAKING, QUIET: SILENCE}

SING = "sing_along"
SONG_ACTIONS = (SING, LISTEN)
SONG_WORDS = ("row", "your", "boat", "gently", "down")

MAX_FULL_HORIZON = 8
_CODES = {LISTEN: "L", SPEAK: "S", SING: "G"}


def policy_id(actions) -> str:
    return "".join(_CODES.get(a, a[:1].upper()) for a in actions)


def matched_policy_actions(horizon: int) -> tuple:
    """Listen on even steps (the partner speaks next), speak on odd steps."""
    return tuple(LISTEN if k % 2 == 0 else SPEAK for k in range(horizon))


# ------------------------------------------------------------------ world


@dataclass(frozen=True)
class WorldScript:
    """Scripted world: a state sequence plus the emission rule.

    ``emissions`` maps each world state to its noiseless observation. With
    ``noise > 0`` each emission is replaced, with that probability, by a uniformly
    drawn different observation (seeded by ``seed``).
    """

    true_states: tuple
    emissions: dict
    observations: tuple
    noise: float = 0.0
    seed: int = 0
    kind: str = "duet"

    def __post_init__(self):
        object.__setattr__(self, "true_states", tuple(self.true_states))
        object.__setattr__(self, "observations", tuple(self.observations))
        if not self.true_states:
            raise InvalidConfig("a world script needs at least one step")
        if not 0.0 <= self.noise <= 1.0:
            raise InvalidConfig(f"emission noise must lie in [0, 1], got {self.noise}")
        for s in self.true_states:
            if s not in self.emissions:
                raise UnknownLabel(f"world state {s!r} has no emission")
        for o in self.emissions.values():
            if o not in self.observations:
                raise UnknownLabel(f"emission {o!r} is not an observation label")
        if self.kind not in ("duet", "song"):
            raise InvalidConfig(f"unknown world kind {self.kind!r}")

    def __len__(self):
        return len(self.true_states)

    def observation_sequence(self) -> tuple:
        clean = [self.emissions[s] for s in self.true_states]
        if self.noise == 0.0:
            return tuple(clean)
        rng = np.random.default_rng(self.seed)
        out = []
        for o in clean:
            if rng.random() < self.noise:
                others = [x for x in self.observations if x != o]
                o = others[int(rng.integers(len(others)))]
            out.append(o)
        return tuple(out)

    def with_noise(self, noise: float, seed: int) -> "WorldScript":
        return WorldScript(self.true_states, self.emissions, self.observations, noise, seed, self.kind)


def build_duet_world(T: int, noise: float = 0.0, seed: int = 0) -> WorldScript:
    if T < 2:
        raise InvalidConfig(f"duet world needs T >= 2, got {T}")
    states = tuple(SILENCE if t % 2 == 0 else OTHER_SPEAKING for t in range(T))
    return WorldScript(states, {SILENCE: QUIET, OTHER_SPEAKING: HEAR}, DUET_OBSERVATIONS, noise, seed, "duet")


# ------------------------------------------------------------------ models


def _duet_likelihood(reliability: float) -> LikelihoodMatrix:
    r = reliability
    # rows: other_speaking, silence; columns: quiet, hear
    return LikelihoodMatrix(DUET_STATES, DUET_OBSERVATIONS, [[1 - r, r], [r, 1 - r]])


def _duet_transitions(reliability: float) -> TransitionSet:
    b = reliability
    # listening expects the partner to be speaking next; speaking expects silence
    return TransitionSet(
        DUET_STATES,
        {
            LISTEN: [[b, 1 - b], [b, 1 - b]],
            SPEAK: [[1 - b, b], [1 - b, b]],
        },
    )


def duet_policies(policy_set: str, horizon: int) -> list:
    if policy_set == "matched_only":
        seqs = [matched_policy_actions(horizon)]
    elif policy_set in ("full", "listening_biased"):
        if horizon > MAX_FULL_HORIZON:
            raise PolicySpaceTooLarge(f"2^{horizon} policies exceeds the H <= {MAX_FULL_HORIZON} limit")
        seqs = list(itertools.product(DUET_ACTIONS, repeat=horizon))
    else:
        raise InvalidConfig(f"unknown policy set {policy_set!r}")
    return [Policy(policy_id(s), s) for s in seqs]


def listening_prior(policies, bias: float) -> np.ndarray:
    """Policy prior with log-weight ``bias`` per listening action."""
    n_listen = np.array([sum(a == LISTEN for a in p.actions) for p in policies], dtype=np.float64)
    return engine.normalize(np.exp(bias * (n_listen - n_listen.max())))


def build_duet_model(
    strong_prior: float = 0.9,
    policy_set: str = "full",
    horizon: int = 4,
    *,
    reliability: float = 0.9,
    transition_reliability: float = 0.9,
    listening_bias: float = 1.0,
    prior_weight: float = 0.4,
    evidence_decay: float = 0.5,
    evidence_gain: float = 0.5,
    preferences=None,
) -> GenerativeModel:
    """Generative model of the turn-taking duet.

    ``listening_bias`` only applies to the ``listening_biased`` set, whose prior
    favours sequences with more listening; the other sets have a flat prior.
    ``preferences`` defaults to a flat distribution over observations.
    """
    if horizon < 2 or horizon % 2:
        raise InvalidConfig(f"duet horizon must be even and >= 2, got {horizon}")
    if not 0.0 <= strong_prior <= 1.0:
        raise InvalidConfig(f"strong_prior must lie in [0, 1], got {strong_prior}")
    policies = duet_policies(policy_set, horizon)
    ids = [p.id for p in policies]
    if policy_set == "listening_biased":
        e = listening_prior(policies, listening_bias)
    else:
        e = np.full(len(policies), 1.0 / len(policies))
    c = CategoricalDist.uniform(DUET_OBSERVATIONS) if preferences is None else CategoricalDist(
        DUET_OBSERVATIONS, engine.normalize([preferences[o] for o in DUET_OBSERVATIONS])
    )
    return GenerativeModel(
        states=DUET_STATES,
        observations=DUET_OBSERVATIONS,
        actions=DUET_ACTIONS,
        A=_duet_likelihood(reliability),
        B=_duet_transitions(transition_reliability),
        C=c,
        D=CategoricalDist(DUET_STATES, [strong_prior, 1.0 - strong_prior]),
        policies=policies,
        E=CategoricalDist(ids, e),
        prior_weight=prior_weight,
        evidence_decay=evidence_decay,
        evidence_gain=evidence_gain,
        name=f"duet/{policy_set}",
    )


def song_order(order_belief: str, n_words: int) -> tuple:
    words = SONG_WORDS[:n_words]
    if order_belief == "standard":
        return words
    if order_belief == "altered":
        return words[:-2] + (words[-1], words[-2])
    raise InvalidConfig(f"order_belief must be 'standard' or 'altered', got {order_belief!r}")


def _song_state(pos: int, word: str) -> str:
    return f"{pos}:{word}"


def build_song_model(
    order_belief: str = "standard",
    n_words: int = 4,
    *,
    reliability: float = 0.9,
    transition_reliability: float = 0.9,
    horizon: int = 2,
) -> GenerativeModel:
    """Song model: hidden state = (position in the song, word sung there).

    The agent expects the word order given by ``order_belief``. ``D`` describes the
    state just before the trial starts (the last word of a previous pass), so the
    first prior is the first word of the believed order.
    """
    if not 2 <= n_words <= len(SONG_WORDS):
        raise InvalidConfig(f"n_words must lie in [2, {len(SONG_WORDS)}], got {n_words}")
    words = SONG_WORDS[:n_words]
    order = song_order(order_belief, n_words)
    states = tuple(_song_state(p, w) for p in range(n_words) for w in words)
    n_s, n_o = len(states), n_words
    a = np.full((n_s, n_o), (1 - reliability) / (n_o - 1))
    for i, s in enumerate(states):
        a[i, words.index(s.split(":", 1)[1])] = reliability
    b = np.full((n_s, n_s), (1 - transition_reliability) / (n_s - 1))
    for i, s in enumerate(states):
        nxt = (int(s.split(":", 1)[0]) + 1) % n_words
        b[i, states.index(_song_state(nxt, order[nxt]))] = transition_reliability
    d = np.full(n_s, (1 - transition_reliability) / (n_s - 1))
    d[states.index(_song_state(n_words - 1, order[-1]))] = transition_reliability
    policies = [Policy(policy_id(s), s) for s in itertools.product(SONG_ACTIONS, repeat=horizon)]
    return GenerativeModel(
        states=states,
        observations=words,
        actions=SONG_ACTIONS,
        A=LikelihoodMatrix(states, words, a),
        B=TransitionSet(states, {act: b for act in SONG_ACTIONS}),
        C=CategoricalDist.uniform(words),
        D=CategoricalDist(states, d),
        policies=policies,
        E=CategoricalDist.uniform([p.id for p in policies]),
        prior_weight=0.0,
        name=f"song/{order_belief}",
    )


def build_song_world(T: int, n_words: int = 4) -> WorldScript:
    """The partner sings the standard order, repeating the song as needed."""
    if T < 1:
        raise InvalidConfig("song world needs T >= 1")
    words = SONG_WORDS[:n_words]
    states = tuple(_song_state(t % n_words, words[t % n_words]) for t in range(T))
    emissions = {_song_state(p, w): w for p, w in enumerate(words)}
    return WorldScript(states, emissions, words, 0.0, 0, "song")


def lesion_policy_space(model: GenerativeModel, remove_ids) -> GenerativeModel:
    """Copy of ``model`` without the given policies; survivors keep their relative prior."""
    remove = set(remove_ids)
    unknown = remove - set(model.policy_ids)
    if unknown:
        raise UnknownLabel(f"cannot lesion unknown policies {sorted(unknown)}")
    keep = [i for i, p in enumerate(model.policies) if p.id not in remove]
    if not keep:
        raise EmptyPolicySpace("lesion would remove every policy")
    weights = model.E.probs[keep]
    if weights.sum() <= 0:
        weights = np.ones(len(keep))
    policies = [model.policies[i] for i in keep]
    return model.replace(
        policies=tuple(policies),
        E=CategoricalDist([p.id for p in policies], engine.normalize(weights)),
        name=f"{model.name}/lesioned" if model.name else "lesioned",
    )


def keep_only(model: GenerativeModel, keep_ids) -> GenerativeModel:
    keep = set(keep_ids)
    return lesion_policy_space(model, [pid for pid in model.policy_ids if pid not in keep])


# ------------------------------------------------------------------ trials


@dataclass(frozen=True)
class TrialConfig:
    model: GenerativeModel
    world: WorldScript
    precisions: PrecisionSet
    T: int | None = None
    seed: int = 0
    mode: str = "argmax"

    def __post_init__(self):
        T = len(self.world) if self.T is None else int(self.T)
        if T < 1 or T > len(self.world):
            raise InvalidConfig(f"T={T} must lie in [1, {len(self.world)}]")
        object.__setattr__(self, "T", T)
        if self.mode not in ("argmax", "sample"):
            raise InvalidConfig(f"unknown selection mode {self.mode!r}")
        if self.world.observations != self.model.observations and set(self.world.observations) - set(
            self.model.observations
        ):
            raise InvalidConfig("world emits observations the model does not know")


@dataclass(frozen=True, eq=False)
class TrialStep:
    t: int
    world_state: str
    observation: str
    q_state: CategoricalDist
    percept: str
    confidence: float
    action: str
    argmax_policy: str
    hallucination: bool
    miss: bool
    eligible: bool

    def __eq__(self, other):
        if not isinstance(other, TrialStep):
            return NotImplemented
        return (
            self.t,
            self.world_state,
            self.observation,
            self.percept,
            self.confidence,
            self.action,
            self.argmax_policy,
            self.hallucination,
            self.miss,
            self.eligible,
        ) == (
            other.t,
            other.world_state,
            other.observation,
            other.percept,
            other.confidence,
            other.action,
            other.argmax_policy,
            other.hallucination,
            other.miss,
            other.eligible,
        ) and self.q_state == other.q_state

    __hash__ = None


@dataclass(frozen=True, eq=False)
class TrialRecord:
    steps: tuple
    model_name: str = ""
    kind: str = "duet"
    hallucination_count: int = field(init=False)
    miss_count: int = field(init=False)
    eligible_count: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        object.__setattr__(self, "hallucination_count", sum(s.hallucination for s in self.steps))
        object.__setattr__(self, "miss_count", sum(s.miss for s in self.steps))
        object.__setattr__(self, "eligible_count", sum(s.eligible for s in self.steps))

    def __len__(self):
        return len(self.steps)

    def __eq__(self, other):
        if not isinstance(other, TrialRecord):
            return NotImplemented
        return self.kind == other.kind and self.steps == other.steps

    __hash__ = None

    @property
    def percepts(self) -> tuple:
        return tuple(s.percept for s in self.steps)

    @property
    def world_states(self) -> tuple:
        return tuple(s.world_state for s in self.steps)

    def miss_rate(self) -> float:
        sound = sum(s.world_state in SOUND_STATES for s in self.steps) if self.kind == "duet" else 0
        return self.miss_count / sound if sound else 0.0

    def summary(self) -> dict:
        return {
            "steps": len(self.steps),
            "hallucinations": self.hallucination_count,
            "misses": self.miss_count,
            "eligible_steps": self.eligible_count,
        }


def _classify(kind: str, world_state: str, emitted: str, percept: str):
    """(hallucination, miss, eligible) for one step."""
    if kind == "duet":
        silent = world_state in SILENCE_STATES
        heard = percept in SOUND_OBS
        return silent and heard, (world_state in SOUND_STATES) and not heard, silent
    # song: a hallucinated token is a percept differing from the word actually sung
    return percept != emitted, False, True


def _step_seed(seed: int, t: int) -> int:
    return int(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, t]).generate_state(1)[0])


def run_trial(config: TrialConfig) -> TrialRecord:
    model, world, prec = config.model, config.world, config.precisions
    observations = world.observation_sequence()
    belief = engine.initial_belief(model, prec.gamma)
    steps = []
    for t in range(config.T):
        obs = observations[t]
        belief, percept, action = engine.step(belief, obs, model, prec, config.mode, _step_seed(config.seed, t))
        state = world.true_states[t]
        halluc, miss, eligible = _classify(world.kind, state, world.emissions[state], percept.label)
        steps.append(
            TrialStep(
                t=t,
                world_state=state,
                observation=obs,
                q_state=belief.posterior,
                percept=percept.label,
                confidence=percept.confidence,
                action=action,
                argmax_policy=belief.q_policy.argmax(),
                hallucination=halluc,
                miss=miss,
                eligible=eligible,
            )
        )
    return TrialRecord(tuple(steps), model.name, world.kind)


def hallucination_rate(record: TrialRecord) -> float:
    if record.eligible_count == 0:
        raise UndefinedRate("record has no silence-class steps")
    return record.hallucination_count / record.eligible_count


def policy_space_size_metric(model: GenerativeModel, records) -> tuple:
    """(policies available, distinct argmax policies seen across the records)."""
    used = {s.argmax_policy for r in records for s in r.steps}
    unknown = used - set(model.policy_ids)
    if unknown:
        raise InvalidConfig(f"records mention policies not in this model: {sorted(unknown)}")
    return len(model.policies), len(used)
