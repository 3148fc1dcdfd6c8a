"""Categorical active-inference machinery.

Beliefs are finite categorical distributions. Sensory precision ``zeta`` is an
exponent on the likelihood during state inference; policy-prior precision
``gamma`` is an inverse temperature on ``log E - G`` during policy inference.
Everything here is a pure function over immutable values.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .errors import (
    DegenerateDistribution,
    HorizonExceeded,
    InvalidConfig,
    InvalidPrecision,
    ShapeError,
    UnknownLabel,
)

LIKELIHOOD_FLOOR = 1e-6
NORM_TOL = 1e-9
# relative gap below which two probabilities count as tied for argmax
TIE_TOL = 1e-12


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=np.float64)
    out.setflags(write=False)
    return out


def _index_of(labels: tuple, label) -> int:
    try:
        return labels.index(label)
    except ValueError:
        raise UnknownLabel(f"unknown label {label!r}; expected one of {list(labels)}") from None


def argmax_lowest(values) -> int:
    """Index of the maximum, ties (within TIE_TOL) resolved to the lowest index."""
    values = np.asarray(values, dtype=np.float64)
    top = values.max()
    return int(np.flatnonzero(values >= top - TIE_TOL * max(1.0, abs(top)))[0])


# ---------------------------------------------------------------- domain types


@dataclass(frozen=True, eq=False)
class CategoricalDist:
    labels: tuple
    probs: np.ndarray

    def __post_init__(self):
        labels = tuple(self.labels)
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 1 or probs.shape[0] != len(labels):
            raise ShapeError(f"{len(labels)} labels but probs has shape {probs.shape}")
        if len(set(labels)) != len(labels):
            raise InvalidConfig(f"duplicate labels in {labels}")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise DegenerateDistribution(f"probabilities must be finite and >= 0: {probs}")
        if abs(probs.sum() - 1.0) > NORM_TOL:
            raise DegenerateDistribution(f"probabilities sum to {probs.sum()!r}, not 1")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "probs", _frozen(probs))

    @classmethod
    def uniform(cls, labels) -> "CategoricalDist":
        labels = tuple(labels)
        return cls(labels, np.full(len(labels), 1.0 / len(labels)))

    @classmethod
    def from_weights(cls, labels, weights) -> "CategoricalDist":
        return cls(tuple(labels), normalize(weights))

    def __getitem__(self, label) -> float:
        return float(self.probs[_index_of(self.labels, label)])

    def __len__(self):
        return len(self.labels)

    def __eq__(self, other):
        if not isinstance(other, CategoricalDist):
            return NotImplemented
        return self.labels == other.labels and np.array_equal(self.probs, other.probs)

    def __hash__(self):
        return hash((self.labels, self.probs.tobytes()))

    def allclose(self, other: "CategoricalDist", atol: float = NORM_TOL) -> bool:
        return self.labels == other.labels and bool(np.all(np.abs(self.probs - other.probs) <= atol))

    def argmax(self):
        return self.labels[argmax_lowest(self.probs)]

    def to_dict(self) -> dict:
        return {label: float(p) for label, p in zip(self.labels, self.probs)}

    def __repr__(self):
        body = ", ".join(f"{label}={p:.4g}" for label, p in zip(self.labels, self.probs))
        return f"CategoricalDist({body})"


def _row_stochastic(matrix, name: str) -> np.ndarray:
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)) or np.any(m < 0):
        raise DegenerateDistribution(f"{name} has negative or non-finite entries")
    sums = m.sum(axis=1)
    if np.any(sums <= 0):
        raise DegenerateDistribution(f"{name} has an all-zero row")
    return m / sums[:, None]


@dataclass(frozen=True, eq=False)
class LikelihoodMatrix:
    """P(observation | state); rows are states. Entries are floored at 1e-6."""

    states: tuple
    observations: tuple
    matrix: np.ndarray

    def __post_init__(self):
        states, obs = tuple(self.states), tuple(self.observations)
        m = _row_stochastic(self.matrix, "likelihood")
        if m.shape != (len(states), len(obs)):
            raise ShapeError(f"likelihood shape {m.shape} != ({len(states)}, {len(obs)})")
        m = np.maximum(m, LIKELIHOOD_FLOOR)
        m = m / m.sum(axis=1, keepdims=True)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "matrix", _frozen(m))

    def row(self, state) -> CategoricalDist:
        return CategoricalDist(self.observations, self.matrix[_index_of(self.states, state)])

    def column(self, obs) -> np.ndarray:
        return self.matrix[:, _index_of(self.observations, obs)]

    def row_entropy(self) -> np.ndarray:
        m = self.matrix
        return -(m * np.log(m)).sum(axis=1)

    def __eq__(self, other):
        if not isinstance(other, LikelihoodMatrix):
            return NotImplemented
        return (self.states, self.observations) == (other.states, other.observations) and np.array_equal(
            self.matrix, other.matrix
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class TransitionSet:
    """One row-stochastic matrix per action; row = current state, column = next state."""

    states: tuple
    matrices: Mapping[str, np.ndarray]

    def __post_init__(self):
        states = tuple(self.states)
        mats = {}
        for action, m in self.matrices.items():
            m = _row_stochastic(m, f"transition[{action}]")
            if m.shape != (len(states), len(states)):
                raise ShapeError(f"transition[{action}] shape {m.shape} != {(len(states),) * 2}")
            mats[action] = _frozen(m)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "matrices", mats)

    @property
    def actions(self) -> tuple:
        return tuple(self.matrices)

    def __getitem__(self, action) -> np.ndarray:
        try:
            return self.matrices[action]
        except KeyError:
            raise UnknownLabel(f"unknown action {action!r}; expected one of {list(self.matrices)}") from None

    def stack(self, actions: Sequence[str]) -> np.ndarray:
        return np.stack([self[a] for a in actions])

    def __eq__(self, other):
        if not isinstance(other, TransitionSet):
            return NotImplemented
        return (
            self.states == other.states
            and self.actions == other.actions
            and all(np.array_equal(self.matrices[a], other.matrices[a]) for a in self.actions)
        )

    __hash__ = None


@dataclass(frozen=True)
class Policy:
    id: str
    actions: tuple

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(self.actions))
        if not self.actions:
            raise InvalidConfig(f"policy {self.id!r} has no actions")

    @property
    def horizon(self) -> int:
        return len(self.actions)


@dataclass(frozen=True, eq=False)
class GenerativeModel:
    """The agent's model of its world.

    Besides the usual ``A, B, C, D, E`` and policy list, two settings control how
    the perceptual prior and past evidence enter each step:

    ``prior_weight``
        exponent on ``D`` when it is folded into every step's prior (0 = ``D``
        only seeds the first step's prediction).
    ``evidence_decay``
        per-step retention of each policy's accumulated prediction error.
    ``evidence_gain``
        scale of that accumulated error inside the policy posterior.
    """

    states: tuple
    observations: tuple
    actions: tuple
    A: LikelihoodMatrix
    B: TransitionSet
    C: CategoricalDist
    D: CategoricalDist
    policies: tuple
    E: CategoricalDist
    prior_weight: float = 1.0
    evidence_decay: float = 0.8
    evidence_gain: float = 1.0
    name: str = ""
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for attr in ("states", "observations", "actions", "policies"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))
        if not self.policies:
            from .errors import EmptyPolicySpace

            raise EmptyPolicySpace("a generative model needs at least one policy")
        if self.A.states != self.states or self.A.observations != self.observations:
            raise ShapeError("A labels do not match the model's states/observations")
        if self.B.states != self.states:
            raise ShapeError("B labels do not match the model's states")
        if set(self.B.actions) != set(self.actions):
            raise ShapeError(f"B actions {self.B.actions} != model actions {self.actions}")
        if self.C.labels != self.observations:
            raise ShapeError("C must be a distribution over observations")
        if self.D.labels != self.states:
            raise ShapeError("D must be a distribution over states")
        ids = [p.id for p in self.policies]
        if len(set(ids)) != len(ids):
            from .errors import DuplicatePolicy

            raise DuplicatePolicy(f"duplicate policy ids in {ids}")
        if self.E.labels != tuple(ids):
            raise ShapeError("E must be a distribution over the policy ids, in policy order")
        horizons = {p.horizon for p in self.policies}
        if len(horizons) != 1:
            raise ShapeError(f"policies disagree on horizon: {sorted(horizons)}")
        for p in self.policies:
            for a in p.actions:
                if a not in self.B.matrices:
                    raise UnknownLabel(f"policy {p.id!r} uses unknown action {a!r}")
        for attr in ("prior_weight", "evidence_decay", "evidence_gain"):
            v = float(getattr(self, attr))
            if not np.isfinite(v) or v < 0:
                raise InvalidConfig(f"{attr} must be finite and >= 0, got {v}")
            object.__setattr__(self, attr, v)
        if self.evidence_decay > 1:
            raise InvalidConfig("evidence_decay must lie in [0, 1]")

    @property
    def horizon(self) -> int:
        return self.policies[0].horizon

    @property
    def policy_ids(self) -> tuple:
        return tuple(p.id for p in self.policies)

    def policy(self, pid) -> Policy:
        for p in self.policies:
            if p.id == pid:
                return p
        raise UnknownLabel(f"unknown policy id {pid!r}")

    # dense views used by the kernels; computed once per model value
    def arrays(self) -> dict:
        if not self._cache:
            action_index = {a: i for i, a in enumerate(self.actions)}
            self._cache.update(
                b_stack=np.ascontiguousarray(self.B.stack(self.actions)),
                pol_actions=np.array(
                    [[action_index[a] for a in p.actions] for p in self.policies], dtype=np.int64
                ),
                a_mat=np.ascontiguousarray(self.A.matrix),
                log_a=np.log(self.A.matrix),
                log_c=np.log(np.maximum(self.C.probs, 1e-300)),
                row_entropy=self.A.row_entropy(),
                log_e=np.log(np.maximum(self.E.probs, 1e-300)),
                e_support=self.E.probs > 0,
                d_weight=np.maximum(self.D.probs, 1e-300) ** self.prior_weight,
            )
        return self._cache

    def replace(self, **changes) -> "GenerativeModel":
        changes.setdefault("_cache", {})
        return replace(self, **changes)

    def __eq__(self, other):
        if not isinstance(other, GenerativeModel):
            return NotImplemented
        return (
            self.states == other.states
            and self.observations == other.observations
            and self.actions == other.actions
            and self.A == other.A
            and self.B == other.B
            and self.C == other.C
            and self.D == other.D
            and self.policies == other.policies
            and self.E == other.E
            and (self.prior_weight, self.evidence_decay, self.evidence_gain)
            == (other.prior_weight, other.evidence_decay, other.evidence_gain)
        )

    __hash__ = None


def _check_precision(value, name) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise InvalidPrecision(f"{name} must be a real number, got {value!r}") from None
    if not np.isfinite(v) or v < 0:
        raise InvalidPrecision(f"{name} must be finite and >= 0, got {v}")
    return v


@dataclass(frozen=True)
class PrecisionSet:
    zeta: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "zeta", _check_precision(self.zeta, "zeta"))
        object.__setattr__(self, "gamma", _check_precision(self.gamma, "gamma"))


@dataclass(frozen=True, eq=False)
class BeliefState:
    """Agent belief entering timestep ``t``.

    ``q_state`` is the prior for step ``t``; ``posterior`` is the belief after the
    previous step's observation (None before the first step). ``policy_evidence``
    holds the decayed prediction error of each policy, ``predictions`` each
    policy's predicted state distribution for step ``t``.
    """

    q_state: CategoricalDist
    q_policy: CategoricalDist
    t: int = 0
    policy_evidence: np.ndarray | None = None
    predictions: np.ndarray | None = None
    posterior: CategoricalDist | None = None

    def __post_init__(self):
        if self.t < 0:
            raise InvalidConfig("t must be >= 0")
        for attr in ("policy_evidence", "predictions"):
            v = getattr(self, attr)
            if v is not None:
                object.__setattr__(self, attr, _frozen(v))

    def __eq__(self, other):
        if not isinstance(other, BeliefState):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is b
            return np.array_equal(a, b)

        return (
            self.t == other.t
            and self.q_state == other.q_state
            and self.q_policy == other.q_policy
            and self.posterior == other.posterior
            and same(self.policy_evidence, other.policy_evidence)
            and same(self.predictions, other.predictions)
        )

    __hash__ = None


@dataclass(frozen=True)
class Percept:
    label: str
    confidence: float
    source_posterior: CategoricalDist


# ------------------------------------------------------------------ operations


def normalize(v) -> np.ndarray:
    """Scale a non-negative vector to sum to one."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DegenerateDistribution("need a non-empty 1-D vector")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise DegenerateDistribution(f"entries must be finite and >= 0: {arr}")
    total = arr.sum()
    if total <= 0:
        raise DegenerateDistribution("vector sums to zero")
    return arr / total


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max())
    return z / z.sum()


def state_update(prior: CategoricalDist, obs, A: LikelihoodMatrix, zeta) -> CategoricalDist:
    """Precision-weighted Bayes: posterior ∝ prior · A[:, obs] ** zeta."""
    zeta = _check_precision(zeta, "zeta")
    if prior.labels != A.states:
        raise ShapeError("prior and likelihood disagree on states")
    col = A.column(obs)
    if zeta == 0.0:
        return prior
    with np.errstate(divide="ignore"):
        logits = np.log(prior.probs) + zeta * np.log(col)
    if not np.any(np.isfinite(logits)):
        raise DegenerateDistribution("prior has no support")
    return CategoricalDist(prior.labels, _softmax(logits))


def predict(belief: CategoricalDist, action, B: TransitionSet) -> CategoricalDist:
    m = B[action]
    if belief.labels != B.states:
        raise ShapeError("belief and transitions disagree on states")
    return CategoricalDist(belief.labels, normalize(belief.probs @ m))


def expected_observations(belief: CategoricalDist, A: LikelihoodMatrix) -> CategoricalDist:
    if belief.labels != A.states:
        raise ShapeError(f"belief over {belief.labels} but likelihood rows are {A.states}")
    return CategoricalDist(A.observations, normalize(belief.probs @ A.matrix))


def expected_free_energy(model: GenerativeModel, policy: Policy, belief: CategoricalDist, zeta=1.0, start: int = 0):
    """Risk plus ambiguity summed over the policy's horizon.

    ``start`` is the position in the (cyclic) action sequence to roll from. ``zeta``
    is accepted for interface symmetry; the score does not depend on it.
    """
    _check_precision(zeta, "zeta")
    if belief.labels != model.states:
        raise ShapeError("belief and model disagree on states")
    g = 0.0
    q = belief
    h = policy.horizon
    for k in range(h):
        q = predict(q, policy.actions[(start + k) % h], model.B)
        qo = expected_observations(q, model.A).probs
        nz = qo > 0
        risk = float(np.sum(qo[nz] * (np.log(qo[nz]) - np.log(model.C.probs[nz]))))
        ambiguity = float(q.probs @ model.A.row_entropy())
        g += risk + ambiguity
    return g


def policy_posterior(E: CategoricalDist, G, gamma, evidence=None) -> CategoricalDist:
    """q(pi) ∝ exp(gamma * (log E - G) - evidence).

    ``evidence`` is an optional per-policy accumulated prediction error; it is not
    scaled by ``gamma``. Policies outside E's support always get zero mass.
    """
    gamma = _check_precision(gamma, "gamma")
    G = np.asarray(G, dtype=np.float64)
    if G.shape != (len(E),):
        raise ShapeError(f"|E|={len(E)} but G has shape {G.shape}")
    support = E.probs > 0
    logits = np.full(len(E), -np.inf)
    logits[support] = gamma * (np.log(E.probs[support]) - G[support])
    if evidence is not None:
        evidence = np.asarray(evidence, dtype=np.float64)
        if evidence.shape != G.shape:
            raise ShapeError("evidence must match G")
        logits[support] -= evidence[support]
    return CategoricalDist(E.labels, _softmax(logits))


def select_action(q_policy: CategoricalDist, policies: Sequence[Policy], t: int, mode: str = "argmax", rng_seed=0):
    """Action at index ``t`` of the chosen policy (argmax or seeded sample)."""
    if len(policies) != len(q_policy):
        raise ShapeError("q_policy and policies differ in length")
    h = policies[0].horizon
    if t < 0 or t >= h:
        raise HorizonExceeded(f"t={t} outside horizon {h}")
    if mode == "argmax":
        idx = argmax_lowest(q_policy.probs)
    elif mode == "sample":
        rng = np.random.default_rng(rng_seed)
        idx = int(rng.choice(len(policies), p=q_policy.probs))
    else:
        raise InvalidConfig(f"unknown selection mode {mode!r}")
    return policies[idx].actions[t]


def percept_readout(q_state: CategoricalDist, A: LikelihoodMatrix) -> Percept:
    post = expected_observations(q_state, A)
    i = argmax_lowest(post.probs)
    return Percept(post.labels[i], float(post.probs[i]), post)


def initial_belief(model: GenerativeModel, gamma: float = 1.0) -> BeliefState:
    """Belief entering t=0.

    The first prior is built like every later one: the policy-weighted prediction
    (here rolled from D through each policy's final action, since plans repeat)
    combined with the perceptual prior.
    """
    arr = model.arrays()
    e = CategoricalDist(model.policy_ids, model.E.probs)
    q_pi = policy_posterior(e, np.zeros(len(e)), gamma)
    preds = kernels.policy_predictions(model.D.probs, arr["b_stack"], arr["pol_actions"], model.horizon - 1)
    prior = _combine_prior(q_pi.probs @ preds, arr["d_weight"])
    return BeliefState(
        q_state=CategoricalDist(model.states, prior),
        q_policy=q_pi,
        t=0,
        policy_evidence=np.zeros(len(model.policies)),
        predictions=None,
        posterior=None,
    )


def filter_sequence(model: GenerativeModel, actions: Sequence[str], observations: Sequence[str], zeta=1.0) -> list:
    """Chained state_update / predict from D; ``actions[t]`` moves step t to t+1."""
    if len(actions) != len(observations):
        raise ShapeError("actions and observations must have the same length")
    out = []
    prior = model.D
    for t, obs in enumerate(observations):
        post = state_update(prior, obs, model.A, zeta)
        out.append(post)
        if t + 1 < len(observations):
            prior = predict(post, actions[t], model.B)
    return out


def _combine_prior(prediction: np.ndarray, d_weight: np.ndarray) -> np.ndarray:
    return normalize(prediction * d_weight)


def step(belief: BeliefState, obs, model: GenerativeModel, precisions: PrecisionSet, mode: str = "argmax", rng_seed=0):
    """One perception-action cycle.

    Order: state update, percept, policy evidence, expected free energy per
    policy, policy posterior, action selection, next-step prior. Returns the new
    belief, the percept and the selected action.
    """
    arr = model.arrays()
    zeta, gamma = precisions.zeta, precisions.gamma
    h = model.horizon
    pos = belief.t % h

    post = state_update(belief.q_state, obs, model.A, zeta)
    percept = percept_readout(post, model.A)

    evidence = belief.policy_evidence
    if evidence is None:
        evidence = np.zeros(len(model.policies))
    if belief.predictions is not None:
        lik = np.exp(zeta * arr["log_a"][:, _index_of(model.observations, obs)])
        surprise = -np.log(belief.predictions @ lik)
        evidence = model.evidence_decay * evidence + model.evidence_gain * surprise
    else:
        evidence = np.array(evidence, dtype=np.float64)

    G = kernels.efe_all(post.probs, arr["b_stack"], arr["pol_actions"], pos, arr["a_mat"], arr["log_c"], arr["row_entropy"])
    q_pi = policy_posterior(model.E, G, gamma, evidence)
    action = select_action(q_pi, model.policies, pos, mode, rng_seed)

    preds = kernels.policy_predictions(post.probs, arr["b_stack"], arr["pol_actions"], pos)
    nxt = _combine_prior(q_pi.probs @ preds, arr["d_weight"])
    new_belief = BeliefState(
        q_state=CategoricalDist(model.states, nxt),
        q_policy=q_pi,
        t=belief.t + 1,
        policy_evidence=evidence,
        predictions=preds,
        posterior=post,
    )
    return new_belief, percept, action
