"""Self-checks run by ``actsim validate``: oracle equivalence and the regime matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import CategoricalDist, GenerativeModel, LikelihoodMatrix, Policy, PrecisionSet, TransitionSet, filter_sequence
from .fixtures import Fixture, listening_lesion
from .lab import oracle_exact_posterior
from .scenarios import TrialConfig, build_song_model, build_song_world, hallucination_rate, run_trial
from .services import apply_intervention, PatientAgent

ORACLE_TOL = 1e-9
ORACLE_ZETAS = (0.0, 0.2, 0.5, 1.0)


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""


def random_model(rng: np.random.Generator, n_s: int, n_o: int, n_a: int) -> GenerativeModel:
    states = tuple(f"s{i}" for i in range(n_s))
    obs = tuple(f"o{i}" for i in range(n_o))
    actions = tuple(f"a{i}" for i in range(n_a))
    dirichlet = lambda size: rng.dirichlet(np.ones(size[-1]), size=size[:-1])  # noqa: E731
    pol = Policy("p0", (actions[0], actions[-1]))
    return GenerativeModel(
        states=states,
        observations=obs,
        actions=actions,
        A=LikelihoodMatrix(states, obs, dirichlet((n_s, n_o))),
        B=TransitionSet(states, {a: dirichlet((n_s, n_s)) for a in actions}),
        C=CategoricalDist.uniform(obs),
        D=CategoricalDist(states, rng.dirichlet(np.ones(n_s))),
        policies=(pol,),
        E=CategoricalDist(("p0",), [1.0]),
    )


def oracle_gap(model: GenerativeModel, actions, observations, zeta) -> float:
    engine_run = filter_sequence(model, actions, observations, zeta)
    oracle_run = oracle_exact_posterior(model, actions, observations, zeta)
    return max(float(np.max(np.abs(a.probs - b.probs))) for a, b in zip(engine_run, oracle_run))


def oracle_cases(fixture: Fixture, n_random: int = 50, seed: int = 2024):
    """(label, model, actions, observations) tuples with |S| <= 4 and T <= 6."""
    rng = np.random.default_rng(seed)
    cases = []
    for i in range(n_random):
        n_s, n_o, n_a = int(rng.integers(1, 5)), int(rng.integers(1, 4)), int(rng.integers(1, 3))
        T = int(rng.integers(1, 7))
        model = random_model(rng, n_s, n_o, n_a)
        acts = [model.actions[int(k)] for k in rng.integers(n_a, size=T)]
        obs = [model.observations[int(k)] for k in rng.integers(n_o, size=T)]
        cases.append((f"random[{i}]", model, acts, obs))
    duet = fixture.duet_model("full")
    world = fixture.duet_world(T=6)
    acts = [duet.actions[t % 2] for t in range(6)]
    cases.append(("duet", duet, acts, list(world.observation_sequence())))
    for belief in ("standard", "altered"):
        m = build_song_model(belief, 2)
        w = build_song_world(6, 2)
        cases.append((f"song/{belief}", m, [m.actions[t % 2] for t in range(6)], [w.emissions[s] for s in w.true_states]))
    return cases


def check_oracle(fixture: Fixture) -> Check:
    worst = 0.0
    n = 0
    for _, model, acts, obs in oracle_cases(fixture):
        for z in ORACLE_ZETAS:
            worst = max(worst, oracle_gap(model, acts, obs, z))
            n += 1
    return Check("oracle equivalence", worst <= ORACLE_TOL, f"{n} runs, max gap {worst:.3g}")


def rate(model: GenerativeModel, world, zeta: float, gamma: float, seed: int = 0) -> float:
    return hallucination_rate(run_trial(TrialConfig(model, world, PrecisionSet(zeta, gamma), seed=seed)))


def regime_checks(fixture: Fixture) -> list:
    reg = fixture["regimes"]
    world = fixture.duet_world()
    out = []

    f1 = reg["figure1"]
    m1 = fixture.duet_model(f1["variant"], strong_prior=f1["strong_prior"])
    hi, lo = rate(m1, world, f1["zeta_hallucinating"], f1["gamma"]), rate(m1, world, f1["zeta_healthy"], f1["gamma"])
    out.append(Check("strong prior with low sensory precision", hi > 0.5 and lo < 0.05, f"{hi:.3f} vs {lo:.3f}"))

    f2 = reg["figure2"]
    m2 = fixture.duet_model(f2["variant"], strong_prior=f2["strong_prior"])
    hi, lo = rate(m2, world, f2["zeta"], f2["gamma_hallucinating"]), rate(m2, world, f2["zeta"], f2["gamma_healthy"])
    out.append(Check("listening bias with high policy precision", hi > 0.5 and lo < 0.05, f"{hi:.3f} vs {lo:.3f}"))

    f3 = reg["figure3"]
    matched = fixture.duet_model("matched_only", strong_prior=f3["strong_prior"])
    lesioned = listening_lesion(fixture.duet_model("full", strong_prior=f3["strong_prior"]), fixture["duet"]["lesion_min_listens"])
    a, b = rate(matched, world, f3["zeta"], f3["gamma"]), rate(lesioned, world, f3["zeta"], f3["gamma"])
    out.append(Check("matched policy protects where the lesion exposes", a == 0 and b > 0.5, f"{a:.3f} vs {b:.3f}"))

    patient = PatientAgent.from_model(fixture.figure4_model(), fixture.figure4_precisions())
    base = rate(patient.model, world, patient.precisions.zeta, patient.precisions.gamma)
    out.append(Check("lesioned patient hallucinates untreated", base > 0.5, f"{base:.3f}"))
    for spec in fixture.figure4_interventions():
        p = apply_intervention(patient, spec)
        r = rate(p.model, world, p.precisions.zeta, p.precisions.gamma)
        out.append(Check(f"{spec.kind} alone rescues the patient", r < 0.05, f"{r:.3f}"))

    h = reg["healthy"]
    mh = fixture.duet_model(h["variant"], strong_prior=h["strong_prior"])
    r = rate(mh, world, h["zeta"], h["gamma"])
    out.append(Check("healthy configuration", r < 0.05, f"{r:.3f}"))
    return out


def song_check(fixture: Fixture) -> Check:
    world = fixture.song_world()
    counts = {}
    for belief in ("standard", "altered"):
        model = fixture.song_model(belief)
        for z in (0.1, 1.0):
            counts[(belief, z)] = run_trial(TrialConfig(model, world, PrecisionSet(z, 1.0))).hallucination_count
    ok = counts[("altered", 0.1)] > 0 and all(v == 0 for k, v in counts.items() if k != ("altered", 0.1))
    return Check("song factorial", ok, str({f"{b}/{z}": v for (b, z), v in counts.items()}))


def monotonicity_checks(fixture: Fixture) -> list:
    world = fixture.duet_world()
    grids = fixture["monotonicity"]
    f1, f2 = fixture["regimes"]["figure1"], fixture["regimes"]["figure2"]
    m1 = fixture.duet_model(f1["variant"], strong_prior=f1["strong_prior"])
    m2 = fixture.duet_model(f2["variant"], strong_prior=f2["strong_prior"])
    zs = [rate(m1, world, z, f1["gamma"]) for z in grids["zeta_grid"]]
    gs = [rate(m2, world, f2["zeta"], g) for g in grids["gamma_grid"]]
    z_bad = sum(b > a for a, b in zip(zs, zs[1:]))
    g_bad = sum(b < a for a, b in zip(gs, gs[1:]))
    return [
        Check("rate non-increasing in zeta", z_bad == 0, " ".join(f"{x:.2f}" for x in zs)),
        Check("rate non-decreasing in gamma", g_bad == 0, " ".join(f"{x:.2f}" for x in gs)),
    ]


def run_validation(fixture: Fixture) -> list:
    return [check_oracle(fixture), *regime_checks(fixture), song_check(fixture), *monotonicity_checks(fixture)]
