"""Loading the JSON fixture and building the pinned configurations from it.

The fixture is the single source of every default number. Overrides address
values by dotted path (``duet.strong_prior``) and may only replace keys that
already exist, with a value of compatible type.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .engine import GenerativeModel, Policy, PrecisionSet
from .errors import InvalidConfig, IoError
from .scenarios import (
    build_duet_model,
    build_duet_world,
    build_song_model,
    build_song_world,
    keep_only,
    LISTEN,
    WorldScript,
)
from .services import InterventionSpec, PatientAgent, ServiceProgram

SCHEMA = "actsim-fixture/1"
SECTIONS = ("schema", "duet", "song", "regimes", "monotonicity", "thresholds", "programs", "patients", "courses", "proxy", "sweep")
VARIANTS = ("full", "matched_only", "listening_biased", "lesioned")


def _default_path():
    return resources.files("actsim") / "data" / "default.json"


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _compatible(old, new) -> bool:
    if isinstance(old, bool) or isinstance(new, bool):
        return isinstance(old, bool) and isinstance(new, bool)
    if isinstance(old, (int, float)):
        return isinstance(new, (int, float))
    return type(old) is type(new)


@dataclass(frozen=True)
class Fixture:
    data: dict
    source: str = "<default>"

    @property
    def sha256(self) -> str:
        blob = json.dumps(self.data, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def __getitem__(self, key):
        return self.data[key]

    def get(self, dotted: str):
        node = self.data
        for part in dotted.split("."):
            if not isinstance(node, dict) or part not in node:
                raise InvalidConfig(f"unknown fixture key {dotted!r}")
            node = node[part]
        return node

    def with_overrides(self, overrides) -> "Fixture":
        """Apply ``{dotted_key: value}``; string values are parsed as JSON when possible."""
        data = copy.deepcopy(self.data)
        for key, raw in dict(overrides).items():
            value = _parse_value(raw) if isinstance(raw, str) else raw
            parts = key.split(".")
            node = data
            for part in parts[:-1]:
                if not isinstance(node, dict) or part not in node:
                    raise InvalidConfig(f"unknown fixture key {key!r}")
                node = node[part]
            if not isinstance(node, dict) or parts[-1] not in node:
                raise InvalidConfig(f"unknown fixture key {key!r}")
            if not _compatible(node[parts[-1]], value):
                raise InvalidConfig(f"{key!r} expects {type(node[parts[-1]]).__name__}, got {value!r}")
            node[parts[-1]] = value
        return Fixture(data, self.source)

    # ------------------------------------------------------------- builders

    def duet_model(self, variant: str | None = None, **changes) -> GenerativeModel:
        cfg = {**self.data["duet"], **changes}
        variant = variant or cfg["variant"]
        if variant not in VARIANTS:
            raise InvalidConfig(f"unknown policy variant {variant!r}; expected one of {VARIANTS}")
        policy_set = "full" if variant == "lesioned" else variant
        model = build_duet_model(
            cfg["strong_prior"],
            policy_set,
            int(cfg["horizon"]),
            reliability=cfg["reliability"],
            transition_reliability=cfg["transition_reliability"],
            listening_bias=cfg["listening_bias"],
            prior_weight=cfg["prior_weight"],
            evidence_decay=cfg["evidence_decay"],
            evidence_gain=cfg["evidence_gain"],
        )
        if variant == "lesioned":
            model = listening_lesion(model, int(cfg["lesion_min_listens"]))
        return model

    def duet_world(self, noise: float | None = None, seed: int = 0, T: int | None = None) -> WorldScript:
        cfg = self.data["duet"]
        return build_duet_world(int(T or cfg["T"]), cfg["noise"] if noise is None else noise, seed)

    def song_model(self, order_belief: str | None = None) -> GenerativeModel:
        cfg = self.data["song"]
        return build_song_model(
            order_belief or cfg["order_belief"],
            int(cfg["n_words"]),
            reliability=cfg["reliability"],
            transition_reliability=cfg["transition_reliability"],
        )

    def song_world(self) -> WorldScript:
        cfg = self.data["song"]
        return build_song_world(int(cfg["T"]), int(cfg["n_words"]))

    def figure4_model(self) -> GenerativeModel:
        cfg = self.data["regimes"]["figure4"]
        model = self.duet_model("listening_biased", strong_prior=cfg["strong_prior"], listening_bias=cfg["listening_bias"])
        return keep_only(model, cfg["keep"])

    def figure4_precisions(self) -> PrecisionSet:
        cfg = self.data["regimes"]["figure4"]
        return PrecisionSet(cfg["zeta"], cfg["gamma"])

    def intervention(self, spec: dict, horizon: int | None = None) -> InterventionSpec:
        return parse_intervention(spec, horizon or int(self.data["duet"]["horizon"]))

    def figure4_interventions(self) -> list:
        return [self.intervention(s) for s in self.data["regimes"]["figure4"]["interventions"]]

    def program(self, kind: str) -> ServiceProgram:
        try:
            cfg = self.data["programs"][kind]
        except KeyError:
            raise InvalidConfig(f"unknown program {kind!r}") from None
        return ServiceProgram(
            kind,
            tuple(self.intervention(c) for c in cfg["components"]),
            adherence_effect=float(cfg["adherence_effect"]),
            application_prob=float(cfg["application_prob"]),
        )

    def base_model(self, name: str):
        """(model, precisions) of a named regime used as a patient base."""
        if name == "figure4":
            return self.figure4_model(), self.figure4_precisions()
        regimes = self.data["regimes"]
        if name not in regimes or "variant" not in regimes[name]:
            raise InvalidConfig(f"regime {name!r} cannot serve as a patient base")
        cfg = regimes[name]
        return self.duet_model(cfg["variant"], strong_prior=cfg["strong_prior"]), PrecisionSet(cfg["zeta"], cfg["gamma"])

    def patient(self, name: str, **changes) -> PatientAgent:
        try:
            cfg = {**self.data["patients"][name], **changes}
        except KeyError:
            raise InvalidConfig(f"unknown patient profile {name!r}") from None
        model, prec = self.base_model(cfg["base"])
        return PatientAgent(
            model,
            prec,
            cfg["prior_counts"],
            eta=float(cfg["eta"]),
            p_learn=float(cfg["p_learn"]),
            severity=cfg["severity"],
        )

    def threshold(self, name: str) -> float:
        return float(self.data["thresholds"][name])


def listening_lesion(model: GenerativeModel, min_listens: int) -> GenerativeModel:
    """Keep only policies with at least ``min_listens`` listening actions."""
    keep = [p.id for p in model.policies if sum(a == LISTEN for a in p.actions) >= min_listens]
    return keep_only(model, keep)


def _policy_from_id(pid: str, horizon: int) -> Policy:
    codes = {"L": "listen", "S": "speak"}
    if len(pid) != horizon or any(c not in codes for c in pid):
        raise InvalidConfig(f"policy id {pid!r} is not a length-{horizon} listen/speak code")
    return Policy(pid, tuple(codes[c] for c in pid))


def parse_intervention(spec: dict, horizon: int) -> InterventionSpec:
    spec = dict(spec)
    kind = spec.pop("kind", None)
    allowed = {
        "BoostSensoryPrecision": "delta_zeta",
        "ReducePolicyPrecision": "delta_gamma",
        "FlattenPerceptualPrior": "lam",
        "ExpandPolicySpace": "added",
    }
    if kind not in allowed:
        raise InvalidConfig(f"unknown intervention kind {kind!r}")
    if set(spec) != {allowed[kind]}:
        raise InvalidConfig(f"{kind} takes exactly the key {allowed[kind]!r}, got {sorted(spec)}")
    if kind == "ExpandPolicySpace":
        return InterventionSpec.expand_policy_space([_policy_from_id(pid, horizon) for pid in spec["added"]])
    return InterventionSpec(kind, **{allowed[kind]: float(spec[allowed[kind]])})


def load_fixture(path=None) -> Fixture:
    """Read and validate a fixture document (the packaged default when ``path`` is None)."""
    try:
        if path is None:
            text = _default_path().read_text(encoding="utf-8")
            source = "<default>"
        else:
            candidate = Path(path)
            packaged = resources.files("actsim") / "data" / candidate.name
            # a bare name of a packaged fixture resolves to it when no such local file exists
            if not candidate.exists() and candidate.parent == Path(".") and packaged.is_file():
                candidate = packaged
            text = candidate.read_text(encoding="utf-8")
            source = str(path)
    except OSError as exc:
        raise IoError(f"cannot read fixture {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"fixture {source} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict) or data.get("schema") != SCHEMA:
        raise InvalidConfig(f"fixture {source} does not declare schema {SCHEMA!r}")
    unknown = set(data) - set(SECTIONS)
    missing = set(SECTIONS) - set(data)
    if unknown or missing:
        raise InvalidConfig(f"fixture {source}: unknown sections {sorted(unknown)}, missing {sorted(missing)}")
    return Fixture(data, source)
