"""Sweeps, regime classification, the enumeration oracle and exporters."""

from __future__ import annotations

import io
import json
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .engine import CategoricalDist, GenerativeModel, PrecisionSet, normalize
from .errors import CellFailed, InvalidConfig, InvalidVisualization, IoError, OracleInfeasible, ShapeError
from .fixtures import Fixture, load_fixture
from .scenarios import TrialConfig, build_duet_world, hallucination_rate, run_trial
from .services import CourseRecord

# odd 64-bit constant (golden-ratio increment) for spreading cell seeds
SEED_MIX = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1
ORACLE_LIMIT = 10**6
CSV_HEADER = "policy_variant,zeta,gamma,rep,halluc_rate,miss_rate,utilized_policies"
COURSE_HEADER = "episode,service_active,halluc_rate,relapse,d_sound,utilized_policies"
HALLUCINATING = "hallucinating"
HEALTHY = "healthy"


def cell_seed(base_seed: int, index: int) -> int:
    """base_seed XOR (index * SEED_MIX), taken modulo 2**64."""
    return (base_seed ^ (index * SEED_MIX)) & _MASK64


def _strictly_increasing(grid) -> bool:
    return all(b > a for a, b in zip(grid, grid[1:]))


@dataclass(frozen=True)
class SweepSpec:
    zeta_grid: tuple
    gamma_grid: tuple
    policy_variants: tuple
    repetitions: int = 1
    base_seed: int = 0
    strong_prior: float = 0.9
    noise: float = 0.0
    fixture: Fixture | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        for name in ("zeta_grid", "gamma_grid", "policy_variants"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "zeta_grid", tuple(float(z) for z in self.zeta_grid))
        object.__setattr__(self, "gamma_grid", tuple(float(g) for g in self.gamma_grid))
        if not self.zeta_grid or not self.gamma_grid or not self.policy_variants:
            raise InvalidConfig("sweep grids and variant list must be non-empty")
        if not (_strictly_increasing(self.zeta_grid) and _strictly_increasing(self.gamma_grid)):
            raise InvalidConfig("sweep grids must be strictly increasing")
        if len(set(self.policy_variants)) != len(self.policy_variants):
            raise InvalidConfig("duplicate policy variants")
        if int(self.repetitions) < 1:
            raise InvalidConfig("repetitions must be >= 1")
        object.__setattr__(self, "repetitions", int(self.repetitions))
        object.__setattr__(self, "base_seed", int(self.base_seed))
        if self.fixture is None:
            object.__setattr__(self, "fixture", load_fixture())

    @classmethod
    def from_fixture(cls, fixture: Fixture, **changes) -> "SweepSpec":
        cfg = {**fixture["sweep"], **changes}
        return cls(fixture=fixture, **cfg)

    @property
    def n_cells(self) -> int:
        return len(self.policy_variants) * len(self.zeta_grid) * len(self.gamma_grid) * self.repetitions

    def cells(self) -> list:
        """Coordinates (variant, zeta, gamma, rep) in canonical order."""
        return [
            (v, z, g, r)
            for v in self.policy_variants
            for z in self.zeta_grid
            for g in self.gamma_grid
            for r in range(self.repetitions)
        ]

    def echo(self) -> dict:
        return {
            "zeta_grid": list(self.zeta_grid),
            "gamma_grid": list(self.gamma_grid),
            "policy_variants": list(self.policy_variants),
            "repetitions": self.repetitions,
            "base_seed": self.base_seed,
            "strong_prior": self.strong_prior,
            "noise": self.noise,
        }


@dataclass(frozen=True)
class CellRecord:
    policy_variant: str
    zeta: float
    gamma: float
    rep: int
    halluc_rate: float
    miss_rate: float
    utilized_policies: int


@dataclass(frozen=True)
class SweepResult:
    records: tuple
    provenance: dict = field(compare=False)

    def __eq__(self, other):
        if not isinstance(other, SweepResult):
            return NotImplemented
        return self.records == other.records and self.provenance == other.provenance

    __hash__ = None

    def rates(self, variant: str) -> dict:
        """Mean hallucination rate per (zeta, gamma) for one variant."""
        acc: dict = {}
        for r in self.records:
            if r.policy_variant == variant:
                acc.setdefault((r.zeta, r.gamma), []).append(r.halluc_rate)
        return {k: float(np.mean(v)) for k, v in acc.items()}


def _run_cell(spec: SweepSpec, models: dict, index: int, coords) -> CellRecord:
    variant, zeta, gamma, rep = coords
    try:
        seed = cell_seed(spec.base_seed, index)
        world = build_duet_world(int(spec.fixture["duet"]["T"]), spec.noise, seed)
        record = run_trial(TrialConfig(models[variant], world, PrecisionSet(zeta, gamma), seed=seed))
        return CellRecord(
            variant,
            zeta,
            gamma,
            rep,
            hallucination_rate(record),
            record.miss_rate(),
            len({s.argmax_policy for s in record.steps}),
        )
    except Exception as exc:
        raise CellFailed(coords, exc) from exc


def run_sweep(spec: SweepSpec, workers: int = 1) -> SweepResult:
    """Simulate every cell; the result does not depend on ``workers``."""
    try:
        models = {v: spec.fixture.duet_model(v, strong_prior=spec.strong_prior) for v in spec.policy_variants}
    except Exception as exc:
        raise CellFailed((spec.policy_variants, None, None, None), exc) from exc
    cells = spec.cells()
    if workers <= 1:
        records = [_run_cell(spec, models, i, c) for i, c in enumerate(cells)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            # reversed submission order: results must not depend on scheduling
            futures = {i: pool.submit(_run_cell, spec, models, i, cells[i]) for i in reversed(range(len(cells)))}
            records = [futures[i].result() for i in range(len(cells))]
    provenance = {
        "artifact_version": __version__,
        "fixture_sha256": spec.fixture.sha256,
        "base_seed": spec.base_seed,
        "seed_rule": "base_seed XOR (cell_index * 0x9E3779B97F4A7C15) mod 2**64",
        "spec": spec.echo(),
    }
    return SweepResult(tuple(records), provenance)


def regime_table(result: SweepResult, threshold: float = 0.5) -> dict:
    """{(variant, zeta, gamma): label}; a cell hallucinates iff its mean rate >= threshold."""
    if not 0.0 < threshold < 1.0:
        raise InvalidConfig(f"threshold must lie in (0, 1), got {threshold}")
    variants = dict.fromkeys(r.policy_variant for r in result.records)
    table = {}
    for v in variants:
        for (z, g), rate in result.rates(v).items():
            table[(v, z, g)] = HALLUCINATING if rate >= threshold else HEALTHY
    return table


# ------------------------------------------------------------------ oracle


def oracle_exact_posterior(model: GenerativeModel, action_seq, obs_seq, zeta=1.0) -> list:
    """Filtered marginals by summing the joint weight of every hidden-state path.

    ``action_seq[t]`` drives the transition from step t to t+1.
    """
    T = len(obs_seq)
    if len(action_seq) != T:
        raise ShapeError("action and observation sequences differ in length")
    if T == 0:
        return []
    n_s = len(model.states)
    if n_s**T > ORACLE_LIMIT:
        raise OracleInfeasible(f"{n_s}^{T} state paths exceed {ORACLE_LIMIT}")
    zeta = float(zeta)
    a = model.A.matrix
    lik = np.stack([a[:, model.observations.index(o)] ** zeta for o in obs_seq])
    b_seq = np.stack([model.B[act] for act in action_seq[:-1]]) if T > 1 else np.zeros((0, n_s, n_s))
    weights = kernels.enumerate_filtered(np.ascontiguousarray(model.D.probs), np.ascontiguousarray(b_seq), lik)
    return [CategoricalDist(model.states, normalize(w)) for w in weights]


# ------------------------------------------------------------------ export


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent if str(path.parent) else ".", prefix=f".{path.name}.", suffix=".tmp")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise IoError(f"cannot write {path}: {exc}") from exc


def _f6(x: float) -> str:
    return f"{x:.6f}"


def sweep_csv(result: SweepResult) -> str:
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    for r in result.records:
        buf.write(
            ",".join(
                [r.policy_variant, _f6(r.zeta), _f6(r.gamma), str(r.rep), _f6(r.halluc_rate), _f6(r.miss_rate), str(r.utilized_policies)]
            )
            + "\n"
        )
    return buf.getvalue()


def course_csv(course: CourseRecord) -> str:
    lines = [COURSE_HEADER]
    for e in course.episodes:
        d_sound = e.prior_counts[0] / sum(e.prior_counts)
        lines.append(
            f"{e.index},{int(e.service_active)},{_f6(e.rate)},{int(e.relapse)},{_f6(d_sound)},{e.utilized_policies}"
        )
    return "\n".join(lines) + "\n"


def sweep_json(result: SweepResult) -> str:
    doc = {"provenance": result.provenance, "records": [asdict(r) for r in result.records]}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def course_json(course: CourseRecord) -> str:
    doc = {
        "relapse_threshold": course.relapse_threshold,
        "remission_threshold": course.remission_threshold,
        "relapse_count": course.relapse_count,
        "recovery_times": list(course.recovery_times),
        "episodes": [
            {
                "episode": e.index,
                "service_active": e.service_active,
                "halluc_rate": e.rate,
                "relapse": e.relapse,
                "prior_counts": list(e.prior_counts),
                "utilized_policies": e.utilized_policies,
            }
            for e in course.episodes
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _color(rate: float) -> str:
    # white (0) to red (1)
    v = int(round(255 * (1.0 - min(max(rate, 0.0), 1.0))))
    return f"#ff{v:02x}{v:02x}"


def sweep_svg(result: SweepResult, variant: str | None = None) -> str:
    if not result.records:
        raise InvalidVisualization("empty sweep")
    variant = variant or result.records[0].policy_variant
    rates = result.rates(variant)
    if not rates:
        raise InvalidVisualization(f"variant {variant!r} is not in this sweep")
    zetas = sorted({z for z, _ in rates})
    gammas = sorted({g for _, g in rates})
    if len(zetas) < 2 or len(gammas) < 2:
        raise InvalidVisualization("a heatmap needs at least two values on both axes")
    cell, left, top = 40, 60, 30
    width, height = left + cell * len(zetas) + 10, top + cell * len(gammas) + 40
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">',
        f'<text x="{left}" y="15">hallucination rate: {variant}</text>',
    ]
    for j, g in enumerate(reversed(gammas)):
        y = top + j * cell
        parts.append(f'<text x="5" y="{y + cell // 2}">g={g:g}</text>')
        for i, z in enumerate(zetas):
            rate = rates[(z, g)]
            parts.append(
                f'<rect x="{left + i * cell}" y="{y}" width="{cell}" height="{cell}" fill="{_color(rate)}" stroke="#888">'
                f"<title>zeta={z:g} gamma={g:g} rate={rate:.3f}</title></rect>"
            )
    for i, z in enumerate(zetas):
        parts.append(f'<text x="{left + i * cell + 4}" y="{top + cell * len(gammas) + 15}">z={z:g}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render(result, fmt: str, variant: str | None = None) -> str:
    if isinstance(result, SweepResult):
        renderers = {"csv": sweep_csv, "json": sweep_json, "svg_heatmap": lambda r: sweep_svg(r, variant)}
    elif isinstance(result, CourseRecord):
        renderers = {"csv": course_csv, "json": course_json}
        if fmt == "svg_heatmap":
            raise InvalidVisualization("a course has no zeta x gamma grid")
    else:
        raise InvalidConfig(f"cannot export {type(result).__name__}")
    if fmt not in renderers:
        raise InvalidConfig(f"unknown export format {fmt!r}")
    return renderers[fmt](result)


def export_results(result, fmt: str, path, variant: str | None = None) -> None:
    """Write ``result`` to ``path`` atomically (temp file, then rename)."""
    _atomic_write(path, render(result, fmt, variant))


def load_results(path) -> SweepResult:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"{path} is not valid JSON: {exc}") from exc
    try:
        records = tuple(CellRecord(**r) for r in doc["records"])
        return SweepResult(records, doc["provenance"])
    except (KeyError, TypeError) as exc:
        raise InvalidConfig(f"{path} is not a sweep result document") from exc
