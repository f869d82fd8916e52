"""Monte Carlo calibration of synthetic control arms.

One replication simulates (or receives) a trial, downsizes the control arm,
fits a generator, draws ``n_gen`` synthetic control arms of the treated-arm
size and records log-rank p-values against the treated arm and against the
training controls. Power curves, post-generation selection, BH acceptance
and the hyperparameter search are built on top of those records.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .dataset import TrialDataset, concat, split_arms, subsample
from .hivae import HiVaeConfig, TrainingDivergence, sample_posterior, sample_prior, train
from .hivae.config import PIECEWISE
from .seeding import child_seed, rng_for
from .simulate import SimConfig, simulate_trial, with_fixed_censoring
from .survstats import EffectSize, PowerSpec, benjamini_hochberg, effect_size_mc, logrank_datasets, schoenfeld_power

log = logging.getLogger(__name__)

CONTROL_ONLY = "control"
CONTROL_PLUS_TREATED = "control+treated"


class ExperimentError(RuntimeError):
    pass


# -- scenario -------------------------------------------------------------------------


@dataclass(frozen=True)
class Selection:
    """``none``, ``best`` (highest generated-vs-control p) or ``top`` with a retained fraction."""

    kind: str = "none"
    fraction: float = 1.0

    def __post_init__(self):
        if self.kind not in ("none", "best", "top"):
            raise ValueError(f"unknown selection {self.kind!r}")
        if not 0 < self.fraction <= 1:
            raise ValueError("top fraction must lie in (0, 1]")

    @classmethod
    def parse(cls, text: str) -> "Selection":
        if text.startswith("top"):
            _, _, q = text.partition(":")
            return cls("top", float(q or 0.2))
        return cls(text)

    def label(self) -> str:
        return f"top{self.fraction:g}" if self.kind == "top" else self.kind


@dataclass(frozen=True)
class ScenarioConfig:
    upsilon: float = 1.0
    training_arms: str = CONTROL_ONLY
    sampling_mode: str = "posterior"
    n_gen: int = 10
    m: int = 20
    betas: tuple[float, ...] = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
    alpha: float = 0.05
    selection: Selection = Selection()

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if isinstance(self.selection, str):
            object.__setattr__(self, "selection", Selection.parse(self.selection))
        elif isinstance(self.selection, dict):
            object.__setattr__(self, "selection", Selection(**self.selection))
        if not 0 < self.upsilon <= 1:
            raise ValueError("upsilon must lie in (0, 1]")
        if self.training_arms not in (CONTROL_ONLY, CONTROL_PLUS_TREATED):
            raise ValueError(f"unknown training_arms {self.training_arms!r}")
        if self.sampling_mode not in ("posterior", "prior"):
            raise ValueError(f"unknown sampling_mode {self.sampling_mode!r}")
        if self.n_gen < 1 or self.m < 1:
            raise ValueError("n_gen and m must be >= 1")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")

    def key(self) -> str:
        return f"u{self.upsilon:.4g}_{self.training_arms.replace('+', '-')}_{self.sampling_mode}"

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["betas"] = list(self.betas)
        return d


# -- generators ------------------------------------------------------------------------


class Generator(Protocol):
    def fit(self, train: TrialDataset, seed: int) -> None: ...

    def generate(self, n: int, seed: int, source: TrialDataset | None = None) -> TrialDataset: ...


class IdentityOracle:
    """Returns the training controls (or the given source) unchanged."""

    def fit(self, train: TrialDataset, seed: int) -> None:
        self.train = train

    def generate(self, n: int, seed: int, source: TrialDataset | None = None) -> TrialDataset:
        data = source if source is not None else self.train
        return data.take(np.flatnonzero(data.treatment == 0)) if (data.treatment == 1).any() else data


class BootstrapGenerator:
    """Resamples training controls with replacement; a cheap non-degenerate test double."""

    def fit(self, train: TrialDataset, seed: int) -> None:
        self.train = train.take(np.flatnonzero(train.treatment == 0))

    def generate(self, n: int, seed: int, source: TrialDataset | None = None) -> TrialDataset:
        data = self.train if source is None else source
        return data.take(rng_for(seed, "bootstrap").integers(0, data.n, n))


class HiVaeGenerator:
    def __init__(self, config: HiVaeConfig, mode: str = "posterior"):
        self.config = config
        self.mode = mode
        self.result = None

    def fit(self, train_data: TrialDataset, seed: int) -> None:
        cfg = self.config
        if (train_data.treatment == 1).any() and not cfg.include_treatment:
            cfg = cfg.replace(include_treatment=True)
        self.train = train_data
        self.result = train(train_data, cfg, seed=seed)

    @property
    def model(self):
        return self.result.model

    def generate(self, n: int, seed: int, source: TrialDataset | None = None) -> TrialDataset:
        if self.mode == "prior":
            return sample_prior(self.model, n, seed).data
        return sample_posterior(self.model, self.train if source is None else source, n, seed).data


GeneratorFactory = Callable[[], Generator]


def make_generator_factory(name: str, config: HiVaeConfig | None = None, mode: str = "posterior") -> GeneratorFactory:
    if name == "oracle":
        return IdentityOracle
    if name == "bootstrap":
        return BootstrapGenerator
    if name == "hivae":
        cfg = config or HiVaeConfig()
        return lambda: HiVaeGenerator(cfg, mode)
    raise ValueError(f"unknown generator {name!r}")


# -- replications ---------------------------------------------------------------------------


@dataclass
class ReplicationRecord:
    beta: float
    rep: int
    seed: int
    n_train: int
    n_sim: int
    n_control: int
    p_initial: float
    p_reduced: float
    pv_treated: list[float] = field(default_factory=list)
    pv_control: list[float] = field(default_factory=list)
    failed: bool = False
    error: str = ""

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "ReplicationRecord":
        return cls(**obj)


def run_replication(data: TrialDataset, scenario: ScenarioConfig, factory: GeneratorFactory, seed: int, beta: float = 0.0, rep: int = 0) -> ReplicationRecord:
    control, treated = split_arms(data)
    if control.n == 0 or treated.n == 0:
        raise ExperimentError("both arms must be nonempty")
    train_ctrl = subsample(control, scenario.upsilon, rng_for(seed, "downsize"))
    train_set = train_ctrl if scenario.training_arms == CONTROL_ONLY else concat([train_ctrl, treated])
    rec = ReplicationRecord(
        beta=float(beta),
        rep=int(rep),
        seed=int(seed),
        n_train=train_ctrl.n,
        n_sim=treated.n,
        n_control=control.n,
        p_initial=logrank_datasets(control, treated).p_value,
        p_reduced=logrank_datasets(train_ctrl, treated).p_value,
    )
    gen = factory()
    try:
        gen.fit(train_set, child_seed(seed, "fit"))
        for n in range(scenario.n_gen):
            arm = gen.generate(treated.n, child_seed(seed, "generate", n), source=train_ctrl)
            rec.pv_treated.append(logrank_datasets(arm, treated).p_value)
            rec.pv_control.append(logrank_datasets(arm, train_ctrl).p_value)
    except (TrainingDivergence, FloatingPointError, np.linalg.LinAlgError, ValueError) as exc:
        rec.failed = True
        rec.error = f"{type(exc).__name__}: {exc}"
        rec.pv_treated, rec.pv_control = [], []
        log.warning("replication beta=%s rep=%s failed: %s", beta, rep, rec.error)
    return rec


def select_best(pv_control: Sequence[float]) -> int:
    """Index of the highest generated-vs-control p-value; the first one on ties."""
    if len(pv_control) == 0:
        raise ValueError("no generated arms to select from")
    return int(np.argmax(np.asarray(pv_control, dtype=float)))


def select_top(pv_control: Sequence[float], fraction: float) -> np.ndarray:
    """Indices of the ceil(fraction * N_gen) highest p-values (stable order on ties)."""
    p = np.asarray(pv_control, dtype=float)
    k = max(1, math.ceil(fraction * p.size - 1e-9))
    return np.argsort(-p, kind="stable")[:k]


# -- power estimation --------------------------------------------------------------------


@dataclass
class PowerPoint:
    beta: float
    n_reps: int
    n_failed: int
    power_initial: float
    power_reduced: float
    power_gen: float
    power_gen_best: float | None
    theory_full: float | None = None
    theory_reduced: float | None = None
    theory_generated: float | None = None


@dataclass
class CalibrationResult:
    alpha: float
    selection: str
    points: list[PowerPoint]
    records: list[ReplicationRecord] = field(default_factory=list)

    def point(self, beta: float) -> PowerPoint:
        for p in self.points:
            if math.isclose(p.beta, beta, abs_tol=1e-12):
                return p
        raise KeyError(beta)

    def to_json(self, include_records: bool = False) -> dict:
        out = {"alpha": self.alpha, "selection": self.selection, "points": [dataclasses.asdict(p) for p in self.points]}
        if include_records:
            out["records"] = [r.to_json() for r in sorted(self.records, key=lambda r: (r.beta, r.rep))]
        return out


def _theory(effect: EffectSize | None, beta: float, alpha: float, upsilon: float, n_sim_ratio: float):
    if effect is None:
        return None, None, None
    try:
        i = next(i for i, b in enumerate(effect.betas) if math.isclose(b, beta, abs_tol=1e-12))
    except StopIteration:
        return None, None, None
    bt, et, ec = effect.beta_tilde[i], effect.events_treated[i], effect.events_control[i]
    full = schoenfeld_power(PowerSpec(alpha, bt, et, ec))
    reduced = schoenfeld_power(PowerSpec(alpha, bt, et, max(upsilon * ec, 1e-9)))
    # a generated arm of the treated-arm size carries the control event rate
    generated = schoenfeld_power(PowerSpec(alpha, bt, et, max(ec * n_sim_ratio, 1e-9)))
    return full, reduced, generated


def estimate_power(records: Sequence[ReplicationRecord], betas: Sequence[float], alpha: float = 0.05, selection: Selection | str = "best", effect: EffectSize | None = None, upsilon: float = 1.0) -> CalibrationResult:
    """Empirical rejection rates per beta, with optional Schoenfeld curves from ``effect``.

    ``power_gen_best`` uses the arm chosen by ``selection`` (argmax, or the
    pooled top fraction) and is ``None`` when selection is ``none``.
    """
    sel = Selection.parse(selection) if isinstance(selection, str) else selection
    points = []
    for beta in betas:
        rows = [r for r in records if math.isclose(r.beta, beta, abs_tol=1e-12)]
        ok = [r for r in rows if not r.failed]
        if not ok:
            points.append(PowerPoint(float(beta), len(rows), len(rows), float("nan"), float("nan"), float("nan"), None))
            continue
        p_init = np.mean([r.p_initial < alpha for r in ok])
        p_red = np.mean([r.p_reduced < alpha for r in ok])
        p_gen = np.mean(np.concatenate([np.asarray(r.pv_treated) < alpha for r in ok]))
        best = None
        if sel.kind == "best":
            best = float(np.mean([r.pv_treated[select_best(r.pv_control)] < alpha for r in ok]))
        elif sel.kind == "top":
            pooled = np.concatenate([np.asarray(r.pv_treated)[select_top(r.pv_control, sel.fraction)] for r in ok])
            best = float(np.mean(pooled < alpha))
        ratio = np.mean([r.n_sim for r in ok]) / np.mean([r.n_control for r in ok])
        th = _theory(effect, beta, alpha, upsilon, ratio)
        points.append(PowerPoint(float(beta), len(rows), len(rows) - len(ok), float(p_init), float(p_red), float(p_gen), best, *th))
    return CalibrationResult(alpha, sel.label(), points, list(records))


def acceptance_proportion(records: Sequence[ReplicationRecord], alpha: float = 0.05) -> float:
    """Fraction of replications where BH at level ``alpha`` keeps at least one generated arm."""
    ok = [r for r in records if not r.failed and r.pv_control]
    if not ok:
        return float("nan")
    return float(np.mean([not benjamini_hochberg(r.pv_control, alpha).all() for r in ok]))


# -- hyperparameter search ----------------------------------------------------------------


@dataclass(frozen=True)
class SearchSpace:
    learning_rates: tuple[float, ...] = (2e-2, 1e-3, 1e-4)
    batch_fractions: tuple[float, ...] = (0.25, 0.4, 0.6, 0.75)
    batch_fixed: int = 100
    z_dims: tuple[int, ...] = tuple(range(10, 201, 10))
    y_dims: tuple[int, ...] = tuple(range(10, 201, 5))
    s_dims: tuple[int, ...] = tuple(range(10, 201, 10))
    survival_layers: tuple[int, ...] = (1, 2)
    intervals: tuple[int, ...] = (5, 10, 15, 20)

    def sample(self, rng: np.random.Generator, base: HiVaeConfig, n_train: int) -> HiVaeConfig:
        batches = sorted({max(1, int(round(f * n_train))) for f in self.batch_fractions} | {self.batch_fixed})
        pick = lambda seq: seq[int(rng.integers(len(seq)))]  # noqa: E731
        changes = dict(
            learning_rate=float(pick(self.learning_rates)),
            batch_size=int(pick(batches)),
            z_dim=int(pick(self.z_dims)),
            y_dim=int(pick(self.y_dims)),
            s_dim=int(pick(self.s_dims)),
        )
        if base.survival_head == PIECEWISE:
            changes["survival_layers"] = int(pick(self.survival_layers))
            changes["n_intervals"] = int(pick(self.intervals))
        return base.replace(**changes)


@dataclass
class SearchTrial:
    index: int
    config: dict
    objective: float
    error: str = ""


@dataclass
class SearchResult:
    best_config: HiVaeConfig
    best_objective: float
    best_index: int
    trials: list[SearchTrial]

    def to_json(self) -> dict:
        return {
            "best_config": self.best_config.to_json(),
            "best_objective": self.best_objective,
            "best_index": self.best_index,
            "trials": [dataclasses.asdict(t) for t in self.trials],
        }


def _split(data: TrialDataset, seed: int, validation: float = 0.2):
    idx = rng_for(seed, "validation-split").permutation(data.n)
    n_val = max(1, int(round(validation * data.n)))
    return data.take(np.sort(idx[n_val:])), data.take(np.sort(idx[:n_val]))


def search_objective(gen: Generator, data: TrialDataset, method: int, n_gen: int, seed: int) -> float:
    """Mean Kaplan-Meier distance of ``n_gen`` generated sets under protocol 1, 2 or 3.

    1: fit on all rows, generate N rows from them, compare to them.
    2: fit on a training split, generate N_val rows from the validation rows, compare to the validation rows.
    3: fit on a training split, generate N rows from all rows, compare to all rows.
    """
    from .metrics import survival_distance

    if method == 1:
        fit_on, source, target = data, data, data
    elif method in (2, 3):
        fit_on, val = _split(data, seed)
        source = target = val if method == 2 else data
    else:
        raise ValueError(f"unknown search method {method}")
    gen.fit(fit_on, child_seed(seed, "fit"))
    dists = [survival_distance(target, gen.generate(target.n, child_seed(seed, "gen", i), source=source)) for i in range(n_gen)]
    return float(np.mean(dists))


def hyperparameter_search(data: TrialDataset, base: HiVaeConfig | None = None, budget: int = 150, method: int = 1, n_gen: int = 10, seed: int = 0, space: SearchSpace | None = None, factory: Callable[[HiVaeConfig, int], Generator] | None = None, mode: str = "posterior") -> SearchResult:
    """Seeded random search minimizing the mean survival distance of generated arms."""
    if budget < 1:
        raise ValueError("search budget must be >= 1")
    base = base or HiVaeConfig()
    space = space or SearchSpace()
    n_train = data.n if method == 1 else _split(data, seed)[0].n
    factory = factory or (lambda cfg, i: HiVaeGenerator(cfg, mode))
    trials = []
    for i in range(budget):
        cfg = space.sample(rng_for(seed, "search", i), base, n_train)
        try:
            obj = search_objective(factory(cfg, i), data, method, n_gen, child_seed(seed, "trial", i))
            trials.append(SearchTrial(i, cfg.to_json(), obj))
        except (TrainingDivergence, FloatingPointError, ValueError) as exc:
            trials.append(SearchTrial(i, cfg.to_json(), float("inf"), f"{type(exc).__name__}: {exc}"))
    good = [t for t in trials if math.isfinite(t.objective)]
    if not good:
        raise ExperimentError("all hyperparameter trials failed")
    best = min(good, key=lambda t: (t.objective, t.index))
    return SearchResult(HiVaeConfig.from_json(best.config), best.objective, best.index, trials)


# -- study ------------------------------------------------------------------------------------


@dataclass(frozen=True)
class StudyConfig:
    seed: int = 0
    sim: SimConfig = SimConfig()
    scenarios: tuple[ScenarioConfig, ...] = (ScenarioConfig(),)
    selections: tuple[str, ...] = ("none", "best")
    generator: str = "hivae"
    model: HiVaeConfig = HiVaeConfig()
    search_budget: int = 0
    search_method: int = 1
    theory_reps: int = 0

    @classmethod
    def from_json(cls, obj: dict) -> "StudyConfig":
        obj = dict(obj)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown study config fields: {sorted(unknown)}")
        if "sim" in obj:
            obj["sim"] = SimConfig.from_json(obj["sim"])
        if "model" in obj:
            obj["model"] = HiVaeConfig.from_json(obj["model"])
        if "scenarios" in obj:
            obj["scenarios"] = tuple(ScenarioConfig(**s) for s in obj["scenarios"])
        if "selections" in obj:
            obj["selections"] = tuple(obj["selections"])
        return cls(**obj)

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "sim": self.sim.to_json(),
            "scenarios": [s.to_json() for s in self.scenarios],
            "selections": list(self.selections),
            "generator": self.generator,
            "model": self.model.to_json(),
            "search_budget": self.search_budget,
            "search_method": self.search_method,
            "theory_reps": self.theory_reps,
        }


def _dump(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")
    os.replace(tmp, path)


def trial_data(study: StudyConfig, beta: float, rep: int) -> TrialDataset:
    """Replication ``rep`` at effect ``beta``; the seed depends on ``rep`` only (common random numbers across beta)."""
    sim = with_fixed_censoring(study.sim)
    return simulate_trial(sim.replace(beta=float(beta), seed=child_seed(study.seed, "trial", rep)))


def _cell_task(args):
    study_json, scen_json, model_json, beta, rep, path = args
    study = StudyConfig.from_json(study_json)
    scenario = ScenarioConfig(**scen_json)
    path = Path(path)
    if path.exists():
        return path
    data = trial_data(study, beta, rep)
    factory = make_generator_factory(study.generator, HiVaeConfig.from_json(model_json), scenario.sampling_mode)
    seed = child_seed(study.seed, "cell", scenario.key(), rep)
    rec = run_replication(data, scenario, factory, seed, beta, rep)
    _dump(path, rec.to_json())
    return path


def _scenario_model(study: StudyConfig, scenario: ScenarioConfig, out: Path) -> HiVaeConfig:
    if study.generator != "hivae" or study.search_budget < 1:
        return study.model
    path = out / "search" / f"{scenario.key()}.json"
    if path.exists():
        return HiVaeConfig.from_json(json.loads(path.read_text())["best_config"])
    data = trial_data(study, 0.0, 0)
    control, treated = split_arms(data)
    train_ctrl = subsample(control, scenario.upsilon, rng_for(child_seed(study.seed, "cell", scenario.key(), 0), "downsize"))
    res = hyperparameter_search(train_ctrl, study.model, study.search_budget, study.search_method, scenario.n_gen, child_seed(study.seed, "search", scenario.key()), mode=scenario.sampling_mode)
    _dump(path, res.to_json())
    return res.best_config


def run_study(study: StudyConfig, out_dir, jobs: int = 1) -> dict:
    """Run every (scenario, beta, replication) cell, then aggregate into ``report.json``.

    Cells are written to ``cells/<scenario>/beta<b>/rep<m>.json`` and skipped
    when already present, so an interrupted study resumes where it stopped.
    """
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _dump(out / "study.json", study.to_json())
    effect = None
    if study.theory_reps and any(s.betas for s in study.scenarios):
        epath = out / "effect_size.json"
        if epath.exists():
            effect = EffectSize(**{k: tuple(v) for k, v in json.loads(epath.read_text()).items()})
        else:
            betas = sorted({b for s in study.scenarios for b in s.betas})
            effect = effect_size_mc(study.sim, betas, study.theory_reps, child_seed(study.seed, "effect-size"))
            _dump(epath, effect.to_json())
    tasks = []
    models = {}
    for scenario in study.scenarios:
        models[scenario.key()] = _scenario_model(study, scenario, out)
        for beta in scenario.betas:
            for rep in range(scenario.m):
                path = out / "cells" / scenario.key() / f"beta{beta:.4g}" / f"rep{rep:04d}.json"
                tasks.append((study.to_json(), scenario.to_json(), models[scenario.key()].to_json(), beta, rep, str(path)))
    if jobs == 1:
        for t in tasks:
            _cell_task(t)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(_cell_task, tasks))
    report = {"study": study.to_json(), "scenarios": [], "failed_cells": []}
    for scenario in study.scenarios:
        records = []
        for beta in scenario.betas:
            for rep in range(scenario.m):
                path = out / "cells" / scenario.key() / f"beta{beta:.4g}" / f"rep{rep:04d}.json"
                rec = ReplicationRecord.from_json(json.loads(path.read_text()))
                records.append(rec)
                if rec.failed:
                    report["failed_cells"].append({"scenario": scenario.key(), "beta": beta, "rep": rep, "error": rec.error})
        entry = {"key": scenario.key(), "scenario": scenario.to_json(), "calibration": []}
        if records:
            entry["acceptance_proportion"] = acceptance_proportion(records, scenario.alpha)
        for sel in study.selections:
            cal = estimate_power(records, scenario.betas, scenario.alpha, sel, effect, scenario.upsilon)
            entry["calibration"].append(cal.to_json())
            _write_curve(out / "curves" / f"{scenario.key()}_{cal.selection}.csv", cal)
        report["scenarios"].append(entry)
    _dump(out / "report.json", report)
    return report


_CURVE_FIELDS = ("beta", "power_initial", "power_reduced", "power_gen", "power_gen_best", "theory_full", "theory_reduced", "theory_generated", "n_reps", "n_failed")


def _fmt(v) -> str:
    return "" if v is None else repr(float(v)) if isinstance(v, float) else str(v)


def _write_curve(path: Path, cal: CalibrationResult) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(_CURVE_FIELDS)]
    for p in cal.points:
        d = dataclasses.asdict(p)
        lines.append(",".join(_fmt(d[k]) for k in _CURVE_FIELDS))
    path.write_text("\n".join(lines) + "\n")


def summarize_report(report: dict) -> str:
    """Plain-text table of a ``report.json``."""
    lines = []
    for entry in report.get("scenarios", []):
        lines.append(f"[{entry['key']}] acceptance={entry.get('acceptance_proportion', float('nan')):.3f}")
        for cal in entry["calibration"]:
            lines.append(f"  selection={cal['selection']}")
            lines.append("    beta  initial  reduced  gen      best     th_red   th_gen")
            for p in cal["points"]:
                vals = [p["power_initial"], p["power_reduced"], p["power_gen"], p["power_gen_best"], p["theory_reduced"], p["theory_generated"]]
                lines.append(f"    {p['beta']:<5.2f} " + " ".join("   -    " if v is None else f"{v:8.3f}" for v in vals))
    if report.get("failed_cells"):
        lines.append(f"failed cells: {len(report['failed_cells'])}")
    return "\n".join(lines)
