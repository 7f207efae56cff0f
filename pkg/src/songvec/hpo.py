"""Bayesian hyper-parameter search with random-search initialization.

Single objectives (hitrate, vrc-genre, vrc-artist) and scalarized
multi-objectives (a convex combination of hitrate and the relative VRC
improvement over the default configuration) share one study loop. Training
time per trial is capped at a multiple of the default configuration's
wall-clock.
"""

from __future__ import annotations

import json
import logging
import time
import warnings
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy import stats as sps
from sklearn.exceptions import ConvergenceWarning
from sklearn.gaussian_process import GaussianProcessRegressor
from sklearn.gaussian_process.kernels import ConstantKernel, Matern, WhiteKernel

from songvec.corpus import Catalog, SequenceDataset, Vocabulary, build_vocabulary, subsample
from songvec.metrics import Evaluator, MetricReport
from songvec.trainer import EmbeddingSpace, HyperParams, expected_pairs, train

logger = logging.getLogger(__name__)

RANDOM_INIT_TRIALS = 10
CONVERGENCE_WINDOW = 10
CONVERGENCE_EPS = 1e-4
DEFAULT_BUDGET_FACTOR = 1.25
_EI_CANDIDATES = 2000


@dataclass(frozen=True)
class ParamSpec:
    name: str
    low: float
    high: float
    is_int: bool
    scale: str = "linear"  # or "log"

    def from_unit(self, u: float):
        if self.scale == "log":
            value = np.exp(np.log(self.low) + u * (np.log(self.high) - np.log(self.low)))
        else:
            value = self.low + u * (self.high - self.low)
        if self.is_int:
            return int(np.clip(round(value), self.low, self.high))
        return float(np.clip(value, self.low, self.high))

    def to_unit(self, value) -> float:
        if self.scale == "log":
            return float((np.log(value) - np.log(self.low)) / (np.log(self.high) - np.log(self.low)))
        return float((value - self.low) / (self.high - self.low))


@dataclass
class SearchSpace:
    """The five searched parameters and their bounds."""

    params: tuple = (
        ParamSpec("dim", 25, 200, True),
        ParamSpec("window", 1, 40, True),
        ParamSpec("ns_exponent", -1.0, 1.0, False),
        ParamSpec("negatives", 1, 100, True),
        ParamSpec("learning_rate", 0.001, 0.1, False, "log"),
    )

    @property
    def ndim(self) -> int:
        return len(self.params)

    def from_unit(self, u: np.ndarray) -> dict:
        return {p.name: p.from_unit(float(x)) for p, x in zip(self.params, u)}

    def to_unit(self, hp: HyperParams) -> np.ndarray:
        return np.array([p.to_unit(getattr(hp, p.name)) for p in self.params])

    def contains(self, hp: HyperParams) -> bool:
        return all(p.low <= getattr(hp, p.name) <= p.high for p in self.params)


def rvrc(current: float, baseline: float) -> float:
    """Relative VRC improvement over the default configuration's value."""
    if baseline <= 0:
        raise ValueError("baseline VRC must be positive")
    return (current - baseline) / baseline


def combined_objective(hitrate: float, rvrc_value: float, alpha: float) -> float:
    """Convex combination of next-song accuracy and relative clustering gain."""
    if not (0.0 <= alpha <= 1.0):
        raise ValueError("alpha must be in [0, 1]")
    return alpha * hitrate + (1.0 - alpha) * rvrc_value


OBJECTIVE_KINDS = ("hitrate", "vrc-genre", "vrc-artist", "combined-genre", "combined-artist")


@dataclass
class Objective:
    kind: str
    alpha: float = 0.1

    def __post_init__(self):
        if self.kind not in OBJECTIVE_KINDS:
            raise ValueError(f"unknown objective kind {self.kind!r}")
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError("alpha must be in [0, 1]")

    @property
    def needs_catalog(self) -> bool:
        return self.kind != "hitrate"

    def value(self, report: MetricReport, baseline: MetricReport | None) -> float:
        if self.kind == "hitrate":
            return report.hitrate
        if self.kind == "vrc-genre":
            return _require(report.vrc_genre, "vrc_genre")
        if self.kind == "vrc-artist":
            return _require(report.vrc_artist, "vrc_artist")
        if baseline is None:
            raise ValueError("combined objectives require the baseline report")
        attr = "vrc_genre" if self.kind == "combined-genre" else "vrc_artist"
        rel = rvrc(_require(getattr(report, attr), attr), _require(getattr(baseline, attr), attr))
        return combined_objective(report.hitrate, rel, self.alpha)


def _require(value, name: str) -> float:
    if value is None:
        raise ValueError(f"metric report lacks {name}; pass a catalog to the evaluator")
    return value


@dataclass
class TrialResult:
    hp: HyperParams
    metrics: MetricReport
    objective_value: float
    wall_clock: float
    budget_truncated: bool = False

    def to_dict(self) -> dict:
        return {
            "hp": self.hp.to_dict(),
            "metrics": self.metrics.to_dict(),
            "objective_value": self.objective_value,
            "wall_clock": self.wall_clock,
            "budget_truncated": self.budget_truncated,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrialResult":
        return cls(
            hp=HyperParams.from_dict(d["hp"]),
            metrics=MetricReport.from_dict(d["metrics"]),
            objective_value=d["objective_value"],
            wall_clock=d["wall_clock"],
            budget_truncated=d["budget_truncated"],
        )


@dataclass
class Study:
    objective: Objective
    space: SearchSpace = field(default_factory=SearchSpace)
    trials: list[TrialResult] = field(default_factory=list)
    seed: int = 0
    budget: float | None = None

    @property
    def baseline(self) -> MetricReport | None:
        return self.trials[0].metrics if self.trials else None

    @property
    def best_index(self) -> int | None:
        """Index of the best non-truncated trial by objective value."""
        best, best_value = None, -np.inf
        for i, t in enumerate(self.trials):
            if t.budget_truncated:
                continue
            if np.isfinite(t.objective_value) and t.objective_value > best_value:
                best, best_value = i, t.objective_value
        return best

    @property
    def best(self) -> TrialResult | None:
        i = self.best_index
        return self.trials[i] if i is not None else None

    @property
    def converged(self) -> bool:
        """No best-objective improvement above CONVERGENCE_EPS in the last window."""
        if len(self.trials) <= RANDOM_INIT_TRIALS + CONVERGENCE_WINDOW:
            return False
        values = [
            t.objective_value
            for t in self.trials
            if not t.budget_truncated and np.isfinite(t.objective_value)
        ]
        if len(values) <= CONVERGENCE_WINDOW:
            return False
        before = max(values[:-CONVERGENCE_WINDOW])
        return max(values) <= before + CONVERGENCE_EPS

    def to_dict(self) -> dict:
        return {
            "objective": asdict(self.objective),
            "seed": self.seed,
            "budget": self.budget,
            "trials": [t.to_dict() for t in self.trials],
            "best_index": self.best_index,
        }

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path: str | Path) -> "Study":
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        return cls(
            objective=Objective(**d["objective"]),
            seed=d["seed"],
            budget=d["budget"],
            trials=[TrialResult.from_dict(t) for t in d["trials"]],
        )


def suggest(
    study: Study,
    base_hp: HyperParams | None = None,
    cost: "callable | None" = None,
    max_rel_cost: float | None = None,
) -> HyperParams:
    """Next configuration: default, then random search, then GP expected improvement.

    Deterministic given the study state (trial count) and seed; proposals
    always lie inside the search-space bounds. When a relative cost model is
    given, GP candidates predicted to blow the training budget (relative cost
    above max_rel_cost) are dropped before ranking, so refinement proposals
    concentrate on configurations that can actually finish; truncated trials
    still inform the surrogate. Random-search initialization is unfiltered.
    """
    base = base_hp or HyperParams()
    t = len(study.trials)
    if t == 0:
        return base
    rng = np.random.default_rng([abs(study.seed), t])
    if t <= RANDOM_INIT_TRIALS:
        return _make_hp(study.space.from_unit(rng.random(study.space.ndim)), base)
    # truncated trials carry partial-training metrics whose values depend on
    # wall-clock noise; they are not electable as best, and feeding them to
    # the surrogate would make the proposal stream timing-dependent. Their
    # hyperparameters still participate in the no-repeat rule below.
    observed = [
        tr
        for tr in study.trials
        if not tr.budget_truncated and np.isfinite(tr.objective_value)
    ]
    x_obs = np.array([study.space.to_unit(tr.hp) for tr in observed])
    y_obs = np.array([tr.objective_value for tr in observed])
    candidates = rng.random((_EI_CANDIDATES, study.space.ndim))
    if cost is not None and max_rel_cost is not None:
        feasible = np.array(
            [
                cost(_make_hp(study.space.from_unit(c), base)) <= max_rel_cost
                for c in candidates
            ]
        )
        if feasible.any():
            candidates = candidates[feasible]
    ei = _expected_improvement(x_obs, y_obs, candidates, seed=abs(study.seed) + t)
    seen = {_hp_key(tr.hp) for tr in study.trials}
    for i in np.argsort(-ei):
        params = study.space.from_unit(candidates[int(i)])
        hp = _make_hp(params, base)
        if _hp_key(hp) not in seen:
            return hp
    # every candidate collided with a previous trial; fall back to random
    return _make_hp(study.space.from_unit(rng.random(study.space.ndim)), base)


# measured per-gradient-row cost is roughly affine in dimension, with a fixed
# overhead (sampling, sigmoid) worth about this many dimensions
_DIM_OVERHEAD = 450.0


def _relative_cost_model(lengths: np.ndarray, base: HyperParams):
    """Training cost of a configuration relative to the default.

    Work per trial scales with expected positive pairs (a function of the
    window and sequence lengths) times gradient rows per pair (negatives + 1)
    times an affine function of the dimension.
    """
    lengths = lengths[lengths >= 2]
    pair_cache: dict[int, float] = {}

    def pairs(window: int) -> float:
        if window not in pair_cache:
            pair_cache[window] = expected_pairs(lengths, window)
        return pair_cache[window]

    def raw(hp: HyperParams) -> float:
        return pairs(hp.window) * (hp.negatives + 1) * (_DIM_OVERHEAD + hp.dim)

    base_cost = raw(base)

    def rel(hp: HyperParams) -> float:
        return raw(hp) / base_cost

    return rel


# candidates estimated above this fraction of the budget factor are not proposed
_COST_SAFETY = 0.8


def _make_hp(params: dict, base: HyperParams) -> HyperParams:
    return HyperParams(epochs=base.epochs, seed=base.seed, **params)


def _hp_key(hp: HyperParams) -> tuple:
    return (hp.dim, hp.window, round(hp.ns_exponent, 9), hp.negatives, round(hp.learning_rate, 9))


def _expected_improvement(
    x_obs: np.ndarray, y_obs: np.ndarray, candidates: np.ndarray, seed: int
) -> np.ndarray:
    kernel = ConstantKernel(1.0) * Matern(
        length_scale=np.full(x_obs.shape[1], 0.5), nu=2.5
    ) + WhiteKernel(noise_level=1e-6, noise_level_bounds=(1e-10, 1e-1))
    gp = GaussianProcessRegressor(kernel=kernel, normalize_y=True, random_state=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", category=ConvergenceWarning)
        gp.fit(x_obs, y_obs)
    mu, sigma = gp.predict(candidates, return_std=True)
    best = y_obs.max()
    sigma = np.maximum(sigma, 1e-12)
    z = (mu - best) / sigma
    return (mu - best) * sps.norm.cdf(z) + sigma * sps.norm.pdf(z)


def run_study(
    ds: SequenceDataset,
    vocab: Vocabulary,
    objective: Objective,
    max_trials: int = 25,
    time_budget_factor: float = DEFAULT_BUDGET_FACTOR,
    seed: int = 0,
    workers: int = 1,
    evaluator: Evaluator | None = None,
    catalog: Catalog | None = None,
    base_hp: HyperParams | None = None,
    resume: Study | None = None,
    checkpoint_path: str | Path | None = None,
    mask_last: bool = True,
) -> Study:
    """Trial 0 is the default configuration; its wall-clock defines the budget."""
    base = base_hp or HyperParams(seed=seed)
    if evaluator is None:
        if objective.needs_catalog and catalog is None:
            raise ValueError(f"objective {objective.kind!r} requires a catalog")
        evaluator = Evaluator(ds, vocab, catalog=catalog, seed=seed)
    study = resume if resume is not None else Study(objective=objective, seed=seed)
    lengths = np.array([len(s) for s in ds.train_sequences], dtype=np.int64)
    rel_cost = _relative_cost_model(lengths, base)
    while len(study.trials) < max_trials and not study.converged:
        hp = suggest(study, base, cost=rel_cost, max_rel_cost=time_budget_factor * _COST_SAFETY)
        budget = study.budget if len(study.trials) > 0 else None
        space = train(ds, vocab, hp, budget=budget, workers=workers, mask_last=mask_last)
        trial = _finish_trial(study, space, evaluator)
        if len(study.trials) == 1 and study.budget is None:
            study.budget = time_budget_factor * trial.wall_clock
        logger.info(
            "trial %d: objective=%.6g truncated=%s hp=%s",
            len(study.trials) - 1,
            trial.objective_value,
            trial.budget_truncated,
            hp.to_dict(),
        )
        if checkpoint_path is not None:
            study.save(checkpoint_path)
    return study


def _finish_trial(study: Study, space: EmbeddingSpace, evaluator: Evaluator) -> TrialResult:
    report = evaluator.evaluate(space)
    baseline = study.baseline
    try:
        value = study.objective.value(report, baseline)
    except ValueError:
        value = float("nan")
    trial = TrialResult(
        hp=space.hyperparams,
        metrics=report,
        objective_value=value,
        wall_clock=space.train_time,
        budget_truncated=space.budget_truncated,
    )
    study.trials.append(trial)
    if len(study.trials) == 1 and study.objective.kind.startswith("combined"):
        # the baseline report defines the reference VRC; recompute trial 0's
        # objective now that it exists
        study.trials[0].objective_value = study.objective.value(report, report)
    return trial


@dataclass
class LadderRow:
    rate: float
    n_trials: int
    best_hp: HyperParams
    study_objective_value: float
    optimization_time: float
    full_scale_metrics: MetricReport

    def to_dict(self) -> dict:
        return {
            "rate": self.rate,
            "n_trials": self.n_trials,
            "best_hp": self.best_hp.to_dict(),
            "study_objective_value": self.study_objective_value,
            "optimization_time": self.optimization_time,
            "full_scale_metrics": self.full_scale_metrics.to_dict(),
        }


def scale_ladder(
    ds: SequenceDataset,
    rates: list[float],
    objective: Objective,
    seed: int = 0,
    max_trials: int = 25,
    min_count: int = 5,
    workers: int = 1,
    catalog: Catalog | None = None,
    evaluator_kwargs: dict | None = None,
    **study_kwargs,
) -> list[LadderRow]:
    """HPO at increasing subsample rates; each best config is retrained at full scale."""
    if list(rates) != sorted(rates) or any(not (0 < r <= 1) for r in rates):
        raise ValueError("rates must be ascending and within (0, 1]")
    evaluator_kwargs = evaluator_kwargs or {}
    full_vocab = build_vocabulary(ds, min_count)
    full_evaluator = Evaluator(ds, full_vocab, catalog=catalog, seed=seed, **evaluator_kwargs)
    rows = []
    for rate in rates:
        sub = subsample(ds, rate, seed)
        sub_vocab = build_vocabulary(sub, min_count)
        sub_evaluator = Evaluator(sub, sub_vocab, catalog=catalog, seed=seed, **evaluator_kwargs)
        t0 = time.monotonic()
        study = run_study(
            sub,
            sub_vocab,
            objective,
            max_trials=max_trials,
            seed=seed,
            workers=workers,
            evaluator=sub_evaluator,
            catalog=catalog,
            **study_kwargs,
        )
        opt_time = time.monotonic() - t0
        best = study.best
        if best is None:
            raise RuntimeError(f"study at rate {rate} produced no usable trial")
        space = train(ds, full_vocab, best.hp, workers=workers, mask_last=True)
        rows.append(
            LadderRow(
                rate=rate,
                n_trials=len(study.trials),
                best_hp=best.hp,
                study_objective_value=best.objective_value,
                optimization_time=opt_time,
                full_scale_metrics=full_evaluator.evaluate(space),
            )
        )
    return rows
