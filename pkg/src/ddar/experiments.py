"""Synthetic benchmark runs: fit a method, score ID and OOD data, aggregate over seeds."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import baselines
from .data import Dataset, gen_ood_ring, gen_two_moons
from .exceptions import ContractError
from .metrics import EvalReport, evaluate
from .model import DdarModel, ExtractorConfig, predict
from .rng import Rng
from .training import TrainConfig, train

METHODS = ("ddar", "softmax", "dropout", "ensemble")
LAMBDA_GRID = (0.01, 0.05, 0.1, 0.5, 1.0)
LOSS_SUBSETS = {"d": (True, False), "e": (False, True), "de": (True, True)}


@dataclass
class Scenario:
    """Two-moons training/test sets plus a ring of far OOD points."""

    n_per_class: int = 500
    noise: float = 0.1
    ood_radius: float = 3.0
    n_ood: int = 500
    ood_jitter: float = 0.0

    def make(self, seed: int) -> tuple[Dataset, Dataset, Dataset]:
        rng = Rng(seed)
        train_seed, test_seed, ood_seed = rng.spawn_seed(), rng.spawn_seed(), rng.spawn_seed()
        tr = gen_two_moons(self.n_per_class, self.noise, train_seed)
        te = gen_two_moons(self.n_per_class, self.noise, test_seed)
        ood = gen_ood_ring(self.n_ood, self.ood_radius, self.ood_jitter, ood_seed)
        return tr, te, ood


def score(model, X, method: str, mc_passes: int = 10, seed: int = 0):
    """``(labels, confidence, uncertainty)`` for any supported model type."""
    if isinstance(model, DdarModel):
        return predict(model, X)
    if isinstance(model, baselines.Ensemble):
        return baselines.ensemble_predict(model, X)
    if method == "dropout":
        return baselines.mc_dropout_predict(model, X, mc_passes, seed)
    return baselines.softmax_uncertainty(model, X)


def fit_method(
    method: str,
    dataset: Dataset,
    ext: ExtractorConfig,
    cfg: TrainConfig,
    members: int = 10,
):
    """Train ``method`` and return ``(model, loss_history)``."""
    if method == "ddar":
        model, state = train(dataset, ext, cfg)
        return model, state.loss_history
    if method in ("softmax", "dropout"):
        model, state = baselines.train_softmax(dataset, ext, cfg)
        return model, state.loss_history
    if method == "ensemble":
        seeds = [cfg.seed + i for i in range(members)]
        return baselines.deep_ensemble(dataset, ext, cfg, seeds), []
    raise ContractError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


@dataclass
class RunResult:
    method: str
    seed: int
    report: EvalReport
    model: object
    history: list
    uncertainty_id: np.ndarray
    uncertainty_ood: np.ndarray


def run_once(
    method: str,
    seed: int,
    ext: Optional[ExtractorConfig] = None,
    cfg: Optional[TrainConfig] = None,
    scenario: Optional[Scenario] = None,
    members: int = 10,
    mc_passes: int = 10,
) -> RunResult:
    scenario = scenario or Scenario()
    tr, te, ood = scenario.make(seed)
    ext = ext or ExtractorConfig(input_dim=tr.X.shape[1])
    cfg = replace(cfg or TrainConfig(), seed=seed)
    model, history = fit_method(method, tr, ext, cfg, members)
    labels, conf, unc = score(model, te.X, method, mc_passes, seed)
    _, _, unc_ood = score(model, ood.X, method, mc_passes, seed)
    report = evaluate(labels, conf, unc, te.y, unc_ood)
    return RunResult(method, seed, report, model, history, unc, unc_ood)


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (0 for a single value)."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) == 0:
        raise ContractError("mean_std of an empty sequence")
    std = float(values.std(ddof=1)) if len(values) > 1 else 0.0
    return float(values.mean()), std


def aggregate(results: Sequence[RunResult]) -> dict[str, tuple[float, float]]:
    out = {}
    for key in ("accuracy", "ece", "auroc"):
        out[key] = mean_std([getattr(r.report, key) for r in results])
    return out


def format_table(header: list[str], rows: list[list[str]]) -> str:
    """Left-aligned plain-text table."""
    widths = [max(len(str(c)) for c in col) for col in zip(header, *rows)]
    lines = ["  ".join(str(c).ljust(w) for c, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(str(c).ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"


def compare(
    methods: Sequence[str],
    seeds: Sequence[int],
    ext: Optional[ExtractorConfig] = None,
    cfg: Optional[TrainConfig] = None,
    scenario: Optional[Scenario] = None,
    members: int = 10,
    mc_passes: int = 10,
) -> tuple[list[str], list[list], dict]:
    """One row per method: accuracy, ECE and AUROC as mean and sample std over seeds."""
    for m in methods:
        if m not in METHODS:
            raise ContractError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    header = ["method", "accuracy", "accuracy_std", "ece", "ece_std", "auroc", "auroc_std"]
    rows, runs = [], {}
    for m in methods:
        results = [run_once(m, s, ext, cfg, scenario, members, mc_passes) for s in seeds]
        runs[m] = results
        agg = aggregate(results)
        rows.append([m] + [v for key in ("accuracy", "ece", "auroc") for v in agg[key]])
    return header, rows, runs


def ablate(
    lambdas: Sequence[float],
    loss_subsets: Sequence[str],
    seeds: Sequence[int],
    ext: Optional[ExtractorConfig] = None,
    cfg: Optional[TrainConfig] = None,
    scenario: Optional[Scenario] = None,
) -> tuple[list[str], list[list], dict]:
    """Sweep loss weight and regularizer subsets for DDAR.

    Each row reports metric means/stds and the mean of the last-step loss
    breakdown (so a disabled term shows up as a zero column).
    """
    if not lambdas or not loss_subsets:
        raise ContractError("ablation grid is empty")
    for key in loss_subsets:
        if key not in LOSS_SUBSETS:
            raise ContractError(f"unknown loss subset {key!r}; choose from d, e, de")
    cfg = cfg or TrainConfig()
    header = ["lambda", "losses", "accuracy", "accuracy_std", "ece", "ece_std", "auroc", "auroc_std",
              "rbf", "dissimilar", "entropy"]
    rows, runs = [], {}
    for lam in lambdas:
        for key in loss_subsets:
            use_d, use_e = LOSS_SUBSETS[key]
            c = replace(cfg, loss_weight=float(lam), use_dissimilar=use_d, use_entropy=use_e)
            results = [run_once("ddar", s, ext, c, scenario) for s in seeds]
            runs[(lam, key)] = results
            agg = aggregate(results)
            last = [r.history[-1] for r in results if r.history]
            breakdown = [
                float(np.mean([getattr(b, f) for b in last])) if last else 0.0
                for f in ("rbf", "dissimilar", "entropy")
            ]
            rows.append([lam, key] + [v for k in ("accuracy", "ece", "auroc") for v in agg[k]] + breakdown)
    return header, rows, runs
