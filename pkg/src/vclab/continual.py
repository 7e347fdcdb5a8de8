"""The continual-learning loop: per-task training, prior advancement,
multi-head bookkeeping, and full-sequence evaluation.

One sequence run is strictly single-threaded and fully determined by its
master seed: training, head initialization, probing, and evaluation each
draw from independent sub-streams derived by tag, so switching between
fixed-beta and scheduled-beta modes never perturbs the training randomness.
Fixed beta = 1 is vanilla variational continual learning; the scheduled mode
runs the exact same training code path with a different beta value.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .heuristics import HeuristicConfig, HeuristicTrace, assess_task
from .numerics import NumericError, make_rng
from .vbnn import (VariationalNet, advance_prior, fit, init_network, posterior_predict,
                   save_snapshot, standard_prior)

_BETA_MODES = ("fixed", "auto")


@dataclass
class TrainConfig:
    """Per-task training hyperparameters."""

    epochs: int = 10
    batch_size: int = 256
    lr: float = 0.001
    train_mc_samples: int = 5
    eval_mc_samples: int = 20
    beta_mode: str = "fixed"
    beta: float = 1.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.beta_mode not in _BETA_MODES:
            raise ValueError(f"beta_mode must be one of {_BETA_MODES}")
        if self.beta_mode == "fixed" and self.beta <= 0:
            raise ValueError(f"fixed beta must be > 0, got {self.beta}")


class AccuracyMatrix:
    """Lower-triangular record: accuracy of every seen task after each stage."""

    def __init__(self):
        self._rows: list[list[float]] = []

    @property
    def n_stages(self) -> int:
        return len(self._rows)

    def add_stage(self, accuracies: Sequence[float]) -> None:
        if len(accuracies) != len(self._rows) + 1:
            raise ValueError(
                f"stage {len(self._rows) + 1} needs {len(self._rows) + 1} accuracies, "
                f"got {len(accuracies)}")
        self._rows.append([float(a) for a in accuracies])

    def accuracy(self, stage: int, task_index: int) -> float:
        """Accuracy of task ``task_index`` (0-based) after stage ``stage`` (1-based)."""
        return self._rows[stage - 1][task_index]

    def stage_average(self, stage: int) -> float:
        return float(np.mean(self._rows[stage - 1]))

    def rows(self) -> list[list[float]]:
        return [list(r) for r in self._rows]


def train_on_task(net: VariationalNet, prior, task, beta: float, cfg: TrainConfig,
                  rng: np.random.Generator):
    """Train trunk + the task's head on the full task under the given beta."""
    x, y = task.train.arrays()
    return fit(net, prior, task.head_index, x, y, beta=beta, n_task=x.shape[0],
               epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr,
               mc_samples=cfg.train_mc_samples, rng=rng)


def evaluate(net: VariationalNet, task, cfg: TrainConfig, rng: np.random.Generator,
             chunk: int = 1000) -> float:
    """Posterior-predictive argmax accuracy on the task's test split."""
    x, y = task.test.arrays()
    correct = 0
    for start in range(0, x.shape[0], chunk):
        probs = posterior_predict(net, task.head_index, x[start:start + chunk],
                                  rng, cfg.eval_mc_samples)
        correct += int((probs.argmax(axis=1) == y[start:start + chunk]).sum())
    return correct / x.shape[0]


def _check_finite(net: VariationalNet, stage: int) -> None:
    for layer in [*net.trunk, *net.heads.values()]:
        for a in layer.param_arrays():
            if not np.all(np.isfinite(a)):
                raise NumericError(f"non-finite parameters after stage {stage}")


def run_sequence(tasks: Sequence, hidden_dims: Sequence[int], cfg: TrainConfig,
                 heuristic_cfg: HeuristicConfig, master_seed: int,
                 snapshot_dir=None, progress=None,
                 ) -> tuple[AccuracyMatrix, list[HeuristicTrace]]:
    """Run the full task sequence, returning the accuracy matrix and the
    per-stage heuristic trace.

    In auto mode each stage is assessed (difficulty probe, similarity, beta)
    before training; fixed mode skips the probes and uses the constant beta.
    After each stage the posterior becomes the prior and every seen task is
    re-evaluated. If ``snapshot_dir`` is given, the stage-t posterior is
    written there as ``stage_tt.snap``.
    """
    if not tasks:
        raise ValueError("need at least one task")
    auto = cfg.beta_mode == "auto"
    net = init_network(tasks[0].input_dim, hidden_dims, tasks[0].n_classes,
                       make_rng(master_seed, "init"))
    prior = standard_prior(net)
    matrix = AccuracyMatrix()
    traces: list[HeuristicTrace] = []
    d_history: list[float] = []

    for t, task in enumerate(tasks, start=1):
        if auto:
            trace = assess_task(task, net, hidden_dims, d_history, t,
                                heuristic_cfg, master_seed)
            d_history.append(trace.d)
        else:
            trace = HeuristicTrace(task_index=t, beta=cfg.beta)
        traces.append(trace)

        net.ensure_head(task.head_index, make_rng(master_seed, "head", t),
                        n_out=task.n_classes)
        train_on_task(net, prior, task, trace.beta, cfg, make_rng(master_seed, "train", t))
        _check_finite(net, t)
        prior = advance_prior(net)
        if snapshot_dir is not None:
            Path(snapshot_dir).mkdir(parents=True, exist_ok=True)
            save_snapshot(prior, Path(snapshot_dir) / f"stage_{t:02d}.snap")

        accuracies = [evaluate(net, tasks[i], cfg, make_rng(master_seed, "eval", t, i))
                      for i in range(t)]
        matrix.add_stage(accuracies)
        if progress is not None:
            progress(t, trace, accuracies)
    return matrix, traces


def trunk_mean_vector(net: VariationalNet) -> np.ndarray:
    """Flat copy of all trunk means (drift diagnostics in tests)."""
    return np.concatenate([np.concatenate([layer.mu_w.ravel(), layer.mu_b.ravel()])
                           for layer in net.trunk]) if net.trunk else np.empty(0)
