"""
Optimizers and the phase loop.

A phase draws batches from its sampler, evaluates the compound loss through
the routine, backpropagates and steps a fresh optimizer. Per-epoch means go
into the TrainingLog.
"""
import logging
import time
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import Field
from tqdm import tqdm

from .. import config
from ..errors import NonFiniteGradientError, NonFiniteLossError, TrainingError
from . import StrictOptions
from .autodiff import DiffTensor
from .losses import CompoundLoss
from .sampling import phase_rng

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------

class SgdOptions(StrictOptions):
    lr: float = Field(0.01, gt=0)
    momentum: float = Field(0.0, ge=0)


class AdamOptions(StrictOptions):
    lr: float = Field(0.01, gt=0)
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = Field(1e-8, gt=0)


class Optimizer:
    Options = StrictOptions

    def __init__(self, params: Dict[str, DiffTensor], options=None):
        self.params = params
        self.options = options if options is not None else self.Options()
        self.steps = 0

    def check_gradients(self) -> None:
        for name, param in self.params.items():
            if not np.all(np.isfinite(param.grad)):
                raise NonFiniteGradientError(name)

    def step(self) -> None:
        self.check_gradients()
        self.steps += 1
        for name, param in self.params.items():
            self._update(name, param)

    def _update(self, name: str, param: DiffTensor) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    """theta <- theta - lr * v,  v <- momentum * v + g"""

    Options = SgdOptions

    def __init__(self, params, options=None):
        super().__init__(params, options)
        self.velocity = {name: np.zeros_like(p.values) for name, p in params.items()}

    def _update(self, name, param):
        v = self.options.momentum * self.velocity[name] + param.grad
        self.velocity[name] = v
        param.values -= self.options.lr * v


class Adam(Optimizer):
    """Adam with bias-corrected moment estimates."""

    Options = AdamOptions

    def __init__(self, params, options=None):
        super().__init__(params, options)
        self.m = {name: np.zeros_like(p.values) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.values) for name, p in params.items()}

    def _update(self, name, param):
        beta1, beta2 = self.options.betas
        g = param.grad
        self.m[name] = beta1 * self.m[name] + (1.0 - beta1) * g
        self.v[name] = beta2 * self.v[name] + (1.0 - beta2) * g * g
        m_hat = self.m[name] / (1.0 - beta1 ** self.steps)
        v_hat = self.v[name] / (1.0 - beta2 ** self.steps)
        param.values -= self.options.lr * m_hat / (np.sqrt(v_hat) + self.options.eps)


def sgd_step(params: Dict[str, DiffTensor], lr: float, momentum: float = 0.0,
             state: Optional[SGD] = None) -> SGD:
    state = state or SGD(params, SgdOptions(lr=lr, momentum=momentum))
    state.step()
    return state


def adam_step(params: Dict[str, DiffTensor], state: Optional[Adam] = None, lr: float = 0.01) -> Adam:
    state = state or Adam(params, AdamOptions(lr=lr))
    state.step()
    return state


# ---------------------------------------------------------------------------
# Log
# ---------------------------------------------------------------------------

class TrainingLog:
    """Per-epoch rows: phase, epoch, total, one column per loss component, wall time."""

    def __init__(self):
        self.rows: List[dict] = []

    def record(self, phase: int, epoch: int, total: float, components: Dict[str, float],
               wall_time: float) -> dict:
        row = {"phase": phase, "epoch": epoch, "total": total}
        row.update({f"loss_{name}": value for name, value in components.items()})
        row["wall_time"] = wall_time
        self.rows.append(row)
        return row

    def phase_rows(self, phase: int) -> List[dict]:
        return [row for row in self.rows if row["phase"] == phase]

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.rows)
        if frame.empty:
            return pd.DataFrame(columns=["phase", "epoch", "total", "wall_time"])
        front = ["phase", "epoch", "total"]
        middle = [c for c in frame.columns if c not in front + ["wall_time"]]
        return frame[front + middle + ["wall_time"]]

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False)

    def __len__(self) -> int:
        return len(self.rows)


# ---------------------------------------------------------------------------
# Phase loop
# ---------------------------------------------------------------------------

def run_phase(routine, phase_index: int, progress: Optional[bool] = None,
              on_epoch: Optional[Callable[[int, int], None]] = None) -> List[dict]:
    """
    Train one phase of a prepared routine.

    Args:
        routine: compiled Routine (global relations and derived data ready)
        phase_index: position of the phase in the routine's phase list
        progress: show a tqdm bar (defaults to RELEMBED_PROGRESS)
        on_epoch: called with (phase_index, epoch) after every epoch

    Returns:
        the TrainingLog rows written for this phase
    """
    phase = routine.spec.training_phases[phase_index]
    progress = config.SHOW_PROGRESS if progress is None else progress
    rng = phase_rng(routine.seed, phase_index)
    sampler = routine.build_sampler(phase)
    compound = CompoundLoss(phase.loss.components, phase.loss.weights)
    optimizer = routine.build_optimizer(phase)
    routine.optimizers[phase_index] = optimizer
    model = routine.model

    logger.info(f"Phase {phase_index}: {phase.epochs} epochs, {phase.sampling.type} sampling, "
                f"components {phase.loss.components}, {phase.optimizer.type} optimizer")
    rows = []
    epochs = tqdm(range(phase.epochs), desc=f"phase {phase_index}", disable=not progress, leave=False)
    for epoch in epochs:
        started = time.perf_counter()
        total_sum, n_batches = 0.0, 0
        component_sums = {name: 0.0 for name in compound.names}
        for batch in sampler.epoch(rng):
            model.zero_grad()
            total = compound(routine.component_values(phase, batch))
            if not np.isfinite(compound.last_total):
                raise NonFiniteLossError(f"non-finite loss in phase {phase_index}, epoch {epoch}: "
                                         f"{compound.last_values}")
            total.backward()
            optimizer.step()
            total_sum += compound.last_total
            for name, value in compound.last_values.items():
                component_sums[name] += value
            n_batches += 1

        n_batches = max(n_batches, 1)
        row = routine.log.record(
            phase_index, epoch, total_sum / n_batches,
            {name: s / n_batches for name, s in component_sums.items()},
            time.perf_counter() - started,
        )
        rows.append(row)
        epochs.set_postfix(loss=f"{row['total']:.4g}")
        logger.debug(f"phase {phase_index} epoch {epoch}: total {row['total']:.6g}")
        if on_epoch is not None:
            on_epoch(phase_index, epoch)

    logger.info(f"Phase {phase_index} done" + (f", final loss {rows[-1]['total']:.6g}" if rows else ""))
    return rows


def train(routine, progress: Optional[bool] = None, on_epoch: Optional[Callable[[int, int], None]] = None):
    """Run every phase in order; the log keeps the rows of a phase that failed part-way."""
    routine.prepare()
    for phase_index in range(len(routine.spec.training_phases)):
        try:
            run_phase(routine, phase_index, progress=progress, on_epoch=on_epoch)
        except TrainingError:
            logger.error(f"Training stopped in phase {phase_index} after {len(routine.log)} logged epochs")
            raise
    return routine.model, routine.log
