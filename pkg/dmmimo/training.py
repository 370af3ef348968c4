"""
Pieces shared by every training stage: the configuration model, the
per-epoch history record and the cosine warm-up learning rate schedule.
"""

import math
from typing import Iterable, List, NamedTuple, Optional, Tuple

import torch
from pydantic import BaseModel, ConfigDict, Field, PositiveInt

from dmmimo.constants import DEFAULT_SEED
from dmmimo.exceptions import TrainingDiverged


class TrainConfig(BaseModel):
    """Optimizer settings for one training stage."""

    epochs: int = Field(20, ge=0)
    """Number of passes; 0 leaves the parameters untouched"""

    batch_size: PositiveInt = 256
    """Samples per gradient step"""

    learning_rate: float = Field(1e-4, ge=0.0)
    """Peak Adam learning rate, reached at the end of the warm-up"""

    warmup_fraction: float = Field(0.05, ge=0.0, le=1.0)
    """Fraction of all iterations spent ramping the learning rate up"""

    seed: int = DEFAULT_SEED
    """Seed for parameter initialization"""

    iterations_per_epoch: Optional[PositiveInt] = None
    """Defaults to one pass over the training set"""

    model_config = ConfigDict(extra="forbid")

    def iterations(self, set_size: int) -> int:
        if self.iterations_per_epoch is not None:
            return self.iterations_per_epoch
        return max(1, set_size // self.batch_size)


class TrainingRecord(NamedTuple):
    epoch: int
    mean_loss: float
    learning_rate: float


def cosine_warmup(total_steps: int, warmup_steps: int):
    """LambdaLR factor: linear ramp over warmup_steps, then half a cosine to 0."""

    def factor(step: int) -> float:
        if warmup_steps > 0 and step < warmup_steps:
            return (step + 1) / warmup_steps
        progress = (step - warmup_steps) / max(1, total_steps - warmup_steps)
        return 0.5 * (1.0 + math.cos(math.pi * min(1.0, progress)))

    return factor


def make_optimizer(
    parameters: Iterable[torch.nn.Parameter], cfg: TrainConfig, total_steps: int
) -> Tuple[torch.optim.Optimizer, torch.optim.lr_scheduler.LambdaLR]:
    """Adam with the cosine warm-up schedule."""
    optimizer = torch.optim.Adam(list(parameters), lr=cfg.learning_rate)
    warmup_steps = int(round(cfg.warmup_fraction * total_steps))
    scheduler = torch.optim.lr_scheduler.LambdaLR(
        optimizer, cosine_warmup(total_steps, warmup_steps)
    )
    return optimizer, scheduler


def check_finite(loss: torch.Tensor, stage: str, iteration: int) -> float:
    value = float(loss.detach())
    if not math.isfinite(value):
        raise TrainingDiverged(stage, iteration)
    return value


def loss_decreased(history: List[TrainingRecord]) -> bool:
    return len(history) < 2 or history[-1].mean_loss < history[0].mean_loss


def reset_linear(layer: torch.nn.Linear, generator: Optional[torch.Generator] = None):
    """Zero bias, weight uniform in +-sqrt(6 / (fan_in + fan_out))."""
    with torch.no_grad():
        fan_out, fan_in = layer.weight.shape
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        layer.weight.uniform_(-bound, bound, generator=generator)
        layer.bias.zero_()
