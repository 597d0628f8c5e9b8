"""
Training hyperparameters.
"""
from dataclasses import asdict, dataclass, field
from typing import Optional, Tuple


@dataclass(frozen=True)
class Horizon:
    """Simulated periods and the leading periods excluded from the loss."""

    periods: int
    burn_in: int = 0

    def __post_init__(self):
        if self.periods < 1:
            raise ValueError('a horizon needs at least one period')
        if not 0 <= self.burn_in < self.periods:
            raise ValueError(f'burn_in must lie in [0, {self.periods}), got {self.burn_in}')


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 1024
    learning_rate: float = 1e-3
    max_gradient_steps: int = 5000
    max_epochs: int = 1_000_000
    patience: Optional[int] = None
    train_horizon: Horizon = field(default_factory=lambda: Horizon(50, 30))
    dev_horizon: Horizon = field(default_factory=lambda: Horizon(50, 30))
    test_horizon: Horizon = field(default_factory=lambda: Horizon(500, 300))
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    evaluate_every: int = 1
    shard_size: int = 256
    parallelism: int = 1
    detach_periods: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError('batch_size must be positive')
        if self.learning_rate < 0:
            raise ValueError('learning_rate must be nonnegative')
        if self.max_gradient_steps < 1 or self.max_epochs < 1:
            raise ValueError('max_gradient_steps and max_epochs must be positive')
        if self.patience is not None and self.patience < 1:
            raise ValueError('patience must be positive when set')
        if self.evaluate_every < 1 or self.shard_size < 1 or self.parallelism < 1:
            raise ValueError('evaluate_every, shard_size and parallelism must be positive')

    def to_dict(self) -> dict:
        return asdict(self)
