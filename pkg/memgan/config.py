"""
Experiment configuration.

A single JSON document maps onto a tree of dataclasses. Every level rejects
unknown keys, and values are validated in __post_init__. Defaults are the
desk-scale setting: d=32, d_tilde=4, k in {2, 4, 8}, a [36, 48, 32, 1]
discriminator, 5000 steps and 5 restarts.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Type, TypeVar

from .distributions import CleanImageModel, DimensionSpec
from .partition import DEFAULT_MAX_SUPPORT

T = TypeVar("T")

MIN_EVAL_SIZE = 100


def _require_grid(values: List[int], name: str) -> None:
    if not values:
        raise ValueError(f"{name} cannot be empty")
    if any(int(v) != v or v < 1 for v in values):
        raise ValueError(f"{name} entries must be positive integers, got {values}")


@dataclass
class DiscriminatorConfig:
    hidden: List[int] = field(default_factory=lambda: [48, 32])
    weight_clip: float = 1.0
    init_scale: float = 0.1
    Delta: float = 1.0

    def __post_init__(self) -> None:
        if any(h < 1 for h in self.hidden):
            raise ValueError("Hidden layer sizes must be positive")
        if self.weight_clip <= 0 or self.init_scale <= 0:
            raise ValueError("weight_clip and init_scale must be positive")
        if self.Delta < 1:
            raise ValueError("Delta must be at least 1")

    def layer_sizes(self, spec: DimensionSpec) -> List[int]:
        return [spec.d + spec.d_tilde, *self.hidden, 1]


@dataclass
class TrainingConfig:
    steps: int = 5000
    learning_rate: float = 0.05
    batch_size: int = 256
    restarts: int = 5
    momentum: float = 0.9

    def __post_init__(self) -> None:
        if self.steps < 0:
            raise ValueError("steps cannot be negative")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class EvaluationConfig:
    n_real: int = 20_000
    n_fake: int = 20_000
    census_samples: int = 20_000

    def __post_init__(self) -> None:
        if min(self.n_real, self.n_fake) < MIN_EVAL_SIZE:
            raise ValueError(f"Evaluation sizes must be at least {MIN_EVAL_SIZE}")
        if self.census_samples < 1:
            raise ValueError("census_samples must be positive")


@dataclass
class BudgetConfig:
    """Constants of the support-size formula; p comes from the discriminator layers."""

    epsilon: float = 0.1
    # None: use the analytic parameter-Lipschitz bound of the discriminator family.
    lipschitz: Optional[float] = None

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.lipschitz is not None and self.lipschitz <= 0:
            raise ValueError("lipschitz must be positive")


@dataclass
class ConcentrationConfig:
    d_tilde: int = 2
    k_grid: List[int] = field(default_factory=lambda: [16, 32])
    trials: int = 50
    sets_per_generator: int = 20

    def __post_init__(self) -> None:
        _require_grid(self.k_grid, "concentration.k_grid")
        if self.trials < 30:
            raise ValueError("concentration.trials must be at least 30")
        if self.sets_per_generator < 1:
            raise ValueError("sets_per_generator must be positive")


@dataclass
class FiniteSampleConfig:
    k: int = 4
    factor: float = 10.0

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("finite_sample.k must be positive")
        if self.factor < 1:
            raise ValueError("|S| and |T| must be at least m (factor >= 1)")


@dataclass
class BirthdayConfig:
    k: int = 4
    sample_sizes: List[int] = field(default_factory=lambda: [2, 10, 20, 30, 40, 60])
    trials: int = 400

    def __post_init__(self) -> None:
        _require_grid(self.sample_sizes, "birthday.sample_sizes")
        if min(self.sample_sizes) < 2:
            raise ValueError("Birthday sample sizes must be at least 2")
        if self.trials < 1:
            raise ValueError("birthday.trials must be positive")


@dataclass
class NoncollidingConfig:
    k_grid: List[int] = field(default_factory=lambda: [2, 4])
    n_sets: int = 500
    n_direct: int = 8000

    def __post_init__(self) -> None:
        _require_grid(self.k_grid, "noncolliding.k_grid")
        if min(self.n_sets, self.n_direct) < MIN_EVAL_SIZE:
            raise ValueError(f"n_sets and n_direct must be at least {MIN_EVAL_SIZE}")


@dataclass
class ExperimentConfig:
    spec: DimensionSpec = field(default_factory=lambda: DimensionSpec(d=32, d_tilde=4, sigma=1.0))
    image_model: CleanImageModel = field(default_factory=CleanImageModel)
    k_grid: List[int] = field(default_factory=lambda: [2, 4, 8])
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    budget: BudgetConfig = field(default_factory=BudgetConfig)
    concentration: ConcentrationConfig = field(default_factory=ConcentrationConfig)
    finite_sample: FiniteSampleConfig = field(default_factory=FiniteSampleConfig)
    birthday: BirthdayConfig = field(default_factory=BirthdayConfig)
    noncolliding: NoncollidingConfig = field(default_factory=NoncollidingConfig)
    compile_delta: float = 0.05
    master_seed: int = 0
    threads: int = 1
    max_support: int = DEFAULT_MAX_SUPPORT

    def __post_init__(self) -> None:
        _require_grid(self.k_grid, "k_grid")
        if not 0 < self.compile_delta < 1:
            raise ValueError("compile_delta must lie in (0, 1)")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")
        if self.master_seed < 0:
            raise ValueError("master_seed cannot be negative")

    def layer_sizes(self, spec: Optional[DimensionSpec] = None) -> List[int]:
        return self.discriminator.layer_sizes(spec or self.spec)

    def to_dict(self) -> dict:
        return asdict(self)


_NESTED: Dict[str, Type[Any]] = {
    "spec": DimensionSpec,
    "image_model": CleanImageModel,
    "discriminator": DiscriminatorConfig,
    "training": TrainingConfig,
    "evaluation": EvaluationConfig,
    "budget": BudgetConfig,
    "concentration": ConcentrationConfig,
    "finite_sample": FiniteSampleConfig,
    "birthday": BirthdayConfig,
    "noncolliding": NoncollidingConfig,
}


def _build(cls: Type[T], data: Dict[str, Any], where: str) -> T:
    if not isinstance(data, dict):
        raise ValueError(f"Expected an object at '{where}', got {type(data).__name__}")
    known = {f.name for f in fields(cls)}  # type: ignore[arg-type]
    kwargs = {}
    for key, value in data.items():
        name = f"{where}.{key}" if where else key
        if key not in known:
            raise ValueError(f"Unknown configuration key '{name}'")
        if cls is ExperimentConfig and key in _NESTED:
            value = _build(_NESTED[key], value, name)
        kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(data: Dict[str, Any]) -> ExperimentConfig:
    """Build a validated configuration; unknown keys at any level raise ValueError."""
    return _build(ExperimentConfig, data, "")


def load_config(path: Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Configuration file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ValueError(f"Failed to parse configuration {path}: {e}")
    return config_from_dict(data)
