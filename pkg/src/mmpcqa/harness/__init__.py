from .config import (
    LossConfig, OptimConfig, RenderSettings, RunConfig, SeedConfig,
    derive_seed,
)
from .training import (
    RunRecord, cross_validate, evaluate, fold_plan, train,
)
from .ablation import ablate

__all__ = [
    "LossConfig", "OptimConfig", "RenderSettings", "RunConfig", "SeedConfig",
    "derive_seed", "RunRecord", "cross_validate", "evaluate", "fold_plan",
    "train", "ablate",
]
