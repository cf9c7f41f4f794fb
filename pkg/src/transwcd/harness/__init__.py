from .checkpoint import Checkpoint
from .config import RunConfig, load as load_config, resolve as resolve_config
from .schedule import TrainConfig, lr_at
from .train import evaluate, evaluate_model, sweep_alpha, train

__all__ = [
    "Checkpoint", "RunConfig", "TrainConfig", "evaluate", "evaluate_model",
    "load_config", "lr_at", "resolve_config", "sweep_alpha", "train",
]
