from .hyperparams import Hyperparams, TrainConfig

__all__ = ["Hyperparams", "TrainConfig"]
