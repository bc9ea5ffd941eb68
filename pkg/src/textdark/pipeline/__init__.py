"""Configuration, training loops, checkpoints and batch commands."""
from .config import RunConfig, Schedule, load_config, validate
from .train import EnhancerTrainer, SynthTrainer, lr_schedule, train_enhancer, train_synth

__all__ = ["RunConfig", "Schedule", "load_config", "validate", "EnhancerTrainer", "SynthTrainer",
           "lr_schedule", "train_enhancer", "train_synth"]
