from .config import STAGES, StageConfig, desk_scale, paper_defaults
from .data import SampleBank, crop_resize, rng_for
from .trainer import (MetricsLog, TrainingDiverged, TrainState, assemble, init_e2e, load_predictor,
                      new_state, pretrain_mnet, pretrain_tnet, read_log, resume_state, run,
                      save_state, set_deterministic, train_baseline, train_e2e, trimap_accuracy)

__all__ = [
    "STAGES", "StageConfig", "desk_scale", "paper_defaults", "SampleBank", "crop_resize",
    "rng_for", "MetricsLog", "TrainingDiverged", "TrainState", "assemble", "init_e2e",
    "load_predictor", "new_state", "pretrain_mnet", "pretrain_tnet", "read_log", "resume_state",
    "run", "save_state", "set_deterministic", "train_baseline", "train_e2e", "trimap_accuracy",
]
