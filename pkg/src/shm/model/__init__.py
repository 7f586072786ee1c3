from .checkpoint import Checkpoint, CheckpointError, fingerprint, load_checkpoint, save_checkpoint
from .fusion import fuse, fuse_conditional
from .networks import MNet, MNetConfig, TNet, TNetConfig
from .shm import (INFERENCE_LIMIT, RegBaseline, SegBaseline, SemanticMatting, infer_full,
                  inference_size, to_tensor)

__all__ = [
    "Checkpoint", "CheckpointError", "fingerprint", "load_checkpoint", "save_checkpoint",
    "fuse", "fuse_conditional", "MNet", "MNetConfig", "TNet", "TNetConfig",
    "INFERENCE_LIMIT", "RegBaseline", "SegBaseline", "SemanticMatting", "infer_full",
    "inference_size", "to_tensor",
]
