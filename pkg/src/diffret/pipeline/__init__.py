from .checkpoint import Checkpoint, init_checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, TrainConfig
from .estimator import DiffusionRetriever
from .evaluation import diffusion_trace, evaluate, fuse_scores, out_domain_eval, score_matrix
from .metrics import EvalReport, ranks_from_scores, retrieval_metrics
from .training import hybrid_loss, train

__all__ = [
    "Checkpoint", "DiffusionRetriever", "EvalReport", "RunConfig", "TrainConfig", "diffusion_trace", "evaluate",
    "fuse_scores", "hybrid_loss", "init_checkpoint", "load_checkpoint", "out_domain_eval",
    "ranks_from_scores", "retrieval_metrics", "save_checkpoint", "score_matrix", "train",
]
