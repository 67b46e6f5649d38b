"""Few-shot segmentation guidance: hybrid linear-attention prototype alignment,
class-agnostic prototype priors, and a parameter-free decoder, with oracles
and a timing harness."""

from .aggregation import Prediction, aggregate, decode, multishot_fuse
from .ckmm import BasePrototypeBank, build_bank, probability_map, wgap
from .episode import (
    EpisodeTask,
    SupportPair,
    SyntheticConfig,
    generate_episode,
    generate_instance,
    load_episode,
    save_episode,
)
from .metrics import EvalReport, fb_iou, fold_report, iou
from .p2b import PositionEmbedding, block_importance, extract_blocks, p2b_align, select_topk
from .p2p import Projection, explicit_attention_oracle, p2p_align
from .pipeline import Pipeline, RunConfig, build_synthetic_bank, evaluate, generate_episodes
from .pyramid import PyramidConfig, hybrid_combine, pyramid_align

__version__ = "0.1.0"
