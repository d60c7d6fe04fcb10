"""Visual token compaction: multi-branch merging, router-gated pruning and
reconstruction of pruned tokens, with the matching cost and density metrics."""

from .config import PipelineConfig, load_config
from .errors import ConfigError, DataError, DegenerateInputError, ShapeError, StageError
from .hte import QWEN3_06B_LIKE, HteConfig, LlmShape, run_stack
from .metrics import coding_rate, flops_estimate, stable_rank, token_schedule
from .mke import FeatureMap, MergeTrace, MkeConfig, bipartite_merge, mke_forward
from .pipeline import run_pipeline, sweep
from .sip import SipConfig, fsq_quantize, propagate, qrec_loss

__version__ = "0.1.0"
