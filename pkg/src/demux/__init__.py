"""Budget-constrained data selection for multilingual annotation.

Given model representations and output distributions for an unlabeled
multilingual source pool and a small unlabeled target pool, the engine
prescribes exactly which source examples to send for annotation under a
fixed budget, using distance, uncertainty, and hybrid neighborhood
strategies plus the standard baselines.
"""

from .core import (
    Dataset,
    Example,
    Role,
    SeqProbs,
    SpanLogProbs,
    TaskKind,
    TokenProbs,
    WordAlignment,
    dedup,
    pool_representation,
    target_distance,
)
from .dataset_io import read_dataset, read_plan, write_dataset, write_plan
from .errors import DemuxError
from .orchestrator import ALConfig, DirectoryProvider, RoundState, run_loop, run_round
from .selection import (
    Exclusions,
    SelectionPlan,
    Strategy,
    same_ratio_random,
    select_average_dist,
    select_egalitarian,
    select_gold,
    select_knn_uncertainty,
    select_random,
    select_uncertainty,
)
from .uncertainty import (
    Scorer,
    margin_min_token,
    margin_sequence,
    mnlp_token,
    score_dataset,
    sum_prob_qa,
)

__version__ = "0.1.0"

__all__ = [
    "ALConfig",
    "Dataset",
    "DemuxError",
    "DirectoryProvider",
    "Example",
    "Exclusions",
    "Role",
    "RoundState",
    "Scorer",
    "SelectionPlan",
    "SeqProbs",
    "SpanLogProbs",
    "Strategy",
    "TaskKind",
    "TokenProbs",
    "WordAlignment",
    "dedup",
    "margin_min_token",
    "margin_sequence",
    "mnlp_token",
    "pool_representation",
    "read_dataset",
    "read_plan",
    "run_loop",
    "run_round",
    "same_ratio_random",
    "score_dataset",
    "select_average_dist",
    "select_egalitarian",
    "select_gold",
    "select_knn_uncertainty",
    "select_random",
    "select_uncertainty",
    "sum_prob_qa",
    "target_distance",
    "write_dataset",
    "write_plan",
]
