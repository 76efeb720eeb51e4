"""Partition-parallel IVoting forests with lazy ensemble evaluation."""

from .data import Block, SynthSpec, load_block, shuffle_split, synth_generate, write_block
from .engine import TrainConfig, load_ensemble, merge_partitions, save_ensemble, train_distributed
from .errors import CometError, JobError, ParseError, UnsupportedError, ValidationError
from .ivoting import IVoteParams, OOBTally, bag, ivote
from .lazy import CommitteeEvaluator, LazyEvaluator, LazyResult, full_evaluate, lazy_evaluate
from .metrics import EvalReport, bite_size_sweep, disagreement_rate, evaluate
from .sim import SimConfig, SimReport, simulate, sweep
from .stopping import Rule, StopConfig, StoppingTable, build_table, should_stop
from .tree import DecisionTree, Ensemble, TreeParams, train_tree

__version__ = "0.1.0"

__all__ = [
    "Block", "SynthSpec", "load_block", "shuffle_split", "synth_generate", "write_block",
    "TrainConfig", "load_ensemble", "merge_partitions", "save_ensemble", "train_distributed",
    "CometError", "JobError", "ParseError", "UnsupportedError", "ValidationError",
    "IVoteParams", "OOBTally", "bag", "ivote",
    "CommitteeEvaluator", "LazyEvaluator", "LazyResult", "full_evaluate", "lazy_evaluate",
    "EvalReport", "bite_size_sweep", "disagreement_rate", "evaluate",
    "SimConfig", "SimReport", "simulate", "sweep",
    "Rule", "StopConfig", "StoppingTable", "build_table", "should_stop",
    "DecisionTree", "Ensemble", "TreeParams", "train_tree",
]
