"""Guarded-command modeling language for factored MDPs."""
from .expr import compile_expr, evaluate, parse_expr_text, to_text
from .model import (
    Assignment,
    Command,
    Distribution,
    FactoredMdp,
    RewardDef,
    Update,
    Variable,
    all_states,
    check_state,
    enabled_actions,
    reward,
    state_labels,
    successor_distribution,
)
from .parser import model_digest, parse_model, pretty_print, read_model

__all__ = [
    "Assignment", "Command", "Distribution", "FactoredMdp", "RewardDef", "Update", "Variable",
    "all_states", "check_state", "compile_expr", "enabled_actions", "evaluate", "model_digest", "parse_expr_text",
    "parse_model", "pretty_print", "read_model", "reward", "state_labels", "successor_distribution",
    "to_text",
]
