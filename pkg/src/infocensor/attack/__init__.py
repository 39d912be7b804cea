"""Decomposition attack over pluggable model backends."""

from .backends import HTTPBackend, ModelBackend, ScriptedBackend, make_backend
from .decomposition import (
    AttackConfig,
    AttackTranscript,
    Interaction,
    aggregate,
    attack_config_from_dict,
    extract_answer,
    generate_subquestions,
    interact,
    load_attack_config,
    run_decomposition_attack,
)
from .filters import AllowAll, FilterBackend, GuardModelFilter, ScriptedFilter, make_filter
from .prompts import FewShotSet, default_fewshot, load_fewshot, parse_numbered

__all__ = [
    "AllowAll",
    "AttackConfig",
    "AttackTranscript",
    "FewShotSet",
    "FilterBackend",
    "GuardModelFilter",
    "HTTPBackend",
    "Interaction",
    "ModelBackend",
    "ScriptedBackend",
    "ScriptedFilter",
    "aggregate",
    "attack_config_from_dict",
    "default_fewshot",
    "extract_answer",
    "generate_subquestions",
    "interact",
    "load_attack_config",
    "load_fewshot",
    "make_backend",
    "make_filter",
    "parse_numbered",
    "run_decomposition_attack",
]
