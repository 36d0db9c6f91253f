"""Semantic reasoners: staged layout proposal and scene edits."""

from .base import (STAGES, ObjectDraft, Rejection, SceneDiff, StageProposal, StageRequest, apply_diff,
                   merge_proposal, propose_stage, validate_proposals)
from .llm import EndpointConfig, LLMReasoner, extract_json
from .mock import MockReasoner, parse_instruction
