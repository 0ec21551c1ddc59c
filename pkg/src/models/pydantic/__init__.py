"""Pydantic models for run records.

``ExperimentConfig`` lives in ``.experiment`` and is imported from there; it
depends on the rule and experiment registries, which themselves use
``RunRecord``.
"""

from .records import RunRecord, canonical_json, content_hash

__all__ = [
    "RunRecord",
    "canonical_json",
    "content_hash",
]
