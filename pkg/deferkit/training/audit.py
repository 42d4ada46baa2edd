"""
Forward/backward pass accounting for one training epoch.

A RERM epoch over n examples with |A| outcomes and T ascent steps costs
n (1 + |A| T) forward passes and as many backward passes: one clean
forward per example, |A| T forwards and backwards for the proxies, and one
backward for the parameter gradient.
"""
import logging
from collections import defaultdict
from typing import Dict

from pydantic import BaseModel, Field

from deferkit.errors import ContractViolation

logger = logging.getLogger(__name__)


class PassCounter:
    """Per-example pass counts, broken down by phase."""

    def __init__(self):
        self.forwards = 0
        self.backwards = 0
        self.breakdown: Dict[str, int] = defaultdict(int)

    def tick(self, kind: str, phase: str, rows: int) -> None:
        if kind == "forward":
            self.forwards += int(rows)
        elif kind == "backward":
            self.backwards += int(rows)
        else:
            raise ContractViolation(f"unknown pass kind {kind!r}")
        self.breakdown[phase] += int(rows)

    def reset(self) -> None:
        self.forwards = 0
        self.backwards = 0
        self.breakdown = defaultdict(int)

    def snapshot(self) -> Dict[str, int]:
        return {"forwards": self.forwards, "backwards": self.backwards, **dict(sorted(self.breakdown.items()))}


class EpochAudit(BaseModel):
    """Observed versus expected pass counts of one epoch."""
    success: bool
    expected: int = Field(..., description="n * (1 + |A| * T)")
    forwards: int
    backwards: int
    breakdown: Dict[str, int] = Field(default_factory=dict)


def audit_epoch_cost(counter: PassCounter, n: int, action_count: int, T: int,
                     raise_on_mismatch: bool = False) -> EpochAudit:
    """
    Check one epoch's counts against n (1 + |A| T).

    Args:
        counter (PassCounter): Counter filled by exactly one epoch
        n (int): Training examples seen in the epoch
        action_count (int): |A|
        T (int): Ascent steps per proxy search
        raise_on_mismatch (bool): Raise instead of returning a failed audit

    Returns:
        EpochAudit: success flag, expected count, observed counts and per-phase breakdown
    """
    expected = n * (1 + action_count * T)
    audit = EpochAudit(
        success=counter.forwards == expected and counter.backwards == expected,
        expected=expected,
        forwards=counter.forwards,
        backwards=counter.backwards,
        breakdown=dict(sorted(counter.breakdown.items())),
    )
    if not audit.success:
        logger.warning(f"Epoch cost mismatch: expected {expected}, got forwards={counter.forwards} "
                       f"backwards={counter.backwards} ({audit.breakdown})")
        if raise_on_mismatch:
            raise ContractViolation(f"epoch cost mismatch: expected {expected}, breakdown {audit.breakdown}")
    return audit
