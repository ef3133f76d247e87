from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List


class Verdict(str, Enum):
    PASS = "pass"
    FAIL = "fail"
    INCONCLUSIVE = "inconclusive"


@dataclass
class ExperimentReport:
    """
    Outcome of one Monte-Carlo experiment.

    Attributes:
        name (str): Experiment name, also the stem of its output files.
        parameters (dict): Resolved inputs, including the seed derivation rule.
        rows (list): One record per trial, in deterministic key order.
        verdict (Verdict): pass / fail / inconclusive.
        tolerance_used (float): The tolerance the verdict was judged against.
        wall_time (float): Seconds spent; never used by the verdict.
        summary (dict): Aggregates the verdict was computed from.
    """
    name: str
    parameters: Dict[str, Any]
    rows: List[Dict[str, Any]]
    verdict: Verdict
    tolerance_used: float
    wall_time: float = 0.0
    summary: Dict[str, Any] = field(default_factory=dict)

    @property
    def verdict_line(self) -> str:
        return f"{self.verdict.value} tolerance={self.tolerance_used:g}"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "parameters": self.parameters,
            "verdict": self.verdict.value,
            "tolerance_used": self.tolerance_used,
            "wall_time": self.wall_time,
            "summary": self.summary,
            "rows": len(self.rows),
        }
