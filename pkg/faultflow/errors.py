"""
Exception hierarchy
"""
from typing import List, Optional, Sequence

import numpy as np


class FaultFlowError(Exception):
    """Root of all library errors"""


class InvalidArgumentError(FaultFlowError, ValueError):
    """Dimension, shape or range violation"""


class NumericalDomainError(FaultFlowError, ArithmeticError):
    """A map evaluated to a non-finite value"""


class RelativeDegreeError(FaultFlowError):
    """No finite relative degree up to the configured maximum"""

    def __init__(self, output_index: int, max_order: int):
        self.output_index = output_index
        self.max_order = max_order
        super().__init__(
            f"output {output_index} has no relative degree <= {max_order}"
        )


class IsolabilityViolationError(FaultFlowError):
    """Isolating projector requested for a non-isolable channel"""


class DesignInfeasibleError(FaultFlowError):
    """Observer design impossible (undetectable linearization)"""


class MetricVerificationError(FaultFlowError):
    """Contraction inequality fails at sampled states"""

    def __init__(self, message: str, states: Sequence[np.ndarray]):
        self.states: List[np.ndarray] = [np.asarray(s) for s in states]
        super().__init__(f"{message} ({len(self.states)} violating states)")


class ObserverDivergedError(FaultFlowError):
    """Observer state became non-finite"""

    def __init__(self, time_s: float, reason: Optional[str] = None):
        self.time_s = time_s
        self.reason = reason or "non-finite observer state"
        super().__init__(f"{self.reason} at t={time_s:.6f} s")


class TrainingDivergedError(FaultFlowError):
    """Feature training produced a non-finite loss"""


class GenerationFailureError(FaultFlowError):
    """Too many dataset scenarios were dropped"""


class IncomparableTracesError(FaultFlowError):
    """Traces come from different scenarios or time grids"""
