"""
Exception hierarchy for ebmlife.
"""
from typing import List, Optional


class EbmError(Exception):
    """Base class for all ebmlife errors"""


class ShapeError(EbmError, ValueError):
    """Array dimensions do not line up"""


class NonFiniteInputError(EbmError, ValueError):
    """An input state contains NaN or inf"""


class NumericOverflowError(EbmError, FloatingPointError):
    """
    A computation produced a non-finite value.

    `chain` identifies the offending batch slot (when known) and `step`
    the training iteration (filled in by trainers as the error propagates).
    """

    def __init__(self, message: str, chain: Optional[int] = None, step: Optional[int] = None):
        self.chain = chain
        self.step = step
        super().__init__(message)

    def __str__(self) -> str:
        text = super().__str__()
        if self.chain is not None:
            text += f" [chain {self.chain}]"
        if self.step is not None:
            text += f" [training step {self.step}]"
        return text


class BankError(EbmError, ValueError):
    """Sample-bank precondition or invariant violated"""


class ConfigError(EbmError, ValueError):
    """Experiment configuration rejected; carries every problem found"""

    def __init__(self, errors: List[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class CheckpointError(EbmError):
    """Checkpoint file cannot be read back"""


class FixtureQualityError(EbmError, RuntimeError):
    """A fitted toy fixture missed its quality bar"""
