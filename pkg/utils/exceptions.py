# utils/exceptions.py
from typing import Iterable, Optional


class AdpcError(Exception):
    """Base error. exit_code 1 = validation problem, 2 = runtime failure."""
    exit_code = 1


# --- CAUSAL ENGINE ---

class SCMError(AdpcError):
    pass


class CycleDetected(SCMError):
    pass


class CpdShapeMismatch(SCMError):
    def __init__(self, variable: str, expected: tuple, actual: tuple):
        self.variable = variable
        self.expected = expected
        self.actual = actual
        super().__init__(f"CPD of '{variable}' has shape {actual}, expected {expected}")


class CpdRowNotNormalized(SCMError):
    def __init__(self, variable: str, row: tuple, total: float):
        self.variable = variable
        self.row = row
        self.total = total
        super().__init__(f"CPD row {row} of '{variable}' sums to {total!r} (or has negative entries)")


class MissingAssignment(SCMError):
    def __init__(self, missing: Iterable[str]):
        self.missing = sorted(missing)
        super().__init__(f"Assignment is missing variables: {', '.join(self.missing)}")


class ZeroProbabilityEvidence(SCMError):
    pass


class UnknownVariable(SCMError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"Unknown variable '{name}'")


class ValueOutOfRange(SCMError):
    pass


class InvalidAdjustmentSet(SCMError):
    pass


class StateSpaceTooLarge(SCMError):
    def __init__(self, size: int, limit: int):
        self.size = size
        self.limit = limit
        super().__init__(f"Joint state space has {size} states, limit is {limit}")


# --- TEXT ---

class EmptyCorpus(AdpcError):
    pass


class MissingRequiredSection(AdpcError):
    def __init__(self, missing: Iterable[str]):
        self.missing = list(missing)
        super().__init__(f"Summary is missing required sections: {', '.join(self.missing)}")


# --- NETWORK ---

class NonFiniteInput(AdpcError):
    exit_code = 2


class ShapeMismatch(AdpcError):
    pass


class IndivisibleVolume(AdpcError):
    pass


class AllTokensMasked(AdpcError):
    exit_code = 2


# --- DATA / TRAINING ---

class InvalidSpec(AdpcError):
    pass


class ConfigError(AdpcError):
    pass


class MissingFile(AdpcError):
    def __init__(self, path, line: Optional[int] = None):
        self.path = str(path)
        self.line = line
        where = f" (manifest line {line})" if line else ""
        super().__init__(f"Missing file: {self.path}{where}")


class BadLabel(AdpcError):
    def __init__(self, label: str, line: int):
        self.label = label
        self.line = line
        super().__init__(f"Bad label '{label}' at manifest line {line}")


class ParseError(AdpcError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        where = f"line {line}: " if line else ""
        super().__init__(f"{where}{message}")


class NonFiniteGradient(AdpcError):
    exit_code = 2


class NonFiniteLoss(AdpcError):
    exit_code = 2


class ClassAbsentInSplit(AdpcError):
    pass


class ClassAbsent(AdpcError):
    pass


class CheckpointMismatch(AdpcError):
    pass


# --- CLI ---

class UsageError(AdpcError):
    pass
