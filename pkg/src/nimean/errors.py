"""Exception types shared across the package."""


class NimeanError(Exception):
    """Base class for all package errors."""


class ValidationError(NimeanError, ValueError):
    """Invalid user-supplied data (distributions, configs, parameters)."""


class SizeError(ValidationError):
    """Register or qubit count out of the supported range."""


class ShapeError(ValidationError):
    """Dimension or wire mismatch between operands."""


class PreconditionError(ValidationError):
    """An operation was called outside its documented preconditions."""


class RangeError(ValidationError):
    """A value lies outside a required interval."""


class BudgetExceeded(NimeanError, RuntimeError):
    """An oracle was queried more than its repetition budget allows."""


class TurnOrderViolation(NimeanError, RuntimeError):
    """An oracle was queried after a later oracle had already been used."""


class InsufficientOracles(NimeanError, RuntimeError):
    """The family holds fewer oracles than the circuit schedule needs."""


class ScheduleError(NimeanError, RuntimeError):
    """A state-preparation schedule ran out of entries."""


class ContractViolation(NimeanError, RuntimeError):
    """A subroutine's input does not meet the guarantee it relies on."""


class ConstructionError(NimeanError, RuntimeError):
    """A numerical construction degenerated (e.g. an empty intersection)."""


class RegisterOverflow(NimeanError, MemoryError):
    """The requested circuit needs more qubits than the dense simulator allows."""
