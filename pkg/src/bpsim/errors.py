"""Exception types shared across the toolkit."""


class BpsimError(Exception):
    """Base class for every error raised by bpsim."""


class ContractViolation(BpsimError, ValueError):
    """An operation was called with arguments that break its precondition."""


class AccumulatorOverflow(BpsimError, OverflowError):
    """A result does not fit the configured accumulator width."""


class ModelError(BpsimError):
    """Model-spec parse or shape-inference failure."""

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class InfeasibleError(BpsimError):
    """No tile of a layer fits the on-chip buffers."""

    def __init__(self, layer, buffer, needed, available):
        self.layer = layer
        self.buffer = buffer
        self.needed = needed
        self.available = available
        super().__init__(
            f"layer '{layer}' is infeasible: minimal tile needs {needed} B of "
            f"{buffer} but only {available} B (half capacity) are available"
        )


class DecodeError(BpsimError):
    """Malformed binary program."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)


class CapacityError(BpsimError):
    """A tile exceeds the scratchpad bank it is delivered to."""


class ScheduleError(BpsimError):
    """A block violates the static schedule (e.g. consumes an unfetched tile)."""


class PipelineError(BpsimError):
    """An MS-WAGG was stepped while its converter had no free slot."""
