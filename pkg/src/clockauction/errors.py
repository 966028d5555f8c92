"""Exception hierarchy shared by the library and the CLI."""


class ClockAuctionError(Exception):
    """Base class for all library errors."""


class InputError(ClockAuctionError, ValueError):
    """Malformed user input: bad indices, invalid distributions, schema problems."""


class CapacityError(ClockAuctionError):
    """A query would require an exhaustive search beyond the configured cap."""


class UndefinedConditionalError(ClockAuctionError, ValueError):
    """Conditioning on an event of probability zero."""


class ContractViolation(ClockAuctionError):
    """An auction broke a clock-auction rule. This is a bug in the mechanism, not in the input."""


class NonTerminationError(ContractViolation):
    """The clock exceeded the configured price cap.

    The partial transcript is attached so callers can inspect what happened.
    """

    def __init__(self, message, transcript=None):
        super().__init__(message)
        self.transcript = transcript
