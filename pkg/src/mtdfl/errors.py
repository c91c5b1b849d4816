"""Exception hierarchy shared across the simulator."""


class MtdflError(Exception):
    """Base class for all errors raised by this package."""


class InvalidStateError(MtdflError):
    """An entity violates a structural invariant (e.g. a device off the road grid)."""


class InfeasibleLinkError(MtdflError):
    """A transfer is required over a link with non-positive rate."""


class AggregationError(MtdflError):
    """Parameter vectors passed to an aggregation step are inconsistent."""


class TrainingError(MtdflError):
    """A gradient or learning target became non-finite."""


class DegenerateStatisticsError(MtdflError):
    """Statistics requested over too few samples (e.g. a std over one model)."""


class InsufficientHistoryError(MtdflError):
    """An event log is too short for the requested window length."""


class ConfigError(MtdflError):
    """Invalid configuration value, unknown config key, or malformed input artifact."""


class CheckpointError(MtdflError):
    """A checkpoint file is malformed or does not match the target model."""


class TraceParseError(MtdflError):
    """A trace CSV could not be parsed; message names the offending line."""
