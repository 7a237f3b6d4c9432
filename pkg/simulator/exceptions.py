class SimulationError(Exception):
    """Base class for every error raised by the simulator."""

    def __init__(self, detail="Simulation failed."):
        super().__init__(detail)
        self.detail = detail


class ConfigError(SimulationError):
    pass


class PayloadError(SimulationError):
    pass


class ChannelError(SimulationError):
    pass


class SpecError(SimulationError):
    pass


class AssumptionViolation(SimulationError):
    pass


class LinkFailure(SimulationError):
    def __init__(self, detail, *, block_index, attempts):
        super().__init__(detail)
        self.block_index = block_index
        self.attempts = attempts


class ExperimentAborted(SimulationError):
    def __init__(self, detail, *, reports, cause=None):
        super().__init__(detail)
        self.reports = list(reports)
        self.cause = cause
