"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid user-supplied parameters (distribution, solver or run config)."""


class StateError(RuntimeError):
    """A protocol state was used in a way the state diagram does not allow."""


class SimulationError(RuntimeError):
    """A Monte Carlo run failed, e.g. too many aborted trajectories."""
