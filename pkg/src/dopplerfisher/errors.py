"""Exception hierarchy shared by all modules."""


class DopplerFisherError(Exception):
    """Base class for every error raised by this package."""

    code = "error"

    def to_dict(self):
        return {"error": self.code, "message": str(self)}


class ConfigError(DopplerFisherError):
    code = "config"


class MissingKey(ConfigError):
    code = "missing_key"


class NonPositiveValue(ConfigError):
    code = "non_positive_value"


class NonFiniteValue(ConfigError):
    code = "non_finite_value"


class GridOverflow(DopplerFisherError):
    code = "grid_overflow"


class GridTooNarrow(DopplerFisherError):
    code = "grid_too_narrow"


class KickOffGrid(DopplerFisherError):
    code = "kick_off_grid"


class ChirpMismatch(DopplerFisherError):
    code = "chirp_mismatch"


class ThetaOutOfRange(DopplerFisherError):
    code = "theta_out_of_range"


class AliasingDetected(DopplerFisherError):
    code = "aliasing_detected"


class ToleranceNotMet(DopplerFisherError):
    code = "tolerance_not_met"


class NonFiniteDetuning(DopplerFisherError):
    code = "non_finite_detuning"


class GaussSingular(DopplerFisherError):
    code = "gauss_singular"


class NoConvergence(DopplerFisherError):
    code = "no_convergence"


class DegenerateDistribution(DopplerFisherError):
    code = "degenerate_distribution"


class FlatObjective(DopplerFisherError):
    code = "flat_objective"


class TooFewSamples(DopplerFisherError):
    code = "too_few_samples"


class NonPowerOfTwo(DopplerFisherError):
    code = "non_power_of_two"


class AxisEmpty(DopplerFisherError):
    code = "axis_empty"


class JobError(DopplerFisherError):
    """A parallel job failed; ``index`` identifies the task."""

    code = "job_failed"

    def __init__(self, index, cause):
        super().__init__(f"job {index} failed: {type(cause).__name__}: {cause}")
        self.index = index
        self.cause = cause

    def to_dict(self):
        d = super().to_dict()
        d["index"] = self.index
        d["cause"] = getattr(self.cause, "code", type(self.cause).__name__)
        return d


class SweepPointFailed(DopplerFisherError):
    """A sweep point failed; ``point`` holds its axis values."""

    code = "sweep_point_failed"

    def __init__(self, point, cause):
        super().__init__(f"sweep point {point} failed: {type(cause).__name__}: {cause}")
        self.point = point
        self.cause = cause

    def to_dict(self):
        d = super().to_dict()
        d["point"] = self.point
        d["cause"] = getattr(self.cause, "code", type(self.cause).__name__)
        return d
