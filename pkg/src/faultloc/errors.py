"""Exception hierarchy shared by all faultloc modules."""


class FaultlocError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(FaultlocError):
    """Malformed or missing configuration / input file."""


# --- phasor / line parameters ---

class DegenerateLineError(FaultlocError):
    """Line parameters that make impedance-based math meaningless (|z1| = 0, d_max <= 0)."""


class ZeroLoopCurrentError(FaultlocError):
    """Loop current magnitude below the configured floor; the record is unusable."""


# --- short-circuit solver ---

class InvalidScenarioError(FaultlocError):
    """Scenario references an unknown line or lies outside the line geometry."""


class SingularNetworkError(FaultlocError):
    """Network equations have no solution (zero driving impedance or singular system)."""


class EmptyGridError(FaultlocError):
    """Scenario grid with an empty Cartesian product."""


# --- locators ---

class ZeroDenominatorError(FaultlocError):
    """Locator denominator magnitude below guard threshold."""


class NotApplicableError(FaultlocError):
    """Locator method undefined for the requested fault loop."""


# --- feature pipeline ---

class InvalidEstimateError(FaultlocError):
    """Feature extraction requested for an invalid distance estimate."""


class InsufficientSamplesError(FaultlocError):
    """Not enough samples for the k-NN mutual information estimator."""


class DegenerateFeatureError(FaultlocError):
    """Feature column with zero variance."""


class NotFittedError(FaultlocError):
    """Scaler or model used before fitting/training."""


class ZeroVarianceError(FaultlocError):
    """Scaler fitted on a constant column."""


# --- GRN model ---

class InvalidHyperparamsError(FaultlocError):
    """Hyperparameter outside its admissible range."""


class BatchTooSmallError(FaultlocError):
    """Training-mode forward pass needs at least two rows for batch statistics."""


class StaleCacheError(FaultlocError):
    """Backward pass called with a cache from a different batch/model."""


class ShapeMismatchError(FaultlocError):
    """Tensor shapes inconsistent between parameters, gradients, or optimizer state."""


class EmptyDatasetError(FaultlocError):
    """Training requested on an empty dataset."""


class DivergedTrainingError(FaultlocError):
    """Loss became non-finite during training."""


# --- tuner ---

class EmptySpaceError(FaultlocError):
    """Search space with no parameters or inverted bounds."""


class AllTrialsFailedError(FaultlocError):
    """Every tuning trial raised; no objective value available."""


class InsufficientTrialsError(FaultlocError):
    """Too few completed trials for an importance estimate."""


# --- evaluation ---

class EmptyGroupError(FaultlocError):
    """Aggregation over an empty scenario group."""


class EmptyInputError(FaultlocError):
    """Empirical CDF of an empty list."""
