"""Exception hierarchy shared by all posekit modules."""


class PosekitError(Exception):
    """Base class for all posekit errors."""


class DegeneratePoint(PosekitError):
    """A 3D point has (near-)zero depth under the given mapping."""


class InvalidExtent(PosekitError):
    """Non-positive bounding-box extent."""


class DegenerateConfiguration(PosekitError):
    """Correspondence set is rank-deficient or ambiguous for the solve."""


class IllConditioned(PosekitError):
    """Eigen-gap too small for a stable eigenvector derivative."""


class NoConsensus(PosekitError):
    """RANSAC found no consensus set of the minimum size."""


class ShapeMismatch(PosekitError):
    """Tensor shapes disagree with the operation's contract."""


class DimensionMismatch(PosekitError):
    """Heatmap stacks have different dimensions."""


class DegenerateSet(PosekitError):
    """Instance set too small for set-level normalization."""


class NonFiniteGradient(PosekitError):
    """A gradient contains NaN or infinity; the optimizer step is aborted."""


class NonFiniteLoss(PosekitError):
    """Training loss became NaN or infinity."""


class MissingChannel(PosekitError):
    """A heatmap channel lacks a detectable peak."""


class EstimationFailed(PosekitError):
    """Both the learned and the fallback pose estimation paths failed."""


class RejectionExhausted(PosekitError):
    """View-sphere rejection sampling exceeded its retry budget."""


class EmptyEvaluation(PosekitError):
    """A metric was requested over zero items."""


class InvalidConfig(PosekitError):
    """Unknown or malformed configuration key/value."""


class FormatError(PosekitError):
    """A binary container has bad magic bytes, version, or structure."""


class MissingModel(PosekitError):
    """A command requires a model file that was not provided or found."""
