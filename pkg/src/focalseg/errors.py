"""Exception types shared across the package."""


class FocalSegError(Exception):
    """Base class for all focalseg errors."""


class NoBoundary(FocalSegError):
    """Mask is all-foreground or all-background, so no class boundary exists."""


class InvalidEpsilon(FocalSegError):
    """Boundary-focus exponent is negative or non-finite."""


class ShapeMismatch(FocalSegError):
    """Prediction / target / weight shapes are incompatible."""


class NonFiniteInput(FocalSegError):
    """An input tensor contains NaN or infinite values."""


class InvalidGamma(FocalSegError):
    """Focal exponent outside the supported domain."""


class UnknownLoss(FocalSegError):
    """Requested loss name is not in the derivation lattice."""


class InvalidPlacement(FocalSegError):
    """Attention placement is out of range, duplicated, or not present."""


class NonFiniteLoss(FocalSegError):
    """Training loss became NaN or infinite."""


class MissingPair(FocalSegError):
    """Dataset directory lacks a matching image/mask pair."""


class UnreadableImage(FocalSegError):
    """An image file exists but cannot be decoded."""


class TooSmall(FocalSegError):
    """Dataset has too few samples to split."""


class InvalidFraction(FocalSegError):
    """Foreground fraction outside the supported range."""


class ConfigError(FocalSegError):
    """Experiment configuration is malformed or inconsistent."""
