"""Exception types shared across the package."""


class OsimError(Exception):
    """Base class for all package errors."""


# --- model backend -----------------------------------------------------------

class UnsupportedModelFormat(OsimError):
    pass


class UnknownFeatureLayer(OsimError):
    def __init__(self, layer: str, available: list[str]):
        self.layer = layer
        self.available = list(available)
        super().__init__(
            f"feature layer {layer!r} not exposed by the model; "
            f"available: {', '.join(sorted(available))}"
        )


class InferenceFailure(OsimError):
    pass


class NonFiniteFeatures(OsimError):
    pass


class EmptyImage(OsimError):
    pass


# --- metric core / saliency --------------------------------------------------

class ShapeMismatch(OsimError):
    pass


class EmptyRecordSet(OsimError):
    pass


class BoxOutOfBounds(OsimError):
    pass


# --- scene scoring -----------------------------------------------------------

class NoObjectsDetected(OsimError):
    pass


class PairingMismatch(OsimError):
    pass


# --- baselines ---------------------------------------------------------------

class DimensionMismatch(OsimError):
    pass


class TooSmall(OsimError):
    pass


# --- harness -----------------------------------------------------------------

class StepOutOfRange(OsimError):
    pass


class DegenerateAnchors(OsimError):
    pass


class UnknownColumn(OsimError):
    pass


class MalformedRow(OsimError):
    pass


class OutOfRangeMOS(OsimError):
    pass


class ConstantSeries(OsimError):
    pass


class LengthMismatch(OsimError):
    pass
