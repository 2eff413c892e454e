"""Dual-modal (frame + event) binarization with asynchronous state propagation."""

from dualbin.core import (
    BinaryFrame,
    CalibrationParams,
    Event,
    EventStream,
    ExposureWindow,
    IntensityFrame,
    PixelDomain,
    StreamError,
    validate_stream,
)

__version__ = "0.1.0"

__all__ = [
    "BinaryFrame",
    "CalibrationParams",
    "Event",
    "EventStream",
    "ExposureWindow",
    "IntensityFrame",
    "PixelDomain",
    "StreamError",
    "validate_stream",
    "__version__",
]
