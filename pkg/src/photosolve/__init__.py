"""Direct photometric optimization of dense depth, camera motion, appearance
flow and optical flow from a pair (or triplet) of calibrated frames, plus a
synthetic-scene harness and an evaluation suite."""

__version__ = "0.1.0"

from .geometry import Intrinsics, PoseSE3

__all__ = ["Intrinsics", "PoseSE3", "__version__"]
