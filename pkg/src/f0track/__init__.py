"""Distinct-element sketches with high-probability accuracy and strong tracking."""

from .errors import (
    AllDiscarded,
    AllGroupsBroken,
    DecodeError,
    F0TrackError,
    OracleCapacityError,
    OracleUnavailable,
    SaturationError,
    SeedLengthError,
)
from .fm_core import BROKEN, ConstantTracker, FmEstimator, TrackerConfig, group_decode, group_encode
from .hashing import KWiseHash, lsb, new_kwise
from .knw import KnwSketch, OccupancyModel, phi, phi_inverse
from .pseudorandom import ExpanderGraph, XiSampler, averaging_sample, expander_walk
from .trackers import HighAccuracyEstimator, Mode, StrongTracker, ha_build, st_build

__all__ = [
    "AllDiscarded", "AllGroupsBroken", "BROKEN", "ConstantTracker", "DecodeError",
    "ExpanderGraph", "F0TrackError", "FmEstimator", "HighAccuracyEstimator", "KWiseHash",
    "KnwSketch", "Mode", "OccupancyModel", "OracleCapacityError", "OracleUnavailable",
    "SaturationError", "SeedLengthError", "StrongTracker", "TrackerConfig", "XiSampler",
    "averaging_sample", "expander_walk", "group_decode", "group_encode", "ha_build", "lsb",
    "new_kwise", "phi", "phi_inverse", "st_build",
]
