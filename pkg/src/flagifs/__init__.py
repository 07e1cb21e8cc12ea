"""Iterated function systems acting on flag bundles.

Flag derivatives, Lyapunov spectra along periodic orbits, maneuverable
word construction, minimality evidence and the orbit-improvement
bootstrap.
"""

__version__ = "0.1.0"

from .cocycle import FurstenbergVector, LyapunovVector, PeriodicOrbitRecord, furstenberg_estimate, lyapunov_vector_of_periodic
from .flags import Flag, derivative_matrix, flag_map, qr_positive, stable_flag
from .ifs import IFS, GeneratorMap, SkewPoint, load_ifs

__all__ = [
    "Flag", "FurstenbergVector", "GeneratorMap", "IFS", "LyapunovVector", "PeriodicOrbitRecord", "SkewPoint",
    "derivative_matrix", "flag_map", "furstenberg_estimate", "load_ifs", "lyapunov_vector_of_periodic",
    "qr_positive", "stable_flag",
]
