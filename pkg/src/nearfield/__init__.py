"""Quadrupole description of 2D microwave near-fields probed by AC Zeeman shifts.

Submodules
----------
model      canonical five-parameter field model and its normalization
grid       sampled field grids, CSV I/O and quadrupole extraction
wires      analytic line-current oracle and preset geometries
hyperfine  9Be+ ground-state levels, polarization and AC Zeeman shifts
shiftmap   forward shift maps and their CSV format
fit        joint least-squares fit of shift maps
render     PGM heatmaps
cli        command-line front end
"""

__version__ = "0.1.0"

from .errors import (AmbiguousConnection, AmbiguousPhase, DataError, DegenerateGradient,
                     EmptyMap, FormatError, IllConditioned, NearfieldError, NoInteriorMinimum,
                     NonRectangular, NoSignChange, NotConverged, NumericalError, RankDeficient,
                     ResonanceProximity, TooCloseToWire, Underdetermined, UnknownLevel,
                     UnknownPreset)
from .model import QuadrupoleParams, canonicalize, decompose, field_at, normalize
from .grid import FieldGrid, extract_quadrupole, load_grid, locate_minimum, save_grid
from .wires import LineCurrent, WireSet, field_of_wires, preset_scenario
from .hyperfine import BE9, TRANSITIONS, diagonalize_ground_state, parse_transition
from .shiftmap import ShiftMap, forward_shift_map, load_shift_map, save_shift_map
from .fit import FitProblem, FitResult, fit_parameters
