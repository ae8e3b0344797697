"""Cahn-Hilliard-Darcy phase-field solver with chemotaxis-type cross diffusion,
source terms and sharp-interface diagnostics.

Modules
-------
grid         MAC-staggered finite-volume grid and stencil operators
potential    capped double well, the W transform and brute-force constants
elliptic     Neumann Poisson, Helmholtz, Cahn-Hilliard and Brinkman solves
dynamics     model specification, initial data and the time stepper
diagnostics  energies, estimate norms, Hölder quotients and interface probes
sweep        eps-sweeps, power-law fits and the Brinkman-versus-Darcy comparison
config, io   flat configuration files and output formats
cli          the ``chd-sharp`` command
"""

from __future__ import annotations

from chdsharp.dynamics import (InitialData, ModelSpec, Numerics, SimState, SourceSpec, Stepper,
                               Variant, run)
from chdsharp.elliptic import EllipticSolver, LinSolveConfig
from chdsharp.errors import (ChdError, ConfigError, DivergenceError, FitError, PreconditionError,
                             ProbeError, SolverError, StepError, VerificationError)
from chdsharp.grid import Faces, GridSpec
from chdsharp.potential import DoubleWell, WTransform, discover_constants

__version__ = "0.1.0"

__all__ = [
    "ChdError", "ConfigError", "DivergenceError", "DoubleWell", "EllipticSolver", "Faces",
    "FitError", "GridSpec", "InitialData", "LinSolveConfig", "ModelSpec", "Numerics",
    "PreconditionError", "ProbeError", "SimState", "SolverError", "SourceSpec", "StepError",
    "Stepper", "Variant", "VerificationError", "WTransform", "discover_constants", "run",
]
