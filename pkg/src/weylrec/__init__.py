"""Weyl-type solutions and potential reconstruction for ``y' - x^-1 A y - q(x) y = rho B y``."""

from .model import (PotentialModel, Sector, SectorGeometry, SpecFormatError, SystemSpec, Term,
                    load_spec, reference_system, save_spec, sector_geometry, spec_from_dict, validate)
from .weyl import WeylConfig, WeylEvaluator, weyl_matrix
from .spectral import boundary_values, spectral_grid, spectral_map
from .reconstruct import ReconstructionConfig, reconstruct_q
from .asymcheck import qhat, qhat_o, qtilde, large_rho_residual

__version__ = "0.1.0"
