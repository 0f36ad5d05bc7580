"""Cutoff-flow minimax computation of high-index critical points for semilinear Dirichlet problems."""

from importlib.resources import files

from .config import ConfigError, RunConfig, load_config
from .functional import EnergyModel, geometry_probe, positivity_sphere
from .minimax import CriticalPointRecord, minimax_value, refine_critical
from .mollifier import BumpKernel, SmoothedNonlinearity, preset
from .morse import certify, generalized_index
from .pipeline import run_pipeline
from .spectral import Domain, eigenpairs

__version__ = "0.1.0"


def bundled_config(name: str):
    """Path-like handle to one of the shipped JSON configs (e.g. 'thm12_1d')."""
    return files(__name__) / "configs" / f"{name}.json"
