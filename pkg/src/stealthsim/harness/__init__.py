"""Configuration, campaigns, export and command-line entry point."""

from .campaign import CampaignResult, run_casestudy, run_montecarlo
from .config import ExperimentConfig
from .export import export

__all__ = ["CampaignResult", "ExperimentConfig", "export", "run_casestudy", "run_montecarlo"]
