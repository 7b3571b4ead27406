"""Synthetic EHR simulation, Signal Fidelity Index scoring and fidelity-aware calibration."""

from sfi_lab.errors import ConfigError, DegenerateInputError, DomainError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DegenerateInputError", "DomainError", "__version__"]
