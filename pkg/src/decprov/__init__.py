"""Decision provenance for interconnected data-driven systems."""

__version__ = "0.1.0"
