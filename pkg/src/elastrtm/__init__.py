"""Half-space elastic scattering synthesis and reverse-time-migration imaging."""

__version__ = "0.1.0"
