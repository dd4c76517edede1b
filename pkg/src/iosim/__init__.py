"""Circuit-level modeling, beam synthesis and hybrid beamforming for intelligent omni-surfaces."""

__version__ = "0.1.0"
