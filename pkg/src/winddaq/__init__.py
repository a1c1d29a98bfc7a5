"""Wind turbine data acquisition: simulated firmware, crash-safe logging and analysis."""

__version__ = "0.1.0"
