"""Scene-graph augmented subjective risk assessment for lane-change clips."""

__version__ = "0.1.0"
