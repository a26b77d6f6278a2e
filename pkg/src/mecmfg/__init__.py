"""Age-of-Information analysis and mean-field offloading equilibria for
priority-preemptive local/edge task flows."""

__version__ = "0.1.0"
