"""Cloud task-scheduling simulator with an energy-cost-aware hierarchical
hybrid deep-Q scheduler, plus round-robin and non-hybrid baselines."""

__version__ = "0.1.0"
