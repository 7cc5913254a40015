"""GPU error log analysis: parsing, coalescing, reliability metrics,
propagation graphs, job impact and spare-capacity simulation."""

__version__ = "0.1.0"
