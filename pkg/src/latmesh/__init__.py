"""Full-mesh round-trip latency measurement and analysis."""

__version__ = "0.1.0"
