"""Over-the-air hierarchical federated learning simulator and analysis tools."""

__version__ = "0.1.0"
