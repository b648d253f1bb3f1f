"""Grammar-constrained behavior trees for LLM control of simulated swarms."""

__version__ = "0.1.0"
