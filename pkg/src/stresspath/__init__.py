"""Policy-path counterfactual inference for panel stress testing."""

__version__ = "0.1.0"
