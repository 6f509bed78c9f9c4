"""Context-based offline meta-RL with a gated task-encoder update, plus a tabular bound-checking lab."""

__version__ = "0.1.0"
