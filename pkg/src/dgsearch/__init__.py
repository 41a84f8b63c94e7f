"""Job shop local search over disjunctive graphs with a learned N5 move policy."""

__version__ = "0.1.0"
