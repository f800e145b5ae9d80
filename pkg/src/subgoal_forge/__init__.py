"""Sub-goal discovery from expert demonstrations, one-class gating, and
potential-based reward shaping on deterministic grid tasks."""

__version__ = "0.1.0"
