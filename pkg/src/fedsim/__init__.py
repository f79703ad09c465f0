"""fedsim: a deterministic discrete-event simulator for federated learning
with device heterogeneity, intermittent availability, and staleness-aware
aggregation."""

__version__ = "0.1.0"
