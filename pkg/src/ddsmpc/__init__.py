"""Data-driven stochastic MPC from noisy state measurements."""

__version__ = "0.1.0"
