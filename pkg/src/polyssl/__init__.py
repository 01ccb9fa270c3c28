"""Self-supervised pretraining on stochastic polymer graphs."""

__version__ = "0.1.0"
