"""fedsim: federated-learning simulation with worker-oriented message passing."""

__version__ = "0.1.0"
