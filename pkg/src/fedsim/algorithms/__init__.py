"""Training protocols expressed as workers over the comm layer."""

from fedsim.algorithms.base import ClientUpdate, RoundResult, fedavg_aggregate

__all__ = ["ClientUpdate", "RoundResult", "fedavg_aggregate"]
