"""Federated implicit-feedback recommendation simulator (FedAvg, WCU, FedFast, FedFNN)."""

__version__ = "0.1.0"
