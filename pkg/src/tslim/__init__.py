"""Transient-stability lab: load-model fitting with DDQN and transfer-limit screening."""

__version__ = "0.1.0"
