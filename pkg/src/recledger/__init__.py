"""Permissioned ledger for Renewable Energy Certificates with a deterministic
multi-node simulator, adversary harness and regulator-side audit."""

__version__ = "0.1.0"
