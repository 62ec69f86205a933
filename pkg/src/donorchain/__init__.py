"""Permissioned execute-order-validate ledger with an organ-donation contract."""

__version__ = "0.1.0"
