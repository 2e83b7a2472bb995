"""Audit the permanence, readability and storage location of ERC-721 token metadata."""

__version__ = "0.1.0"
