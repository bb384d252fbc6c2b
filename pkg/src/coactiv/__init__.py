"""Verify neural policies on factored MDPs and explain them with co-activation graphs."""

__version__ = "0.1.0"
