"""Discrete-event experiment harness."""
