"""Secure aggregation (SecAgg / SecAgg+) library and simulator."""
