"""Verifiable MapReduce laboratory: trace, slice and partially re-execute."""
