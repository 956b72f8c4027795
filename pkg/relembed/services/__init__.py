"""Data sources for routines."""
