"""Unit tests for infrastructure components."""
