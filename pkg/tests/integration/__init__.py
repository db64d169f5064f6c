"""Integration tests for tailcal."""
