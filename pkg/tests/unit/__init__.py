"""Unit tests for tailcal."""
