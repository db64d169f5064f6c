"""Unit tests for pipeline primitives"""
