"""Unit tests for orchestration components"""
