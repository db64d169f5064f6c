"""Unit tests for processing stages"""
