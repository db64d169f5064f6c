"""Unit tests for processing module"""
