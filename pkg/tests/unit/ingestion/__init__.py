"""Tests for ingestion module"""