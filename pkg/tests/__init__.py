"""Test suite for feast-events."""
