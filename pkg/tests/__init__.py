"""Test suite for pencil canon."""
