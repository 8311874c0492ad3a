"""Tests package for memgan."""
