"""Slow, obviously-correct reference implementations used only by tests."""
