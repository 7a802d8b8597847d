"""Quadruped complex/simple model pair."""
