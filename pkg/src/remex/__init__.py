"""Removal-based feature explanations."""
