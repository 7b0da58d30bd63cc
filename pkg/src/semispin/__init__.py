"""Semiclassical spin quantization and Husimi functions."""
