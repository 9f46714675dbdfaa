"""Fuzzy search over noisy OCR output."""
