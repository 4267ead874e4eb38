"""Desk-scale Transformer NMT toolkit."""
