"""Sparse iterative learning control."""
