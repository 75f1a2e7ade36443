"""Iterative subsampling solution path clustering."""
