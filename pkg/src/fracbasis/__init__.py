"""Fractional powers of sparse SPD operators via greedy rational approximation and reduced CG bases."""
