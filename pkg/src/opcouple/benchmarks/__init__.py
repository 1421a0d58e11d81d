"""Benchmark problem definitions wiring solvers, surrogates and coupling."""
