"""Lattice-based keyword spotting engine.

Pipeline: waveforms or synthetic features -> frame posteriors -> word
lattices -> timed factor index -> keyword search -> term-weighted-value
scoring. Speech perturbation (pitch, rate, formants, noise) and a
deterministic synthetic corpus generator support robustness experiments.
"""

__version__ = "0.1.0"
