"""Deterministic seed derivation.

All randomness in the package flows from a master 64-bit seed through
splitmix64 mixed with an FNV-1a hash of a purpose string, so independent
components (parameters, subjects, views, splits) never share or shift
each other's streams.
"""

import numpy as np

MASK = 0xFFFFFFFFFFFFFFFF


def splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


def fnv1a(name: str):
    h = 0xCBF29CE484222325
    for byte in name.encode():
        h = ((h ^ byte) * 0x100000001B3) & MASK
    return h


def derive(seed: int, name: str):
    """A new 64-bit seed bound to (seed, name)."""
    return splitmix64((seed & MASK) ^ fnv1a(name))


def rng(seed: int, name: str):
    """A PCG64 generator for the derived seed."""
    return np.random.Generator(np.random.PCG64(derive(seed, name)))
