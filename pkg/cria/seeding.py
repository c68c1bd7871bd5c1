"""
cria/seeding.py — Именованные подпотоки случайности от одного сида запуска
"""
import zlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    """Независимый генератор для подсистемы `name` (init, batches, masks, split...)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())])))


def rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def rng_from_state(state: dict) -> np.random.Generator:
    bit = np.random.PCG64()
    bit.state = state
    return np.random.Generator(bit)
