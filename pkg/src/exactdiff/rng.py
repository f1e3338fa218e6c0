"""Random streams with draw accounting.

Every sampler in the package takes a :class:`CountingRNG`.  Two counters are
kept: ``variates`` counts logical draws (one Poisson count, one Gamma, one
Bessel-discrete draw, one normal, ...), and ``uniforms`` counts calls into the
underlying bit generator's primitive samplers, including the extra uniforms
used by retrospective coins and inner rejection loops.
"""

from __future__ import annotations

import numpy as np


def make_stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``(seed, *key)``; order of creation is irrelevant."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *key])))


class CountingRNG:
    def __init__(self, seed_or_gen=None, *key: int):
        if isinstance(seed_or_gen, np.random.Generator):
            self.gen = seed_or_gen
        elif seed_or_gen is None:
            self.gen = np.random.default_rng()
        else:
            self.gen = make_stream(int(seed_or_gen), *key)
        self.variates = 0
        self.uniforms = 0

    def reset_counts(self) -> None:
        self.variates = 0
        self.uniforms = 0

    def _tick(self, n: int, logical: bool = True) -> None:
        self.uniforms += n
        if logical:
            self.variates += n

    # scalar-or-array primitives; ``size`` follows numpy semantics
    def uniform(self, size=None, logical: bool = True):
        self._tick(1 if size is None else int(np.prod(size)), logical)
        return self.gen.random(size)

    def normal(self, size=None):
        self._tick(1 if size is None else int(np.prod(size)))
        return self.gen.standard_normal(size)

    def exponential(self, size=None):
        self._tick(1 if size is None else int(np.prod(size)))
        return self.gen.standard_exponential(size)

    def poisson(self, lam, size=None):
        n = 1 if size is None and np.ndim(lam) == 0 else int(np.prod(size if size is not None else np.shape(lam)))
        self._tick(n)
        return self.gen.poisson(lam, size)

    def gamma(self, shape, scale=1.0, size=None):
        n = 1 if size is None and np.ndim(shape) == 0 and np.ndim(scale) == 0 else int(
            np.prod(size if size is not None else np.broadcast(shape, scale).shape)
        )
        self._tick(n)
        return self.gen.gamma(shape, scale, size)

    def wald(self, mean, scale, size=None):
        self._tick(1 if size is None else int(np.prod(size)))
        return self.gen.wald(mean, scale, size)

    def bernoulli(self, p: float) -> bool:
        self._tick(1)
        return bool(self.gen.random() < p)
