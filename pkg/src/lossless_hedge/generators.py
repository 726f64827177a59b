"""Payoff-sequence generators for experiments.

Generators are written as short strings such as ``constant(1)``,
``bernoulli(0.5)``, ``shifting(4, 0.6, -0.6)``, ``sinusoid(500, 0.8)``,
``file(path)`` or ``adversarial-lb(0.1)``. Trial ``i`` of master seed ``s``
always produces the same sequence.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .predictor import read_sequence
from .rng import stream

__all__ = ["GeneratorSpec", "parse_generator", "generate", "interval_bounds", "GENERATORS"]

GENERATORS = ("constant", "bernoulli", "shifting", "sinusoid", "file", "adversarial-lb")
_PAYOFF_PURPOSE = 0
_CALL = re.compile(r"^\s*([a-z][a-z-]*)\s*(?:\((.*)\))?\s*$")


@dataclass(frozen=True)
class GeneratorSpec:
    name: str
    args: tuple = field(default_factory=tuple)

    def __str__(self):
        return f"{self.name}({', '.join(str(a) for a in self.args)})"


def parse_generator(text) -> GeneratorSpec:
    """Parse ``name(arg, ...)``; numeric arguments become floats."""
    if isinstance(text, GeneratorSpec):
        return text
    m = _CALL.match(str(text))
    if not m:
        raise ValueError(f"cannot parse generator {text!r}")
    name, raw = m.group(1), m.group(2)
    if name not in GENERATORS:
        raise ValueError(f"unknown generator {name!r}; choose one of {', '.join(GENERATORS)}")
    args = []
    if raw is not None and raw.strip():
        if name == "file":
            args = [raw.strip()]
        else:
            for a in raw.split(","):
                try:
                    args.append(float(a))
                except ValueError:
                    raise ValueError(f"generator {name}: argument {a.strip()!r} is not a number") from None
    return GeneratorSpec(name, tuple(args))


def interval_bounds(T, k):
    """Start indices of ``k`` near-equal intervals plus the end ``T``."""
    return [round(j * T / k) for j in range(k)] + [T]


def _coins(u, mean):
    """+-1 draws with expectation ``mean`` from uniforms ``u``."""
    return np.where(u < (1.0 + mean) / 2.0, 1.0, -1.0)


def generate(spec, T, seed=0, trials=1, offset=0):
    """Sequences of shape ``(trials, T)`` for the given generator."""
    g = parse_generator(spec)
    T = int(T)
    if T < 0:
        raise ValueError("T must be non-negative")
    a = g.args
    out = np.empty((trials, T))
    if g.name == "file":
        if len(a) != 1:
            raise ValueError("file(path) takes one path")
        seq = read_sequence(a[0])
        if T and len(seq) != T:
            raise ValueError(f"{a[0]}: has {len(seq)} values but T = {T}")
        return np.tile(seq, (trials, 1))
    if g.name == "constant":
        v = a[0] if a else 1.0
        if abs(v) > 1:
            raise ValueError("constant payoff must lie in [-1, 1]")
        out[:] = v
        return out
    if g.name == "sinusoid":
        period, amp = (a + (500.0, 1.0)[len(a):])[:2]
        if not period > 0 or not 0 <= amp <= 1:
            raise ValueError("sinusoid needs period > 0 and amplitude in [0, 1]")
        out[:] = amp * np.sin(2.0 * math.pi * np.arange(1, T + 1) / period)
        return out
    if g.name == "bernoulli":
        p = a[0] if a else 0.5
        if not 0 <= p <= 1:
            raise ValueError("bernoulli(p) needs p in [0, 1]")
        means = np.full(T, 2.0 * p - 1.0)
    elif g.name == "adversarial-lb":
        eps = a[0] if a else 0.1
        if not 0 <= eps <= 1:
            raise ValueError("adversarial-lb(eps) needs eps in [0, 1]")
        means = np.full(T, eps)
    else:  # shifting(k, level, level, ...)
        if not a:
            raise ValueError("shifting needs k and at least one level")
        k = int(a[0])
        levels = a[1:] or (0.6, -0.6)
        if k < 1 or any(abs(v) > 1 for v in levels):
            raise ValueError("shifting needs k >= 1 and mean levels in [-1, 1]")
        bounds = interval_bounds(T, k)
        means = np.empty(T)
        for j in range(k):
            means[bounds[j]:bounds[j + 1]] = levels[j % len(levels)]
    for i in range(trials):
        out[i] = _coins(stream(seed, offset + i, _PAYOFF_PURPOSE).random(T), means)
    return out
