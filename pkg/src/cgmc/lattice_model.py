"""Microscopic lattice-gas model on a periodic 1-D ring.

Energies are dimensionless (inverse temperature absorbed into the couplings)::

    beta*H(sigma) = -(K/2) sum_x sum_{|x-y|=1} s(x)s(y)
                    - sum_x sum_{y != x} J(x-y)/2 s(x)s(y)
                    - h sum_x s(x)

with occupancies s(x) in {0, 1}.  Distances are periodic minimal-image
distances ``min(|x-y|, N-|x-y|)``; every unordered pair of sites is counted
exactly once, which matters for ``N == 2`` and for the antipodal distance
``N/2`` on even rings.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ConfigurationError, ContractViolation


@dataclass(frozen=True)
class LatticeSpec:
    N: int

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2:
            raise ConfigurationError(f"lattice size must be an integer >= 2, got {self.N!r}")

    def check_level(self, q: int) -> int:
        """Return M = N/q, raising if q does not tile the ring."""
        if q < 1 or self.N % q:
            raise ConfigurationError(f"coarse level q={q} does not divide N={self.N}")
        return self.N // q


@dataclass(frozen=True)
class NearestNeighbor:
    K: float

    def pair_weights(self, N: int) -> np.ndarray:
        w = np.zeros(N // 2 + 1)
        w[1] = self.K
        return w


@dataclass(frozen=True)
class MeanField:
    """Curie-Weiss coupling: pair strength J/N between every distinct pair."""

    J: float

    def pair_weights(self, N: int) -> np.ndarray:
        w = np.full(N // 2 + 1, self.J / N)
        w[0] = 0.0
        return w


@dataclass(frozen=True, eq=False)
class Tabulated:
    """Pair potential given per periodic distance.

    ``values[d-1]`` is the pair weight at distance ``d`` for ``d = 1..L``; the
    weight is zero beyond ``L = len(values)``.  Any ``1/L`` normalisation is
    expected to be folded into the values already.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).copy()
        if v.ndim != 1 or v.size == 0:
            raise ConfigurationError("tabulated kernel needs a non-empty 1-D value array")
        if not np.all(np.isfinite(v)):
            raise ConfigurationError("tabulated kernel values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def L(self) -> int:
        return int(self.values.size)

    @classmethod
    def constant(cls, value: float, L: int) -> "Tabulated":
        return cls(np.full(L, float(value)))

    @classmethod
    def from_profile(cls, V, L: int, total: float, N: int) -> "Tabulated":
        """Kernel J(d) proportional to V(d/L), scaled so that sum_{y != x} J(x-y) = total."""
        d = np.arange(1, L + 1)
        raw = np.array([V(r) for r in d / L], dtype=float)
        mult = np.where(2 * d == N, 1.0, 2.0)
        norm = float(np.sum(mult * raw))
        if norm == 0.0:
            raise ConfigurationError("profile integrates to zero")
        return cls(raw * (total / norm))

    def pair_weights(self, N: int) -> np.ndarray:
        if self.L > N // 2:
            raise ConfigurationError(f"tabulated range L={self.L} exceeds N/2={N // 2}")
        w = np.zeros(N // 2 + 1)
        w[1 : self.L + 1] = self.values
        return w

    def __eq__(self, other):
        return isinstance(other, Tabulated) and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash(self.values.tobytes())


LongRange = Union[MeanField, Tabulated]


@dataclass(frozen=True)
class ModelSpec:
    lattice: LatticeSpec
    short: NearestNeighbor
    long: LongRange
    h: float

    def __post_init__(self):
        if not isinstance(self.short, NearestNeighbor):
            raise ConfigurationError("short-range kernel must be NearestNeighbor")
        if not isinstance(self.long, (MeanField, Tabulated)):
            raise ConfigurationError("long-range kernel must be MeanField or Tabulated")
        if isinstance(self.long, Tabulated):
            self.long.pair_weights(self.lattice.N)

    @property
    def N(self) -> int:
        return self.lattice.N

    @property
    def K(self) -> float:
        return self.short.K

    @classmethod
    def kardar(cls, N: int, K: float, J: float, h: float) -> "ModelSpec":
        """Nearest-neighbour K plus Curie-Weiss J: the exactly solvable model."""
        return cls(LatticeSpec(N), NearestNeighbor(K), MeanField(J), h)

    def with_field(self, h: float) -> "ModelSpec":
        return ModelSpec(self.lattice, self.short, self.long, h)

    def long_pair_weights(self) -> np.ndarray:
        return self.long.pair_weights(self.N)


class SpinConfig:
    """Occupancy vector with an incrementally maintained particle count.

    When a coarse level ``q`` is attached, per-cell occupancy sums over the
    blocks ``[kq, (k+1)q)`` are maintained as well.
    """

    __slots__ = ("occ", "total", "q", "cell_sums")

    def __init__(self, occ, q: int | None = None):
        occ = np.array(occ, dtype=np.uint8).ravel()
        if occ.size < 2 or np.any(occ > 1):
            raise ContractViolation("occupancy must be a 0/1 sequence of length >= 2")
        self.occ = occ
        self.total = int(occ.sum())
        self.q = None
        self.cell_sums = None
        if q is not None:
            self.attach(q)

    @property
    def N(self) -> int:
        return self.occ.size

    @classmethod
    def empty(cls, N: int, q: int | None = None) -> "SpinConfig":
        return cls(np.zeros(N, dtype=np.uint8), q)

    @classmethod
    def full(cls, N: int, q: int | None = None) -> "SpinConfig":
        return cls(np.ones(N, dtype=np.uint8), q)

    @classmethod
    def bernoulli(cls, N: int, rho: float, rng, q: int | None = None) -> "SpinConfig":
        return cls((rng.random(N) < rho).astype(np.uint8), q)

    @classmethod
    def from_bits(cls, bits: str, q: int | None = None) -> "SpinConfig":
        return cls([int(c) for c in bits], q)

    @classmethod
    def from_code(cls, code: int, N: int, q: int | None = None) -> "SpinConfig":
        """Site x is occupied iff bit x of ``code`` is set."""
        return cls([(code >> x) & 1 for x in range(N)], q)

    def code(self) -> int:
        return int(sum(1 << x for x in np.flatnonzero(self.occ)))

    def attach(self, q: int) -> None:
        LatticeSpec(self.N).check_level(q)
        self.q = q
        self.cell_sums = self.occ.reshape(-1, q).sum(axis=1).astype(np.int64)

    def copy(self) -> "SpinConfig":
        new = SpinConfig.__new__(SpinConfig)
        new.occ = self.occ.copy()
        new.total = self.total
        new.q = self.q
        new.cell_sums = None if self.cell_sums is None else self.cell_sums.copy()
        return new

    def check_caches(self) -> bool:
        ok = self.total == int(self.occ.sum())
        if self.cell_sums is not None:
            ok = ok and np.array_equal(self.cell_sums, self.occ.reshape(-1, self.q).sum(axis=1))
        return bool(ok)

    def __eq__(self, other):
        return isinstance(other, SpinConfig) and np.array_equal(self.occ, other.occ)

    def __repr__(self):
        bits = "".join(map(str, self.occ[:64]))
        return f"SpinConfig(N={self.N}, total={self.total}, occ={bits}{'...' if self.N > 64 else ''})"


def _check_site(sigma: SpinConfig, x: int) -> None:
    if not 0 <= x < sigma.N:
        raise ContractViolation(f"site index {x} out of range [0, {sigma.N})")


def _neighbors(x: int, N: int) -> tuple[int, ...]:
    left, right = (x - 1) % N, (x + 1) % N
    return (left,) if left == right else (left, right)


def _pairs_at_distance(occ: np.ndarray, d: int) -> float:
    """Number of occupied unordered pairs at periodic distance d."""
    n = float(np.dot(occ, np.roll(occ, -d).astype(np.int64)))
    return n / 2 if 2 * d == occ.size else n


def total_energy(sigma: SpinConfig, model: ModelSpec) -> float:
    if sigma.N != model.N:
        raise ContractViolation(f"configuration length {sigma.N} != model size {model.N}")
    occ = sigma.occ.astype(np.int64)
    S = float(occ.sum())
    energy = -model.K * _pairs_at_distance(occ, 1)
    if isinstance(model.long, MeanField):
        energy -= model.long.J / model.N * S * (S - 1.0) / 2.0
    else:
        for d, w in enumerate(model.long.values, start=1):
            if w != 0.0:
                energy -= w * _pairs_at_distance(occ, d)
    return energy - model.h * S


def long_range_field(sigma: SpinConfig, x: int, model: ModelSpec) -> float:
    """sum_{y != x} J(x-y) s(y); O(1) for MeanField, O(L) for Tabulated."""
    if isinstance(model.long, MeanField):
        return model.long.J / model.N * (sigma.total - int(sigma.occ[x]))
    N, occ = model.N, sigma.occ
    acc = 0.0
    for d, w in enumerate(model.long.values, start=1):
        right = int(occ[(x + d) % N])
        if 2 * d != N:
            right += int(occ[(x - d) % N])
        acc += w * right
    return acc


def flip_delta(sigma: SpinConfig, x: int, model: ModelSpec) -> float:
    """beta*H(sigma^x) - beta*H(sigma) for flipping site x."""
    _check_site(sigma, x)
    d = 1 - 2 * int(sigma.occ[x])
    nn = sum(int(sigma.occ[y]) for y in _neighbors(x, model.N))
    return -d * (model.K * nn + long_range_field(sigma, x, model)) - model.h * d


def apply_flip(sigma: SpinConfig, x: int) -> SpinConfig:
    _check_site(sigma, x)
    d = 1 - 2 * int(sigma.occ[x])
    sigma.occ[x] ^= 1
    sigma.total += d
    if sigma.cell_sums is not None:
        sigma.cell_sums[x // sigma.q] += d
    return sigma


def coverage(sigma: SpinConfig) -> float:
    return sigma.total / sigma.N


def project(sigma: SpinConfig, q: int):
    """Block occupancies eta(k) = sum of s(x) over [kq, (k+1)q)."""
    from .coarse_graining import CoarseConfig

    LatticeSpec(sigma.N).check_level(q)
    if sigma.q == q and sigma.cell_sums is not None:
        eta = sigma.cell_sums.copy()
    else:
        eta = sigma.occ.reshape(-1, q).sum(axis=1).astype(np.int64)
    return CoarseConfig(eta, q)
