"""Coarse variables, the compressed long-range potential and reconstruction.

Cells are the blocks ``C_k = [kq, (k+1)q)``.  Only the long-range kernel is
compressed; the nearest-neighbour part is left to the fine-level
accept/reject of the coupled sampler.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ContractViolation, InfeasibleMove
from .lattice_model import MeanField, ModelSpec, SpinConfig, apply_flip

# compression residuals below this fraction of max|J| are treated as exact zeros
RESIDUAL_RTOL = 1e-12


@dataclass
class CoarseConfig:
    eta: np.ndarray
    q: int
    total: int = field(init=False)

    def __post_init__(self):
        self.eta = np.asarray(self.eta, dtype=np.int64).copy()
        if np.any(self.eta < 0) or np.any(self.eta > self.q):
            raise ContractViolation(f"cell occupancies must lie in [0, {self.q}]")
        self.total = int(self.eta.sum())

    @property
    def M(self) -> int:
        return self.eta.size

    def moved(self, k: int, s: int) -> "CoarseConfig":
        eta = self.eta.copy()
        eta[k] += s
        return CoarseConfig(eta, self.q)


@dataclass(frozen=True, eq=False)
class CompressedKernel:
    """Cell-averaged long-range potential.

    ``jbar_offdiag[k, l]`` holds the average of J over C_k x C_l (zero on the
    diagonal); ``jbar_diag[k]`` the average over distinct pairs inside C_k.
    ``residual_offsets[r]``/``residual_values[r]`` list the non-zero entries of
    J(x-y) - Jbar(cell(x), cell(y)) for a site x at offset r inside its cell,
    keyed by the ring displacement (y - x) mod N.  They are what the fine
    accept/reject still has to evaluate microscopically.
    """

    N: int
    q: int
    jbar_offdiag: np.ndarray
    jbar_diag: np.ndarray
    hbar: float
    epsilon_estimate: float
    residual_offsets: tuple
    residual_values: tuple

    @property
    def M(self) -> int:
        return self.N // self.q

    @property
    def exact(self) -> bool:
        return all(v.size == 0 for v in self.residual_values)


@lru_cache(maxsize=64)
def log_binomial_table(q: int) -> np.ndarray:
    """log C(q, n) for n = 0..q."""
    log_fact = np.concatenate(([0.0], np.cumsum(np.log(np.arange(1, q + 1)))))
    table = log_fact[q] - log_fact - log_fact[::-1]
    table.setflags(write=False)
    return table


def _epsilon_estimate(model: ModelSpec, q: int) -> float:
    """beta*|grad V|_1 * q/L with V(d/L) = L*J(d) and first-difference gradients."""
    if isinstance(model.long, MeanField):
        return 0.0
    J = np.append(model.long.values, 0.0)
    L = model.long.L
    grad_l1 = 2.0 * float(np.sum(np.abs(np.diff(L * J))))
    return grad_l1 * q / L


def compress(model: ModelSpec, q: int) -> CompressedKernel:
    N = model.N
    M = model.lattice.check_level(q)
    w = model.long_pair_weights()
    x = np.arange(q)[:, None]
    y = np.arange(N)[None, :]
    dist = np.abs(x - y)
    dist = np.minimum(dist, N - dist)
    W = w[dist]  # W[x, y] = J(x - y) for x in cell 0; w[0] = 0 drops y == x
    block = W.reshape(q, M, q).sum(axis=(0, 2))
    row = block / (q * q)
    diag_value = block[0] / (q * (q - 1)) if q > 1 else 0.0
    row[0] = 0.0
    idx = (np.arange(M)[None, :] - np.arange(M)[:, None]) % M
    jbar = row[idx]
    jdiag = np.full(M, diag_value)

    # residual seen by a site at offset r of cell 0, indexed by displacement
    cell_of_y = np.arange(N) // q
    jbar_row_full = np.where(cell_of_y == 0, diag_value, row[cell_of_y])
    tol = RESIDUAL_RTOL * max(float(np.max(np.abs(w))), 1e-300)
    offsets, values = [], []
    for r in range(q):
        res = W[r] - jbar_row_full
        res[r] = 0.0
        keep = np.flatnonzero(np.abs(res) > tol)
        disp = (keep - r) % N
        order = np.argsort(disp, kind="stable")
        offsets.append(disp[order].astype(np.int64))
        values.append(res[keep][order].astype(float))
    return CompressedKernel(
        N=N,
        q=q,
        jbar_offdiag=jbar,
        jbar_diag=jdiag,
        hbar=model.h,
        epsilon_estimate=_epsilon_estimate(model, q),
        residual_offsets=tuple(offsets),
        residual_values=tuple(values),
    )


def coarse_energy(eta: CoarseConfig, ck: CompressedKernel, hbar: float | None = None) -> float:
    if eta.M != ck.M:
        raise ContractViolation(f"coarse configuration has {eta.M} cells, kernel has {ck.M}")
    hbar = ck.hbar if hbar is None else hbar
    e = eta.eta.astype(float)
    off = -0.5 * float(e @ ck.jbar_offdiag @ e)
    diag = -0.5 * float(np.sum(ck.jbar_diag * e * (e - 1.0)))
    return off + diag - hbar * float(e.sum())


def _check_move(eta: CoarseConfig, k: int, s: int) -> None:
    if s not in (-1, 1):
        raise ContractViolation("coarse move sign must be +1 or -1")
    if not 0 <= k < eta.M:
        raise ContractViolation(f"cell index {k} out of range [0, {eta.M})")
    if not 0 <= eta.eta[k] + s <= eta.q:
        raise InfeasibleMove(f"cell {k} cannot move from {eta.eta[k]} by {s:+d}")


def coarse_delta(eta: CoarseConfig, k: int, s: int, ck: CompressedKernel, hbar: float | None = None) -> float:
    """Change of the coarse Hamiltonian when eta(k) -> eta(k) + s; O(M)."""
    _check_move(eta, k, s)
    hbar = ck.hbar if hbar is None else hbar
    row = ck.jbar_offdiag[k]
    field_ = 0.0
    for l in range(ck.M):
        if l != k:
            field_ += row[l] * float(eta.eta[l])
    own = float(eta.eta[k]) if s > 0 else float(eta.eta[k] - 1)
    return -s * (field_ + ck.jbar_diag[k] * own) - hbar * s


def coarse_prior_logratio(eta: CoarseConfig, k: int, s: int) -> float:
    """log of Pbar(eta')/Pbar(eta) for the binomial product prior."""
    _check_move(eta, k, s)
    table = log_binomial_table(eta.q)
    n = int(eta.eta[k])
    return float(table[n + s] - table[n])


def reconstruction_site(occ, k: int, s: int, q: int, u: float) -> int:
    """The floor(u*count)-th candidate site of cell k (empty if s=+1, occupied if s=-1)."""
    want = 0 if s > 0 else 1
    base = k * q
    count = sum(1 for i in range(q) if occ[base + i] == want)
    if count == 0:
        raise ContractViolation(f"no site in cell {k} can absorb a {s:+d} move")
    j = int(u * count)
    for i in range(q):
        if occ[base + i] == want:
            if j == 0:
                return base + i
            j -= 1
    raise AssertionError("unreachable")


def reconstruct_cell(sigma: SpinConfig, k: int, s: int, rng, mode: str = "site"):
    """Lift the coarse move eta(k) -> eta(k)+s to a microscopic proposal.

    ``mode="site"`` flips one uniformly chosen site of the right state in the
    cell; ``mode="cell"`` redraws the whole cell uniformly among all
    arrangements with the new occupancy.  Both return ``(sigma', log_ratio)``
    where ``log_ratio = log f_r(sigma'|eta') - log f_r(sigma|eta)
    = log C(q, eta(k)) - log C(q, eta(k)+s)``.  The input is not modified.
    """
    q = sigma.q
    if q is None:
        raise ContractViolation("reconstruction needs a configuration with an attached coarse level")
    n = int(sigma.cell_sums[k])
    if not 0 <= n + s <= q:
        raise ContractViolation(f"infeasible reconstruction: cell {k} holds {n} of {q}")
    table = log_binomial_table(q)
    new = sigma.copy()
    if mode == "site":
        apply_flip(new, reconstruction_site(sigma.occ, k, s, q, rng.random()))
    elif mode == "cell":
        cell = np.zeros(q, dtype=np.uint8)
        cell[rng.choice(q, size=n + s, replace=False)] = 1
        new.occ[k * q : (k + 1) * q] = cell
        new.total += s
        new.cell_sums[k] += s
    else:
        raise ContractViolation(f"unknown reconstruction mode {mode!r}")
    return new, float(table[n] - table[n + s])
