"""Lattices, spin-1/2 basis configurations, and Pauli-string Hamiltonians.

Conventions (global, tested):
  * spin up maps to bit 0, spin down to bit 1, and Z|up> = +|up>,
    i.e. the Z eigenvalue on site i is ``1 - 2*bit_i``.
  * site i lives in bit i of the packed integer label (LSB = site 0).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

AXES = ("X", "Y", "Z")


@dataclass(frozen=True, order=True)
class SpinConfiguration:
    """Basis label for N spin-1/2 sites, bit-packed into a Python integer."""

    bits: int
    n_sites: int

    def __post_init__(self):
        if self.n_sites <= 0:
            raise ValueError("n_sites must be positive")
        if not 0 <= self.bits < (1 << self.n_sites):
            raise ValueError(
                f"bits 0x{self.bits:x} out of range for {self.n_sites} sites"
            )

    def bit(self, site: int) -> int:
        return (self.bits >> site) & 1

    def flip(self, mask: int) -> "SpinConfiguration":
        return SpinConfiguration(self.bits ^ mask, self.n_sites)

    def to_array(self) -> np.ndarray:
        """Bits as a (n_sites,) uint8 array, index = site."""
        return np.array([self.bit(i) for i in range(self.n_sites)], dtype=np.uint8)

    @staticmethod
    def from_array(bits: Sequence[int]) -> "SpinConfiguration":
        value = 0
        for i, b in enumerate(bits):
            if b:
                value |= 1 << i
        return SpinConfiguration(value, len(bits))

    def __str__(self):
        return "".join("du"[1 - self.bit(i)] for i in range(self.n_sites))


def bits_matrix_to_ints(bits: np.ndarray) -> np.ndarray:
    """Packed integer labels for a (n, N) uint8 bit matrix (N <= 63)."""
    n_sites = bits.shape[1]
    weights = (1 << np.arange(n_sites, dtype=np.int64))
    return bits.astype(np.int64) @ weights


def ints_to_bits_matrix(values: np.ndarray, n_sites: int) -> np.ndarray:
    """Inverse of :func:`bits_matrix_to_ints`."""
    values = np.asarray(values, dtype=np.int64)
    return ((values[:, None] >> np.arange(n_sites)) & 1).astype(np.uint8)


def all_configurations(n_sites: int) -> np.ndarray:
    """Bit matrix of the full computational basis, ordered by integer label."""
    return ints_to_bits_matrix(np.arange(1 << n_sites), n_sites)


@dataclass(frozen=True)
class Lattice:
    """Finite lattice given by its bond list.

    Bonds are stored as (i, j) pairs with i < j.  A 1D periodic ring of
    length 2 keeps both edges of the doubled bond (the coupling strength
    doubles); in 2D the wrap-around bonds of an extent-2 periodic direction
    are deduplicated instead.
    """

    dimension: int
    extents: tuple[int, ...]
    boundary: str
    bonds: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValueError("dimension must be 1 or 2")
        if self.boundary not in ("periodic", "open"):
            raise ValueError(f"unknown boundary condition {self.boundary!r}")
        if len(self.extents) != self.dimension:
            raise ValueError("extents must match dimension")
        n = self.n_sites
        for i, j in self.bonds:
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"bond ({i},{j}) references site >= {n}")
            if i == j:
                raise ValueError(f"bond ({i},{j}) is a self-loop")

    @property
    def n_sites(self) -> int:
        n = 1
        for e in self.extents:
            n *= e
        return n


def chain(length: int, boundary: str = "periodic") -> Lattice:
    """1D chain of the given length."""
    if length < 2:
        raise ValueError("chain needs at least 2 sites")
    bonds = [(i, i + 1) for i in range(length - 1)]
    if boundary == "periodic":
        bonds.append((0, length - 1))
    return Lattice(1, (length,), boundary, tuple(bonds))


def square(lx: int, ly: int, boundary: str = "periodic") -> Lattice:
    """2D rectangular lattice, row-major site indexing."""
    if lx < 2 or ly < 1:
        raise ValueError("square lattice needs lx >= 2 and ly >= 1")

    def idx(x, y):
        return x + lx * y

    seen = set()
    bonds = []
    for y in range(ly):
        for x in range(lx):
            neighbours = []
            if x + 1 < lx:
                neighbours.append(idx(x + 1, y))
            elif boundary == "periodic" and lx > 1:
                neighbours.append(idx(0, y))
            if y + 1 < ly:
                neighbours.append(idx(x, y + 1))
            elif boundary == "periodic" and ly > 1:
                neighbours.append(idx(x, 0))
            for j in neighbours:
                pair = (min(idx(x, y), j), max(idx(x, y), j))
                if pair not in seen:
                    seen.add(pair)
                    bonds.append(pair)
    return Lattice(2, (lx, ly), boundary, tuple(sorted(bonds)))


@dataclass(frozen=True)
class PauliString:
    """Single weighted Pauli string; factor sites strictly increasing."""

    coefficient: complex
    factors: tuple[tuple[int, str], ...]

    def __post_init__(self):
        sites = [s for s, _ in self.factors]
        if sites != sorted(set(sites)):
            raise ValueError("factor sites must be strictly increasing")
        for _, axis in self.factors:
            if axis not in AXES:
                raise ValueError(f"unknown Pauli axis {axis!r}")

    @property
    def is_diagonal(self) -> bool:
        return all(axis == "Z" for _, axis in self.factors)

    @property
    def flip_mask(self) -> int:
        mask = 0
        for site, axis in self.factors:
            if axis in ("X", "Y"):
                mask |= 1 << site
        return mask

    def matrix_element(self, x: SpinConfiguration) -> tuple[SpinConfiguration, complex]:
        """The unique (x', m) with m = <x| self |x'> nonzero."""
        m = complex(self.coefficient)
        for site, axis in self.factors:
            sign = 1 - 2 * x.bit(site)  # Z eigenvalue at this site
            if axis == "Z":
                m *= sign
            elif axis == "Y":
                m *= -1j * sign
        return x.flip(self.flip_mask), m


@dataclass(frozen=True)
class ConnectedGroup:
    """Terms of an operator sharing one flip mask, in batch-evaluable form.

    For a bit matrix ``bits`` (n, N), the matrix elements are
    ``((1 - 2*((bits @ sign_sites) % 2)) @ coefficients)`` and the connected
    configurations are ``bits ^ flip_sites``.
    """

    flip_mask: int
    flip_sites: np.ndarray  # (N,) uint8
    sign_sites: np.ndarray  # (N, T) uint8, sites whose Z eigenvalue multiplies
    coefficients: np.ndarray  # (T,) complex, includes the (-i)^n_Y phase

    def matrix_elements(self, bits: np.ndarray) -> np.ndarray:
        parity = (bits.astype(np.int64) @ self.sign_sites) & 1
        return (1.0 - 2.0 * parity) @ self.coefficients


class PauliOperator:
    """Sum of weighted Pauli strings on n_sites spins.

    Terms with identical factors are merged at construction and zero terms
    dropped, so connected-configuration enumeration never repeats an x'.
    """

    def __init__(self, terms: Iterable[PauliString], n_sites: int):
        merged: dict[tuple, complex] = {}
        for term in terms:
            if term.factors and term.factors[-1][0] >= n_sites:
                raise ValueError("term acts on site outside the lattice")
            merged[term.factors] = merged.get(term.factors, 0.0) + complex(
                term.coefficient
            )
        kept = [
            PauliString(c, f) for f, c in merged.items() if c != 0.0
        ]
        kept.sort(key=lambda t: t.factors)
        self.terms: tuple[PauliString, ...] = tuple(kept)
        self.n_sites = n_sites

    @property
    def is_hermitian(self) -> bool:
        return all(abs(t.coefficient.imag) < 1e-12 for t in self.terms)

    @property
    def is_diagonal(self) -> bool:
        return all(t.is_diagonal for t in self.terms)

    @property
    def max_locality(self) -> int:
        return max((len(t.factors) for t in self.terms), default=0)

    def __len__(self):
        return len(self.terms)

    def __add__(self, other: "PauliOperator") -> "PauliOperator":
        if other.n_sites != self.n_sites:
            raise ValueError("operator size mismatch")
        return PauliOperator(self.terms + other.terms, self.n_sites)

    def scaled(self, factor: complex) -> "PauliOperator":
        return PauliOperator(
            [PauliString(factor * t.coefficient, t.factors) for t in self.terms],
            self.n_sites,
        )

    @cached_property
    def connected_groups(self) -> tuple[ConnectedGroup, ...]:
        """Terms grouped by flip mask, precompiled for batch kernels."""
        by_mask: dict[int, list[PauliString]] = {}
        for term in self.terms:
            by_mask.setdefault(term.flip_mask, []).append(term)
        groups = []
        for mask in sorted(by_mask):
            terms = by_mask[mask]
            flip_sites = np.array(
                [(mask >> i) & 1 for i in range(self.n_sites)], dtype=np.uint8
            )
            sign_sites = np.zeros((self.n_sites, len(terms)), dtype=np.uint8)
            coeffs = np.zeros(len(terms), dtype=np.complex128)
            for t_idx, term in enumerate(terms):
                c = complex(term.coefficient)
                for site, axis in term.factors:
                    if axis in ("Z", "Y"):
                        sign_sites[site, t_idx] = 1
                    if axis == "Y":
                        c *= -1j
                coeffs[t_idx] = c
            groups.append(ConnectedGroup(mask, flip_sites, sign_sites, coeffs))
        return tuple(groups)

    def diagonal_values(self, bits: np.ndarray) -> np.ndarray:
        """O_x for every row of a bit matrix; requires a diagonal operator."""
        if not self.is_diagonal:
            raise ValueError("operator is not diagonal in the computational basis")
        values = np.zeros(bits.shape[0], dtype=np.complex128)
        for group in self.connected_groups:
            values += group.matrix_elements(bits)
        return values


def connected_configurations(
    op: PauliOperator, x: SpinConfiguration
) -> list[tuple[SpinConfiguration, complex]]:
    """All (x', m) with m = <x| op |x'> nonzero, merged and ordered by x'."""
    if op.n_sites != x.n_sites:
        raise ValueError("operator and configuration size mismatch")
    acc: dict[int, complex] = {}
    for term in op.terms:
        xp, m = term.matrix_element(x)
        acc[xp.bits] = acc.get(xp.bits, 0.0) + m
    return [
        (SpinConfiguration(b, x.n_sites), m)
        for b, m in sorted(acc.items())
        if m != 0.0
    ]


def pauli_string(coefficient: complex, *factors: tuple[int, str]) -> PauliString:
    return PauliString(coefficient, tuple(sorted(factors)))


def single_site(axis: str, site: int, n_sites: int, coefficient: complex = 1.0) -> PauliOperator:
    """Operator with a single one-site Pauli factor."""
    return PauliOperator([pauli_string(coefficient, (site, axis))], n_sites)


def build_tfim(lattice: Lattice, J: float, hx: float, hz: float = 0.0) -> PauliOperator:
    """Transverse (optionally tilted) field Ising model.

    H = -J sum_bonds Z_i Z_j - hx sum_i X_i - hz sum_i Z_i
    """
    if J == 0.0 and hx == 0.0 and hz == 0.0:
        raise ValueError("all couplings zero: degenerate generator")
    n = lattice.n_sites
    terms = []
    if J != 0.0:
        for i, j in lattice.bonds:
            terms.append(pauli_string(-J, (i, "Z"), (j, "Z")))
    if hx != 0.0:
        for i in range(n):
            terms.append(pauli_string(-hx, (i, "X")))
    if hz != 0.0:
        for i in range(n):
            terms.append(pauli_string(-hz, (i, "Z")))
    if not terms:
        raise ValueError("model has no terms (no bonds and no fields)")
    return PauliOperator(terms, n)


def build_heisenberg(lattice: Lattice, J: float) -> PauliOperator:
    """Heisenberg model H = J sum_bonds (X_i X_j + Y_i Y_j + Z_i Z_j)."""
    if J == 0.0:
        raise ValueError("coupling J is zero: degenerate generator")
    if not lattice.bonds:
        raise ValueError("lattice has no bonds")
    terms = []
    for i, j in lattice.bonds:
        for axis in AXES:
            terms.append(pauli_string(J, (i, axis), (j, axis)))
    return PauliOperator(terms, lattice.n_sites)
