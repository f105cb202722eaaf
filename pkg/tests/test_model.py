import numpy as np
import pytest

from nqsdyn.model import (
    Lattice,
    PauliOperator,
    SpinConfiguration,
    all_configurations,
    bits_matrix_to_ints,
    build_heisenberg,
    build_tfim,
    chain,
    connected_configurations,
    ints_to_bits_matrix,
    pauli_string,
    square,
)

import oracles


def dense_from_connected(op: PauliOperator) -> np.ndarray:
    """Assemble the dense matrix row by row from connected configurations."""
    dim = 1 << op.n_sites
    out = np.zeros((dim, dim), dtype=complex)
    for row in range(dim):
        x = SpinConfiguration(row, op.n_sites)
        for xp, m in connected_configurations(op, x):
            out[row, xp.bits] += m
    return out


def to_oracle_strings(op: PauliOperator):
    return [(t.coefficient, dict(t.factors)) for t in op.terms]


class TestSpinConfiguration:
    def test_bit_convention_and_roundtrip(self):
        x = SpinConfiguration(0b0110, 4)
        assert [x.bit(i) for i in range(4)] == [0, 1, 1, 0]
        assert SpinConfiguration.from_array(x.to_array()) == x

    def test_rejects_out_of_range_bits(self):
        with pytest.raises(ValueError):
            SpinConfiguration(4, 2)

    def test_total_ordering(self):
        configs = [SpinConfiguration(b, 3) for b in (5, 1, 7, 0)]
        assert [c.bits for c in sorted(configs)] == [0, 1, 5, 7]

    def test_bits_matrix_roundtrip(self):
        values = np.arange(16)
        bits = ints_to_bits_matrix(values, 4)
        assert np.array_equal(bits_matrix_to_ints(bits), values)
        assert all_configurations(3).shape == (8, 3)


class TestLattice:
    def test_chain_bond_counts(self):
        assert len(chain(6, "periodic").bonds) == 6
        assert len(chain(6, "open").bonds) == 5

    def test_two_site_ring_keeps_doubled_bond(self):
        lat = chain(2, "periodic")
        assert lat.bonds == ((0, 1), (0, 1))

    def test_square_2x2_periodic_deduplicates_wraps(self):
        lat = square(2, 2, "periodic")
        assert lat.bonds == ((0, 1), (0, 2), (1, 3), (2, 3))

    def test_square_open_counts(self):
        lat = square(3, 3, "open")
        assert len(lat.bonds) == 12  # 2 * 3 * 2 edges

    def test_rejects_bad_bond(self):
        with pytest.raises(ValueError):
            Lattice(1, (3,), "open", ((0, 3),))
        with pytest.raises(ValueError):
            Lattice(1, (3,), "open", ((1, 1),))


class TestBuilders:
    def test_tfim_two_site_ring_spectrum(self):
        # doubled bond merges into a single -2J ZZ term
        h = build_tfim(chain(2, "periodic"), J=1.0, hx=0.0, hz=0.0)
        assert len(h.terms) == 1
        evals = np.linalg.eigvalsh(dense_from_connected(h))
        assert np.allclose(sorted(evals), [-2.0, -2.0, 2.0, 2.0], atol=1e-12)

    def test_single_site_field(self):
        h = build_tfim(Lattice(1, (1,), "open", ()), J=0.0, hx=1.0, hz=0.0)
        assert len(h.terms) == 1
        evals = np.linalg.eigvalsh(dense_from_connected(h))
        assert np.allclose(evals, [-1.0, 1.0])

    def test_tfim_2x2_ground_energy_matches_kron_oracle(self):
        lat = square(2, 2, "periodic")
        h = build_tfim(lat, J=1.0, hx=3.0)
        dense = oracles.dense_tfim(4, lat.bonds, J=1.0, hx=3.0)
        e0 = np.linalg.eigvalsh(dense)[0]
        assert np.allclose(dense_from_connected(h), dense)
        assert np.linalg.eigvalsh(dense_from_connected(h))[0] == pytest.approx(e0)

    def test_tfim_term_count(self):
        lat = chain(5, "periodic")
        assert len(build_tfim(lat, 1.0, 0.7, 0.3).terms) == 5 + 5 + 5
        assert len(build_tfim(lat, 1.0, 0.7).terms) == 10

    def test_heisenberg_two_site_spectrum(self):
        h = build_heisenberg(chain(2, "open"), J=1.0)
        evals = np.linalg.eigvalsh(dense_from_connected(h))
        assert np.allclose(sorted(evals), [-3.0, 1.0, 1.0, 1.0], atol=1e-12)

    def test_heisenberg_four_site_matches_kron_oracle(self):
        lat = chain(4, "periodic")
        h = build_heisenberg(lat, J=1.0)
        dense = oracles.dense_heisenberg(4, lat.bonds, J=1.0)
        assert np.allclose(dense_from_connected(h), dense)

    def test_degenerate_couplings_rejected(self):
        with pytest.raises(ValueError):
            build_tfim(chain(4), 0.0, 0.0, 0.0)
        with pytest.raises(ValueError):
            build_heisenberg(Lattice(1, (2,), "open", ()), J=1.0)
        with pytest.raises(ValueError):
            build_heisenberg(chain(4), J=0.0)

    def test_hermiticity_flag(self):
        h = build_tfim(chain(4), 1.0, 0.5, 0.25)
        assert h.is_hermitian
        skew = PauliOperator([pauli_string(1j, (0, "X"))], 2)
        assert not skew.is_hermitian
        paired = PauliOperator(
            [pauli_string(1j, (0, "X")), pauli_string(-1j, (0, "X"))], 2
        )
        assert paired.is_hermitian  # conjugate pair merges to zero
        assert len(paired.terms) == 0


class TestConnectedConfigurations:
    def test_diagonal_operator_single_pair(self):
        op = PauliOperator(
            [pauli_string(0.5, (0, "Z"), (2, "Z")), pauli_string(-1.0, (1, "Z"))], 3
        )
        x = SpinConfiguration(0b011, 3)  # sites 0,1 down... bits: s0=1,s1=1,s2=0
        pairs = connected_configurations(op, x)
        assert len(pairs) == 1
        xp, m = pairs[0]
        assert xp == x
        # Z eigenvalues: site0 -> -1, site1 -> -1, site2 -> +1
        assert m == pytest.approx(0.5 * (-1) * 1 + (-1.0) * (-1))

    def test_single_flip(self):
        op = PauliOperator([pauli_string(1.0, (0, "X"))], 2)
        pairs = connected_configurations(op, SpinConfiguration(0, 2))
        assert pairs == [(SpinConfiguration(1, 2), 1.0)]

    def test_tfim_row_against_dense(self):
        h = build_tfim(chain(3, "periodic"), J=1.0, hx=1.0)
        x = SpinConfiguration(0, 3)
        pairs = connected_configurations(h, x)
        assert len(pairs) == 4  # diagonal + 3 single flips
        dense = oracles.dense_tfim(3, chain(3, "periodic").bonds, J=1.0, hx=1.0)
        row = np.zeros(8, dtype=complex)
        for xp, m in pairs:
            row[xp.bits] = m
        assert np.allclose(row, dense[0])

    @pytest.mark.parametrize("seed", range(5))
    def test_random_operator_rows_match_kron_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = 5
        terms = []
        for _ in range(6):
            n_factors = rng.integers(1, 4)
            sites = sorted(rng.choice(n, size=n_factors, replace=False))
            axes = rng.choice(list("XYZ"), size=n_factors)
            coeff = complex(rng.normal(), rng.normal())
            terms.append(pauli_string(coeff, *zip(sites, axes)))
        op = PauliOperator(terms, n)
        dense = oracles.dense_sum(n, to_oracle_strings(op))
        assert np.allclose(dense_from_connected(op), dense, atol=1e-13)

    def test_hermitian_assembly_is_hermitian(self):
        for h in (
            build_tfim(chain(4, "periodic"), 1.0, 0.9, 0.2),
            build_heisenberg(chain(4, "open"), 0.7),
        ):
            dense = dense_from_connected(h)
            assert np.allclose(dense, dense.conj().T)

    def test_size_mismatch_rejected(self):
        op = PauliOperator([pauli_string(1.0, (0, "X"))], 2)
        with pytest.raises(ValueError):
            connected_configurations(op, SpinConfiguration(0, 3))


class TestBatchGroups:
    def test_group_elements_match_per_config_walk(self):
        rng = np.random.default_rng(7)
        h = build_tfim(chain(4, "periodic"), J=1.1, hx=0.8, hz=0.3)
        bits = all_configurations(4)
        per_config = {
            (x_bits, xp.bits): m
            for x_bits in range(16)
            for xp, m in connected_configurations(h, SpinConfiguration(x_bits, 4))
        }
        for group in h.connected_groups:
            values = group.matrix_elements(bits)
            flipped = bits ^ group.flip_sites
            targets = bits_matrix_to_ints(flipped)
            for x_bits in range(16):
                key = (x_bits, int(targets[x_bits]))
                assert values[x_bits] == pytest.approx(per_config.get(key, 0.0))
        assert rng is not None

    def test_diagonal_values(self):
        op = PauliOperator(
            [pauli_string(1.0, (0, "Z")), pauli_string(2.0, (1, "Z"))], 2
        )
        bits = all_configurations(2)
        assert np.allclose(op.diagonal_values(bits), [3.0, 1.0, -1.0, -3.0])
        h = build_tfim(chain(3), 1.0, 1.0)
        with pytest.raises(ValueError):
            h.diagonal_values(all_configurations(3))
