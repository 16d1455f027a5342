import numpy as np
import pytest

from heatrect.spaces import (
    DensityMatrix,
    HarmonicOscillator,
    Qutrit,
    SpaceLayout,
    lowering_op,
    number_op,
    partial_trace,
    projector,
)

SQ2 = np.sqrt(2.0)


def single(kind, label="A"):
    return SpaceLayout.of((label, kind))


def test_qutrit_lowering_matrix():
    a = lowering_op(single(Qutrit()), "A").to_dense()
    expected = np.array([[0, 1, 0], [0, 0, SQ2], [0, 0, 0]], dtype=complex)
    np.testing.assert_array_equal(a, expected)


def test_ho2_lowering_matrix():
    a = lowering_op(single(HarmonicOscillator(2)), "A").to_dense()
    np.testing.assert_array_equal(a, np.array([[0, 1], [0, 0]], dtype=complex))


def test_embedding_matches_dense_kronecker():
    # independent oracle: explicit dense Kronecker product
    layout = SpaceLayout.of(("H", HarmonicOscillator(3)), ("Q", Qutrit()))
    a_q = np.array([[0, 1, 0], [0, 0, SQ2], [0, 0, 0]], dtype=complex)
    embedded = lowering_op(layout, "Q").to_dense()
    assert embedded.shape == (9, 9)
    np.testing.assert_allclose(embedded, np.kron(np.eye(3), a_q), atol=0)

    a_h = np.diag(np.sqrt([1.0, 2.0]), k=1)
    np.testing.assert_allclose(
        lowering_op(layout, "H").to_dense(), np.kron(a_h, np.eye(3)), atol=0
    )


def test_number_op_values():
    np.testing.assert_array_equal(
        number_op(single(HarmonicOscillator(4)), "A").to_dense(),
        np.diag([0.0, 1.0, 2.0, 3.0]).astype(complex),
    )
    # qutrit: multiply dagger(lowering) by lowering by hand
    layout = single(Qutrit())
    a = lowering_op(layout, "A").to_dense()
    np.testing.assert_allclose(number_op(layout, "A").to_dense(), a.conj().T @ a, atol=0)


def test_ops_on_disjoint_modes_commute_exactly():
    layout = SpaceLayout.of(("A", HarmonicOscillator(3)), ("B", Qutrit()))
    n_a = number_op(layout, "A").matrix
    n_b = number_op(layout, "B").matrix
    diff = (n_a @ n_b - n_b @ n_a).toarray()
    assert np.max(np.abs(diff)) == 0.0

    a = lowering_op(layout, "A").matrix
    b = lowering_op(layout, "B").matrix
    assert np.max(np.abs((a @ b - b @ a).toarray())) == 0.0


def test_qutrit_ladder_commutator():
    layout = single(Qutrit())
    a = lowering_op(layout, "A")
    n = number_op(layout, "A")
    comm = (n @ a - a @ n).to_dense()
    np.testing.assert_allclose(comm, -a.to_dense(), atol=1e-12)


def test_projector_values_and_completeness():
    layout = SpaceLayout.of(("Q", Qutrit()), ("H", HarmonicOscillator(4)))
    p0 = projector(layout, "Q", 0)
    assert abs(np.trace(p0.to_dense()) - layout.total_dim / 3) < 1e-12
    total = sum((projector(layout, "Q", k).to_dense() for k in range(3)))
    np.testing.assert_allclose(total, np.eye(layout.total_dim), atol=0)

    np.testing.assert_array_equal(
        projector(single(Qutrit()), "A", 0).to_dense(), np.diag([1.0, 0, 0]).astype(complex)
    )


def test_projector_level_out_of_range():
    with pytest.raises(ValueError, match="out of range"):
        projector(single(Qutrit()), "A", 3)


def test_unknown_label_is_reported():
    layout = single(Qutrit(), "D1")
    with pytest.raises(ValueError, match="X"):
        lowering_op(layout, "X")


def test_layout_validation():
    with pytest.raises(ValueError, match="duplicate"):
        SpaceLayout.of(("A", Qutrit()), ("A", Qutrit()))
    with pytest.raises(ValueError, match="dim >= 2"):
        HarmonicOscillator(1)


def test_construction_is_deterministic():
    layout = SpaceLayout.of(("A", HarmonicOscillator(5)), ("B", Qutrit()))
    m1 = lowering_op(layout, "B").matrix
    m2 = lowering_op(layout, "B").matrix
    assert m1.data.tobytes() == m2.data.tobytes()
    assert m1.indices.tobytes() == m2.indices.tobytes()
    assert m1.indptr.tobytes() == m2.indptr.tobytes()


def random_density(rng, d):
    x = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    rho = x @ x.conj().T
    return rho / np.trace(rho)


def test_partial_trace_product_state():
    layout = SpaceLayout.of(("A", Qutrit()), ("B", HarmonicOscillator(4)))
    rng = np.random.default_rng(7)
    rho_a = random_density(rng, 3)
    rho_b = random_density(rng, 4)
    rho = DensityMatrix.from_mode_states(layout, [rho_a, rho_b])
    np.testing.assert_allclose(partial_trace(rho, ["A"]).data, rho_a, atol=1e-12)
    np.testing.assert_allclose(partial_trace(rho, ["B"]).data, rho_b, atol=1e-12)


def test_partial_trace_entangled_state():
    # (|00> + |11>)/sqrt(2) on two 2-level modes: either marginal is I/2
    layout = SpaceLayout.of(("A", HarmonicOscillator(2)), ("B", HarmonicOscillator(2)))
    psi = np.zeros(4, dtype=complex)
    psi[0] = psi[3] = 1 / np.sqrt(2)
    rho = DensityMatrix.from_matrix(layout, np.outer(psi, psi.conj()))
    np.testing.assert_allclose(partial_trace(rho, ["A"]).data, np.eye(2) / 2, atol=1e-12)


def test_partial_trace_preserves_trace_and_composes():
    layout = SpaceLayout.of(("A", Qutrit()), ("B", HarmonicOscillator(2)), ("C", Qutrit()))
    rng = np.random.default_rng(3)
    rho = DensityMatrix.from_matrix(layout, random_density(rng, layout.total_dim))
    reduced = partial_trace(rho, ["B"])
    assert abs(np.trace(reduced.data) - 1.0) < 1e-12

    two_step = partial_trace(partial_trace(rho, ["A", "C"]), ["C"])
    one_step = partial_trace(rho, ["C"])
    np.testing.assert_allclose(two_step.data, one_step.data, atol=1e-12)


def test_partial_trace_empty_keep_rejected():
    layout = SpaceLayout.of(("A", Qutrit()))
    rho = DensityMatrix.ground_state(layout)
    with pytest.raises(ValueError, match="empty"):
        partial_trace(rho, [])


def test_density_matrix_validation():
    layout = single(HarmonicOscillator(2))
    with pytest.raises(ValueError, match="Hermitian"):
        DensityMatrix.from_matrix(layout, np.array([[1, 1], [0, 0]], dtype=complex))
    with pytest.raises(ValueError, match="trace"):
        DensityMatrix.from_matrix(layout, np.eye(2, dtype=complex))
    with pytest.raises(ValueError, match="negative eigenvalue"):
        DensityMatrix.from_matrix(layout, np.diag([1.5, -0.5]).astype(complex))


def test_vec_is_column_stacking():
    layout = single(HarmonicOscillator(2))
    rho = DensityMatrix.from_matrix(
        layout, np.array([[0.75, 0.1j], [-0.1j, 0.25]]), validate=True
    )
    v = rho.vec()
    assert v[0] == 0.75 and v[1] == -0.1j and v[2] == 0.1j and v[3] == 0.25
    back = DensityMatrix.from_vec(layout, v)
    np.testing.assert_array_equal(back.data, rho.data)
