import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gpsh.errors import DimError, NoWitness, ProbeInvalid
from gpsh.grassmann import (ComplexLines, FiberField, FinitePlanes, FullGrassmannian, c_strict_member,
                            classify, complex_structure, free_dimension, grassmann_from_json, min_max_trace,
                            nonclosed_probe, separating_witness, smat, span_analysis, svec)
from gpsh.symcore import projection_from_frame, trace_pairing


def test_full_p1_is_positive_semidefinite():
    v = classify(FullGrassmannian(1, 3), np.diag([1.0, 0.0, 2.0]))
    assert v.in_P and v.on_boundary and not v.in_IntP


def test_full_pn_is_trace():
    v = classify(FullGrassmannian(3, 3), np.diag([5.0, -2.0, -2.0]))
    assert v.in_IntP and np.isclose(v.min_trace, 1.0)


def test_finite_planes_ignore_other_directions():
    G = FinitePlanes.from_frames([[1.0, 0.0]])
    assert classify(G, np.diag([1.0, -100.0])).in_IntP
    assert not classify(G, np.diag([-1.0, 100.0])).in_P


def test_complex_lines_trace_is_sum_of_conjugate_pair():
    J = complex_structure(4)
    assert np.allclose(J @ J, -np.eye(4))
    lo, hi, wlo, _ = min_max_trace(ComplexLines(4), np.diag([1.0, 2.0, 3.0, 4.0]))
    assert np.isclose(lo, 4.0) and np.isclose(hi, 6.0)
    assert np.isclose(trace_pairing(np.diag([1.0, 2.0, 3.0, 4.0]), wlo), lo)


def test_separating_witness():
    A = np.diag([1.0, -1.0])
    W = separating_witness(FullGrassmannian(1, 2), A)
    assert trace_pairing(A, W) < 0
    with pytest.raises(NoWitness):
        separating_witness(FullGrassmannian(1, 2), np.eye(2))


def test_c_strict_rejects_negative_c():
    with pytest.raises(ValueError):
        c_strict_member(FullGrassmannian(1, 2), np.eye(2), -1.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=6, max_size=6))
def test_svec_is_isometric(vals):
    B = np.array(vals[:3] + vals[:3]).reshape(2, 3)[:, :2]
    A = np.array([[vals[0], vals[1], vals[2]], [vals[1], vals[3], vals[4]], [vals[2], vals[4], vals[5]]])
    v = svec(A)
    assert np.isclose(v @ v, np.sum(A * A))
    assert np.allclose(smat(v, 3), A)


def test_span_seed_cases():
    assert not span_analysis(FinitePlanes.from_frames([[1.0, 0.0]])).involves_all
    r = span_analysis(FinitePlanes.from_frames([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]))
    assert r.involves_all and r.paths_agree


def test_free_dimension_full_and_complex():
    assert free_dimension(FullGrassmannian(3, 5)) == 2
    assert free_dimension(ComplexLines(4)) == 2


def test_json_variants():
    G = grassmann_from_json({"variant": "finite", "n": 2, "p": 1, "planes": [[[1.0], [0.0]]]})
    assert isinstance(G, FinitePlanes) and G.n == 2
    assert isinstance(grassmann_from_json({"variant": "full", "n": 3, "p": 2}), FullGrassmannian)
    with pytest.raises(ValueError):
        grassmann_from_json({"variant": "nope"})


def test_duplicate_planes_rejected():
    with pytest.raises(DimError):
        FinitePlanes.from_frames([[1.0, 0.0], [2.0, 0.0]])


def test_half_line_fibers_are_not_closed():
    G = FiberField.builtin("ex2.3")
    W = projection_from_frame([1.0])
    path = [np.array([-1.0 / j]) for j in range(1, 10)]
    A = nonclosed_probe(G, path, np.array([0.0]), W, eps=0.5)
    assert all(classify(G, A, x).in_P for x in path)
    assert not classify(G, A, [0.0]).in_P


def test_probe_rejects_closed_family():
    G = FiberField.builtin("constant", fiber={"variant": "full", "n": 1, "p": 1})
    with pytest.raises(ProbeInvalid):
        nonclosed_probe(G, [np.array([-1.0])], np.array([0.0]), projection_from_frame([1.0]), 0.5)
