import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from gpsh.errors import DimError, FieldEvalError, RankError
from gpsh.symcore import (ScalarField, batch_traces, eigen_partial_sums, fd_gradient, fd_hessian,
                          form_from_json, form_to_json, projection_from_frame, quadratic_field,
                          random_frames, symform, trace_pairing)

finite = st.floats(-10, 10, allow_nan=False)


def test_symform_rejects_asymmetric_and_nonsquare():
    with pytest.raises(DimError):
        symform([[1, 2], [3, 4]])
    with pytest.raises(DimError):
        symform([[1, 2, 3]])


def test_form_json_round_trip():
    A = symform([[1.0, 2.0], [2.0, -3.0]])
    assert np.array_equal(form_from_json(form_to_json(A)), A)


def test_projection_is_idempotent_and_has_rank_p():
    W = projection_from_frame([[1.0, 1.0], [0.0, 1.0], [2.0, 0.0]])
    P = W.projection
    assert np.allclose(P @ P, P, atol=1e-12)
    assert np.isclose(np.trace(P), 2)
    with pytest.raises(RankError):
        projection_from_frame([[1.0, 2.0], [2.0, 4.0]])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 4), elements=finite), st.integers(1, 4))
def test_trace_pairing_between_partial_sums(B, p):
    A = 0.5 * (B + B.T)
    lo, hi = eigen_partial_sums(A, p)
    frames = random_frames(4, p, 200, 0)
    t = batch_traces(A, frames)
    assert t.min() >= lo - 1e-9 and t.max() <= hi + 1e-9
    W = projection_from_frame(frames[0])
    assert np.isclose(trace_pairing(A, W), t[0], atol=1e-9)


def test_eigen_partial_sums_bad_p():
    with pytest.raises(DimError):
        eigen_partial_sums(np.eye(3), 4)


def test_fd_derivatives_of_quadratic():
    rng = np.random.default_rng(0)
    B = rng.standard_normal((3, 3))
    A = B + B.T
    f = ScalarField(3, lambda x: 0.5 * x @ A @ x)
    x = 0.1 * rng.standard_normal(3)
    assert np.allclose(fd_gradient(f, x), A @ x, atol=1e-7)
    assert np.allclose(fd_hessian(f, x), A, atol=1e-6)
    assert np.allclose(fd_hessian(f, 10 * x, richardson=True), A, atol=1e-8)
    q = quadratic_field(A)
    assert np.allclose(q.hessian(x), A)


def test_field_evaluation_errors_are_wrapped():
    f = ScalarField(1, lambda x: float("nan"))
    with pytest.raises(FieldEvalError):
        fd_gradient(f, [0.0])
