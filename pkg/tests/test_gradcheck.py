"""The finite-difference harness itself: known gradients, reports, and the
negative-control hook."""

import numpy as np
import pytest

from sfsr.gradcheck import check_gradients
from sfsr.tensor import NumericError, Tensor, mul, tsum
from sfsr.training import l1_loss


def test_quadratic_scalar():
    w = Tensor(np.array([3.0]), requires_grad=True)
    report = check_gradients(lambda: tsum(mul(w, w)), {"w": w})
    assert report.passed
    assert report.max_rel_err < 1e-9
    entry = report.entries[0]
    assert abs(entry.worst_analytic - 6.0) < 1e-12


def test_l1_gradient_is_sign_over_n():
    pred = Tensor(np.array([1.0, -2.0, 0.5, 3.0]), requires_grad=True)
    target = Tensor(np.array([0.0, 0.0, 1.0, 1.0]))
    loss = l1_loss(pred, target)
    loss.backward()
    assert np.allclose(pred.grad, np.array([1.0, -1.0, -1.0, 1.0]) / 4.0)
    report = check_gradients(lambda: l1_loss(pred, target), {"pred": pred})
    assert report.passed


def test_report_names_worst_parameter():
    a = Tensor(np.array([1.0]), requires_grad=True)
    b = Tensor(np.array([2.0]), requires_grad=True)
    report = check_gradients(lambda: tsum(mul(a, a)) + tsum(mul(b, mul(b, b))), {"a": a, "b": b})
    assert report.passed
    assert {e.name for e in report.entries} == {"a", "b"}
    assert "PASS" in report.lines()[-1]


def test_corrupted_adjoint_fails():
    w = Tensor(np.array([1.5]), requires_grad=True)

    def corrupt(name, g):
        return g * 1.5 + 1.0

    report = check_gradients(lambda: tsum(mul(w, w)), {"w": w}, corrupt_adjoint=corrupt)
    assert not report.passed
    assert "FAIL" in report.lines()[-1]


def test_non_finite_loss_raises():
    w = Tensor(np.array([np.inf]), requires_grad=True)
    with pytest.raises(NumericError):
        check_gradients(lambda: tsum(mul(w, w)), {"w": w})


def test_unused_parameter_gets_zero_gradient():
    used = Tensor(np.array([2.0]), requires_grad=True)
    unused = Tensor(np.array([5.0]), requires_grad=True)
    report = check_gradients(lambda: tsum(mul(used, used)), {"used": used, "unused": unused})
    assert report.passed
    by_name = {e.name: e for e in report.entries}
    assert by_name["unused"].worst_analytic == 0.0
