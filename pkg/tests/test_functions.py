"""Analytic derivatives of the test-function battery against central differences."""
from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose

import divflow as dv

from conftest import random_points


def fd_grad(f, x, h=1.0e-6):
    d = x.shape[-1]
    out = np.empty_like(x)
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        out[..., j] = (f.value(x + e) - f.value(x - e)) / (2.0 * h)
    return out


def fd_hess(f, x, h=1.0e-5):
    d = x.shape[-1]
    out = np.empty(x.shape[:-1] + (d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        out[..., :, j] = (f.grad(x + e) - f.grad(x - e)) / (2.0 * h)
    return out


@pytest.mark.parametrize("dim", [1, 2])
def test_bump_derivatives_match_fd(dim):
    f = dv.bump(0.3 * np.ones(dim), 1.3)
    pts = random_points(dim, 200, seed=2, scale=0.8)
    assert_allclose(f.grad(pts), fd_grad(f, pts), atol=1e-7)
    assert_allclose(f.hess(pts), fd_hess(f, pts), atol=1e-6)


@pytest.mark.parametrize("dim,axis", [(1, 0), (2, 1)])
def test_coordinate_bump_derivatives_match_fd(dim, axis):
    f = dv.coordinate_bump(-0.2 * np.ones(dim), 1.7, axis)
    pts = random_points(dim, 200, seed=3, scale=0.9)
    assert_allclose(f.grad(pts), fd_grad(f, pts), atol=1e-7)
    assert_allclose(f.hess(pts), fd_hess(f, pts), atol=1e-6)


def test_bump_support_and_smooth_edge():
    f = dv.bump([0.0], 1.0)
    outside = np.array([[1.0], [1.5], [-2.0]])
    assert_allclose(f.value(outside), 0.0)
    assert_allclose(f.grad(outside), 0.0)
    assert_allclose(f.hess(outside), 0.0)
    near = np.array([[1.0 - 1e-9]])
    assert np.isfinite(f.value(near)).all()
    assert np.isfinite(f.grad(near)).all()
    assert np.isfinite(f.hess(near)).all()
    assert f.value(np.array([[0.0]]))[0] == pytest.approx(np.exp(-1.0))


def test_battery_layout(ou1d, dw1d):
    bat = dv.battery_for(ou1d)
    assert len(bat) == 12
    names = [f.name for f in bat]
    assert len(set(names)) == 12
    dw_bat = dv.battery_for(dw1d)
    # double-well battery keeps a bump in each well
    assert any("bump1" in f.name for f in dw_bat)


def test_constant_and_shifted(ou1d):
    c = dv.constant(2.5, 1)
    pts = random_points(1, 10, seed=4)
    assert_allclose(c.value(pts), 2.5)
    assert_allclose(c.grad(pts), 0.0)
    s = dv.shifted(dv.square(1), 1.0)
    assert_allclose(s.value(pts), pts[:, 0] ** 2 - 1.0)
    assert_allclose(s.grad(pts), dv.square(1).grad(pts))
