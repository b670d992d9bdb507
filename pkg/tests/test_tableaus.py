from __future__ import annotations

import json

import numpy as np
import pytest

from mmvi.modules.tableaus import TABLEAUS, get_tableau, symplecticity_defect

THIRD_ORDER = ["Gauss2", "Lobatto3", "Radau3"]


@pytest.mark.parametrize("name", sorted(TABLEAUS))
def test_row_sums_equal_nodes(name):
    tab = get_tableau(name)
    np.testing.assert_allclose(tab.a.sum(axis=1), tab.c, atol=1e-15)
    np.testing.assert_allclose(tab.b.sum(), 1.0, atol=1e-15)


@pytest.mark.parametrize("name", sorted(TABLEAUS))
def test_quadrature_order(name):
    tab = get_tableau(name)
    for k in range(1, tab.order + 1):
        assert tab.b @ tab.c ** (k - 1) == pytest.approx(1.0 / k, abs=1e-14)


@pytest.mark.parametrize("name", THIRD_ORDER)
def test_third_order_conditions(name):
    tab = get_tableau(name)
    assert tab.b @ tab.c**2 == pytest.approx(1.0 / 3.0, abs=1e-14)
    assert tab.b @ (tab.a @ tab.c) == pytest.approx(1.0 / 6.0, abs=1e-14)
    assert tab.bbar @ (tab.abar @ tab.c) == pytest.approx(1.0 / 6.0, abs=1e-14)


@pytest.mark.parametrize("name", ["Gauss1", "Gauss2", "Lobatto2", "Lobatto3"])
def test_symplectic_pairs(name):
    tab = get_tableau(name)
    assert symplecticity_defect(tab) < 1e-14
    assert tab.symplectic


def test_radau_is_not_symplectic():
    tab = get_tableau("Radau3")
    assert symplecticity_defect(tab) > 1e-3
    assert not tab.symplectic


def test_lobatto_first_stage_is_explicit():
    assert get_tableau("Lobatto2").explicit_first_stage
    assert get_tableau("Lobatto3").explicit_first_stage
    assert not get_tableau("Gauss2").explicit_first_stage


def test_unknown_tableau():
    with pytest.raises(ValueError, match="unknown tableau"):
        get_tableau("Euler")


def test_describe_is_json_serializable():
    payload = json.loads(json.dumps([tab.describe() for tab in TABLEAUS.values()]))
    assert {entry["name"] for entry in payload} == set(TABLEAUS)
    assert {entry["name"]: entry["stages"] for entry in payload}["Lobatto3"] == 3


FOURTH_ORDER = ["Gauss2", "Lobatto3", "Radau3"]


def _coefficient_pairs(tab):
    return [(tab.a, tab.a), (tab.a, tab.abar), (tab.abar, tab.a), (tab.abar, tab.abar)]


@pytest.mark.parametrize("name", FOURTH_ORDER)
def test_fourth_order_conditions(name):
    tab = get_tableau(name)
    b, c = tab.b, tab.c
    assert b @ c**3 == pytest.approx(1.0 / 4.0, abs=1e-14)
    for A in (tab.a, tab.abar):
        np.testing.assert_allclose(A.sum(axis=1), c, atol=1e-15)
        assert b @ (c * (A @ c)) == pytest.approx(1.0 / 8.0, abs=1e-14)
        assert b @ (A @ c**2) == pytest.approx(1.0 / 12.0, abs=1e-14)
    # tall trees, every colouring of the two inner vertices
    for A, B in _coefficient_pairs(tab):
        assert b @ (A @ (B @ c)) == pytest.approx(1.0 / 24.0, abs=1e-14)


def test_radau_fifth_order_tall_tree():
    tab = get_tableau("Radau3")
    assert tab.b @ (tab.a @ (tab.a @ (tab.a @ tab.c))) == pytest.approx(1.0 / 120.0, abs=1e-14)
    assert tab.b @ (tab.a @ tab.c**3) == pytest.approx(1.0 / 20.0, abs=1e-14)


@pytest.mark.parametrize("name", ["Lobatto2", "Lobatto3"])
def test_lobatto_coupling_condition(name):
    tab = get_tableau(name)
    s = tab.s
    for i in range(s):
        for j in range(s):
            coupled = tab.b[i] * tab.abar[i, j] + tab.bbar[j] * tab.a[j, i]
            assert coupled == pytest.approx(tab.b[i] * tab.bbar[j], abs=1e-15)
    np.testing.assert_array_equal(tab.b, tab.bbar)
    # IIIB momentum stages ignore the last stage
    np.testing.assert_array_equal(tab.abar[:, -1], 0.0)
