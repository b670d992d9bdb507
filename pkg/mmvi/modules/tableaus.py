"""Partitioned Runge-Kutta coefficient pairs.

``a``/``b`` act on positions (and on the mesh stages), ``abar``/``bbar``
on momenta. The shipped pairs are Gauss (1 and 2 stages), Lobatto
IIIA-IIIB (2 and 3 stages) and the 3-stage Radau IIA method, which is not
symplectic and only serves as a comparator.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Literal

import numpy as np

TableauName = Literal["Gauss1", "Gauss2", "Lobatto2", "Lobatto3", "Radau3"]

SYMPLECTIC_TOLERANCE = 1e-14


@dataclass(frozen=True)
class PartitionedTableau:
    name: str
    a: np.ndarray
    abar: np.ndarray
    b: np.ndarray
    bbar: np.ndarray
    c: np.ndarray
    order: int

    @property
    def s(self) -> int:
        return self.b.size

    @property
    def symplectic(self) -> bool:
        return symplecticity_defect(self) <= SYMPLECTIC_TOLERANCE

    @property
    def explicit_first_stage(self) -> bool:
        """True when the first row of ``a`` vanishes (stage 1 sits at t_n)."""
        return bool(np.all(self.a[0] == 0.0))

    def describe(self) -> Dict[str, object]:
        return {
            "name": self.name,
            "stages": self.s,
            "order": self.order,
            "symplectic": self.symplectic,
            "c": self.c.tolist(),
        }


def symplecticity_defect(tab: PartitionedTableau) -> float:
    """max |b_i ā_ij + b̄_j a_ji − b_i b̄_j| together with max |b − b̄|."""
    b, bbar = tab.b, tab.bbar
    defect = b[:, None] * tab.abar + bbar[None, :] * tab.a.T - np.outer(b, bbar)
    return float(max(np.max(np.abs(defect)), np.max(np.abs(b - bbar))))


def _pair(name, a, abar, b, c, order) -> PartitionedTableau:
    a, abar, b = np.asarray(a, float), np.asarray(abar, float), np.asarray(b, float)
    return PartitionedTableau(name=name, a=a, abar=abar, b=b, bbar=b.copy(), c=np.asarray(c, float), order=order)


_r3 = np.sqrt(3.0)
_r6 = np.sqrt(6.0)

GAUSS1 = _pair("Gauss1", [[0.5]], [[0.5]], [1.0], [0.5], 2)

_gauss2 = [[0.25, 0.25 - _r3 / 6.0], [0.25 + _r3 / 6.0, 0.25]]
GAUSS2 = _pair("Gauss2", _gauss2, _gauss2, [0.5, 0.5], [0.5 - _r3 / 6.0, 0.5 + _r3 / 6.0], 4)

LOBATTO2 = _pair("Lobatto2", [[0.0, 0.0], [0.5, 0.5]], [[0.5, 0.0], [0.5, 0.0]], [0.5, 0.5], [0.0, 1.0], 2)

LOBATTO3 = _pair(
    "Lobatto3",
    [[0.0, 0.0, 0.0], [5.0 / 24.0, 1.0 / 3.0, -1.0 / 24.0], [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0]],
    [[1.0 / 6.0, -1.0 / 6.0, 0.0], [1.0 / 6.0, 1.0 / 3.0, 0.0], [1.0 / 6.0, 5.0 / 6.0, 0.0]],
    [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
    [0.0, 0.5, 1.0],
    4,
)

_radau3 = [
    [(88.0 - 7.0 * _r6) / 360.0, (296.0 - 169.0 * _r6) / 1800.0, (-2.0 + 3.0 * _r6) / 225.0],
    [(296.0 + 169.0 * _r6) / 1800.0, (88.0 + 7.0 * _r6) / 360.0, (-2.0 - 3.0 * _r6) / 225.0],
    [(16.0 - _r6) / 36.0, (16.0 + _r6) / 36.0, 1.0 / 9.0],
]
RADAU3 = _pair("Radau3", _radau3, _radau3, _radau3[2], [(4.0 - _r6) / 10.0, (4.0 + _r6) / 10.0, 1.0], 5)

TABLEAUS: Dict[str, PartitionedTableau] = {tab.name: tab for tab in (GAUSS1, GAUSS2, LOBATTO2, LOBATTO3, RADAU3)}


def get_tableau(name: str) -> PartitionedTableau:
    try:
        return TABLEAUS[name]
    except KeyError:
        raise ValueError(f"unknown tableau {name!r}; expected one of {sorted(TABLEAUS)}") from None
