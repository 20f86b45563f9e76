"""Materialize the (J x I) lattice of 2DLSTM states.

Three schedules produce bit-identical forward values:

* ``forward_full``       row-major, target step i outer, source position j inner
* ``forward_wavefront``  anti-diagonals j + i = const, cells of a diagonal on
                         a thread pool, a barrier between diagonals
* ``extend_row``         one new target row from the cached previous row

Indexing follows the lattice: j = 1..J over the source, i = 1..I over the
target, row 0 and column 0 are zero borders. ``inputs[j-1][i-1]`` holds x_{j,i}.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from core.autodiff import Var
from core.errors import ShapeMismatchError
from models.cells import CellState, TwoDLSTMParams, twodlstm_step

logger = logging.getLogger(__name__)


@dataclass
class GridState:
    J: int
    I: int
    cells: list[list[CellState]]  # (J+1) x (I+1), cells[j][i]
    diagonals: int = 0

    def state(self, j: int, i: int) -> CellState:
        return self.cells[j][i]

    def row(self, i: int) -> list[CellState]:
        """States (1, i) .. (J, i)."""
        return [self.cells[j][i] for j in range(1, self.J + 1)]

    def last(self, i: int) -> CellState:
        return self.cells[self.J][i]


@dataclass(frozen=True)
class RowCache:
    """The last completed target row; row 0 is the zero border."""

    i: int
    cells: tuple[CellState, ...] = field(default_factory=tuple)

    @property
    def J(self) -> int:
        return len(self.cells)

    @classmethod
    def empty(cls, params: TwoDLSTMParams, J: int) -> "RowCache":
        zero = CellState.zeros(params.tape, params.n)
        return cls(i=0, cells=tuple(zero for _ in range(J)))

    def last(self) -> CellState:
        return self.cells[-1]


def _check_inputs(inputs: Sequence[Sequence[Var]]) -> tuple[int, int]:
    J = len(inputs)
    if J < 1 or len(inputs[0]) < 1:
        raise ShapeMismatchError("grid needs J >= 1 and I >= 1")
    I = len(inputs[0])
    if any(len(column) != I for column in inputs):
        raise ShapeMismatchError("ragged grid inputs")
    return J, I


def _empty_grid(params: TwoDLSTMParams, J: int, I: int) -> list[list[CellState]]:
    zero = CellState.zeros(params.tape, params.n)
    return [[zero for _ in range(I + 1)] for _ in range(J + 1)]


def forward_full(params: TwoDLSTMParams, inputs: Sequence[Sequence[Var]]) -> GridState:
    J, I = _check_inputs(inputs)
    cells = _empty_grid(params, J, I)
    for i in range(1, I + 1):
        for j in range(1, J + 1):
            cells[j][i] = twodlstm_step(params, inputs[j - 1][i - 1], cells[j - 1][i], cells[j][i - 1])
    return GridState(J=J, I=I, cells=cells)


def wavefront_schedule(J: int, I: int) -> list[list[tuple[int, int]]]:
    """Cells grouped by anti-diagonal d = j + i, for d = 2 .. J + I."""
    return [
        [(j, d - j) for j in range(max(1, d - I), min(J, d - 1) + 1)]
        for d in range(2, J + I + 1)
    ]


def forward_wavefront(
    params: TwoDLSTMParams, inputs: Sequence[Sequence[Var]], workers: int = 1
) -> GridState:
    if workers < 1:
        raise ValueError("workers must be positive")
    J, I = _check_inputs(inputs)
    cells = _empty_grid(params, J, I)
    schedule = wavefront_schedule(J, I)

    def compute(cell: tuple[int, int]) -> None:
        j, i = cell
        cells[j][i] = twodlstm_step(params, inputs[j - 1][i - 1], cells[j - 1][i], cells[j][i - 1])

    if workers == 1:
        for diagonal in schedule:
            for cell in diagonal:
                compute(cell)
    else:
        with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="wavefront") as pool:
            for diagonal in schedule:
                # list() is the barrier: every cell of d finishes before d + 1 starts
                list(pool.map(compute, diagonal))
    logger.debug("[GRID] wavefront %dx%d over %d diagonals, %d workers", J, I, len(schedule), workers)
    return GridState(J=J, I=I, cells=cells, diagonals=len(schedule))


def extend_row(
    params: TwoDLSTMParams, cache: RowCache, new_inputs: Sequence[Var]
) -> tuple[RowCache, list[CellState]]:
    """Compute row i = cache.i + 1 in O(J) cell steps."""
    if len(new_inputs) != cache.J:
        raise ShapeMismatchError(f"row input length {len(new_inputs)} != J={cache.J}")
    previous = CellState.zeros(params.tape, params.n)
    row: list[CellState] = []
    for j in range(cache.J):
        previous = twodlstm_step(params, new_inputs[j], previous, cache.cells[j])
        row.append(previous)
    return RowCache(i=cache.i + 1, cells=tuple(row)), row
