"""Crossbar tiling and hardware cost models.

A weight matrix (N inputs x K outputs) too large for one crossbar is split
into a grid of P x Q crossbars. Each crossbar row segment (one matrix row
restricted to one tile column) needs an input wire and each crossbar
column segment an output wire, so a full grid has
``N * ceil(K / Q) + K * ceil(N / P)`` routing wires. Cell area is 4 F^2 per
crossbar cell, padding included. Routing area follows either the detailed
``(W_m + W_d) * sum(L_i)`` model or the aggregate ``alpha * N_w ** 2``.
"""

import csv
import io
import logging
from functools import lru_cache
from dataclasses import dataclass, field

import numpy as np

from .exceptions import UsageError

log = logging.getLogger(__name__)

MAX_DIM = 64


@dataclass(frozen=True)
class CrossbarShape:
    P: int
    Q: int
    max_dim: int = MAX_DIM

    def __post_init__(self):
        if not (1 <= self.P <= self.max_dim and 1 <= self.Q <= self.max_dim):
            raise UsageError(f"crossbar {self.P}x{self.Q} outside 1..{self.max_dim}")


@dataclass(frozen=True)
class CrossbarTiling:
    N: int
    K: int
    P: int
    Q: int

    @property
    def grid(self):
        return (-(-self.N // self.P), -(-self.K // self.Q))

    @property
    def padded(self):
        return self.N % self.P != 0 or self.K % self.Q != 0

    @property
    def shape(self):
        return CrossbarShape(self.P, self.Q, max(self.P, self.Q, MAX_DIM))

    def live_cells(self, mask=None):
        """Cells per tile holding a weight that is not deleted, as a grid-shaped array."""
        live = np.ones((self.N, self.K), dtype=bool) if mask is None else ~np.asarray(mask, dtype=bool)
        gp, gq = self.grid
        pad = np.zeros((gp * self.P, gq * self.Q), dtype=bool)
        pad[:self.N, :self.K] = live
        return pad.reshape(gp, self.P, gq, self.Q).sum(axis=(1, 3))


@dataclass
class AreaModel:
    feature_size: float = 1.0
    metal_width: float = 1.0
    metal_spacing: float = 1.0
    alpha: float = 1.0
    cell_factor: float = 4.0

    def __post_init__(self):
        if min(self.feature_size, self.metal_width, self.metal_spacing, self.alpha, self.cell_factor) <= 0:
            raise UsageError("area model parameters must be positive")


def largest_divisor(n, limit):
    for d in range(min(n, limit), 0, -1):
        if n % d == 0:
            return d
    return 1


def _pick(n, max_dim):
    if n <= max_dim:
        return n
    d = largest_divisor(n, max_dim)
    if d == 1:
        log.warning("no divisor of %d in 2..%d; padding the last tile of a %d-wide grid", n, max_dim, max_dim)
        return max_dim
    return d


@lru_cache(maxsize=None)
def select_tiling(N, K, max_dim=MAX_DIM):
    """Crossbar shape for an N x K matrix.

    A matrix within ``max_dim`` in both directions gets a single N x K
    crossbar. Otherwise each side uses its largest divisor not above
    ``max_dim``; a side with no such divisor above 1 falls back to
    ``max_dim`` with a partially filled last tile. Results are cached, so
    the padding warning appears once per shape.
    """
    N, K, max_dim = int(N), int(K), int(max_dim)
    if N < 1 or K < 1 or max_dim < 1:
        raise UsageError("N, K and max_dim must be >= 1")
    if N <= max_dim and K <= max_dim:
        return CrossbarTiling(N, K, N, K)
    return CrossbarTiling(N, K, _pick(N, max_dim), _pick(K, max_dim))


def tile_count(tiling):
    gp, gq = tiling.grid
    return gp * gq


def crossbar_cells(tiling):
    return tile_count(tiling) * tiling.P * tiling.Q


def crossbar_area(tiling, model=None):
    """Crossbar area in F^2 units: every cell of every tile (padding included) costs 4 F^2."""
    model = model or AreaModel()
    if isinstance(tiling, (list, tuple)):
        return sum(crossbar_area(t, model) for t in tiling)
    return crossbar_cells(tiling) * model.cell_factor


def row_group_live(tiling, mask):
    """(N, grid_cols) booleans: does row i have a surviving weight inside tile column b."""
    gp, gq = tiling.grid
    live = np.zeros((tiling.N, gq * tiling.Q), dtype=bool)
    live[:, :tiling.K] = ~mask
    return live.reshape(tiling.N, gq, tiling.Q).any(axis=2)


def col_group_live(tiling, mask):
    """(grid_rows, K) booleans: does column j have a surviving weight inside tile row a."""
    gp, gq = tiling.grid
    live = np.zeros((gp * tiling.P, tiling.K), dtype=bool)
    live[:tiling.N] = ~mask
    return live.reshape(gp, tiling.P, tiling.K).any(axis=1)


def routing_wires(tiling, mask=None):
    """Input wires (one per row group) plus output wires (one per column group).

    With a deletion mask (True = deleted weight, N x K), a group whose
    weights are all deleted loses its wire.
    """
    gp, gq = tiling.grid
    if mask is None:
        return tiling.N * gq + tiling.K * gp
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (tiling.N, tiling.K):
        raise UsageError(f"mask shape {mask.shape} does not match tiling {(tiling.N, tiling.K)}")
    return int(row_group_live(tiling, mask).sum() + col_group_live(tiling, mask).sum())


def routing_area_quadratic(n_wires, model=None):
    model = model or AreaModel()
    if n_wires < 0:
        raise UsageError("wire count must be non-negative")
    return model.alpha * float(n_wires) ** 2


def routing_area_detailed(lengths, model=None):
    model = model or AreaModel()
    lengths = np.asarray(lengths, dtype=np.float64)
    if np.any(lengths < 0):
        raise UsageError("wire lengths must be non-negative")
    return (model.metal_width + model.metal_spacing) * float(lengths.sum())


@dataclass
class ArrayArea:
    """Cost of one crossbar array (one matrix mapped onto a tile grid)."""

    name: str
    layer: str
    tiling: CrossbarTiling
    cells: int
    area_F2: float
    wires_original: int
    wires: int
    routing_area: float
    area_pct: float = None
    wires_pct: float = None
    routing_area_pct: float = None


@dataclass
class AreaReport:
    arrays: list = field(default_factory=list)
    layers: dict = field(default_factory=dict)
    total: ArrayArea = None

    def rows(self):
        """Per-array rows, a subtotal for every multi-array layer, then the total."""
        out = []
        for layer, entries in self._by_layer().items():
            out.extend(entries)
            if len(entries) > 1:
                out.append(self.layers[layer])
        out.append(self.total)
        return out

    def _by_layer(self):
        groups = {}
        for a in self.arrays:
            groups.setdefault(a.layer, []).append(a)
        return groups

    def entry(self, name):
        for row in self.rows():
            if row.name == name:
                return row
        raise KeyError(name)

    def mean_pct(self, attr, names):
        return float(np.mean([getattr(self.entry(n), attr) for n in names]))

    def to_csv(self, path=None):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["layer", "cells", "area_F2", "area_pct", "wires", "wires_pct", "routing_area_pct"])
        for r in self.rows():
            writer.writerow([r.name, r.cells, fmt6(r.area_F2), fmt6(r.area_pct), r.wires, fmt6(r.wires_pct),
                             fmt6(r.routing_area_pct)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def to_table(self):
        head = f"{'array':<12}{'tile':>9}{'grid':>8}{'cells':>10}{'area%':>9}{'wires':>8}{'wires%':>9}{'route%':>9}"
        lines = [head, "-" * len(head)]
        for r in self.rows():
            t = r.tiling
            tile = f"{t.P}x{t.Q}" if t else ""
            grid = "{}x{}".format(*t.grid) if t else ""
            lines.append(f"{r.name:<12}{tile:>9}{grid:>8}{r.cells:>10}{_pct(r.area_pct):>9}{r.wires:>8}"
                         f"{_pct(r.wires_pct):>9}{_pct(r.routing_area_pct):>9}")
        lines.append("biases are not mapped to crossbars and are excluded from all areas")
        return "\n".join(lines)


def fmt6(x):
    """Six significant digits, trailing zeros kept; blank for missing values."""
    if x is None:
        return ""
    return f"{x:#.6g}"


def _pct(x):
    return "" if x is None else f"{x:.2f}"


def _ratio(a, b):
    if b == 0:
        return 100.0 if a == 0 else float("inf")
    return 100.0 * a / b


def array_area(name, layer, matrix_shape, mask=None, tiling=None, model=None, max_dim=MAX_DIM):
    model = model or AreaModel()
    tiling = tiling or select_tiling(*matrix_shape, max_dim=max_dim)
    wires0 = routing_wires(tiling)
    wires = routing_wires(tiling, mask) if mask is not None else wires0
    return ArrayArea(name, layer, tiling, crossbar_cells(tiling), crossbar_area(tiling, model), wires0, wires,
                     routing_area_quadratic(wires, model))


def _sum_entries(name, layer, entries, model):
    cells = sum(e.cells for e in entries)
    return ArrayArea(name, layer, None, cells, cells * model.cell_factor, sum(e.wires_original for e in entries),
                     sum(e.wires for e in entries), sum(e.routing_area for e in entries))


def _fill_pct(entry, base):
    entry.area_pct = _ratio(entry.area_F2, base.area_F2)
    entry.wires_pct = _ratio(entry.wires, base.wires)
    entry.routing_area_pct = _ratio(entry.routing_area, base.routing_area)


def net_report(net, model=None, baseline=None, max_dim=MAX_DIM):
    """Crossbar and routing cost of every weighted layer of ``net``.

    Percentages compare each row with the equally named row of ``baseline``
    (arrays ``fc1_u``/``fc1_v``, layers ``fc1``, and ``TOTAL``). Without a
    baseline they compare against the same network with no deletions.
    Biases are excluded.
    """
    model = model or AreaModel()
    report = AreaReport()
    for layer in net.weighted_layers():
        entries = []
        for name, key, matrix in layer.crossbar_arrays():
            mask = layer.masks.get(key)
            tiling = mask.tiling if mask is not None and mask.tiling is not None else None
            entries.append(array_area(name, layer.name, matrix.shape, None if mask is None else mask.deleted,
                                      tiling, model, max_dim))
        report.arrays.extend(entries)
        report.layers[layer.name] = entries[0] if len(entries) == 1 else _sum_entries(layer.name, layer.name, entries, model)
    report.total = _sum_entries("TOTAL", None, report.arrays, model)

    for row in report.rows():
        if baseline is None:
            base = ArrayArea(row.name, row.layer, None, row.cells, row.area_F2, row.wires_original,
                             row.wires_original, _unmasked_routing_area(row, report, model))
        else:
            try:
                base = baseline.entry(row.name)
            except KeyError:
                continue
        _fill_pct(row, base)
    return report


def _unmasked_routing_area(row, report, model):
    # routing area of the undeleted arrays behind ``row``
    if row.tiling is not None:
        return routing_area_quadratic(row.wires_original, model)
    members = report.arrays if row.layer is None else [a for a in report.arrays if a.layer == row.layer]
    return sum(routing_area_quadratic(a.wires_original, model) for a in members)
