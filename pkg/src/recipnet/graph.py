"""Directed graphs, dyad censuses, covariates and their text-file ingestion.

Nodes are indexed ``0..n-1``. External labels read from files are kept in
``DirectedGraph.labels`` so results can be reported in the caller's terms.
Dyads are always enumerated as ``i < j`` in row-major upper-triangular order
(the order of ``numpy.triu_indices(n, 1)``); dyad covariates and every
per-dyad array in the package follow that order.
"""

import csv
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .exceptions import ParseError, ValidationError

__all__ = [
    "DirectedGraph",
    "DyadCensus",
    "CovariateSet",
    "ConditioningReport",
    "ConditioningWarning",
    "dyad_census",
    "dyad_index",
    "n_dyads",
    "load_edge_list",
    "write_edge_list",
    "load_covariates",
    "write_covariates",
    "edges_from_flows",
    "check_covariate_conditioning",
]


def n_dyads(n):
    return n * (n - 1) // 2


def dyad_index(i, j, n):
    """Position of the unordered pair ``{i, j}`` in upper-triangular order."""
    i, j = np.minimum(i, j), np.maximum(i, j)
    return i * n - i * (i + 1) // 2 + (j - i - 1)


class DirectedGraph:
    """Simple directed graph on ``n`` nodes, stored as a sorted set of edge codes.

    An edge ``i -> j`` is encoded as ``i * n + j``. Self-loops are rejected and
    duplicate edges collapse to one. Instances are read-only after construction.

    Parameters
    ----------
    n : int
        Number of nodes.
    edges : iterable of (int, int) or array of shape (m, 2)
        Directed edges as node indices.
    labels : sequence of str, optional
        External node labels; defaults to ``"0".."n-1"``.
    """

    def __init__(self, n, edges=(), labels=None):
        n = int(n)
        if n < 1:
            raise ValidationError(f"node count must be positive, got {n}")
        arr = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
        if arr.size == 0:
            arr = arr.reshape(0, 2)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValidationError("edges must be pairs (source, target)")
        src, dst = arr[:, 0], arr[:, 1]
        if np.any((src < 0) | (src >= n) | (dst < 0) | (dst >= n)):
            raise ValidationError(f"edge endpoint outside 0..{n - 1}")
        loops = np.flatnonzero(src == dst)
        if loops.size:
            raise ValidationError(f"self-loop at node {int(src[loops[0]])} is not allowed")
        self._n = n
        self._codes = np.unique(src * n + dst)
        self._codes.setflags(write=False)
        if labels is None:
            labels = [str(k) for k in range(n)]
        labels = [str(lab) for lab in labels]
        if len(labels) != n:
            raise ValidationError(f"expected {n} labels, got {len(labels)}")
        if len(set(labels)) != n:
            raise ValidationError("node labels must be unique")
        self._labels = tuple(labels)

    @classmethod
    def from_dyad_states(cls, n, a_ij, a_ji, labels=None):
        """Build a graph from per-dyad link indicators in upper-triangular order."""
        rows, cols = np.triu_indices(n, 1)
        a_ij = np.asarray(a_ij, dtype=bool)
        a_ji = np.asarray(a_ji, dtype=bool)
        if a_ij.shape != rows.shape or a_ji.shape != rows.shape:
            raise ValidationError(f"expected {rows.size} dyad states")
        fwd = np.column_stack([rows[a_ij], cols[a_ij]])
        bwd = np.column_stack([cols[a_ji], rows[a_ji]])
        return cls(n, np.concatenate([fwd, bwd]), labels=labels)

    @property
    def n(self):
        return self._n

    @property
    def labels(self):
        return self._labels

    @cached_property
    def index(self):
        """Mapping from external label to node index."""
        return {lab: k for k, lab in enumerate(self._labels)}

    @property
    def n_edges(self):
        return int(self._codes.size)

    def edges(self):
        """Return ``(sources, targets)`` index arrays, sorted by code."""
        return self._codes // self._n, self._codes % self._n

    def has_edge(self, i, j):
        code = int(i) * self._n + int(j)
        pos = np.searchsorted(self._codes, code)
        return bool(pos < self._codes.size and self._codes[pos] == code)

    @cached_property
    def _states(self):
        n = self._n
        rows, cols = np.triu_indices(n, 1)
        src, dst = self.edges()
        a_ij = np.zeros(rows.size, dtype=bool)
        a_ji = np.zeros(rows.size, dtype=bool)
        up = src < dst
        a_ij[dyad_index(src[up], dst[up], n)] = True
        a_ji[dyad_index(dst[~up], src[~up], n)] = True
        for arr in (rows, cols, a_ij, a_ji):
            arr.setflags(write=False)
        return rows, cols, a_ij, a_ji

    def dyad_states(self):
        """Return ``(rows, cols, a_ij, a_ji)`` over all dyads ``i < j``."""
        return self._states

    def relabel(self, perm):
        """Graph with node ``k`` renamed to ``perm[k]``."""
        perm = np.asarray(perm, dtype=np.int64)
        if sorted(perm.tolist()) != list(range(self._n)):
            raise ValidationError("perm must be a permutation of 0..n-1")
        src, dst = self.edges()
        labels = [None] * self._n
        for k, lab in enumerate(self._labels):
            labels[perm[k]] = lab
        return DirectedGraph(self._n, np.column_stack([perm[src], perm[dst]]), labels=labels)

    def edge_set(self):
        """Edges as a set of ``(source_label, target_label)`` pairs."""
        src, dst = self.edges()
        return {(self._labels[s], self._labels[t]) for s, t in zip(src.tolist(), dst.tolist())}

    def __eq__(self, other):
        if not isinstance(other, DirectedGraph):
            return NotImplemented
        return self._n == other._n and np.array_equal(self._codes, other._codes)

    def __repr__(self):
        return f"DirectedGraph(n={self._n}, n_edges={self.n_edges})"


@dataclass(frozen=True)
class DyadCensus:
    """Counts of null, asymmetric and mutual dyads."""

    n: int
    d_null: int
    d_asym: int
    d_mut: int

    def __post_init__(self):
        for name in ("n", "d_null", "d_asym", "d_mut"):
            val = getattr(self, name)
            if int(val) != val or val < 0:
                raise ValidationError(f"{name} must be a nonnegative integer, got {val}")
        if self.d_null + self.d_asym + self.d_mut != n_dyads(self.n):
            raise ValidationError(
                f"census counts sum to {self.d_null + self.d_asym + self.d_mut}, "
                f"expected n(n-1)/2 = {n_dyads(self.n)}"
            )

    @property
    def total(self):
        return n_dyads(self.n)

    def as_dict(self):
        return {"n": self.n, "d_null": self.d_null, "d_asym": self.d_asym, "d_mut": self.d_mut}


def dyad_census(g):
    """Count null, asymmetric and mutual dyads of ``g``."""
    src, dst = g.edges()
    reverse = dst * g.n + src
    pos = np.searchsorted(g._codes, reverse)
    pos = np.minimum(pos, max(g._codes.size - 1, 0))
    reciprocated = int(np.count_nonzero(g._codes[pos] == reverse)) if g.n_edges else 0
    d_mut = reciprocated // 2
    d_asym = g.n_edges - reciprocated
    return DyadCensus(g.n, n_dyads(g.n) - d_asym - d_mut, d_asym, d_mut)


@dataclass
class CovariateSet:
    """Node covariates ``X`` (outgoingness), ``Y`` (incomingness) and dyad covariates ``V``.

    ``V`` holds one row per unordered pair in upper-triangular order, so
    ``V_ij = V_ji`` by construction.
    """

    X: np.ndarray
    Y: np.ndarray
    V: np.ndarray
    x_names: tuple = field(default=None)
    y_names: tuple = field(default=None)
    v_names: tuple = field(default=None)

    def __post_init__(self):
        self.X = np.array(self.X, dtype=float, ndmin=2)
        self.Y = np.array(self.Y, dtype=float, ndmin=2)
        n = self.X.shape[0]
        if self.Y.shape[0] != n:
            raise ValidationError(f"X has {n} rows but Y has {self.Y.shape[0]}")
        self.V = np.array(self.V, dtype=float)
        if self.V.ndim == 1:
            self.V = self.V.reshape(-1, 1) if self.V.size else self.V.reshape(n_dyads(n), 0)
        if self.V.shape[0] != n_dyads(n):
            raise ValidationError(f"V must have n(n-1)/2 = {n_dyads(n)} rows, got {self.V.shape[0]}")
        for name, arr in (("X", self.X), ("Y", self.Y), ("V", self.V)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} contains non-finite entries")
        self.x_names = _default_names(self.x_names, "x", self.d1)
        self.y_names = _default_names(self.y_names, "y", self.d2)
        self.v_names = _default_names(self.v_names, "v", self.d3)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d1(self):
        return self.X.shape[1]

    @property
    def d2(self):
        return self.Y.shape[1]

    @property
    def d3(self):
        return self.V.shape[1]

    @classmethod
    def zeros(cls, n, d1=0, d2=0, d3=0):
        return cls(np.zeros((n, d1)), np.zeros((n, d2)), np.zeros((n_dyads(n), d3)))

    @classmethod
    def uniform(cls, n, d1=1, d2=1, d3=1, rng=None):
        """I.i.d. standard-uniform covariates."""
        rng = np.random.default_rng(rng)
        return cls(rng.random((n, d1)), rng.random((n, d2)), rng.random((n_dyads(n), d3)))

    @classmethod
    def from_dense_dyads(cls, X, Y, V_full, **names):
        """Accept an ``(n, n, d3)`` dyad tensor, checking ``V_ij == V_ji``."""
        V_full = np.asarray(V_full, dtype=float)
        if V_full.ndim == 2:
            V_full = V_full[:, :, None]
        n = V_full.shape[0]
        rows, cols = np.triu_indices(n, 1)
        upper, lower = V_full[rows, cols], V_full[cols, rows]
        if not np.array_equal(upper, lower):
            bad = np.flatnonzero(np.any(upper != lower, axis=1))[0]
            raise ValidationError(f"dyad covariates asymmetric at pair ({rows[bad]}, {cols[bad]})")
        return cls(X, Y, upper, **names)

    def dyad(self, i, j):
        return self.V[dyad_index(i, j, self.n)]

    def centered(self):
        """Copy with every column shifted to empirical mean zero."""
        return CovariateSet(
            self.X - self.X.mean(axis=0) if self.d1 else self.X,
            self.Y - self.Y.mean(axis=0) if self.d2 else self.Y,
            self.V - self.V.mean(axis=0) if self.d3 else self.V,
            self.x_names, self.y_names, self.v_names,
        )


def _default_names(names, prefix, d):
    if names is None:
        return tuple(f"{prefix}{k + 1}" for k in range(d))
    names = tuple(str(s) for s in names)
    if len(names) != d:
        raise ValidationError(f"expected {d} {prefix}-names, got {len(names)}")
    return names


# ---------------------------------------------------------------------------
# ingestion


def _read_rows(path, delimiter):
    """Yield ``(lineno, fields)`` for non-blank rows; UTF-8, LF or CRLF."""
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        for row in reader:
            if not row or all(not cell.strip() for cell in row):
                continue
            yield reader.line_num, [cell.strip() for cell in row]


_EDGE_HEADERS = {("source", "target"), ("from", "to"), ("src", "dst")}


def load_edge_list(path, delimiter=",", header=None, labels=None):
    """Read a ``source,target`` edge list into a :class:`DirectedGraph`.

    Parameters
    ----------
    path : path-like
    delimiter : str
    header : bool or None
        ``None`` detects a header by its column names (``source,target``,
        ``from,to`` or ``src,dst``).
    labels : sequence of str, optional
        Fixed node universe, e.g. taken from a node covariate file; lets
        isolated nodes exist. Endpoints outside it are rejected.

    Duplicate edges collapse to one; self-loops raise ``ValidationError``.
    """
    index = None if labels is None else {str(lab): k for k, lab in enumerate(labels)}
    if index is not None and len(index) != len(labels):
        raise ValidationError("node labels must be unique")
    order = [] if index is None else list(index)
    seen = {} if index is None else dict(index)
    edges = []
    first = True
    for lineno, row in _read_rows(path, delimiter):
        if first:
            first = False
            is_header = header if header is not None else tuple(c.lower() for c in row[:2]) in _EDGE_HEADERS
            if is_header:
                continue
        if len(row) != 2 or not row[0] or not row[1]:
            raise ParseError(path, lineno, f"expected 2 fields 'source{delimiter}target', got {row!r}")
        src, dst = row
        if src == dst:
            raise ValidationError(f"{path}:{lineno}: self-loop at node {src!r} is not allowed")
        ids = []
        for lab in (src, dst):
            if lab not in seen:
                if index is not None:
                    raise ValidationError(f"{path}:{lineno}: unknown node label {lab!r}")
                seen[lab] = len(order)
                order.append(lab)
            ids.append(seen[lab])
        edges.append(ids)
    if not order:
        raise ValidationError(f"{path}: no nodes found")
    return DirectedGraph(len(order), np.array(edges, dtype=np.int64).reshape(-1, 2), labels=order)


def write_edge_list(g, path, delimiter=",", header=True):
    src, dst = g.edges()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        if header:
            writer.writerow(["source", "target"])
        for s, t in zip(src.tolist(), dst.tolist()):
            writer.writerow([g.labels[s], g.labels[t]])


def _parse_float(path, lineno, text, column):
    try:
        return float(text)
    except ValueError:
        raise ParseError(path, lineno, f"column {column!r}: cannot parse {text!r} as a number") from None


def load_covariates(node_path, dyad_path, graph, x_cols=(), y_cols=(), v_cols=None,
                    delimiter=",", center=False):
    """Read node and dyad covariate files aligned to ``graph``'s node index.

    The node file has a header; its first column is the node label and ``x_cols``
    / ``y_cols`` name the outgoingness and incomingness columns. The dyad file
    has a header ``node_a,node_b,<v-cols...>`` with one row per unordered pair.
    A pair listed in both orientations must carry identical values.
    ``v_cols=None`` takes every column after the two labels.
    """
    x_cols, y_cols = list(x_cols), list(y_cols)
    n = graph.n
    index = graph.index

    X = np.full((n, len(x_cols)), np.nan)
    Y = np.full((n, len(y_cols)), np.nan)
    have = np.zeros(n, dtype=bool)
    rows = _read_rows(node_path, delimiter)
    try:
        _, head = next(rows)
    except StopIteration:
        raise ValidationError(f"{node_path}: empty node covariate file") from None
    missing = [c for c in x_cols + y_cols if c not in head[1:]]
    if missing:
        raise ValidationError(f"{node_path}: missing required column(s) {missing}")
    xpos = [head.index(c) for c in x_cols]
    ypos = [head.index(c) for c in y_cols]
    for lineno, row in rows:
        if len(row) != len(head):
            raise ParseError(node_path, lineno, f"expected {len(head)} fields, got {len(row)}")
        lab = row[0]
        if lab not in index:
            raise ValidationError(f"{node_path}:{lineno}: unknown node label {lab!r}")
        k = index[lab]
        xv = [_parse_float(node_path, lineno, row[p], head[p]) for p in xpos]
        yv = [_parse_float(node_path, lineno, row[p], head[p]) for p in ypos]
        if have[k] and (not np.array_equal(X[k], xv) or not np.array_equal(Y[k], yv)):
            raise ValidationError(f"{node_path}:{lineno}: conflicting duplicate row for node {lab!r}")
        X[k], Y[k], have[k] = xv, yv, True
    if not have.all():
        lab = graph.labels[int(np.flatnonzero(~have)[0])]
        raise ValidationError(f"{node_path}: no covariate row for node {lab!r} ({int((~have).sum())} missing)")

    if dyad_path is None:
        if v_cols:
            raise ValidationError("dyad covariate columns given but no dyad file")
        V = np.zeros((n_dyads(n), 0))
        v_cols = []
    else:
        V, v_cols = _load_dyad_file(dyad_path, graph, v_cols, delimiter)

    cov = CovariateSet(X, Y, V, x_cols, y_cols, v_cols)
    return cov.centered() if center else cov


def _load_dyad_file(path, graph, v_cols, delimiter):
    n = graph.n
    index = graph.index
    rows = _read_rows(path, delimiter)
    try:
        _, head = next(rows)
    except StopIteration:
        raise ValidationError(f"{path}: empty dyad covariate file") from None
    if len(head) < 2:
        raise ValidationError(f"{path}: header must start with node_a{delimiter}node_b")
    if v_cols is None:
        v_cols = head[2:]
    v_cols = list(v_cols)
    missing = [c for c in v_cols if c not in head[2:]]
    if missing:
        raise ValidationError(f"{path}: missing required column(s) {missing}")
    vpos = [head.index(c) for c in v_cols]
    V = np.full((n_dyads(n), len(v_cols)), np.nan)
    have = np.zeros(n_dyads(n), dtype=bool)
    for lineno, row in rows:
        if len(row) != len(head):
            raise ParseError(path, lineno, f"expected {len(head)} fields, got {len(row)}")
        a, b = row[0], row[1]
        for lab in (a, b):
            if lab not in index:
                raise ValidationError(f"{path}:{lineno}: unknown node label {lab!r}")
        i, j = index[a], index[b]
        if i == j:
            raise ValidationError(f"{path}:{lineno}: dyad covariate for self-pair {a!r}")
        vals = [_parse_float(path, lineno, row[p], head[p]) for p in vpos]
        d = int(dyad_index(i, j, n))
        if have[d] and not np.array_equal(V[d], vals):
            raise ValidationError(f"{path}:{lineno}: asymmetric dyad covariates for pair ({a!r}, {b!r})")
        V[d], have[d] = vals, True
    if not have.all():
        d = int(np.flatnonzero(~have)[0])
        r, c = np.triu_indices(n, 1)
        raise ValidationError(
            f"{path}: missing dyad row for pair ({graph.labels[r[d]]!r}, {graph.labels[c[d]]!r}) "
            f"({int((~have).sum())} missing)"
        )
    return V, v_cols


def write_covariates(cov, graph, node_path, dyad_path=None, delimiter=","):
    """Write ``cov`` in the formats read by :func:`load_covariates`."""
    with open(node_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(["node", *cov.x_names, *cov.y_names])
        for k, lab in enumerate(graph.labels):
            w.writerow([lab, *map(repr, cov.X[k].tolist()), *map(repr, cov.Y[k].tolist())])
    if dyad_path is not None:
        rows, cols = np.triu_indices(graph.n, 1)
        with open(dyad_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
            w.writerow(["node_a", "node_b", *cov.v_names])
            for d, (r, c) in enumerate(zip(rows.tolist(), cols.tolist())):
                w.writerow([graph.labels[r], graph.labels[c], *map(repr, cov.V[d].tolist())])


def edges_from_flows(path, share=0.01, volume="exports", delimiter=",", labels=None):
    """Threshold a weighted flow table ``exporter,importer,value`` into a graph.

    An edge ``i -> j`` is kept when the flow attributable to the pair is at
    least ``share`` of ``i``'s total. With ``volume="exports"`` the pair flow is
    ``i``'s exports to ``j`` over ``i``'s total exports; with ``volume="total"``
    it is exports plus imports between ``i`` and ``j`` over ``i``'s total
    exports plus imports.
    """
    if volume not in ("exports", "total"):
        raise ValidationError(f"volume must be 'exports' or 'total', got {volume!r}")
    flows = {}
    order = [] if labels is None else [str(lab) for lab in labels]
    known = set(order)
    first = True
    for lineno, row in _read_rows(path, delimiter):
        if first:
            first = False
            try:
                float(row[2])
            except (IndexError, ValueError):
                continue
        if len(row) != 3:
            raise ParseError(path, lineno, f"expected 3 fields 'exporter{delimiter}importer{delimiter}value'")
        a, b = row[0], row[1]
        w = _parse_float(path, lineno, row[2], "value")
        if w < 0:
            raise ValidationError(f"{path}:{lineno}: negative flow")
        for lab in (a, b):
            if lab not in known:
                if labels is not None:
                    raise ValidationError(f"{path}:{lineno}: unknown node label {lab!r}")
                known.add(lab)
                order.append(lab)
        if a != b:
            flows[(a, b)] = flows.get((a, b), 0.0) + w
    idx = {lab: k for k, lab in enumerate(order)}
    n = len(order)
    W = np.zeros((n, n))
    for (a, b), w in flows.items():
        W[idx[a], idx[b]] += w
    pair = W if volume == "exports" else W + W.T
    totals = pair.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(totals[:, None] > 0, pair / totals[:, None], 0.0)
    np.fill_diagonal(frac, 0.0)
    src, dst = np.nonzero((frac >= share) & (pair > 0))
    return DirectedGraph(n, np.column_stack([src, dst]), labels=order)


# ---------------------------------------------------------------------------
# diagnostics


class ConditioningWarning(UserWarning):
    """Covariates are (nearly) collinear; slope coefficients may be unidentified."""


@dataclass(frozen=True)
class ConditioningReport:
    min_eigenvalue: float
    threshold: float
    warning: bool


def check_covariate_conditioning(cov, g=None, threshold=1e-8, warn=False):
    """Smallest eigenvalue of the covariance of ``(Z_ij + Z_ji, V_ij)`` over dyads.

    ``Z_ij + Z_ji`` is ``(X_i + X_j, Y_i + Y_j)``. The report's ``warning`` flag
    is set when the eigenvalue falls below ``threshold``; with ``warn=True`` a
    :class:`ConditioningWarning` is also emitted.
    """
    if g is not None and g.n != cov.n:
        raise ValidationError(f"covariates have {cov.n} nodes, graph has {g.n}")
    d = cov.d1 + cov.d2 + cov.d3
    if d == 0:
        return ConditioningReport(math.inf, threshold, False)
    rows, cols = np.triu_indices(cov.n, 1)
    S = np.hstack([cov.X[rows] + cov.X[cols], cov.Y[rows] + cov.Y[cols], cov.V])
    S = S - S.mean(axis=0)
    C = S.T @ S / S.shape[0]
    lam = float(np.linalg.eigvalsh(C)[0])
    flagged = lam < threshold
    if flagged and warn:
        warnings.warn(
            f"covariate covariance is near-singular (min eigenvalue {lam:.3g} < {threshold:g})",
            ConditioningWarning,
            stacklevel=2,
        )
    return ConditioningReport(lam, threshold, flagged)
