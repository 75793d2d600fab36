"""Flow-network encoding of the surrogate energy and exact min-cut solvers.

Every pixel is a node; terminal links connect it to the source (foreground)
and the sink (background), and n-links join each unordered 8-connected pair.
A pixel on the source side of the cut is foreground, so cutting its sink link
charges the foreground cost and cutting its source link the background cost.
"""

from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from ._validation import check_image
from .exceptions import NonFiniteWeight
from .shape_energy import PAIRS

__all__ = [
    "FlowNetwork",
    "CutResult",
    "build_network",
    "max_flow",
    "max_flow_reference",
    "cut_cost",
    "check_submodularity",
    "write_dimacs",
]


@dataclass(frozen=True, eq=False)
class FlowNetwork:
    """Grid flow network.

    ``source`` and ``sink`` are per-pixel terminal capacities, ``nlinks`` one
    capacity array per entry of :data:`mmcut.shape_energy.PAIRS` (east, south,
    south-east, south-west), and ``offset`` the labeling-independent energy
    removed while making the terminal capacities non-negative.
    """

    source: np.ndarray
    sink: np.ndarray
    nlinks: tuple
    offset: float = 0.0

    def __post_init__(self):
        h, w = self.source.shape
        if self.sink.shape != (h, w):
            raise ValueError("source and sink capacity grids differ in shape")
        expected = ((h, w - 1), (h - 1, w), (h - 1, w - 1), (h - 1, w - 1))
        if len(self.nlinks) != 4 or any(n.shape != e for n, e in zip(self.nlinks, expected)):
            raise ValueError("n-link arrays must match the east/south/south-east/south-west layout")

    @property
    def shape(self):
        return self.source.shape

    @classmethod
    def zeros(cls, shape):
        h, w = shape
        nl = (np.zeros((h, w - 1)), np.zeros((h - 1, w)), np.zeros((h - 1, w - 1)), np.zeros((h - 1, w - 1)))
        return cls(np.zeros(shape), np.zeros(shape), nl)

    def energy(self, labels):
        """Cut cost of ``labels`` plus the offset, i.e. the encoded energy."""
        return cut_cost(self, labels) + self.offset


@dataclass(frozen=True)
class CutResult:
    labeling: np.ndarray
    flow_value: float


def cut_cost(network, labels):
    """Capacity of the cut that puts the True pixels of ``labels`` on the source side."""
    labels = np.asarray(labels, dtype=bool)
    cost = float(np.sum(network.sink[labels])) + float(np.sum(network.source[~labels]))
    for (sa, sb, _), cap in zip(PAIRS, network.nlinks):
        cost += float(np.sum(cap[labels[sa] != labels[sb]]))
    return cost


def check_submodularity(network):
    """True when every pairwise term is submodular.

    Same-label pairs cost nothing, so this reduces to non-negative n-links.
    """
    return all(bool(np.all(cap >= 0)) for cap in network.nlinks)


def build_network(image, params, tset=None, weights=None, lam=2.0, beta=None, samples=None):
    """Encode the surrogate energy for one majorization step.

    Terminal capacities are the Laplace negative log-likelihoods plus, per
    template ``j`` with weight ``c_j``, ``beta * c_j * |phi_j|**lam`` on the
    source link where the template says foreground and on the sink link
    where it says background.  N-links get ``pi * beta / (8 |s - u|)`` times
    the weighted ``|phi_j|**lam`` at the transformed pair midpoint.  The
    per-pixel minimum of the two terminal capacities is moved into
    ``offset``.

    ``beta`` defaults to ``tset.beta``; ``beta=0`` (or ``tset=None``) gives
    the shape-free network.  ``samples`` may carry precomputed
    :class:`~mmcut.shape_energy.TemplateSamples`, one per template.
    """
    image = check_image(image)
    shape = image.shape
    source = np.asarray(params.nll_bg(image), dtype=float).copy()
    sink = np.asarray(params.nll_fg(image), dtype=float).copy()
    h, w = shape
    nlinks = [np.zeros((h, w - 1)), np.zeros((h - 1, w)), np.zeros((h - 1, w - 1)), np.zeros((h - 1, w - 1))]
    if tset is not None:
        beta = tset.beta if beta is None else beta
        if weights is None:
            raise ValueError("majorization weights are required with a template set")
        if samples is None:
            samples = [e.samples(shape, lam) for e in tset.entries]
        if beta != 0:
            for c, smp in zip(np.asarray(weights, dtype=float), samples):
                if c == 0:
                    continue
                unary = beta * c * smp.pixel_weight
                source += np.where(smp.inside, unary, 0.0)
                sink += np.where(smp.inside, 0.0, unary)
                for n, ((_, _, dist), pw) in enumerate(zip(PAIRS, smp.pair_weight)):
                    nlinks[n] += (np.pi * beta * c / (8.0 * dist)) * pw
    base = np.minimum(source, sink)
    source -= base
    sink -= base
    offset = float(np.sum(base))
    for arr in (source, sink, *nlinks):
        if not np.all(np.isfinite(arr)):
            raise NonFiniteWeight("network capacity is NaN or infinite")
    if not np.isfinite(offset):
        raise NonFiniteWeight("network energy offset is not finite")
    return FlowNetwork(source, sink, tuple(nlinks), offset)


# 8-neighbourhood ordered so the opposite of direction k is 7 - k
_DIRS = np.array([(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)])


def _grid_arrays(network):
    h, w = network.shape
    n = h * w
    idx = np.arange(n).reshape(h, w)
    nbr = np.full((n, 8), -1, dtype=np.int64)
    for k, (dr, dc) in enumerate(_DIRS):
        r0, r1 = max(0, -dr), min(h, h - dr)
        c0, c1 = max(0, -dc), min(w, w - dc)
        nbr[idx[r0:r1, c0:c1].ravel(), k] = idx[r0 + dr : r1 + dr, c0 + dc : c1 + dc].ravel()
    rcap = np.zeros((n, 8))
    east, south, se, sw = network.nlinks
    grid = rcap.reshape(h, w, 8)
    grid[:, :-1, 4] = east
    grid[:, 1:, 3] = east
    grid[:-1, :, 6] = south
    grid[1:, :, 1] = south
    grid[:-1, :-1, 7] = se
    grid[1:, 1:, 0] = se
    grid[:-1, 1:, 5] = sw
    grid[1:, :-1, 2] = sw
    return nbr, rcap


_FREE, _SRC, _SNK = 0, 1, 2
_NONE, _TERM = -1, -2


@numba.njit(cache=True)
def _bk_maxflow(tr, rcap, nbr):
    # Augmenting paths on two search trees (source and sink) that are reused
    # between augmentations; saturated tree edges orphan their subtrees, which
    # are re-adopted or freed.
    n = tr.shape[0]
    tree = np.zeros(n, dtype=np.int8)
    parent = np.full(n, _NONE, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    inq = np.zeros(n, dtype=np.bool_)
    head = 0
    count = 0
    orphans = np.empty(n + 1, dtype=np.int64)
    n_orph = 0
    flow = 0.0
    for p in range(n):
        if tr[p] > 0:
            tree[p] = _SRC
        elif tr[p] < 0:
            tree[p] = _SNK
        else:
            continue
        parent[p] = _TERM
        queue[(head + count) % n] = p
        count += 1
        inq[p] = True
    while True:
        found = False
        mp = -1
        mk = -1
        while count > 0:
            p = queue[head]
            if tree[p] == _FREE:
                head = (head + 1) % n
                count -= 1
                inq[p] = False
                continue
            for k in range(8):
                q = nbr[p, k]
                if q < 0:
                    continue
                if tree[p] == _SRC:
                    cap = rcap[p, k]
                else:
                    cap = rcap[q, 7 - k]
                if cap <= 0:
                    continue
                if tree[q] == _FREE:
                    tree[q] = tree[p]
                    parent[q] = 7 - k
                    if not inq[q]:
                        queue[(head + count) % n] = q
                        count += 1
                        inq[q] = True
                elif tree[q] != tree[p]:
                    found = True
                    mp = p
                    mk = k
                    break
            if found:
                break
            head = (head + 1) % n
            count -= 1
            inq[p] = False
        if not found:
            break
        if tree[mp] == _SRC:
            s_node = mp
            t_node = nbr[mp, mk]
            sk = mk
        else:
            s_node = nbr[mp, mk]
            t_node = mp
            sk = 7 - mk
        b = rcap[s_node, sk]
        node = s_node
        while parent[node] != _TERM:
            a = parent[node]
            pn = nbr[node, a]
            if rcap[pn, 7 - a] < b:
                b = rcap[pn, 7 - a]
            node = pn
        if tr[node] < b:
            b = tr[node]
        node = t_node
        while parent[node] != _TERM:
            a = parent[node]
            if rcap[node, a] < b:
                b = rcap[node, a]
            node = nbr[node, a]
        if -tr[node] < b:
            b = -tr[node]
        rcap[s_node, sk] -= b
        rcap[t_node, 7 - sk] += b
        node = s_node
        while parent[node] != _TERM:
            a = parent[node]
            pn = nbr[node, a]
            rcap[pn, 7 - a] -= b
            rcap[node, a] += b
            if rcap[pn, 7 - a] <= 0:
                parent[node] = _NONE
                orphans[n_orph] = node
                n_orph += 1
            node = pn
        tr[node] -= b
        if tr[node] <= 0:
            parent[node] = _NONE
            orphans[n_orph] = node
            n_orph += 1
        node = t_node
        while parent[node] != _TERM:
            a = parent[node]
            pn = nbr[node, a]
            rcap[node, a] -= b
            rcap[pn, 7 - a] += b
            if rcap[node, a] <= 0:
                parent[node] = _NONE
                orphans[n_orph] = node
                n_orph += 1
            node = pn
        tr[node] += b
        if tr[node] >= 0:
            parent[node] = _NONE
            orphans[n_orph] = node
            n_orph += 1
        flow += b
        while n_orph > 0:
            n_orph -= 1
            p = orphans[n_orph]
            t = tree[p]
            best = -1
            for k in range(8):
                q = nbr[p, k]
                if q < 0 or tree[q] != t:
                    continue
                if t == _SRC:
                    cap = rcap[q, 7 - k]
                else:
                    cap = rcap[p, k]
                if cap <= 0:
                    continue
                x = q
                ok = True
                while True:
                    px = parent[x]
                    if px == _TERM:
                        break
                    if px == _NONE:
                        ok = False
                        break
                    x = nbr[x, px]
                if ok:
                    best = k
                    break
            if best >= 0:
                parent[p] = best
                continue
            for k in range(8):
                q = nbr[p, k]
                if q < 0 or tree[q] != t:
                    continue
                if t == _SRC:
                    cap = rcap[q, 7 - k]
                else:
                    cap = rcap[p, k]
                if cap > 0 and not inq[q]:
                    queue[(head + count) % n] = q
                    count += 1
                    inq[q] = True
                pq = parent[q]
                if pq >= 0 and nbr[q, pq] == p:
                    parent[q] = _NONE
                    orphans[n_orph] = q
                    n_orph += 1
            tree[p] = _FREE
    return flow


@numba.njit(cache=True)
def _source_side(tr, rcap, nbr):
    # nodes reachable from the source in the residual graph
    n = tr.shape[0]
    seen = np.zeros(n, dtype=np.bool_)
    stack = np.empty(n, dtype=np.int64)
    top = 0
    for p in range(n):
        if tr[p] > 0:
            seen[p] = True
            stack[top] = p
            top += 1
    while top > 0:
        top -= 1
        p = stack[top]
        for k in range(8):
            q = nbr[p, k]
            if q >= 0 and not seen[q] and rcap[p, k] > 0:
                seen[q] = True
                stack[top] = q
                top += 1
    return seen


def _check_capacities(network):
    for arr in (network.source, network.sink, *network.nlinks):
        if not np.all(np.isfinite(arr)):
            raise NonFiniteWeight("network capacity is NaN or infinite")
        if np.any(arr < 0):
            raise ValueError("max-flow needs non-negative capacities")


def max_flow(network):
    """Minimum s-t cut of a grid network.

    The labeling marks the nodes reachable from the source in the final
    residual graph, which is the smallest minimum-cut source set: ties go to
    background.
    """
    _check_capacities(network)
    nbr, rcap = _grid_arrays(network)
    src = network.source.ravel().astype(float)
    snk = network.sink.ravel().astype(float)
    direct = np.minimum(src, snk)
    tr = src - snk
    flow = float(np.sum(direct)) + _bk_maxflow(tr, rcap, nbr)
    labels = _source_side(tr, rcap, nbr).reshape(network.shape)
    return CutResult(labels, flow)


def max_flow_reference(network):
    """Shortest-augmenting-path (Edmonds–Karp) solver on an explicit graph.

    Slow; meant as an independent check of :func:`max_flow` on small grids.
    """
    _check_capacities(network)
    h, w = network.shape
    S, T = "s", "t"
    cap = {}

    def add(u, v, c):
        if c <= 0:
            return
        cap.setdefault(u, {}).setdefault(v, 0.0)
        cap.setdefault(v, {}).setdefault(u, 0.0)
        cap[u][v] += c

    for i in range(h):
        for j in range(w):
            add(S, (i, j), float(network.source[i, j]))
            add((i, j), T, float(network.sink[i, j]))
    offsets = ((0, 1), (1, 0), (1, 1))
    for (di, dj), arr in zip(offsets, network.nlinks[:3]):
        for i in range(arr.shape[0]):
            for j in range(arr.shape[1]):
                c = float(arr[i, j])
                add((i, j), (i + di, j + dj), c)
                add((i + di, j + dj), (i, j), c)
    sw = network.nlinks[3]
    for i in range(sw.shape[0]):
        for j in range(sw.shape[1]):
            c = float(sw[i, j])
            add((i, j + 1), (i + 1, j), c)
            add((i + 1, j), (i, j + 1), c)

    flow = 0.0
    while True:
        prev = {S: None}
        dq = deque([S])
        while dq and T not in prev:
            u = dq.popleft()
            for v, c in cap.get(u, {}).items():
                if c > 0 and v not in prev:
                    prev[v] = u
                    dq.append(v)
        if T not in prev:
            break
        path = []
        v = T
        while prev[v] is not None:
            path.append((prev[v], v))
            v = prev[v]
        b = min(cap[u][v] for u, v in path)
        for u, v in path:
            cap[u][v] -= b
            cap[v][u] += b
        flow += b
    labels = np.zeros((h, w), dtype=bool)
    for node in prev:
        if node not in (S, T):
            labels[node] = True
    return CutResult(labels, flow)


def write_dimacs(network, path):
    """Write the network in DIMACS max-flow format (real-valued capacities).

    Pixel ``(i, j)`` is node ``i * w + j + 1``; the source and sink are the
    last two nodes.
    """
    h, w = network.shape
    n = h * w
    s, t = n + 1, n + 2
    idx = np.arange(1, n + 1).reshape(h, w)
    arcs = []
    for p, c in zip(idx.ravel(), network.source.ravel()):
        if c > 0:
            arcs.append((s, p, c))
    for p, c in zip(idx.ravel(), network.sink.ravel()):
        if c > 0:
            arcs.append((p, t, c))
    for (sa, sb, _), capa in zip(PAIRS, network.nlinks):
        for u, v, c in zip(idx[sa].ravel(), idx[sb].ravel(), capa.ravel()):
            if c > 0:
                arcs.append((u, v, c))
                arcs.append((v, u, c))
    path = Path(path)
    with open(path, "w") as fh:
        fh.write(f"c 8-connected grid {h}x{w}; energy offset {float(network.offset)!r}\n")
        fh.write(f"p max {n + 2} {len(arcs)}\n")
        fh.write(f"n {s} s\n")
        fh.write(f"n {t} t\n")
        for u, v, c in arcs:
            fh.write(f"a {u} {v} {float(c)!r}\n")
    return path
