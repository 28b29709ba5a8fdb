"""Maximum-weight independent set over conflict graphs.

Exact branch-and-bound solver in bitmask form, a brute-force oracle for
small instances, and a greedy fallback for instances past the exact
size cap.  Ties in total weight resolve to the lexicographically
smallest sorted vertex tuple, so all solvers are deterministic and
directly comparable.

The exact solver splits the graph into connected components and bounds
each search node by a greedy clique cover (at most one vertex per
clique can be independent), which keeps the search tractable on
association graphs whose dominant structure is per-track cliques.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

from .errors import SizeLimit

EXACT_VERTEX_CAP = 500
BRUTE_FORCE_CAP = 20


DEFAULT_NODE_BUDGET = 2_000_000


@dataclass(frozen=True)
class MwisSolution:
    vertices: Tuple[int, ...]  # sorted ascending
    total_weight: float
    exact: bool = True


def _mask_vertices(mask: int) -> Tuple[int, ...]:
    out: List[int] = []
    while mask:
        low = mask & -mask
        out.append(low.bit_length() - 1)
        mask ^= low
    return tuple(out)


def _greedy_set(weights: Sequence[float], adjacency: Sequence[int]) -> Tuple[int, float]:
    """Greedy independent set by descending weight; returns (mask, weight)."""
    order = sorted(range(len(weights)), key=lambda v: (-weights[v], v))
    taken = 0
    blocked = 0
    total = 0.0
    for v in order:
        bit = 1 << v
        if blocked & bit:
            continue
        taken |= bit
        blocked |= bit | adjacency[v]
        total += weights[v]
    return taken, total


def _components(n: int, adj: Sequence[int]) -> List[List[int]]:
    seen = [False] * n
    comps: List[List[int]] = []
    for s in range(n):
        if seen[s]:
            continue
        seen[s] = True
        stack = [s]
        members = []
        while stack:
            v = stack.pop()
            members.append(v)
            m = adj[v]
            while m:
                low = m & -m
                u = low.bit_length() - 1
                m ^= low
                if not seen[u]:
                    seen[u] = True
                    stack.append(u)
        comps.append(sorted(members))
    return comps


def _clique_cover(n: int, adj: Sequence[int], weights: Sequence[float]) -> List[List[int]]:
    """Greedy partition of vertices into cliques, members sorted by
    descending weight; used only as an upper bound, so any valid
    partition is safe."""
    cliques: List[List[int]] = []
    masks: List[int] = []
    for v in range(n):
        placed = False
        for i, mask in enumerate(masks):
            if mask & ~adj[v] == 0:  # v adjacent to every member
                cliques[i].append(v)
                masks[i] |= 1 << v
                placed = True
                break
        if not placed:
            cliques.append([v])
            masks.append(1 << v)
    for c in cliques:
        c.sort(key=lambda u: (-weights[u], u))
    return cliques


def _solve_component(
    weights: Sequence[float], adj: Sequence[int], node_budget: int
) -> Tuple[Tuple[int, ...], float, int]:
    """Exact search over one connected component (local vertex domain).

    Returns (vertices, weight, nodes_used); ``nodes_used`` exceeding the
    budget means the result is the incumbent (still independent, seeded
    by the greedy set) rather than a proven optimum.
    """
    n = len(weights)
    best_mask, best_weight = _greedy_set(weights, adj)
    best_tuple = _mask_vertices(best_mask)
    cliques = _clique_cover(n, adj, weights)

    def bound(available: int) -> float:
        total = 0.0
        for members in cliques:
            for u in members:
                if available >> u & 1:
                    total += weights[u]
                    break
        return total

    # Heaviest-first branching raises the incumbent quickly, which the
    # clique bound then exploits.
    order = sorted(range(n), key=lambda v: (-weights[v], v))

    full = (1 << n) - 1
    nodes = 0
    stack: List[Tuple[int, int, float]] = [(full, 0, 0.0)]
    while stack:
        nodes += 1
        if nodes > node_budget:
            break
        available, chosen, current = stack.pop()
        if available == 0:
            tup = _mask_vertices(chosen)
            if current > best_weight or (current == best_weight and tup < best_tuple):
                best_weight = current
                best_tuple = tup
            continue
        # Strict inequality keeps equal-weight branches alive so the
        # lexicographic tie-break sees every optimal set.
        if current + bound(available) < best_weight:
            continue
        for v in order:
            if available >> v & 1:
                break
        bit = 1 << v
        stack.append((available & ~bit, chosen, current))
        stack.append((available & ~bit & ~adj[v], chosen | bit, current + weights[v]))
    return best_tuple, best_weight, nodes


def solve_mwis(
    weights: Sequence[float],
    adjacency: Sequence[int],
    max_vertices: int = EXACT_VERTEX_CAP,
    node_budget: int = DEFAULT_NODE_BUDGET,
) -> MwisSolution:
    """Exact maximum-weight independent set.

    ``adjacency[v]`` is a bitmask of v's neighbours (self bit ignored).
    All weights must be positive.  Connected components are solved
    independently; per-component lexicographic minimality composes to
    the global tie-break because component vertex sets are disjoint.
    Raises ``SizeLimit`` past ``max_vertices``.  A pathological instance
    that exhausts ``node_budget`` search nodes returns the best
    independent set found with ``exact=False``.
    """
    n = len(weights)
    if n != len(adjacency):
        raise ValueError("weights and adjacency must have equal length")
    if n > max_vertices:
        raise SizeLimit(f"exact solver capped at {max_vertices} vertices, got {n}")
    if n == 0:
        return MwisSolution(vertices=(), total_weight=0.0)
    for v, w in enumerate(weights):
        if not w > 0.0:
            raise ValueError(f"vertex {v} weight must be > 0, got {w}")
    adj = [adjacency[v] & ~(1 << v) for v in range(n)]

    chosen: List[int] = []
    total = 0.0
    remaining = node_budget
    exact = True
    for members in _components(n, adj):
        local_index = {g: i for i, g in enumerate(members)}
        wl = [weights[g] for g in members]
        al = [0] * len(members)
        for i, g in enumerate(members):
            m = adj[g]
            while m:
                low = m & -m
                u = low.bit_length() - 1
                m ^= low
                al[i] |= 1 << local_index[u]
        tup, wsum, used = _solve_component(wl, al, remaining)
        if used > remaining:
            exact = False
        remaining = max(remaining - used, 0)
        chosen.extend(members[i] for i in tup)
        total += wsum
    return MwisSolution(vertices=tuple(sorted(chosen)), total_weight=total, exact=exact)


def mwis_bruteforce(weights: Sequence[float], adjacency: Sequence[int]) -> MwisSolution:
    """Subset-enumeration oracle with the same tie-break; n <= 20."""
    n = len(weights)
    if n > BRUTE_FORCE_CAP:
        raise SizeLimit(f"brute force capped at {BRUTE_FORCE_CAP} vertices, got {n}")
    adj = [adjacency[v] & ~(1 << v) for v in range(n)]
    best_weight = 0.0
    best_tuple: Tuple[int, ...] = ()
    for mask in range(1 << n):
        ok = True
        m = mask
        while m:
            low = m & -m
            v = low.bit_length() - 1
            if adj[v] & mask:
                ok = False
                break
            m ^= low
        if not ok:
            continue
        total = 0.0
        m = mask
        while m:
            low = m & -m
            total += weights[low.bit_length() - 1]
            m ^= low
        tup = _mask_vertices(mask)
        if total > best_weight or (total == best_weight and tup < best_tuple):
            best_weight = total
            best_tuple = tup
    return MwisSolution(vertices=best_tuple, total_weight=best_weight)


def greedy_mwis(weights: Sequence[float], adjacency: Sequence[int]) -> MwisSolution:
    """Greedy fallback used when an instance exceeds the exact cap."""
    adj = [adjacency[v] & ~(1 << v) for v in range(len(weights))]
    mask, total = _greedy_set(weights, adj)
    return MwisSolution(vertices=_mask_vertices(mask), total_weight=total, exact=False)
