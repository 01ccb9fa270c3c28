"""Patch pools and context/target selection.

Three pool builders (seeded random walks, balanced BFS blocks with
cut-reducing refinement, deterministic motif fragmentation) all satisfy
the same contract: every node and every directed edge of the graph lands
in at least one patch, and patches are reversal-closed induced subgraphs.
Selection then picks target patches and unions disjoint pool patches into
a context, never letting a pool patch serve both roles.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field

from .errors import SelectionInfeasible, SizeOutOfRange, TooManyParts
from .polymer import PolymerGraph
from .rng import derive_seed, make_rng

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Patch:
    node_ids: tuple[int, ...]
    edge_ids: tuple[int, ...]

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)


@dataclass
class PatchSelection:
    context: Patch
    targets: list[Patch]
    source_patch_ids: list[int]
    target_patch_ids: list[int]
    meta: dict = field(default_factory=dict)


def induced_patch(g: PolymerGraph, node_ids) -> Patch:
    """Patch over node_ids with all induced directed edges (reversal-closed)."""
    members = set(int(i) for i in node_ids)
    edges = tuple(
        k for k, e in enumerate(g.edges) if e.src in members and e.dst in members
    )
    return Patch(node_ids=tuple(sorted(members)), edge_ids=edges)


def epoch_seed(run_seed: int, epoch: int, graph_id: str) -> int:
    """Per-epoch, per-graph selection seed so patches change every loop."""
    return derive_seed("epoch-selection", run_seed, epoch, graph_id)


def _grow_by_walk(start_nodes, size, adjacency, rng):
    """Random walk from start_nodes until `size` distinct nodes are gathered.

    When the walk stalls it restarts from a visited node that still has an
    unvisited neighbor; if none exists the component is exhausted.
    """
    nodes = set(start_nodes)
    current = start_nodes[-1]
    stall = 0
    limit = 4 * max(8, len(adjacency))
    while len(nodes) < size:
        nbrs = adjacency[current]
        if nbrs:
            nxt = nbrs[int(rng.integers(len(nbrs)))]
            if nxt in nodes:
                stall += 1
            else:
                nodes.add(nxt)
                stall = 0
            current = nxt
        else:
            stall = limit + 1
        if stall > limit:
            frontier = sorted(
                v for v in nodes if any(u not in nodes for u in adjacency[v])
            )
            if not frontier:
                break
            current = frontier[int(rng.integers(len(frontier)))]
            stall = 0
    return nodes


def _coverage_gaps(g: PolymerGraph, patches):
    node_cover = set()
    for p in patches:
        node_cover.update(p.node_ids)
    pair_cover = set()
    for p in patches:
        members = set(p.node_ids)
        for u in members:
            pair_cover.update((u, v) for v in members)
    missing_nodes = sorted(set(range(g.n_nodes)) - node_cover)
    missing_pairs = sorted(
        {(min(e.src, e.dst), max(e.src, e.dst)) for e in g.edges}
        - {(u, v) for u, v in pair_cover if u < v}
    )
    return missing_nodes, missing_pairs


def random_walk_patches(g: PolymerGraph, size_frac: float, count: int, seed) -> list[Patch]:
    """`count` seeded random-walk patches of ceil(size_frac * N) nodes each,
    topped up with extra patches until nodes and edges are fully covered."""
    if not 0.0 < size_frac <= 1.0:
        raise SizeOutOfRange(f"size_frac must be in (0, 1], got {size_frac}")
    if count < 1:
        raise SizeOutOfRange(f"count must be >= 1, got {count}")
    n = g.n_nodes
    size = math.ceil(size_frac * n)
    adjacency = g.neighbors()
    rng = make_rng("rw-patches", seed)

    patches = []
    for _ in range(count):
        start = int(rng.integers(n))
        patches.append(induced_patch(g, _grow_by_walk([start], size, adjacency, rng)))

    # Top-up for requirement coverage: first uncovered edges, then nodes.
    topup_size = max(size, 2)
    guard = 0
    while guard < 4 * n * n:
        guard += 1
        missing_nodes, missing_pairs = _coverage_gaps(g, patches)
        if missing_pairs:
            u, v = missing_pairs[0]
            patches.append(induced_patch(g, _grow_by_walk([u, v], topup_size, adjacency, rng)))
        elif missing_nodes:
            v = missing_nodes[0]
            patches.append(induced_patch(g, _grow_by_walk([v], size, adjacency, rng)))
        else:
            break
    return patches


def _undirected_weights(g: PolymerGraph):
    return {(u, v): w for u, v, w in g.undirected_edges()}


def partition_cut(g: PolymerGraph, assignment) -> float:
    """Weighted cut of a node->block assignment (undirected edge weights)."""
    return sum(
        w
        for (u, v), w in _undirected_weights(g).items()
        if assignment[u] != assignment[v]
    )


def _bfs_distances(adjacency, start):
    dist = {start: 0}
    queue = deque([start])
    while queue:
        v = queue.popleft()
        for u in adjacency[v]:
            if u not in dist:
                dist[u] = dist[v] + 1
                queue.append(u)
    return dist


def metis_like_assignment(g: PolymerGraph, k: int) -> list[int]:
    """Disjoint node-to-block map: balanced BFS growth from spread-out seeds,
    then boundary moves while they reduce the weighted edge cut."""
    n = g.n_nodes
    if not 1 <= k <= n:
        raise TooManyParts(f"need 1 <= k <= {n}, got {k}")
    adjacency = g.neighbors()

    # Farthest-point seeds, then one claimed neighbor per block per round.
    seeds = [0]
    while len(seeds) < k:
        best, best_d = None, -1
        for v in range(n):
            if v in seeds:
                continue
            d = min(
                (_bfs_distances(adjacency, s).get(v, n + 1) for s in seeds),
            )
            if d > best_d:
                best, best_d = v, d
        seeds.append(best)

    assignment = [-1] * n
    for b, s in enumerate(seeds):
        assignment[s] = b
    while any(a < 0 for a in assignment):
        claimed = False
        for b in range(k):
            members = [v for v in range(n) if assignment[v] == b]
            candidates = sorted(
                u for v in members for u in adjacency[v] if assignment[u] < 0
            )
            if candidates:
                assignment[candidates[0]] = b
                claimed = True
        if not claimed:
            orphan = min(v for v in range(n) if assignment[v] < 0)
            sizes = [sum(1 for a in assignment if a == b) for b in range(k)]
            assignment[orphan] = sizes.index(min(sizes))

    # Boundary-swap refinement: move a node when it strictly reduces the cut.
    weights = _undirected_weights(g)

    def weight_to_block(v, block):
        total = 0.0
        for u in adjacency[v]:
            if assignment[u] == block and u != v:
                total += weights[(min(u, v), max(u, v))]
        return total

    for _ in range(20):
        improved = False
        for v in range(n):
            own = assignment[v]
            if sum(1 for a in assignment if a == own) <= 1:
                continue
            internal = weight_to_block(v, own)
            options = sorted({assignment[u] for u in adjacency[v]} - {own})
            for cand in options:
                gain = weight_to_block(v, cand) - internal
                if gain > 1e-12:
                    assignment[v] = cand
                    improved = True
                    break
        if not improved:
            break
    return assignment


def metis_like_patches(g: PolymerGraph, k: int) -> list[Patch]:
    """Patches from the refined disjoint blocks, extended so every cut edge
    lives (with both endpoints) in exactly one incident patch."""
    assignment = metis_like_assignment(g, k)
    blocks = [set() for _ in range(max(assignment) + 1)]
    for v, b in enumerate(assignment):
        blocks[b].add(v)
    blocks = [b for b in blocks if b]

    owner_of = {}
    for b in blocks:
        for v in b:
            owner_of[v] = b

    # Edge coverage: each cut edge joins the patch of its smaller endpoint.
    for (u, v), _w in sorted(_undirected_weights(g).items()):
        if assignment[u] != assignment[v]:
            owner_of[u].add(v)

    return [induced_patch(g, b) for b in blocks]


HETEROATOMS = {"N", "O", "S", "P", "B", "F", "Cl", "Br", "I"}


def _bridges(n, pairs):
    """Undirected bridge edges via iterative lowpoint search."""
    adjacency = {v: [] for v in range(n)}
    for idx, (u, v) in enumerate(pairs):
        adjacency[u].append((v, idx))
        adjacency[v].append((u, idx))
    visited = [False] * n
    disc = [0] * n
    low = [0] * n
    bridges = set()
    timer = 0
    for root in range(n):
        if visited[root]:
            continue
        stack = [(root, -1, iter(adjacency[root]))]
        visited[root] = True
        disc[root] = low[root] = timer = timer + 1
        while stack:
            v, parent_edge, it = stack[-1]
            advanced = False
            for u, idx in it:
                if idx == parent_edge:
                    continue
                if not visited[u]:
                    visited[u] = True
                    timer += 1
                    disc[u] = low[u] = timer
                    stack.append((u, idx, iter(adjacency[u])))
                    advanced = True
                    break
                low[v] = min(low[v], disc[u])
            if not advanced:
                stack.pop()
                if stack:
                    pv = stack[-1][0]
                    low[pv] = min(low[pv], low[v])
                    if low[v] > disc[pv]:
                        bridges.add(pairs[parent_edge])
    return bridges


def motif_patches(g: PolymerGraph) -> list[Patch]:
    """Deterministic fragmentation along chemically meaningful cut bonds.

    Cuts: stochastic edges; acyclic single bonds touching exactly one
    aromatic-or-ring atom; acyclic single carbon-heteroatom bonds.
    Components of the remainder become patches, and every cut edge is
    re-attached to the patch of its smaller endpoint.
    """
    n = g.n_nodes
    pair_info = {}
    for e in g.edges:
        key = (min(e.src, e.dst), max(e.src, e.dst))
        pair_info.setdefault(key, (e.bond_order, e.stochastic))
    pairs = sorted(pair_info)
    bridges = _bridges(n, pairs)
    ring_atoms = set()
    for (u, v) in pairs:
        if (u, v) not in bridges:
            ring_atoms.add(u)
            ring_atoms.add(v)

    def in_ring_or_aromatic(v):
        return g.nodes[v].aromatic or v in ring_atoms

    cut = set()
    for key in pairs:
        order, stochastic = pair_info[key]
        if stochastic:
            cut.add(key)
            continue
        if key not in bridges or order != 1:
            continue
        u, v = key
        if in_ring_or_aromatic(u) != in_ring_or_aromatic(v):
            cut.add(key)
        elif (g.nodes[u].element == "C") != (g.nodes[v].element == "C"):
            cut.add(key)

    adjacency = {v: [] for v in range(n)}
    for (u, v) in pairs:
        if (u, v) not in cut:
            adjacency[u].append(v)
            adjacency[v].append(u)
    component = [-1] * n
    parts = []
    for v in range(n):
        if component[v] >= 0:
            continue
        comp = set()
        queue = deque([v])
        component[v] = len(parts)
        while queue:
            w = queue.popleft()
            comp.add(w)
            for u in adjacency[w]:
                if component[u] < 0:
                    component[u] = len(parts)
                    queue.append(u)
        parts.append(comp)

    for (u, v) in sorted(cut):
        parts[component[u]].add(v)

    return [induced_patch(g, part) for part in parts]


def select_context_and_targets(
    patches,
    g: PolymerGraph,
    context_frac: float,
    target_frac: float,
    m: int,
    seed,
    max_attempts: int = 50,
) -> PatchSelection:
    """Sample m target patches of ceil(target_frac * N) nodes and union
    non-target pool patches into a context of >= context_frac * N nodes.

    The context must contain nodes of both monomers; pool patches backing
    the context are disjoint from those backing targets. Fails with
    SelectionInfeasible after `max_attempts` resamples.
    """
    if m < 1:
        raise SizeOutOfRange(f"m must be >= 1, got {m}")
    if not 0.0 < target_frac <= context_frac <= 1.0:
        raise SizeOutOfRange(
            f"need 0 < target_frac <= context_frac <= 1, got {target_frac}, {context_frac}"
        )
    patches = list(patches)
    n = g.n_nodes
    n_target = math.ceil(target_frac * n)
    n_context = math.ceil(context_frac * n)
    adjacency = g.neighbors()
    monomers = {node.monomer_id for node in g.nodes}
    reason = "no feasible selection"

    if len(patches) <= m:
        raise SelectionInfeasible(
            f"pool has {len(patches)} patches; need more than m={m}"
        )

    for attempt in range(max_attempts):
        rng = make_rng("selection", seed, attempt)
        target_ids = sorted(rng.choice(len(patches), size=m, replace=False).tolist())
        targets = []
        for tid in target_ids:
            base = set(patches[tid].node_ids)
            if len(base) > n_target:
                start = sorted(base)[int(rng.integers(len(base)))]
                inner = {v: sorted(u for u in adjacency[v] if u in base) for v in base}
                resized = _grow_by_walk([start], n_target, inner, rng)
            elif len(base) < n_target:
                resized = _grow_by_walk(sorted(base), n_target, adjacency, rng)
            else:
                resized = base
            targets.append(induced_patch(g, resized))

        pool_ids = [i for i in range(len(patches)) if i not in target_ids]
        order = rng.permutation(len(pool_ids))
        context_nodes: set[int] = set()
        used = []
        for j in order:
            pid = pool_ids[int(j)]
            context_nodes.update(patches[pid].node_ids)
            used.append(pid)
            if len(context_nodes) >= n_context:
                break

        short = len(context_nodes) < n_context
        present = {g.nodes[v].monomer_id for v in context_nodes}
        if present != monomers or len(monomers) < 2:
            remaining = [pid for pid in pool_ids if pid not in used]
            for pid in remaining:
                extra = {g.nodes[v].monomer_id for v in patches[pid].node_ids}
                if extra - present:
                    context_nodes.update(patches[pid].node_ids)
                    used.append(pid)
                    present = {g.nodes[v].monomer_id for v in context_nodes}
                if present == monomers and len(monomers) == 2:
                    break
        if len(monomers) < 2 or present != monomers:
            reason = "context cannot contain both monomers"
            continue
        if not context_nodes or len(context_nodes) < n_target:
            reason = "context smaller than targets"
            continue
        if short:
            log.warning(
                "context reached only %d of %d nodes without target patches",
                len(context_nodes),
                n_context,
            )
        return PatchSelection(
            context=induced_patch(g, context_nodes),
            targets=targets,
            source_patch_ids=sorted(used),
            target_patch_ids=target_ids,
            meta={"context_short": short, "attempt": attempt},
        )

    raise SelectionInfeasible(reason)


POOL_ALGORITHMS = ("random_walk", "metis", "motif")


def make_pool(g: PolymerGraph, algorithm: str, target_frac: float, m: int, seed) -> list[Patch]:
    """Build a patch pool sized so selection can form both targets and context."""
    if algorithm == "random_walk":
        count = math.ceil(1.0 / target_frac) + m + 2
        return random_walk_patches(g, target_frac, count, seed)
    if algorithm == "metis":
        k = min(g.n_nodes, max(m + 2, round(1.0 / target_frac)))
        return metis_like_patches(g, k)
    if algorithm == "motif":
        return motif_patches(g)
    raise SizeOutOfRange(f"unknown subgraphing algorithm {algorithm!r}")
