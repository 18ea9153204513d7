"""Trip-completion experiments on damaged road networks.

A network is an undirected graph whose edges are the hazard components
(edge k is component k).  Replicated failure patterns come either from
the fitted latent-Gaussian surrogate (correlated mode) or from
independent Bernoulli draws with the same per-edge means (isolating the
correlation effect); each replicate removes the failed edges, computes
connectivity with a union-find pass, and scores the fraction of
origin-destination pairs that still have a route.
"""

import csv
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from ._rng import spawn_rng, spawn_seed
from .dg import fit_dg, sample_dg
from .errors import DimensionError, InputFormatError
from .hazard import Site, build_constraints, load_sites, midpoint_sites, save_sites

HIST_BINS = 50


@dataclass(frozen=True)
class RoadNetwork:
    """Undirected graph; edge list order defines the component indexing."""

    nodes: tuple
    edges: tuple  # ((node_id, node_id), ...)
    node_index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        ids = [s.id for s in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("node ids must be unique")
        index = {s.id: k for k, s in enumerate(self.nodes)}
        for u, v in self.edges:
            if u not in index or v not in index:
                raise ValueError(f"edge ({u}, {v}) references unknown node")
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple((u, v) for u, v in self.edges))
        object.__setattr__(self, "node_index", index)

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_edges(self):
        return len(self.edges)

    def edge_endpoints(self):
        """(m, 2) array of node positions for each edge."""
        return np.array(
            [[self.node_index[u], self.node_index[v]] for u, v in self.edges],
            dtype=np.intp,
        ).reshape(-1, 2)

    def component_sites(self, policy="midpoint"):
        """Hazard component locations, one per edge (midpoint by default)."""
        return midpoint_sites(self.nodes, self.edges, policy)


def make_grid(n_rows, n_cols, spacing_km=1.0, origin=(0.0, 0.0)):
    """Planar grid network with horizontal and vertical unit links."""
    if n_rows < 1 or n_cols < 1:
        raise ValueError("grid must have at least one row and column")
    nodes = []
    for r in range(n_rows):
        for c in range(n_cols):
            nodes.append(Site(
                f"n{r}-{c}",
                origin[0] + c * spacing_km,
                origin[1] + r * spacing_km,
                "planar",
            ))
    edges = []
    for r in range(n_rows):
        for c in range(n_cols):
            if c + 1 < n_cols:
                edges.append((f"n{r}-{c}", f"n{r}-{c + 1}"))
            if r + 1 < n_rows:
                edges.append((f"n{r}-{c}", f"n{r + 1}-{c}"))
    return RoadNetwork(tuple(nodes), tuple(edges))


@dataclass(frozen=True)
class IPFResult:
    matrix: np.ndarray
    iterations: int
    final_error: float


def ipf_adjust(init, target_o, target_d, eps0=1e-6, max_iters=10_000):
    """Iterative proportional fitting of a seed matrix to row/column targets.

    Each iteration rescales columns to the destination targets, then rows
    to the origin targets, and measures the column-sum error
    eps = sum_j |target_D_j - sum_i OD_ij|; iteration stops when
    eps <= eps0.  After the final row adjustment row sums match the origin
    targets exactly.  Inconsistent marginals (sum O != sum D) would make
    the loop oscillate, so the destination targets are rescaled to the
    origin total with a warning.  Structural zeros of the seed are
    preserved; a zero row or column with a nonzero target is an error.
    """
    od = np.array(init, dtype=np.float64)
    if od.ndim != 2:
        raise DimensionError("seed matrix must be 2-D")
    if np.any(od < 0.0):
        raise ValueError("seed matrix entries must be nonnegative")
    target_o = np.asarray(target_o, dtype=np.float64).reshape(-1)
    target_d = np.asarray(target_d, dtype=np.float64).reshape(-1)
    if target_o.size != od.shape[0] or target_d.size != od.shape[1]:
        raise DimensionError("target lengths must match the seed matrix shape")
    if np.any(target_o < 0.0) or np.any(target_d < 0.0):
        raise ValueError("targets must be nonnegative")

    total_o, total_d = target_o.sum(), target_d.sum()
    if total_o <= 0.0:
        raise ValueError("origin targets must not all be zero")
    if abs(total_o - total_d) > 1e-9 * max(total_o, total_d):
        warnings.warn(
            f"inconsistent marginals (sum O = {total_o:.10g}, "
            f"sum D = {total_d:.10g}); destination targets rescaled",
            stacklevel=2,
        )
        target_d = target_d * (total_o / total_d)

    col_sums = od.sum(axis=0)
    row_sums = od.sum(axis=1)
    if np.any((col_sums == 0.0) & (target_d > 0.0)):
        raise ValueError("zero seed column with nonzero destination target")
    if np.any((row_sums == 0.0) & (target_o > 0.0)):
        raise ValueError("zero seed row with nonzero origin target")

    err = float("inf")
    for it in range(1, max_iters + 1):
        col_sums = od.sum(axis=0)
        scale = np.divide(target_d, col_sums,
                          out=np.zeros_like(target_d), where=col_sums > 0.0)
        od *= scale[None, :]
        row_sums = od.sum(axis=1)
        scale = np.divide(target_o, row_sums,
                          out=np.zeros_like(target_o), where=row_sums > 0.0)
        od *= scale[:, None]
        err = float(np.abs(target_d - od.sum(axis=0)).sum())
        if err <= eps0:
            return IPFResult(od, it, err)
    warnings.warn(
        f"IPF stopped at max_iters={max_iters} with error {err:.3e}",
        stacklevel=2,
    )
    return IPFResult(od, max_iters, err)


@dataclass(frozen=True)
class ODMatrix:
    """Zone-level demand matrix plus the node-to-zone assignment."""

    zones: tuple
    demand: np.ndarray
    zone_map: dict  # node id -> zone id

    def __post_init__(self):
        demand = np.asarray(self.demand, dtype=np.float64)
        nz = len(self.zones)
        if demand.shape != (nz, nz):
            raise DimensionError(
                f"demand must be {nz}x{nz}, got {demand.shape}"
            )
        if np.any(demand < 0.0):
            raise ValueError("demand entries must be nonnegative")
        zone_set = set(self.zones)
        for node, zone in self.zone_map.items():
            if zone not in zone_set:
                raise ValueError(f"node {node} mapped to unknown zone {zone}")
        d = np.array(demand)
        d.setflags(write=False)
        object.__setattr__(self, "zones", tuple(self.zones))
        object.__setattr__(self, "demand", d)
        object.__setattr__(self, "zone_map", dict(self.zone_map))


@dataclass(frozen=True)
class ODPairs:
    """Node-level origin/destination pairs with demand weights."""

    origins: np.ndarray
    destinations: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.origins, dtype=np.intp)
        d = np.asarray(self.destinations, dtype=np.intp)
        w = np.asarray(self.weights, dtype=np.float64)
        if not (o.shape == d.shape == w.shape) or o.ndim != 1 or o.size == 0:
            raise DimensionError("pairs must be non-empty aligned 1-D arrays")
        if np.any(w < 0.0):
            raise ValueError("pair weights must be nonnegative")
        for a in (o, d, w):
            a.setflags(write=False)
        object.__setattr__(self, "origins", o)
        object.__setattr__(self, "destinations", d)
        object.__setattr__(self, "weights", w)

    @property
    def n_pairs(self):
        return self.origins.size


def all_pairs(network, max_nodes=None):
    """Every ordered node pair with unit weight (testing convenience)."""
    n = network.n_nodes
    if max_nodes is not None and n > max_nodes:
        raise DimensionError(f"{n} nodes exceeds max_nodes={max_nodes}")
    o, d = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    keep = o != d
    return ODPairs(o[keep], d[keep], np.ones(int(keep.sum())))


def od_pairs_from_matrix(od, network, policy="centroid"):
    """Expand zone-level demand into node-level OD pairs.

    Each zone is represented by the member node nearest to the zone's
    coordinate centroid; every positive zone-pair demand becomes one node
    pair with the demand as weight.  Pairs whose zones share the
    representative node (including the matrix diagonal) count as completed
    by definition and are flagged with a warning.
    """
    if policy != "centroid":
        raise ValueError("only the centroid representative policy is available")
    members = {z: [] for z in od.zones}
    for node_id, zone in od.zone_map.items():
        if node_id not in network.node_index:
            raise DimensionError(f"zone map references unknown node {node_id}")
        members[zone].append(node_id)
    rep = {}
    for zone, ids in members.items():
        if not ids:
            raise DimensionError(f"zone {zone} contains no nodes")
        sites = [network.nodes[network.node_index[i]] for i in sorted(ids)]
        cx = np.mean([s.x for s in sites])
        cy = np.mean([s.y for s in sites])
        dist = [(s.x - cx) ** 2 + (s.y - cy) ** 2 for s in sites]
        rep[zone] = network.node_index[sites[int(np.argmin(dist))].id]

    origins, dests, weights = [], [], []
    degenerate = 0
    for a, za in enumerate(od.zones):
        for b, zb in enumerate(od.zones):
            w = od.demand[a, b]
            if w <= 0.0:
                continue
            if rep[za] == rep[zb]:
                degenerate += 1
            origins.append(rep[za])
            dests.append(rep[zb])
            weights.append(w)
    if degenerate:
        warnings.warn(
            f"{degenerate} OD pair(s) map to a single node and always count "
            "as completed",
            stacklevel=2,
        )
    return ODPairs(np.array(origins), np.array(dests), np.array(weights))


def sample_failures(model, network, n_reps, seed):
    """Replicated link-failure indicators from the fitted surrogate."""
    if model.dimension != network.n_edges:
        raise DimensionError(
            f"model dimension {model.dimension} does not match "
            f"{network.n_edges} edges"
        )
    return sample_dg(model, n_reps, seed)


class _DisjointSet:
    __slots__ = ("parent",)

    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        parent = self.parent
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def _component_roots(network, alive_mask, endpoints):
    dsu = _DisjointSet(network.n_nodes)
    for k in np.flatnonzero(alive_mask):
        dsu.union(endpoints[k, 0], endpoints[k, 1])
    return np.array([dsu.find(i) for i in range(network.n_nodes)])


def trip_completion(network, failed, pairs, weighted=True):
    """Completion and removal rates for one failure pattern.

    Connectivity is evaluated on the surviving subgraph by union-find;
    a pair is completed when its endpoints share a component (pairs with
    origin == destination count as completed).  The completion rate is
    the demand-weighted fraction of completed pairs (set ``weighted``
    False for the plain count fraction); the removal rate is the fraction
    of failed links.
    """
    failed = np.asarray(failed)
    if failed.shape != (network.n_edges,):
        raise DimensionError(
            f"failure vector length {failed.shape} does not match "
            f"{network.n_edges} edges"
        )
    if pairs.n_pairs == 0:
        raise DimensionError("need at least one OD pair")
    alive = failed == 0
    roots = _component_roots(network, alive, network.edge_endpoints())
    done = roots[pairs.origins] == roots[pairs.destinations]
    if weighted:
        total = pairs.weights.sum()
        completion = float(pairs.weights[done].sum() / total) if total > 0 else 0.0
    else:
        completion = float(done.mean())
    removal = float(np.count_nonzero(failed) / network.n_edges)
    return completion, removal


@dataclass(frozen=True)
class TripExperimentResult:
    """Per-replicate (removal, completion) rates for one magnitude/mode."""

    magnitude: float
    mode: str  # correlated | independent
    removal_rates: np.ndarray
    completion_rates: np.ndarray

    def histogram(self, bins=HIST_BINS):
        """2-D histogram of (removal, completion) on the fixed [0,1]^2 grid."""
        counts, xe, ye = np.histogram2d(
            self.removal_rates, self.completion_rates,
            bins=bins, range=[[0.0, 1.0], [0.0, 1.0]],
        )
        return counts, xe, ye


def phase_experiment(network, pairs, scenario, magnitudes, n_reps, seed,
                     mode="correlated", weighted=True, site_policy="midpoint"):
    """Joint (removal rate, completion rate) distribution across magnitudes.

    For each magnitude the hazard constraints are rebuilt at that
    magnitude; correlated mode samples the fitted latent-Gaussian
    surrogate while independent mode draws Bernoulli links with the same
    means (same marginals, no coupling).  Returns one
    TripExperimentResult per (magnitude, mode) in scan order.
    """
    if mode not in ("correlated", "independent", "both"):
        raise ValueError("mode must be correlated, independent or both")
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")
    modes = ("correlated", "independent") if mode == "both" else (mode,)
    comp_sites = network.component_sites(site_policy)
    results = []
    for mag in magnitudes:
        scen = replace(scenario, magnitude=float(mag))
        constraints = build_constraints(comp_sites, scen)
        for m in modes:
            rep_seed = spawn_seed(seed, "phase", f"{float(mag):.6f}", m)
            if m == "correlated":
                dg_model = fit_dg(constraints)
                failures = sample_failures(dg_model, network, n_reps, rep_seed)
            else:
                rng = spawn_rng(rep_seed, "independent")
                failures = (
                    rng.random((n_reps, network.n_edges)) < constraints.means
                ).astype(np.uint8)
            completion = np.empty(n_reps)
            removal = np.empty(n_reps)
            for r in range(n_reps):
                completion[r], removal[r] = trip_completion(
                    network, failures[r], pairs, weighted=weighted
                )
            results.append(TripExperimentResult(
                float(mag), m, removal, completion
            ))
    return results


def save_network(network, edges_path, nodes_path):
    """Edge list CSV (u, v) plus the shared sites CSV for coordinates."""
    save_sites(list(network.nodes), nodes_path)
    with open(edges_path, "w") as fh:
        fh.write("u,v\n")
        for u, v in network.edges:
            fh.write(f"{u},{v}\n")


def load_network(edges_path, nodes_path):
    nodes = load_sites(nodes_path)
    edges = []
    with open(edges_path) as fh:
        header = fh.readline().strip()
        if header != "u,v":
            raise InputFormatError(f"{edges_path}:1: expected header 'u,v'")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise InputFormatError(
                    f"{edges_path}:{lineno}: expected 2 fields"
                )
            edges.append((parts[0], parts[1]))
    try:
        return RoadNetwork(tuple(nodes), tuple(edges))
    except ValueError as exc:
        raise InputFormatError(f"{edges_path}: {exc}") from exc


def save_od_matrix(od, path):
    """Demand matrix CSV with zone ids on the first row and column."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["zone"] + list(od.zones))
        for i, z in enumerate(od.zones):
            writer.writerow([z] + ["%.17g" % v for v in od.demand[i]])


def load_od_matrix(path, zone_map):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:1] != ["zone"]:
        raise InputFormatError(f"{path}:1: expected header starting with 'zone'")
    zones = rows[0][1:]
    demand = np.zeros((len(zones), len(zones)))
    if len(rows) != len(zones) + 1:
        raise InputFormatError(f"{path}: expected {len(zones)} data rows")
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(zones) + 1 or row[0] != zones[i - 2]:
            raise InputFormatError(f"{path}:{i}: malformed row")
        demand[i - 2] = [float(v) for v in row[1:]]
    return ODMatrix(tuple(zones), demand, zone_map)


def save_zone_map(zone_map, path):
    with open(path, "w") as fh:
        fh.write("node,zone\n")
        for node in sorted(zone_map):
            fh.write(f"{node},{zone_map[node]}\n")


def load_zone_map(path):
    zone_map = {}
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "node,zone":
            raise InputFormatError(f"{path}:1: expected header 'node,zone'")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise InputFormatError(f"{path}:{lineno}: expected 2 fields")
            zone_map[parts[0]] = parts[1]
    return zone_map


def load_od_targets(path):
    """Targets CSV (zone, target_O, target_D) for the IPF command."""
    zones, target_o, target_d = [], [], []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "zone,target_O,target_D":
            raise InputFormatError(
                f"{path}:1: expected header 'zone,target_O,target_D'"
            )
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise InputFormatError(f"{path}:{lineno}: expected 3 fields")
            zones.append(parts[0])
            try:
                target_o.append(float(parts[1]))
                target_d.append(float(parts[2]))
            except ValueError as exc:
                raise InputFormatError(f"{path}:{lineno}: {exc}") from exc
    return zones, np.array(target_o), np.array(target_d)
