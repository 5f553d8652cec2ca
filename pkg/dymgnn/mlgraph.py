"""
Multilayer snapshot networks.

A multilayer topology replicates n nodes across l layers. The supra adjacency
is the nl x nl block matrix holding intra-layer edges on the diagonal blocks
and interlayer edges between replicas of the same node; node i of layer k
(0-based) sits at supra index k * n + i.
"""

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from dymgnn.exceptions import ConfigException, DataException, DimensionException
from dymgnn.tensor_core import DenseMatrix, SparseBinaryMatrix, concat_rows

logger = logging.getLogger(__name__)

HEADER_FILE = 'header.txt'


def _canonical_edges(edges, n: int, layer: int) -> np.ndarray:
    array = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if array.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if array.min() < 0 or array.max() >= n:
        raise DimensionException(f"Edge endpoint out of range 0..{n - 1} in layer {layer}")
    if np.any(array[:, 0] == array[:, 1]):
        raise DimensionException(f"Self-edge in layer {layer} input")
    array = np.sort(array, axis=1)
    return np.unique(array, axis=0)


@dataclass(frozen=True, eq=False)
class MultilayerTopology:
    """Node count, layer count, canonical intra-layer edges and the supra adjacency."""

    n: int
    l: int
    intra_edges: Tuple[np.ndarray, ...]
    supra: SparseBinaryMatrix
    layer_names: Tuple[str, ...]
    _derived: Dict[str, object] = field(default_factory=dict, repr=False)

    @property
    def size(self) -> int:
        return self.n * self.l

    def supra_index(self, node: int, layer: int) -> int:
        return layer * self.n + node

    def intra_edge_count(self) -> int:
        return int(sum(edges.shape[0] for edges in self.intra_edges))


def build_supra_adjacency(intra_edges: Sequence, n: int, l: int,
                          layer_names: Optional[Sequence[str]] = None) -> MultilayerTopology:
    """
    Build a multilayer topology from per-layer undirected edge lists.

    Args:
        intra_edges: one edge list per layer, pairs of node indices in 0..n-1
        n: nodes per layer
        l: number of layers
        layer_names: optional names, defaults to layer_0, layer_1, ...

    Returns:
        MultilayerTopology with complete interlayer coupling

    Raises:
        DimensionException: wrong layer count, out-of-range endpoint or self-edge
    """
    if n < 1 or l < 1:
        raise DimensionException(f"Need n >= 1 and l >= 1, got n={n}, l={l}")
    if len(intra_edges) != l:
        raise DimensionException(f"Expected {l} edge lists, got {len(intra_edges)}")
    names = tuple(layer_names) if layer_names is not None else tuple(f"layer_{k}" for k in range(l))
    if len(names) != l:
        raise DimensionException(f"Expected {l} layer names, got {len(names)}")

    canonical = tuple(_canonical_edges(edges, n, k) for k, edges in enumerate(intra_edges))

    rows, cols = [], []
    for k, edges in enumerate(canonical):
        offset = k * n
        rows.extend([edges[:, 0] + offset, edges[:, 1] + offset])
        cols.extend([edges[:, 1] + offset, edges[:, 0] + offset])

    nodes = np.arange(n, dtype=np.int64)
    for k in range(l):
        for m in range(l):
            if k != m:
                rows.append(nodes + k * n)
                cols.append(nodes + m * n)

    supra = SparseBinaryMatrix(
        n * l, n * l,
        np.concatenate(rows) if rows else [],
        np.concatenate(cols) if cols else [],
        symmetric=True,
    )
    for edges in canonical:
        edges.setflags(write=False)
    return MultilayerTopology(n=n, l=l, intra_edges=canonical, supra=supra, layer_names=names)


def normalize_adjacency(topology: MultilayerTopology) -> SparseBinaryMatrix:
    """
    Symmetric normalization of A + I.

    Entry (i, j) is 1 / sqrt(d_i * d_j) where d counts the self-loop, so every
    diagonal entry is positive.
    """
    cached = topology._derived.get('normalized')
    if cached is not None:
        return cached

    looped = self_loop_structure(topology)
    degree = np.bincount(looped.rows, minlength=topology.size).astype(np.float64)
    weights = 1.0 / np.sqrt(degree[looped.rows] * degree[looped.cols])
    normalized = looped.with_weights(weights)
    topology._derived['normalized'] = normalized
    return normalized


def self_loop_structure(topology: MultilayerTopology) -> SparseBinaryMatrix:
    """Binary supra adjacency plus the identity (the edge set attention runs over)."""
    cached = topology._derived.get('self_loops')
    if cached is not None:
        return cached

    supra = topology.supra
    diag = np.arange(topology.size, dtype=np.int64)
    looped = SparseBinaryMatrix(
        topology.size, topology.size,
        np.concatenate([supra.rows, diag]),
        np.concatenate([supra.cols, diag]),
        symmetric=True,
    )
    topology._derived['self_loops'] = looped
    return looped


def intra_degrees(topology: MultilayerTopology) -> np.ndarray:
    """l x n array of intra-layer degrees."""
    degrees = np.zeros((topology.l, topology.n), dtype=np.int64)
    for k, edges in enumerate(topology.intra_edges):
        np.add.at(degrees[k], edges[:, 0], 1)
        np.add.at(degrees[k], edges[:, 1], 1)
    return degrees


@dataclass(frozen=True, eq=False)
class SnapshotSequence:
    """tau feature matrices (each nl x d) over one fixed multilayer topology."""

    topology: MultilayerTopology
    features: Tuple[np.ndarray, ...]
    timestamps: Tuple[str, ...]

    def __post_init__(self):
        if len(self.features) < 1:
            raise DimensionException("A snapshot sequence needs at least one snapshot")
        if len(self.timestamps) != len(self.features):
            raise DimensionException(
                f"{len(self.features)} snapshots but {len(self.timestamps)} timestamps"
            )
        frozen = []
        for t, matrix in enumerate(self.features):
            array = np.array(matrix, dtype=np.float64)
            if array.ndim != 2 or array.shape[0] != self.topology.size:
                raise DimensionException(
                    f"Snapshot {t} has shape {array.shape}, expected "
                    f"({self.topology.size}, d)"
                )
            if array.shape != np.shape(self.features[0]):
                raise DimensionException("Snapshot feature matrices differ in shape")
            array.setflags(write=False)
            frozen.append(array)
        object.__setattr__(self, 'features', tuple(frozen))
        object.__setattr__(self, 'timestamps', tuple(self.timestamps))

    @property
    def tau(self) -> int:
        return len(self.features)

    @property
    def n(self) -> int:
        return self.topology.n

    @property
    def l(self) -> int:
        return self.topology.l

    @property
    def d(self) -> int:
        return self.features[0].shape[1]

    def with_topology(self, topology: MultilayerTopology) -> 'SnapshotSequence':
        return SnapshotSequence(topology=topology, features=self.features,
                                timestamps=self.timestamps)

    def with_features(self, features: Sequence[np.ndarray]) -> 'SnapshotSequence':
        return SnapshotSequence(topology=self.topology, features=tuple(features),
                                timestamps=self.timestamps)


@dataclass(frozen=True, eq=False)
class LabeledWindow:
    """
    One training or testing sample: a snapshot sequence with a label per node.

    base_sequence keeps the un-isolated topology so isolation can be redrawn.
    """

    sequence: SnapshotSequence
    labels: np.ndarray
    node_ids: Tuple[str, ...]
    base_sequence: Optional[SnapshotSequence] = None
    index: int = 0
    area_keys: Optional[Tuple[str, ...]] = None
    company_keys: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.float64).ravel()
        if labels.shape[0] != self.sequence.n:
            raise DimensionException(
                f"{labels.shape[0]} labels for {self.sequence.n} nodes"
            )
        if len(self.node_ids) != self.sequence.n:
            raise DimensionException(
                f"{len(self.node_ids)} node ids for {self.sequence.n} nodes"
            )
        labels.setflags(write=False)
        object.__setattr__(self, 'labels', labels)
        object.__setattr__(self, 'node_ids', tuple(self.node_ids))

    @property
    def n(self) -> int:
        return self.sequence.n

    def with_sequence(self, sequence: SnapshotSequence) -> 'LabeledWindow':
        return LabeledWindow(sequence=sequence, labels=self.labels, node_ids=self.node_ids,
                             base_sequence=self.base_sequence, index=self.index,
                             area_keys=self.area_keys, company_keys=self.company_keys)


def isolation_sample(n: int, fraction: float, seed: int) -> np.ndarray:
    """
    Boolean mask of a seeded sample of floor(fraction * n) of the n nodes.

    Raises:
        ConfigException: if fraction is outside [0, 1]
    """
    if not 0.0 <= fraction <= 1.0:
        raise ConfigException(f"Isolation fraction must be in [0, 1], got {fraction}")
    chosen = np.zeros(n, dtype=bool)
    count = int(math.floor(fraction * n + 1e-9))
    if count:
        rng = np.random.default_rng(seed)
        chosen[rng.choice(n, size=count, replace=False)] = True
    return chosen


def detach_nodes(seq: SnapshotSequence, chosen: np.ndarray) -> SnapshotSequence:
    """Drop every intra-layer edge touching a chosen node; replica edges stay."""
    topology = seq.topology
    chosen = np.asarray(chosen, dtype=bool)
    if chosen.shape != (topology.n,):
        raise DimensionException(f"Isolation mask has shape {chosen.shape}, expected ({topology.n},)")
    if not chosen.any():
        return seq

    kept = []
    for edges in topology.intra_edges:
        mask = ~(chosen[edges[:, 0]] | chosen[edges[:, 1]])
        kept.append(edges[mask])

    isolated = build_supra_adjacency(kept, topology.n, topology.l, topology.layer_names)
    logger.debug(
        f"Isolated {int(chosen.sum())}/{topology.n} nodes: intra edges "
        f"{topology.intra_edge_count()} -> {isolated.intra_edge_count()}"
    )
    return seq.with_topology(isolated)


def isolate_nodes(seq: SnapshotSequence, fraction: float, seed: int) -> SnapshotSequence:
    """
    Remove every intra-layer edge incident to a seeded sample of floor(fraction * n) nodes.

    Interlayer replica edges are kept. The same sample applies to all layers
    and all snapshots of the window.

    Raises:
        ConfigException: if fraction is outside [0, 1]
    """
    return detach_nodes(seq, isolation_sample(seq.n, fraction, seed))


def replicate_features(per_node: Union[np.ndarray, DenseMatrix], l: int):
    """Stack an n x d matrix l times so row k * n + i equals row i."""
    if l < 1:
        raise DimensionException(f"Layer count must be positive, got {l}")
    if isinstance(per_node, DenseMatrix):
        return concat_rows([per_node] * l)
    array = np.asarray(per_node, dtype=np.float64)
    if array.ndim != 2:
        raise DimensionException(f"Expected an n x d matrix, got shape {array.shape}")
    return np.tile(array, (l, 1))


def validate_topology(topology: MultilayerTopology) -> List[str]:
    """
    Audit a topology.

    Returns:
        list of violation strings, each prefixed by its kind: "shape",
        "non-binary", "self-loop", "asymmetry", "replica coupling".
        Pair-level problems are reported once per unordered pair.
    """
    violations: List[str] = []
    supra = topology.supra
    n = topology.n

    if supra.shape != (topology.size, topology.size):
        violations.append(
            f"shape: supra is {supra.shape}, expected {(topology.size, topology.size)}"
        )
        return violations

    if supra.weights is not None:
        for r, c, w in zip(supra.rows, supra.cols, supra.weights):
            if w != 1.0 and r <= c:
                violations.append(f"non-binary: entry ({r}, {c}) = {w}")

    present = set(zip(supra.rows.tolist(), supra.cols.tolist()))
    for r, c in sorted(present):
        if r == c:
            violations.append(f"self-loop: entry ({r}, {r})")
            continue
        mirrored = (c, r) in present
        if not mirrored:
            violations.append(f"asymmetry: entry ({r}, {c}) has no mirror ({c}, {r})")
        if (mirrored and r > c):
            continue
        if r // n != c // n and r % n != c % n:
            violations.append(
                f"replica coupling: interlayer entry ({r}, {c}) joins node {r % n} "
                f"of layer {r // n} to node {c % n} of layer {c // n}"
            )
    return violations


def describe_network(sequence: Union[SnapshotSequence, MultilayerTopology]) -> Dict[str, object]:
    """
    Summary counts of a window's multilayer network.

    Returns:
        dict with n, l, nodes (n * l), intra_edges per layer, interlayer_edges,
        edges (all undirected edges of the union graph) and isolated (nodes
        with no intra-layer edge in any layer)
    """
    topology = sequence.topology if isinstance(sequence, SnapshotSequence) else sequence
    per_layer = {name: int(edges.shape[0])
                 for name, edges in zip(topology.layer_names, topology.intra_edges)}
    interlayer = topology.n * topology.l * (topology.l - 1) // 2
    degrees = intra_degrees(topology)
    return {
        'n': topology.n,
        'l': topology.l,
        'nodes': topology.size,
        'intra_edges': per_layer,
        'interlayer_edges': interlayer,
        'edges': sum(per_layer.values()) + interlayer,
        'isolated': int(np.sum(degrees.sum(axis=0) == 0)),
    }


def write_topology(topology: MultilayerTopology, directory: str,
                   extra: Optional[Dict[str, object]] = None):
    """
    Write header.txt and one layer_<name>.csv edge list per layer.

    extra entries are appended to the header as key = value lines.
    """
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, HEADER_FILE), 'w', encoding='utf-8') as f:
        f.write(f"n = {topology.n}\n")
        f.write(f"l = {topology.l}\n")
        f.write(f"layers = {','.join(topology.layer_names)}\n")
        for key, value in (extra or {}).items():
            f.write(f"{key} = {value}\n")
    for name, edges in zip(topology.layer_names, topology.intra_edges):
        with open(os.path.join(directory, f"layer_{name}.csv"), 'w', encoding='utf-8') as f:
            for a, b in edges.tolist():
                f.write(f"{a},{b}\n")


def read_header(directory: str) -> Dict[str, str]:
    """key = value pairs of a topology header.txt."""
    header_path = os.path.join(directory, HEADER_FILE)
    if not os.path.exists(header_path):
        raise DataException(f"Topology header not found: {header_path}")
    header: Dict[str, str] = {}
    with open(header_path, encoding='utf-8') as f:
        for line in f:
            if '=' in line:
                key, value = line.split('=', 1)
                header[key.strip()] = value.strip()
    return header


def read_topology(directory: str) -> MultilayerTopology:
    """
    Read a topology written by write_topology.

    Raises:
        DataException: missing or malformed header or edge files
    """
    header_path = os.path.join(directory, HEADER_FILE)
    header = read_header(directory)
    try:
        n = int(header['n'])
        l = int(header['l'])
        names = [name for name in header['layers'].split(',') if name]
    except (KeyError, ValueError) as e:
        raise DataException(f"Malformed topology header {header_path}: {e}")
    if not names or len(names) != l:
        raise DataException(f"Malformed topology header {header_path}: "
                            f"layers {header['layers']!r} do not name l = {l} layers")

    layers = []
    for name in names:
        path = os.path.join(directory, f"layer_{name}.csv")
        edges = []
        try:
            with open(path, encoding='utf-8') as f:
                for line_no, line in enumerate(f, start=1):
                    line = line.strip()
                    if not line:
                        continue
                    a, b = line.split(',')
                    edges.append((int(a), int(b)))
        except FileNotFoundError:
            raise DataException(f"Edge list not found: {path}")
        except ValueError:
            raise DataException(f"Malformed edge at {path}:{line_no}")
        layers.append(edges)

    return build_supra_adjacency(layers, n, l, names)
