"""Compile a core formula into an operator graph.

Nodes are temporal ("flow": always/eventually, one input) or boolean
("bridge": and/or, two inputs). Inputs are either other nodes or predicate
leaves. Nodes are numbered deepest first (ties left to right), which is a
topological order and makes the assembled constraint matrix block
lower-triangular. Each node owns ``n_steps`` consecutive STL variables.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, replace

from .formula import (Always, And, Eventually, FormulaError, Interest, Not,
                      Predicate, as_formula, desugar, kind_name,
                      validate_top)

GREEK = ("alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta",
         "iota", "kappa", "lambda", "mu", "nu", "xi", "omicron", "pi", "rho",
         "sigma", "tau", "upsilon", "phi", "chi", "psi", "omega")

FORWARD = "forward"
BACKWARD = "backward"


class GraphError(FormulaError):
    pass


@dataclass(frozen=True)
class Leaf:
    """A predicate input, possibly negated (margin sign flipped)."""

    spec: object
    negated: bool = False

    @property
    def sign(self):
        return -1.0 if self.negated else 1.0


@dataclass(frozen=True)
class Ref:
    """Input reference: ``kind`` is 'node' or 'pred', ``index`` into the list."""

    kind: str
    index: int


@dataclass(frozen=True)
class StlNode:
    id: int
    op: str                      # 'always' | 'eventually' | 'and' | 'or'
    parents: tuple               # Ref, 1 for flow nodes, 2 for bridges
    window: tuple | None = None  # (ka, kb), 0-based inclusive, flow only
    interest: Interest | None = None
    direction: str | None = None
    path: tuple = ()

    @property
    def is_flow(self):
        return self.op in ("always", "eventually")

    @property
    def combiner(self):
        return "min" if self.op in ("always", "and") else "max"

    @property
    def label(self):
        return GREEK[self.id] if self.id < len(GREEK) else f"n{self.id}"


@dataclass(frozen=True)
class StlGraph:
    nodes: tuple
    predicates: tuple   # Leaf
    root: int
    n_steps: int

    def var_range(self, node_id):
        """Slice of node ``node_id``'s variables in the stacked STL vector."""
        return slice(node_id * self.n_steps, (node_id + 1) * self.n_steps)

    @property
    def n_vars(self):
        return len(self.nodes) * self.n_steps

    def node_at(self, path):
        for node in self.nodes:
            if node.path == path:
                return node
        raise KeyError(path)

    def to_dict(self):
        preds = [{"index": i, "text": leaf.spec.name, "negated": leaf.negated}
                 for i, leaf in enumerate(self.predicates)]
        nodes = []
        for node in self.nodes:
            nodes.append({
                "id": node.id,
                "label": node.label,
                "op": node.op,
                "kind": "flow" if node.is_flow else "bridge",
                "window": list(node.window) if node.window else None,
                "interest": node.interest.value if node.interest else None,
                "direction": node.direction,
                "parents": [{"kind": p.kind, "index": p.index} for p in node.parents],
                "var_range": [node.id * self.n_steps, (node.id + 1) * self.n_steps],
            })
        edges = [{"from": f"{p.kind}:{p.index}", "to": f"node:{node.id}"}
                 for node in self.nodes for p in node.parents]
        return {"n_steps": self.n_steps, "root": self.root, "nodes": nodes,
                "predicates": preds, "edges": edges}

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def _walk(f, depth, path, out):
    """Collect operator occurrences as (depth, preorder, path, formula)."""
    if isinstance(f, (Predicate, Not)):
        return
    out.append((depth, len(out), path, f))
    if isinstance(f, (Always, Eventually)):
        _walk(f.child, depth + 1, path + (0,), out)
    else:
        _walk(f.left, depth + 1, path + (0,), out)
        _walk(f.right, depth + 1, path + (1,), out)


def compile(f, n_steps, max_depth=32):
    """Build the operator graph of ``f`` on an ``n_steps`` grid."""
    f = desugar(as_formula(f))
    validate_top(f)
    if n_steps < 2:
        raise GraphError("n_steps must be >= 2")
    occ = []
    _walk(f, 0, (), occ)
    deepest = max(d for d, *_ in occ)
    if deepest + 1 > max_depth:
        raise GraphError(f"formula depth {deepest + 1} exceeds limit {max_depth}")
    occ.sort(key=lambda item: (-item[0], item[1]))
    id_of = {path: i for i, (_, _, path, _) in enumerate(occ)}

    leaves = []

    def ref(child, path):
        if isinstance(child, (Predicate, Not)):
            leaf = Leaf(child.child.spec, True) if isinstance(child, Not) \
                else Leaf(child.spec, False)
            if leaf not in leaves:
                leaves.append(leaf)
            return Ref("pred", leaves.index(leaf))
        return Ref("node", id_of[path])

    nodes = []
    for i, (_, _, path, g) in enumerate(occ):
        if isinstance(g, (Always, Eventually)):
            window = g.interval.resolve(n_steps)
            op = "always" if isinstance(g, Always) else "eventually"
            parents = (ref(g.child, path + (0,)),)
            nodes.append(StlNode(i, op, parents, window, g.interest, path=path))
        else:
            op = "and" if isinstance(g, And) else "or"
            parents = (ref(g.left, path + (0,)), ref(g.right, path + (1,)))
            nodes.append(StlNode(i, op, parents, path=path))
    graph = StlGraph(tuple(nodes), tuple(leaves), len(nodes) - 1, n_steps)
    if not graph.nodes[graph.root].is_flow:  # pragma: no cover
        raise GraphError(f"root is {kind_name(f)}")
    return assign_directions(graph)


def assign_directions(g):
    """Set propagation directions: root forward, else by temporal interest."""
    nodes = []
    for node in g.nodes:
        if not node.is_flow:
            direction = None
        elif node.id == g.root:
            direction = FORWARD
        elif node.interest is Interest.AFTER:
            direction = BACKWARD
        else:
            direction = FORWARD
        nodes.append(replace(node, direction=direction))
    return replace(g, nodes=tuple(nodes))


def order_nodes(g):
    """Topological order of node ids (parents first, ties by id)."""
    indeg = {n.id: 0 for n in g.nodes}
    consumers = {n.id: [] for n in g.nodes}
    for node in g.nodes:
        for p in node.parents:
            if p.kind == "node":
                indeg[node.id] += 1
                consumers[p.index].append(node.id)
    ready = deque(sorted(i for i, d in indeg.items() if d == 0))
    order = []
    while ready:
        i = ready.popleft()
        order.append(i)
        for c in sorted(consumers[i]):
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
    if len(order) != len(g.nodes):
        raise GraphError("cycle detected in operator graph")
    return order


def block_pattern(g):
    """Set of (row node id, column block) pairs with nonzero coefficients.

    Column blocks are ``'x'`` for the trajectory and node ids otherwise.
    """
    blocks = set()
    for node in g.nodes:
        blocks.add((node.id, node.id))
        for p in node.parents:
            blocks.add((node.id, "x" if p.kind == "pred" else p.index))
    return blocks


def sparsity_grid(g):
    """Text grid of the block pattern, one row per node."""
    blocks = block_pattern(g)
    cols = ["x"] + [n.id for n in g.nodes]
    names = ["x"] + [n.label for n in g.nodes]
    width = max(len(s) for s in names) + 1
    lines = [" " * width + "".join(s.rjust(width) for s in names)]
    for node in g.nodes:
        cells = "".join(("X" if (node.id, c) in blocks else ".").rjust(width)
                        for c in cols)
        lines.append(node.label.ljust(width) + cells)
    return "\n".join(lines)
