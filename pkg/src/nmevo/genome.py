"""Heritable network description: columns, projections, learning rates.

A genotype always owns seven column slots: one input column, four hidden
slots, an action-output column and a value-output column. Projections connect
columns; only columns and projections lying on a directed path from the input
column to an output column take part in computation (the "active graph"), so
structural mutations can effectively grow or shrink the network without
touching the slot table.

Genotypes are treated as immutable values: evaluation never writes to them
and mutation builds modified copies.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

# Column slot layout (fixed).
INPUT_COL = 0
HIDDEN_COLS = (1, 2, 3, 4)
ACTION_COL = 5
VALUE_COL = 6
N_COLUMNS = 7

N_HIDDEN = 8  # neurons per hidden column
INPUT_SIZE = 6
ACTION_SIZE = 4  # 2 action means + 2 pre-exponential SD units
VALUE_SIZE = 1

COLUMN_SIZES = {
    INPUT_COL: INPUT_SIZE,
    ACTION_COL: ACTION_SIZE,
    VALUE_COL: VALUE_SIZE,
    **{c: N_HIDDEN for c in HIDDEN_COLS},
}

COLUMN_ROLES = {
    INPUT_COL: "input",
    ACTION_COL: "action_output",
    VALUE_COL: "value_output",
    **{c: "hidden" for c in HIDDEN_COLS},
}

# Activation function names per column; implementations live in network.py.
COLUMN_ACTIVATIONS = {
    INPUT_COL: "identity",
    ACTION_COL: "action_head",
    VALUE_COL: "identity",
    **{c: "tanh" for c in HIDDEN_COLS},
}

FM_HIDDEN = 2 * N_HIDDEN  # hidden layer width of the target/mask MLP
FG_HIDDEN = N_HIDDEN  # hidden layer width of the gate MLP

GENOTYPE_FORMAT = "nmevo-genotype"
GENOTYPE_VERSION = 1


class GenotypeError(ValueError):
    """A genotype violates a structural invariant."""


class GenotypeParseError(ValueError):
    """A genotype file could not be parsed; carries a byte offset when known."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


def column_size(col: int) -> int:
    return COLUMN_SIZES[col]


@dataclass(frozen=True)
class ActivatoryProjection:
    """Fully connected synapse set from column ``pre`` to column ``post``.

    The bias vector is added to the post column's pre-activation. It is
    trained by the RL update alongside the weight matrix but is invisible to
    neuromodulation, which targets the weight matrix only. Without a trainable
    offset the network would be an odd function of its input, and on this
    task's sign-symmetric observation distribution the value estimate could
    never fit the positive mean return and the action-SD units could never
    shrink exploration noise globally, capping reward far below a trained
    policy's level."""

    pre: int
    post: int
    weights: np.ndarray  # shape (size(post), size(pre))
    bias: np.ndarray  # shape (size(post),)
    local_rl_rate: float = 1.0


@dataclass(frozen=True)
class ModulatoryProjection:
    """Reads column ``column`` and emits weight updates for one activatory
    projection, via a target/mask MLP (fm) and a scalar gate MLP (fg)."""

    column: int
    target_pre: int
    target_post: int
    fm_w1: np.ndarray  # (FM_HIDDEN, size(column))
    fm_w2: np.ndarray  # (2 * n_target_weights, FM_HIDDEN)
    fg_w1: np.ndarray  # (FG_HIDDEN, size(pre) + size(post))
    fg_w2: np.ndarray  # (1, FG_HIDDEN)
    priority: float = 0.0

    @property
    def target(self) -> tuple[int, int]:
        return (self.target_pre, self.target_post)


@dataclass(frozen=True)
class Genotype:
    activatory: tuple[ActivatoryProjection, ...]
    modulatory: tuple[ModulatoryProjection, ...] = ()
    global_rl_rate: float = 0.0

    def projection_index(self, pre: int, post: int) -> int | None:
        for k, p in enumerate(self.activatory):
            if p.pre == pre and p.post == post:
                return k
        return None


def target_weight_count(pre: int, post: int) -> int:
    return column_size(post) * column_size(pre)


def mlp_shapes(column: int, target_pre: int, target_post: int) -> dict[str, tuple[int, int]]:
    """Expected weight shapes of a modulatory projection's two MLPs."""
    k = target_weight_count(target_pre, target_post)
    return {
        "fm_w1": (FM_HIDDEN, column_size(column)),
        "fm_w2": (2 * k, FM_HIDDEN),
        "fg_w1": (FG_HIDDEN, column_size(target_pre) + column_size(target_post)),
        "fg_w2": (1, FG_HIDDEN),
    }


def new_modulatory(
    column: int,
    target_pre: int,
    target_post: int,
    rng: np.random.Generator,
    priority: float,
    low: float = -0.5,
    high: float = 0.5,
) -> ModulatoryProjection:
    shapes = mlp_shapes(column, target_pre, target_post)
    return ModulatoryProjection(
        column=column,
        target_pre=target_pre,
        target_post=target_post,
        fm_w1=rng.uniform(low, high, shapes["fm_w1"]),
        fm_w2=rng.uniform(low, high, shapes["fm_w2"]),
        fg_w1=rng.uniform(low, high, shapes["fg_w1"]),
        fg_w2=rng.uniform(low, high, shapes["fg_w2"]),
        priority=priority,
    )


def initial_genotype(rng: np.random.Generator, low: float = -0.5, high: float = 0.5) -> Genotype:
    """Two-branch starting architecture: input -> hidden -> action output and
    input -> hidden -> value output. Local RL rates 1, global RL rate 0, no
    modulatory projections."""
    h_act, h_val = HIDDEN_COLS[0], HIDDEN_COLS[1]

    def proj(pre: int, post: int) -> ActivatoryProjection:
        w = rng.uniform(low, high, (column_size(post), column_size(pre)))
        b = rng.uniform(low, high, column_size(post))
        return ActivatoryProjection(pre=pre, post=post, weights=w, bias=b, local_rl_rate=1.0)

    return Genotype(
        activatory=(
            proj(INPUT_COL, h_act),
            proj(h_act, ACTION_COL),
            proj(INPUT_COL, h_val),
            proj(h_val, VALUE_COL),
        ),
        modulatory=(),
        global_rl_rate=0.0,
    )


# ---------------------------------------------------------------------------
# Structural queries


def creates_cycle(edges: list[tuple[int, int]], pre: int, post: int) -> bool:
    """Would adding the edge (pre, post) close a directed cycle?"""
    adj: dict[int, list[int]] = {}
    for a, b in edges:
        adj.setdefault(a, []).append(b)
    # cycle iff post already reaches pre
    stack, seen = [post], set()
    while stack:
        node = stack.pop()
        if node == pre:
            return True
        if node in seen:
            continue
        seen.add(node)
        stack.extend(adj.get(node, ()))
    return False


def valid_edge_endpoints(pre: int, post: int) -> bool:
    """Input has no incoming projections, outputs no outgoing ones."""
    return pre in (INPUT_COL, *HIDDEN_COLS) and post in (*HIDDEN_COLS, ACTION_COL, VALUE_COL) and pre != post


@dataclass(frozen=True)
class ActiveGraph:
    """Columns and projections on some input-to-output path."""

    columns: frozenset[int]
    activatory: tuple[int, ...]  # indices into genotype.activatory
    modulatory: tuple[int, ...]  # indices into genotype.modulatory
    topo_order: tuple[int, ...]  # active columns, dependency order, input first


def _reachable(starts: set[int], adj: dict[int, set[int]]) -> set[int]:
    seen = set(starts)
    stack = list(starts)
    while stack:
        for nxt in adj.get(stack.pop(), ()):
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return seen


def active_graph(genotype: Genotype) -> ActiveGraph:
    fwd: dict[int, set[int]] = {}
    bwd: dict[int, set[int]] = {}
    for p in genotype.activatory:
        fwd.setdefault(p.pre, set()).add(p.post)
        bwd.setdefault(p.post, set()).add(p.pre)

    from_input = _reachable({INPUT_COL}, fwd)
    to_output = _reachable({ACTION_COL, VALUE_COL}, bwd)
    cols = frozenset(c for c in range(N_COLUMNS) if c in from_input and c in to_output)

    act_idx = tuple(
        k
        for k, p in enumerate(genotype.activatory)
        if p.pre in from_input and p.post in to_output
    )
    active_targets = {(genotype.activatory[k].pre, genotype.activatory[k].post) for k in act_idx}
    mod_idx = tuple(
        k
        for k, q in enumerate(genotype.modulatory)
        if q.column in cols and q.target in active_targets
    )

    # Kahn topological order over the active subgraph, smallest column id first
    # for a deterministic order.
    indeg = {c: 0 for c in cols}
    for k in act_idx:
        p = genotype.activatory[k]
        if p.post in indeg:
            indeg[p.post] += 1
    ready = sorted(c for c, d in indeg.items() if d == 0)
    order: list[int] = []
    while ready:
        node = ready.pop(0)
        order.append(node)
        for k in act_idx:
            p = genotype.activatory[k]
            if p.pre == node and p.post in indeg:
                indeg[p.post] -= 1
                if indeg[p.post] == 0:
                    ready.append(p.post)
        ready.sort()
    return ActiveGraph(columns=cols, activatory=act_idx, modulatory=mod_idx, topo_order=tuple(order))


def validate(genotype: Genotype, bottlenecked: bool = False) -> None:
    """Raise GenotypeError on any violated invariant."""
    if not np.isfinite(genotype.global_rl_rate) or genotype.global_rl_rate < 0:
        raise GenotypeError(f"global_rl_rate must be finite and >= 0, got {genotype.global_rl_rate}")

    seen_pairs: set[tuple[int, int]] = set()
    edges: list[tuple[int, int]] = []
    for p in genotype.activatory:
        if not valid_edge_endpoints(p.pre, p.post):
            raise GenotypeError(f"invalid projection endpoints ({p.pre}, {p.post})")
        if (p.pre, p.post) in seen_pairs:
            raise GenotypeError(f"duplicate projection ({p.pre}, {p.post})")
        seen_pairs.add((p.pre, p.post))
        expected = (column_size(p.post), column_size(p.pre))
        if p.weights.shape != expected:
            raise GenotypeError(
                f"projection ({p.pre}, {p.post}) weight shape {p.weights.shape}, expected {expected}"
            )
        if p.bias.shape != (column_size(p.post),):
            raise GenotypeError(
                f"projection ({p.pre}, {p.post}) bias shape {p.bias.shape}, "
                f"expected ({column_size(p.post)},)"
            )
        if not np.all(np.isfinite(p.weights)) or not np.all(np.isfinite(p.bias)):
            raise GenotypeError(f"projection ({p.pre}, {p.post}) has non-finite weights")
        if not np.isfinite(p.local_rl_rate) or p.local_rl_rate < 0:
            raise GenotypeError(f"local_rl_rate must be finite and >= 0, got {p.local_rl_rate}")
        if creates_cycle(edges, p.pre, p.post):
            raise GenotypeError(f"projection ({p.pre}, {p.post}) closes a cycle")
        edges.append((p.pre, p.post))

    allowed_mod_cols = {VALUE_COL} if bottlenecked else {INPUT_COL, *HIDDEN_COLS}
    for q in genotype.modulatory:
        if q.column not in allowed_mod_cols:
            raise GenotypeError(f"modulating column {q.column} not allowed")
        if q.target not in seen_pairs:
            raise GenotypeError(f"modulatory target {q.target} has no activatory projection")
        if not np.isfinite(q.priority):
            raise GenotypeError("non-finite priority gene")
        for name, shape in mlp_shapes(q.column, q.target_pre, q.target_post).items():
            arr = getattr(q, name)
            if arr.shape != shape:
                raise GenotypeError(f"modulatory {name} shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise GenotypeError(f"modulatory {name} has non-finite weights")


# ---------------------------------------------------------------------------
# Serialization: self-describing JSON with hex floats for bit-exact round trips


def _enc(arr: np.ndarray) -> list:
    if arr.ndim == 1:
        return [float(v).hex() for v in arr]
    return [_enc(row) for row in arr]


def _dec(data: list, shape: tuple[int, int], what: str) -> np.ndarray:
    try:
        arr = np.array(
            [[float.fromhex(v) for v in row] for row in data], dtype=np.float64
        )
    except (TypeError, ValueError) as exc:
        raise GenotypeParseError(f"bad float data in {what}: {exc}") from exc
    if arr.shape != shape:
        raise GenotypeParseError(f"{what} has shape {arr.shape}, expected {shape}")
    return arr


def _dec1(data: list, length: int, what: str) -> np.ndarray:
    try:
        arr = np.array([float.fromhex(v) for v in data], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise GenotypeParseError(f"bad float data in {what}: {exc}") from exc
    if arr.shape != (length,):
        raise GenotypeParseError(f"{what} has shape {arr.shape}, expected ({length},)")
    return arr


def to_text(genotype: Genotype) -> str:
    doc = {
        "format": GENOTYPE_FORMAT,
        "version": GENOTYPE_VERSION,
        "columns": [
            {
                "id": c,
                "role": COLUMN_ROLES[c],
                "size": COLUMN_SIZES[c],
                "activation": COLUMN_ACTIVATIONS[c],
            }
            for c in range(N_COLUMNS)
        ],
        "global_rl_rate": float(genotype.global_rl_rate).hex(),
        "activatory": [
            {
                "pre": p.pre,
                "post": p.post,
                "local_rl_rate": float(p.local_rl_rate).hex(),
                "weights": _enc(p.weights),
                "bias": _enc(p.bias),
            }
            for p in genotype.activatory
        ],
        "modulatory": [
            {
                "column": q.column,
                "target_pre": q.target_pre,
                "target_post": q.target_post,
                "priority": float(q.priority).hex(),
                "fm_w1": _enc(q.fm_w1),
                "fm_w2": _enc(q.fm_w2),
                "fg_w1": _enc(q.fg_w1),
                "fg_w2": _enc(q.fg_w2),
            }
            for q in genotype.modulatory
        ],
    }
    return json.dumps(doc, indent=1)


def from_text(text: str) -> Genotype:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GenotypeParseError(f"invalid JSON: {exc.msg}", offset=exc.pos) from exc
    if not isinstance(doc, dict) or doc.get("format") != GENOTYPE_FORMAT:
        raise GenotypeParseError("not a genotype document")
    if doc.get("version") != GENOTYPE_VERSION:
        raise GenotypeParseError(f"unsupported genotype version {doc.get('version')}")
    try:
        activatory = tuple(
            ActivatoryProjection(
                pre=int(p["pre"]),
                post=int(p["post"]),
                weights=_dec(
                    p["weights"],
                    (column_size(int(p["post"])), column_size(int(p["pre"]))),
                    f"projection ({p['pre']}, {p['post']})",
                ),
                bias=_dec1(
                    p["bias"],
                    column_size(int(p["post"])),
                    f"projection ({p['pre']}, {p['post']}) bias",
                ),
                local_rl_rate=float.fromhex(p["local_rl_rate"]),
            )
            for p in doc["activatory"]
        )
        modulatory = tuple(
            ModulatoryProjection(
                column=int(q["column"]),
                target_pre=int(q["target_pre"]),
                target_post=int(q["target_post"]),
                fm_w1=_dec(q["fm_w1"], mlp_shapes(int(q["column"]), int(q["target_pre"]), int(q["target_post"]))["fm_w1"], "fm_w1"),
                fm_w2=_dec(q["fm_w2"], mlp_shapes(int(q["column"]), int(q["target_pre"]), int(q["target_post"]))["fm_w2"], "fm_w2"),
                fg_w1=_dec(q["fg_w1"], mlp_shapes(int(q["column"]), int(q["target_pre"]), int(q["target_post"]))["fg_w1"], "fg_w1"),
                fg_w2=_dec(q["fg_w2"], mlp_shapes(int(q["column"]), int(q["target_pre"]), int(q["target_post"]))["fg_w2"], "fg_w2"),
                priority=float.fromhex(q["priority"]),
            )
            for q in doc["modulatory"]
        )
        global_rate = float.fromhex(doc["global_rl_rate"])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, GenotypeParseError):
            raise
        raise GenotypeParseError(f"malformed genotype document: {exc}") from exc
    return Genotype(activatory=activatory, modulatory=modulatory, global_rl_rate=global_rate)


def genotype_hash(genotype: Genotype) -> str:
    return hashlib.sha256(to_text(genotype).encode("utf-8")).hexdigest()
