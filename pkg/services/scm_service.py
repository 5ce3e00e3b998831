# services/scm_service.py
import json
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Union

import networkx as nx
import numpy as np
import pandas as pd

import settings
from models import DiscreteSCM, Distribution, FrontdoorReport
from utils.exceptions import (
    CpdRowNotNormalized, CpdShapeMismatch, CycleDetected, InvalidAdjustmentSet, MissingAssignment, MissingFile,
    ParseError, SCMError, StateSpaceTooLarge, UnknownVariable, ValueOutOfRange, ZeroProbabilityEvidence,
)
from utils.logger import setup_logger

logger = setup_logger("scm")

NORMALIZATION_TOL = 1e-12
EQUALITY_TOL = 1e-10

VariableSet = Union[str, Iterable[str]]


# --- BUILD ---

def build_scm(variables: Sequence[str], cardinalities: Mapping[str, int],
              parents: Mapping[str, Sequence[str]], cpds: Mapping[str, object]) -> DiscreteSCM:
    """Validate the graph and CPDs and return an immutable SCM with its topological order."""
    variables = tuple(variables)
    if len(set(variables)) != len(variables):
        raise SCMError(f"Duplicate variable names in {list(variables)}")

    for name in variables:
        if name not in cardinalities:
            raise SCMError(f"No cardinality given for '{name}'")
        if int(cardinalities[name]) < 2:
            raise SCMError(f"Variable '{name}' needs at least 2 states, got {cardinalities[name]}")
    cards = {name: int(cardinalities[name]) for name in variables}

    parent_map: Dict[str, tuple] = {}
    for name in variables:
        declared = tuple(parents.get(name, ()))
        for p in declared:
            if p not in cards:
                raise UnknownVariable(p)
        if len(set(declared)) != len(declared):
            raise SCMError(f"Duplicate parents for '{name}'")
        parent_map[name] = declared
    for name in parents:
        if name not in cards:
            raise UnknownVariable(name)

    graph = nx.DiGraph()
    graph.add_nodes_from(variables)
    graph.add_edges_from((p, child) for child in variables for p in parent_map[child])
    if not nx.is_directed_acyclic_graph(graph):
        cycle = nx.find_cycle(graph)
        raise CycleDetected(f"Parent relation has a cycle: {' -> '.join(u for u, _ in cycle)}")

    position = {name: i for i, name in enumerate(variables)}
    topo = tuple(nx.lexicographical_topological_sort(graph, key=position.get))

    tables: Dict[str, np.ndarray] = {}
    for name in variables:
        if name not in cpds:
            raise SCMError(f"No CPD given for '{name}'")
        expected = tuple(cards[p] for p in parent_map[name]) + (cards[name],)
        table = np.array(cpds[name], dtype=np.float64)
        if table.shape != expected and table.size == int(np.prod(expected)) and table.ndim <= 1:
            table = table.reshape(expected)  # row-major flat table
        if table.shape != expected:
            raise CpdShapeMismatch(name, expected, table.shape)
        _check_rows(name, table)
        table.setflags(write=False)
        tables[name] = table

    logger.debug(f"Built SCM over {list(variables)} with topological order {list(topo)}")
    return DiscreteSCM(variables=variables, cardinalities=cards, parents=parent_map,
                       cpds=tables, topological_order=topo)


def _check_rows(name: str, table: np.ndarray) -> None:
    card = table.shape[-1]
    rows = table.reshape(-1, card)
    sums = rows.sum(axis=1)
    bad = (np.abs(sums - 1.0) > NORMALIZATION_TOL) | (rows < 0).any(axis=1) | ~np.isfinite(rows).all(axis=1)
    if bad.any():
        first = int(np.flatnonzero(bad)[0])
        index = tuple(int(i) for i in np.unravel_index(first, table.shape[:-1])) if table.ndim > 1 else ()
        raise CpdRowNotNormalized(name, index, float(sums[first]))


# --- ENUMERATION ---

def _require_known(scm: DiscreteSCM, names: Iterable[str]) -> None:
    for name in names:
        if name not in scm.cardinalities:
            raise UnknownVariable(name)


def _as_list(names: Optional[VariableSet]) -> List[str]:
    if names is None:
        return []
    if isinstance(names, str):
        return [names]
    return list(names)


def _broadcast_cpd(scm: DiscreteSCM, name: str) -> np.ndarray:
    """View of a CPD laid out over all variable axes (size-1 axes for absent variables)."""
    axes = [scm.variables.index(p) for p in scm.parents[name]] + [scm.variables.index(name)]
    order = np.argsort(axes)
    table = np.transpose(scm.cpds[name], order)
    shape = [1] * len(scm.variables)
    for axis in axes:
        shape[axis] = scm.cardinalities[scm.variables[axis]]
    return table.reshape(shape)


def joint_table(scm: DiscreteSCM, state_space_limit: Optional[int] = None) -> np.ndarray:
    """Full joint distribution, one axis per variable in declaration order."""
    limit = state_space_limit or settings.STATE_SPACE_LIMIT
    size = scm.state_space_size
    if size > limit:
        raise StateSpaceTooLarge(size, limit)
    joint = np.ones([scm.cardinalities[v] for v in scm.variables], dtype=np.float64)
    for name in scm.topological_order:
        joint = joint * _broadcast_cpd(scm, name)
    return joint


def marginal_table(scm: DiscreteSCM, keep: Sequence[str], state_space_limit: Optional[int] = None) -> np.ndarray:
    """Observational marginal over `keep`, axes in the order given."""
    _require_known(scm, keep)
    joint = joint_table(scm, state_space_limit)
    keep_axes = [scm.variables.index(v) for v in keep]
    drop_axes = tuple(i for i in range(len(scm.variables)) if i not in keep_axes)
    reduced = joint.sum(axis=drop_axes) if drop_axes else joint
    # after summation the remaining axes are in declaration order
    remaining = sorted(keep_axes)
    return np.transpose(reduced, [remaining.index(a) for a in keep_axes])


def _distribution(variable: str, probs: np.ndarray) -> Distribution:
    probs = np.asarray(probs, dtype=np.float64)
    probs = probs / probs.sum()
    probs.setflags(write=False)
    return Distribution(variable=variable, probs=probs)


def joint_probability(scm: DiscreteSCM, assignment: Mapping[str, int]) -> float:
    """Product of CPD entries along the topological order."""
    _require_known(scm, assignment)
    missing = set(scm.variables) - set(assignment)
    if missing:
        raise MissingAssignment(missing)
    for name, value in assignment.items():
        if not 0 <= int(value) < scm.cardinalities[name]:
            raise ValueOutOfRange(f"Value {value} out of range for '{name}' (cardinality {scm.cardinalities[name]})")

    probability = 1.0
    for name in scm.topological_order:
        index = tuple(int(assignment[p]) for p in scm.parents[name]) + (int(assignment[name]),)
        probability *= float(scm.cpds[name][index])
    return probability


def conditional(scm: DiscreteSCM, target: str, evidence: Optional[Mapping[str, int]] = None) -> Distribution:
    """P(target | evidence) by full-joint enumeration."""
    evidence = dict(evidence or {})
    _require_known(scm, [target, *evidence])
    if target in evidence:
        raise SCMError(f"Target '{target}' cannot also be evidence")
    for name, value in evidence.items():
        if not 0 <= int(value) < scm.cardinalities[name]:
            raise ValueOutOfRange(f"Evidence value {value} out of range for '{name}'")

    keep = [target, *evidence]
    table = marginal_table(scm, keep)
    index = (slice(None),) + tuple(int(evidence[name]) for name in evidence)
    unnormalized = table[index]
    total = float(unnormalized.sum())
    if total <= 0.0:
        raise ZeroProbabilityEvidence(f"Evidence {evidence} has probability 0")
    return _distribution(target, unnormalized / total)


# --- GRAPH QUERIES ---

def d_separated(scm: DiscreteSCM, set_a: VariableSet, set_b: VariableSet,
                given_z: Optional[VariableSet] = None) -> bool:
    a, b, z = set(_as_list(set_a)), set(_as_list(set_b)), set(_as_list(given_z))
    _require_known(scm, a | b | z)
    if (a & b) or (a & z) or (b & z):
        raise InvalidAdjustmentSet("d-separation sets must be disjoint")
    return nx.is_d_separator(scm.graph(), a, b, z)


def check_frontdoor_criterion(scm: DiscreteSCM, cause: str, target: str,
                              mediator_set: VariableSet) -> FrontdoorReport:
    """Evaluate the three front-door conditions for a singleton cause."""
    mediators = set(_as_list(mediator_set))
    _require_known(scm, {cause, target} | mediators)
    if cause == target or cause in mediators or target in mediators:
        raise InvalidAdjustmentSet("cause, target and mediator set must be disjoint")

    graph = scm.graph()

    # (1) every directed cause -> target path passes through a mediator
    without_mediators = graph.copy()
    without_mediators.remove_nodes_from(mediators)
    intercepts = not nx.has_path(without_mediators, cause, target)

    # (2) no open back-door path cause <- ... mediator: drop the cause's outgoing edges
    cause_backdoor = graph.copy()
    cause_backdoor.remove_edges_from(list(graph.out_edges(cause)))
    no_backdoor = nx.is_d_separator(cause_backdoor, {cause}, mediators, set())

    # (3) back-door paths mediator <- ... target are blocked by conditioning on the cause
    mediator_backdoor = graph.copy()
    mediator_backdoor.remove_edges_from([e for m in mediators for e in graph.out_edges(m)])
    blocked = nx.is_d_separator(mediator_backdoor, mediators, {target}, {cause})

    report = FrontdoorReport(cause=cause, target=target, mediators=tuple(sorted(mediators)),
                             intercepts_directed_paths=intercepts,
                             no_backdoor_cause_to_mediator=no_backdoor,
                             mediator_backdoor_blocked_by_cause=blocked)
    logger.debug(f"Front-door criterion {cause}->{target} via {sorted(mediators)}: {report.as_tuple()}")
    return report


# --- INTERVENTIONS ---

def intervene(scm: DiscreteSCM, variable: str, value: int) -> DiscreteSCM:
    """Graph mutilation for do(variable=value). The input SCM is left untouched."""
    _require_known(scm, [variable])
    card = scm.cardinalities[variable]
    if not 0 <= int(value) < card:
        raise ValueOutOfRange(f"do({variable}={value}) out of range (cardinality {card})")

    point_mass = np.zeros(card, dtype=np.float64)
    point_mass[int(value)] = 1.0
    parents = {name: (() if name == variable else scm.parents[name]) for name in scm.variables}
    cpds = {name: (point_mass if name == variable else scm.cpds[name]) for name in scm.variables}
    return build_scm(scm.variables, scm.cardinalities, parents, cpds)


def interventional_oracle(scm: DiscreteSCM, target: str, do_var: str, do_value: int) -> Distribution:
    """P(target | do(do_var=do_value)) enumerated on the mutilated graph."""
    return conditional(intervene(scm, do_var, do_value), target)


def backdoor_adjust(scm: DiscreteSCM, target: str, cause: str, cause_value: int,
                    adjust_set: Optional[VariableSet] = None) -> Distribution:
    """sum_s P(target | cause, S=s) P(S=s) from the observational joint."""
    adjust = _as_list(adjust_set)
    _require_known(scm, [target, cause, *adjust])
    if cause == target:
        raise InvalidAdjustmentSet("cause and target must differ")
    if cause in adjust or target in adjust or len(set(adjust)) != len(adjust):
        raise InvalidAdjustmentSet(f"Adjustment set {adjust} overlaps cause/target or repeats a variable")
    if not 0 <= int(cause_value) < scm.cardinalities[cause]:
        raise ValueOutOfRange(f"{cause}={cause_value} out of range")

    table = marginal_table(scm, [target, cause, *adjust])       # (T, X, S...)
    p_s = table.sum(axis=(0, 1))                                # P(S=s)
    at_cause = table[:, int(cause_value)]                       # P(T, X=x, S=s)
    p_xs = at_cause.sum(axis=0)                                 # P(X=x, S=s)
    if np.any((p_s > 0) & (p_xs <= 0)):
        raise ZeroProbabilityEvidence(
            f"Some configuration of {adjust} never co-occurs with {cause}={cause_value}")

    conditional_t = np.divide(at_cause, p_xs, out=np.zeros_like(at_cause), where=p_xs > 0)
    probs = (conditional_t * p_s).reshape(table.shape[0], -1).sum(axis=1)
    return _distribution(target, probs)


def frontdoor_adjust(scm: DiscreteSCM, target: str, cause: str, cause_value: int,
                     mediator: VariableSet) -> Distribution:
    """sum_m P(m|x) sum_x' P(target|x',m) P(x'), every term from the observational joint."""
    mediators = _as_list(mediator)
    if len(mediators) != 1:
        raise SCMError(f"frontdoor_adjust takes a single mediator, got {mediators}")
    m_name = mediators[0]
    _require_known(scm, [target, cause, m_name])
    if len({target, cause, m_name}) != 3:
        raise InvalidAdjustmentSet("cause, mediator and target must be distinct")
    x = int(cause_value)
    if not 0 <= x < scm.cardinalities[cause]:
        raise ValueOutOfRange(f"{cause}={cause_value} out of range")

    table = marginal_table(scm, [cause, m_name, target])  # (X, M, T)
    p_x = table.sum(axis=(1, 2))
    if p_x[x] <= 0:
        raise ZeroProbabilityEvidence(f"{cause}={x} has probability 0")
    p_m_given_x = table[x].sum(axis=1) / p_x[x]
    p_xm = table.sum(axis=2)

    needed = (p_x > 0)[:, None] & (p_m_given_x > 0)[None, :]
    if np.any(needed & (p_xm <= 0)):
        raise ZeroProbabilityEvidence(f"P({cause}, {m_name}) vanishes where the adjustment needs it")

    p_t_given_xm = np.divide(table, p_xm[..., None], out=np.zeros_like(table), where=p_xm[..., None] > 0)
    inner = np.einsum("xmt,x->mt", p_t_given_xm, p_x)  # P(target | do(M=m))
    probs = np.einsum("m,mt->t", p_m_given_x, inner)
    return _distribution(target, probs)


# --- FILE FORMAT ---

def scm_from_document(document: Mapping) -> DiscreteSCM:
    """Build an SCM from the JSON document form (variables, edges, cpds)."""
    try:
        variables = [str(v["name"]) for v in document["variables"]]
        cards = {str(v["name"]): int(v["cardinality"]) for v in document["variables"]}
        edges = [(str(p), str(c)) for p, c in document.get("edges", [])]
        cpd_docs = document["cpds"]
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"SCM document is malformed: {e}") from e

    edge_parents: Dict[str, set] = {v: set() for v in variables}
    for p, c in edges:
        if c not in edge_parents:
            raise UnknownVariable(c)
        edge_parents[c].add(p)

    parents, cpds = {}, {}
    for name in variables:
        if name not in cpd_docs:
            raise ParseError(f"No CPD for variable '{name}'")
        entry = cpd_docs[name]
        order = [str(p) for p in entry.get("parents", [])]
        if set(order) != edge_parents[name]:
            raise ParseError(f"CPD parents {order} of '{name}' disagree with edges {sorted(edge_parents[name])}")
        parents[name] = order
        cpds[name] = entry["table"]
    return build_scm(variables, cards, parents, cpds)


def scm_to_document(scm: DiscreteSCM) -> Dict:
    return {
        "variables": [{"name": v, "cardinality": scm.cardinalities[v]} for v in scm.variables],
        "edges": [[p, c] for p, c in scm.edges],
        "cpds": {v: {"parents": list(scm.parents[v]), "table": scm.cpds[v].ravel().tolist()}
                 for v in scm.variables},
    }


def load_scm_file(path) -> DiscreteSCM:
    path = Path(path)
    if not path.exists():
        raise MissingFile(path)
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(f"{path} is not valid JSON: {e}", line=e.lineno) from e
    logger.info(f"Loaded SCM from {path}")
    return scm_from_document(document)


# --- REFERENCE MODELS ---

def _bernoulli_rows(p_one: Sequence[float]) -> np.ndarray:
    p = np.asarray(p_one, dtype=np.float64)
    return np.stack([1.0 - p, p], axis=-1)


def frontdoor_scm(p_s: float, p_x: Sequence[float], p_m: Sequence[float], p_y: Sequence[float]) -> DiscreteSCM:
    """
    Binary SCM with S->X, S->Y, X->M, M->Y. Arguments are P(=1) per parent configuration:
    p_x indexed by S, p_m by X, p_y by (M, S) in row-major order.
    """
    return build_scm(
        ["S", "X", "M", "Y"],
        {"S": 2, "X": 2, "M": 2, "Y": 2},
        {"S": [], "X": ["S"], "M": ["X"], "Y": ["M", "S"]},
        {
            "S": _bernoulli_rows([p_s]).reshape(2),
            "X": _bernoulli_rows(p_x),
            "M": _bernoulli_rows(p_m),
            "Y": _bernoulli_rows(np.reshape(p_y, (2, 2))),
        },
    )


def backdoor_scm(p_s: float, p_x: Sequence[float], p_y: Sequence[float]) -> DiscreteSCM:
    """Binary SCM with S->X, S->Y, X->Y; p_y indexed by (X, S) in row-major order."""
    return build_scm(
        ["S", "X", "Y"],
        {"S": 2, "X": 2, "Y": 2},
        {"S": [], "X": ["S"], "Y": ["X", "S"]},
        {
            "S": _bernoulli_rows([p_s]).reshape(2),
            "X": _bernoulli_rows(p_x),
            "Y": _bernoulli_rows(np.reshape(p_y, (2, 2))),
        },
    )


def example_frontdoor_document() -> Dict:
    """Worked example used by `scm-verify --example frontdoor`."""
    return scm_to_document(frontdoor_scm(0.5, [0.2, 0.8], [0.1, 0.9], [0.2, 0.4, 0.6, 0.8]))


def random_frontdoor_scm(rng: np.random.Generator, low: float = 0.05, high: float = 0.95) -> DiscreteSCM:
    return frontdoor_scm(rng.uniform(low, high), rng.uniform(low, high, 2),
                         rng.uniform(low, high, 2), rng.uniform(low, high, 4))


def random_backdoor_scm(rng: np.random.Generator, low: float = 0.05, high: float = 0.95) -> DiscreteSCM:
    return backdoor_scm(rng.uniform(low, high), rng.uniform(low, high, 2), rng.uniform(low, high, 4))


def verify_random(n: int, seed: int = 0) -> pd.DataFrame:
    """
    Oracle-equivalence harness: for n random front-door and back-door SCMs, the largest
    absolute gap between the adjustment formula and mutilation-enumeration, per instance.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n):
        fd = random_frontdoor_scm(rng)
        bd = random_backdoor_scm(rng)
        fd_gap = bd_gap = 0.0
        for x in (0, 1):
            fd_gap = max(fd_gap, float(np.max(np.abs(
                frontdoor_adjust(fd, "Y", "X", x, "M").probs - interventional_oracle(fd, "Y", "X", x).probs))))
            bd_gap = max(bd_gap, float(np.max(np.abs(
                backdoor_adjust(bd, "Y", "X", x, ["S"]).probs - interventional_oracle(bd, "Y", "X", x).probs))))
        rows.append({"instance": i, "frontdoor_max_abs_error": fd_gap, "backdoor_max_abs_error": bd_gap})

    report = pd.DataFrame(rows)
    logger.info(f"Verified {n} random SCMs: worst front-door error "
                f"{report['frontdoor_max_abs_error'].max():.3e}, "
                f"worst back-door error {report['backdoor_max_abs_error'].max():.3e}")
    return report


def compare_adjustments(scm: DiscreteSCM, cause: str, target: str, mediator: Optional[str] = None,
                        adjust_set: Optional[VariableSet] = None) -> pd.DataFrame:
    """One row per (do value, method) with the target distribution and its gap to the oracle."""
    rows = []
    for value in range(scm.cardinalities[cause]):
        oracle = interventional_oracle(scm, target, cause, value)
        candidates = {"oracle": oracle, "observational": conditional(scm, target, {cause: value})}
        if mediator is not None:
            candidates["frontdoor"] = frontdoor_adjust(scm, target, cause, value, mediator)
        if adjust_set is not None:
            candidates["backdoor"] = backdoor_adjust(scm, target, cause, value, adjust_set)
        for method, dist in candidates.items():
            row = {"do_value": value, "method": method}
            row.update({f"P({target}={k})": float(p) for k, p in enumerate(dist.probs)})
            row["max_abs_error_vs_oracle"] = float(np.max(np.abs(dist.probs - oracle.probs)))
            rows.append(row)
    return pd.DataFrame(rows)
