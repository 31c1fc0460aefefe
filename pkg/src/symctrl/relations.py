"""Relational kernel for finite systems.

Full septuple systems ``(X, X0, U, V, Y, F, H)`` over hashable symbols,
serial and feedback composition, feedback refinement relation checks, the
canonical cover construction, and bounded-horizon behaviors.  Everything
here is exhaustive enumeration; it serves as the test oracle for the
numeric layers, so clarity wins over speed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Hashable, Iterable

import numpy as np

from .core import FiniteSystem

MAX_EXPANSIONS = 10 ** 7


# -- result values -------------------------------------------------------------

class Ok:
    def __bool__(self):
        return True

    def __eq__(self, other):
        return isinstance(other, Ok)

    def __repr__(self):
        return "Ok"


@dataclass(frozen=True)
class Witness:
    """Violation of a feedback refinement condition at ``(x1, x2)``."""

    x1: Hashable
    x2: Hashable
    u: Hashable
    condition: str          # "strictness" | "admissibility" | "dynamics"
    successor: Hashable = None

    def __bool__(self):
        return False


@dataclass(frozen=True)
class Rejection:
    """Reason why two systems are not feedback composable."""

    reason: str             # "not-moore" | "alphabet" | "blocking"
    witness: tuple = ()

    def __bool__(self):
        return False


@dataclass(frozen=True)
class CounterTrace:
    part: str               # "inclusion" | "shadow"
    trace: tuple

    def __bool__(self):
        return False


class ExplosionError(RuntimeError):
    pass


class CanonicityError(ValueError):
    def __init__(self, witness):
        super().__init__(f"condition on equal preimages violated: {witness}")
        self.witness = witness


# -- systems and relations -----------------------------------------------------

class GeneralSystem:
    """System septuple with set-valued ``F(x, v)`` and strict ``H(x, u)``.

    ``F`` and ``H`` are dicts; a missing key means the empty set.  Alphabets
    keep their given order so that enumerations are deterministic.
    """

    def __init__(self, X, X0, U, V, Y, F: dict, H: dict, name: str = ""):
        self.X = tuple(X)
        self.X0 = tuple(X0)
        self.U = tuple(U)
        self.V = tuple(V)
        self.Y = tuple(Y)
        self.name = name
        self._F = {k: frozenset(v) for k, v in F.items()}
        self._H = {k: frozenset(v) for k, v in H.items()}
        if not (self.X and self.X0 and self.U and self.V and self.Y):
            raise ValueError("all alphabets must be nonempty")
        if not set(self.X0) <= set(self.X):
            raise ValueError("initial states must be states")
        xs = set(self.X)
        for (x, v), succ in self._F.items():
            if not succ <= xs:
                raise ValueError(f"F({x!r}, {v!r}) leaves the state alphabet")
        for x in self.X:
            for u in self.U:
                if not self._H.get((x, u)):
                    raise ValueError(f"H is not strict at ({x!r}, {u!r})")

    def F(self, x, v) -> frozenset:
        return self._F.get((x, v), frozenset())

    def H(self, x, u) -> frozenset:
        return self._H.get((x, u), frozenset())

    def is_moore(self) -> bool:
        for x in self.X:
            outs = [frozenset(y for y, _ in self.H(x, u)) for u in self.U]
            if any(o != outs[0] for o in outs):
                return False
        return True

    def is_autonomous(self) -> bool:
        return len(self.U) == 1

    @classmethod
    def simple(cls, X, U, F: dict, name: str = "") -> "GeneralSystem":
        """``(X, X, U, U, X, F, id)``."""
        H = {(x, u): {(x, u)} for x in X for u in U}
        return cls(X, X, U, U, X, F, H, name=name)

    @classmethod
    def from_finite(cls, fs: FiniteSystem, name: str = "") -> "GeneralSystem":
        X = fs.state_labels or list(range(fs.n_states))
        U = fs.input_labels or list(range(fs.n_inputs))
        F = {(X[x], U[u]): {X[s] for s in fs.successors(x, u)}
             for x in range(fs.n_states) for u in range(fs.n_inputs)}
        return cls.simple(X, U, F, name=name)


class Relation:
    """Relation between id sets ``[0, n_dom)`` and ``[0, n_cod)``."""

    def __init__(self, pairs: Iterable, n_dom: int, n_cod: int):
        self.pairs = frozenset((int(a), int(b)) for a, b in pairs)
        self.n_dom = int(n_dom)
        self.n_cod = int(n_cod)
        for a, b in self.pairs:
            if not (0 <= a < self.n_dom and 0 <= b < self.n_cod):
                raise ValueError(f"pair {(a, b)} out of range")
        self._img = [[] for _ in range(self.n_dom)]
        self._pre = [[] for _ in range(self.n_cod)]
        for a, b in sorted(self.pairs):
            self._img[a].append(b)
            self._pre[b].append(a)

    @classmethod
    def identity(cls, n: int) -> "Relation":
        return cls(((i, i) for i in range(n)), n, n)

    def image(self, a) -> list:
        return self._img[a]

    def image_of(self, items) -> set:
        out = set()
        for a in items:
            out.update(self._img[a])
        return out

    def preimage(self, b) -> list:
        return self._pre[b]

    def is_strict(self) -> bool:
        return all(self._img)

    def inverse(self) -> "Relation":
        return Relation(((b, a) for a, b in self.pairs), self.n_cod, self.n_dom)

    def then(self, other: "Relation") -> "Relation":
        """Composition ``other o self`` (apply ``self`` first)."""
        if self.n_cod != other.n_dom:
            raise ValueError("relation sizes do not chain")
        pairs = {(a, c) for a, b in self.pairs for c in other.image(b)}
        return Relation(pairs, self.n_dom, other.n_cod)

    def __eq__(self, other):
        return (isinstance(other, Relation) and self.pairs == other.pairs
                and self.n_dom == other.n_dom and self.n_cod == other.n_cod)

    def __repr__(self):
        return f"Relation({sorted(self.pairs)})"


# -- quantizers and compositions -------------------------------------------------

def quantize_output(Q: Relation, S: GeneralSystem, labels=None) -> GeneralSystem:
    """``Q o S`` for a simple system ``S`` whose states are ids or labelled
    by ``labels`` of Q's domain; outputs are Q's codomain symbols."""
    Xp = list(labels) if labels is not None else list(range(Q.n_cod))
    idx = {x: i for i, x in enumerate(S.X)}
    H = {(x, u): {(Xp[q], u) for q in Q.image(idx[x])} for x in S.X for u in S.U}
    F = {(x, v): S.F(x, v) for x in S.X for v in S.V}
    return GeneralSystem(S.X, S.X, S.U, S.U, Xp, F, H, name=f"Q o {S.name}")


def quantize_input(C: GeneralSystem, Q: Relation, domain_labels, codomain_labels) -> GeneralSystem:
    """``C o Q``: the controller reads ``Q(u')`` instead of ``u'``."""
    dom = list(domain_labels)
    cod = list(codomain_labels)
    H = {}
    for x in C.X:
        for i, up in enumerate(dom):
            H[(x, up)] = set().union(*(C.H(x, cod[q]) for q in Q.image(i)))
    F = {(x, v): C.F(x, v) for x in C.X for v in C.V}
    return GeneralSystem(C.X, C.X0, dom, C.V, C.Y, F, H, name=f"{C.name} o Q")


def serial_compose(S1: GeneralSystem, S2: GeneralSystem) -> GeneralSystem:
    """``S2 o S1``: the output of ``S1`` drives the input of ``S2``."""
    if not set(S1.Y) <= set(S2.U):
        raise ValueError("output alphabet of S1 is not contained in the input alphabet of S2")
    X = list(product(S1.X, S2.X))
    X0 = list(product(S1.X0, S2.X0))
    V = list(product(S1.V, S2.V))
    F = {}
    for (x1, x2) in X:
        for (v1, v2) in V:
            F[((x1, x2), (v1, v2))] = set(product(S1.F(x1, v1), S2.F(x2, v2)))
    H = {}
    for (x1, x2) in X:
        for u1 in S1.U:
            H[((x1, x2), u1)] = {(y2, (v1, v2)) for y1, v1 in S1.H(x1, u1)
                                 for y2, v2 in S2.H(x2, y1)}
    return GeneralSystem(X, X0, S1.U, V, S2.Y, F, H, name=f"{S2.name} o {S1.name}")


def feedback_compose(S1: GeneralSystem, S2: GeneralSystem):
    """Closed loop ``S1 x S2`` (``S2`` must be Moore), or a Rejection."""
    if not S2.is_moore():
        return Rejection("not-moore")
    if not set(S2.Y) <= set(S1.U) or not set(S1.Y) <= set(S2.U):
        return Rejection("alphabet")
    X = list(product(S1.X, S2.X))
    X0 = list(product(S1.X0, S2.X0))
    V = list(product(S1.V, S2.V))
    H = {}
    for x1, x2 in X:
        out = set()
        for y1 in S1.Y:
            for y2, v2 in S2.H(x2, y1):
                for y1b, v1 in S1.H(x1, y2):
                    if y1b != y1:
                        continue
                    if not S2.F(x2, v2) and S1.F(x1, v1):
                        return Rejection("blocking", (x1, x2, (v1, v2)))
                    out.add(((y1, y2), (v1, v2)))
        H[((x1, x2), 0)] = out
    F = {}
    for x1, x2 in X:
        for v1, v2 in V:
            F[((x1, x2), (v1, v2))] = set(product(S1.F(x1, v1), S2.F(x2, v2)))
    return GeneralSystem(X, X0, [0], V, list(product(S1.Y, S2.Y)), F, H,
                         name=f"{S1.name} x {S2.name}")


def static_controller(table: dict, states, inputs, name: str = "C") -> GeneralSystem:
    """Static controller enabling ``table[x]`` at plant state ``x``.

    States missing from ``table`` (or mapped to an empty set) make the
    controller block, which keeps it composable with plants that block
    there.
    """
    states = list(states)
    inputs = list(inputs)
    H, F = {}, {}
    for x in states:
        allowed = list(table.get(x, ()))
        if allowed:
            H[(0, x)] = {(u, x) for u in allowed}
            F[(0, x)] = {0}
        else:
            H[(0, x)] = {(inputs[0], x)}
    return GeneralSystem([0], [0], states, states, inputs, F, H, name=name)


# -- feedback refinement relations ---------------------------------------------

def _input_map(S1: FiniteSystem, S2: FiniteSystem):
    """Ids of S2's inputs inside S1's input alphabet."""
    if S2.input_labels is not None and S1.input_labels is not None:
        pos = {u: i for i, u in enumerate(S1.input_labels)}
        if not set(S2.input_labels) <= set(pos):
            raise ValueError("abstract inputs are not concrete inputs")
        return [pos[u] for u in S2.input_labels]
    if S2.n_inputs > S1.n_inputs:
        raise ValueError("abstract inputs are not concrete inputs")
    return list(range(S2.n_inputs))


def _label(sys, x):
    return sys.state_labels[x] if sys.state_labels is not None else x


def check_frr(S1: FiniteSystem, S2: FiniteSystem, Q: Relation):
    """Ok if ``Q`` is a feedback refinement relation from S1 to S2, else the
    first Witness in (x1, x2, u) order, reported with state labels."""
    if Q.n_dom != S1.n_states or Q.n_cod != S2.n_states:
        raise ValueError("relation sizes do not match the systems")
    umap = _input_map(S1, S2)
    ulab = S2.input_labels or list(range(S2.n_inputs))
    for x1 in range(S1.n_states):
        if not Q.image(x1):
            return Witness(_label(S1, x1), None, None, "strictness")
    for x1, x2 in sorted(Q.pairs):
        for u in range(S2.n_inputs):
            succ2 = S2.successors(x2, u)
            if succ2.size == 0:
                continue
            succ1 = S1.successors(x1, umap[u])
            if succ1.size == 0:
                return Witness(_label(S1, x1), _label(S2, x2), ulab[u], "admissibility")
            allowed = set(succ2.tolist())
            for s in sorted(Q.image_of(succ1.tolist())):
                if s not in allowed:
                    return Witness(_label(S1, x1), _label(S2, x2), ulab[u], "dynamics", _label(S2, s))
    return Ok()


def check_transitivity_fixture(S1, S2, S3, Q: Relation, R: Relation):
    if not check_frr(S1, S2, Q):
        raise ValueError("first leg is not a feedback refinement relation")
    if not check_frr(S2, S3, R):
        raise ValueError("second leg is not a feedback refinement relation")
    res = check_frr(S1, S3, Q.then(R))
    assert res, f"composed relation fails: {res}"
    return res


# -- canonical cover construction ------------------------------------------------

def check_equal_preimage_condition(S3: FiniteSystem, Q: Relation):
    """Exhaustive check of the equal-preimage condition; returns None or a
    witness ``(x, x_tilde, x_prime, x_tilde_prime, u)``."""
    groups = {}
    for x in range(S3.n_states):
        pre = frozenset(Q.preimage(x))
        if pre:
            groups.setdefault(pre, []).append(x)
    cls_of = {x: frozenset(Q.preimage(x)) for x in range(S3.n_states)}
    for members in groups.values():
        for x in members:
            for u in range(S3.n_inputs):
                succ_x = set(S3.successors(x, u).tolist())
                if not succ_x:
                    continue
                for xt in members:
                    for xtp in S3.successors(xt, u).tolist():
                        if not cls_of[xtp]:
                            continue
                        for xp in groups[cls_of[xtp]]:
                            if xp not in succ_x:
                                return (x, xt, xp, xtp, u)
    return None


def canonicalize(S3: FiniteSystem, Q: Relation):
    """Canonical abstraction over the cover of preimages.

    States of the result are the distinct nonempty sets ``Q^-1(x)``
    (labels: sorted tuples of concrete ids), ordered by their label.
    Returns ``(S2, R)`` with ``R`` relating each cover cell to the states of
    ``S3`` sharing that preimage.
    """
    if Q.n_cod != S3.n_states:
        raise ValueError("relation codomain does not match S3")
    if not Q.is_strict():
        raise ValueError("relation must be strict")
    bad = check_equal_preimage_condition(S3, Q)
    if bad is not None:
        raise CanonicityError(bad)
    cells = sorted({tuple(Q.preimage(x)) for x in range(S3.n_states) if Q.preimage(x)})
    index = {c: i for i, c in enumerate(cells)}
    R = Relation(((index[tuple(Q.preimage(x))], x) for x in range(S3.n_states) if Q.preimage(x)),
                 len(cells), S3.n_states)
    Rinv = R.inverse()
    succ = []
    for i in range(len(cells)):
        row = []
        for u in range(S3.n_inputs):
            img = set()
            for x3 in R.image(i):
                img.update(S3.successors(x3, u).tolist())
            row.append(Rinv.image_of(img))
        succ.append(row)
    S2 = FiniteSystem.from_successors(succ, len(cells), S3.n_inputs, state_labels=cells,
                                      input_labels=S3.input_labels)
    return S2, R


def membership(S2: FiniteSystem, n_concrete: int) -> Relation:
    """The relation ``x1 in Omega`` for a system produced by :func:`canonicalize`."""
    return Relation(((x1, i) for i, cell in enumerate(S2.state_labels) for x1 in cell),
                    n_concrete, S2.n_states)


# -- behaviors -------------------------------------------------------------------

@dataclass(frozen=True)
class Behaviors:
    """Bounded view of a behavior: completed (blocked) traces of length at
    most ``horizon`` and all solution prefixes of length ``horizon``."""

    horizon: int
    finite: frozenset
    prefixes: frozenset

    def __le__(self, other: "Behaviors") -> bool:
        return self.finite <= other.finite and self.prefixes <= other.prefixes

    def all_traces(self):
        return self.finite | self.prefixes


def _runs(S: GeneralSystem, horizon: int, keep_states: bool):
    """Yield ``(blocked, trace, states)`` for every distinct run."""
    if horizon < 1:
        raise ValueError("horizon must be positive")
    frontier = {((), (x,)) if keep_states else ((), x) for x in S.X0}
    expansions = 0
    for t in range(horizon):
        nxt = set()
        for trace, st in frontier:
            x = st[-1] if keep_states else st
            for u in S.U:
                for y, v in S.H(x, u):
                    expansions += 1
                    if expansions > MAX_EXPANSIONS:
                        raise ExplosionError("behavior enumeration exceeded its budget")
                    tr = trace + ((u, y),)
                    succ = S.F(x, v)
                    if not succ:
                        yield True, tr, st
                    if t == horizon - 1:
                        if succ:
                            yield False, tr, st
                        continue
                    for xn in succ:
                        nxt.add((tr, st + (xn,)) if keep_states else (tr, xn))
        frontier = nxt


def behaviors(S: GeneralSystem, horizon: int) -> Behaviors:
    finite, prefixes = set(), set()
    for blocked, tr, _ in _runs(S, horizon, False):
        if blocked:
            finite.add(tr)
        if len(tr) == horizon:
            prefixes.add(tr)
    return Behaviors(horizon, frozenset(finite), frozenset(prefixes))


def check_behavioral_inclusion(C: GeneralSystem, S1: FiniteSystem, S2: FiniteSystem,
                               Q: Relation, horizon: int):
    """Bounded check of both behavioral inclusions for an FRR ``Q``.

    ``C`` reads abstract states (labels of ``S2``) and emits inputs of
    ``S2``.  Checks ``B(C x (Q o S1)) <= B(C x S2)`` and that every trace of
    ``(C o Q) x S1`` has a Q-related shadow trace of ``C x S2``.
    """
    G1 = GeneralSystem.from_finite(S1, "S1")
    G2 = GeneralSystem.from_finite(S2, "S2")
    lab1 = list(G1.X)
    lab2 = list(G2.X)
    abstract = feedback_compose(C, G2)
    if isinstance(abstract, Rejection):
        raise ValueError(f"controller is not feedback composable with S2: {abstract}")
    B = behaviors(abstract, horizon)
    loop1 = feedback_compose(C, quantize_output(Q, G1, lab2))
    if isinstance(loop1, Rejection):
        return CounterTrace("inclusion", ("not composable", loop1))
    A = behaviors(loop1, horizon)
    for tr in sorted(A.finite - B.finite, key=repr)[:1] + sorted(A.prefixes - B.prefixes, key=repr)[:1]:
        return CounterTrace("inclusion", tr)

    loop2 = feedback_compose(quantize_input(C, Q, lab1, lab2), G1)
    if isinstance(loop2, Rejection):
        return CounterTrace("shadow", ("not composable", loop2))
    idx1 = {x: i for i, x in enumerate(lab1)}
    idx2 = {x: i for i, x in enumerate(lab2)}
    shadows = {True: {}, False: {}}
    for blocked in (True, False):
        pool = B.finite if blocked else B.prefixes
        for tr in pool:
            key = tuple(y[0] for _, y in tr)
            shadows[blocked].setdefault(key, []).append(tuple(idx2[y[1]] for _, y in tr))
    for blocked, tr, _ in _runs(loop2, horizon, False):
        if not blocked and len(tr) < horizon:
            continue
        for bl in ([True] if blocked else []) + ([False] if len(tr) == horizon else []):
            key = tuple(y[0] for _, y in tr)
            xs = tuple(idx1[y[1]] for _, y in tr)
            cands = shadows[bl].get(key, [])
            if not any(all(b in Q.image(a) for a, b in zip(xs, c)) for c in cands):
                return CounterTrace("shadow", tr)
    return Ok()


# -- fixtures --------------------------------------------------------------------

@dataclass
class Fixture:
    systems: dict = field(default_factory=dict)
    relations: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)   # (kind, args...)


class FixtureError(ValueError):
    pass


def parse_fixture(text: str) -> Fixture:
    """Parse the plain-text fixture format (see the README for its grammar)."""
    fx = Fixture()
    lines = [(i + 1, ln.split("#", 1)[0].split()) for i, ln in enumerate(text.splitlines())]
    lines = [(n, toks) for n, toks in lines if toks]
    pos = 0

    def alphabet(ref):
        name, _, part = ref.partition(".")
        if name not in fx.systems:
            raise FixtureError(f"unknown system {name!r}")
        s = fx.systems[name]
        return s.input_labels if part == "inputs" else s.state_labels

    while pos < len(lines):
        n, toks = lines[pos]
        head = toks[0]
        if head == "system":
            if len(toks) != 2:
                raise FixtureError(f"line {n}: expected 'system NAME'")
            name = toks[1]
            states = inputs = None
            edges = []
            pos += 1
            while True:
                if pos >= len(lines):
                    raise FixtureError(f"system {name!r} is missing 'end'")
                m, t = lines[pos]
                pos += 1
                if t[0] == "end":
                    break
                if t[0] == "states":
                    states = t[1:]
                elif t[0] == "inputs":
                    inputs = t[1:]
                elif len(t) >= 3 and t[2] == "->":
                    edges.append((m, t[0], t[1], t[3:]))
                else:
                    raise FixtureError(f"line {m}: cannot parse {' '.join(t)!r}")
            if not states or not inputs:
                raise FixtureError(f"system {name!r} needs 'states' and 'inputs'")
            si = {s: i for i, s in enumerate(states)}
            ui = {u: i for i, u in enumerate(inputs)}
            succ = [[set() for _ in inputs] for _ in states]
            for m, x, u, targets in edges:
                if x not in si:
                    raise FixtureError(f"line {m}: unknown state {x!r}")
                us = range(len(inputs)) if u == "*" else [ui.get(u)]
                if None in us:
                    raise FixtureError(f"line {m}: unknown input {u!r}")
                for tgt in targets:
                    if tgt not in si:
                        raise FixtureError(f"line {m}: unknown state {tgt!r}")
                    for k in us:
                        succ[si[x]][k].add(si[tgt])
            fx.systems[name] = FiniteSystem.from_successors(
                succ, len(states), len(inputs), state_labels=states, input_labels=inputs)
        elif head == "relation":
            if len(toks) != 4:
                raise FixtureError(f"line {n}: expected 'relation NAME DOMAIN CODOMAIN'")
            name, dom, cod = toks[1:]
            dl, cl = alphabet(dom), alphabet(cod)
            di = {s: i for i, s in enumerate(dl)}
            ci = {s: i for i, s in enumerate(cl)}
            pairs = []
            pos += 1
            while True:
                if pos >= len(lines):
                    raise FixtureError(f"relation {name!r} is missing 'end'")
                m, t = lines[pos]
                pos += 1
                if t[0] == "end":
                    break
                if t[0] not in di or any(s not in ci for s in t[1:]):
                    raise FixtureError(f"line {m}: unknown symbol in {' '.join(t)!r}")
                pairs.extend((di[t[0]], ci[s]) for s in t[1:])
            fx.relations[name] = Relation(pairs, len(dl), len(cl))
        elif head == "check":
            if len(toks) < 2:
                raise FixtureError(f"line {n}: expected 'check KIND ARGS'")
            fx.checks.append(tuple(toks[1:]))
            pos += 1
        else:
            raise FixtureError(f"line {n}: unknown directive {head!r}")
    return fx


def run_fixture_checks(fx: Fixture) -> list:
    """Evaluate every ``check frr S1 S2 Q`` line; returns (args, result) pairs."""
    out = []
    for chk in fx.checks:
        if chk[0] != "frr" or len(chk) != 4:
            raise FixtureError(f"unsupported check {' '.join(chk)!r}")
        _, a, b, q = chk
        try:
            out.append((chk, check_frr(fx.systems[a], fx.systems[b], fx.relations[q])))
        except KeyError as e:
            raise FixtureError(f"unknown name {e.args[0]!r} in check") from None
    return out
