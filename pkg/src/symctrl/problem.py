"""Problem files and on-disk artifacts.

Problem files are YAML documents; numeric entries may be arithmetic
expressions over ``pi`` and ``deg`` (one degree in radians), for example
``-34*pi/35`` or ``0.25*deg``.  See the README for the full grammar.
"""
from __future__ import annotations

import ast
import io
import itertools
import json
import operator
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .abstraction import AbstractionSpec
from .core import KINDS, BoxRegion, ControlProblem, FiniteSystem, UniformGridCover
from .odeint import SamplingConfig
from .plants import BUILTIN, affine_plant
from .runtime import PerturbationConfig
from .synthesis import Controller


class SchemaError(ValueError):
    pass


# -- numeric expressions ------------------------------------------------------

_CONST = {"pi": np.pi, "deg": np.pi / 180}
_BIN = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
        ast.Div: operator.truediv, ast.Pow: operator.pow}
_UN = {ast.USub: operator.neg, ast.UAdd: operator.pos}


def _eval(node):
    if isinstance(node, ast.Expression):
        return _eval(node.body)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
            and not isinstance(node.value, bool):
        return float(node.value)
    if isinstance(node, ast.Name) and node.id in _CONST:
        return _CONST[node.id]
    if isinstance(node, ast.BinOp) and type(node.op) in _BIN:
        return _BIN[type(node.op)](_eval(node.left), _eval(node.right))
    if isinstance(node, ast.UnaryOp) and type(node.op) in _UN:
        return _UN[type(node.op)](_eval(node.operand))
    raise SchemaError(f"unsupported expression element {ast.dump(node)}")


def number(v, what="value") -> float:
    if isinstance(v, bool):
        raise SchemaError(f"{what}: expected a number, got a boolean")
    if isinstance(v, (int, float)):
        return float(v)
    if isinstance(v, str):
        try:
            tree = ast.parse(v.strip(), mode="eval")
        except SyntaxError as e:
            raise SchemaError(f"{what}: cannot parse {v!r}") from e
        return _eval(tree)
    raise SchemaError(f"{what}: expected a number, got {v!r}")


def vector(v, what, n=None) -> np.ndarray:
    if not isinstance(v, (list, tuple)):
        raise SchemaError(f"{what}: expected a list")
    out = np.array([number(x, what) for x in v], dtype=float)
    if n is not None and out.size != n:
        raise SchemaError(f"{what}: expected {n} entries, got {out.size}")
    return out


def matrix(v, what, rows=None, cols=None) -> np.ndarray:
    if not isinstance(v, (list, tuple)) or not v:
        raise SchemaError(f"{what}: expected a nonempty list of rows")
    out = np.array([vector(r, what) for r in v])
    if out.ndim != 2 or (rows is not None and out.shape[0] != rows) \
            or (cols is not None and out.shape[1] != cols):
        raise SchemaError(f"{what}: inconsistent shape")
    return out


def _need(d, key, where):
    if not isinstance(d, dict) or key not in d:
        raise SchemaError(f"{where}: missing key {key!r}")
    return d[key]


def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise SchemaError(f"{where}: expected a mapping")
    extra = set(d) - set(allowed)
    if extra:
        raise SchemaError(f"{where}: unknown keys {sorted(extra)}")


# -- problem -------------------------------------------------------------------

@dataclass
class Problem:
    name: str
    plant: object
    grid: UniformGridCover
    inputs: np.ndarray
    cfg: SamplingConfig
    L: object
    w: np.ndarray
    spec: ControlProblem
    perturbation: PerturbationConfig
    subdivision: np.ndarray | None = None
    overflow_policy: str = "keep"
    avoid_policy: str = "source"
    initial_states: np.ndarray | None = None
    horizon: int = 100
    runs: int = 1
    cycles: int = 1
    seed: int = 0
    raw: dict = field(default_factory=dict, repr=False)

    def abstraction_spec(self, beta_scale: float = 1.0) -> AbstractionSpec:
        return AbstractionSpec(self.grid, self.inputs, self.plant.vf, self.L, self.w, self.cfg,
                               blocked_cells=self.spec.avoid_cells(self.grid),
                               subdivision=self.subdivision, beta_scale=beta_scale,
                               overflow_policy=self.overflow_policy,
                               avoid_policy=self.avoid_policy)

    def sample_initial(self, rng) -> np.ndarray:
        """A starting state: the listed states in turn, else uniform in the
        first initial box."""
        if self.initial_states is not None:
            return self.initial_states[int(rng.integers(len(self.initial_states)))].copy()
        if self.spec.initial is None or not self.spec.initial.boxes:
            raise SchemaError("problem has no initial region to sample from")
        for _ in range(10000):
            lb, ub = self.spec.initial.boxes[int(rng.integers(len(self.spec.initial.boxes)))]
            x = rng.uniform(lb, ub)
            if self.spec.initial.contains(x)[0]:
                return x
        raise SchemaError("could not sample the initial region")


def _region(d, dim, functions, where) -> BoxRegion:
    _check_keys(d, ("boxes", "complement", "constraints"), where)
    boxes = []
    for i, b in enumerate(_need(d, "boxes", where)):
        if not isinstance(b, (list, tuple)) or len(b) != 2:
            raise SchemaError(f"{where}.boxes[{i}]: expected [lower, upper]")
        lb, ub = vector(b[0], f"{where}.boxes[{i}]", dim), vector(b[1], f"{where}.boxes[{i}]", dim)
        if np.any(lb > ub):
            raise SchemaError(f"{where}.boxes[{i}]: lower bound exceeds upper bound")
        boxes.append((lb, ub))
    cons = []
    for c in d.get("constraints", []) or []:
        _check_keys(c, ("function", "min"), f"{where}.constraints")
        fn = _need(c, "function", where)
        if fn not in functions:
            raise SchemaError(f"{where}: unknown function {fn!r}")
        cons.append((functions[fn], number(_need(c, "min", where), where)))
    return BoxRegion(boxes, complement=bool(d.get("complement", False)), constraints=cons)


def _inputs(d, m) -> np.ndarray:
    if isinstance(d, list):
        return matrix(d, "inputs", cols=m)
    _check_keys(d, ("list", "product"), "inputs")
    if "list" in d:
        return matrix(d["list"], "inputs.list", cols=m)
    axes = _need(d, "product", "inputs")
    if not isinstance(axes, list) or len(axes) != m:
        raise SchemaError(f"inputs.product: expected {m} axes")
    vals = []
    for i, a in enumerate(axes):
        if isinstance(a, dict):
            _check_keys(a, ("linspace",), f"inputs.product[{i}]")
            lo, hi, k = _need(a, "linspace", f"inputs.product[{i}]")
            vals.append(np.linspace(number(lo), number(hi), int(k)))
        else:
            vals.append(vector(a, f"inputs.product[{i}]"))
    return np.array(list(itertools.product(*vals)), dtype=float)


TOP_KEYS = ("name", "plant", "affine", "grid", "inputs", "tau", "substeps", "lipschitz", "w",
            "abstraction", "spec", "perturbation", "simulation", "seed")


def load_problem(doc) -> Problem:
    """Build a :class:`Problem` from a parsed YAML mapping."""
    _check_keys(doc, TOP_KEYS, "problem")
    pname = _need(doc, "plant", "problem")
    if pname == "custom-affine":
        aff = _need(doc, "affine", "problem")
        _check_keys(aff, ("A", "B", "c"), "affine")
        A = matrix(_need(aff, "A", "affine"), "affine.A")
        B = matrix(_need(aff, "B", "affine"), "affine.B", rows=A.shape[0])
        c = vector(aff["c"], "affine.c", A.shape[0]) if "c" in aff else None
        plant = affine_plant(A, B, c)
    elif pname in BUILTIN:
        plant = BUILTIN[pname]
    else:
        raise SchemaError(f"unknown plant {pname!r}")
    n, m = plant.dim, plant.input_dim

    g = _need(doc, "grid", "problem")
    _check_keys(g, ("first_center", "eta", "counts", "periodic", "inflation"), "grid")
    counts = _need(g, "counts", "grid")
    if not isinstance(counts, list) or len(counts) != n or \
            not all(isinstance(k, int) and not isinstance(k, bool) and k > 0 for k in counts):
        raise SchemaError(f"grid.counts: expected {n} positive integers")
    periodic = g.get("periodic", [False] * n)
    if not isinstance(periodic, list) or len(periodic) != n or \
            not all(isinstance(p, bool) for p in periodic):
        raise SchemaError(f"grid.periodic: expected {n} booleans")
    try:
        grid = UniformGridCover(vector(_need(g, "first_center", "grid"), "grid.first_center", n),
                                vector(_need(g, "eta", "grid"), "grid.eta", n), counts, periodic,
                                vector(g.get("inflation", [0] * n), "grid.inflation", n))
    except ValueError as e:
        raise SchemaError(f"grid: {e}") from e

    inputs = _inputs(_need(doc, "inputs", "problem"), m)
    tau = number(_need(doc, "tau", "problem"), "tau")
    substeps = doc.get("substeps", 5)
    if not isinstance(substeps, int) or substeps < 1 or tau <= 0:
        raise SchemaError("tau must be positive and substeps a positive integer")
    cfg = SamplingConfig(tau, substeps)

    lip = doc.get("lipschitz", "builtin")
    if lip == "builtin":
        L = plant.lipschitz
    else:
        Lm = matrix(lip, "lipschitz", rows=n, cols=n)
        off = Lm - np.diag(np.diag(Lm))
        if np.any(off < 0):
            raise SchemaError("lipschitz: off-diagonal entries must be nonnegative")
        L = lambda u, Lm=Lm: Lm
    w = vector(doc.get("w", [0] * n), "w", n)
    if np.any(w < 0):
        raise SchemaError("w must be nonnegative")

    ab = doc.get("abstraction", {}) or {}
    _check_keys(ab, ("subdivision", "overflow_policy", "avoid_policy"), "abstraction")
    sub = ab.get("subdivision")
    if sub is not None and (not isinstance(sub, list) or len(sub) != n
                            or not all(isinstance(s, int) and s >= 1 for s in sub)):
        raise SchemaError(f"abstraction.subdivision: expected {n} positive integers")
    overflow_policy = ab.get("overflow_policy", "keep")
    avoid_policy = ab.get("avoid_policy", "source")
    if overflow_policy not in ("keep", "block") or avoid_policy not in ("source", "touch"):
        raise SchemaError("abstraction: unknown policy")

    sp = _need(doc, "spec", "problem")
    _check_keys(sp, ("kind", "avoid", "targets", "initial"), "spec")
    kind = _need(sp, "kind", "spec")
    if kind not in KINDS:
        raise SchemaError(f"spec.kind: expected one of {KINDS}")
    funcs = plant.functions
    avoid = _region(sp["avoid"], n, funcs, "spec.avoid") if sp.get("avoid") else None
    targets = [_region(t, n, funcs, f"spec.targets[{i}]") for i, t in enumerate(sp.get("targets", []) or [])]
    initial = _region(sp["initial"], n, funcs, "spec.initial") if sp.get("initial") else None
    try:
        problem = ControlProblem(kind, avoid, targets, initial)
    except ValueError as e:
        raise SchemaError(f"spec: {e}") from e

    pe = doc.get("perturbation", {}) or {}
    _check_keys(pe, ("p1", "p2"), "perturbation")
    p1 = vector(pe["p1"], "perturbation.p1", m) if "p1" in pe else None
    p2 = vector(pe["p2"], "perturbation.p2", n) if "p2" in pe else None
    try:
        pert = PerturbationConfig(p1, p2, plant.input_bounds)
        pert.validate(grid)
    except ValueError as e:
        raise SchemaError(f"perturbation: {e}") from e

    sim = doc.get("simulation", {}) or {}
    _check_keys(sim, ("initial_states", "horizon", "runs", "cycles"), "simulation")
    x0 = matrix(sim["initial_states"], "simulation.initial_states", cols=n) \
        if "initial_states" in sim else None
    ints = {}
    for k, dflt in (("horizon", 100), ("runs", 1), ("cycles", 1)):
        v = sim.get(k, dflt)
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise SchemaError(f"simulation.{k}: expected a positive integer")
        ints[k] = v
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise SchemaError("seed: expected an integer")
    return Problem(str(doc.get("name", pname)), plant, grid, inputs, cfg, L, w, problem, pert,
                   None if sub is None else np.array(sub), overflow_policy, avoid_policy, x0,
                   ints["horizon"], ints["runs"], ints["cycles"], seed, doc)


def read_problem(path) -> Problem:
    """Load a problem from a path, or from a bundled problem by bare name
    (``vehicle``, ``aircraft``, ...)."""
    p = Path(path)
    if not p.exists() and p.suffix == "" and p.parent == Path("."):
        p = resources.files("symctrl") / "problems" / f"{path}.yaml"
        if not p.is_file():
            raise SchemaError(f"no problem file or bundled problem named {path!r}")
    try:
        doc = yaml.safe_load(p.read_text())
    except yaml.YAMLError as e:
        raise SchemaError(f"{path}: invalid YAML: {e}") from e
    return load_problem(doc)


# -- transitions artifact ---------------------------------------------------------

TRANSITIONS_MAGIC = b"symctrl-transitions 1\n"


def _header_line(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n").encode()


def save_transitions(sys: FiniteSystem, path) -> None:
    """Box-mode system as: magic line, JSON header line, then the
    ``blocked``, ``lo``, ``hi`` and ``overflow`` arrays in ``.npy`` format."""
    if not sys.is_box:
        raise ValueError("only box-mode systems can be saved")
    buf = io.BytesIO()
    buf.write(TRANSITIONS_MAGIC)
    buf.write(_header_line({"grid": sys.grid.params(), "n_inputs": sys.n_inputs}))
    for a in (sys.blocked, sys.lo, sys.hi, sys.overflow):
        np.save(buf, np.ascontiguousarray(a), allow_pickle=False)
    Path(path).write_bytes(buf.getvalue())


def load_transitions(path) -> FiniteSystem:
    with open(path, "rb") as f:
        if f.readline() != TRANSITIONS_MAGIC:
            raise SchemaError(f"{path}: not a transitions file")
        head = json.loads(f.readline())
        grid = UniformGridCover(**head["grid"])
        arrays = [np.load(f, allow_pickle=False) for _ in range(4)]
    blocked, lo, hi, over = arrays
    return FiniteSystem(grid.n_cells, head["n_inputs"], grid=grid, lo=lo, hi=hi,
                        blocked=blocked, overflow=over)


# -- controller file -------------------------------------------------------------

CONTROLLER_MAGIC = "symctrl-controller 1"


def dump_controller(ctrl: Controller) -> str:
    """Text form: magic line, JSON header line, then one record
    ``cell target rank input_ids...`` per domain cell and target."""
    head = {"grid": ctrl.grid.params(), "inputs": ctrl.inputs.tolist(), "kind": ctrl.kind,
            "n_inputs": ctrl.n_inputs, "n_targets": ctrl.n_targets,
            "domain_sizes": [len(t[0]) for t in ctrl.tables]}
    lines = [CONTROLLER_MAGIC, json.dumps(head, sort_keys=True, separators=(",", ":"))]
    for i, (cells, ranks, allowed) in enumerate(ctrl.tables):
        for c, r, a in zip(cells, ranks, allowed):
            lines.append(" ".join([str(int(c)), str(i), str(int(r))] + [str(int(u)) for u in np.flatnonzero(a)]))
    return "\n".join(lines) + "\n"


def parse_controller(text: str) -> Controller:
    lines = text.splitlines()
    if not lines or lines[0] != CONTROLLER_MAGIC:
        raise SchemaError("not a controller file")
    try:
        head = json.loads(lines[1])
        m, k = int(head["n_inputs"]), int(head["n_targets"])
        sizes = head["domain_sizes"]
        tables = [([], [], []) for _ in range(k)]
        for ln in lines[2:]:
            f = [int(t) for t in ln.split()]
            row = np.zeros(m, dtype=bool)
            row[f[3:]] = True
            t = tables[f[1]]
            t[0].append(f[0])
            t[1].append(f[2])
            t[2].append(row)
        if [len(t[0]) for t in tables] != sizes:
            raise SchemaError("controller file is truncated")
        grid = UniformGridCover(**head["grid"])
        tables = [(np.array(c, dtype=np.int64), np.array(r, dtype=np.int64),
                   np.array(a, dtype=bool).reshape(len(c), m)) for c, r, a in tables]
        return Controller(head["kind"], m, tables, grid=grid, inputs=head["inputs"])
    except (KeyError, IndexError, ValueError, TypeError) as e:
        if isinstance(e, SchemaError):
            raise
        raise SchemaError(f"malformed controller file: {e}") from e


def save_controller(ctrl: Controller, path) -> None:
    Path(path).write_text(dump_controller(ctrl))


def load_controller(path) -> Controller:
    return parse_controller(Path(path).read_text())
