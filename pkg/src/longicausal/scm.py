"""Structural-equation simulator.

A model is an ordered list of node templates.  Each template carries a
distribution and parameter expressions written in a small arithmetic
language (see :func:`compile_expression`).  Instantiating a model for a
horizon ``T`` unrolls the timed templates into concrete nodes ``var.t``.

Randomness: subjects are processed in fixed-size chunks and every
(chunk, node) pair owns an independent generator derived from the master
seed, so results do not depend on execution order and a shorter horizon
reproduces a prefix of a longer one.  Every node consumes the same draws
whatever the simulation mode, which gives common random numbers across
observational and intervened runs.
"""
from __future__ import annotations

import ast
import json
import math
import operator
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Mapping

import numpy as np
from scipy.special import expit

from .longdata import (
    EVENT_ROLES,
    InterventionRule,
    LongitudinalDataset,
    Node,
    NodeSchema,
    Role,
    ValueKind,
    evaluate_rule,
    node_name,
)

CHUNK = 8192
DISTRIBUTIONS = {
    "bernoulli": ("p",),
    "uniform": ("a", "b"),
    "normal": ("mean", "sd"),
    "truncnormal": ("mean", "sd"),
}


class ExpressionError(ValueError):
    pass


class SupportError(ValueError):
    """A distribution parameter left its support for some subject."""


# ---------------------------------------------------------------- expressions

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv}
_CMPOPS = {
    ast.Lt: operator.lt,
    ast.LtE: operator.le,
    ast.Gt: operator.gt,
    ast.GtE: operator.ge,
    ast.Eq: operator.eq,
    ast.NotEq: operator.ne,
}
_FUNCS = {"log": np.log, "sqrt": np.sqrt, "exp": np.exp, "expit": expit, "abs": np.abs}

Resolver = Callable[[str, "int | None"], str]


def compile_expression(src: str, t: int, resolve: Resolver):
    """Compile ``src`` for time ``t`` into ``f(env) -> array``.

    Grammar: numbers, ``+ - * /``, ``**`` with a constant exponent,
    comparisons, ``and``/``or``/``not``, the functions log, sqrt, exp,
    expit, abs, ``I(cond)`` (indicator) and ``where(cond, a, b)``.  ``t`` is
    the current time.  ``X[k]`` refers to timed variable X at time k, where
    k is an integer expression in ``t``; a bare name refers to an untimed
    node.  ``resolve(var, time)`` maps a reference to a node name and
    raises :class:`ExpressionError` if that node is not defined earlier.
    Returns ``(function, referenced_names)``.
    """
    try:
        tree = ast.parse(str(src), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {src!r}: {exc.msg}") from None
    refs: set[str] = set()

    def static_int(node) -> int:
        value = build(node)(None)
        if not isinstance(value, (int, float)) or value != int(value):
            raise ExpressionError(f"time index in {src!r} must be an integer expression in t")
        return int(value)

    def build(node):
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            v = node.value
            return lambda env: v
        if isinstance(node, ast.Name):
            if node.id == "t":
                return lambda env: t
            name = resolve(node.id, None)
            refs.add(name)
            return lambda env: env[name]
        if isinstance(node, ast.Subscript) and isinstance(node.value, ast.Name):
            name = resolve(node.value.id, static_int(node.slice))
            refs.add(name)
            return lambda env: env[name]
        if isinstance(node, ast.BinOp):
            if isinstance(node.op, ast.Pow):
                if not isinstance(node.right, ast.Constant):
                    raise ExpressionError(f"exponent must be a constant in {src!r}")
                base, k = build(node.left), node.right.value
                return lambda env: base(env) ** k
            op = _BINOPS.get(type(node.op))
            if op is None:
                raise ExpressionError(f"operator {type(node.op).__name__} not allowed in {src!r}")
            left, right = build(node.left), build(node.right)
            return lambda env: op(left(env), right(env))
        if isinstance(node, ast.UnaryOp):
            inner = build(node.operand)
            if isinstance(node.op, ast.USub):
                return lambda env: -inner(env)
            if isinstance(node.op, ast.UAdd):
                return inner
            if isinstance(node.op, ast.Not):
                return lambda env: np.logical_not(inner(env))
        if isinstance(node, ast.Compare) and len(node.ops) == 1:
            op = _CMPOPS[type(node.ops[0])]
            left, right = build(node.left), build(node.comparators[0])
            return lambda env: op(left(env), right(env))
        if isinstance(node, ast.BoolOp):
            parts = [build(v) for v in node.values]
            combine = np.logical_and if isinstance(node.op, ast.And) else np.logical_or
            return lambda env: _reduce(combine, [p(env) for p in parts])
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and not node.keywords:
            fname, args = node.func.id, [build(a) for a in node.args]
            if fname == "I" and len(args) == 1:
                return lambda env: np.asarray(args[0](env), dtype=float)
            if fname == "where" and len(args) == 3:
                c, a, b = args
                return lambda env: np.where(c(env), a(env), b(env))
            if fname in _FUNCS and len(args) == 1:
                f, x = _FUNCS[fname], args[0]
                return lambda env: f(x(env))
            raise ExpressionError(f"unknown function {fname}/{len(args)} in {src!r}")
        raise ExpressionError(f"unsupported syntax {type(node).__name__} in {src!r}")

    return build(tree.body), frozenset(refs)


def _reduce(f, values):
    out = values[0]
    for v in values[1:]:
        out = f(out, v)
    return out


# ---------------------------------------------------------------- model

@dataclass(frozen=True)
class NodeSpec:
    """Template for one variable.

    ``times=None`` declares an untimed node named ``var`` (time 0);
    otherwise the node exists at every t in ``range(times[0], times[1]+1)``.
    """

    var: str
    dist: str
    params: Mapping[str, str]
    role: Role = Role.CONFOUNDER
    kind: ValueKind | None = None
    times: tuple[int, int] | None = None
    bounds: tuple[float, float] | None = None
    tails: tuple[float, float, float, float] | None = None
    observed: bool = True

    def __post_init__(self):
        if self.dist not in DISTRIBUTIONS:
            raise ValueError(f"{self.var}: unknown distribution {self.dist!r}")
        missing = set(DISTRIBUTIONS[self.dist]) - set(self.params)
        if missing:
            raise ValueError(f"{self.var}: missing parameters {sorted(missing)}")
        if self.dist == "truncnormal" and (self.bounds is None or self.tails is None):
            raise ValueError(f"{self.var}: truncnormal needs bounds and tails")
        object.__setattr__(self, "params", dict(self.params))
        object.__setattr__(self, "role", Role(self.role))
        kind = self.kind or (ValueKind.BINARY if self.dist == "bernoulli" else ValueKind.CONTINUOUS)
        object.__setattr__(self, "kind", ValueKind(kind))
        if self.times is not None:
            object.__setattr__(self, "times", tuple(int(x) for x in self.times))

    def covers(self, t: int) -> bool:
        if self.times is None:
            return t == 0
        return self.times[0] <= t <= self.times[1]

    def to_config(self) -> dict:
        cfg = {"var": self.var, "dist": self.dist, **self.params, "role": self.role.value, "kind": self.kind.value}
        if self.times is not None:
            cfg["times"] = list(self.times)
        if self.bounds is not None:
            cfg["bounds"] = list(self.bounds)
        if self.tails is not None:
            cfg["tails"] = list(self.tails)
        if not self.observed:
            cfg["observed"] = False
        return cfg

    @classmethod
    def from_config(cls, cfg: Mapping) -> "NodeSpec":
        cfg = dict(cfg)
        dist = cfg.pop("dist")
        params = {k: str(cfg.pop(k)) for k in DISTRIBUTIONS.get(dist, ()) if k in cfg}
        times = cfg.pop("times", None)
        if "time" in cfg:
            t0 = int(cfg.pop("time"))
            times = (t0, t0)
        return cls(
            var=cfg.pop("var"),
            dist=dist,
            params=params,
            role=cfg.pop("role", "confounder"),
            kind=cfg.pop("kind", None),
            times=tuple(times) if times is not None else None,
            bounds=tuple(cfg.pop("bounds")) if "bounds" in cfg else None,
            tails=tuple(cfg.pop("tails")) if "tails" in cfg else None,
            observed=bool(cfg.pop("observed", True)),
        )


@dataclass
class CompiledNode:
    name: str
    var: str
    time: int
    spec: NodeSpec
    params: dict

    def sample(self, env: dict, rng: np.random.Generator, m: int, offset: int):
        """Draw ``m`` values.  Returns (values, p) where p is the Bernoulli
        probability (None for other distributions)."""
        par = {k: np.broadcast_to(np.asarray(f(env), dtype=float), (m,)) for k, f in self.params.items()}
        dist = self.spec.dist
        if dist == "bernoulli":
            p = par["p"]
            self._check(p, (p >= 0) & (p <= 1), "p", "outside [0, 1]", offset)
            return (rng.random(m) < p).astype(float), p
        if dist == "uniform":
            a, b = par["a"], par["b"]
            self._check(a, np.isfinite(a) & np.isfinite(b) & (a <= b), "a", "exceeds b", offset)
            return a + (b - a) * rng.random(m), None
        mean, sd = par["mean"], par["sd"]
        self._check(mean, np.isfinite(mean), "mean", "is not finite", offset)
        self._check(sd, np.isfinite(sd) & (sd >= 0), "sd", "is negative or not finite", offset)
        x = mean + sd * rng.standard_normal(m)
        if dist == "normal":
            return x, None
        u = rng.random(m)
        lo, hi = self.spec.bounds
        a1, a2, b1, b2 = self.spec.tails
        below, above = x < lo, x > hi
        x = np.where(below, a1 + (a2 - a1) * u, x)
        x = np.where(above, b1 + (b2 - b1) * u, x)
        return x, None

    def _check(self, values, ok, what, problem, offset):
        bad = np.flatnonzero(~ok)
        if bad.size:
            i = int(bad[0])
            raise SupportError(
                f"node {self.name}: parameter {what}={values[i]!r} {problem} for subject {offset + i}"
            )


@dataclass(frozen=True)
class StructuralEquationModel:
    specs: tuple[NodeSpec, ...]
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "specs", tuple(self.specs))

    def instantiate(self, T: int) -> list[CompiledNode]:
        """Unroll templates for times 0..T in temporal (listing) order."""
        nodes: list[CompiledNode] = []
        defined: dict[tuple[str, int | None], str] = {}
        for t in range(T + 1):
            for spec in self.specs:
                if not spec.covers(t):
                    continue
                name = spec.var if spec.times is None else node_name(spec.var, t)

                def resolve(var, time, _name=name):
                    key = (var, time)
                    if key not in defined:
                        ref = var if time is None else node_name(var, time)
                        raise ExpressionError(f"{_name} references {ref}, which is not defined earlier")
                    return defined[key]

                params = {k: compile_expression(src, t, resolve)[0] for k, src in spec.params.items()}
                nodes.append(CompiledNode(name, spec.var, t, spec, params))
                defined[(spec.var, None if spec.times is None else t)] = name
        return nodes

    def schema(self, T: int) -> NodeSchema:
        """Schema of the observed columns."""
        out = []
        for nd in self.instantiate(T):
            if nd.spec.observed:
                role = Role.BASELINE if nd.time == 0 else nd.spec.role
                out.append(Node(nd.name, nd.var, nd.time, role, nd.spec.kind))
        return NodeSchema(tuple(out))

    def to_config(self) -> dict:
        return {"name": self.name, "nodes": [s.to_config() for s in self.specs]}

    @classmethod
    def from_config(cls, cfg: Mapping) -> "StructuralEquationModel":
        return cls(tuple(NodeSpec.from_config(n) for n in cfg["nodes"]), cfg.get("name", "custom"))


def load_sem(path) -> StructuralEquationModel:
    """Load a model from a JSON node-spec file."""
    with Path(path).open() as fh:
        return StructuralEquationModel.from_config(json.load(fh))


L1_TAILS = (0.0, 50.0, 5000.0, 10000.0)
L2_TAILS = (0.03, 0.09, 0.7, 0.8)
# A literal reading of the tail tuple is (-10, 3, 3, 10); only (-10, -3, 3, 10) reproduces
# the reference target values, so the lower tail is taken as negative.
Z_TAILS = (-10.0, -3.0, 3.0, 10.0)


def build_study_dgp(tails_l3y: tuple[float, float, float, float] = Z_TAILS, T: int = 12) -> StructuralEquationModel:
    """Simulation-study model: paediatric HIV cohort with CD4 count (L1),
    CD4% as a proportion (L2), weight-for-age z (L3) and height-for-age z (Y)."""
    tn = "truncnormal"
    dL1 = "(L1[t] - L1[t-1])"
    dL2 = "(L2[t] - L2[t-1])"
    dL3 = "(L3[t] - L3[t-1])"
    fu = (1, T)
    specs = [
        NodeSpec("V1", "bernoulli", {"p": "4392 / 5826"}, Role.BASELINE),
        NodeSpec("V2", "bernoulli", {"p": "where(V1 == 1, 2222 / 4392, 758 / 1434)"}, Role.BASELINE),
        NodeSpec("V3", "uniform", {"a": "1", "b": "5"}, Role.BASELINE),
        NodeSpec("L1", tn, {"mean": "where(V1 == 1, 650, 720)", "sd": "where(V1 == 1, 350, 400)"},
                 Role.BASELINE, times=(0, 0), bounds=(0, 10000), tails=L1_TAILS),
        NodeSpec("L1tilde", "normal", {"mean": "(L1[0] - 671.7468) / (10 * 352.2788) + 1", "sd": "0"},
                 Role.BASELINE, times=(0, 0), observed=False),
        NodeSpec("L2", tn, {"mean": "0.16 + 0.05 * (L1[0] - 650) / 650", "sd": "0.07"},
                 Role.BASELINE, times=(0, 0), bounds=(0.06, 0.8), tails=L2_TAILS),
        NodeSpec("L2tilde", "normal", {"mean": "(L2[0] - 0.1648594) / (10 * 0.06980332) + 1", "sd": "0"},
                 Role.BASELINE, times=(0, 0), observed=False),
        NodeSpec("L3", tn, {
            "mean": "where(V1 == 1, -1.65, -2.05) + 0.1 * V3 + 0.05 * (L1[0] - 650) / 650"
                    " + 0.05 * (L2[0] - 16) / 16",
            "sd": "1"}, Role.BASELINE, times=(0, 0), bounds=(-5, 5), tails=tails_l3y),
        NodeSpec("A", "bernoulli", {"p": "0"}, Role.TREATMENT, times=(0, 0), observed=False),
        NodeSpec("C", "bernoulli", {"p": "0"}, Role.CENSORING, times=(0, 0), observed=False),
        NodeSpec("Y", tn, {"mean": "-2.6 + 0.1 * I(V3 > 2) + 0.3 * I(V1 == 0) + (L3[0] + 1.45)", "sd": "1.1"},
                 Role.BASELINE, times=(0, 0), bounds=(-5, 5), tails=tails_l3y),
        # follow-up
        NodeSpec("L1", tn, {
            "mean": "where(t <= 4, 13, where(t <= 8, 4, 0)) * log(t * (1034 - 662) / 8)"
                    " + L1[t-1] + 2 * L2[t-1] + 2 * L3[t-1] + 2.5 * A[t-1]",
            "sd": "50"}, times=fu, bounds=(0, 10000), tails=L1_TAILS),
        NodeSpec("L2", tn, {
            "mean": f"L2[t-1] + 0.0003 * {dL1} + 0.0005 * L3[t-1] + 0.0005 * A[t-1] * L1tilde[0]",
            "sd": "0.02"}, times=fu, bounds=(0.06, 0.8), tails=L2_TAILS),
        NodeSpec("L3", tn, {
            "mean": f"L3[t-1] + 0.0017 * {dL1} + 0.2 * {dL2} + 0.005 * A[t-1] * L2tilde[0]",
            "sd": "0.5"}, times=fu, bounds=(-5, 5), tails=tails_l3y),
        NodeSpec("A", "bernoulli", {
            "p": "where(A[t-1] == 1, 1, expit(-2.4 + 0.015 * (750 - L1[t]) + 5 * (0.2 - L2[t])"
                 " - 0.8 * L3[t] + 0.8 * t))"}, Role.TREATMENT, times=fu),
        NodeSpec("C", "bernoulli", {
            "p": "expit(-6 + 0.01 * (750 - L1[t]) + 1 * (0.2 - L2[t]) - 0.65 * L3[t] - A[t])"},
            Role.CENSORING, times=fu),
        NodeSpec("Y", tn, {
            "mean": f"Y[t-1] + 0.00005 * {dL1} - 0.000001 * ({dL1} * sqrt(L1tilde[0])) ** 2"
                    f" + 0.01 * {dL2} - 0.0001 * ({dL2} * sqrt(L2tilde[0])) ** 2"
                    f" + 0.07 * ({dL3} * (L3[0] + 1.5135)) - 0.001 * ({dL3} * (L3[0] + 1.5135)) ** 2"
                    " + 0.005 * A[t] + 0.075 * A[t-1] + 0.05 * A[t] * A[t-1]",
            "sd": "0.01"}, Role.OUTCOME, times=fu, bounds=(-5, 5), tails=tails_l3y),
    ]
    return StructuralEquationModel(tuple(specs), name="study")


# ---------------------------------------------------------------- simulation

@dataclass(frozen=True)
class Observational:
    pass


@dataclass(frozen=True)
class Intervened:
    """Treatment set by ``rule`` from t = 1 on; censoring and death set to none."""

    rule: InterventionRule


@dataclass(frozen=True)
class NaturalTreatmentNoCensoring:
    pass


@dataclass(frozen=True)
class SimulationConfig:
    n: int
    T: int = 12
    seed: int = 0
    mode: Observational | Intervened | NaturalTreatmentNoCensoring = field(default_factory=Observational)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.T < 0:
            raise ValueError("T must be >= 0")


@dataclass
class _Chunk:
    start: int
    env: dict
    treat_prob: dict  # treatment node name -> P(A=1 | simulated history)


def _chunks(model: StructuralEquationModel, config: SimulationConfig, nodes=None) -> Iterator[_Chunk]:
    nodes = nodes if nodes is not None else model.instantiate(config.T)
    mode = config.mode
    prev_treat: dict[str, str | None] = {}
    last = None
    for nd in nodes:
        if nd.spec.role is Role.TREATMENT:
            prev_treat[nd.name] = last
            last = nd.name
    for c, start in enumerate(range(0, config.n, CHUNK)):
        m = min(CHUNK, config.n - start)
        env: dict = {}
        probs: dict = {}
        current: dict[int, dict] = {}
        for j, nd in enumerate(nodes):
            rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(c, j)))
            value, p = nd.sample(env, rng, m, start)
            role = nd.spec.role
            if role is Role.TREATMENT:
                probs[nd.name] = p
                if isinstance(mode, Intervened) and nd.spec.observed:
                    prior_name = prev_treat[nd.name]
                    prior = env[prior_name] if prior_name else np.zeros(m)
                    value = np.asarray(evaluate_rule(mode.rule, current.get(nd.time, {}), prior), dtype=float)
            elif role in EVENT_ROLES and nd.spec.observed:
                if isinstance(mode, Intervened) or (
                    isinstance(mode, NaturalTreatmentNoCensoring) and role is Role.CENSORING
                ):
                    value = np.zeros(m)
            else:
                current.setdefault(nd.time, {})[nd.var] = value
            env[nd.name] = value
        yield _Chunk(start, env, probs)


def _observed_block(nodes, env, m) -> np.ndarray:
    cols = []
    dropped = np.zeros(m, dtype=bool)
    for nd in nodes:
        if not nd.spec.observed:
            continue
        col = np.where(dropped, np.nan, env[nd.name])
        if nd.spec.role in EVENT_ROLES:
            dropped = dropped | (col == 1.0)
        cols.append(col)
    return np.column_stack(cols)


def iter_datasets(model: StructuralEquationModel, config: SimulationConfig) -> Iterator[LongitudinalDataset]:
    """Simulated data chunk by chunk (values after an event are missing)."""
    nodes = model.instantiate(config.T)
    schema = model.schema(config.T)
    for ch in _chunks(model, config, nodes):
        m = len(next(iter(ch.env.values())))
        yield LongitudinalDataset(schema, _observed_block(nodes, ch.env, m))


def simulate(model: StructuralEquationModel, config: SimulationConfig) -> LongitudinalDataset:
    blocks = [d.values for d in iter_datasets(model, config)]
    return LongitudinalDataset(model.schema(config.T), np.vstack(blocks))


def column_means(model: StructuralEquationModel, config: SimulationConfig) -> dict[str, float]:
    """Per-column means over non-missing values, streamed (no full dataset in memory)."""
    total = count = None
    names = None
    for d in iter_datasets(model, config):
        v = d.values
        ok = ~np.isnan(v)
        s, k = np.where(ok, v, 0.0).sum(axis=0), ok.sum(axis=0)
        total = s if total is None else total + s
        count = k if count is None else count + k
        names = d.schema.names
    with np.errstate(invalid="ignore", divide="ignore"):
        return dict(zip(names, (total / count).tolist()))


# ---------------------------------------------------------------- oracles

@dataclass(frozen=True)
class PsiEstimate:
    value: float
    mc_se: float
    n_mc: int

    def __float__(self):
        return self.value


def true_psi(
    model: StructuralEquationModel,
    rule: InterventionRule,
    t: int,
    n_mc: int = 1_000_000,
    seed: int = 1,
    outcome: str = "Y",
) -> PsiEstimate:
    """Monte Carlo mean of the outcome at ``t`` under ``rule`` with no censoring."""
    if n_mc < 100_000:
        raise ValueError("n_mc must be >= 1e5 for a truth estimate")
    config = SimulationConfig(n_mc, T=t, seed=seed, mode=Intervened(rule))
    name = node_name(outcome, t)
    s = ss = 0.0
    for ch in _chunks(model, config):
        y = ch.env[name]
        s += float(y.sum())
        ss += float(np.dot(y, y))
    mean = s / n_mc
    var = max(ss / n_mc - mean * mean, 0.0) * n_mc / (n_mc - 1)
    return PsiEstimate(mean, math.sqrt(var / n_mc), n_mc)


SUPPORT_POPULATIONS = ("adherent", "intervened")


def data_support(
    model: StructuralEquationModel,
    rule: InterventionRule,
    threshold: float = 0.025,
    n_mc: int = 100_000,
    T: int = 12,
    seed: int = 2,
    population: str = "adherent",
) -> float:
    """Fraction of true cumulative probabilities of following ``rule`` below ``threshold``.

    At each treatment time the probability of the rule's assignment is
    taken from the model's treatment equation.  ``population="adherent"``
    simulates the observational process and reports the fraction among
    subjects who stayed uncensored and on the rule through ``T``;
    ``"intervened"`` simulates under the rule and reports the fraction among
    all subjects.
    """
    if population not in SUPPORT_POPULATIONS:
        raise ValueError(f"population must be one of {SUPPORT_POPULATIONS}")
    if not 0 <= threshold <= 1:
        raise ValueError("threshold must lie in [0, 1]")
    nodes = model.instantiate(T)
    mode = Intervened(rule) if population == "intervened" else Observational()
    config = SimulationConfig(n_mc, T=T, seed=seed, mode=mode)
    treat = [nd for nd in nodes if nd.spec.role is Role.TREATMENT and nd.spec.observed]
    events = [nd for nd in nodes if nd.spec.role in EVENT_ROLES and nd.spec.observed]
    below = denom = 0
    for ch in _chunks(model, config, nodes):
        env = ch.env
        m = len(env[treat[0].name]) if treat else 0
        cum = np.ones(m)
        keep = np.ones(m, dtype=bool)
        prior = np.zeros(m)
        for nd in treat:
            cov = {x.var: env[x.name] for x in nodes
                   if x.time == nd.time and x.spec.role not in (Role.TREATMENT, *EVENT_ROLES)}
            d = np.asarray(evaluate_rule(rule, cov, prior), dtype=float)
            p1 = ch.treat_prob[nd.name]
            cum = cum * np.where(d == 1.0, p1, 1.0 - p1)
            keep &= env[nd.name] == d
            prior = d
        for nd in events:
            keep &= env[nd.name] == 0.0
        below += int(np.sum(keep & (cum < threshold)))
        denom += int(keep.sum())
    return below / denom if denom else float("nan")
