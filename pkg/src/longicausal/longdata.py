"""Wide-format longitudinal data, node schemas and treatment rules.

Every column of a dataset is a *node* with a role (baseline, confounder,
outcome, treatment, censoring, survival) and an integer time index.  Column
order is the temporal order.  Censoring and survival nodes are stored as
event indicators: 1.0 means the subject dropped out at that node (censored
or dead) and every later node is missing.
"""
from __future__ import annotations

import enum
import json
import operator
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd


class Role(str, enum.Enum):
    BASELINE = "baseline"
    CONFOUNDER = "confounder"
    OUTCOME = "outcome"
    TREATMENT = "treatment"
    CENSORING = "censoring"
    SURVIVAL = "survival"


class ValueKind(str, enum.Enum):
    BINARY = "binary"
    CONTINUOUS = "continuous"
    CATEGORICAL = "categorical"


INTERVENTION_ROLES = (Role.TREATMENT, Role.CENSORING, Role.SURVIVAL)
EVENT_ROLES = (Role.CENSORING, Role.SURVIVAL)


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class Node:
    name: str
    var: str
    time: int
    role: Role
    kind: ValueKind = ValueKind.CONTINUOUS


def _slice_order_ok(roles: list[Role]) -> bool:
    """Check role order inside one time slice.

    Accepted: confounders, then the outcome, then A, C, S (the classic
    ordering), or confounders, A, C, S with the outcome last (outcome
    measured after that period's treatment).
    """
    rank = {Role.CONFOUNDER: 0, Role.TREATMENT: 2, Role.CENSORING: 3, Role.SURVIVAL: 4}
    for y_rank in (1, 5):
        ranks = [y_rank if r is Role.OUTCOME else rank.get(r, 0) for r in roles]
        if all(a <= b for a, b in zip(ranks, ranks[1:])):
            return True
    return False


@dataclass(frozen=True)
class NodeSchema:
    nodes: tuple[Node, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        nodes = tuple(self.nodes)
        object.__setattr__(self, "nodes", nodes)
        index = {}
        for pos, node in enumerate(nodes):
            if node.name in index:
                raise SchemaError(f"duplicate node name {node.name!r}")
            index[node.name] = pos
        object.__setattr__(self, "_index", index)

        times = [n.time for n in nodes]
        if any(t < 0 for t in times):
            raise SchemaError("node times must be >= 0")
        if any(a > b for a, b in zip(times, times[1:])):
            raise SchemaError("nodes must be listed in non-decreasing time order")
        for node in nodes:
            if node.role is Role.BASELINE and node.time != 0:
                raise SchemaError(f"baseline node {node.name!r} must have time 0")
        for t in sorted(set(times)):
            slice_ = [n for n in nodes if n.time == t]
            for role in (Role.TREATMENT, Role.CENSORING, Role.SURVIVAL, Role.OUTCOME):
                if sum(n.role is role for n in slice_) > 1:
                    raise SchemaError(f"time {t} has more than one {role.value} node")
            roles = [n.role for n in slice_ if n.role is not Role.BASELINE]
            if not _slice_order_ok(roles):
                raise SchemaError(f"role order violated at time {t}: {[r.value for r in roles]}")

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    @property
    def names(self) -> list[str]:
        return [n.name for n in self.nodes]

    def position(self, name: str) -> int:
        return self._index[name]

    def node(self, name: str) -> Node:
        return self.nodes[self._index[name]]

    def find(self, var: str, time: int) -> Node | None:
        for n in self.nodes:
            if n.var == var and n.time == time:
                return n
        return None

    def by_role(self, role: Role) -> list[Node]:
        return [n for n in self.nodes if n.role is role]

    def role_at(self, role: Role, time: int) -> Node | None:
        for n in self.nodes:
            if n.role is role and n.time == time:
                return n
        return None

    @property
    def max_time(self) -> int:
        return max(n.time for n in self.nodes)

    @property
    def treatment_times(self) -> list[int]:
        return [n.time for n in self.by_role(Role.TREATMENT)]

    @property
    def intervention_times(self) -> list[int]:
        return sorted({n.time for n in self.nodes if n.role in INTERVENTION_ROLES})

    @classmethod
    def from_columns(
        cls,
        names: Sequence[str],
        *,
        treatment: str = "A",
        censoring: str = "C",
        survival: str = "S",
        outcome: str = "Y",
        kinds: Mapping[str, ValueKind] | None = None,
    ) -> "NodeSchema":
        """Infer roles from ``<var>.<t>`` column names.

        Columns without a time suffix and every time-0 column are baseline
        nodes.  ``kinds`` overrides the value kind per column name.
        """
        kinds = dict(kinds or {})
        nodes = []
        for name in names:
            var, time = split_name(name)
            if time == 0:
                role = Role.BASELINE
            elif var == treatment:
                role = Role.TREATMENT
            elif var == censoring:
                role = Role.CENSORING
            elif var == survival:
                role = Role.SURVIVAL
            elif var == outcome:
                role = Role.OUTCOME
            else:
                role = Role.CONFOUNDER
            kind = kinds.get(name)
            if kind is None:
                kind = ValueKind.BINARY if role in INTERVENTION_ROLES else ValueKind.CONTINUOUS
            nodes.append(Node(name, var, time, role, ValueKind(kind)))
        return cls(tuple(nodes))


_NAME_RE = re.compile(r"^(?P<var>.+)\.(?P<t>\d+)$")


def split_name(name: str) -> tuple[str, int]:
    m = _NAME_RE.match(name)
    if m is None:
        return name, 0
    return m.group("var"), int(m.group("t"))


def node_name(var: str, time: int) -> str:
    return f"{var}.{time}"


@dataclass(frozen=True)
class OutcomeScale:
    lower: float
    upper: float

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"outcome scale needs lower < upper, got ({self.lower}, {self.upper})")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def transform(self, y):
        return (np.asarray(y, dtype=float) - self.lower) / self.width

    def inverse(self, y_star):
        return np.asarray(y_star, dtype=float) * self.width + self.lower

    def contains(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return (y >= self.lower) & (y <= self.upper)

    @classmethod
    def from_data(cls, y, margin: float = 0.05) -> "OutcomeScale":
        y = np.asarray(y, dtype=float)
        y = y[np.isfinite(y)]
        lo, hi = float(y.min()), float(y.max())
        pad = margin * (hi - lo) if hi > lo else max(abs(lo), 1.0) * margin
        return cls(lo - pad, hi + pad)


@dataclass(frozen=True)
class LongitudinalDataset:
    schema: NodeSchema
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim != 2 or values.shape[1] != len(self.schema):
            raise ValueError(
                f"values must be (n, {len(self.schema)}), got {values.shape}"
            )
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.schema.position(name)]

    def take(self, rows) -> "LongitudinalDataset":
        return LongitudinalDataset(self.schema, self.values[np.asarray(rows)])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, columns=self.schema.names)

    def uncensored_through(self, position: int) -> np.ndarray:
        """Subjects with no censoring/death event at any node up to ``position``."""
        ok = np.ones(self.n, dtype=bool)
        for pos, node in enumerate(self.schema.nodes[: position + 1]):
            if node.role in EVENT_ROLES:
                ok &= self.values[:, pos] == 0.0
        return ok


@dataclass(frozen=True)
class Violation:
    subject: int
    node: str
    message: str


def validate(dataset: LongitudinalDataset, scale: OutcomeScale | None = None) -> list[Violation]:
    """Return one violation per offending (subject, node); empty when valid."""
    out: list[Violation] = []
    schema, x = dataset.schema, dataset.values
    missing = np.isnan(x)
    dropped = np.zeros(dataset.n, dtype=bool)
    for pos, node in enumerate(schema.nodes):
        col = x[:, pos]
        for i in np.flatnonzero(dropped & ~missing[:, pos]):
            out.append(Violation(int(i), node.name, "value present after censoring/death"))
        for i in np.flatnonzero(~dropped & missing[:, pos]):
            out.append(Violation(int(i), node.name, "missing value before any censoring/death"))
        live = ~dropped & ~missing[:, pos]
        if node.kind is ValueKind.BINARY:
            for i in np.flatnonzero(live & (col != 0.0) & (col != 1.0)):
                out.append(Violation(int(i), node.name, f"non-binary value {col[i]!r}"))
        elif not np.isfinite(col[live]).all():
            for i in np.flatnonzero(live & ~np.isfinite(col)):
                out.append(Violation(int(i), node.name, "non-finite value"))
        if node.role is Role.OUTCOME and scale is not None:
            for i in np.flatnonzero(live & ~scale.contains(col)):
                out.append(Violation(int(i), node.name, f"outcome {col[i]!r} outside scale"))
        if node.role in EVENT_ROLES:
            dropped = dropped | (~missing[:, pos] & (col == 1.0))
    return out


# ---------------------------------------------------------------- rules

_COMPARATORS = {
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
}


@dataclass(frozen=True)
class Clause:
    var: str
    cmp: str
    threshold: float

    def __post_init__(self):
        if self.cmp not in _COMPARATORS:
            raise ValueError(f"unknown comparator {self.cmp!r}")


@dataclass(frozen=True)
class InterventionRule:
    """Treatment rule; clauses are OR-combined.

    Censoring and survival are always set to "uncensored"/"alive".
    """

    clauses: tuple[Clause, ...] = ()
    sticky: bool = False
    static_value: int | None = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "clauses", tuple(self.clauses))
        if self.static_value is not None:
            if self.clauses:
                raise ValueError("a static rule cannot have clauses")
            if self.static_value not in (0, 1):
                raise ValueError("static_value must be 0 or 1")
        elif not self.clauses:
            raise ValueError("rule needs clauses or a static value")

    @property
    def variables(self) -> list[str]:
        return [c.var for c in self.clauses]

    @classmethod
    def static(cls, value: int, name: str = "") -> "InterventionRule":
        return cls(static_value=value, name=name)

    @classmethod
    def from_config(cls, config: Mapping, name: str = "") -> "InterventionRule":
        name = config.get("name", name)
        if "static" in config:
            return cls.static(int(config["static"]), name=name)
        clauses = tuple(
            Clause(c["var"], c["cmp"], float(c["thr"])) for c in config["clauses"]
        )
        return cls(clauses, sticky=bool(config.get("sticky", False)), name=name)

    def to_config(self) -> dict:
        if self.static_value is not None:
            cfg = {"static": self.static_value}
        else:
            cfg = {
                "clauses": [{"var": c.var, "cmp": c.cmp, "thr": c.threshold} for c in self.clauses],
                "sticky": self.sticky,
            }
        if self.name:
            cfg["name"] = self.name
        return cfg

    def __call__(self, covariates, prior_treatment=0):
        return evaluate_rule(self, covariates, prior_treatment)


def evaluate_rule(rule: InterventionRule, covariates_at_t: Mapping, prior_treatment=0):
    """Treatment assigned by ``rule`` given covariates at the current time.

    Works elementwise on arrays.  Missing (NaN) covariates never satisfy
    a clause.
    """
    if rule.static_value is not None:
        shape = np.shape(prior_treatment)
        if shape == ():
            return rule.static_value
        return np.full(shape, float(rule.static_value))
    for c in rule.clauses:
        if c.var not in covariates_at_t:
            raise KeyError(f"rule references unknown covariate {c.var!r}")
    prior = np.asarray(prior_treatment, dtype=float)
    hit = rule.sticky & (prior == 1.0)
    for c in rule.clauses:
        value = np.asarray(covariates_at_t[c.var], dtype=float)
        with np.errstate(invalid="ignore"):
            hit = hit | _COMPARATORS[c.cmp](value, c.threshold)
    if np.ndim(hit) == 0:
        return int(hit)
    return hit.astype(float)


def study_rules() -> dict[str, InterventionRule]:
    """Rules d1..d4 of the simulation study (CD4% on the proportion scale)."""

    def threshold_rule(cd4, pct, name):
        return InterventionRule(
            (Clause("L1", "<", cd4), Clause("L2", "<", pct), Clause("L3", "<", -2.0)),
            sticky=True,
            name=name,
        )

    return {
        "d1": InterventionRule.static(1, name="d1"),
        "d2": threshold_rule(750.0, 0.25, "d2"),
        "d3": threshold_rule(350.0, 0.15, "d3"),
        "d4": InterventionRule.static(0, name="d4"),
    }


def load_rule(spec: str) -> InterventionRule:
    """Named study rule (``d1``..``d4``) or a JSON rule file."""
    rules = study_rules()
    if spec in rules:
        return rules[spec]
    path = Path(spec)
    with path.open() as fh:
        return InterventionRule.from_config(json.load(fh), name=path.stem)


def covariates_at(dataset: LongitudinalDataset, time: int) -> dict[str, np.ndarray]:
    """Map of variable name to column for every non-intervention node at ``time``."""
    out = {}
    for pos, node in enumerate(dataset.schema.nodes):
        if node.time == time and node.role not in INTERVENTION_ROLES:
            out[node.var] = dataset.values[:, pos]
    return out


def _prior_column(dataset: LongitudinalDataset, var: str, time: int) -> np.ndarray:
    node = dataset.schema.find(var, time)
    if node is None:
        return np.zeros(dataset.n)
    return np.nan_to_num(dataset.column(node.name), nan=0.0)


def rule_matrix(dataset: LongitudinalDataset, rule: InterventionRule) -> np.ndarray:
    """Rule-assigned treatment at every treatment node, shape (n, n_treatment_nodes).

    Evaluated on observed covariates at each time; the prior treatment fed
    to sticky rules is the rule's own previous assignment.
    """
    schema = dataset.schema
    treat = schema.by_role(Role.TREATMENT)
    out = np.empty((dataset.n, len(treat)))
    prior = None
    for j, node in enumerate(treat):
        if prior is None:
            prior = _prior_column(dataset, node.var, node.time - 1)
        cov = covariates_at(dataset, node.time)
        d = evaluate_rule(rule, cov, prior)
        out[:, j] = d
        prior = out[:, j]
    return out


def rule_adherence_mask(dataset: LongitudinalDataset, rule: InterventionRule) -> np.ndarray:
    """Boolean (n, n_treatment_times) matrix of adherence through each treatment time.

    Entry (i, j) is true iff subject i has no censoring/death event at any
    node with time <= t_j and every observed treatment up to t_j equals the
    rule assignment.  Columns follow ``schema.treatment_times``.
    """
    schema = dataset.schema
    d = rule_matrix(dataset, rule)
    treat = schema.by_role(Role.TREATMENT)
    ok = np.ones(dataset.n, dtype=bool)
    out = np.zeros((dataset.n, len(treat)), dtype=bool)
    events = [(pos, n.time) for pos, n in enumerate(schema.nodes) if n.role in EVENT_ROLES]
    for j, node in enumerate(treat):
        ok = ok & (dataset.column(node.name) == d[:, j])
        for pos, time in events:
            if time <= node.time:
                ok = ok & (dataset.values[:, pos] == 0.0)
        out[:, j] = ok
    return out


# ---------------------------------------------------------------- csv io

_EVENT_LABELS = {
    Role.CENSORING: ("uncensored", "censored"),
    Role.SURVIVAL: ("alive", "dead"),
}


def read_csv(
    path,
    *,
    treatment: str = "A",
    censoring: str = "C",
    survival: str = "S",
    outcome: str = "Y",
) -> LongitudinalDataset:
    frame = pd.read_csv(path, keep_default_na=True)
    schema = NodeSchema.from_columns(
        list(frame.columns),
        treatment=treatment,
        censoring=censoring,
        survival=survival,
        outcome=outcome,
    )
    cols = []
    kinds = {}
    for node in schema.nodes:
        col = frame[node.name]
        if node.role in _EVENT_LABELS:
            no, yes = _EVENT_LABELS[node.role]
            mapped = col.map({no: 0.0, yes: 1.0, 0: 0.0, 1: 1.0, "0": 0.0, "1": 1.0})
            bad = col.notna() & mapped.isna()
            if bad.any():
                raise ValueError(f"column {node.name!r} has labels other than {no!r}/{yes!r}")
            cols.append(mapped.to_numpy(dtype=float))
            continue
        values = pd.to_numeric(col, errors="raise").to_numpy(dtype=float)
        seen = values[~np.isnan(values)]
        if node.role is not Role.OUTCOME and seen.size and np.isin(seen, (0.0, 1.0)).all():
            kinds[node.name] = ValueKind.BINARY
        cols.append(values)
    if kinds:
        schema = NodeSchema(
            tuple(
                Node(n.name, n.var, n.time, n.role, kinds.get(n.name, n.kind))
                for n in schema.nodes
            )
        )
    values = np.column_stack(cols) if cols else np.empty((len(frame), 0))
    return LongitudinalDataset(schema, values)


def write_csv(dataset: LongitudinalDataset, path) -> None:
    frame = {}
    for pos, node in enumerate(dataset.schema.nodes):
        col = dataset.values[:, pos]
        if node.role in _EVENT_LABELS:
            no, yes = _EVENT_LABELS[node.role]
            frame[node.name] = pd.Series(np.where(col == 1.0, yes, no), dtype=object).where(
                ~np.isnan(col), None
            )
        elif node.kind is ValueKind.BINARY:
            ints = np.where(np.isnan(col), 0, col).astype(int)
            frame[node.name] = pd.Series(ints, dtype="Int64").mask(np.isnan(col))
        else:
            frame[node.name] = col
    pd.DataFrame(frame).to_csv(path, index=False, na_rep="")
