"""
Plans - Operator trees for the executor and the canned query suite

Leaves are always sequential scans; there is no optimizer, a plan runs
exactly as it is written.
"""
import operator
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, List, Optional, Tuple, Union

from errors import PlanInvalid
from storage.page_format import COLUMNS

LINEITEM = "lineitem"
ORDERS = "orders"

# Generator median: quantity is uniform over 1..50
MEDIAN_QUANTITY = 26


class CompareOp(str, Enum):
    LT = "<"
    LE = "<="
    GT = ">"
    GE = ">="
    EQ = "=="
    NE = "!="

    @property
    def fn(self) -> Callable:
        return _COMPARE[self]


_COMPARE = {
    CompareOp.LT: operator.lt,
    CompareOp.LE: operator.le,
    CompareOp.GT: operator.gt,
    CompareOp.GE: operator.ge,
    CompareOp.EQ: operator.eq,
    CompareOp.NE: operator.ne,
}


@dataclass(frozen=True)
class Predicate:
    column: str
    op: CompareOp
    value: int

    def bind(self, schema: Tuple[str, ...]) -> Callable[[tuple], bool]:
        idx = schema.index(self.column)
        fn, value = CompareOp(self.op).fn, self.value
        return lambda row: fn(row[idx], value)

    def __str__(self):
        return f"{self.column} {CompareOp(self.op).value} {self.value}"


class AggFunc(str, Enum):
    SUM = "sum"
    COUNT = "count"
    AVG = "avg"


@dataclass(frozen=True)
class SeqScan:
    rel: str
    predicate: Optional[Predicate] = None

    kind = "SeqScan"

    def children(self) -> tuple:
        return ()

    def schema(self) -> Tuple[str, ...]:
        return COLUMNS


@dataclass(frozen=True)
class Aggregate:
    func: AggFunc
    column: Optional[str]
    child: "PlanNode"

    kind = "Aggregate"

    def children(self) -> tuple:
        return (self.child,)

    def schema(self) -> Tuple[str, ...]:
        func = AggFunc(self.func).value
        return (f"{func}_{self.column}" if self.column else func,)


@dataclass(frozen=True)
class Sort:
    column: str
    child: "PlanNode"

    kind = "Sort"

    def children(self) -> tuple:
        return (self.child,)

    def schema(self) -> Tuple[str, ...]:
        return self.child.schema()


@dataclass(frozen=True)
class HashJoin:
    """Inner equi-join; output rows are the probe row followed by the build row"""
    build: "PlanNode"
    probe: "PlanNode"
    key: str

    kind = "Join"

    def children(self) -> tuple:
        return (self.build, self.probe)

    def schema(self) -> Tuple[str, ...]:
        prefix = self.build.rel if isinstance(self.build, SeqScan) else "build"
        return self.probe.schema() + tuple(f"{prefix}.{c}" for c in self.build.schema())


PlanNode = Union[SeqScan, Aggregate, Sort, HashJoin]


@dataclass(frozen=True)
class QueryPlan:
    label: str
    root: PlanNode
    description: str = ""

    def nodes(self) -> Iterable[PlanNode]:
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children()))

    def relations(self) -> List[str]:
        return sorted({n.rel for n in self.nodes() if isinstance(n, SeqScan)})

    def count(self, kind: str) -> int:
        return sum(1 for n in self.nodes() if n.kind == kind)


def _validate_node(node, known_relations) -> None:
    if isinstance(node, SeqScan):
        if known_relations is not None and node.rel not in known_relations:
            raise PlanInvalid(f"relation '{node.rel}' is not in the catalog")
        if node.predicate is not None and node.predicate.column not in node.schema():
            raise PlanInvalid(f"predicate column '{node.predicate.column}' not produced by scan of {node.rel}")
        return
    if not isinstance(node, (Aggregate, Sort, HashJoin)):
        raise PlanInvalid(f"unknown operator {type(node).__name__}")
    for child in node.children():
        _validate_node(child, known_relations)

    if isinstance(node, Aggregate):
        func = AggFunc(node.func)
        if func is not AggFunc.COUNT and node.column not in node.child.schema():
            raise PlanInvalid(f"aggregate column '{node.column}' not produced by its input")
        if node.column == "comment":
            raise PlanInvalid("cannot aggregate the comment column")
    elif isinstance(node, Sort):
        if node.column not in node.child.schema():
            raise PlanInvalid(f"sort column '{node.column}' not produced by its input")
    else:
        if node.key not in node.build.schema() or node.key not in node.probe.schema():
            raise PlanInvalid(f"join key '{node.key}' missing on one side")


def validate_plan(plan: QueryPlan, known_relations: Optional[Iterable[str]] = None) -> QueryPlan:
    """Raise PlanInvalid unless every leaf is a scan of a known relation and columns resolve"""
    known = set(known_relations) if known_relations is not None else None
    try:
        _validate_node(plan.root, known)
    except ValueError as e:
        raise PlanInvalid(f"{plan.label}: {e}") from e
    return plan


def canned_suite() -> List[QueryPlan]:
    return [
        QueryPlan("qs1", Aggregate(AggFunc.SUM, "price_cents", SeqScan(LINEITEM)),
                  "scan-heavy: total price over all line items"),
        QueryPlan("qs2", Aggregate(AggFunc.COUNT, None,
                                   SeqScan(LINEITEM, Predicate("quantity", CompareOp.LT, MEDIAN_QUANTITY))),
                  "selective scan: line items below the median quantity"),
        QueryPlan("qs3", Aggregate(AggFunc.SUM, "price_cents",
                                   HashJoin(SeqScan(ORDERS), SeqScan(LINEITEM), "key")),
                  "join-heavy: price of line items with a matching order"),
        QueryPlan("qs4", Sort("price_cents",
                              SeqScan(LINEITEM, Predicate("quantity", CompareOp.GE, 45))),
                  "sort-heavy: large-quantity line items ordered by price"),
    ]


def plan_by_label(label: str) -> QueryPlan:
    for plan in canned_suite():
        if plan.label == label.lower():
            return plan
    raise PlanInvalid(f"unknown query '{label}' (expected one of qs1..qs4)")
