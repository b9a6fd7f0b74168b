"""Grounding, STRIPS progression and cost-optimal forward search."""
from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .pddl import ActionSchema, Atom, Domain, Problem

Proposition = Atom
TaskState = frozenset


class NotApplicable(ValueError):
    """Action preconditions do not hold in the state."""


class NoPlan(RuntimeError):
    """Goal unreachable from the initial state."""


@dataclass(frozen=True, eq=False)
class GroundAction:
    name: str
    args: tuple[str, ...]
    pre_pos: frozenset
    pre_neg: frozenset
    add: frozenset
    delete: frozenset
    triggered: tuple[str, ...] | None = None
    external: bool = False

    @property
    def key(self) -> tuple:
        return (self.name,) + self.args

    def __eq__(self, other):
        return isinstance(other, GroundAction) and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    def __str__(self):
        return f"({' '.join(self.key)})"


def _objects_of(domain: Domain, objects: dict[str, str], typ: str) -> list[str]:
    return sorted(o for o, t in objects.items() if domain.is_subtype(t, typ))


def raw_binding_count(domain: Domain, schema: ActionSchema, objects: dict[str, str]) -> int:
    """Number of type-consistent parameter bindings, before any pruning."""
    return math.prod(len(_objects_of(domain, objects, t)) for _, t in schema.parameters)


def static_predicates(domain: Domain) -> set[str]:
    changed = {a.predicate for s in domain.actions for a in s.add + s.delete}
    return set(domain.predicates) - changed


def _subst(atom: Atom, binding: dict[str, str]) -> Atom:
    return Atom(atom.predicate, tuple(binding.get(a, a) for a in atom.args))


def _instantiate(schema: ActionSchema, binding: dict[str, str]) -> GroundAction:
    trig = None
    if schema.triggered is not None:
        trig = _subst(schema.triggered, binding).args
    return GroundAction(
        schema.name,
        tuple(binding[p] for p, _ in schema.parameters),
        frozenset(_subst(a, binding) for a in schema.pre_pos),
        frozenset(_subst(a, binding) for a in schema.pre_neg),
        frozenset(_subst(a, binding) for a in schema.add),
        frozenset(_subst(a, binding) for a in schema.delete),
        trig,
        schema.external,
    )


def ground(domain: Domain, objects: dict[str, str], init: Iterable | None = None,
           schemas: Iterable[ActionSchema] | None = None) -> list[GroundAction]:
    """All type-consistent bindings of every schema.

    With ``init`` given, bindings violating a precondition on a static
    predicate (one no action changes) are pruned while binding.
    """
    schemas = list(domain.actions if schemas is None else schemas)
    statics = static_predicates(domain) if init is not None else set()
    init = frozenset(init or ())
    out = []
    for sch in schemas:
        names = [p for p, _ in sch.parameters]
        domains = [_objects_of(domain, objects, t) for _, t in sch.parameters]
        if any(not d for d in domains):
            continue
        # check each static literal as soon as its last variable is bound
        checks: dict[int, list[tuple[bool, Atom]]] = {}
        for neg, lits in ((False, sch.pre_pos), (True, sch.pre_neg)):
            for a in lits:
                if a.predicate in statics:
                    idx = max((names.index(v) for v in a.args if v in names), default=-1)
                    checks.setdefault(idx, []).append((neg, a))
        if any((_subst(a, {}) in init) == neg for neg, a in checks.get(-1, [])):
            continue
        binding: dict[str, str] = {}

        def rec(i):
            if i == len(names):
                out.append(_instantiate(sch, binding))
                return
            for obj in domains[i]:
                binding[names[i]] = obj
                if all((_subst(a, binding) in init) != neg for neg, a in checks.get(i, ())):
                    rec(i + 1)
            binding.pop(names[i], None)

        rec(0)
    return out


def applicable(state: TaskState, a: GroundAction) -> bool:
    return a.pre_pos <= state and not (a.pre_neg & state)


def apply(state: TaskState, a: GroundAction) -> TaskState:
    """(state minus delete effects) union add effects."""
    if not applicable(state, a):
        missing = sorted(map(str, a.pre_pos - state))
        raise NotApplicable(f"{a} not applicable: missing {missing}")
    return frozenset((state - a.delete) | a.add)


def satisfies(state: TaskState, goal: frozenset) -> bool:
    return goal <= state


@dataclass
class TaskPlan:
    steps: list[tuple[GroundAction, float]]
    total_cost: float
    contexts: list = field(default_factory=list)
    expanded: int = 0
    oracle_calls: int = 0

    @property
    def actions(self) -> list[GroundAction]:
        return [a for a, _ in self.steps]

    def __len__(self):
        return len(self.steps)


CostOracle = Callable[[GroundAction, TaskState, object], object]


class _Successors:
    """Applicable actions, indexed by each action's rarest precondition fact."""

    def __init__(self, actions: list[GroundAction]):
        actions = sorted(actions, key=lambda a: a.key)
        self.actions = actions
        freq: dict[Atom, int] = {}
        for a in actions:
            for f in a.pre_pos:
                freq[f] = freq.get(f, 0) + 1
        self.free = []
        self.by_fact: dict[Atom, list[int]] = {}
        for i, a in enumerate(actions):
            if a.pre_pos:
                f = min(a.pre_pos, key=lambda f: (freq[f], f))
                self.by_fact.setdefault(f, []).append(i)
            else:
                self.free.append(i)

    def __call__(self, state):
        idx = list(self.free)
        for f in state:
            idx.extend(self.by_fact.get(f, ()))
        idx.sort()
        acts = self.actions
        return [acts[i] for i in idx if applicable(state, acts[i])]


def relevant_predicates(actions: Iterable[GroundAction]) -> set[str]:
    return {f.predicate for a in actions for f in itertools.chain(a.pre_pos, a.pre_neg)}


def search_optimal_plan(problem: Problem, actions: list[GroundAction], cost_oracle: CostOracle,
                        context=None, memo: bool = True, project: bool = True) -> TaskPlan:
    """Uniform-cost search with lazily evaluated action costs.

    ``cost_oracle(action, state, context)`` returns either a cost or a
    ``(cost, next_context)`` pair; ``math.inf`` marks the action infeasible.
    The context is opaque hashable data threaded along a plan (the motion
    layer uses it for pinned robot poses). Costs must be nonnegative and
    depend only on (action, relevant facts, context).

    With ``project`` on, states are identified by facts whose predicate
    occurs in some precondition, plus goal facts; other facts (e.g.
    ``visited`` for rooms outside the goal) never change what is reachable.
    """
    succ = _Successors(actions)
    relevant = relevant_predicates(actions)
    goal = problem.goal

    def key_of(state, ctx):
        if project:
            state = frozenset(f for f in state if f.predicate in relevant or f in goal)
        return state, ctx

    cache: dict = {}
    calls = 0

    def cost_of(a, state, ctx, skey):
        nonlocal calls
        mkey = (a.key, skey, ctx)
        if memo and mkey in cache:
            return cache[mkey]
        calls += 1
        r = cost_oracle(a, state, ctx)
        c, nctx = r if isinstance(r, tuple) else (r, ctx)
        c = float(c)
        if c < 0 or math.isnan(c):
            raise ValueError(f"oracle returned invalid cost {c} for {a}")
        if memo:
            cache[mkey] = (c, nctx)
        return c, nctx

    s0 = frozenset(problem.init)
    k0 = key_of(s0, context)
    best = {k0: 0.0}
    parent: dict = {k0: None}
    states = {k0: s0}
    tie = itertools.count()
    heap = [(0.0, next(tie), k0)]
    closed = set()
    expanded = 0
    while heap:
        g, _, k = heapq.heappop(heap)
        if k in closed or g > best[k]:
            continue
        closed.add(k)
        state = states[k]
        if satisfies(state, goal):
            steps, ctxs = [], []
            cur = k
            while parent[cur] is not None:
                prev, a, c = parent[cur]
                steps.append((a, c))
                ctxs.append(cur[1])
                cur = prev
            steps.reverse()
            ctxs.reverse()
            total = 0.0
            for _, c in steps:
                total += c
            return TaskPlan(steps, total, [context] + ctxs, expanded, calls)
        expanded += 1
        skey = k[0]
        for a in succ(state):
            c, nctx = cost_of(a, state, k[1], skey)
            if math.isinf(c):
                continue
            ns = apply(state, a)
            nk = key_of(ns, nctx)
            ng = g + c
            if nk not in closed and ng < best.get(nk, math.inf):
                best[nk] = ng
                parent[nk] = (k, a, c)
                states[nk] = ns
                heapq.heappush(heap, (ng, next(tie), nk))
    raise NoPlan(f"goal {sorted(map(str, goal))} unreachable ({expanded} states expanded)")
