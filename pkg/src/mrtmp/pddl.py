"""Parser for the PDDL subset used by the room-navigation domain.

Supported: typed ``:parameters``, ``:action`` and ``:durative-action``,
``at start`` / ``at end`` / ``over all`` wrappers (recorded, then flattened),
``and``/``not`` conjunctions, and numeric ``increase`` / ``decrease`` /
``assign`` effects on declared functions. An effect
``(increase (<direct>) (<indirect>))`` whose value is itself a function term
marks the action's cost as supplied by an external module.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import NamedTuple

NUMERIC_OPS = ("increase", "decrease", "assign", "scale-up", "scale-down")
UNSUPPORTED = ("or", "imply", "exists", "forall", "when", "preference")
TIME_SPECS = ("at start", "at end", "over all")


class PDDLParseError(ValueError):
    def __init__(self, msg: str, line: int = 0, col: int = 0):
        super().__init__(f"{msg} (line {line}, column {col})" if line else msg)
        self.line = line
        self.col = col


class PDDLSemanticError(ValueError):
    pass


class Token(NamedTuple):
    text: str
    line: int
    col: int


class SExpr(list):
    """List node remembering where it opened."""

    def __init__(self, items=(), line=0, col=0):
        super().__init__(items)
        self.line = line
        self.col = col


_TOKEN_RE = re.compile(r";[^\n]*|\(|\)|[^\s()]+|\s+")


def tokenize(text: str) -> list[Token]:
    out = []
    line, col = 1, 1
    for m in _TOKEN_RE.finditer(text):
        s = m.group(0)
        if not s.isspace() and not s.startswith(";"):
            out.append(Token(s.lower(), line, col))
        nl = s.count("\n")
        if nl:
            line += nl
            col = len(s) - s.rfind("\n")
        else:
            col += len(s)
    return out


def parse_sexpr(text: str) -> SExpr:
    toks = tokenize(text)
    if not toks:
        raise PDDLParseError("empty input", 1, 1)
    stack: list[SExpr] = []
    root = None
    for tok in toks:
        if tok.text == "(":
            node = SExpr(line=tok.line, col=tok.col)
            if stack:
                stack[-1].append(node)
            elif root is not None:
                raise PDDLParseError("unexpected content after top-level expression", tok.line, tok.col)
            else:
                root = node
            stack.append(node)
        elif tok.text == ")":
            if not stack:
                raise PDDLParseError("unbalanced ')'", tok.line, tok.col)
            stack.pop()
        else:
            if not stack:
                raise PDDLParseError(f"unexpected token {tok.text!r} outside expression", tok.line, tok.col)
            stack[-1].append(tok)
    if stack:
        raise PDDLParseError("unbalanced '(' (missing ')')", stack[-1].line, stack[-1].col)
    return root


def _loc(x) -> tuple[int, int]:
    if isinstance(x, Token):
        return x.line, x.col
    return getattr(x, "line", 0), getattr(x, "col", 0)


def _text(x) -> str:
    if not isinstance(x, Token):
        raise PDDLParseError("expected a symbol", *_loc(x))
    return x.text


def _typed_list(items, where) -> list[tuple[str, str]]:
    """``a b - t c - u d`` -> [(a, t), (b, t), (c, u), (d, object)]."""
    out, pending = [], []
    i = 0
    while i < len(items):
        tok = items[i]
        name = _text(tok)
        if name == "-":
            if i + 1 >= len(items) or not pending:
                raise PDDLParseError(f"dangling '-' in {where}", *_loc(tok))
            typ = _text(items[i + 1])
            if typ == "either":
                raise PDDLParseError("'either' types are not supported", *_loc(tok))
            out += [(p, typ) for p in pending]
            pending = []
            i += 2
            continue
        pending.append(name)
        i += 1
    out += [(p, "object") for p in pending]
    return out


class Atom(NamedTuple):
    """Predicate (or function) applied to variables and/or constants."""
    predicate: str
    args: tuple[str, ...]

    def __str__(self):
        return f"({' '.join((self.predicate,) + self.args)})"


@dataclass(frozen=True)
class NumericEffect:
    op: str
    fluent: Atom
    value: object  # float or Atom
    when: str = ""


@dataclass
class ActionSchema:
    name: str
    parameters: list[tuple[str, str]]
    pre_pos: list[Atom] = field(default_factory=list)
    pre_neg: list[Atom] = field(default_factory=list)
    add: list[Atom] = field(default_factory=list)
    delete: list[Atom] = field(default_factory=list)
    numeric: list[NumericEffect] = field(default_factory=list)
    duration: object = None
    durative: bool = False
    timing: dict = field(default_factory=dict)
    cost_hooks: list[tuple[str, str]] = field(default_factory=list)
    triggered: Atom | None = None

    @property
    def external(self) -> bool:
        return bool(self.cost_hooks)


@dataclass
class Domain:
    name: str
    requirements: list[str]
    types: dict[str, str]
    constants: dict[str, str]
    predicates: dict[str, list[tuple[str, str]]]
    functions: dict[str, list[tuple[str, str]]]
    actions: list[ActionSchema]

    def action(self, name: str) -> ActionSchema:
        for a in self.actions:
            if a.name == name:
                return a
        raise KeyError(name)

    def is_subtype(self, t: str, parent: str) -> bool:
        seen = set()
        while t not in seen:
            if t == parent:
                return True
            seen.add(t)
            if t not in self.types:
                return parent == "object"
            t = self.types[t]
        return False

    def variable_classes(self) -> dict[str, list[str]]:
        """Direct, indirect and free numeric variables.

        Indirect ones appear only as the value of an ``increase``; direct ones
        are written by action effects and receive an indirect value or carry
        the ``triggered`` payload.
        """
        direct, indirect, written = set(), set(), set()
        for a in self.actions:
            for ne in a.numeric:
                written.add(ne.fluent.predicate)
                if isinstance(ne.value, Atom):
                    direct.add(ne.fluent.predicate)
                    indirect.add(ne.value.predicate)
            if a.triggered is not None:
                direct.add(a.triggered.predicate)
        free = set(self.functions) - direct - indirect
        return {"direct": sorted(direct), "indirect": sorted(indirect), "free": sorted(free)}


@dataclass
class Problem:
    name: str
    domain_name: str
    objects: dict[str, str]
    init: frozenset
    goal: frozenset
    numeric_init: dict = field(default_factory=dict)


def _expect_head(node, head: str):
    if not isinstance(node, list) or not node or _text(node[0]) != head:
        raise PDDLParseError(f"expected ({head} ...)", *_loc(node))


class _SchemaBuilder:
    def __init__(self, domain_preds, domain_funcs, params, name):
        self.preds = domain_preds
        self.funcs = domain_funcs
        self.params = {p for p, _ in params}
        self.name = name

    def atom(self, node, kind="predicate") -> Atom:
        if not isinstance(node, list) or not node:
            raise PDDLParseError("expected an atom", *_loc(node))
        head = _text(node[0])
        args = tuple(_text(a) for a in node[1:])
        table = self.preds if kind == "predicate" else self.funcs
        if head not in table:
            raise PDDLParseError(f"undeclared {kind} {head!r} in action {self.name}", *_loc(node))
        if len(args) != len(table[head]):
            raise PDDLParseError(f"{kind} {head!r} expects {len(table[head])} arguments, got {len(args)}",
                                 *_loc(node))
        for a in args:
            if a.startswith("?") and a not in self.params:
                raise PDDLParseError(f"variable {a} not among parameters of {self.name}", *_loc(node))
        return Atom(head, args)

    def conj(self, node) -> list:
        """Flatten (and ...) into a list of (timing, node) pairs."""
        if isinstance(node, Token):
            raise PDDLParseError("expected a formula", *_loc(node))
        if not node:
            return []
        head = _text(node[0]) if isinstance(node[0], Token) else None
        if head == "and":
            out = []
            for sub in node[1:]:
                out += self.conj(sub)
            return out
        if head in ("at", "over"):
            if len(node) != 3:
                raise PDDLParseError(f"malformed time specifier", *_loc(node))
            spec = f"{head} {_text(node[1])}"
            if spec not in TIME_SPECS:
                raise PDDLParseError(f"unknown time specifier {spec!r}", *_loc(node))
            return [(spec, n) for _, n in self.conj(node[2])]
        if head in UNSUPPORTED:
            raise PDDLParseError(f"unsupported construct {head!r}", *_loc(node))
        return [("", node)]


def _parse_action(node, domain_preds, domain_funcs, types, durative) -> ActionSchema:
    if len(node) < 2:
        raise PDDLParseError("action without a name", *_loc(node))
    name = _text(node[1])
    fields = {}
    i = 2
    while i < len(node):
        key = _text(node[i])
        if not key.startswith(":") or i + 1 >= len(node):
            raise PDDLParseError(f"malformed action field {key!r}", *_loc(node[i]))
        fields[key] = node[i + 1]
        i += 2
    allowed = {":parameters", ":duration", ":condition", ":effect"} if durative else \
        {":parameters", ":precondition", ":effect"}
    for k in fields:
        if k not in allowed:
            raise PDDLParseError(f"unsupported action field {k}", *_loc(node))
    params = _typed_list(fields.get(":parameters", []), f"parameters of {name}")
    for _, t in params:
        if t != "object" and t not in types:
            raise PDDLParseError(f"undeclared type {t!r} in action {name}", *_loc(fields[":parameters"]))
    sch = ActionSchema(name, params, durative=durative)
    b = _SchemaBuilder(domain_preds, domain_funcs, params, name)

    if durative:
        dur = fields.get(":duration")
        if dur is None:
            raise PDDLParseError(f"durative action {name} without :duration", *_loc(node))
        if (not isinstance(dur, list) or len(dur) != 3 or _text(dur[0]) != "="
                or _text(dur[1]) != "?duration"):
            raise PDDLParseError("only (= ?duration <value>) durations are supported", *_loc(dur))
        val = dur[2]
        if isinstance(val, Token):
            try:
                sch.duration = float(val.text)
            except ValueError:
                raise PDDLParseError(f"bad duration {val.text!r}", *_loc(val)) from None
        else:
            sch.duration = b.atom(val, "function")

    pre = fields.get(":condition" if durative else ":precondition", [])
    for when, lit in b.conj(pre):
        neg = isinstance(lit[0], Token) and lit[0].text == "not"
        atom = b.atom(lit[1]) if neg else b.atom(lit)
        (sch.pre_neg if neg else sch.pre_pos).append(atom)
        sch.timing[("pre", neg, atom)] = when

    for when, eff in b.conj(fields.get(":effect", [])):
        head = _text(eff[0]) if isinstance(eff[0], Token) else None
        if head in NUMERIC_OPS:
            if len(eff) != 3:
                raise PDDLParseError(f"malformed {head} effect", *_loc(eff))
            fluent = b.atom(eff[1], "function")
            v = eff[2]
            if isinstance(v, Token):
                try:
                    value = float(v.text)
                except ValueError:
                    raise PDDLParseError(f"unsupported numeric value {v.text!r}", *_loc(v)) from None
            else:
                value = b.atom(v, "function")
            sch.numeric.append(NumericEffect(head, fluent, value, when))
            if head == "increase" and isinstance(value, Atom):
                sch.cost_hooks.append((fluent.predicate, value.predicate))
            if fluent.predicate == "triggered":
                sch.triggered = fluent
            continue
        if head == "not":
            atom = b.atom(eff[1])
            sch.delete.append(atom)
            sch.timing[("eff", True, atom)] = when
        else:
            atom = b.atom(eff)
            sch.add.append(atom)
            sch.timing[("eff", False, atom)] = when
    return sch


def parse_domain(text: str) -> Domain:
    root = parse_sexpr(text)
    _expect_head(root, "define")
    if len(root) < 2 or not isinstance(root[1], list) or _text(root[1][0]) != "domain":
        raise PDDLParseError("expected (domain <name>)", *_loc(root))
    name = _text(root[1][1])
    requirements, types, constants = [], {}, {}
    predicates: dict = {}
    functions: dict = {}
    action_nodes = []
    for sec in root[2:]:
        if not isinstance(sec, list) or not sec:
            raise PDDLParseError("expected a section", *_loc(sec))
        key = _text(sec[0])
        if key == ":requirements":
            requirements = [_text(t) for t in sec[1:]]
        elif key == ":types":
            for t, parent in _typed_list(sec[1:], ":types"):
                types[t] = parent
        elif key == ":constants":
            constants.update(dict(_typed_list(sec[1:], ":constants")))
        elif key == ":predicates":
            for p in sec[1:]:
                if not isinstance(p, list) or not p:
                    raise PDDLParseError("malformed predicate declaration", *_loc(p))
                predicates[_text(p[0])] = _typed_list(p[1:], f"predicate {_text(p[0])}")
        elif key == ":functions":
            items = list(sec[1:])
            j = 0
            while j < len(items):
                f = items[j]
                if isinstance(f, Token):
                    if f.text == "-" and j + 1 < len(items):
                        j += 2  # numeric return type
                        continue
                    raise PDDLParseError("malformed function declaration", *_loc(f))
                functions[_text(f[0])] = _typed_list(f[1:], f"function {_text(f[0])}")
                j += 1
        elif key in (":action", ":durative-action"):
            action_nodes.append((sec, key == ":durative-action"))
        else:
            raise PDDLParseError(f"unsupported domain section {key}", *_loc(sec))
    for sig in list(predicates.values()) + list(functions.values()):
        for _, t in sig:
            if t != "object" and t not in types:
                raise PDDLParseError(f"undeclared type {t!r}", *_loc(root))
    actions = [_parse_action(n, predicates, functions, types, dur) for n, dur in action_nodes]
    return Domain(name, requirements, types, constants, predicates, functions, actions)


def parse_problem(text: str, domain: Domain) -> Problem:
    root = parse_sexpr(text)
    _expect_head(root, "define")
    if len(root) < 2 or not isinstance(root[1], list) or _text(root[1][0]) != "problem":
        raise PDDLParseError("expected (problem <name>)", *_loc(root))
    name = _text(root[1][1])
    dom_name = domain.name
    objects = dict(domain.constants)
    init, goal, numeric = set(), set(), {}
    sections = {}
    for sec in root[2:]:
        if not isinstance(sec, list) or not sec:
            raise PDDLParseError("expected a section", *_loc(sec))
        sections[_text(sec[0])] = sec
    for key in sections:
        if key not in (":domain", ":objects", ":init", ":goal", ":metric"):
            raise PDDLParseError(f"unsupported problem section {key}", *_loc(sections[key]))
    if ":domain" in sections:
        dom_name = _text(sections[":domain"][1])
        if dom_name != domain.name:
            raise PDDLSemanticError(f"problem is for domain {dom_name!r}, not {domain.name!r}")
    for obj, typ in _typed_list(sections.get(":objects", [None])[1:], ":objects"):
        if typ != "object" and typ not in domain.types:
            raise PDDLSemanticError(f"object {obj} has undeclared type {typ}")
        objects[obj] = typ

    def ground_atom(node, table, kind):
        if not isinstance(node, list) or not node:
            raise PDDLParseError("expected a ground atom", *_loc(node))
        head = _text(node[0])
        args = tuple(_text(a) for a in node[1:])
        if head not in table:
            raise PDDLSemanticError(f"unknown {kind} {head!r}")
        sig = table[head]
        if len(args) != len(sig):
            raise PDDLSemanticError(f"{kind} {head!r} expects {len(sig)} arguments, got {len(args)}")
        for a, (_, t) in zip(args, sig):
            if a not in objects:
                raise PDDLSemanticError(f"unknown object {a!r} in ({head} {' '.join(args)})")
            if not domain.is_subtype(objects[a], t):
                raise PDDLSemanticError(f"object {a!r} is not of type {t}")
        return Atom(head, args)

    for item in sections.get(":init", [None])[1:]:
        if isinstance(item, list) and item and isinstance(item[0], Token) and item[0].text == "=":
            numeric[ground_atom(item[1], domain.functions, "function")] = float(_text(item[2]))
        else:
            init.add(ground_atom(item, domain.predicates, "predicate"))

    if ":goal" in sections:
        g = sections[":goal"]
        if len(g) > 1:
            node = g[1]
            items = node[1:] if (isinstance(node, list) and node and isinstance(node[0], Token)
                                 and node[0].text == "and") else [node]
            for lit in items:
                if isinstance(lit, list) and lit and isinstance(lit[0], Token) and lit[0].text in UNSUPPORTED + ("not",):
                    raise PDDLParseError("goal must be a conjunction of positive atoms", *_loc(lit))
                goal.add(ground_atom(lit, domain.predicates, "predicate"))
    return Problem(name, dom_name, objects, frozenset(init), frozenset(goal), numeric)
