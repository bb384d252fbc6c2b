"""Parser and printer for the model file format.

Grammar (one module per file)::

    model    := ("dtmc" | "mdp")? item*
    item     := const | label | module | rewards
    const    := "const" ("int" | "double" | "rational")? NAME "=" expr ";"
    label    := "label" STRING "=" expr ";"
    module   := "module" NAME (variable | command)* "endmodule"
    variable := NAME ":" "[" expr ".." expr "]" "init" expr ";"
    command  := "[" NAME "]" expr "->" update ("+" update)* ";"
    update   := expr ":" assigns | assigns
    assigns  := "true" | "(" NAME "'" "=" expr ")" ("&" "(" NAME "'" "=" expr ")")*
    rewards  := "rewards" STRING? (("[" NAME? "]")? expr ":" expr ";")* "endrewards"
"""
from __future__ import annotations

import hashlib
from fractions import Fraction

from ..errors import (
    BoundsError,
    DuplicateDeclarationError,
    ModelSyntaxError,
    ModelTypeError,
    ProbabilityRangeError,
    ProbabilitySumError,
    UndeclaredIdentifierError,
)
from .expr import (
    LabelRef,
    Num,
    TokenStream,
    fold,
    format_number,
    infer_type,
    normalize_number,
    parse_expression,
    substitute,
    to_text,
    tokenize,
    walk,
)
from .model import Assignment, Command, FactoredMdp, RewardDef, Update, Variable


def parse_model(text: str) -> FactoredMdp:
    """Parse model text into a fully resolved :class:`FactoredMdp`."""
    return _ModelParser(text).parse()


def read_model(path) -> FactoredMdp:
    with open(path, encoding="utf-8") as fh:
        return parse_model(fh.read())


class _ModelParser:
    def __init__(self, text: str):
        self.ts = TokenStream(tokenize(text))
        self.constants: dict = {}
        self.variables: list = []
        self.commands: list = []
        self.labels: dict = {}
        self.rewards: list = []
        self.reward_name = None
        self.module_name = None
        self.var_types: dict = {}

    def parse(self) -> FactoredMdp:
        ts = self.ts
        if ts.at("dtmc") or ts.at("mdp"):
            ts.next()
        while ts.peek().kind != "EOF":
            tok = ts.peek()
            if ts.at("const"):
                self._const()
            elif ts.at("label"):
                self._label()
            elif ts.at("module"):
                self._module()
            elif ts.at("rewards"):
                self._rewards()
            else:
                raise ModelSyntaxError(f"unexpected {tok.text!r} at top level", tok.line, tok.column)
        if self.module_name is None:
            tok = ts.peek()
            raise ModelSyntaxError("model declares no module", tok.line, tok.column)
        if not self.variables:
            raise ModelSyntaxError("module declares no variables", None, None)
        self._check_labels()
        return FactoredMdp(
            name=self.module_name,
            variables=tuple(self.variables),
            constants=dict(self.constants),
            commands=tuple(self.commands),
            labels=dict(self.labels),
            rewards=tuple(self.rewards),
            reward_name=self.reward_name,
        )

    # -- helpers -------------------------------------------------------------

    def _declare(self, name, tok):
        if name in self.constants or name in self.var_types:
            raise DuplicateDeclarationError(f"{name!r} is declared twice", tok.line, tok.column)

    def _constant_value(self, tok):
        expr = substitute(parse_expression(self.ts), self.constants)
        infer_type(expr, {})  # any identifier left over is undeclared
        if not isinstance(expr, Num):
            raise ModelTypeError("expected a numeric constant", tok.line, tok.column)
        return expr.value

    # -- items ---------------------------------------------------------------

    def _const(self):
        ts = self.ts
        ts.expect("const")
        if ts.at("int") or ts.at("double") or ts.at("rational"):
            ts.next()
        tok = ts.expect_kind("IDENT", "constant name")
        self._declare(tok.text, tok)
        ts.expect("=")
        value = self._constant_value(tok)
        ts.expect(";")
        self.constants[tok.text] = normalize_number(value)

    def _label(self):
        ts = self.ts
        ts.expect("label")
        tok = ts.expect_kind("STRING", "label name in quotes")
        if tok.text in self.labels:
            raise DuplicateDeclarationError(f"label {tok.text!r} is declared twice", tok.line, tok.column)
        ts.expect("=")
        expr = fold(parse_expression(ts))
        ts.expect(";")
        self.labels[tok.text] = (expr, tok)

    def _module(self):
        ts = self.ts
        start = ts.expect("module")
        if self.module_name is not None:
            raise ModelSyntaxError("only one module per model is supported", start.line, start.column)
        self.module_name = ts.expect_kind("IDENT", "module name").text
        pending = []
        while not ts.at("endmodule"):
            tok = ts.peek()
            if tok.kind == "EOF":
                raise ModelSyntaxError("missing 'endmodule'", tok.line, tok.column)
            if ts.at("["):
                pending.append(self._command_raw())
            elif tok.kind == "IDENT":
                self._variable()
            else:
                raise ModelSyntaxError(f"unexpected {tok.text!r} in module", tok.line, tok.column)
        ts.expect("endmodule")
        for raw in pending:
            self.commands.append(self._finish_command(*raw))

    def _variable(self):
        ts = self.ts
        tok = ts.expect_kind("IDENT", "variable name")
        self._declare(tok.text, tok)
        ts.expect(":")
        ts.expect("[")
        low = self._constant_value(tok)
        ts.expect("..")
        high = self._constant_value(tok)
        ts.expect("]")
        ts.expect("init")
        init = self._constant_value(tok)
        ts.expect(";")
        for value in (low, high, init):
            if isinstance(value, Fraction):
                raise ModelTypeError(f"bounds of {tok.text!r} must be integers", tok.line, tok.column)
        if low > high:
            raise BoundsError(f"empty range [{low}..{high}] for {tok.text!r} (line {tok.line})")
        if not low <= init <= high:
            raise BoundsError(
                f"initial value {init} of {tok.text!r} outside [{low}..{high}] (line {tok.line})"
            )
        self.variables.append(Variable(tok.text, int(low), int(high), int(init)))
        self.var_types[tok.text] = "int"

    def _command_raw(self):
        ts = self.ts
        open_tok = ts.expect("[")
        action = ts.expect_kind("IDENT", "action name").text
        ts.expect("]")
        guard = fold(parse_expression(ts))
        ts.expect("->")
        updates = [self._update_raw()]
        while ts.accept("+"):
            updates.append(self._update_raw())
        ts.expect(";")
        return action, guard, updates, open_tok

    def _update_raw(self):
        ts = self.ts
        tok = ts.peek()
        is_assign = (ts.at("(") and ts.peek(1).kind == "IDENT" and ts.peek(2).text == "'") or ts.at("true")
        if is_assign:
            prob = Num(1, (tok.line, tok.column))
        else:
            prob = fold(parse_expression(ts))
            ts.expect(":")
        assigns = []
        if ts.accept("true") is None:
            assigns.append(self._assignment())
            while ts.accept("&"):
                assigns.append(self._assignment())
        return prob, assigns, tok

    def _assignment(self):
        ts = self.ts
        ts.expect("(")
        tok = ts.expect_kind("IDENT", "variable name")
        ts.expect("'")
        ts.expect("=")
        value = fold(parse_expression(ts))
        ts.expect(")")
        return tok, value

    def _finish_command(self, action, guard, updates, open_tok):
        # commands are checked after the whole module so guards may mention later variables
        guard = substitute(guard, self.constants)
        _reject_label_refs(guard)
        if infer_type(guard, self.var_types) != "bool":
            raise ModelTypeError("guard must be boolean", open_tok.line, open_tok.column)
        total = Fraction(0)
        finished = []
        for prob, assigns, tok in updates:
            prob = substitute(prob, self.constants)
            if not isinstance(prob, Num):
                infer_type(prob, self.var_types)
                raise ModelTypeError("update probabilities must be constant", tok.line, tok.column)
            p = Fraction(prob.value)
            if not 0 < p <= 1:
                raise ProbabilityRangeError(f"probability {format_number(p)} outside (0, 1]", tok.line, tok.column)
            total += p
            targets = set()
            out = []
            for var_tok, value in assigns:
                if var_tok.text not in self.var_types:
                    raise UndeclaredIdentifierError(
                        f"assignment to undeclared variable {var_tok.text!r}", var_tok.line, var_tok.column
                    )
                if var_tok.text in targets:
                    raise DuplicateDeclarationError(
                        f"{var_tok.text!r} assigned twice in one update", var_tok.line, var_tok.column
                    )
                targets.add(var_tok.text)
                value = substitute(value, self.constants)
                if infer_type(value, self.var_types) != "int":
                    raise ModelTypeError("assigned value must be numeric", var_tok.line, var_tok.column)
                out.append(Assignment(var_tok.text, value))
            finished.append(Update(normalize_number(p), tuple(out)))
        if total != 1:
            raise ProbabilitySumError(total, open_tok.line, open_tok.column)
        return Command(action, guard, tuple(finished), open_tok.line)

    def _rewards(self):
        ts = self.ts
        start = ts.expect("rewards")
        if self.rewards or self.reward_name is not None:
            raise ModelSyntaxError("only one reward structure is supported", start.line, start.column)
        if ts.peek().kind == "STRING":
            self.reward_name = ts.next().text
        raw = []
        while not ts.at("endrewards"):
            tok = ts.peek()
            if tok.kind == "EOF":
                raise ModelSyntaxError("missing 'endrewards'", tok.line, tok.column)
            action = None
            if ts.accept("["):
                if ts.peek().kind == "IDENT":
                    action = ts.next().text
                ts.expect("]")
            guard = fold(parse_expression(ts))
            ts.expect(":")
            value = fold(parse_expression(ts))
            ts.expect(";")
            raw.append((action, guard, value, tok))
        ts.expect("endrewards")
        self._pending_rewards = raw

    def _check_labels(self):
        for name, (expr, tok) in list(self.labels.items()):
            expr = substitute(expr, self.constants)
            for node in walk(expr):
                if isinstance(node, LabelRef):
                    raise ModelSyntaxError("labels may not reference other labels", tok.line, tok.column)
            if infer_type(expr, self.var_types) != "bool":
                raise ModelTypeError(f"label {name!r} must be boolean", tok.line, tok.column)
            self.labels[name] = expr
        for action, guard, value, tok in getattr(self, "_pending_rewards", []):
            guard = substitute(guard, self.constants)
            value = substitute(value, self.constants)
            _reject_label_refs(guard)
            _reject_label_refs(value)
            if infer_type(guard, self.var_types) != "bool":
                raise ModelTypeError("reward guard must be boolean", tok.line, tok.column)
            if infer_type(value, self.var_types) != "int":
                raise ModelTypeError("reward value must be numeric", tok.line, tok.column)
            if action is not None and action not in {c.action for c in self.commands}:
                raise UndeclaredIdentifierError(f"reward names unknown action {action!r}", tok.line, tok.column)
            self.rewards.append(RewardDef(action, guard, value))


def _reject_label_refs(expr):
    for node in walk(expr):
        if isinstance(node, LabelRef):
            line, col = node.pos or (None, None)
            raise ModelSyntaxError("label references are only allowed in properties", line, col)


def pretty_print(m: FactoredMdp) -> str:
    """Canonical model text; ``parse_model(pretty_print(m)) == m``."""
    lines = ["mdp", ""]
    for name, value in m.constants.items():
        kind = "int" if isinstance(normalize_number(value), int) else "rational"
        lines.append(f"const {kind} {name} = {format_number(value)};")
    if m.constants:
        lines.append("")
    lines.append(f"module {m.name}")
    for v in m.variables:
        lines.append(f"  {v.name} : [{v.low}..{v.high}] init {v.init};")
    if m.variables and m.commands:
        lines.append("")
    for cmd in m.commands:
        branches = []
        for upd in cmd.updates:
            assigns = " & ".join(f"({a.variable}'={to_text(a.value)})" for a in upd.assignments) or "true"
            branches.append(f"{format_number(upd.probability)} : {assigns}")
        lines.append(f"  [{cmd.action}] {to_text(cmd.guard)} -> {' + '.join(branches)};")
    lines.append("endmodule")
    if m.labels:
        lines.append("")
    for name, expr in m.labels.items():
        lines.append(f'label "{name}" = {to_text(expr)};')
    if m.rewards or m.reward_name is not None:
        lines.append("")
        lines.append(f'rewards "{m.reward_name}"' if m.reward_name is not None else "rewards")
        for r in m.rewards:
            head = f"[{r.action}] " if r.action is not None else "[] "
            lines.append(f"  {head}{to_text(r.guard)} : {to_text(r.value)};")
        lines.append("endrewards")
    return "\n".join(lines) + "\n"



def model_digest(m: FactoredMdp) -> str:
    """Content hash of the canonical model text."""
    return hashlib.sha256(pretty_print(m).encode("utf-8")).hexdigest()
