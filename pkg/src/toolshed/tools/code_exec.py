"""Restricted expression interpreter for agent-orchestrated arithmetic.

Supports numeric literals, arithmetic, comparisons, a small math-function
whitelist, indexing into session variables, assignment (exec only), and
print. No imports, no attribute access, no loops; a step budget bounds
evaluation. Errors are captured in stderr with a null result so the policy
can read and recover; they are never transport failures.
"""

from __future__ import annotations

import ast
import math
from typing import Any

import numpy as np

from ..errors import BadArgs
from ..wire import ToolResult
from .common import need
from .context import ToolContext

MAX_CODE_BYTES = 64 * 1024
STEP_BUDGET = 1_000_000
MAX_STORED_ELEMENTS = 100_000


class _EvalError(Exception):
    pass


def _mean(x):
    return float(np.mean(np.asarray(x, dtype=float)))


def _norm(x):
    return float(np.linalg.norm(np.asarray(x, dtype=float)))


_BIN_OPS = {
    ast.Add: lambda a, b: a + b,
    ast.Sub: lambda a, b: a - b,
    ast.Mult: lambda a, b: a * b,
    ast.Div: lambda a, b: a / b,
    ast.FloorDiv: lambda a, b: a // b,
    ast.Mod: lambda a, b: a % b,
    ast.Pow: lambda a, b: a ** b,
}

_CMP_OPS = {
    ast.Eq: lambda a, b: a == b,
    ast.NotEq: lambda a, b: a != b,
    ast.Lt: lambda a, b: a < b,
    ast.LtE: lambda a, b: a <= b,
    ast.Gt: lambda a, b: a > b,
    ast.GtE: lambda a, b: a >= b,
}


class _Interpreter:
    def __init__(self, ctx: ToolContext):
        self.ctx = ctx
        self.locals: dict[str, Any] = {}
        self.assigned: list[str] = []
        self.stdout: list[str] = []
        self.steps = 0
        self.functions = {
            "sqrt": math.sqrt, "exp": math.exp, "log": math.log,
            "sin": math.sin, "cos": math.cos, "atan2": math.atan2,
            "abs": abs, "min": min, "max": max,
            "mean": _mean, "norm": _norm, "len": len, "round": round,
            "print": self._print,
        }

    def _print(self, *values):
        self.stdout.append(" ".join(str(v) for v in values))

    def _tick(self):
        self.steps += 1
        if self.steps > STEP_BUDGET:
            raise _EvalError(f"step budget of {STEP_BUDGET} exceeded")

    def lookup(self, name: str) -> Any:
        if name in self.locals:
            return self.locals[name]
        if name in self.ctx.variables:
            return self.ctx.value(name)
        raise _EvalError(f"unknown name {name!r}")

    def run_module(self, tree: ast.Module) -> Any:
        result = None
        for stmt in tree.body:
            self._tick()
            if isinstance(stmt, ast.Assign):
                if len(stmt.targets) != 1 or not isinstance(stmt.targets[0], ast.Name):
                    raise _EvalError("only single-name assignment is supported")
                name = stmt.targets[0].id
                self.locals[name] = self.eval(stmt.value)
                if name not in self.assigned:
                    self.assigned.append(name)
                result = None
            elif isinstance(stmt, ast.Expr):
                result = self.eval(stmt.value)
            else:
                raise _EvalError(f"unsupported statement {type(stmt).__name__}")
        return result

    def eval(self, node: ast.expr) -> Any:
        self._tick()
        if isinstance(node, ast.Constant):
            if isinstance(node.value, (bool, int, float, str)) or node.value is None:
                return node.value
            raise _EvalError(f"unsupported literal {node.value!r}")
        if isinstance(node, ast.Name):
            return self.lookup(node.id)
        if isinstance(node, ast.BinOp):
            op = _BIN_OPS.get(type(node.op))
            if op is None:
                raise _EvalError(f"unsupported operator {type(node.op).__name__}")
            return op(self.eval(node.left), self.eval(node.right))
        if isinstance(node, ast.UnaryOp):
            v = self.eval(node.operand)
            if isinstance(node.op, ast.USub):
                return -v
            if isinstance(node.op, ast.UAdd):
                return +v
            if isinstance(node.op, ast.Not):
                return not v
            raise _EvalError(f"unsupported operator {type(node.op).__name__}")
        if isinstance(node, ast.BoolOp):
            if isinstance(node.op, ast.And):
                value = True
                for sub in node.values:
                    value = self.eval(sub)
                    if not value:
                        return value
                return value
            for sub in node.values:
                value = self.eval(sub)
                if value:
                    return value
            return value
        if isinstance(node, ast.Compare):
            left = self.eval(node.left)
            for op, rhs_node in zip(node.ops, node.comparators):
                fn = _CMP_OPS.get(type(op))
                if fn is None:
                    raise _EvalError(f"unsupported comparison {type(op).__name__}")
                rhs = self.eval(rhs_node)
                if not fn(left, rhs):
                    return False
                left = rhs
            return True
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name):
                raise _EvalError("only whitelisted function names may be called")
            fn = self.functions.get(node.func.id)
            if fn is None:
                raise _EvalError(f"unknown function {node.func.id!r}")
            if node.keywords:
                raise _EvalError("keyword arguments are not supported")
            return fn(*[self.eval(a) for a in node.args])
        if isinstance(node, ast.Subscript):
            value = self.eval(node.value)
            index = self.eval_index(node.slice)
            try:
                return value[index]
            except (IndexError, KeyError, TypeError) as exc:
                raise _EvalError(f"bad index: {exc}") from exc
        if isinstance(node, (ast.List, ast.Tuple)):
            return [self.eval(e) for e in node.elts]
        raise _EvalError(f"unsupported expression {type(node).__name__}")

    def eval_index(self, node: ast.expr) -> Any:
        if isinstance(node, ast.Slice):
            lower = self.eval(node.lower) if node.lower else None
            upper = self.eval(node.upper) if node.upper else None
            step = self.eval(node.step) if node.step else None
            return slice(lower, upper, step)
        if isinstance(node, ast.Tuple):
            return tuple(self.eval_index(e) for e in node.elts)
        return self.eval(node)


def _storable(value: Any) -> Any | None:
    """Convert a result into a JSON-able session value; None if it cannot be."""
    if isinstance(value, (bool, int, float, str)):
        return value
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        if value.size > MAX_STORED_ELEMENTS:
            return None
        return value.tolist()
    if isinstance(value, (list, tuple)):
        out = [_storable(v) for v in value]
        return None if any(v is None for v in out) else out
    return None


def _run(ctx: ToolContext, code: str, kind: str) -> ToolResult:
    if len(code.encode()) > MAX_CODE_BYTES:
        raise BadArgs(f"code exceeds {MAX_CODE_BYTES} bytes")
    interp = _Interpreter(ctx)
    result, stderr = None, ""
    try:
        tree = ast.parse(code, mode="exec" if kind == "exec" else "eval")
        if kind == "exec":
            result = interp.run_module(tree)
        else:
            result = interp.eval(tree.body)
    except SyntaxError as exc:
        stderr = f"SyntaxError: {exc.msg} (line {exc.lineno})"
    except _EvalError as exc:
        stderr = str(exc)
    except (ArithmeticError, ValueError, TypeError) as exc:
        stderr = f"{type(exc).__name__}: {exc}"

    variables: dict[str, Any] = {}
    if not stderr:
        if kind == "exec":
            for name in interp.assigned:
                stored = _storable(interp.locals[name])
                if stored is not None:
                    variables[name] = stored
        if result is not None:
            stored = _storable(result)
            if stored is not None:
                variables[f"last_{kind}_result"] = stored

    stdout = "\n".join(interp.stdout)
    parts = [f"Result: {'null' if stderr or result is None else repr(result)}"]
    parts.append(f"Stdout: {stdout if stdout else '(empty)'}")
    parts.append(f"Stderr: {stderr if stderr else '(empty)'}")
    if variables:
        parts.append("Stored variables: " + ", ".join(variables))
    return ToolResult.ok("\n".join(parts), variables=variables)


def exec_code(ctx: ToolContext, args: dict) -> ToolResult:
    code = need(args, "code")
    if not isinstance(code, str):
        raise BadArgs("argument 'code' must be a string")
    return _run(ctx, code, "exec")


def eval_code(ctx: ToolContext, args: dict) -> ToolResult:
    expression = need(args, "expression")
    if not isinstance(expression, str):
        raise BadArgs("argument 'expression' must be a string")
    return _run(ctx, expression, "eval")


METHODS = {"exec": exec_code, "eval": eval_code}
