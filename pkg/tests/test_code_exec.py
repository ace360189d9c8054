import math

import numpy as np
import pytest

from toolshed.errors import BadArgs
from toolshed.tools import ToolContext, build_toolbox
from toolshed.wire import grid_attachment

TOOLBOX = build_toolbox()


def run_exec(code, variables=None):
    ctx = ToolContext("s", variables=variables or {})
    return TOOLBOX["code_executor"](ctx, "exec", {"code": code})


def run_eval(expr, variables=None):
    ctx = ToolContext("s", variables=variables or {})
    return TOOLBOX["code_executor"](ctx, "eval", {"expression": expr})


class TestEval:
    def test_arithmetic(self):
        res = run_eval("2 + 3 * 4")
        assert res.is_ok
        assert "Result: 14" in res.text
        assert res.variables["last_eval_result"] == 14

    def test_functions(self):
        assert run_eval("sqrt(16)").variables["last_eval_result"] == 4.0
        assert run_eval("norm([3, 4])").variables["last_eval_result"] == 5.0
        assert run_eval("mean([1, 2, 3])").variables["last_eval_result"] == 2.0
        got = run_eval("atan2(1, 1)").variables["last_eval_result"]
        assert got == pytest.approx(math.pi / 4)

    def test_comparison_chains(self):
        assert run_eval("1 < 2 < 3").variables["last_eval_result"] is True
        assert run_eval("1 < 2 > 5").variables["last_eval_result"] is False

    def test_boolop_short_circuit(self):
        assert run_eval("0 or 7").variables["last_eval_result"] == 7
        assert run_eval("0 and (1 / 0)").variables["last_eval_result"] == 0

    def test_reads_session_variables(self):
        res = run_eval("pt[0] + pt[1]", variables={"pt": [0.25, 0.5]})
        assert res.variables["last_eval_result"] == 0.75

    def test_reads_attachment_variables(self):
        grid = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
        res = run_eval("mean(depth[1])",
                       variables={"depth": grid_attachment("depth", grid)})
        assert res.variables["last_eval_result"] == pytest.approx(3.5)

    def test_slices(self):
        res = run_eval("xs[1:3]", variables={"xs": [10, 20, 30, 40]})
        assert res.variables["last_eval_result"] == [20, 30]


class TestExec:
    def test_assignment_merges_into_session(self):
        res = run_exec("a = 2\nb = a * 3")
        assert res.variables["a"] == 2
        assert res.variables["b"] == 6
        assert "Stored variables: a, b" in res.text

    def test_later_calls_see_earlier_assignments(self):
        first = run_exec("gap = 0.75 - 0.25")
        # the session layer would merge variables; simulate that here
        res = run_eval("gap * 2", variables=dict(first.variables))
        assert res.variables["last_eval_result"] == pytest.approx(1.0)

    def test_trailing_expression_is_the_result(self):
        res = run_exec("x = 5\nx + 1")
        assert res.variables["last_exec_result"] == 6
        assert "Result: 6" in res.text

    def test_print_goes_to_stdout(self):
        res = run_exec('print("dist", 1.5)\nprint("done")')
        assert "Stdout: dist 1.5\ndone" in res.text

    def test_reassignment_keeps_last_value(self):
        res = run_exec("a = 1\na = 2")
        assert res.variables["a"] == 2


class TestErrors:
    def test_runtime_error_captured_not_raised(self):
        res = run_exec("1 / 0")
        assert res.is_ok  # errors ride in the payload, not the status
        assert "Result: null" in res.text
        assert "ZeroDivisionError" in res.text
        assert res.variables == {}

    def test_syntax_error_reports_line(self):
        res = run_exec("x = 1\ny = (")
        assert "SyntaxError" in res.text
        assert "line 2" in res.text

    def test_unknown_name(self):
        res = run_eval("mystery + 1")
        assert "unknown name 'mystery'" in res.text

    def test_import_refused(self):
        res = run_exec("import os")
        assert "unsupported statement Import" in res.text

    def test_attribute_access_refused(self):
        res = run_eval("(1).real")
        assert "unsupported expression Attribute" in res.text

    def test_method_call_refused(self):
        res = run_exec("x = [1]\nx.append(2)")
        assert "whitelisted function names" in res.text

    def test_kwargs_refused(self):
        res = run_eval("round(1.234, ndigits=1)")
        assert "keyword arguments" in res.text

    def test_unknown_function(self):
        res = run_eval("open('x')")
        assert "unknown function 'open'" in res.text

    def test_loops_refused(self):
        res = run_exec("for i in [1]:\n    print(i)")
        assert "unsupported statement For" in res.text

    def test_step_budget(self, monkeypatch):
        # the real budget is unreachable under the code-size cap; shrink it
        import toolshed.tools.code_exec as ce
        monkeypatch.setattr(ce, "STEP_BUDGET", 10)
        res = run_eval("+".join(["1"] * 20))
        assert "step budget of 10 exceeded" in res.text
        assert "Result: null" in res.text

    def test_oversize_code_is_a_precondition(self):
        with pytest.raises(BadArgs, match="65536"):
            run_exec("x = 1" + " " * (64 * 1024))

    def test_non_string_code(self):
        with pytest.raises(BadArgs, match="must be a string"):
            run_exec(None)
        ctx = ToolContext("s")
        with pytest.raises(BadArgs, match="must be a string"):
            TOOLBOX["code_executor"](ctx, "eval", {"expression": 5})


class TestStorage:
    def test_huge_arrays_not_stored(self):
        big = np.zeros(100_001, dtype=np.float32)
        res = run_eval("cloud", variables={"cloud": big})
        assert "last_eval_result" not in res.variables

    def test_numpy_scalars_stored_as_python(self):
        grid = np.array([[2.5]], dtype=np.float32)
        res = run_eval("depth[0][0]",
                       variables={"depth": grid_attachment("depth", grid)})
        assert res.variables["last_eval_result"] == 2.5
        assert isinstance(res.variables["last_eval_result"], float)

    def test_none_result_not_stored(self):
        res = run_exec("x = 1")
        assert "last_exec_result" not in res.variables
