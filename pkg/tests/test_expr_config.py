import json

import numpy as np
import pytest

from dampde.config import ConfigError, RunConfig, load_config, parse_config
from dampde.expr import ExpressionError, parse_expression
from dampde.harness import ManufacturedCase


def test_expression_values():
    f = parse_expression("sin(pi*x)*sin(pi*y)*exp(t) - 2**3 + -y/4")
    x, y, t = 0.3, 0.7, 0.2
    expect = np.sin(np.pi * x) * np.sin(np.pi * y) * np.exp(t) - 8 - y / 4
    assert float(f(t, x, y)) == pytest.approx(expect)
    assert f(0.0, np.zeros(4), np.zeros(4)).shape == (4,)


@pytest.mark.parametrize("bad", ["__import__('os')", "x.real", "z", "sqrt(x)", "sin(x, y)", "x if t else y",
                                 "[x]", "", "x +", "True"])
def test_expression_rejects(bad):
    with pytest.raises(ExpressionError):
        parse_expression(bad)


def test_config_defaults():
    cfg = parse_config({})
    assert cfg == RunConfig()
    assert isinstance(cfg.build_case(), ManufacturedCase)


def test_config_full():
    cfg = parse_config({
        "params": {"alpha": 2, "delta": 0.5},
        "discretization": {"n": 8, "M": 4},
        "ocp": {"alpha_l": 0.5, "use_ld": False},
        "solver": {"mode": "monolithic", "fp_tol": 1e-12, "cg_rel_tol": 1e-8, "backend": "pcg",
                   "sampling": "quadrature"},
    })
    assert cfg.params.alpha == 2 and cfg.params.beta == 1
    assert (cfg.n, cfg.M, cfg.alpha_l, cfg.use_ld) == (8, 4, 0.5, False)
    assert cfg.step_mode.kind == "monolithic" and cfg.step_mode.tol == 1e-12
    assert cfg.solvers.method == "pcg" and cfg.optimizer.cg_rel_tol == 1e-8


@pytest.mark.parametrize("doc,key", [
    ({"solver": {"bogus": 1}}, "bogus"),
    ({"extra": 1}, "extra"),
    ({"params": {"alpha": -1}}, "params.alpha"),
    ({"discretization": {"n": 0}}, "discretization.n"),
    ({"case": "nonlinear"}, "case"),
    ({"case": "custom"}, "custom"),
    ({"case": "custom", "custom": {"l": "foo(x)"}}, "custom.l"),
])
def test_config_errors_name_key(doc, key):
    with pytest.raises(ConfigError) as info:
        parse_config(doc)
    assert key in str(info.value)


def test_custom_case(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"case": "custom", "custom": {"l": "x*y*t", "d0": "cos(x)", "exact_phi": "0"}}))
    case = load_config(p).build_case()
    assert float(case.l(2.0, 0.5, 0.5)) == pytest.approx(0.5)
    assert float(case.d0(0.0, 0.0, 1.0)) == pytest.approx(1.0)
    assert case.d is None


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)
