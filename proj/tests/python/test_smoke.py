import json
import math
import os
import pathlib

import pytest

import ksl


@pytest.fixture(scope="module")
def model():
    spec = ksl.BasisSpec()
    spec.radial_order = 8
    spec.angular_max = 4
    basis = ksl.build_basis(spec)
    opts = ksl.CollisionOptions()
    opts.with_gamma = False
    coll = ksl.assemble_collision(basis, opts)
    return basis, coll


def test_nu_values():
    assert ksl.nu(0.0) > 0.5
    assert ksl.nu(4.0) > ksl.nu(1.0)


def test_kernel_degrees_shape():
    k, k1 = ksl.kernel_degrees(1.0, 1.5, 6)
    assert len(k) == 7 and len(k1) == 7
    assert all(math.isfinite(x) for x in k + k1)


def test_basis_and_collision(model):
    basis, coll = model
    assert basis.dim > 0
    assert [basis.chi(j) >= 0 for j in range(5)] == [True] * 5
    assert coll.null_residual <= 1e-6
    assert coll.l1_null_residual <= 1e-6
    assert coll.mu_estimate > 0.0


def test_transport_positive(model):
    basis, coll = model
    tc = ksl.transport_coefficients(basis, coll)
    assert tc.kappa0 > 0.0 and tc.kappa1 > 0.0 and tc.eta > 0.0
    assert len(tc.a) == 5


def test_y2_rates_transverse_roots():
    eta, s = 0.2, 1.0
    for lam in ksl.y2_rates(s, eta):
        assert lam.real <= 1e-12


def test_fluid_decay_curve(model):
    basis, coll = model
    tc = ksl.transport_coefficients(basis, coll)
    times = [1e2, 1e3, 1e4]
    curve = ksl.fluid_decay(tc, "y2_generic", "lorentz2", times)
    assert list(curve.t) == times
    assert curve.norm[0] > curve.norm[1] > curve.norm[2] > 0.0
    with pytest.raises(ValueError):
        ksl.fluid_decay(tc, "nope", "lorentz2", times)


def test_format_double():
    assert ksl.format_double(-0.0) == "0"
    assert ksl.format_double(float("nan")) == "nan"


def test_evaluate_criteria_partial():
    crit = ksl.evaluate_criteria(json.dumps({}))
    assert [c["id"] for c in crit] == list(range(1, 13))
    assert all(c["status"] == "not-run" for c in crit)


def test_run_reduced(tmp_path):
    cfg_dir = pathlib.Path(os.environ.get("KSL_CONFIG_DIR", pathlib.Path(__file__).parents[2] / "configs"))
    text = (cfg_dir / "reduced.toml").read_text()
    text = text.replace('cache_dir = "cache"', f'cache_dir = "{tmp_path / "cache"}"')
    text = text.replace('out_dir = "out_reduced"', f'out_dir = "{tmp_path / "out"}"')
    cfg = tmp_path / "run.toml"
    cfg.write_text(text)
    assert ksl.run(str(cfg), ["assemble", "transport", "report"]) == 0
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert "criteria" in summary
