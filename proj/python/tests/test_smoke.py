import math
from pathlib import Path

import numpy as np
import pytest

import nhic

ROOT = Path(__file__).resolve().parents[2]


def test_pendulum_exponent():
    spec = nhic.analyze_saddle(nhic.HamiltonianModel.pendulum())
    assert spec.lam[0] == pytest.approx(2 * math.pi, rel=1e-12)


def test_coupled_exponents_match_hessian():
    model = nhic.HamiltonianModel.coupled_pendula(0.1)
    c = 4 * math.pi**2
    expected = np.sqrt(np.linalg.eigvalsh(c * np.array([[1.1, -0.1], [-0.1, 2.1]])))
    assert np.allclose(nhic.analyze_saddle(model).lam, expected, rtol=1e-12)


def test_energy_conserving_field():
    model = nhic.HamiltonianModel.coupled_pendula()
    z = np.array([0.1, -0.2, 0.3, 0.05])
    assert abs(model.field(z) @ model.gradH(z)) < 1e-12


def test_energy_grid():
    grid = nhic.energy_grid(1e-3, 1e-6, 0.1)
    assert len(grid) == 4
    assert grid[-1] == pytest.approx(1e-6)


def test_invalid_config_raises():
    text = (ROOT / "configs" / "pendulum.cfg").read_text().replace('"E0": 1e-3', '"E0": 1e-15')
    with pytest.raises(nhic.NhicError, match="ConfigInvalid"):
        nhic.parse_config(text, str(ROOT / "configs"))


def test_pendulum_pipeline(tmp_path):
    cfg = nhic.load_config(str(ROOT / "configs" / "pendulum.cfg"))
    p = nhic.Pipeline(cfg, str(tmp_path))
    assert p.run("verify") == 0
    assert p.all_passed()
    assert p.hole_count == 1
    assert p.library_labels == ["(1)+", "(-1)-"]
    assert (tmp_path / "verify.json").exists()
    assert all(c.passed for c in p.checks)
