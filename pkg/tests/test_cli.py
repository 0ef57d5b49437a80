import math

import numpy as np
import pytest

from echolab.cli import (
    EXIT_ANALYSIS,
    EXIT_BUDGET,
    EXIT_OK,
    EXIT_VALIDATION,
    load_config,
    main,
    parse_config_text,
    preset_path,
    read_table,
    resolve_config,
    write_table,
)
from echolab.errors import ValidationError

SMALL = ["--set", "model.n_dim=128", "--set", "run.t_max=60", "--set", "run.rate_time=50"]


def run(tmp_path, *args):
    return main([*args, "--out", str(tmp_path)])


@pytest.mark.parametrize("name", ["fig1", "fig2", "fig3", "fig4"])
def test_presets_load(name):
    cfg = load_config(preset_path(name))
    assert cfg.k == 0.3 and cfg.xi_sq_fraction == 20


def test_preset_values():
    fig1 = load_config(preset_path("fig1"))
    assert fig1.n_dim == 2**17 and fig1.sigma == 1.5 and fig1.p0_over_pi == (0.6, 0.2)
    fig4 = load_config(preset_path("fig4"))
    assert fig4.r0_over_pi == 1.2 and fig4.p0_over_pi == (0.28,) and 0.5 in fig4.sweep_sigma


def test_config_parsing_and_overrides():
    raw = parse_config_text("# comment\nmodel.k = 0.5  # trailing\n\npacket.p0_over_pi = 0.2, 0.4\n")
    cfg = resolve_config(raw, ["model.sigma=0.7"])
    assert cfg.k == 0.5 and cfg.sigma == 0.7 and cfg.p0_over_pi == (0.2, 0.4)


@pytest.mark.parametrize("text", ["model.k = abc", "model.n_dim = 1", "model.sigma = -1", "nonsense",
                                  "model.unknown = 1", "packet.xi_sq_fraction = 0", "run.t_max = 0"])
def test_config_validation_errors(text):
    with pytest.raises(ValidationError):
        resolve_config(parse_config_text(text))


def test_table_roundtrip_full_precision(tmp_path):
    x = np.array([math.pi, 1 / 3, 1e-300])
    path = write_table(tmp_path / "x.csv", ["a = 1"], {"t": np.arange(3), "x": x})
    meta, cols = read_table(path)
    assert meta["a"] == "1"
    assert np.array_equal(cols["x"], x)
    assert [p.name for p in tmp_path.iterdir()] == ["x.csv"]  # no temp files left behind


def test_quantum_sigma_zero_and_determinism(tmp_path):
    assert run(tmp_path / "a", "quantum", "--config", "fig3", *SMALL, "--set", "model.sigma=0") == EXIT_OK
    _, cols = read_table(tmp_path / "a" / "fig3.quantum.csv")
    assert np.max(np.abs(cols["M_quantum"] - 1.0)) < 1e-12
    run(tmp_path / "b", "quantum", "--config", "fig3", *SMALL, "--set", "model.sigma=0")
    assert (tmp_path / "a" / "fig3.quantum.csv").read_bytes() == (tmp_path / "b" / "fig3.quantum.csv").read_bytes()


def test_config_echo_reruns_exactly(tmp_path):
    run(tmp_path / "a", "quantum", "--config", "fig3", *SMALL)
    text = (tmp_path / "a" / "fig3.quantum.csv").read_text()
    echoed = "\n".join(line[2:] for line in text.splitlines()[1:] if line.startswith("# "))
    cfg_file = tmp_path / "echo.cfg"
    cfg_file.write_text(echoed)
    run(tmp_path / "b", "quantum", "--config", str(cfg_file))
    assert (tmp_path / "b" / "fig3.quantum.csv").read_text() == text


def test_single_sigma_sweep_matches_quantum(tmp_path):
    run(tmp_path / "q", "quantum", "--config", "fig4", *SMALL, "--set", "model.sigma=0.3")
    assert run(tmp_path / "s", "sweep", "--config", "fig4", *SMALL, "--set", "model.sigma=0.3",
               "--set", "sweep.sigma=0.3") == EXIT_OK
    q = (tmp_path / "q" / "fig4.quantum.csv").read_bytes()
    s = (tmp_path / "s" / "fig4.sigma=0.3.quantum.csv").read_bytes()
    assert q == s
    meta, beta = read_table(tmp_path / "s" / "fig4.beta.csv")
    assert float(meta["period"]) == pytest.approx(0.4, rel=0.05)
    assert beta["beta"][0] >= 0


def test_parallel_jobs_identical(tmp_path):
    args = ["sweep", "--config", "fig4", *SMALL, "--set", "sweep.sigma=0.1,0.2"]
    run(tmp_path / "a", *args)
    run(tmp_path / "b", *args, "--jobs", "2")
    for name in ("fig4.sigma=0.1.quantum.csv", "fig4.sigma=0.2.quantum.csv", "fig4.beta.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_semiclassical_sidecar(tmp_path):
    assert run(tmp_path, "semiclassical", "--config", "fig3", "--set", "run.t_max=200") == EXIT_OK
    meta, est = read_table(tmp_path / "fig3.estimates.csv")
    assert meta["status"] == "ok"
    _, series = read_table(tmp_path / "fig3.semiclassical.csv")
    assert list(series) == ["t", "M_sc_integral", "M_sc1", "M_sc2"]
    assert series["M_sc_integral"][0] == pytest.approx(1.0)


def test_semiclassical_free_rotation(tmp_path):
    run(tmp_path, "semiclassical", "--config", "fig3", "--set", "model.k=0", "--set", "run.t_max=50",
        "--set", "packet.p0_over_pi=0.7")
    text = (tmp_path / "fig3.estimates.csv").read_text().splitlines()
    rows = {line.split(",")[0]: float(line.split(",")[1]) for line in text if not line.startswith("#")
            and not line.startswith("name")}
    assert rows["nu"] == pytest.approx(0.7 * math.pi, abs=1e-9)
    assert rows["nu_prime"] == pytest.approx(1.0, abs=1e-8)
    assert abs(rows["U_I"]) < 1e-9


def test_fit_on_synthetic_file(tmp_path, capsys):
    t = np.arange(1, 5001)
    write_table(tmp_path / "syn.csv", [], {"t": t, "M_quantum": t ** -1.5})
    assert main(["fit", "--config", "fig3", "--input", str(tmp_path / "syn.csv"), "--t-lo", "10", "--t-hi", "5000",
                 "--smoothing", "1", "--out", str(tmp_path)]) == EXIT_OK
    _, fit = read_table(tmp_path / "fig3.fit.csv")
    assert fit["alpha"][0] == pytest.approx(1.5, abs=1e-12)
    assert "alpha = 1.5" in capsys.readouterr().out


def test_tau1_and_compare_run(tmp_path):
    assert run(tmp_path, "tau1", "--config", "fig2", "--set", "model.n_dim=1024", "--set", "run.t_max=40",
               "--set", "packet.p0_over_pi=0.6") == EXIT_OK
    _, cols = read_table(tmp_path / "fig2.tau1.csv")
    assert cols["tau1_estimate"][0] > 0
    assert run(tmp_path, "compare", "--config", "fig3", "--set", "run.t_max=200") == EXIT_OK
    meta, _ = read_table(tmp_path / "fig3.compare.csv")
    assert float(meta["max_rel_error"]) < 0.01


def test_exit_codes(tmp_path, capsys):
    assert run(tmp_path, "quantum", "--config", "fig3", "--set", "model.n_dim=1") == EXIT_VALIDATION
    assert "model" in capsys.readouterr().err
    assert run(tmp_path, "quantum", "--config", str(tmp_path / "missing.cfg")) == EXIT_VALIDATION
    assert run(tmp_path, "sweep", "--config", "fig3", *SMALL) == EXIT_VALIDATION
    assert run(tmp_path, "semiclassical", "--config", "fig3", "--set", "run.t_max=5000",
               "--set", "run.sc_integral_t_max=5000", "--set", "run.quadrature_budget=100") == EXIT_BUDGET
    assert run(tmp_path, "fit", "--config", "fig3", *SMALL, "--t-lo", "50", "--t-hi", "10") == EXIT_ANALYSIS
