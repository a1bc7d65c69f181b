import pytest

from tortoise_nls import cli
from tortoise_nls.config import EXPERIMENTS, SCHEMA, ConfigError, parse_config
from tortoise_nls.geometry import Grid
from tortoise_nls.state import gaussian, save_wavefunction

SMALL = """
grid.n = 512
grid.r_star_min = -150
grid.r_star_max = 250
initial_data.width = 2
initial_data.momentum = 1
t_end = 4
record_every = 20
"""


def write_cfg(tmp_path, body, name="c.cfg"):
    path = tmp_path / name
    path.write_text(body + f"\noutput_dir = {tmp_path / 'out'}\n", encoding="utf-8")
    return path


def test_parse_defaults_and_comments():
    cfg = parse_config("experiment = conservation  # trailing\n# full line\nlambda = 0.5\n")
    assert cfg["lambda"] == 0.5 and cfg["p"] == 5.0 and cfg["dt"] is None
    assert cfg["initial_data.center"] == "alpha"
    lines = cfg.resolved_lines()
    assert len(lines) == len(SCHEMA) and "lambda = 0.5" in lines


@pytest.mark.parametrize("text", [
    "lambda = 1",                                        # no experiment
    "experiment = nope",
    "experiment = conservation\nbogus = 1",
    "experiment = conservation\nlambda = -1",
    "experiment = conservation\ngrid.n = 1000",
    "experiment = conservation\nsigma = 1.6",
    "experiment = conservation\nsigma = 1.0\nbeta = 3.0",
    "experiment = conservation\np = abc",
    "experiment = conservation\nschedule = 10, 5",
    "experiment = conservation\nlambda = 1\nlambda = 2",
    "experiment = conservation\njust words",
    "experiment = dispersive\nt_samples = 0.5, 2",
    "experiment = conservation\ninitial_data = file",
])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_exit_code_config_error(tmp_path):
    assert cli.main(["run", str(write_cfg(tmp_path, "experiment = bogus"))]) == 2
    assert cli.main(["run", str(tmp_path / "missing.cfg")]) == 2


def test_zero_data_conservation_is_trivial_pass(tmp_path):
    body = "experiment = conservation\ninitial_data.amplitude = 0\n" + SMALL
    assert cli.main(["run", str(write_cfg(tmp_path, body))]) == 0
    summary = (tmp_path / "out" / "summary.txt").read_text()
    assert "OVERALL PASS" in summary and "# config experiment = conservation" in summary


def test_runs_are_byte_identical(tmp_path):
    body = "experiment = monotonicity\ninitial_data.amplitude = 1.5\n" + SMALL
    path = write_cfg(tmp_path, body)
    assert cli.main(["run", str(path)]) == 0
    first = (tmp_path / "out" / "trajectory.csv").read_bytes()
    assert cli.main(["run", str(path)]) == 0
    assert (tmp_path / "out" / "trajectory.csv").read_bytes() == first
    assert first.startswith(b"# config experiment = monotonicity")


def test_domain_guard_exit_code(tmp_path):
    body = "experiment = linf-decay\ngrid.n = 256\ngrid.r_star_min = -30\ngrid.r_star_max = 30\nt_end = 80"
    path = write_cfg(tmp_path, body)
    assert cli.main(["validate", str(path)]) == 3
    assert cli.main(["run", str(path)]) == 3
    assert "GUARD" in (tmp_path / "out" / "summary.txt").read_text()


def test_validate_ok(tmp_path, capsys):
    assert cli.main(["validate", str(write_cfg(tmp_path, "experiment = conservation\n" + SMALL))]) == 0
    assert "completeness_valid=True" in capsys.readouterr().out


def test_file_initial_data(tmp_path):
    g = Grid(512, -150.0, 250.0)
    save_wavefunction(tmp_path / "psi.txt", gaussian(g, 0.0, 2.0, 1.0))
    body = (f"experiment = conservation\ninitial_data = file\ninitial_data.path = {tmp_path / 'psi.txt'}\n"
            + SMALL)
    assert cli.main(["run", str(write_cfg(tmp_path, body))]) == 0
    bad = body.replace("grid.n = 512", "grid.n = 256")
    assert cli.main(["run", str(write_cfg(tmp_path, bad, "bad.cfg"))]) == 2


def test_identity_suite_passes(tmp_path):
    body = "experiment = identity-suite\ngrid.n = 512\ngrid.r_star_min = -60\ngrid.r_star_max = 60\n" \
           "initial_data.width = 3"
    assert cli.main(["run", str(write_cfg(tmp_path, body))]) == 0
    text = (tmp_path / "out" / "summary.txt").read_text()
    for name in ("commutator_random", "remainder_route_agreement", "exponent_identities", "threshold_flags"):
        assert f"{name}:" in text


EXTRA = {
    "local-decay": "",
    "pseudoconformal": "t_end = 6\nrecord_every = 5\n",
    "linf-decay": "t_end = 12\nrecord_every = 5\n",
    "dispersive": "t_end = 5\nlambda = 0\n",
    "completeness": "schedule = 1, 2, 4\n",
    "wave-operator": "lambda = 0.5\nwave_op.T = 2\nwave_op.t_max = 6\nschedule = 2, 4, 6\n",
}


@pytest.mark.parametrize("experiment", sorted(EXTRA))
def test_every_experiment_runs(tmp_path, experiment):
    base = SMALL
    for key in ("t_end", "record_every"):
        if key in EXTRA[experiment]:
            base = "".join(ln + "\n" for ln in base.splitlines() if not ln.startswith(key))
    body = f"experiment = {experiment}\n" + base + EXTRA[experiment]
    code = cli.main(["run", str(write_cfg(tmp_path, body))])
    assert code in (0, 1)
    lines = (tmp_path / "out" / "summary.txt").read_text().splitlines()
    assert lines[-1].startswith("OVERALL")
    assert (code == 0) == (lines[-1] == "OVERALL PASS")


def test_too_few_fit_samples_is_a_config_error(tmp_path):
    body = "experiment = pseudoconformal\n" + SMALL
    assert cli.main(["run", str(write_cfg(tmp_path, body))]) == 2


def test_every_experiment_has_a_runner():
    assert set(cli.RUNNERS) == set(EXPERIMENTS)
