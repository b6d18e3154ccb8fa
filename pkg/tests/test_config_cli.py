import json

import pytest

from busylab.cli import main
from busylab.config import ConfigError, load_config
from busylab.experiments import (
    ExperimentReport,
    GateResult,
    RUNNERS,
    run_eps_sweep,
    run_fast_slow,
    write_csv,
)

BASE = """\
experiment: validate-baseline
seed: 31
replications: 20000
queue: {{lambda: 0.5, mu: 1.0}}
environment:
  generator: [[-1.0, 1.0], [1.0, -1.0]]
  p: [-1.0, 1.0]
{extra}"""


def write(tmp_path, text, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def load(tmp_path, text, **kw):
    return load_config(write(tmp_path, text), **kw)


# -- validation ------------------------------------------------------------


def test_config_roundtrip(tmp_path):
    cfg = load(tmp_path, BASE.format(extra="epsilons: [0.0, 0.1]\n"))
    assert cfg.experiment == "validate-baseline"
    assert cfg.seed == 31 and cfg.replications == 20000
    assert cfg.queue.lam == 0.5 and cfg.queue.mu == 1.0
    assert cfg.epsilons == (0.0, 0.1)
    assert cfg.alphas == ()
    assert cfg.output_path is None
    assert len(cfg.config_hash) == 16
    int(cfg.config_hash, 16)
    assert cfg.env_at(3.5).alpha == 3.5
    assert cfg.env_at(3.5).generator == pytest.approx(cfg.env.generator)


@pytest.mark.parametrize("mangle, what", [
    (lambda t: t + "rho: 0.5\n", "unknown top-level key"),
    (lambda t: t.replace("mu: 1.0", "mu: 1.0, nu: 2"), "unknown queue key"),
    (lambda t: t.replace("seed: 31\n", ""), "missing seed"),
    (lambda t: t.replace("seed: 31", "seed: -4"), "negative seed"),
    (lambda t: t.replace("seed: 31", "seed: 18446744073709551616"), "seed > 64 bit"),
    (lambda t: t.replace("seed: 31", "seed: true"), "boolean seed"),
    (lambda t: t.replace("seed: 31", "seed: '31'"), "string seed"),
    (lambda t: t.replace("replications: 20000", "replications: 0"), "zero reps"),
    (lambda t: t.replace("replications: 20000", "replications: 1.5"), "float reps"),
    (lambda t: t.replace("lambda: 0.5", "lambda: 1.5"), "unstable queue"),
    (lambda t: t.replace("validate-baseline", "warmup"), "unknown experiment"),
    (lambda t: t.replace("p: [-1.0, 1.0]", "p: [-1.0, 1.0, 0.0]"), "p length"),
    (lambda t: t.replace("p: [-1.0, 1.0]", "p: [-1.0, true]"), "boolean p"),
    (lambda t: t + "epsilons: [0.1, -0.2]\n", "negative eps"),
    (lambda t: t + "epsilons: [0.6]\n", "eps breaks stability"),
    (lambda t: t + "alphas: [0.5, no]\n", "boolean alpha"),
])
def test_config_rejects(tmp_path, mangle, what):
    with pytest.raises(ConfigError):
        load(tmp_path, mangle(BASE.format(extra="")))


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "absent.yaml"))
    with pytest.raises(ConfigError):
        load(tmp_path, "")
    with pytest.raises(ConfigError):
        load(tmp_path, "- just\n- a list\n")
    with pytest.raises(ConfigError):
        load(tmp_path, "a: [unclosed\n")


def test_overrides_fold_into_hash(tmp_path):
    text = BASE.format(extra="")
    plain = load(tmp_path, text)
    seeded = load(tmp_path, text, seed=99)
    assert seeded.seed == 99
    assert seeded.config_hash != plain.config_hash
    # an override equals editing the file: the hashes coincide
    edited = load(tmp_path, text.replace("seed: 31", "seed: 99"))
    assert edited.config_hash == seeded.config_hash
    reps = load(tmp_path, text, replications=5)
    assert reps.replications == 5
    # cosmetic edits do not move the hash
    cosmetic = load(tmp_path, "# comment\n" + text.replace(
        "queue: {lambda: 0.5, mu: 1.0}", "queue:\n  lambda: 0.5\n  mu: 1.0"))
    assert cosmetic.config_hash == plain.config_hash


def test_runner_preconditions(tmp_path):
    cfg = load(tmp_path, BASE.format(extra=""))
    with pytest.raises(ConfigError):
        run_eps_sweep(cfg)                       # no epsilons
    with pytest.raises(ConfigError):
        run_fast_slow(cfg)                       # no alphas
    cfg2 = load(tmp_path, BASE.format(
        extra="alphas: [1.0]\nepsilons: [0.0, 0.1]\n"))
    with pytest.raises(ConfigError):
        run_fast_slow(cfg2)                      # eps grid contains 0


# -- CSV output ------------------------------------------------------------


def test_write_csv_layout(tmp_path):
    cfg = load(tmp_path, BASE.format(extra=""))
    report = RUNNERS["validate-baseline"](cfg, workers=2)
    assert report.passed
    out = tmp_path / "base.csv"
    write_csv(report, str(out), cfg)
    text = out.read_text()
    lines = text.splitlines()
    assert lines[0] == (f"# config_hash={cfg.config_hash} seed=31 "
                        f"version={__import__('busylab').__version__}")
    assert lines[1] == "# experiment=validate-baseline"
    assert lines[2] == ",".join(report.columns)
    assert len(lines) == 3 + len(report.rows)
    assert "np.float64" not in text and "-0.0," not in text
    # every numeric cell round-trips through float()
    for line in lines[3:]:
        cells = line.split(",")
        assert len(cells) == len(report.columns)
        for cell in cells[1:]:
            float(cell)


def test_csv_identical_across_workers(tmp_path):
    text = BASE.format(extra="epsilons: [0.0, 0.06]\n").replace(
        "validate-baseline", "eps-sweep").replace("replications: 20000",
                                                  "replications: 12000")
    cfg = load(tmp_path, text)
    blobs = []
    for workers, name in [(1, "a.csv"), (3, "b.csv")]:
        report = RUNNERS["eps-sweep"](cfg, workers=workers)
        out = tmp_path / name
        write_csv(report, str(out), cfg)
        blobs.append(out.read_bytes())
    assert blobs[0] == blobs[1]


# -- command-line entry ----------------------------------------------------


def test_cli_pass_run(tmp_path, capsys):
    cfg_path = write(tmp_path, BASE.format(extra=""))
    out = tmp_path / "run.csv"
    rc = main(["validate-baseline", "--config", cfg_path,
               "--out", str(out), "--workers", "2"])
    assert rc == 0
    assert out.exists()
    captured = capsys.readouterr().out
    assert "FAIL" not in captured
    assert captured.count("PASS") >= 6
    assert f"wrote {out}" in captured


def test_cli_seed_override_moves_hash(tmp_path, capsys):
    cfg_path = write(tmp_path, BASE.format(extra=""))
    hashes = []
    for seed in ("31", "77"):
        rc = main(["validate-baseline", "--config", cfg_path,
                   "--seed", seed, "--out", str(tmp_path / f"s{seed}.csv")])
        assert rc == 0
        line = [l for l in capsys.readouterr().out.splitlines()
                if l.startswith("wrote ")][0]
        hashes.append(line.rsplit("config_hash=", 1)[1].rstrip(")"))
    assert hashes[0] != hashes[1]


def test_cli_usage_errors(tmp_path, capsys):
    cfg_path = write(tmp_path, BASE.format(extra=""))
    assert main(["validate-baseline", "--config",
                 str(tmp_path / "nope.yaml")]) == 2
    assert "error:" in capsys.readouterr().err
    # tag in the file does not match the subcommand
    assert main(["coeffs", "--config", cfg_path]) == 2
    assert "validate-baseline" in capsys.readouterr().err
    assert main(["validate-baseline", "--config", cfg_path,
                 "--workers", "0"]) == 2
    with pytest.raises(SystemExit):
        main(["frobnicate", "--config", cfg_path])
    with pytest.raises(SystemExit):
        main([])


def test_cli_untagged_config_runs_anywhere(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg_path = write(tmp_path, BASE.format(extra="").replace(
        "experiment: validate-baseline\n", ""))
    rc = main(["validate-baseline", "--config", cfg_path])
    assert rc == 0
    assert (tmp_path / "validate-baseline.csv").exists()


def test_cli_gate_failure_exit_and_json(tmp_path, capsys, monkeypatch):
    def broken(cfg, workers=1):
        return ExperimentReport(
            experiment="validate-baseline",
            columns=("statistic", "value"),
            rows=[("busy", 2.0)],
            gates=[GateResult("sanity", True, "fine"),
                   GateResult("moment_match", False, "z=9.3")],
        )

    monkeypatch.setitem(RUNNERS, "validate-baseline", broken)
    cfg_path = write(tmp_path, BASE.format(extra=""))
    rc = main(["validate-baseline", "--config", cfg_path,
               "--out", str(tmp_path / "f.csv")])
    assert rc == 1
    out_lines = capsys.readouterr().out.splitlines()
    assert any(l.startswith("FAIL moment_match") for l in out_lines)
    payload = json.loads(out_lines[-1])
    assert payload["experiment"] == "validate-baseline"
    assert payload["failures"] == [{"gate": "moment_match", "detail": "z=9.3"}]
    assert len(payload["config_hash"]) == 16
