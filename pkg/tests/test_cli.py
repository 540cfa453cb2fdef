import json

import pytest

from borrowbench import cli
from borrowbench.conjugate import BetaParams, NormalParams
from borrowbench.data import builtin_dataset
from borrowbench.errors import UnknownMethod
from borrowbench.methods import DmppConfig, MapConfig

FAST = ["--methods", "current_only,mem"]


def test_smoke_run(tmp_path, capsys):
    out = tmp_path / "o"
    code = cli.main(["analyze", "--builtin", "as_binary", *FAST, "--seed", "1", "--out", str(out)])
    assert code == 0
    assert (out / "results.json").exists() and (out / "forest.csv").exists()
    assert (out / "run_info.json").exists()
    lines = capsys.readouterr().out.splitlines()
    assert [l.split()[0] for l in lines] == ["current_only", "mem"]
    assert "EHSS n/a" in lines[0] and "max R-hat" in lines[1]


def test_results_json_is_reproducible(tmp_path):
    docs = []
    for name in ("a", "b"):
        cfg = cli.RunConfig(dataset="as_binary", methods=["current_only", "mem", "dmpp"], output_dir=str(tmp_path / name),
                            chain={"n_chains": 2, "n_warmup": 200, "n_keep": 1000}, formats=["json"])
        assert cli.run(cfg) == 0
        docs.append((tmp_path / name / "results.json").read_bytes())
    assert docs[0] == docs[1]
    doc = json.loads(docs[0])
    # the effective config is fully resolved
    assert doc["config"]["chain"] == {"n_chains": 2, "n_warmup": 200, "n_keep": 1000, "seed": 1, "thin": 1}
    assert doc["config"]["method_settings"]["dmpp"]["kappa_log_sd"] == 1.0
    assert "started" not in docs[0].decode()


def test_missing_sd_is_a_validation_error(tmp_path, capsys):
    csv = tmp_path / "d.csv"
    csv.write_text("role,label,n,mean,sd\nH,H1,100,5.0,6.0\nCC,CC,50,4.8,\nCT,CT,50,3.0,7.0\n")
    code = cli.main(["analyze", "--data", str(csv), "--endpoint", "continuous", *FAST, "--out", str(tmp_path / "o")])
    assert code == 2
    assert "sd" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["analyze", "--builtin", "as_binary", "--methods", "bogus"],
    ["analyze", "--builtin", "nope"],
    ["analyze", "--builtin", "adcs_continuous", "--sigma-ref", "0", "--methods", "mem"],
    ["analyze", "--builtin", "as_binary", "--endpoint", "continuous"],
    ["analyze", "--builtin", "as_binary", "--format", "pdf"],
    ["analyze", "--methods", "mem"],
    ["describe", "bogus"],
    ["datasets", "nope"],
])
def test_validation_exit_code(argv, tmp_path, capsys):
    assert cli.main(argv + (["--out", str(tmp_path)] if argv[0] == "analyze" else [])) == 2
    assert capsys.readouterr().err.startswith("error:")


def test_numerical_failure_exit_code(tmp_path, monkeypatch):
    from borrowbench.errors import EmFailure

    def boom(*a, **k):
        raise EmFailure("no EM restart converged")

    monkeypatch.setattr(cli, "run_methods", boom)
    assert cli.run(cli.RunConfig(dataset="as_binary", methods=["mem"], output_dir=str(tmp_path))) == 3


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "f"
    blocker.write_text("x")
    cfg = cli.RunConfig(dataset="as_binary", methods=["current_only"], output_dir=str(blocker / "sub"),
                        chain={"n_chains": 1, "n_keep": 100})
    assert cli.run(cfg) == 2


def test_describe_texts():
    assert "Bayesian model averaging over exchangeability patterns" in cli.describe("mem")
    pbm = cli.describe("pbm_hs")
    assert "conflict/compatibility summaries, not borrowing amounts" in pbm
    for m in cli.DESCRIPTIONS:
        text = cli.describe(m)
        assert "borrowing mechanism" in text and "source-level summary" in text
    with pytest.raises(UnknownMethod):
        cli.describe("bogus")


def test_datasets_listing(capsys):
    assert cli.main(["datasets"]) == 0
    out = capsys.readouterr().out
    assert "as_binary" in out and "adcs_continuous" in out
    assert cli.main(["datasets", "as_binary"]) == 0
    assert capsys.readouterr().out == builtin_dataset("as_binary").to_csv()


def test_config_file_overrides(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({
        "dataset": "as_binary", "methods": "map,dmpp", "seed": 7,
        "map": {"tau_prior_scale": 0.5, "mu_prior": {"m": 0.0, "v": 4.0}},
        "dmpp": {"initial_prior": {"a": 2, "b": 3}, "fixed_gamma": [1, 0, 1, 0, 1, 0, 1, 0]},
    }))
    cfg = cli.load_config(str(path))
    assert cfg.methods == ["map", "dmpp"] and cfg.seed == 7
    m = cli.method_config("map", cfg.overrides["map"])
    assert m == MapConfig(tau_prior_scale=0.5, mu_prior=NormalParams(0.0, 4.0))
    d = cli.method_config("dmpp", cfg.overrides["dmpp"])
    assert d == DmppConfig(initial_prior=BetaParams(2.0, 3.0), fixed_gamma=(1, 0, 1, 0, 1, 0, 1, 0))


def test_config_errors(tmp_path):
    with pytest.raises(ValueError):
        cli.method_config("map", {"bogus": 1})
    with pytest.raises(ValueError):
        cli.method_config("current_only", {"x": 1})
    with pytest.raises(ValueError):
        cli.method_config("map", {"mu_prior": {"q": 1}})
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"nonsense": 1}))
    with pytest.raises(ValueError):
        cli.load_config(str(path))
    path.write_text("[1, 2]")
    with pytest.raises(ValueError):
        cli.load_config(str(path))


def test_flags_override_config(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"dataset": "as_binary", "seed": 7, "formats": ["json"]}))
    args = cli.build_parser().parse_args(["analyze", "--config", str(path), "--seed", "9", "--format", "csv,svg"])
    cfg = cli.config_from_args(args)
    assert cfg.seed == 9 and cfg.formats == ["csv", "svg"] and cfg.dataset == "as_binary"


def test_module_entry_point():
    import subprocess
    import sys

    proc = subprocess.run([sys.executable, "-m", "borrowbench.cli", "describe", "mem"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("mem")
    proc = subprocess.run([sys.executable, "-m", "borrowbench.cli", "describe", "bogus"], capture_output=True, text=True)
    assert proc.returncode == 2
