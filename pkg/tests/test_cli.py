import json

import pytest

from blochpacket.cli import SUBCOMMANDS, build_parser, main


def test_help_exits_zero(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for name in SUBCOMMANDS:
        assert name in out


def test_unknown_subcommand_exits_two(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["transmogrify"])
    assert exc.value.code == 2


def test_missing_config_file_exits_one(tmp_path, capsys):
    code = main(["flow", "--config", str(tmp_path / "nope.json")])
    assert code == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "FileNotFoundError"


def test_invalid_config_value_exits_two(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"t_final": -3.0}))
    code = main(["flow", "--config", str(path)])
    assert code == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ConfigError"
    assert "t_final" in err["message"]


def test_unknown_config_key_exits_two(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"t_fnal": 1.0}))
    code = main(["flow", "--config", str(path)])
    assert code == 2
    assert json.loads(capsys.readouterr().err)["error"] == "ConfigError"


def test_subcommand_overrides_config_kind(tmp_path, capsys):
    # config says convergence, but the subcommand wins
    path = tmp_path / "cfg.json"
    path.write_text(
        json.dumps(
            {
                "kind": "convergence",
                "t_final": 0.2,
                "residual_time": 0.2,
                "flow_dt": 1e-2,
            }
        )
    )
    out_dir = tmp_path / "runout"
    code = main(["flow", "--config", str(path), "--out", str(out_dir)])
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["kind"] == "flow"
    assert (out_dir / "flow.csv").exists()
    assert (out_dir / "flow_summary.json").exists()


def test_envelope_run_without_config(tmp_path, capsys):
    code = main(["envelope", "--out", str(tmp_path / "env"), "--jobs", "2"])
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["kind"] == "envelope"
    with open(tmp_path / "env" / "envelope_summary.json") as fh:
        disk = json.load(fh)
    assert disk["config"] == summary["config"]


def test_parser_lists_every_runner():
    parser = build_parser()
    ns = parser.parse_args(["bands"])
    assert ns.command == "bands"
    assert ns.config is None and ns.out is None and ns.jobs is None
