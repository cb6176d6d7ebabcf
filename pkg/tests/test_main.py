import math

import pytest

from src.config import RunConfig, parse_config
from src.main import EXIT_ERROR, EXIT_HYPOTHESIS, EXIT_OK, main, run
from src.reports import ReportWriter


class RecordingWriter(ReportWriter):
    def __init__(self, output_dir):
        super().__init__(output_dir)
        self.reports = {}

    def write_report(self, name, config_text, body):
        self.reports[name] = body
        return super().write_report(name, config_text, body)


def test_main_without_arguments_prints_usage(capsys):
    assert main([]) == EXIT_ERROR
    assert "usage: fmlab" in capsys.readouterr().err


def test_main_reports_config_errors(capsys, tmp_path):
    code = main(["check", "--N", "100", "--output-dir", str(tmp_path)])

    assert code == EXIT_ERROR
    assert capsys.readouterr().err.startswith("fmlab: ")
    assert not any(tmp_path.iterdir())


def test_main_refuses_gap_violation(capsys, tmp_path):
    code = main(["check", "--q", "4", "--p", "2", "--output-dir", str(tmp_path)])

    assert code == EXIT_HYPOTHESIS
    assert "refused" in capsys.readouterr().err
    assert not any(tmp_path.iterdir())


def test_check_failure_exits_with_hypothesis_code(tmp_path):
    args = [
        "check",
        "--a0", "-1",
        "--phi", repr(math.pi / 3),
        "--output-dir", str(tmp_path),
    ]

    assert main(args) == EXIT_HYPOTHESIS
    report = (tmp_path / "check.txt").read_text()
    assert "FAIL" in report
    assert "(2) i xi (a1^ + a0)/(b1^ + b0) in S_phi" in report
    rows = (tmp_path / "check-conditions.csv").read_text().splitlines()
    assert rows[0] == "item,pass,constant,worst_xi"
    assert any(",false," in row for row in rows[1:])


def test_check_pass_report_can_be_replayed(tmp_path):
    assert main(["check", "--a1", "exp(m=1)", "--b1", "exp(m=1)", "--output-dir", str(tmp_path)]) == EXIT_OK

    replay = parse_config(["check", "--config", str(tmp_path / "check.txt")])
    assert replay.a1 == "exp(m=1)"
    assert replay.output_dir == str(tmp_path)


def test_refused_solve_writes_conditions(tmp_path):
    cfg = parse_config(
        ["solve-elliptic", "--problem", "elliptic", "--b0", "0", "--N", "64", "--output-dir", str(tmp_path)]
    )
    writer = RecordingWriter(str(tmp_path))

    assert run(cfg, writer) == EXIT_HYPOTHESIS
    assert writer.reports["solve-elliptic.txt"].startswith("REFUSED")
    assert (tmp_path / "solve-elliptic-conditions.csv").exists()


def test_gap_violation_is_refused(tmp_path):
    cfg = RunConfig(subcommand="estimate-norm", q=4.0, p=2.0, N=64, output_dir=str(tmp_path))
    writer = RecordingWriter(str(tmp_path))

    assert run(cfg, writer) == EXIT_HYPOTHESIS
    assert "REFUSED" in writer.reports["estimate-norm.txt"]


def test_unexpected_errors_exit_one(tmp_path):
    cfg = RunConfig(subcommand="solve-parabolic", problem="elliptic", output_dir=str(tmp_path))

    assert run(cfg, ReportWriter(str(tmp_path))) == EXIT_ERROR


def test_solve_parabolic_writes_profile_and_spectrum(tmp_path, capsys):
    code = main(
        [
            "solve-parabolic",
            "--a1", "exp(m=1)",
            "--b1", "exp(m=1)",
            "--operator", "laplacian(n=4, length=1, c=1)",
            "--N", "256",
            "--output-dir", str(tmp_path),
        ]
    )

    assert code == EXIT_OK
    assert "residual:" in capsys.readouterr().out
    profile = (tmp_path / "solve-parabolic-profile.csv").read_text().splitlines()
    assert profile[0] == "t,abs_u" and len(profile) == 257
    spectrum = (tmp_path / "solve-parabolic-spectrum.csv").read_text().splitlines()
    assert spectrum[0] == "k0," + ",".join(f"re_{j},im_{j}" for j in range(4))


def test_demo_fading_memory_table(tmp_path):
    args = ["demo-fading-memory", "--N", "256", "--n-x", "8", "--output-dir", str(tmp_path)]

    assert main(args) == EXIT_OK
    rows = (tmp_path / "demo-fading-memory.csv").read_text().splitlines()
    assert rows[0].split(",") == [
        "member_seed",
        "residual",
        "norm_u_prime",
        "norm_conv_u_prime",
        "norm_Au",
        "norm_conv_Au",
        "norm_f",
        "ratio_C",
    ]
    assert len(rows) == 51
    assert (tmp_path / "demo-fading-memory-conditions.csv").exists()


@pytest.mark.parametrize(
    "args,table",
    [
        (["demo-fading-memory", "--N", "256", "--n-x", "8", "--ensemble-size", "6"], "demo-fading-memory.csv"),
        (["demo-diffusion", "--N", "512", "--n-x", "4", "--K", "3"], "demo-diffusion.csv"),
        (["rbound", "--family", "scalars(1, -2, 0.5j)", "--draw-size", "8"], "rbound-trials.csv"),
    ],
)
def test_tables_do_not_depend_on_threads(tmp_path, args, table):
    single, pooled = tmp_path / "single", tmp_path / "pooled"

    assert main(args + ["--threads", "1", "--output-dir", str(single)]) == EXIT_OK
    assert main(args + ["--threads", "4", "--output-dir", str(pooled)]) == EXIT_OK

    assert (single / table).read_bytes() == (pooled / table).read_bytes()


def test_rbound_trials_table(tmp_path, capsys):
    assert main(["rbound", "--trials", "120", "--output-dir", str(tmp_path)]) == EXIT_OK

    rows = (tmp_path / "rbound-trials.csv").read_text().splitlines()
    assert rows[0] == "trial,ratio"
    assert len(rows) == 121
    assert "R_p estimate" in capsys.readouterr().out


def test_negative_m1_table(tmp_path):
    assert main(["negative-m1", "--q", "2", "--theta", "4", "--output-dir", str(tmp_path)]) == EXIT_OK

    rows = (tmp_path / "negative-m1.csv").read_text().splitlines()
    assert rows[0] == "T,majorant_sup,literal_sup"
    assert [row.split(",")[0] for row in rows[1:]] == ["100", "1000", "10000", "100000"]


def test_mikhlin_identity(tmp_path):
    args = ["mikhlin", "--symbol", "identity", "--output-dir", str(tmp_path)]

    assert main(args) == EXIT_OK
    rows = (tmp_path / "mikhlin.csv").read_text().splitlines()
    assert rows[1] == "0,1,false"
