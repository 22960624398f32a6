import io
import json
import math
import struct

import numpy as np
import pytest

from vpfp.cli import main
from vpfp.diagnostics import EnergyReport
from vpfp.harness import (
    CheckpointError,
    ReportSink,
    checkpoint_bytes,
    checkpoint_read,
    checkpoint_write,
    emit_report,
    format_config,
    parse_config,
    read_reports,
    run_simulation,
)
from vpfp.state import ConfigError, ICSpec, SimConfig, SpectralState, enumerate_layout, init_state

SMALL = """
dim = 1
fourier_cutoff = 3
hermite_cutoff = 4
sobolev_order = 2
dt = 0.002
t_end = 0.2
report_interval = 0.02
ic = random_smooth
ic_amplitude = 0.01
ic_seed = 4
"""


# config


def test_empty_config_gives_defaults():
    assert parse_config("") == SimConfig()
    assert parse_config("# only a comment\n\n") == SimConfig()


def test_negative_dt_names_line():
    with pytest.raises(ConfigError, match=r"dt must be positive \(line 1\)"):
        parse_config("dt = -1")


def test_hermite_cutoff_one_rejected():
    with pytest.raises(ConfigError, match="momentum_residual") as exc:
        parse_config("hermite_cutoff = 1")
    assert "M >= 2" in str(exc.value)


@pytest.mark.parametrize(
    "text,needle",
    [
        ("colour = red", "unknown key"),
        ("dt = 0.1\ndt = 0.2", "duplicate"),
        ("dt 0.1", "line 1"),
        ("\n\nK = 3", "line 3"),
        ("dt = abc", "cannot parse"),
        ("scheme = euler", "scheme"),
    ],
)
def test_config_errors(text, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_config(text)


def test_config_values_and_round_trip():
    cfg = parse_config(SMALL + "lambda0 = computed\nic_target_energy = 1e-4\n")
    assert cfg.fourier_cutoff == 3 and cfg.ic.seed == 4 and cfg.lambda0 is None
    assert cfg.ic.target_energy == 1e-4
    assert parse_config(format_config(cfg)) == cfg
    single = parse_config("ic = single_mode\nic_k = 1\nic_m = 0\nic_amplitude = 0.01")
    assert single.ic == ICSpec(kind="single_mode", amplitude=0.01, k0=(1,), m0=(0,))


# CSV


def _report(t, scale=1.0):
    vals = [t] + [scale * (i + 1) / 7 for i in range(len(EnergyReport.columns()) - 1)]
    return EnergyReport(*vals)


def test_csv_header_once_and_round_trip(tmp_path):
    path = tmp_path / "r.csv"
    reps = [_report(0.0), _report(0.1, math.pi), _report(0.2, 1e-300)]
    with open(path, "w", newline="") as fh:
        sink = ReportSink(fh)
        for r in reps:
            emit_report(sink, r)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(EnergyReport.columns())
    assert len(lines) == 4
    cols = read_reports(path)
    for i, r in enumerate(reps):
        assert [cols[c][i] for c in EnergyReport.columns()] == r.values()


def test_zero_report_row():
    buf = io.StringIO()
    sink = ReportSink(buf)
    rep = EnergyReport(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.1, 0.2, 0.0, 0.0, 0.0, 0.0)
    sink.emit(rep)
    row = buf.getvalue().splitlines()[1].split(",")
    assert row[:6] == ["0"] * 6 and row[6:8] == ["0.10000000000000001", "0.20000000000000001"]


# checkpoints


def _state():
    cfg = SimConfig(dim=2, fourier_cutoff=2, hermite_cutoff=3, ic=ICSpec(seed=9))
    s = init_state(cfg)
    return SpectralState(0.123456789, s.coeffs), cfg


def test_checkpoint_round_trip_bit_exact(tmp_path):
    s, cfg = _state()
    p = tmp_path / "s.vpfp"
    checkpoint_write(p, s, cfg)
    back = checkpoint_read(p)
    assert back == s
    assert back.coeffs.tobytes() == s.coeffs.tobytes()
    assert back.info["sobolev_order"] == cfg.sobolev_order


def test_checkpoint_layout(tmp_path):
    s, cfg = _state()
    blob = checkpoint_bytes(s, 3)
    magic, version, d, K, M, N, t = struct.unpack_from("<4sIIIIId", blob)
    assert (magic, version, d, K, M, N, t) == (b"VPFP", 1, 2, 2, 3, 3, s.t)
    payload = np.frombuffer(blob, dtype="<f8", offset=32)
    for i, (k, m) in enumerate(enumerate_layout(2, 2, 3)):
        v = s.coeffs[tuple(c + 2 for c in k) + m]
        assert payload[2 * i] == v.real and payload[2 * i + 1] == v.imag


def test_checkpoint_truncated(tmp_path):
    s, cfg = _state()
    p = tmp_path / "s.vpfp"
    p.write_bytes(checkpoint_bytes(s, 3)[:-5])
    with pytest.raises(CheckpointError, match="size mismatch"):
        checkpoint_read(p)
    p.write_bytes(b"VPF")
    with pytest.raises(CheckpointError, match="size mismatch"):
        checkpoint_read(p)


def test_checkpoint_header_payload_disagree(tmp_path):
    s = init_state(SimConfig(fourier_cutoff=1, hermite_cutoff=2))
    blob = bytearray(checkpoint_bytes(s, 3))
    struct.pack_into("<I", blob, 12, 2)  # K field
    p = tmp_path / "s.vpfp"
    p.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError) as exc:
        checkpoint_read(p)
    msg = str(exc.value)
    assert f"expected {32 + 16 * 5 * 3}" in msg and f"got {len(blob)}" in msg


def test_checkpoint_bad_magic_and_version(tmp_path):
    s, _ = _state()
    blob = bytearray(checkpoint_bytes(s, 3))
    p = tmp_path / "s.vpfp"
    p.write_bytes(b"XXXX" + bytes(blob[4:]))
    with pytest.raises(CheckpointError, match="magic"):
        checkpoint_read(p)
    struct.pack_into("<I", blob, 4, 7)
    p.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="version"):
        checkpoint_read(p)


# runs


def test_run_outputs_and_determinism(tmp_path):
    cfg = parse_config(SMALL + "checkpoint_every = 50\n")
    m1, _ = run_simulation(cfg, tmp_path / "a")
    m2, _ = run_simulation(cfg, tmp_path / "b")
    a, b = tmp_path / "a", tmp_path / "b"
    assert (a / "reports.csv").read_bytes() == (b / "reports.csv").read_bytes()
    assert (a / "checkpoints" / "final.vpfp").read_bytes() == (b / "checkpoints" / "final.vpfp").read_bytes()
    assert sorted(p.name for p in (a / "checkpoints").iterdir()) == [
        "final.vpfp",
        "state_000000050.vpfp",
        "state_000000100.vpfp",
    ]
    manifest = json.loads((a / "manifest.json").read_text())
    assert manifest["status"] == m1.status == "PASS"
    assert manifest["kappa"] == pytest.approx(min(manifest["lambda0"] / 2, 0.125))
    assert manifest["eta"] == pytest.approx(0.4 * manifest["kappa"])
    assert len(read_reports(a / "reports.csv")["t"]) == 11


def test_resume_is_byte_exact(tmp_path):
    full = parse_config(SMALL)
    run_simulation(full, tmp_path / "direct")
    first = parse_config(SMALL.replace("t_end = 0.2", "t_end = 0.1"))
    run_simulation(first, tmp_path / "split")
    ckpt = tmp_path / "split" / "checkpoints" / "final.vpfp"
    (tmp_path / "mid.vpfp").write_bytes(ckpt.read_bytes())
    run_simulation(full, tmp_path / "split", resume=tmp_path / "mid.vpfp")
    direct, split = tmp_path / "direct", tmp_path / "split"
    assert (split / "reports.csv").read_bytes() == (direct / "reports.csv").read_bytes()
    assert (split / "checkpoints" / "final.vpfp").read_bytes() == (direct / "checkpoints" / "final.vpfp").read_bytes()


def test_t_end_zero_single_report(tmp_path):
    cfg = parse_config(SMALL.replace("t_end = 0.2", "t_end = 0"))
    _, result = run_simulation(cfg, tmp_path)
    assert [r.t for r in result.reports] == [0.0]


# CLI


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_cli_lambda0(capsys):
    assert main(["lambda0", "--config", "default"]) == 0
    out = capsys.readouterr().out
    assert "complement_P0" in out and "complement_P " in out
    lam = float(out.split("used")[1].split("lambda0 = ")[1].split()[0])
    kappa = float(out.split("used")[1].split("kappa = ")[1].split()[0])
    assert 0 < lam <= 1 and kappa == pytest.approx(min(lam / 2, 0.125), rel=1e-14)


def test_cli_config_error_exit_code(tmp_path, capsys):
    assert main(["lambda0", "--config", _write(tmp_path, "bad.cfg", "dt = -1\n")]) == 2
    assert "line 1" in capsys.readouterr().err
    assert main(["lambda0", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert main(["no-such-command"]) == 2


def test_cli_run_zero_ic(tmp_path):
    cfg = _write(tmp_path, "z.cfg", SMALL.replace("random_smooth", "zero"))
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "out")]) == 0
    cols = read_reports(tmp_path / "out" / "reports.csv")
    assert np.all(cols["E_N"] == 0) and len(cols["t"]) == 11


def test_cli_fit_decay_synthetic(tmp_path, capsys):
    t = np.linspace(0, 10, 101)
    lines = ["t,E_N"] + [f"{x:.17g},{math.exp(-0.5 * x):.17g}" for x in t]
    csv_path = _write(tmp_path, "s.csv", "\n".join(lines) + "\n")
    assert main(["fit-decay", csv_path]) == 0
    out = capsys.readouterr().out
    assert float(out.split("eta_fit = ")[1].split()[0]) == pytest.approx(0.5, abs=1e-10)
    assert "PASS" in out


def test_cli_fit_decay_too_slow(tmp_path):
    t = np.linspace(0, 10, 101)
    lines = ["t,E_N,kappa"] + [f"{x:.17g},{math.exp(-0.01 * x):.17g},0.125" for x in t]
    assert main(["fit-decay", _write(tmp_path, "s.csv", "\n".join(lines) + "\n")]) == 1


def test_cli_validate(tmp_path, capsys):
    s, cfg = _state()
    good = tmp_path / "g.vpfp"
    checkpoint_write(good, s, cfg)
    assert main(["validate", str(good)]) == 0
    assert "OK" in capsys.readouterr().out
    c = np.array(s.coeffs)
    c[2, 2, 0, 0] = 1.0
    bad = tmp_path / "b.vpfp"
    checkpoint_write(bad, SpectralState(0.0, c), cfg)
    assert main(["validate", str(bad)]) == 1
    assert "neutrality" in capsys.readouterr().out
    (tmp_path / "t.vpfp").write_bytes(good.read_bytes()[:40])
    assert main(["validate", str(tmp_path / "t.vpfp")]) == 1


def test_cli_spectrum_and_oracle(tmp_path, capsys):
    cfg = _write(tmp_path, "s.cfg", SMALL)
    assert main(["spectrum", "--config", cfg]) == 0
    assert "abscissa" in capsys.readouterr().out
    assert main(["oracle-compare", "--config", cfg]) == 0
    assert "PASS" in capsys.readouterr().out
    assert main(["oracle-compare", "--config", cfg, "--tol", "1e-30"]) == 1
