"""Experiment orchestration: configuration schemas, PNG rendering, artifact
determinism, the report schema, and the command-line surface."""

import json
import math
import struct
import subprocess
import sys
import zlib
from pathlib import Path

import numpy as np
import pytest

import ginfield.experiments as experiments
from ginfield.cli import main
from ginfield.experiments import (
    EXPERIMENT_NAMES,
    ConfigError,
    ExperimentConfig,
    heatmap,
    run,
    validate_report_dict,
)
from ginfield.field import Grid, evaluate_field
from ginfield.gmc import RadialMollifier
from ginfield.sampler import SeedStream, sample_eigenvalues

# kernel-route variance of the mollified test statistic; frozen from the
# angular-mode sum at (eps0, eps, n) = (0.25, 0.1, 1024)
_G_VARIANCE_1024 = 0.6729433261597242


def _decode_png(data: bytes):
    """Minimal reader for the filter-0 PNGs the renderer emits; returns
    (pixels, chunk tags) and checks every CRC."""
    assert data[:8] == b"\x89PNG\r\n\x1a\n"
    pos, tags, idat = 8, [], b""
    nx = ny = color = None
    while pos < len(data):
        (length,) = struct.unpack(">I", data[pos:pos + 4])
        tag = data[pos + 4:pos + 8]
        payload = data[pos + 8:pos + 8 + length]
        (crc,) = struct.unpack(">I", data[pos + 8 + length:pos + 12 + length])
        assert crc == (zlib.crc32(tag + payload) & 0xFFFFFFFF)
        tags.append(tag)
        if tag == b"IHDR":
            nx, ny, depth, color = struct.unpack(">IIBB", payload[:10])
            assert depth == 8
        elif tag == b"IDAT":
            idat += payload
        pos += 12 + length
    ch = 1 if color == 0 else 3
    raw = zlib.decompress(idat)
    stride = nx * ch + 1
    img = np.empty((ny, nx, ch), dtype=np.uint8)
    for iy in range(ny):
        row = raw[iy * stride:(iy + 1) * stride]
        assert row[0] == 0
        img[iy] = np.frombuffer(row[1:], dtype=np.uint8).reshape(nx, ch)
    return (img[:, :, 0] if ch == 1 else img), tags


# -- configuration ----------------------------------------------------------


def test_defaults_valid_for_every_experiment():
    for name in EXPERIMENT_NAMES:
        cfg = ExperimentConfig(name=name).validated()
        assert cfg.n_list is not None
        assert cfg.threads >= 1


def test_unknown_experiment():
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig(name="nope").validated()
    assert exc.value.path == "nope.name"


def test_unknown_key():
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_dict({"name": "clt", "bogus": 1})
    assert exc.value.path == "clt.bogus"


def test_foreign_field_rejected():
    # delta is a gmc/kostlan parameter, not a ww-scan one
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig(name="ww-scan", delta=0.5).validated()
    assert exc.value.path == "ww-scan.delta"


def test_out_of_range_values():
    with pytest.raises(ConfigError, match="clt.alpha"):
        ExperimentConfig(name="clt", alpha=0.5).validated()
    with pytest.raises(ConfigError, match="max-scan.r"):
        ExperimentConfig(name="max-scan", r=1.0).validated()
    with pytest.raises(ConfigError, match="kostlan-tail.delta"):
        ExperimentConfig(name="kostlan-tail", delta=0.0).validated()
    with pytest.raises(ConfigError, match="freezing.beta_list"):
        ExperimentConfig(name="freezing", beta_list=(0.0, 1.0)).validated()


def test_n_list_strictly_increasing():
    with pytest.raises(ConfigError, match="increasing"):
        ExperimentConfig(name="max-scan", n_list=(512, 512)).validated()
    with pytest.raises(ConfigError, match="increasing"):
        ExperimentConfig(name="max-scan", n_list=(512, 256)).validated()
    with pytest.raises(ConfigError, match="at least 2"):
        ExperimentConfig(name="kernel-gap", n_list=(48,)).validated()


def test_n_list_scalar_promotion():
    cfg = ExperimentConfig(name="kostlan-tail", n_list=64).validated()
    assert cfg.n_list == (64,)


def test_seed_and_threads_validation():
    with pytest.raises(ConfigError, match="seed"):
        ExperimentConfig(name="ww-scan", seed=-1).validated()
    with pytest.raises(ConfigError, match="seed"):
        ExperimentConfig(name="ww-scan", seed=True).validated()
    with pytest.raises(ConfigError, match="threads"):
        ExperimentConfig(name="ww-scan", threads=0).validated()
    with pytest.raises(ConfigError, match="threads"):
        ExperimentConfig(name="ww-scan", threads=300).validated()


def test_seed_decoupling():
    cfg = ExperimentConfig(name="ww-scan").validated()
    assert experiments._base_seed(cfg, 64, 0) == 42 + 1_000_003 * 64
    seen = {experiments._base_seed(cfg, n, p)
            for n in (64, 128, 256) for p in (0, 1, 2)}
    assert len(seen) == 9


# -- heatmap -----------------------------------------------------------------


def test_heatmap_constant_is_flat():
    with pytest.warns(UserWarning, match="degenerate"):
        png = heatmap(np.full((4, 6), 2.5))
    img, _ = _decode_png(png)
    assert img.shape == (4, 6, 3)
    assert (img == img[0, 0]).all()


def test_heatmap_ramp_monotone():
    arr = np.array([[0.0, 1.0], [2.0, 3.0]])
    img, _ = _decode_png(heatmap(arr, palette="gray", clip=(0.0, 1.0)))
    assert img.tolist() == [[0, 85], [170, 255]]
    rgb, _ = _decode_png(heatmap(arr, palette="viridis", clip=(0.0, 1.0)))
    assert len({tuple(p) for p in rgb.reshape(-1, 3)}) == 4


def test_heatmap_orientation():
    # array row 0 is the top scanline
    arr = np.array([[1.0, 0.0], [0.0, 0.0]])
    img, _ = _decode_png(heatmap(arr, palette="gray", clip=(0.0, 1.0)))
    assert img[0, 0] == 255
    assert img[1, 1] == 0


def test_heatmap_chunk_layout():
    png = heatmap(np.arange(35, dtype=float).reshape(5, 7), palette="gray")
    img, tags = _decode_png(png)
    assert img.shape == (5, 7)
    assert tags[0] == b"IHDR" and tags[-1] == b"IEND"


def test_heatmap_clip_quantiles_absorb_outliers():
    # a few huge pixels; the default (0.01, 0.99) window must keep the
    # remaining ramp visible, while an unclipped scale crushes it to black
    vals = np.concatenate([np.linspace(0.0, 1.0, 1996), np.full(4, 1e6)])
    vals = vals.reshape(40, 50)
    img_raw, _ = _decode_png(heatmap(vals, palette="gray", clip=(0.0, 1.0)))
    img_clip, _ = _decode_png(heatmap(vals, palette="gray"))
    assert len(np.unique(img_raw)) == 2
    assert len(np.unique(img_clip)) > 50


def test_heatmap_validation():
    with pytest.raises(ValueError, match="2-D"):
        heatmap(np.zeros(9))
    with pytest.raises(ValueError, match="finite"):
        heatmap(np.array([[0.0, np.nan]]))
    with pytest.raises(ValueError, match="quantiles"):
        heatmap(np.zeros((2, 2)), clip=(0.5, 0.5))
    with pytest.raises(ValueError, match="quantiles"):
        heatmap(np.zeros((2, 2)), clip=(-0.1, 0.9))
    with pytest.raises(ValueError, match="palette"):
        heatmap(np.arange(4.0).reshape(2, 2), palette="magma")


def test_heatmap_dark_spikes_at_eigenvalues():
    es = sample_eigenvalues(100, SeedStream(77001))
    grid = Grid.centered_square(1.2, 384)
    fs = evaluate_field(es, grid)
    img, _ = _decode_png(heatmap(fs, palette="gray", clip=(0.0, 0.99)))
    dx = grid.dx
    hits = total = 0
    for lam in es.points:
        others = es.points[es.points != lam]
        if np.abs(others - lam).min() < 3.5 * dx:
            continue  # overlapping wells share one dark blob
        iy, ix = grid.nearest_index(lam)
        if not (3 <= ix < grid.nx - 3 and 3 <= iy < grid.ny - 3):
            continue
        win = img[iy - 2: iy + 3, ix - 2: ix + 3].astype(int)
        jy, jx = np.unravel_index(np.argmin(win), win.shape)
        total += 1
        if max(abs(jx - 2), abs(jy - 2)) <= 1:
            hits += 1
    assert total > 60
    assert hits == total


# -- run: artifacts and determinism ------------------------------------------


def _tiny_field_cfg(out, **kw):
    base = dict(name="field-sample", n_list=(64,), replicas=1,
                grid_resolution=64, grid_half_side=1.2, out_dir=str(out))
    base.update(kw)
    return ExperimentConfig(**base)


def test_run_writes_artifacts(tmp_path):
    rep = run(_tiny_field_cfg(tmp_path))
    assert rep.passed
    for fname in (
        "report.json", "table.csv", "timing.txt",
        "eigen_n64_rep000.eig",
        "field_n64_rep000.f64", "field_n64_rep000.json",
        "field_n64_rep000_viridis.png", "field_n64_rep000_gray.png",
    ):
        assert (tmp_path / fname).exists(), fname
    doc = json.loads((tmp_path / "report.json").read_text())
    validate_report_dict(doc)
    assert doc["passes"]["finite-values"] is True


def test_rerun_byte_identical(tmp_path):
    # out_dir is part of the config echo, so the repeat run must reuse it
    cfg = ExperimentConfig(name="ww-scan", n_list=(4, 8), gamma=2.0,
                           replicas=100, out_dir=str(tmp_path))
    run(cfg)
    first = {f: (tmp_path / f).read_bytes() for f in ("report.json", "table.csv")}
    run(cfg)
    for fname, data in first.items():
        assert (tmp_path / fname).read_bytes() == data


def test_outputs_independent_of_threads(tmp_path):
    a, b = tmp_path / "t1", tmp_path / "t2"
    run(_tiny_field_cfg(a, threads=1))
    run(_tiny_field_cfg(b, threads=2))
    da = json.loads((a / "report.json").read_text())
    db = json.loads((b / "report.json").read_text())
    assert da["config"]["threads"] == 1 and db["config"]["threads"] == 2
    assert da["results"] == db["results"]
    assert (a / "table.csv").read_bytes() == (b / "table.csv").read_bytes()
    for png in ("field_n64_rep000_viridis.png", "field_n64_rep000_gray.png"):
        assert (a / png).read_bytes() == (b / png).read_bytes()


def test_failure_report_written(tmp_path, monkeypatch):
    def boom(cfg):
        raise RuntimeError("synthetic failure")

    monkeypatch.setitem(experiments._DISPATCH, "kostlan-tail", boom)
    with pytest.raises(RuntimeError, match="synthetic"):
        run(ExperimentConfig(name="kostlan-tail", out_dir=str(tmp_path)))
    doc = json.loads((tmp_path / "report.json").read_text())
    validate_report_dict(doc)
    assert doc["passes"] == {"completed": False}
    assert "synthetic failure" in doc["notes"][0]


def test_moments_check_dimension_one(tmp_path):
    rep = run(ExperimentConfig(name="moments-check", n_list=(1,),
                               replicas=2000, out_dir=str(tmp_path)))
    assert rep.passes["closed-form-1e-12"] is True
    assert rep.passes["mc-within-3-stderr"] is True
    assert rep.passes["heine-bridge-1e-7"] is True
    assert rep.results["closed_form_abs_error"] <= 1e-12


# -- report schema -----------------------------------------------------------


def _valid_report(tmp_path) -> dict:
    out = tmp_path / "rep"
    run(ExperimentConfig(name="ww-scan", n_list=(4, 8), gamma=2.0,
                         replicas=100, out_dir=str(out)))
    return json.loads((out / "report.json").read_text())


def test_schema_accepts_real_report(tmp_path):
    validate_report_dict(_valid_report(tmp_path))


def test_schema_rejections(tmp_path):
    doc = _valid_report(tmp_path)
    missing = dict(doc)
    del missing["name"]
    with pytest.raises(ValueError, match="missing"):
        validate_report_dict(missing)
    extra = dict(doc)
    extra["surprise"] = 1
    with pytest.raises(ValueError, match="unexpected"):
        validate_report_dict(extra)
    badpass = json.loads(json.dumps(doc))
    badpass["passes"]["final-ratio-near-1"] = 1
    with pytest.raises(ValueError, match="boolean"):
        validate_report_dict(badpass)
    badname = dict(doc)
    badname["name"] = "mystery"
    with pytest.raises(ValueError, match="not among"):
        validate_report_dict(badname)


def test_schema_cross_validation(tmp_path):
    jsonschema = pytest.importorskip("jsonschema")
    from importlib import resources

    schema = json.loads(
        (resources.files("ginfield") / "schemas" / "report.schema.json")
        .read_text(encoding="utf-8")
    )
    doc = _valid_report(tmp_path)
    jsonschema.validate(doc, schema)
    doc["extra"] = True
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate(doc, schema)


# -- kernel-route variance oracle --------------------------------------------


def test_exact_g_variance_frozen():
    v = experiments._exact_g_variance(RadialMollifier(0.25), 0.1, 1024)
    assert v == pytest.approx(_G_VARIANCE_1024, rel=1e-9)


# -- command line -------------------------------------------------------------


def test_cli_pass_exit_zero(tmp_path, capsys):
    code = main(["ww-scan", "--n-list", "4,16", "--gamma", "2.0",
                 "--replicas", "100", "--out", str(tmp_path)])
    assert code == 0
    assert (tmp_path / "report.json").exists()
    assert "PASS" in capsys.readouterr().out


def test_cli_config_error_exit_two(tmp_path, capsys):
    code = main(["clt", "--alpha", "0.7", "--out", str(tmp_path)])
    assert code == 2
    assert "clt.alpha" in capsys.readouterr().err


def test_cli_fail_exit_one(tmp_path, monkeypatch, capsys):
    monkeypatch.setitem(
        experiments._DISPATCH, "ww-scan",
        lambda cfg: ({}, {"demo-flag": False}, [], None, []),
    )
    code = main(["ww-scan", "--out", str(tmp_path)])
    assert code == 1
    assert "FAIL" in capsys.readouterr().out


def test_cli_crash_exit_one(tmp_path, monkeypatch, capsys):
    def boom(cfg):
        raise RuntimeError("synthetic failure")

    monkeypatch.setitem(experiments._DISPATCH, "ww-scan", boom)
    code = main(["ww-scan", "--out", str(tmp_path)])
    assert code == 1
    assert "failed" in capsys.readouterr().err


def test_cli_config_file_overrides_flags(tmp_path):
    cfg_file = tmp_path / "override.json"
    cfg_file.write_text(json.dumps({"gamma": 2.0}), encoding="utf-8")
    out = tmp_path / "out"
    code = main(["ww-scan", "--gamma", "1.0", "--n-list", "4,8",
                 "--replicas", "100", "--config", str(cfg_file),
                 "--out", str(out)])
    assert code == 0
    doc = json.loads((out / "report.json").read_text())
    assert doc["config"]["gamma"] == 2.0


def test_cli_flag_conflicts(tmp_path):
    with pytest.raises(SystemExit):
        main(["ww-scan", "--n", "8", "--n-list", "4,8",
              "--out", str(tmp_path)])
    wrong = tmp_path / "wrong.json"
    wrong.write_text(json.dumps({"name": "clt"}), encoding="utf-8")
    with pytest.raises(SystemExit):
        main(["ww-scan", "--config", str(wrong), "--out", str(tmp_path)])


def test_cli_subprocess_roundtrip(tmp_path):
    src = Path(__file__).resolve().parent.parent / "src"
    proc = subprocess.run(
        [sys.executable, "-m", "ginfield.cli", "ww-scan",
         "--n-list", "4,16", "--gamma", "2.0", "--replicas", "100",
         "--out", str(tmp_path)],
        capture_output=True, text=True,
        env={"PYTHONPATH": str(src), "PATH": "/usr/bin:/bin"},
    )
    assert proc.returncode == 0, proc.stderr
    assert "report.json" in proc.stdout
