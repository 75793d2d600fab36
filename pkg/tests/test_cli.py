import csv
import json

import numpy as np
import pytest
from PIL import Image

from mmcut.cli import TRACE_COLUMNS, load_run_manifest, main
from mmcut.imaging import load_image, load_mask
from mmcut.synth import dice

ARTIFACTS = ("mask.png", "overlay.png", "trace.csv", "report.json")


def synth(tmp_path, case="star5", seed=1, *extra, name="case"):
    out = tmp_path / name
    assert main(["synth", case, "--seed", str(seed), "--out", str(out), *extra]) == 0
    return out


def read_trace(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def edit_manifest(case_dir, **changes):
    path = case_dir / "manifest.json"
    doc = json.loads(path.read_text())
    doc.update(changes)
    path.write_text(json.dumps(doc))
    return path


def test_happy_path(tmp_path):
    case = synth(tmp_path, "star5", 1)
    assert main(["run", "--manifest", str(case / "manifest.json")]) == 0
    out = case / "result"
    for name in ARTIFACTS:
        assert (out / name).is_file()
    report = json.loads((out / "report.json").read_text())
    assert report["converged"] is True
    assert len(report["final_transforms"]) == 1
    rows = read_trace(out / "trace.csv")
    assert rows[0] == list(TRACE_COLUMNS) + ["c_1"]
    assert len(rows) - 1 == report["iterations"]
    assert dice(load_mask(out / "mask.png"), load_mask(case / "truth.png")) == 1.0
    with Image.open(out / "overlay.png") as im:
        assert im.mode == "RGB" and im.size == (128, 128)


def test_missing_image_names_path(tmp_path, capsys):
    case = synth(tmp_path)
    manifest = edit_manifest(case, image_path="absent.png")
    assert main(["run", "--manifest", str(manifest)]) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    assert "absent.png" in err[0] and err[0].startswith("mmcut: error:")


def test_missing_manifest(tmp_path, capsys):
    assert main(["run", "--manifest", str(tmp_path / "none.json")]) == 1
    assert "none.json" in capsys.readouterr().err


def test_unknown_override_is_an_error(tmp_path, capsys):
    case = synth(tmp_path)
    manifest = edit_manifest(case, warp_speed=9)
    assert main(["run", "--manifest", str(manifest)]) == 1
    assert "warp_speed" in capsys.readouterr().err


def test_iteration_limit_exit_code(tmp_path):
    case = synth(tmp_path, "hybrid", 2, "--corruption", "0.2", "--noise", "0.05")
    manifest = edit_manifest(case, max_mm_iters=1)
    assert main(["run", "--manifest", str(manifest)]) == 2
    rows = read_trace(case / "result" / "trace.csv")
    assert len(rows) == 2
    assert rows[0][-6:] == [f"c_{j}" for j in range(1, 7)]
    report = json.loads((case / "result" / "report.json").read_text())
    assert report["iterations"] == 1 and report["converged"] is False


def test_overrides_reach_config(tmp_path):
    case = synth(tmp_path)
    manifest = edit_manifest(case, **{"lambda": 1.5, "beta_override": 0.5, "output_dir": "elsewhere"})
    job = load_run_manifest(manifest)
    assert job["config"].lam == 1.5
    assert job["output_dir"] == case / "elsewhere"
    assert main(["run", "--manifest", str(manifest)]) in (0, 2)
    assert json.loads((case / "elsewhere" / "report.json").read_text())["beta"] == 0.5


def test_same_manifest_same_bytes(tmp_path):
    case = synth(tmp_path, "blob", 8, "--corruption", "0.2", "--noise", "0.05")
    manifest = case / "manifest.json"
    main(["run", "--manifest", str(manifest)])
    first = (case / "result" / "mask.png").read_bytes()
    trace = (case / "result" / "trace.csv").read_bytes()
    main(["run", "--manifest", str(manifest)])
    assert (case / "result" / "mask.png").read_bytes() == first
    assert (case / "result" / "trace.csv").read_bytes() == trace


def test_synth_is_byte_identical(tmp_path):
    a = synth(tmp_path, "hybrid", 5, "--corruption", "0.2", name="a")
    b = synth(tmp_path, "hybrid", 5, "--corruption", "0.2", name="b")
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_synth_uncorrupted_has_two_intensities(tmp_path):
    case = synth(tmp_path, "lshape", 0)
    assert len(np.unique(load_image(case / "image.png"))) == 2


def test_dump_network(tmp_path):
    case = synth(tmp_path, "star3", 2, "--size", "48")
    dump = tmp_path / "nets"
    assert main(["run", "--manifest", str(case / "manifest.json"), "--dump-network", str(dump)]) == 0
    report = json.loads((case / "result" / "report.json").read_text())
    files = sorted(dump.glob("network_*.dimacs"))
    # the shape-free initial network plus one per iteration
    assert len(files) == report["iterations"] + 1
    header = files[0].read_text().splitlines()[1].split()
    assert header[:3] == ["p", "max", str(48 * 48 + 2)]


def test_seed_must_be_u64(tmp_path):
    with pytest.raises(SystemExit):
        main(["synth", "blob", "--seed", "-1", "--out", str(tmp_path)])
    with pytest.raises(SystemExit):
        main(["synth", "blob", "--seed", str(2**64), "--out", str(tmp_path)])
    assert main(["synth", "blob", "--seed", str(2**64 - 1), "--out", str(tmp_path / "big")]) == 0
