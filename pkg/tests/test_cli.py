import csv
import subprocess
import sys

import numpy as np
import pytest

from colorwise.cli import run
from colorwise.imagecore import load_image, save_image
from conftest import diagonal_stripes, gray_texture, shaded_two_tone, solid


@pytest.fixture
def inputs(tmp_path):
    paths = {}
    for name, img in {
        "content": gray_texture(),
        "color": shaded_two_tone(),
        "style": diagonal_stripes(),
        "blue": solid((40, 80, 200), 16, 16),
    }.items():
        paths[name] = tmp_path / f"{name}.png"
        save_image(img, paths[name])
    return paths


def test_color_style_run(tmp_path, inputs):
    out = tmp_path / "out.png"
    rc = run(["color+style", "--content", str(inputs["content"]), "--color-ref", str(inputs["color"]),
              "--style-ref", str(inputs["style"]), "--out", str(out), "--k", "2"])
    assert rc == 0
    assert load_image(out).shape == (32, 32, 3)


def test_toy_content_and_ppm_output(tmp_path, inputs):
    out = tmp_path / "out.ppm"
    assert run(["color-only", "--content", "toy:24x16", "--color-ref", str(inputs["blue"]),
                "--k", "1", "--out", str(out)]) == 0
    img = load_image(out)
    assert img.shape == (16, 24, 3)
    assert img[..., 2].mean() > img[..., 0].mean() + 80


def test_dump_intermediates(tmp_path, inputs):
    d = tmp_path / "steps"
    cfg = tmp_path / "run.cfg"
    cfg.write_text("T = 8\n")
    rc = run(["color+style", "--content", "toy:16x16", "--color-ref", str(inputs["blue"]),
              "--style-ref", str(inputs["style"]), "--config", str(cfg), "--k", "1",
              "--out", str(tmp_path / "o.png"), "--dump-intermediates", str(d)])
    assert rc == 0
    names = sorted(p.name for p in d.iterdir())
    assert names == sorted([f"color_z0_t{t:04d}.png" for t in range(1, 9)]
                           + [f"style_z0_t{t:04d}.png" for t in range(1, 9)])


def test_report_outputs(tmp_path, inputs, capsys):
    rep = tmp_path / "report"
    rc = run(["color-only", "--content", str(inputs["content"]), "--color-ref", str(inputs["color"]),
              "--k", "2", "--out", str(tmp_path / "o.png"), "--report", str(rep)])
    assert rc == 0
    for name in ("metrics.csv", "panels.png", "palettes.png", "progression_color.png"):
        assert (rep / name).stat().st_size > 0
    with open(rep / "metrics.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["metric", "value"]
    names = {r[0] for r in rows[1:]}
    assert {"palette_distance_color_ref", "edge_change_vs_unconditioned"} <= names
    printed = [line.split("\t") for line in capsys.readouterr().out.splitlines()]
    assert {p[0] for p in printed} == names
    assert all(np.isfinite(float(p[1])) for p in printed)


def test_lab_swap_and_recolor_image(tmp_path, inputs):
    assert run(["lab-swap", "--color-ref", str(inputs["color"]), "--style-ref", str(inputs["content"]),
                "--out", str(tmp_path / "swap.png")]) == 0
    assert run(["recolor-image", "--content", str(inputs["content"]), "--color-ref", str(inputs["color"]),
                "--k", "3", "--out", str(tmp_path / "rec.png")]) == 0


def test_masks(tmp_path, inputs):
    mask = np.zeros((32, 32), bool)
    mask[:, :16] = True
    save_image(mask[:, :, None] * 255.0, tmp_path / "m.png")
    out = tmp_path / "rec.png"
    rc = run(["recolor-image", "--content", str(inputs["content"]), "--color-ref", str(inputs["blue"]),
              "--k", "1", "--content-mask", str(tmp_path / "m.png"), "--out", str(out)])
    assert rc == 0
    img = load_image(out)
    assert np.array_equal(img[:, 16:], gray_texture()[:, 16:].astype(np.uint8))


def test_exit_codes(tmp_path, inputs, capsys):
    out = str(tmp_path / "o.png")
    assert run(["color-only", "--out", out]) == 2  # missing reference
    assert run(["color-only", "--color-ref", str(tmp_path / "nope.png"), "--out", out]) == 3
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = 1\n")
    assert run(["style-only", "--style-ref", str(inputs["style"]), "--config", str(bad), "--out", out]) == 2
    assert run(["style-only", "--style-ref", str(inputs["style"]), "--config", str(tmp_path / "x.cfg"),
                "--out", out]) == 3
    # a solid reference cannot provide three clusters
    assert run(["recolor-image", "--content", str(inputs["content"]), "--color-ref", str(inputs["blue"]),
                "--k", "3", "--out", out]) == 4
    # output below a regular file cannot be created
    assert run(["color-only", "--color-ref", str(inputs["blue"]), "--k", "1",
                "--out", str(inputs["blue"] / "o.png")]) == 3
    with pytest.raises(SystemExit) as exc:
        run(["sepia", "--out", out])
    assert exc.value.code == 2
    assert "cw:" in capsys.readouterr().err


def test_seed_flag_is_deterministic(tmp_path, inputs):
    outs = []
    for i in range(2):
        p = tmp_path / f"o{i}.png"
        run(["color-only", "--content", "toy:16x16", "--color-ref", str(inputs["color"]), "--k", "2",
             "--seed", "7", "--out", str(p)])
        outs.append(load_image(p))
    assert np.array_equal(*outs)


def test_console_script(tmp_path, inputs):
    out = tmp_path / "o.png"
    res = subprocess.run([sys.executable, "-m", "colorwise.cli", "lab-swap", "--color-ref", str(inputs["blue"]),
                          "--style-ref", str(inputs["content"]), "--out", str(out)],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert out.exists()
