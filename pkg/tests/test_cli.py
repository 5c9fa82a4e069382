import json
import subprocess
import sys

import numpy as np
from PIL import Image

from cropoison import cli
from cropoison.errors import QuadratureError


def run(capsys, *argv):
    code = cli.main(list(argv))
    return code, capsys.readouterr().out


def test_analyze_default(capsys, tmp_path):
    code, out = run(capsys, "analyze", "--out-dir", str(tmp_path))
    assert code == 0
    rep = json.loads(out)
    assert rep["breakpoints"] == [70.0, 100.0]
    assert (tmp_path / "profile.csv").read_text().startswith("s,p1,p2,product")


def test_geometry_from_file_and_config(capsys, tmp_path):
    geom = {"b_w": 200, "b_h": 100, "o_x": 0, "o_y": 0, "o_w": 100, "o_h": 100,
            "e_x": 150, "e_y": 30, "l": 40, "layout": "left-right"}
    (tmp_path / "g.json").write_text(json.dumps(geom))
    code, out = run(capsys, "analyze", "--geometry", str(tmp_path / "g.json"))
    assert code == 0
    (tmp_path / "c.json").write_text(json.dumps({"geometry": geom, "n": 20000, "seed": 3}))
    code, out = run(capsys, "simulate", "--config", str(tmp_path / "c.json"))
    assert code == 0 and json.loads(out)["records"][0]["n_samples"] == 20000
    # Flags win over the config file.
    code, out = run(capsys, "simulate", "--config", str(tmp_path / "c.json"), "--n", "5000")
    assert json.loads(out)["records"][0]["n_samples"] == 5000


def test_optimize_writes_trace(capsys, tmp_path):
    code, out = run(capsys, "optimize", "--lo", "1.5", "--hi", "3", "--step", "0.1",
                    "--layout", "left-right", "--layout", "bottom-top", "--out-dir", str(tmp_path))
    assert code == 0
    res = json.loads(out)
    assert [r["layout"] for r in res] == ["left-right", "bottom-top"]
    assert (tmp_path / "trace.csv").exists() and (tmp_path / "optimize.jsonl").exists()


def test_defense_sweep(capsys, tmp_path):
    code, out = run(capsys, "defense-sweep", "--n", "100000", "--deltas", "0.1", "0.5",
                    "--out-dir", str(tmp_path))
    assert code == 0 and len(json.loads(out)["rows"]) == 2
    assert (tmp_path / "defense_sweep.csv").exists()


def test_exit_codes(capsys, tmp_path, monkeypatch):
    bad = '{"b_w":200,"b_h":100,"o_x":0,"o_y":0,"o_w":100,"o_h":100,"e_x":90,"e_y":30,"l":40,"layout":"left-right"}'
    assert cli.main(["analyze", "--geometry", bad]) == cli.EXIT_VALIDATION
    assert cli.main(["analyze", "--config", str(tmp_path / "missing.json")]) == cli.EXIT_IO

    def boom(*a, **k):
        raise QuadratureError("no convergence", partial=0.0, abs_error=1.0)

    monkeypatch.setattr("cropoison.campaign.total_p", boom)
    assert cli.main(["analyze"]) == cli.EXIT_NUMERIC
    assert cli.main(["craft"]) == cli.EXIT_VALIDATION


def test_craft_and_inject(capsys, tmp_path):
    rng = np.random.default_rng(0)
    (tmp_path / "bg").mkdir()
    for i in range(2):
        Image.fromarray(rng.integers(0, 256, (120, 240, 3), dtype=np.uint8)).save(tmp_path / "bg" / f"{i}.png")
    Image.fromarray(rng.integers(0, 256, (80, 80, 3), dtype=np.uint8)).save(tmp_path / "o.png")
    Image.fromarray(np.full((80, 80), 255, np.uint8)).save(tmp_path / "m.png")
    cfg = {
        "targets": [{"class_id": "dog", "trigger": {"trigger_id": "t0", "l": 30},
                     "objects": [{"image": "o.png", "mask": "m.png"}]}],
        "backgrounds": "bg", "clean_size": 995, "poisoning_ratio": 0.005, "layout": "left-right",
    }
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    code, out = run(capsys, "craft", "--config", str(tmp_path / "cfg.json"), "--out-dir", str(tmp_path / "out"), "--seed", "7")
    assert code == 0 and json.loads(out)["counts"] == {"regular": 5, "support": 0}
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["config"]["master_seed"] == 7
    code, out = run(capsys, "inject", "--poisons", str(tmp_path / "out"), "--dataset", str(tmp_path / "ds"))
    assert code == 0 and json.loads(out)["poisoned_size"] == 5


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "cropoison.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for sub in ("analyze", "optimize", "simulate", "craft", "inject", "defense-sweep"):
        assert sub in proc.stdout
