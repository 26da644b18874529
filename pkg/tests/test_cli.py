import json

import numpy as np
import pytest
from PIL import Image

from pedintent.cli import main
from pedintent.demo import GLYPH, INTENT_COLORS, MISSED_COLOR

TINY = {
    "world": {"image_height": 96, "image_width": 160, "road_band": [32, 64], "seq_len": 4, "n_vehicles": 1},
    "grid": {"H": 3, "W": 5},
    "sequential": {"seq_len": 4, "crop_size": [32, 16]},
    "dataset": {"n_train": 6, "n_test": 3},
    "train": {"epochs": 1, "batch_size": 2},
    "eval": {"height_filters": [0.0, 15.0]},
    "bench": {"n_boot": 20},
}


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    assert main(["gen", "--config", str(cfg), "--out", str(root / "data")]) == 0
    return root, cfg


def _train(root, cfg, regime, out, *extra):
    return main(["train", "--config", str(cfg), "--regime", regime, "--data", str(root / "data"), "--out", str(root / out), *extra])


def test_gen_desk_manifest(tmp_path):
    assert main(["gen", "--out", str(tmp_path), "--n-train", "1", "--n-test", "0"]) == 0
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert (m["grid"]["H"], m["grid"]["W"]) == (6, 10)
    assert json.loads((tmp_path / "effective_config.json").read_text())["grid"]["H"] == 6


def test_gen_paper_shape_manifest(tmp_path):
    assert main(["gen", "--preset", "paper-shape", "--out", str(tmp_path), "--n-train", "1", "--n-test", "0"]) == 0
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert (m["grid"]["H"], m["grid"]["W"], len(m["grid"]["anchors"])) == (11, 20, 5)
    assert m["world"]["seq_len"] == 15


def test_missing_out_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["gen"])
    assert exc.value.code == 2


def test_bad_override_is_config_error(tmp_path, capsys):
    assert main(["gen", "--out", str(tmp_path), "--set", "world.crosser_fraction=2"]) == 2
    assert "crosser_fraction" in capsys.readouterr().err


def test_unwritable_output_is_io_error(tmp_path):
    blocker = tmp_path / "f"
    blocker.write_text("")
    assert main(["gen", "--out", str(blocker / "x"), "--n-train", "1", "--n-test", "0"]) == 3


def test_frozen_without_detector_is_config_error(tiny, capsys):
    root, cfg = tiny
    assert _train(root, cfg, "auxiliary_frozen", "nope") == 2
    assert "detector-checkpoint" in capsys.readouterr().err


def test_train_writes_artifacts_and_repeats(tiny):
    root, cfg = tiny
    assert _train(root, cfg, "multitask", "mt_a", "--seed", "3") == 0
    assert _train(root, cfg, "multitask", "mt_b", "--seed", "3") == 0
    for name in ("model.gsck", "model.json", "train_log.jsonl", "effective_config.json"):
        assert (root / "mt_a" / name).is_file()
    a = json.loads((root / "mt_a" / "train_log.jsonl").read_text().splitlines()[0])
    b = json.loads((root / "mt_b" / "train_log.jsonl").read_text().splitlines()[0])
    a.pop("wall_ms"), b.pop("wall_ms")
    assert a == b


def test_frozen_train_eval_and_demo(tiny):
    root, cfg = tiny
    assert _train(root, cfg, "detector_only", "det") == 0
    assert _train(root, cfg, "auxiliary_frozen", "aux", "--detector-checkpoint", str(root / "det" / "model.gsck")) == 0
    out = root / "eval"
    assert main(["eval", "--config", str(cfg), "--checkpoint", str(root / "aux" / "model.gsck"), "--data", str(root / "data"), "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert 0.0 <= rep["metrics"]["intent_accuracy"] <= 1.0 and (out / "report.csv").is_file()

    demo = root / "demo"
    args = ["demo", "--config", str(cfg), "--checkpoint", str(root / "aux" / "model.gsck"), "--data", str(root / "data"), "--out", str(demo)]
    assert main(args + ["--index", "0,1"]) == 0
    ann = json.loads((root / "data" / "test" / "00000" / "annotations.json").read_text())
    gt_peds = {a["track_id"]: a for a in ann["frames"][-1] if a["class"] == "pedestrian"}
    side = json.loads((demo / "seq00000.json").read_text())
    img = np.asarray(Image.open(demo / "seq00000.png"))
    assert img.shape == (192, 320, 3)
    assert {g["track_id"] for g in side["glyphs"]} == set(gt_peds)
    for g in side["glyphs"]:
        assert g["gt_intent"] == gt_peds[g["track_id"]]["intent"]
        x, y = g["gt_glyph_xy"]
        assert tuple(img[y + GLYPH // 2, x + GLYPH // 2]) == INTENT_COLORS[gt_peds[g["track_id"]]["intent"]]
        x, y = g["pred_glyph_xy"]
        want = MISSED_COLOR if g["pred_intent"] is None else INTENT_COLORS[g["pred_intent"]]
        assert tuple(img[y + GLYPH // 2, x + GLYPH // 2]) == want


def test_sequential_train_and_bench(tiny):
    root, cfg = tiny
    assert _train(root, cfg, "sequential", "seq") == 0
    out = root / "bench"
    args = ["bench", "--config", str(cfg), "--out", str(out), "--counts", "1,2,4", "--reps", "30", "--warmup", "5"]
    assert main(args + ["--baseline", str(root / "seq" / "baseline.gsck")]) == 0
    lat = json.loads((out / "latency.json").read_text())
    assert sorted(lat["buckets"]["sequential"], key=int) == ["1", "2", "4"]
    assert lat["classifier_calls"]["sequential"] == {"1": 1, "2": 2, "4": 4}
    assert json.loads((out / "report.json").read_text())["memory"]["delta_bytes"] > 0


def test_ablate_table(tiny):
    root, cfg = tiny
    if not (root / "det" / "model.gsck").exists():
        assert _train(root, cfg, "detector_only", "det") == 0
    out = root / "ablate"
    args = ["ablate", "--config", str(cfg), "--layers", "3,4,5,6", "--data", str(root / "data"), "--out", str(out)]
    assert main(args + ["--detector-checkpoint", str(root / "det" / "model.gsck")]) == 0
    rows = json.loads((out / "report.json").read_text())["rows"]
    assert [r["tap_layer"] for r in rows] == [3, 4, 5, 6]
    assert all(0 <= r["accuracy"] <= 1 and 0 <= r["f1"] <= 1 for r in rows)
