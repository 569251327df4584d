import csv
import json

import numpy as np
import pytest
from PIL import Image

from opacity_field.cli import main
from opacity_field.metrics import CSV_COLUMNS

FAST = ["--set", "K=16", "--set", "batch_patches=2", "--set", "n_coarse=4", "--set", "n_fine=4",
        "--set", "width=16", "--set", "depth=2", "--set", "pos_bands=3", "--set", "dir_bands=2",
        "--set", "feature_dim=4", "--set", "renderer_channels=4", "--set", "carve_resolution=24",
        "--set", "use_gan=false", "--set", "log_interval=1"]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["generate", "--views", "4", "--res", "16", "--samples", "256", "--out", str(root / "data")]) == 0
    assert main(["carve", "--data", str(root / "data"), "--out", str(root / "proxy")] + FAST) == 0
    assert main(["train", "--data", str(root / "data"), "--proxy", str(root / "proxy"), "--out", str(root / "run"),
                 "--steps", "2"] + FAST) == 0
    return root


def test_generate_writes_pairs_and_manifest(tmp_path):
    assert main(["generate", "--views", "3", "--res", "8", "--samples", "256", "--alpha-bits", "16",
                 "--out", str(tmp_path)]) == 0
    assert len(list(tmp_path.glob("view_*_rgb.png"))) == 3
    assert len(list(tmp_path.glob("view_*_alpha.png"))) == 3
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert len(manifest["views"]) == 3 and manifest["alpha_bits"] == 16
    assert (tmp_path / "rig.json").is_file()
    assert np.asarray(Image.open(tmp_path / "view_000_alpha.png")).dtype == np.uint16


def test_carve_outputs(pipeline):
    proxy = pipeline / "proxy"
    assert (proxy / "proxy.voxg").read_bytes()[:4] == b"VOXG"
    assert len(list(proxy.glob("view_*_near.pfm"))) == 4 and len(list(proxy.glob("view_*_far.pfm"))) == 4
    assert json.loads((proxy / "config.json").read_text())["carve_resolution"] == 24


def test_train_outputs(pipeline):
    run = pipeline / "run"
    assert (run / "ckpt_latest.bin").read_bytes()[:4] == b"OFLD"
    rows = list(csv.reader(open(run / "metrics.csv")))
    assert len(rows) == 3


def test_render_and_eval(pipeline, tmp_path):
    run = pipeline / "run"
    assert main(["render", "--ckpt", str(run / "ckpt_latest.bin"), "--data", str(pipeline / "data"),
                 "--proxy", str(pipeline / "proxy"), "--out", str(tmp_path / "pred")]) == 0
    assert len(list((tmp_path / "pred").glob("view_*_rgb.png"))) == 4
    assert main(["eval", "--pred", str(tmp_path / "pred"), "--gt", str(pipeline / "data"),
                 "--out", str(tmp_path / "m.csv")]) == 0
    rows = list(csv.reader(open(tmp_path / "m.csv")))
    assert rows[0] == CSV_COLUMNS and rows[-1][0] == "mean" and len(rows) == 6


def test_render_from_rig_step_and_camera_json(pipeline, tmp_path):
    run = pipeline / "run"
    assert main(["render", "--ckpt", str(run / "ckpt_latest.bin"), "--rig", str(pipeline / "data" / "rig.json"),
                 "--step", "5", "--camera", "1", "--proxy", str(pipeline / "proxy"), "--out", str(tmp_path / "a")]) == 0
    assert (tmp_path / "a" / "cam1_step005_rgb.png").is_file()
    assert main(["calibrate", "--rig", str(pipeline / "data" / "rig.json"), "--step", "5", "--camera", "1",
                 "--out", str(tmp_path / "v.json")]) == 0
    assert main(["render", "--ckpt", str(run / "ckpt_latest.bin"), "--view-json", str(tmp_path / "v.json"),
                 "--proxy", str(pipeline / "proxy"), "--out", str(tmp_path / "b")]) == 0
    a = np.asarray(Image.open(tmp_path / "a" / "cam1_step005_alpha.png"))
    b = np.asarray(Image.open(tmp_path / "b" / "view_000_alpha.png"))
    np.testing.assert_array_equal(a, b)


def test_calibrate_full_lap(tmp_path, capsys):
    from opacity_field.camera import default_rig

    default_rig().save(tmp_path / "rig.json")
    assert main(["calibrate", "--rig", str(tmp_path / "rig.json")]) == 0
    cams = json.loads(capsys.readouterr().out)
    assert len(cams) == 80 and cams[7]["step"] == 7
    assert main(["calibrate", "--rig", str(tmp_path / "rig.json"), "--step", "80"]) == 3


def test_matte_prep(tmp_path):
    img = np.zeros((20, 20, 3), np.uint8)
    img[..., 1] = 255
    img[5:15, 5:15] = (200, 120, 60)
    Image.fromarray(img).save(tmp_path / "shot.png")
    assert main(["matte-prep", "--image", str(tmp_path / "shot.png"), "--out", str(tmp_path / "o")]) == 0
    mask = np.asarray(Image.open(tmp_path / "o" / "shot_mask.png"))
    tri = np.asarray(Image.open(tmp_path / "o" / "shot_trimap.png"))
    assert mask[10, 10] == 255 and mask[0, 0] == 0
    assert set(np.unique(tri)) <= {0, 128, 255}
    assert main(["matte-prep", "--image", str(tmp_path / "shot.png"), "--ref", "2,0", "--out", str(tmp_path)]) == 3


def test_usage_errors_exit_2(capsys):
    assert main(["bogus"]) == 2
    assert main(["generate"]) == 2
    assert main(["generate", "--out", "x", "--frobnicate"]) == 2


def test_bad_config_exits_3_with_key(tmp_path, capsys):
    code = main(["carve", "--data", str(tmp_path), "--out", str(tmp_path / "o"), "--set", "K=17"])
    assert code == 3
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "config" and err["key"] == "K"
    (tmp_path / "c.json").write_text('{"not_a_key": 1}')
    assert main(["carve", "--data", str(tmp_path), "--out", str(tmp_path / "o"), "--config", str(tmp_path / "c.json")]) == 3
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["key"] == "not_a_key"


def test_missing_inputs_exit_3(tmp_path, capsys):
    (tmp_path / "v.json").write_text("{}")
    assert main(["render", "--ckpt", str(tmp_path / "none.bin"), "--view-json", str(tmp_path / "v.json"),
                 "--out", str(tmp_path / "o")]) == 3
    assert main(["carve", "--data", str(tmp_path / "nothing"), "--out", str(tmp_path / "o")]) == 3
    assert main(["eval", "--pred", str(tmp_path), "--gt", str(tmp_path)]) == 3
    assert main(["generate", "--scene", "teapot", "--out", str(tmp_path / "g")]) == 3
