import csv
import io

import numpy as np
import pytest

from oracles import naive_psnr, naive_sad, naive_ssim
from opacity_field.metrics import (
    CSV_COLUMNS,
    EvalReport,
    psnr,
    region_masks,
    sad,
    score_view,
    ssim,
    ssim_map,
)


@pytest.mark.parametrize("seed", range(3))
def test_metrics_match_naive_oracles(seed):
    rng = np.random.default_rng(seed)
    x = rng.random((16, 18, 3))
    y = np.clip(x + rng.normal(0, 0.1, x.shape), 0, 1)
    m = rng.random((16, 18)) > 0.3
    assert abs(psnr(x, y) - naive_psnr(x, y)) < 1e-9
    assert abs(psnr(x, y, m) - naive_psnr(x, y, m)) < 1e-9
    assert abs(ssim(x, y) - naive_ssim(x, y)) < 1e-9
    assert abs(ssim(x, y, m) - naive_ssim(x, y, m)) < 1e-9
    assert abs(sad(x[..., 0], y[..., 0]) - naive_sad(x[..., 0], y[..., 0])) < 1e-9


def test_identities():
    x = np.random.default_rng(0).random((12, 12, 3))
    assert psnr(x, x) == 99.0
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)
    assert sad(x[..., 0], x[..., 0]) == 0.0


def test_metric_errors():
    x = np.zeros((12, 12))
    with pytest.raises(ValueError):
        psnr(x, np.zeros((12, 11)))
    with pytest.raises(ValueError):
        psnr(x, x, np.zeros((12, 12), bool))
    with pytest.raises(ValueError):
        ssim_map(np.zeros((8, 8)), np.zeros((8, 8)))
    with pytest.raises(ValueError):
        region_masks(x, 0)


def test_region_masks_nest():
    yy, xx = np.mgrid[:40, :40]
    r = np.hypot(yy - 20, xx - 20)
    a = np.clip((15 - r) / 8, 0, 1)
    U, Up, Um = region_masks(a, 2)
    assert U.any() and np.all(Up[U]) and np.all(U[Um])
    assert not region_masks(np.zeros((5, 5)))[0].any()


def test_score_view_and_report(tmp_path):
    rng = np.random.default_rng(0)
    a = np.zeros((16, 16))
    a[4:12, 4:12] = rng.uniform(0.2, 1.0, (8, 8))
    F = rng.random((16, 16, 3))
    s = score_view(F, a, F, a)
    assert s.psnr_fg == 99.0 and s.sad_alpha == 0.0 and s.ssim_fg == pytest.approx(1.0)
    noisy = score_view(np.clip(F + 0.05, 0, 1), a, F, a)
    assert noisy.psnr_fg < 99
    rep = EvalReport()
    rep.add("view_001", noisy)
    rep.add("view_000", s)
    text = rep.to_csv()
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == CSV_COLUMNS
    assert [r[0] for r in rows[1:]] == ["view_000", "view_001", "mean"]
    assert rows[1][5] == "n/a"
    assert float(rows[3][1]) == pytest.approx((s.psnr_fg + noisy.psnr_fg) / 2, abs=1e-6)
    rep.write_csv(tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text() == text
    with pytest.raises(ValueError):
        EvalReport().aggregate()
