# Copyright 2026 The P2Net Lab Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     https://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

import json
import math
import pathlib

import numpy as np
import pytest

import p2net

ROOT = pathlib.Path(__file__).resolve().parents[2]
TINY = ROOT / "configs" / "tiny.cfg"

p2net.set_log_level("error")


def test_oks_matches_direct_formula():
    rng = np.random.default_rng(0)
    gt = rng.uniform(0, 64, size=(5, 2))
    pred = gt + rng.normal(0, 2, size=(5, 2))
    k, s = [0.15] * 5, 30.0
    d2 = ((pred - gt) ** 2).sum(axis=1)
    expected = np.mean(np.exp(-d2 / (2 * (s * 0.15) ** 2)))
    assert p2net.oks(pred, gt, [2] * 5, k, s) == pytest.approx(expected, abs=1e-12)
    assert p2net.oks(pred, gt, [0] * 5, k, s) is None


def test_ap_perfect_and_pckh():
    r = p2net.ap_ar([([0.9], [[1.0]], 1)])
    assert r["ap"] == pytest.approx(1.0)
    kp = np.array([[10.0, 10.0], [20.0, 20.0]])
    total, per = p2net.pckh([kp], [kp + [3.0, 0.0]], [[2, 2]], [10.0], 0.5)
    assert total == pytest.approx(1.0) and len(per) == 2


def test_render_decode_round_trip():
    kp = np.array([[21.0, 13.0], [40.0, 50.0]])
    hm = p2net.render_target(kp, height=16, width=16, stride=4, sigma=1.0)
    assert hm.shape == (2, 16, 16)
    dec = p2net.decode(hm[None], stride=4)
    for (x, y, _), (gx, gy) in zip(dec[0], kp):
        assert abs(x - gx) < 2.0 and abs(y - gy) < 2.0


def test_losses_nonnegative_and_zero_at_target():
    t = np.random.default_rng(1).random((2, 5, 8, 8))
    mask = np.ones((2, 5))
    assert p2net.l2_loss(t, t, mask) == 0.0
    assert p2net.ohkm_loss(t + 0.1, t, mask, 3) > 0.0


def test_augmentation_ops():
    s = p2net.synth_sample(size=64, joints=5, seed=3)
    img = s["image"]
    assert img.dtype == np.uint8 and img.shape == (64, 64, 3)
    same = p2net.apply_photometric(img, "Brightness", 1.0)
    np.testing.assert_array_equal(same, img)
    out, kps, vis = p2net.apply_op(img, s["keypoints"], "TranslateX", 1.0, seed=1)
    assert out.shape == img.shape and kps.shape == (5, 2) and len(vis) == 5
    with pytest.raises(ValueError):
        p2net.apply_op(img, s["keypoints"], "NotAnOp", 0.5)


def test_hypergradient_toy():
    a, w, x, z = 0.3, 0.7, 1.5, 0.05
    assert p2net.bilinear_hypergradient(a, w, x, z) == pytest.approx(-z * x * (w - z * a * x), abs=1e-6)


def test_network_forward_shapes():
    cfg = p2net.NetworkConfig()
    cfg.input_height = cfg.input_width = 32
    cfg.backbone_widths = [4, 8]
    cfg.pyramid_width = 4
    cfg.parallel_stages = 1
    cfg.keypoints = 5
    net = p2net.P2Net(cfg, seed=0)
    par, ref = net.forward(np.zeros((2, 3, 32, 32)))
    assert par.shape == ref.shape == (2, 5, 8, 8)
    assert np.isfinite(ref).all() and net.parameter_count > 0


def test_gradcheck_suite():
    results = p2net.run_gradcheck(seed=0, instances=1)
    assert results and all(ok for _, ok, _ in results)


def test_pipeline(tmp_path):
    data = tmp_path / "data"
    p2net.run_synth(str(TINY), 0, str(data))
    losses = p2net.run_train(str(TINY), 0, str(tmp_path / "train"), data=str(data))
    assert losses and all(math.isfinite(v) for v in losses)
    ckpt = next((tmp_path / "train").glob("*.ckpt"))
    metrics = p2net.run_eval(str(TINY), 0, str(tmp_path / "eval"), data=str(data), checkpoint=str(ckpt))
    assert 0.0 <= metrics["ap"] <= 1.0
    policy = json.loads(p2net.run_search(str(TINY), 0, str(tmp_path / "search"), data=str(data)))
    assert policy


def test_bad_config_raises(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[network]\nbackbone_widths = 0\n")
    with pytest.raises((ValueError, OSError)):
        p2net.run_synth(str(bad), 0, str(tmp_path / "o"))
