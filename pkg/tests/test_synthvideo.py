"""Generator determinism, heatmap rendering, detector degradation, windows."""

import numpy as np
import pytest

from otpose import synthvideo as sv


def small_cfg(**kw):
    base = dict(n_persons=1, n_joints=15, H=64, W=48, seed=11)
    base.update(kw)
    return sv.SceneConfig(**base)


class TestSceneConfig:
    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            sv.SceneConfig(n_joints=0)
        with pytest.raises(ValueError):
            sv.SceneConfig(H=4)
        with pytest.raises(ValueError):
            sv.SceneConfig(occlusion_rate=1.5)


class TestRenderGtHeatmap:
    def test_invisible_channel_is_zero(self):
        hm = sv.render_gt_heatmap(np.array([[5.0, 5.0]]), np.array([False]),
                                  2.0, 16, 16)
        assert np.all(hm == 0.0)

    def test_peak_at_position(self):
        hm = sv.render_gt_heatmap(np.array([[7.0, 5.0]]), np.array([True]),
                                  2.0, 16, 16)
        y, x = np.unravel_index(hm[0].argmax(), hm[0].shape)
        assert (x, y) == (7, 5)
        assert hm[0, 5, 7] == pytest.approx(1.0)

    def test_value_at_one_sigma(self):
        sigma = 2.0
        hm = sv.render_gt_heatmap(np.array([[8.0, 8.0]]), np.array([True]),
                                  sigma, 20, 20)
        assert hm[0, 8, 8 + 2] == pytest.approx(np.exp(-0.5), abs=1e-6)

    def test_sigma_guard(self):
        with pytest.raises(ValueError):
            sv.render_gt_heatmap(np.zeros((1, 2)), np.array([True]), 0.0, 8, 8)


class TestSimulateSequence:
    def test_determinism(self):
        cfg = small_cfg()
        a = sv.simulate_sequence(cfg, 12)
        b = sv.simulate_sequence(cfg, 12)
        for t in range(12):
            for j in range(cfg.n_joints):
                assert a[t][0][j] == b[t][0][j]

    def test_zero_occlusion_all_visible(self):
        cfg = small_cfg(occlusion_rate=0.0)
        frames = sv.simulate_sequence(cfg, 20)
        assert all(s.visible for fr in frames for s in fr[0])

    def test_full_occlusion_hits_every_window(self):
        cfg = small_cfg(occlusion_rate=1.0)
        frames = sv.simulate_sequence(cfg, 20)
        vis = np.array([[s.visible for s in fr[0]] for fr in frames])
        for t in range(2, 18):
            assert not vis[t - 2:t + 3].all()

    def test_positions_stay_in_bounds(self):
        cfg = small_cfg(speed=2.5)
        frames = sv.simulate_sequence(cfg, 40)
        for fr in frames:
            for s in fr[0]:
                x, y = s.position
                assert 0 <= x < cfg.W and 0 <= y < cfg.H

    def test_intermediate_occlusion_rate(self):
        cfg = small_cfg(occlusion_rate=0.3, seed=3)
        frames = sv.simulate_sequence(cfg, 60)
        vis = np.array([[s.visible for s in fr[0]] for fr in frames])
        frac = 1.0 - vis.mean()
        assert 0.1 < frac < 0.5

    def test_too_short(self):
        with pytest.raises(ValueError):
            sv.simulate_sequence(small_cfg(), 4)


class TestDetectorStub:
    def _state(self, pos, vel=(0.0, 0.0), visible=True):
        return sv.JointState(position=pos, velocity=vel, visible=visible)

    def test_degenerate_config_is_identity(self):
        cfg = small_cfg(noise_sigma=0.0)
        pos = np.array([[20.0, 30.0]])
        gt = sv.render_gt_heatmap(pos, np.array([True]), cfg.gaussian_sigma,
                                  cfg.H, cfg.W)
        out = sv.detector_stub(gt, [self._state((20.0, 30.0))], cfg,
                               np.random.default_rng(0))
        np.testing.assert_allclose(out, gt, atol=1e-6)

    def test_occluded_joint_attenuated(self):
        cfg = small_cfg()
        pos = np.array([[20.0, 30.0]])
        gt = sv.render_gt_heatmap(pos, np.array([True]), cfg.gaussian_sigma,
                                  cfg.H, cfg.W)
        out = sv.detector_stub(gt, [self._state((20.0, 30.0), visible=False)],
                               cfg, np.random.default_rng(0))
        assert out[0].max() < 0.5 * gt[0].max()

    def test_blur_stretches_second_moment_along_velocity(self):
        cfg = small_cfg(blur_len=6.0, noise_sigma=0.0)
        pos = np.array([[24.0, 32.0]])
        gt = sv.render_gt_heatmap(pos, np.array([True]), cfg.gaussian_sigma,
                                  cfg.H, cfg.W)
        out = sv.detector_stub(gt, [self._state((24.0, 32.0), vel=(2.0, 0.0))],
                               cfg, np.random.default_rng(0))
        ch = out[0]
        ys, xs = np.mgrid[0:cfg.H, 0:cfg.W]
        total = ch.sum()
        mx, my = (ch * xs).sum() / total, (ch * ys).sum() / total
        var_x = (ch * (xs - mx) ** 2).sum() / total
        var_y = (ch * (ys - my) ** 2).sum() / total
        assert var_x > var_y * 1.5

    def test_output_range(self):
        cfg = small_cfg(noise_sigma=0.1)
        seq = sv.build_sequence(cfg, 8)
        assert seq.detector.min() >= 0.0 and seq.detector.max() <= 1.0


class TestMakeWindows:
    def test_window_layout_and_stride(self):
        cfg = small_cfg()
        seq = sv.build_sequence(cfg, 20)
        wins = sv.make_windows(seq, cfg, label_stride=4)
        assert len(wins) == 16  # t in [2, 17]
        labeled_ts = [w.t for w in wins if w.labeled]
        assert labeled_ts == [4, 8, 12, 16]

    def test_stride_one_labels_everything(self):
        cfg = small_cfg()
        seq = sv.build_sequence(cfg, 10)
        wins = sv.make_windows(seq, cfg, label_stride=1)
        assert all(w.labeled for w in wins)

    def test_window_uses_surrounding_frames(self):
        cfg = small_cfg()
        seq = sv.build_sequence(cfg, 12)
        wins = sv.make_windows(seq, cfg)
        w = wins[3]
        np.testing.assert_array_equal(w.heatmaps,
                                      seq.detector[w.t - 2:w.t + 3, 0])

    def test_gt_only_on_labeled(self):
        cfg = small_cfg()
        seq = sv.build_sequence(cfg, 16)
        for w in sv.make_windows(seq, cfg, label_stride=4):
            if w.labeled:
                assert w.gt_heatmaps is not None and w.visibility is not None
                # visible channels peak at the rendered position
                for j in range(cfg.n_joints):
                    if w.visibility[j]:
                        y, x = np.unravel_index(w.gt_heatmaps[j].argmax(),
                                                w.gt_heatmaps[j].shape)
                        gx, gy = w.gt_positions[j]
                        assert abs(x - gx) <= 0.5 + 1e-9
                        assert abs(y - gy) <= 0.5 + 1e-9
            else:
                assert w.gt_heatmaps is None

    def test_labeled_fraction(self):
        cfg = small_cfg()
        seq = sv.build_sequence(cfg, 41)
        wins = sv.make_windows(seq, cfg, label_stride=4)
        frac = sum(w.labeled for w in wins) / len(wins)
        assert abs(frac - 0.25) <= 1.0 / len(wins) + 1e-9

    def test_short_sequence_rejected(self):
        cfg = small_cfg()
        seq = sv.build_sequence(cfg, 6)
        seq.n_frames = 4
        with pytest.raises(ValueError):
            sv.make_windows(seq, cfg)


class TestFlip:
    def test_flip_is_involution(self):
        cfg = small_cfg()
        seq = sv.build_sequence(cfg, 12)
        w = [x for x in sv.make_windows(seq, cfg) if x.labeled][0]
        twice = sv.flip_window(sv.flip_window(w, cfg.W), cfg.W)
        np.testing.assert_allclose(twice.heatmaps, w.heatmaps)
        np.testing.assert_allclose(twice.gt_positions, w.gt_positions)
        np.testing.assert_array_equal(twice.visibility, w.visibility)

    def test_flip_mirrors_x(self):
        cfg = small_cfg()
        seq = sv.build_sequence(cfg, 12)
        w = [x for x in sv.make_windows(seq, cfg) if x.labeled][0]
        f = sv.flip_window(w, cfg.W)
        lw = list(sv.JOINT_NAMES).index("l_wrist")
        rw = list(sv.JOINT_NAMES).index("r_wrist")
        assert f.gt_positions[lw][0] == pytest.approx(
            (cfg.W - 1) - w.gt_positions[rw][0])
