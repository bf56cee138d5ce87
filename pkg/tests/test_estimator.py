"""MotionFitter estimator-contract tests."""

import numpy as np
import pytest

from meshmotion.estimator import MotionFitter
from meshmotion.fitting import FitConfig, fit_motion

from test_fitting import tiny_config, tiny_scenario


class TestParams:
    def test_get_params_round_trips_constructor(self):
        est = MotionFitter(iterations=7, learning_rate=1e-3, distance="mse")
        params = est.get_params()
        clone = MotionFitter(**params)
        assert clone.get_params() == params

    def test_set_params_returns_self_and_applies(self):
        est = MotionFitter()
        out = est.set_params(iterations=3, seed=9)
        assert out is est
        assert est.iterations == 3
        assert est.seed == 9

    def test_set_params_rejects_unknown(self):
        with pytest.raises(ValueError, match="unknown parameter"):
            MotionFitter().set_params(lerning_rate=1.0)

    def test_covers_every_config_field(self):
        est = MotionFitter()
        defaults = FitConfig()
        for name in ("w_render", "w_depth", "w_smooth", "w_fidelity",
                     "w_jacobian", "offset_scale", "encoding_order", "n_layers",
                     "hidden", "learning_rate", "iterations", "warmup_end",
                     "distance", "seed"):
            assert est.get_params()[name] == getattr(defaults, name)


@pytest.fixture(scope="module")
def fitted():
    sc = tiny_scenario(4)
    cfg = tiny_config()
    est = MotionFitter(model=sc.rig, camera=sc.camera,
                       iterations=cfg.iterations, warmup_end=cfg.warmup_end)
    return sc, est.fit(sc.feature_video)


class TestFitPredict:

    def test_fit_matches_fit_motion(self, fitted):
        sc, est = fitted
        clip = fit_motion(sc.rig, sc.feature_video, sc.camera,
                          est._config())
        np.testing.assert_array_equal(est.poses_, clip.pose_matrix())
        np.testing.assert_array_equal(est.vertices_, clip.vertices)

    def test_predict_default_returns_all_poses(self, fitted):
        _, est = fitted
        np.testing.assert_array_equal(est.predict(), est.poses_)

    def test_predict_integer_indices_look_up(self, fitted):
        _, est = fitted
        np.testing.assert_allclose(est.predict([2, 0]),
                                   est.poses_[[2, 0]], atol=1e-15)

    def test_predict_fractional_interpolates(self, fitted):
        _, est = fitted
        mid = est.predict([0.5])[0]
        np.testing.assert_allclose(mid, 0.5 * (est.poses_[0] + est.poses_[1]),
                                   atol=1e-12)

    def test_predict_out_of_range(self, fitted):
        _, est = fitted
        with pytest.raises(ValueError, match="frame indices"):
            est.predict([5.0])

    def test_transform_matches_deformed_vertices(self, fitted):
        sc, est = fitted
        verts = est.transform([1])
        np.testing.assert_allclose(verts[0], est.vertices_[1], atol=1e-12)

    def test_unfitted_raises(self):
        with pytest.raises(ValueError, match="not fitted"):
            MotionFitter().predict()

    def test_fit_without_scene_raises(self):
        sc = tiny_scenario(4)
        with pytest.raises(ValueError, match="model and camera"):
            MotionFitter().fit(sc.feature_video)
