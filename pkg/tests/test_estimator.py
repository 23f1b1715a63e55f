import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from navseg.estimator import GroupAttentionSegmenter, GroupRemapper
from navseg.exceptions import DataError
from navseg.grouping import GroupMap, load_group_map
from navseg.trainer import make_synth_dataset
from navseg.validation import check_images, check_label_maps

SMALL = dict(head_width=8, out_channels=16, max_iter=3, batch_size=2, random_state=1)


@pytest.fixture(scope="module")
def data():
    samples = make_synth_dataset(0, 4, 32, 32, 6)
    return np.stack([s.image for s in samples]), np.stack([s.labels for s in samples])


@pytest.fixture(scope="module")
def fitted(data):
    return GroupAttentionSegmenter(**SMALL).fit(*data)


def test_params_and_clone():
    est = GroupAttentionSegmenter(reduction=16, lambda_ga=0.0)
    params = est.get_params()
    assert params["reduction"] == 16 and params["lambda_ga"] == 0.0
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    est.set_params(max_iter=5)
    assert est.max_iter == 5


def test_fit_predict_shapes(fitted, data):
    X, y = data
    pred = fitted.predict(X)
    assert pred.shape == y.shape and pred.dtype == np.uint8
    proba = fitted.predict_proba(X)
    assert proba.shape == (4, 6, 32, 32)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(proba.argmax(axis=1), pred)
    assert fitted.attention_maps(X[:1]).shape == (1, 6, 32, 32)
    assert len(fitted.history_) == 3
    assert 0.0 <= fitted.score(X, y) <= 1.0


def test_fit_is_reproducible(fitted, data):
    again = GroupAttentionSegmenter(**SMALL).fit(*data)
    assert again.history_ == fitted.history_


def test_channels_last_uint8_input(fitted, data):
    X = data[0]
    u8 = np.rint(X * 255).astype(np.uint8).transpose(0, 2, 3, 1)
    np.testing.assert_allclose(fitted.predict_proba(u8), fitted.predict_proba(u8.transpose(0, 3, 1, 2) / 255.0))


def test_unfitted_raises():
    with pytest.raises(NotFittedError):
        GroupAttentionSegmenter().predict(np.zeros((1, 3, 32, 32)))


def test_save_load(tmp_path, fitted, data):
    fitted.save(tmp_path / "m")
    loaded = GroupAttentionSegmenter.load(tmp_path / "m")
    assert loaded.head_width == 8
    np.testing.assert_allclose(loaded.predict_proba(data[0]), fitted.predict_proba(data[0]), atol=1e-5)


def test_input_validation():
    with pytest.raises(DataError):
        check_images(np.zeros((1, 3, 30, 32)))
    with pytest.raises(DataError):
        check_images(np.zeros((1, 4, 32, 32)))
    with pytest.raises(DataError):
        check_images(np.full((1, 3, 32, 32), np.nan))
    assert check_images(np.zeros((3, 32, 64))).shape == (1, 3, 32, 64)
    with pytest.raises(DataError):
        check_label_maps(np.array([[0, 7]]), 6)
    with pytest.raises(DataError):
        check_label_maps(np.array([[0.5]]), 6)
    with pytest.raises(DataError):
        check_label_maps(np.zeros((2, 2)), 6, shape=(2, 3))
    np.testing.assert_array_equal(check_label_maps(np.array([[255, 5]]), 6), [[255, 5]])


def test_group_remapper_variants(tmp_path):
    gm = load_group_map()
    fine = np.array([[gm.class_names.index("water"), gm.class_names.index("asphalt")]])
    np.testing.assert_array_equal(GroupRemapper().fit_transform(fine), [[3, 0]])
    np.testing.assert_array_equal(GroupRemapper(gm.to_dict()).fit_transform(fine), [[3, 0]])
    ident = GroupRemapper(GroupMap.identity(3)).fit(None)
    assert ident.n_groups_ == 3
    with pytest.raises(NotFittedError):
        GroupRemapper().transform(fine)
