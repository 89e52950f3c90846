import numpy as np
import pytest

from cpsfalsify import nn
from cpsfalsify.data import Dataset, load_dataset_csv, load_model, save_dataset_csv, save_model


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((0, 2)), [])
    with pytest.raises(ValueError):
        Dataset([[0.5, 1.5]], [0])
    with pytest.raises(ValueError):
        Dataset([[0.5, 0.5]], [0, 1])


def test_split_is_80_20_and_a_partition():
    d = Dataset(np.linspace(0, 1, 100)[:, None], np.arange(100) % 2)
    tr, va = d.split(seed=3)
    assert (len(tr), len(va)) == (80, 20)
    assert sorted(np.concatenate([tr.X[:, 0], va.X[:, 0]])) == sorted(d.X[:, 0])


def test_dataset_csv_roundtrip(tmp_path):
    d = Dataset(np.random.default_rng(0).random((5, 3)), [0, 1, 1, 0, 1])
    save_dataset_csv(d, tmp_path / "d.csv")
    back = load_dataset_csv(tmp_path / "d.csv")
    assert np.array_equal(back.X, d.X) and np.array_equal(back.y, d.y)


def test_malformed_csv(tmp_path):
    (tmp_path / "d.csv").write_text("f0,label\n0.5,zero\n")
    with pytest.raises(ValueError, match="malformed"):
        load_dataset_csv(tmp_path / "d.csv")


def test_model_roundtrip_is_exact_and_byte_stable(tmp_path):
    m = nn.init_model([7, 5, 3], 2)
    save_model(m, tmp_path / "a.npz")
    save_model(m, tmp_path / "b.npz")
    assert load_model(tmp_path / "a.npz").equals(m)
    assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()
