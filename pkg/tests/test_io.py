import numpy as np
import pytest

from shrinktm.basegauss import BaseFamily
from shrinktm.io import (DataError, load_any, load_model, model_bytes, read_data, read_locations, save_gaussian,
                         save_model, write_data, write_locations)
from shrinktm.score import GaussianModel
from shrinktm.simulate import SimDesign, generate, make_generator


def test_model_roundtrip_is_bit_identical(fitted25, tmp_path):
    p1, p2 = tmp_path / "a.stm", tmp_path / "b.stm"
    save_model(p1, fitted25, method="shrinktm")
    fm, meta = load_model(p1)
    save_model(p2, fm, method=meta["method"])
    assert p1.read_bytes() == p2.read_bytes()
    assert meta["ids"] == [str(i) for i in range(25)]


def test_loaded_map_evaluates_identically(fitted25, grid5, tmp_path):
    save_model(tmp_path / "m.stm", fitted25)
    fm, _ = load_model(tmp_path / "m.stm")
    gen = make_generator(SimDesign(grid=(5, 5)), grid5)
    y = generate(gen, 3, seed=1)
    assert np.array_equal(fm.forward(y), fitted25.forward(y))
    assert np.array_equal(fm.log_density(y), fitted25.log_density(y))
    z = np.random.default_rng(0).standard_normal((2, 25))
    assert np.array_equal(fm.inverse(z), fitted25.inverse(z))


def test_prior_only_map_roundtrip(grid5, tmp_path):
    from shrinktm.mapkernel import HyperParams
    from shrinktm.posterior import fit_components
    fm = fit_components(np.zeros((0, 25)), HyperParams.default(), grid5)
    save_model(tmp_path / "p.stm", fm)
    back, _ = load_model(tmp_path / "p.stm")
    assert model_bytes(back) == model_bytes(fm)


def test_malformed_model_files(fitted25, tmp_path):
    good = model_bytes(fitted25)
    cases = {"short": good[:5], "magic": b"XXXXXXXX" + good[8:], "trunc": good[:-8], "trail": good + b"\0"}
    for name, blob in cases.items():
        p = tmp_path / name
        p.write_bytes(blob)
        with pytest.raises(DataError):
            load_model(p)
    p = tmp_path / "junk"
    p.write_bytes(b"\xff\xfe not json")
    with pytest.raises(DataError):
        load_any(p)


def test_gaussian_model_file(grid5, tmp_path):
    fam = BaseFamily.create("matern", variance=1.3, range=0.2, smoothness=1.5)
    ids = [f"s{i}" for i in range(25)]
    save_gaussian(tmp_path / "g.json", fam, grid5, ids, loglik=-3.5)
    model, doc = load_any(tmp_path / "g.json")
    assert isinstance(model, GaussianModel)
    assert doc["ids"] == ids and doc["params"]["variance"] == 1.3
    np.testing.assert_array_equal(model.ordering.perm, grid5.perm)
    np.testing.assert_array_equal(model.cov, GaussianModel(fam, grid5).cov)


def test_csv_roundtrip_and_column_order(tmp_path):
    ids = ["a", "b", "c"]
    coords = np.array([[0.0, 0.1], [0.5, 0.25], [1.0, 1 / 3]])
    write_locations(tmp_path / "l.csv", ids, coords)
    got_ids, got = read_locations(tmp_path / "l.csv")
    assert got_ids == ids and np.array_equal(got, coords)
    y = np.array([[1.0, 2.0, 3.0], [0.1, 0.2, 1 / 7]])
    (tmp_path / "d.csv").write_text("c,a,b\n" + "\n".join(f"{r[2]!r},{r[0]!r},{r[1]!r}" for r in y.tolist()) + "\n")
    _, back = read_data(tmp_path / "d.csv", ids)
    assert np.array_equal(back, y)
    write_data(tmp_path / "e.csv", ids, y)
    assert np.array_equal(read_data(tmp_path / "e.csv", ids)[1], y)


def test_empty_data_file_has_header_only(tmp_path):
    write_data(tmp_path / "z.csv", ["a", "b"], np.zeros((0, 2)))
    assert (tmp_path / "z.csv").read_text().strip() == "a,b"
    ids, y = read_data(tmp_path / "z.csv")
    assert ids == ["a", "b"] and y.shape == (0, 2)


@pytest.mark.parametrize("text", ["", "name,x,y\n1,0,0\n", "id,x,y\n1,0\n", "id,x,y\n1,0,zz\n",
                                  "id,x,y\n1,0,0\n1,1,1\n", "id,x,y\n"])
def test_bad_locations(tmp_path, text):
    (tmp_path / "l.csv").write_text(text)
    with pytest.raises(DataError):
        read_locations(tmp_path / "l.csv")


@pytest.mark.parametrize("text", ["", "a,b\n1,x\n", "a,b\n1,nan\n", "a,c\n1,2\n", "a,b\n1,2,3\n"])
def test_bad_data(tmp_path, text):
    (tmp_path / "d.csv").write_text(text)
    with pytest.raises(DataError):
        read_data(tmp_path / "d.csv", ["a", "b"])
