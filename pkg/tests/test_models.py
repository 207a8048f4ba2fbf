import json

import numpy as np
import pytest

from traveltime.boosting import GbtParams
from traveltime.forest import ForestParams
from traveltime.models import (
    MODEL_KINDS,
    CartParams,
    fit_model,
    load_model,
    make_params,
    model_kind,
    save_model,
)

NAMES = ["a", "b", "c"]


def _data(n=200, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 10, size=(n, 3))
    y = 50 + 20 * X[:, 0] + rng.normal(size=n) * 5
    return X, y


SMALL = {
    "cart": {"max_depth": 4},
    "random_forest": {"n_trees": 3, "max_depth": 4},
    "extra_trees": {"n_trees": 3, "max_depth": 4},
    "gbt_depthwise": {"num_rounds": 5, "max_depth": 3},
    "gbt_leafwise": {"num_rounds": 5, "max_leaves": 7},
}


@pytest.mark.parametrize("kind", MODEL_KINDS)
def test_save_load_round_trip(kind, tmp_path):
    X, y = _data()
    model = fit_model(kind, SMALL[kind], X, y, feature_names=NAMES, seed=3)
    path = save_model(model, tmp_path / f"{kind}.json")
    again = load_model(path)
    assert model_kind(again) == kind
    np.testing.assert_array_equal(again.predict(X), model.predict(X))
    assert path.read_text() == save_model(again, tmp_path / "copy.json").read_text()


def test_make_params_types_and_kind():
    assert isinstance(make_params("cart", {"max_depth": 5}), CartParams)
    rf = make_params("random_forest", {}, seed=4)
    et = make_params("extra_trees")
    assert isinstance(rf, ForestParams) and rf.kind == "random_forest" and rf.seed == 4
    assert et.kind == "extra_trees"
    assert make_params("gbt_leafwise").growth == "leafwise"
    assert isinstance(make_params("gbt_depthwise"), GbtParams)
    # an explicit seed wins over the default one
    assert make_params("random_forest", {"seed": 9}, seed=4).seed == 9


def test_make_params_rejects_unknown():
    with pytest.raises(ValueError, match="not valid"):
        make_params("cart", {"n_trees": 5})
    with pytest.raises(ValueError, match="unknown model kind"):
        make_params("svm")
    with pytest.raises(ValueError):
        make_params("gbt_depthwise", {"growth": "leafwise"})


def test_cart_ccp_alpha_prunes():
    X, y = _data()
    full = fit_model("cart", {"max_depth": 6, "min_child_weight": 1}, X, y)
    pruned = fit_model("cart", {"max_depth": 6, "min_child_weight": 1, "ccp_alpha": 1e6}, X, y)
    assert full.tree.n_leaves > 1 and pruned.tree.n_leaves == 1


def test_cart_file_schema_hash_checked(tmp_path):
    X, y = _data()
    path = save_model(fit_model("cart", SMALL["cart"], X, y, feature_names=NAMES), tmp_path / "m.json")
    blob = json.loads(path.read_text())
    blob["feature_names"] = ["a", "b", "z"]
    path.write_text(json.dumps(blob))
    with pytest.raises(ValueError, match="hash"):
        load_model(path)


def test_unknown_kind_in_file(tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps({"model_kind": "svm"}))
    with pytest.raises(ValueError):
        load_model(path)
