import numpy as np
import pytest

from fincrew.errors import BadImbalance
from fincrew.models import estimator as est
from fincrew.models.metrics import roc_auc
from fincrew.synthetic import TARGET, generate_synthetic_dataset, informative_features


def _lr_test_auc(signal, seed=0):
    t = generate_synthetic_dataset(n_rows=4000, n_categorical=0, signal_strength=signal, seed=seed)
    X = np.column_stack([t.column(c) for c in t.column_names if c != TARGET])
    y = t.column(TARGET).astype(int)
    m = est.fit("logistic-regression", {}, X[:3000], y[:3000])
    return roc_auc(y[3000:], m.predict_scores(X[3000:]))


def test_majority_share_and_determinism():
    a = generate_synthetic_dataset(seed=11)
    assert abs((1 - a.column(TARGET).mean()) - 0.78) <= 0.01
    assert a.equals(generate_synthetic_dataset(seed=11))
    assert not a.equals(generate_synthetic_dataset(seed=12))
    assert a.column_names == ("x1", "x2", "x3", "x4", "x5", "x6", "cat1", "cat2", TARGET)


def test_no_signal_gives_chance_auc():
    assert abs(_lr_test_auc(0.0) - 0.5) <= 0.05


def test_strong_signal_is_learnable():
    assert _lr_test_auc(3.0) > 0.9


def test_bad_imbalance():
    for bad in (0.5, 1.0, 0.2):
        with pytest.raises(BadImbalance):
            generate_synthetic_dataset(imbalance=bad)


def test_missing_rate_and_informative_features():
    t = generate_synthetic_dataset(n_rows=2000, missing_rate=0.1, seed=3)
    assert 0.05 < np.isnan(t.column("x1")).mean() < 0.15
    assert not np.isnan(t.column("x3")).any()
    assert len(informative_features(6, 3)) == 3
