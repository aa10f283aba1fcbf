import numpy as np
import pytest

from activations.model import ActReport, LayerDeviation
from activations.service import (act_compare, act_cos, act_l2, compare_hidden, linear_cka,
                                 stacked_deviation)
from exceptions import DegenerateInput, SchemaError, ShapeError
from tinylm.params import init_params


@pytest.fixture
def pair():
    rng = np.random.default_rng(21)
    return rng.standard_normal((16, 8)), rng.standard_normal((16, 8))


def test_l2_values(pair):
    """Identical inputs give 0, a constant row shift c gives ||c||, loops agree."""
    ha, hb = pair
    assert act_l2(ha, ha) == 0.0
    c = np.array([3.0, 4.0, 0, 0, 0, 0, 0, 0])
    assert act_l2(ha, ha + c) == pytest.approx(5.0, abs=1e-12)
    naive = sum(sum((ha[i, j] - hb[i, j]) ** 2 for j in range(8)) ** 0.5 for i in range(16)) / 16
    assert act_l2(ha, hb) == pytest.approx(naive, abs=1e-12)


def test_l2_triangle_inequality():
    """The mean per-position distance is a metric."""
    rng = np.random.default_rng(2)
    for _ in range(10):
        a, b, c = (rng.standard_normal((6, 4)) for _ in range(3))
        assert act_l2(a, c) <= act_l2(a, b) + act_l2(b, c) + 1e-9


def test_cos_values(pair):
    """Scaled copies align, negated copies oppose, orthogonal rows give 0."""
    ha, _ = pair
    assert act_cos(ha, 2 * ha) == pytest.approx(1.0, abs=1e-6)
    assert act_cos(ha, -ha) == pytest.approx(-1.0, abs=1e-6)
    rows = np.array([[1.0, 0.0], [0.0, 2.0]])
    assert act_cos(rows, rows[:, ::-1]) == 0.0
    with pytest.raises(ShapeError):
        act_cos(ha, ha[:, :4])


def test_cka_invariances(pair):
    """CKA is 1 for rotations and isotropic scaling, symmetric and permutation invariant."""
    ha, hb = pair
    q, _ = np.linalg.qr(np.random.default_rng(5).standard_normal((8, 8)))
    assert linear_cka(ha, ha) == pytest.approx(1.0, abs=1e-12)
    assert linear_cka(ha, ha @ q) == pytest.approx(1.0, abs=1e-8)
    assert linear_cka(ha, 3.7 * ha) == pytest.approx(1.0, abs=1e-10)
    assert linear_cka(ha, hb) == pytest.approx(linear_cka(hb, ha), abs=1e-12)
    assert linear_cka(ha, hb[:, ::-1]) == pytest.approx(linear_cka(ha, hb), abs=1e-12)
    assert 0.0 <= linear_cka(ha, hb) < 1.0


def test_cka_rejects_constant_rows(pair):
    """All rows equal means zero variance after centring."""
    ha, _ = pair
    with pytest.raises(DegenerateInput):
        linear_cka(np.ones((16, 8)), ha)


def test_compare_hidden_layer_counts():
    """Stacks of different depth cannot be compared."""
    h = [np.eye(3)] * 2
    with pytest.raises(SchemaError):
        compare_hidden(h, h[:1])


def test_checkpoint_against_itself(tiny_cfg, tiny_batch):
    """The same params give d_L2 = 0, cos = 1 and CKA = 1 at every layer."""
    params = init_params(tiny_cfg)
    report = act_compare((params, tiny_cfg), (params, tiny_cfg), tiny_batch,
                         method="full_rank", reference="full_rank", step=0)
    assert len(report.layers) == tiny_cfg.n_layers + 1
    assert np.all(report.column("d_l2") == 0.0)
    assert np.allclose(report.column("cos"), 1.0, atol=1e-6)
    assert np.allclose(report.column("cka"), 1.0, atol=1e-10)


def test_different_seeds_deviate(tiny_cfg, tiny_batch):
    """A differently seeded model moves away from the reference."""
    other = tiny_cfg.derive(seed=1)
    report = act_compare((init_params(tiny_cfg), tiny_cfg), (init_params(other), other),
                         tiny_batch, method="galore", reference="full_rank",
                         size="xs", seed=0, step=0)
    assert (report.reference, report.size, report.seed) == ("full_rank", "xs", 0)
    assert report.l2_mean > 0
    assert report.cos_mean < 1


def _report(method, d_l2, cos, cka):
    layers = [LayerDeviation(layer=i, d_l2=d, cos=c, cka=k)
              for i, (d, c, k) in enumerate(zip(d_l2, cos, cka))]
    return ActReport(method=method, reference="full_rank", step=10, layers=layers)


def test_stacked_deviation_normalises_within_group():
    """norm_L2 divides by the mean over methods at the same step and layer."""
    reports = [_report("full_rank", [0.0, 0.0], [1.0, 1.0], [1.0, 1.0]),
               _report("cola", [2.0, 4.0], [0.5, 0.8], [0.9, 0.6])]
    reference, cola = stacked_deviation(reports)
    assert reference.per_layer == [0.0, 0.0]
    assert cola.per_layer == pytest.approx([2.0 + 0.5 + 0.1, 2.0 + 0.2 + 0.4])
    assert cola.last_layer == pytest.approx(2.6)
    assert cola.layer_mean == pytest.approx(2.6)
