import numpy as np
import pytest

from contraction_pinn import sampling
from contraction_pinn.exceptions import ConfigError
from contraction_pinn.systems import linear


def test_size_and_box(vdp, duffing):
    for system in (vdp, duffing):
        cset = sampling.sample_collocation(system, 4000, seed=0)
        assert len(cset) == 4000
        assert np.all(cset.x_hat >= system.domain_x[:, 0]) and np.all(cset.x_hat <= system.domain_x[:, 1])
        assert np.all(cset.y >= system.domain_y[:, 0]) and np.all(cset.y <= system.domain_y[:, 1])


def test_coverage_vanderpol(vdp):
    cset = sampling.sample_collocation(vdp, 100_000, seed=1)
    pts = cset.inputs
    box = vdp.domain
    span = box[:, 1] - box[:, 0]
    assert np.all(pts.min(axis=0) >= box[:, 0]) and np.all(pts.max(axis=0) <= box[:, 1])
    covered = (pts.max(axis=0) - pts.min(axis=0)) / span
    assert np.all(covered >= 0.99)


def test_y_drawn_independently_of_x(vdp):
    cset = sampling.sample_collocation(vdp, 20_000, seed=2)
    assert abs(np.corrcoef(cset.x_hat[:, 0], cset.y[:, 0])[0, 1]) < 0.03


def test_degenerate_axis():
    system = linear(np.zeros((2, 2)), [[1.0, 0.0]], [[0.5, 0.5], [-1, 1]], [[-1, 1]])
    cset = sampling.sample_collocation(system, 200, seed=0)
    assert np.all(cset.x_hat[:, 0] == 0.5)


def test_reproducible(vdp):
    a = sampling.sample_collocation(vdp, 50, seed=3)
    b = sampling.sample_collocation(vdp, 50, seed=3)
    c = sampling.sample_collocation(vdp, 50, seed=4)
    assert np.array_equal(a.inputs, b.inputs)
    assert not np.array_equal(a.inputs, c.inputs)


def test_invalid_requests(vdp):
    with pytest.raises(ConfigError):
        sampling.sample_collocation(vdp, 0)


def test_batches_full_and_partition(vdp):
    cset = sampling.sample_collocation(vdp, 10, seed=0)
    assert sampling.batches(cset, 10)[0] is cset
    assert sampling.batches(cset, None)[0] is cset
    parts = sampling.batches(cset, 3, seed=5)
    assert [len(p) for p in parts] == [3, 3, 3, 1]
    joined = np.vstack([p.inputs for p in parts])
    assert sorted(map(tuple, joined)) == sorted(map(tuple, cset.inputs))
    again = sampling.batches(cset, 3, seed=5)
    assert all(np.array_equal(p.inputs, q.inputs) for p, q in zip(parts, again))


def test_export(tmp_path, vdp):
    cset = sampling.sample_collocation(vdp, 7, seed=0)
    path = sampling.save_collocation(cset, tmp_path / "c.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "xhat1,xhat2,y1"
    back = np.loadtxt(path, delimiter=",", skiprows=1)
    np.testing.assert_array_equal(back, cset.inputs)
