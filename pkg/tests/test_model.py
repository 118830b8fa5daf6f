import numpy as np
import pytest

from dover.model import (BranchModel, DoverModel, ShapeError, backward, branch_layout, conv3d_forward, forward,
                         load_checkpoint, save_checkpoint)
from dover.views import ViewConfig

from oracles import relative_error


def naive_conv3d(x, w, b):
    """Direct loops: kernel 3, padding 1, stride (1, 2, 2)."""
    bsz, t, h, wd, cin = x.shape
    cout = w.shape[-1]
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (1, 1), (0, 0)))
    ho, wo = (h - 1) // 2 + 1, (wd - 1) // 2 + 1
    out = np.zeros((bsz, t, ho, wo, cout))
    for n in range(bsz):
        for i in range(t):
            for j in range(ho):
                for k in range(wo):
                    patch = xp[n, i:i + 3, 2 * j:2 * j + 3, 2 * k:2 * k + 3]
                    out[n, i, j, k] = np.tensordot(patch, w, axes=4) + b
    return out


def test_conv_matches_loops(rng):
    x = rng.normal(size=(2, 3, 5, 6, 2))
    w = rng.normal(size=(3, 3, 3, 2, 4))
    b = rng.normal(size=4)
    out, _ = conv3d_forward(x, w, b)
    np.testing.assert_allclose(out, naive_conv3d(x, w, b), atol=1e-12)


def test_layout_is_documented():
    names = [n for n, _ in branch_layout(3, 8, 16, 64)]
    assert names == ["conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias",
                     "proj.weight", "proj.bias", "head.weight", "head.bias"]
    m = BranchModel()
    assert m.n_params == sum(int(np.prod(s)) for _, s in m.layout)


def test_zero_parameters(rng):
    m = BranchModel(c1=2, c2=3, feat_dim=4)
    f, s = forward(m, rng.uniform(size=(2, 8, 8, 3)))
    assert s == 0.0 and not np.any(f)


def test_forward_deterministic(rng):
    m = BranchModel.initialized(0, c1=2, c2=3, feat_dim=4)
    x = rng.uniform(size=(2, 8, 8, 3))
    a, b = forward(m, x), forward(m, x)
    assert a[0].tobytes() == b[0].tobytes() and a[1] == b[1]


def test_shape_errors(rng):
    m = BranchModel.initialized(0, c1=2, c2=3, feat_dim=4)
    with pytest.raises(ShapeError):
        forward(m, rng.uniform(size=(2, 8, 8, 1)))
    with pytest.raises(ShapeError):
        backward(m, rng.uniform(size=(2, 8, 8, 3)), (np.zeros(5), 1.0))


def test_zero_upstream_zero_gradient(rng):
    m = BranchModel.initialized(1, c1=2, c2=3, feat_dim=4)
    g = backward(m, rng.uniform(size=(2, 8, 8, 3)), (np.zeros(4), 0.0))
    assert not np.any(g)


def fd_param_check(m, x, d_feat, d_score, coords, h=1e-6):
    """Relative error of analytic vs central-difference gradient on selected coordinates."""
    def objective(params):
        mm = BranchModel(**m.dims, params=params)
        f, s = forward(mm, x)
        return float(d_feat @ f + d_score * s)
    g = backward(m, x, (d_feat, d_score))
    num = np.empty(len(coords))
    for n, i in enumerate(coords):
        p = m.params.copy()
        p[i] += h
        fp = objective(p)
        p[i] -= 2 * h
        fm = objective(p)
        num[n] = (fp - fm) / (2 * h)
    return relative_error(g[coords], num)


@pytest.mark.parametrize("seed", range(3))
def test_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    m = BranchModel.initialized(seed, c1=3, c2=4, feat_dim=5)
    x = rng.uniform(size=(3, 9, 7, 3))
    coords = rng.choice(m.n_params, size=20, replace=False)
    assert fd_param_check(m, x, rng.normal(size=5), rng.normal(), coords) <= 1e-4


def test_batch_backward_sums_items(rng):
    m = BranchModel.initialized(2, c1=2, c2=3, feat_dim=4)
    x = rng.uniform(size=(2, 2, 8, 8, 3))
    df, ds = rng.normal(size=(2, 4)), rng.normal(size=2)
    _, _, cache = m.forward_batch(x)
    g = m.backward_batch(cache, df, ds)
    g_sep = backward(m, x[0], (df[0], ds[0])) + backward(m, x[1], (df[1], ds[1]))
    np.testing.assert_allclose(g, g_sep, atol=1e-12)


def test_checkpoint_round_trip(tmp_path, rng):
    model = DoverModel.initialized(4, ViewConfig(aes_size=16, aes_over_size=8), c1=2, c2=3, feat_dim=4)
    path = save_checkpoint(model, tmp_path / "m.ckpt")
    back = load_checkpoint(path)
    x = rng.uniform(size=(2, 8, 8, 3))
    for name in ("aesthetic", "technical"):
        a, b = forward(model.branches()[name], x), forward(back.branches()[name], x)
        assert a[1] == b[1] and np.array_equal(a[0], b[0])
    assert back.view_cfg == model.view_cfg
    assert save_checkpoint(back, tmp_path / "m2.ckpt").read_bytes() == path.read_bytes()
