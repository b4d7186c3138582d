import numpy as np
import pytest

import saenet


def conv_ref(x, w, bias=None, stride=1, padding=0, groups=1):
    n, cin, h, wd = x.shape
    o, ig, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, o, oh, ow))
    og = o // groups
    for g in range(groups):
        xs = xp[:, g * ig : (g + 1) * ig]
        for oc in range(og):
            for i in range(oh):
                for j in range(ow):
                    patch = xs[:, :, i * stride : i * stride + kh, j * stride : j * stride + kw]
                    out[:, g * og + oc, i, j] = np.einsum("nchw,chw->n", patch, w[g * og + oc])
    if bias is not None:
        out += bias[None, :, None, None]
    return out


def test_conv2d_matches_reference():
    rng = np.random.default_rng(0)
    for stride, padding, groups in [(1, 0, 1), (1, 1, 1), (2, 1, 1), (1, 1, 2), (2, 0, 4)]:
        cin, cout = 4 * groups, 4 * groups
        x = rng.standard_normal((2, cin, 6, 6))
        w = rng.standard_normal((cout, cin // groups, 3, 3))
        b = rng.standard_normal(cout)
        got = saenet.conv2d(x, w, b, stride=stride, padding=padding, groups=groups)
        want = conv_ref(x, w, b, stride=stride, padding=padding, groups=groups)
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_conv2d_rejects_channel_mismatch():
    x = np.zeros((1, 3, 5, 5))
    w = np.zeros((2, 4, 3, 3))
    with pytest.raises(ValueError):
        saenet.conv2d(x, w)


def test_elementwise_and_pooling():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 3, 4, 4))
    np.testing.assert_array_equal(saenet.relu(x), np.maximum(x, 0.0))
    np.testing.assert_allclose(saenet.sigmoid(x), 1.0 / (1.0 + np.exp(-x)), atol=1e-15)
    np.testing.assert_allclose(saenet.global_avg_pool(x), x.mean(axis=(2, 3)), atol=1e-15)

    gates = rng.standard_normal((2, 3))
    np.testing.assert_array_equal(
        saenet.channel_scale(x, gates), x * gates[:, :, None, None]
    )

    logits = rng.standard_normal((5, 7))
    p = saenet.softmax(logits)
    np.testing.assert_allclose(p.sum(axis=1), np.ones(5), atol=1e-12)
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    np.testing.assert_allclose(p, e / e.sum(axis=1, keepdims=True), atol=1e-12)


def test_maxpool_ties_pick_first():
    x = np.zeros((1, 1, 2, 2))
    out = saenet.maxpool2d(x, 2, 2)
    assert out.shape == (1, 1, 1, 1)
    assert out[0, 0, 0, 0] == 0.0

    x = np.arange(16, dtype=float).reshape(1, 1, 4, 4)
    np.testing.assert_array_equal(
        saenet.maxpool2d(x, 2, 2), np.array([[[[5.0, 7.0], [13.0, 15.0]]]])
    )


def test_metrics_counts_ranks():
    logits = np.zeros((3, 10))
    logits[0, 2] = 5.0            # label 2 ranks first
    logits[1, :5] = [9, 8, 7, 6, 5]  # label 4 ranks fifth
    # row 2 is all ties; label 5 ranks sixth under the lowest-index rule
    m = saenet.metrics(logits, [2, 4, 5])
    assert m["top1"] == pytest.approx(1 / 3)
    assert m["top5"] == pytest.approx(2 / 3)
    assert m["mean_loss"] > 0.0


def test_lr_schedule_is_exact():
    assert saenet.lr_at_epoch(0) == 0.01
    assert saenet.lr_at_epoch(14) == 0.01
    assert saenet.lr_at_epoch(15) == 0.001
    assert saenet.lr_at_epoch(30) == 0.0001
    assert saenet.lr_at_epoch(45) == 0.00001
    assert saenet.lr_at_epoch(0, lr0=0.05, step_epochs=5) == 0.05


def test_gradcheck_targets():
    names = saenet.check_names()
    assert "fc" in names and "block-sae" in names and len(names) == 13
    for name in ["fc", "gate-sae"]:
        r = saenet.grad_check(name, seed=11)
        assert r.passed, r.failure
        assert r.max_rel_err < r.tolerance
        assert all(err < r.tolerance for _, err in r.entries)
    with pytest.raises(ValueError):
        saenet.grad_check("resnet50")


def test_model_presets_and_forward():
    names = saenet.preset_names()
    for expected in ["resnet50", "se-resnet50", "sae-resnet50", "sae-resnext50", "sae-small"]:
        assert expected in names
    with pytest.raises(ValueError):
        saenet.Model("not-a-preset")

    model = saenet.Model("sae-small", seed=5)
    assert model.name == "sae-small"

    csv = model.summary_csv(side=16)
    total = int(csv.strip().splitlines()[-1].split(",")[-1])
    assert total == model.param_count()

    x = np.random.default_rng(2).standard_normal((2, 3, 16, 16)).astype(np.float32)
    logits = model.forward(x)
    assert logits.shape == (2, model.num_classes)
    assert np.isfinite(logits).all()

    again = saenet.Model("sae-small", seed=5).forward(x)
    np.testing.assert_array_equal(logits, again)


def test_resnet50_parameter_anchor():
    assert saenet.Model("resnet50", seed=0).param_count() == 25_557_032


def test_make_synthetic():
    images, labels = saenet.make_synthetic(5, 4, side=8, seed=3)
    assert images.shape == (20, 3, 8, 8) and images.dtype == np.uint8
    assert labels.shape == (20,) and labels.dtype == np.int64
    assert np.array_equal(np.bincount(labels), np.full(5, 4))

    again, _ = saenet.make_synthetic(5, 4, side=8, seed=3)
    np.testing.assert_array_equal(images, again)
    other, _ = saenet.make_synthetic(5, 4, side=8, seed=4)
    assert not np.array_equal(images, other)
