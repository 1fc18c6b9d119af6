import numpy as np
import pytest

from emofuse import autodiff as ad
from emofuse import enhance
from helpers import fd_check, numeric_grad, rel_err


def make_params(variant="full", d_in=5, d=8, heads=2, seed=0):
    rng = np.random.default_rng(seed)
    return enhance.init_enhancer(rng, d_in, d, heads=heads, d_ff=16, variant=variant)


def test_single_row_attention_is_value_projection():
    # softmax over one key is 1, so attention returns the value projection
    p = make_params("attention_only")
    x = np.random.default_rng(1).normal(size=(1, 5))
    x0 = x @ p.w_in.data
    vals = [x0 @ wv.data for _, _, wv in p.head_qkv]
    attn = np.concatenate(vals, axis=1) @ p.w_out.data
    expected_pre_ln = x0 + attn
    out = enhance.enhance_forward(x, p)
    mu = expected_pre_ln.mean()
    sig = np.sqrt(((expected_pre_ln - mu) ** 2).mean() + 1e-5)
    assert rel_err(out.data, (expected_pre_ln - mu) / sig) <= 1e-10


def test_gate_saturation_drives_output_to_zero():
    p = make_params("gating_only")
    p.gate_w.data[:] = 0.0
    p.gate_b.data[:] = -30.0
    x = np.random.default_rng(2).normal(size=(4, 5))
    out = enhance.enhance_forward(x, p)
    assert np.abs(out.data).max() < 1e-10


def test_removed_variant_is_pure_projection():
    p = make_params("removed")
    x = np.random.default_rng(3).normal(size=(4, 5))
    out = enhance.enhance_forward(x, p)
    assert np.allclose(out.data, x @ p.w_in.data)


def test_gating_only_zero_weights_halves_projection():
    p = make_params("gating_only")
    p.gate_w.data[:] = 0.0
    p.gate_b.data[:] = 0.0
    x = np.random.default_rng(4).normal(size=(3, 5))
    out = enhance.enhance_forward(x, p)
    assert np.allclose(out.data, 0.5 * (x @ p.w_in.data))


def test_unknown_variant_rejected():
    with pytest.raises(ValueError):
        make_params("bogus")


def count(p):
    return sum(t.size for _, t in p.named_tensors())


def test_parameter_count_monotone_across_variants():
    counts = {v: count(make_params(v)) for v in enhance.VARIANTS}
    assert counts["full"] > counts["gating_only"] > counts["removed"]
    assert counts["full"] > counts["attention_only"] > counts["removed"]


@pytest.mark.parametrize("variant", enhance.VARIANTS)
def test_output_shape_and_permutation_equivariance(variant):
    p = make_params(variant)
    rng = np.random.default_rng(5)
    x = rng.normal(size=(6, 5))
    out = enhance.enhance_forward(x, p).data
    assert out.shape == (6, 8)
    perm = rng.permutation(6)
    out_perm = enhance.enhance_forward(x[perm], p).data
    assert rel_err(out_perm, out[perm]) <= 1e-10


def test_gate_values_strictly_in_unit_interval():
    p = make_params("full")
    x = np.random.default_rng(6).normal(size=(4, 5)) * 5
    x0 = x @ p.w_in.data
    gate = 1 / (1 + np.exp(-(x0 @ p.gate_w.data + p.gate_b.data)))
    assert np.all(gate > 0) and np.all(gate < 1)


def test_deterministic_without_dropout():
    p = make_params("full")
    x = np.random.default_rng(7).normal(size=(4, 5))
    a = enhance.enhance_forward(x, p).data
    b = enhance.enhance_forward(x, p).data
    assert np.array_equal(a, b)


def test_dropout_only_active_in_train_mode():
    p = make_params("full")
    x = np.random.default_rng(8).normal(size=(4, 5))
    rng1 = np.random.default_rng(9)
    rng2 = np.random.default_rng(9)
    trained = enhance.enhance_forward(x, p, dropout_p=0.5, train_mode=True, rng=rng1).data
    trained_again = enhance.enhance_forward(x, p, dropout_p=0.5, train_mode=True, rng=rng2).data
    plain = enhance.enhance_forward(x, p, dropout_p=0.5, train_mode=False).data
    assert np.array_equal(trained, trained_again)
    assert not np.array_equal(trained, plain)


def test_full_block_gradients_match_finite_differences():
    # tiny dims: N=3, d=8, h=2; loss = weighted sum of outputs
    p = make_params("full")
    x = np.random.default_rng(10).uniform(-1, 1, (3, 5))
    r = np.random.default_rng(11).normal(size=(3, 8))
    names, tensors = zip(*p.named_tensors())
    out = enhance.enhance_forward(x, p)
    ad.sum_(ad.mul(out, ad.Tensor(r))).backward()
    worst = 0.0
    for name, t in zip(names, tensors):
        base = t.data.copy()

        def f(arr, t=t, base=base):
            t.data = arr
            with ad.no_grad():
                val = float((enhance.enhance_forward(x, p).data * r).sum())
            t.data = base
            return val

        num = numeric_grad(f, base)
        g = t.grad if t.grad is not None else np.zeros_like(base)
        worst = max(worst, rel_err(g, num))
    assert worst <= 1e-4
