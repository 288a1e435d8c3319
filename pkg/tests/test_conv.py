import numpy as np
import pytest

from edgeconv.conv import (
    BOUNDARY_MODES,
    KernelSet,
    conv2d_backward,
    conv2d_forward,
    partition_build,
    region_rectangles,
    sample_extended,
)

from oracles import (
    central_difference_grad,
    max_relative_error,
    oracle_conv2d,
    oracle_region_index,
)

CLASSICAL = ("zero", "clamp", "reflect", "mean")


def random_kernels(rng, radius, in_channels, out_features, explicit):
    k = 2 * radius + 1
    regions = k * k if explicit else 1
    return KernelSet(
        weights=rng.normal(0.0, 0.6, size=(regions, out_features, k, k, in_channels)),
        bias=rng.normal(0.0, 0.2, size=out_features),
    )


def delta_kernels(radius, channels, explicit=False):
    """Per-feature centered delta on the matching channel: identity map."""
    k = 2 * radius + 1
    regions = k * k if explicit else 1
    w = np.zeros((regions, channels, k, k, channels))
    for f in range(channels):
        w[:, f, radius, radius, f] = 1.0
    return KernelSet(weights=w, bias=np.zeros(channels))


# --- partition ---------------------------------------------------------------

def test_partition_5x5_r1_matches_9_region_decomposition():
    p = partition_build(5, 5, 1)
    counts = np.bincount(p.region_of.reshape(-1), minlength=9)
    assert sorted(counts.tolist()) == [1, 1, 1, 1, 3, 3, 3, 3, 9]
    assert counts[4] == 9  # interior region index r*(2r+1)+r
    corner_regions = {p.region_of[0, 0], p.region_of[0, 4], p.region_of[4, 0], p.region_of[4, 4]}
    assert corner_regions == {0, 2, 6, 8}


def test_partition_3x3_r1_every_pixel_its_own_region():
    p = partition_build(3, 3, 1)
    assert sorted(p.region_of.reshape(-1).tolist()) == list(range(9))


def test_partition_7x9_r2_against_case_formula_oracle():
    p = partition_build(7, 9, 2)
    for y in range(7):
        for x in range(9):
            assert p.region_of[y, x] == oracle_region_index(y, x, 7, 9, 2)
    assert len(np.unique(p.region_of)) == 25
    assert int(np.sum(p.region_of == 12)) == 15  # 3x5 interior


@pytest.mark.parametrize("r", [1, 2])
def test_partition_exact_cover_and_rectangles(r):
    k = 2 * r + 1
    for h in range(k, 13):
        for w in range(k, 13):
            p = partition_build(h, w, r)
            counts = np.bincount(p.region_of.reshape(-1), minlength=k * k)
            assert counts.sum() == h * w
            cover = np.zeros((h, w), dtype=int)
            for i, (y0, y1, x0, x1) in enumerate(region_rectangles(p)):
                assert (y1 - y0) * (x1 - x0) == counts[i]
                assert np.all(p.region_of[y0:y1, x0:x1] == i)
                cover[y0:y1, x0:x1] += 1
            assert np.all(cover == 1)


def test_partition_rejects_overlapping_bands():
    with pytest.raises(ValueError):
        partition_build(2, 5, 1)
    with pytest.raises(ValueError):
        partition_build(7, 4, 2)


# --- boundary sampling -------------------------------------------------------

def test_sample_extended_rules():
    rng = np.random.default_rng(3)
    t = rng.uniform(0.0, 1.0, size=(4, 4, 2))
    mean0 = float(t[:, :, 0].mean())
    assert sample_extended(t, -1, 0, 0, "zero") == 0.0
    assert sample_extended(t, -1, 2, 0, "clamp") == t[0, 2, 0]
    assert sample_extended(t, -1, -1, 1, "reflect") == t[1, 1, 1]
    assert sample_extended(t, -2, 5, 0, "reflect") == t[2, 1, 0]
    assert sample_extended(t, 4, -1, 0, "mean", image_mean=mean0) == mean0
    for mode in CLASSICAL:
        assert sample_extended(t, 2, 3, 1, mode, image_mean=mean0) == t[2, 3, 1]
    with pytest.raises(ValueError):
        sample_extended(t, 0, 0, 0, "explicit")


# --- forward -----------------------------------------------------------------

@pytest.mark.parametrize("mode", CLASSICAL)
def test_delta_kernel_is_identity(mode):
    rng = np.random.default_rng(11)
    t = rng.uniform(0.0, 1.0, size=(6, 5, 2))
    out = conv2d_forward(t, delta_kernels(1, 2), mode)
    assert np.array_equal(out, t)


def test_delta_kernel_identity_explicit():
    rng = np.random.default_rng(12)
    t = rng.uniform(0.0, 1.0, size=(6, 5, 2))
    p = partition_build(6, 5, 1)
    out = conv2d_forward(t, delta_kernels(1, 2, explicit=True), "explicit", p)
    assert np.array_equal(out, t)


def test_box_kernel_zero_mode_frozen_values():
    t = np.arange(1.0, 10.0).reshape(3, 3, 1)
    k = KernelSet(weights=np.full((1, 1, 3, 3, 1), 1.0 / 9.0), bias=np.zeros(1))
    out = conv2d_forward(t, k, "zero")
    assert abs(out[1, 1, 0] - 5.0) < 1e-12
    assert abs(out[0, 0, 0] - (1 + 2 + 4 + 5) / 9.0) < 1e-12


def test_box_kernel_reflect_mode_top_left():
    t = np.arange(1.0, 10.0).reshape(3, 3, 1)
    k = KernelSet(weights=np.full((1, 1, 3, 3, 1), 1.0 / 9.0), bias=np.zeros(1))
    out = conv2d_forward(t, k, "reflect")
    expected = oracle_conv2d(t, k.weights, k.bias, "reflect", 1)
    assert abs(out[0, 0, 0] - 33.0 / 9.0) < 1e-12  # frozen from the oracle
    assert np.max(np.abs(out - expected)) < 1e-12


@pytest.mark.parametrize("mode", BOUNDARY_MODES)
@pytest.mark.parametrize("radius", [1, 2])
def test_forward_matches_naive_oracle(mode, radius):
    rng = np.random.default_rng(100 * radius + len(mode))
    for trial in range(3):
        h = int(rng.integers(2 * radius + 1, 9))
        w = int(rng.integers(2 * radius + 1, 9))
        cin = int(rng.integers(1, 4))
        nf = int(rng.integers(1, 3))
        t = rng.uniform(0.0, 1.0, size=(h, w, cin))
        ks = random_kernels(rng, radius, cin, nf, explicit=(mode == "explicit"))
        part = partition_build(h, w, radius) if mode == "explicit" else None
        expected = oracle_conv2d(t, ks.weights, ks.bias, mode, radius)
        for strategy in ("compose", "decompose"):
            out = conv2d_forward(t, ks, mode, part, strategy)
            assert np.max(np.abs(out - expected)) < 1e-12


def test_explicit_with_equal_kernels_degenerates_to_zero_mode():
    rng = np.random.default_rng(7)
    for trial in range(10):
        h, w = int(rng.integers(3, 10)), int(rng.integers(3, 10))
        cin, nf = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        t = rng.uniform(0.0, 1.0, size=(h, w, cin))
        single = random_kernels(rng, 1, cin, nf, explicit=False)
        tiled = KernelSet(weights=np.repeat(single.weights, 9, axis=0), bias=single.bias.copy())
        p = partition_build(h, w, 1)
        ref = conv2d_forward(t, single, "zero")
        for strategy in ("compose", "decompose"):
            out = conv2d_forward(t, tiled, "explicit", p, strategy)
            assert np.max(np.abs(out - ref)) == 0.0


@pytest.mark.parametrize("mode", BOUNDARY_MODES)
def test_strategies_agree(mode):
    rng = np.random.default_rng(21)
    for trial in range(5):
        h, w = int(rng.integers(3, 12)), int(rng.integers(3, 12))
        cin, nf = int(rng.integers(1, 4)), int(rng.integers(1, 3))
        t = rng.uniform(-1.0, 1.0, size=(h, w, cin))
        ks = random_kernels(rng, 1, cin, nf, explicit=(mode == "explicit"))
        part = partition_build(h, w, 1) if mode == "explicit" else None
        a = conv2d_forward(t, ks, mode, part, "compose")
        b = conv2d_forward(t, ks, mode, part, "decompose")
        assert np.max(np.abs(a - b)) < 1e-12


@pytest.mark.parametrize("mode", BOUNDARY_MODES)
def test_forward_is_linear_with_fixed_kernels(mode):
    rng = np.random.default_rng(31)
    u = rng.uniform(-1.0, 1.0, size=(6, 7, 2))
    v = rng.uniform(-1.0, 1.0, size=(6, 7, 2))
    ks = random_kernels(rng, 1, 2, 2, explicit=(mode == "explicit"))
    ks = KernelSet(weights=ks.weights, bias=np.zeros(2))  # bias breaks additivity
    part = partition_build(6, 7, 1) if mode == "explicit" else None
    a, b = 0.7, -1.3
    combined = conv2d_forward(a * u + b * v, ks, mode, part)
    separate = a * conv2d_forward(u, ks, mode, part) + b * conv2d_forward(v, ks, mode, part)
    assert np.max(np.abs(combined - separate)) < 1e-12


@pytest.mark.parametrize("mode", BOUNDARY_MODES)
def test_interior_is_independent_of_boundary_mode(mode):
    rng = np.random.default_rng(41)
    t = rng.uniform(0.0, 1.0, size=(8, 9, 2))
    single = random_kernels(rng, 1, 2, 2, explicit=False)
    if mode == "explicit":
        ks = KernelSet(weights=np.repeat(single.weights, 9, axis=0), bias=single.bias.copy())
        out = conv2d_forward(t, ks, mode, partition_build(8, 9, 1))
    else:
        out = conv2d_forward(t, single, mode)
    ref = conv2d_forward(t, single, "zero")
    assert np.array_equal(out[1:-1, 1:-1, :], ref[1:-1, 1:-1, :])


# --- backward ----------------------------------------------------------------

@pytest.mark.parametrize("mode", BOUNDARY_MODES)
def test_zero_grad_output_gives_zero_gradients(mode):
    rng = np.random.default_rng(51)
    t = rng.uniform(0.0, 1.0, size=(5, 5, 2))
    ks = random_kernels(rng, 1, 2, 2, explicit=(mode == "explicit"))
    part = partition_build(5, 5, 1) if mode == "explicit" else None
    gi, gw, gb = conv2d_backward(t, ks, mode, part, np.zeros((5, 5, 2)))
    assert not gi.any() and not gw.any() and not gb.any()


def test_delta_kernel_adjoint_is_delta():
    t = np.zeros((5, 5, 1))
    go = np.zeros((5, 5, 1))
    go[2, 3, 0] = 1.0
    gi, _, _ = conv2d_backward(t, delta_kernels(1, 1), "zero", None, go)
    assert np.array_equal(gi, go)


@pytest.mark.parametrize("mode", BOUNDARY_MODES)
def test_adjoint_identity(mode):
    rng = np.random.default_rng(61)
    for trial in range(3):
        u = rng.uniform(-1.0, 1.0, size=(6, 6, 2))
        w = rng.uniform(-1.0, 1.0, size=(6, 6, 3))
        ks = random_kernels(rng, 1, 2, 3, explicit=(mode == "explicit"))
        ks = KernelSet(weights=ks.weights, bias=np.zeros(3))
        part = partition_build(6, 6, 1) if mode == "explicit" else None
        lhs = float(np.sum(conv2d_forward(u, ks, mode, part) * w))
        gi, _, _ = conv2d_backward(u, ks, mode, part, w)
        rhs = float(np.sum(u * gi))
        assert abs(lhs - rhs) < 1e-10


@pytest.mark.parametrize("mode", BOUNDARY_MODES)
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradients_match_finite_differences(mode, seed):
    rng = np.random.default_rng(1000 + seed)
    t = rng.uniform(0.0, 1.0, size=(6, 6, 1))
    ks = random_kernels(rng, 1, 1, 2, explicit=(mode == "explicit"))
    part = partition_build(6, 6, 1) if mode == "explicit" else None
    weighting = rng.normal(0.0, 1.0, size=(6, 6, 2))

    def loss():
        return float(np.sum(conv2d_forward(t, ks, mode, part) * weighting))

    gi, gw, gb = conv2d_backward(t, ks, mode, part, weighting)
    assert max_relative_error(gi, central_difference_grad(loss, t)) < 1e-4
    assert max_relative_error(gw, central_difference_grad(loss, ks.weights)) < 1e-4
    assert max_relative_error(gb, central_difference_grad(loss, ks.bias)) < 1e-4


def test_region_kernels_only_accumulate_from_their_region():
    rng = np.random.default_rng(71)
    t = rng.uniform(0.0, 1.0, size=(6, 6, 1))
    ks = random_kernels(rng, 1, 1, 1, explicit=True)
    p = partition_build(6, 6, 1)
    go = np.zeros((6, 6, 1))
    go[0, 0, 0] = 1.0  # top-left corner pixel, region 0
    _, gw, _ = conv2d_backward(t, ks, "explicit", p, go)
    assert gw[0].any()
    assert not gw[1:].any()


# --- contract errors ---------------------------------------------------------

def test_forward_rejects_bad_shapes():
    rng = np.random.default_rng(81)
    t = rng.uniform(0.0, 1.0, size=(5, 5, 2))
    ks = random_kernels(rng, 1, 3, 1, explicit=False)
    with pytest.raises(ValueError):
        conv2d_forward(t, ks, "zero")  # channel mismatch
    ks2 = random_kernels(rng, 1, 2, 1, explicit=True)
    with pytest.raises(ValueError):
        conv2d_forward(t, ks2, "zero")  # 9 regions in a classical mode
    with pytest.raises(ValueError):
        conv2d_forward(t, ks2, "explicit")  # missing partition
    with pytest.raises(ValueError):
        conv2d_forward(t, ks2, "explicit", partition_build(6, 5, 1))  # wrong size
    with pytest.raises(ValueError):
        conv2d_forward(t, random_kernels(rng, 1, 2, 1, explicit=False), "zero", strategy="fused")


def test_backward_rejects_mismatched_grad_output():
    rng = np.random.default_rng(91)
    t = rng.uniform(0.0, 1.0, size=(5, 5, 2))
    ks = random_kernels(rng, 1, 2, 2, explicit=False)
    with pytest.raises(ValueError):
        conv2d_backward(t, ks, "zero", None, np.zeros((5, 5, 3)))


# --- batched operation -------------------------------------------------------

@pytest.mark.parametrize("mode", BOUNDARY_MODES)
def test_batched_forward_backward_match_per_image(mode):
    rng = np.random.default_rng(101)
    batch = rng.uniform(0.0, 1.0, size=(3, 6, 6, 2))
    ks = random_kernels(rng, 1, 2, 2, explicit=(mode == "explicit"))
    part = partition_build(6, 6, 1) if mode == "explicit" else None
    go = rng.normal(0.0, 1.0, size=(3, 6, 6, 2))

    out = conv2d_forward(batch, ks, mode, part)
    gi, gw, gb = conv2d_backward(batch, ks, mode, part, go)
    gw_sum = np.zeros_like(gw)
    gb_sum = np.zeros_like(gb)
    for i in range(3):
        assert np.array_equal(out[i], conv2d_forward(batch[i], ks, mode, part))
        gi_i, gw_i, gb_i = conv2d_backward(batch[i], ks, mode, part, go[i])
        assert np.max(np.abs(gi[i] - gi_i)) < 1e-12
        gw_sum += gw_i
        gb_sum += gb_i
    assert np.max(np.abs(gw - gw_sum)) < 1e-12
    assert np.max(np.abs(gb - gb_sum)) < 1e-12
