import math

import numpy as np
import pytest

from smlm import numerics as nm
from smlm.net import (
    LogitGrid,
    ModelConfig,
    ModelParams,
    checkpoint_id,
    embed_slot,
    forward,
    forward_multihot,
    grid_multihot,
    init_params,
    load_checkpoint,
    mask_logits,
    parameter_count,
    save_checkpoint,
)
from smlm.numerics import GradientTape, Tensor, finite_difference, relative_error
from smlm.score_rep import (
    ATTRIBUTES,
    Attribute,
    Excerpt,
    NoteSlot,
    PriorGrid,
    one_hot_prior,
)
from smlm.soft_masker import MaskSchemeConfig, soft_mask

TINY = ModelConfig(hidden_size=8, num_layers=1, num_heads=2, slot_count=4)


def random_excerpt(rng, slot_count=64):
    n = int(rng.integers(1, slot_count + 1))
    notes = []
    for _ in range(n):
        o = int(rng.integers(0, slot_count))
        d = int(rng.integers(1, min(63, slot_count - o) + 1))
        notes.append((int(rng.integers(0, 36)), o, d))
    return Excerpt.from_notes(notes, slot_count=slot_count)


def masked_softmax(logits_row):
    z = logits_row - logits_row.max()
    e = np.exp(z)
    return e / e.sum()


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(hidden_size=10, num_heads=3)
    with pytest.raises(ValueError):
        ModelConfig(num_layers=0)


def test_init_is_deterministic():
    a = init_params(TINY, 7)
    b = init_params(TINY, 7)
    for name in a.names():
        np.testing.assert_array_equal(a[name].numpy(), b[name].numpy())


def test_init_layout():
    params = init_params(TINY, 0)
    assert params["dec.pitch.weight"].numpy().sum() == 0.0
    assert params["enc.pitch.bias"].numpy().sum() == 0.0
    np.testing.assert_array_equal(params["layers.0.ln1.gain"].numpy(), np.ones(8))
    w = params["enc.pitch.weight"].numpy()
    assert np.abs(w).max() <= 2 * 0.02 + 1e-9


def test_parameter_count_matches_closed_form():
    for cfg in (TINY, ModelConfig.desk(), ModelConfig(hidden_size=32, num_layers=3, num_heads=4)):
        params = init_params(cfg, 0)
        assert params.num_parameters() == parameter_count(cfg)
    # the desk preset count published in the docs
    assert parameter_count(ModelConfig.desk()) == 121702


def test_zero_decoder_gives_uniform_masked_softmax():
    rng = np.random.default_rng(0)
    params = init_params(ModelConfig.desk(), rng)
    ex = random_excerpt(rng)
    grid = soft_mask(ex, rng=rng)
    out = forward(grid, params, ModelConfig.desk())
    for attr in ATTRIBUTES:
        for i in range(64):
            allowed = grid.mask(attr)[i]
            p = masked_softmax(out.masked_np(attr)[i])
            k = int(allowed.sum())
            np.testing.assert_allclose(p[allowed], 1.0 / k, atol=1e-6)


def test_embed_slot_zero_weights_sums_biases():
    params = init_params(TINY, 0)
    for attr in ATTRIBUTES:
        params.tensors[f"enc.{attr.value}.weight"] = Tensor(
            np.zeros((attr.size, 8), dtype=np.float32)
        )
        params.tensors[f"enc.{attr.value}.bias"] = Tensor(
            np.full(8, 0.5, dtype=np.float32)
        )
    e = embed_slot(one_hot_prior(NoteSlot(3, 1, 2)), params)
    np.testing.assert_allclose(e.numpy(), np.full(8, 1.5), atol=1e-7)


def test_embed_slot_widening_adds_rows():
    params = init_params(TINY, 1)
    prior = one_hot_prior(NoteSlot(3, 1, 2))
    base = embed_slot(prior, params).numpy()
    widened = one_hot_prior(NoteSlot(3, 1, 2))
    widened.pitch[7] = True
    e = embed_slot(widened, params).numpy()
    np.testing.assert_allclose(
        e - base, params["enc.pitch.weight"].numpy()[7], atol=1e-6
    )


def test_embed_slot_matches_scalar_loop():
    cfg = ModelConfig(hidden_size=4, num_layers=1, num_heads=2, slot_count=4)
    params = init_params(cfg, 5)
    prior = one_hot_prior(NoteSlot(2, 1, 3))
    prior.pitch[9] = True
    prior.onset[64] = False  # keep as is; one-hot already
    expected = np.zeros(4)
    for attr in ATTRIBUTES:
        w = params[f"enc.{attr.value}.weight"].numpy()
        b = params[f"enc.{attr.value}.bias"].numpy()
        for j in range(4):
            acc = b[j]
            for v in np.flatnonzero(prior.mask(attr)):
                acc += w[v, j]
            expected[j] += acc
    got = embed_slot(prior, params).numpy()
    np.testing.assert_allclose(got, expected, atol=1e-5)


def test_forward_one_hot_grid_saturates():
    rng = np.random.default_rng(2)
    cfg = ModelConfig.desk()
    params = init_params(cfg, rng)
    # give decoders real values so raw logits are not flat
    for attr in ATTRIBUTES:
        params.tensors[f"dec.{attr.value}.weight"] = Tensor(
            rng.normal(0, 0.1, size=(cfg.hidden_size, attr.size)).astype(np.float32)
        )
    ex = random_excerpt(rng)
    grid = PriorGrid.from_excerpt(ex)
    out = forward(grid, params, cfg)
    idx = ex.target_indices()
    for attr in ATTRIBUTES:
        p = np.apply_along_axis(masked_softmax, 1, out.masked_np(attr))
        for i in range(64):
            assert p[i, idx[attr][i]] >= 1 - 1e-6


def test_forward_constraint_consistency():
    rng = np.random.default_rng(3)
    cfg = ModelConfig.desk()
    params = init_params(cfg, rng)
    for attr in ATTRIBUTES:
        params.tensors[f"dec.{attr.value}.weight"] = Tensor(
            rng.normal(0, 0.1, size=(cfg.hidden_size, attr.size)).astype(np.float32)
        )
    ex = random_excerpt(rng)
    grid = soft_mask(ex, rng=rng)
    out = forward(grid, params, cfg)
    for attr in ATTRIBUTES:
        allowed = out.bits[attr]
        p = np.apply_along_axis(masked_softmax, 1, out.masked_np(attr))
        assert p[~allowed].max(initial=0.0) <= 1e-6
        # support is exactly the allowed bits
        assert (p[allowed] > 0).all()


def test_masked_equals_raw_on_allowed_bits():
    rng = np.random.default_rng(4)
    raw = Tensor(rng.normal(size=(5, 7)).astype(np.float32))
    bits = rng.random((5, 7)) < 0.5
    bits[:, 0] = True
    masked = mask_logits(raw, bits).numpy()
    np.testing.assert_array_equal(masked[bits], raw.numpy()[bits])
    assert (masked[~bits] < -1e8).all()


def test_forward_permutation_equivariance():
    rng = np.random.default_rng(5)
    cfg = ModelConfig.desk()
    params = init_params(cfg, rng)
    for attr in ATTRIBUTES:
        params.tensors[f"dec.{attr.value}.weight"] = Tensor(
            rng.normal(0, 0.1, size=(cfg.hidden_size, attr.size)).astype(np.float32)
        )
    for _ in range(5):
        ex = random_excerpt(rng)
        grid = soft_mask(ex, rng=rng)
        perm = rng.permutation(64)
        permuted = PriorGrid(grid.pitch[perm], grid.onset[perm], grid.duration[perm])
        out = forward(grid, params, cfg)
        out_p = forward(permuted, params, cfg)
        for attr in ATTRIBUTES:
            np.testing.assert_array_equal(out.bits[attr][perm], out_p.bits[attr])
            diff = np.abs(out.raw[attr].numpy()[perm] - out_p.raw[attr].numpy()).max()
            assert diff <= 1e-5


def test_widening_never_shrinks_support():
    rng = np.random.default_rng(6)
    cfg = ModelConfig.desk()
    params = init_params(cfg, rng)
    ex = random_excerpt(rng)
    grid = soft_mask(ex, rng=rng)
    out = forward(grid, params, cfg)
    widened = grid.copy()
    # widen one defined-slot mask by a few extra bits
    slot = ex.defined_slot_indices()[0]
    widened.pitch[slot, :10] = True
    out_w = forward(widened, params, cfg)
    p = np.apply_along_axis(masked_softmax, 1, out.masked_np(Attribute.PITCH))
    p_w = np.apply_along_axis(masked_softmax, 1, out_w.masked_np(Attribute.PITCH))
    support = p[slot] > 1e-6
    support_w = p_w[slot] > 1e-6
    assert (support_w | ~support).all()  # old support is a subset of the new


def test_full_network_gradient_check():
    cfg = ModelConfig(hidden_size=8, num_layers=1, num_heads=2, slot_count=4)
    rng = np.random.default_rng(8)
    params = init_params(cfg, rng)
    # non-zero decoders so their gradients are exercised from a generic point
    for attr in ATTRIBUTES:
        params.tensors[f"dec.{attr.value}.weight"] = Tensor(
            rng.normal(0, 0.05, size=(cfg.hidden_size, attr.size)).astype(np.float32)
        )
    params64 = params.astype(np.float64)

    ex = Excerpt.from_notes([(3, 0, 2), (10, 1, 3), (22, 2, 1)], slot_count=4)
    grid = soft_mask(ex, rng=np.random.default_rng(9))
    mh = {attr: grid.mask(attr).astype(np.float64)[None, ...] for attr in ATTRIBUTES}
    targets = ex.target_indices()
    bits = {attr: grid.mask(attr) for attr in ATTRIBUTES}

    def loss_from(params_obj):
        raw = forward_multihot(mh, params_obj, cfg)
        total = None
        for attr in ATTRIBUTES:
            masked = mask_logits(nm.reshape(raw[attr], raw[attr].shape[1:]), bits[attr])
            nll = nm.mean_all(nm.nll_rows(masked, targets[attr]))
            total = nll if total is None else nm.add(total, nll)
        return nm.scale(total, 1.0 / 3.0)

    sources = params64.values()
    with GradientTape() as tape:
        tape.watch(*sources)
        loss = loss_from(params64)
    analytic = tape.gradients(loss, sources)

    names = params64.names()
    h = 1e-4
    worst = 0.0
    for name, src, grad in zip(names, sources, analytic):
        flat = src.data.reshape(-1)
        # probe a bounded sample of coordinates per tensor
        idx = np.arange(flat.size)
        if flat.size > 40:
            idx = np.random.default_rng(3).choice(flat.size, size=40, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_from(params64).item()
            flat[i] = orig - h
            fm = loss_from(params64).item()
            flat[i] = orig
            fd = (fp - fm) / (2 * h)
            a = grad.reshape(-1)[i]
            err = abs(a - fd) / max(abs(a), abs(fd), 1.0)
            worst = max(worst, err)
    assert worst <= 1e-3, f"worst relative error {worst}"


def test_checkpoint_round_trip(tmp_path):
    cfg = ModelConfig.desk()
    params = init_params(cfg, 3)
    path = tmp_path / "model.smlm"
    save_checkpoint(str(path), params)
    loaded = load_checkpoint(str(path))
    assert loaded.cfg == cfg
    for name in params.names():
        np.testing.assert_array_equal(params[name].numpy(), loaded[name].numpy())
    # identical params write identical bytes
    path2 = tmp_path / "model2.smlm"
    save_checkpoint(str(path2), loaded)
    assert path.read_bytes() == path2.read_bytes()
    assert checkpoint_id(str(path)) == checkpoint_id(str(path2))


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.smlm"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(ValueError):
        load_checkpoint(str(path))


def test_forward_fixture_checksum_stable_within_build():
    # float32 matmul reduction order varies across BLAS builds, so the
    # checksum is compared across fresh evaluations in this process rather
    # than frozen into the repo
    import hashlib

    cfg = ModelConfig.desk()
    params = init_params(cfg, 0)
    ex = Excerpt.from_notes([(5, 0, 4), (9, 4, 2), (14, 8, 8), (21, 16, 4)])
    grid = soft_mask(ex, rng=np.random.default_rng(42))

    def checksum():
        out = forward(grid, params, cfg)
        blob = b"".join(out.raw[attr].numpy().tobytes() for attr in ATTRIBUTES)
        return hashlib.sha256(blob).hexdigest()

    assert checksum() == checksum()
