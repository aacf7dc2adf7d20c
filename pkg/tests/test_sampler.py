import math

import numpy as np
import pytest

from smlm.net import ModelConfig, init_params
from smlm.numerics import ContractViolation
from smlm.sampler import (
    GenerationTrace,
    SamplerConfig,
    generate,
    generated_slot_indices,
    nucleus,
    replay,
    top_p_sample,
)
from smlm.score_rep import (
    Attribute,
    ConstraintSpec,
    Excerpt,
    PitchClassSet,
    PriorGrid,
    compile_constraints,
)

DESK = ModelConfig.desk()


@pytest.fixture(scope="module")
def desk_params():
    return init_params(DESK, 0)


def test_nucleus_arithmetic():
    keep, p = nucleus(np.array([0.5, 0.3, 0.2]), 0.7)
    assert list(keep) == [0, 1]
    np.testing.assert_allclose(p, [0.625, 0.375])


def test_nucleus_tiny_top_p_is_argmax():
    keep, p = nucleus(np.array([0.2, 0.5, 0.3]), 1e-9)
    assert list(keep) == [1]
    np.testing.assert_allclose(p, [1.0])


def test_nucleus_top_p_one_keeps_everything_positive():
    keep, p = nucleus(np.array([0.5, 0.3, 0.2, 0.0]), 1.0)
    assert sorted(keep) == [0, 1, 2]
    np.testing.assert_allclose(sorted(p, reverse=True), [0.5, 0.3, 0.2])


def test_nucleus_stable_tie_break():
    keep, _ = nucleus(np.array([0.25, 0.25, 0.25, 0.25]), 0.5)
    assert list(keep) == [0, 1]


def test_top_p_sample_never_selects_disallowed():
    rng = np.random.default_rng(0)
    logits = np.array([1.0, -1e9, 0.5, -1e9, 0.0], dtype=np.float32)
    for _ in range(200):
        idx = top_p_sample(logits, 1.0, 1.0, rng)
        assert idx in (0, 2, 4)


def test_top_p_sample_requires_an_allowed_value():
    rng = np.random.default_rng(0)
    with pytest.raises(ContractViolation):
        top_p_sample(np.full(5, -1e9), 1.0, 0.9, rng)


def test_top_p_sample_respects_temperature_argmax_limit():
    rng = np.random.default_rng(1)
    logits = np.array([2.0, 1.0, 0.0])
    picks = {top_p_sample(logits, 0.01, 0.9, rng) for _ in range(50)}
    assert picks == {0}


def test_generate_fully_determined_grid_needs_no_model():
    ex = Excerpt.from_notes([(5, 0, 4), (9, 8, 2)])
    grid = PriorGrid.from_excerpt(ex)
    # params=None proves the model is never consulted
    out, trace = generate(grid, None, DESK, SamplerConfig(seed=0))
    assert out == ex
    assert len(trace) == 0


def test_generate_respects_onset_grid(desk_params):
    spec = ConstraintSpec(onset_grid=(4, 0), note_count=(1, 12))
    grid = compile_constraints(spec)
    ex, _ = generate(grid, desk_params, DESK, SamplerConfig(seed=3))
    notes = ex.notes()
    assert notes, "at least one note required by noteCount min"
    for _, onset, _ in notes:
        assert onset % 4 == 0


def test_generate_is_deterministic(desk_params):
    spec = ConstraintSpec(
        pitch_classes=PitchClassSet(classes=frozenset({0, 2, 4, 5, 7, 9, 11})),
        note_count=(0, 10),
    )
    grid = compile_constraints(spec)
    a, ta = generate(grid, desk_params, DESK, SamplerConfig(seed=42))
    b, tb = generate(grid, desk_params, DESK, SamplerConfig(seed=42))
    assert a == b
    assert ta.to_dicts() == tb.to_dicts()
    c, _ = generate(grid, desk_params, DESK, SamplerConfig(seed=43))
    assert isinstance(c, Excerpt)


def test_generate_stays_inside_compiled_masks(desk_params):
    spec = ConstraintSpec(
        pitch_classes=PitchClassSet(classes=frozenset({0, 3, 7})),
        onset_grid=(8, 2),
        duration_range=(2, 6),
        note_count=(2, 20),
    )
    grid = compile_constraints(spec)
    ex, trace = generate(grid, desk_params, DESK, SamplerConfig(seed=7))
    idx = ex.target_indices()
    rows = np.arange(64)
    for attr in (Attribute.PITCH, Attribute.ONSET, Attribute.DURATION):
        assert grid.mask(attr)[rows, idx[attr]].all()
    lo, hi = spec.note_count
    assert lo <= len(ex.notes()) <= hi
    # each (slot, attribute) decided at most once
    seen = {(d.slot, d.attribute) for d in trace.decisions}
    assert len(seen) == len(trace.decisions)


def test_generate_excerpts_are_structurally_valid(desk_params):
    # durations near the top force the onset/duration interaction
    spec = ConstraintSpec(duration_range=(30, 63), note_count=(4, 16))
    grid = compile_constraints(spec)
    ex, _ = generate(grid, desk_params, DESK, SamplerConfig(seed=11))
    for _, onset, duration in ex.notes():
        assert onset + duration <= 64


def test_trace_replay_reproduces_excerpt(desk_params):
    spec = ConstraintSpec(note_count=(0, 12))
    grid = compile_constraints(spec)
    ex, trace = generate(grid, desk_params, DESK, SamplerConfig(seed=5))
    assert replay(grid, trace) == ex


def test_generated_slot_indices_are_the_sampled_slots(desk_params):
    spec = ConstraintSpec(locked_notes=((4, 0, 2), (9, 4, 2)), note_count=(2, 6))
    grid = compile_constraints(spec)
    gen_slots = generated_slot_indices(grid)
    assert 0 not in gen_slots and 1 not in gen_slots
    ex, trace = generate(grid, desk_params, DESK, SamplerConfig(seed=9))
    assert {d.slot for d in trace.decisions} <= set(gen_slots)
    assert (4, 0, 2) in ex.notes() and (9, 4, 2) in ex.notes()


def test_sampler_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(temperature=0)
    with pytest.raises(ValueError):
        SamplerConfig(top_p=0)
    with pytest.raises(ValueError):
        SamplerConfig(top_p=1.5)
