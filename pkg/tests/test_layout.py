from dataclasses import replace
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdnnet.layout import (
    GenSpec,
    LayoutError,
    generate_synthetic,
    parse_layout,
    read_layout,
    regular_strips,
    serialize_layout,
    validate,
)

FIXTURES = Path(__file__).parent / "fixtures"


def test_minimal_file_parses():
    lay = read_layout(FIXTURES / "minimal.txt")
    assert len(lay.cells) == 1
    assert lay.pdn.vstrip_x_um == (5.0,)
    assert lay.t_sim == 1


def test_cell_outside_die_rejected():
    text = (FIXTURES / "minimal.txt").read_text().replace("cell u0 2 2", "cell u0 12 2")
    with pytest.raises(LayoutError, match="cell outside die") as info:
        parse_layout(text)
    assert "u0" in str(info.value)


def test_three_cell_fixture_round_trips_byte_identical():
    text = (FIXTURES / "three_cells.txt").read_text()
    lay = parse_layout(text)
    assert serialize_layout(lay) == text
    assert parse_layout(serialize_layout(lay)) == lay


def test_unknown_directive_names_line():
    text = "die 10 10\nvdd 0.9\nres 1 1 1\nstrip 5\npad 5 0\nwire 1 2\n"
    with pytest.raises(LayoutError) as info:
        parse_layout(text)
    assert info.value.line == 6
    assert "line 6" in str(info.value)


def test_syntax_error_names_line():
    text = "die 10 ten\n"
    with pytest.raises(LayoutError) as info:
        parse_layout(text)
    assert info.value.line == 1


def test_missing_header_directive():
    with pytest.raises(LayoutError, match="missing 'res'"):
        parse_layout("die 1 1\nvdd 1\nstrip 0.5\npad 0.5 0\n")


def test_validate_clean_layout_is_empty():
    lay = generate_synthetic(GenSpec(16, 16, 40, strip_pitch_um=4, rng_seed=1))
    assert validate(lay) == []


def test_validate_negative_leakage_names_cell():
    lay = read_layout(FIXTURES / "three_cells.txt")
    bad = replace(lay.cells[1], leakage_w=-1e-6)
    problems = validate(replace(lay, cells=(lay.cells[0], bad, lay.cells[2])))
    assert len(problems) == 1
    assert "cell b" in problems[0] and "leakage" in problems[0]


def test_validate_pad_off_strip():
    lay = read_layout(FIXTURES / "three_cells.txt")
    pdn = replace(lay.pdn, pad_xy_um=((3.0, 0.0), (4.0, 8.0)))
    problems = validate(replace(lay, pdn=pdn))
    assert len(problems) == 1
    assert "pad off-strip" in problems[0]


def test_regular_strips_centered():
    assert regular_strips(16, 4) == [2, 6, 10, 14]
    lay = generate_synthetic(GenSpec(16, 16, 5, strip_pitch_um=4))
    assert lay.pdn.vstrip_x_um == (2, 6, 10, 14)


def test_generator_seed_determinism():
    spec = GenSpec(20, 12, 30, strip_pitch_um=5, rng_seed=7)
    assert serialize_layout(generate_synthetic(spec)) == serialize_layout(generate_synthetic(spec))
    other = replace(spec, rng_seed=8)
    assert serialize_layout(generate_synthetic(other)) != serialize_layout(generate_synthetic(spec))


def test_generator_trace_length_and_signs():
    lay = generate_synthetic(GenSpec(16, 16, 100, strip_pitch_um=4, t_sim=8, rng_seed=3))
    assert len(lay.cells) == 100
    for c in lay.cells:
        assert len(c.trace) == 8
        assert min(c.leakage_w, c.internal_w, c.switching_w, *c.trace.frames) >= 0


def test_generator_irregular_strips_honoured():
    lay = generate_synthetic(GenSpec(20, 10, 4, strips_um=[1.5, 4.0, 13.25]))
    assert lay.pdn.vstrip_x_um == (1.5, 4.0, 13.25)
    assert all(any(x == s for s in lay.pdn.vstrip_x_um) for x, _ in lay.pdn.pad_xy_um)


@pytest.mark.parametrize(
    "spec",
    [
        GenSpec(0, 10, 4, strip_pitch_um=2),
        GenSpec(10, 10, 4, strip_pitch_um=12),
        GenSpec(10, 10, 4),
    ],
)
def test_generator_errors(spec):
    with pytest.raises(LayoutError):
        generate_synthetic(spec)


@settings(max_examples=40, deadline=None)
@given(
    w=st.floats(1.0, 60.0),
    h=st.floats(1.0, 60.0),
    n=st.integers(1, 30),
    t=st.integers(1, 5),
    frac=st.floats(0.05, 1.0),
    seed=st.integers(0, 2**31),
)
def test_generated_layouts_valid_and_round_trip(w, h, n, t, frac, seed):
    lay = generate_synthetic(GenSpec(w, h, n, strip_pitch_um=frac * w, t_sim=t, rng_seed=seed))
    assert validate(lay) == []
    text = serialize_layout(lay)
    back = parse_layout(text)
    assert back == lay
    assert serialize_layout(back) == text
