import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from siamtir.cropping import box_center, context_side, crop_square
from siamtir.evaluation import iou
from siamtir.exceptions import TrackerStateError
from siamtir.model import NetworkConfig, init_params
from siamtir.synthetic import easy_suite, generate_sequence, static_config
from siamtir.tracker import (
    BoxOutOfFrameError,
    ScaleConfig,
    SiameseTracker,
    _penalised,
    blend_window,
    init,
    peak_location,
    run_sequence,
    track_frame,
    update_scale,
    upsample_response,
)


@pytest.fixture(scope="module")
def untrained():
    net = NetworkConfig()
    return init_params(net, 0), net


@pytest.fixture(scope="module")
def short_seq():
    return easy_suite(7, 1, 6)[0]


# -- scale handling --------------------------------------------------------------------

def test_scale_update_arithmetic():
    assert update_scale(1.0, 1.0375, 0.59) == pytest.approx(1.022125, abs=1e-15)
    assert update_scale(1.0, 1.0375, 0.59) == pytest.approx(0.41 * 1.0 + 0.59 * 1.0375, abs=1e-15)


@given(s=st.floats(0.05, 20), n=st.integers(1, 50))
def test_unit_factor_never_changes_scale(s, n):
    v = s
    for _ in range(n):
        v = update_scale(v, 1.0, 0.59)
    assert v == s


def test_penalty_lowers_scores_of_either_sign():
    assert _penalised(2.0, 1.0375, 0.975) == pytest.approx(1.95)
    assert _penalised(-2.0, 0.9745, 0.975) < -2.0
    assert _penalised(-2.0, 1.0, 0.975) == -2.0


def test_scale_config_invariants():
    with pytest.raises(ValueError):
        ScaleConfig(factors=(1.0375, 1.0, 0.9745))
    with pytest.raises(ValueError):
        ScaleConfig(factors=(0.9, 1.1))
    with pytest.raises(ValueError):
        ScaleConfig(damping=1.5)
    with pytest.raises(ValueError):
        ScaleConfig(window_influence=1.0)


# -- response post-processing --------------------------------------------------------

def test_uniform_response_tie_break():
    blended = blend_window(np.full((17, 17), 0.3), 0.0)
    assert peak_location(blended) == (0, 0)
    r = np.zeros((5, 5))
    r[1, 3] = r[3, 1] = 1.0
    assert peak_location(r) == (1, 3)


def test_window_is_unit_sum_and_centred():
    blended = blend_window(np.zeros((17, 17)), 0.25)
    assert blended.sum() == pytest.approx(0.25)
    assert peak_location(blended) == (8, 8)
    r = np.random.default_rng(0).random((9, 9))
    assert blend_window(r, 0.4).sum() == pytest.approx(1.0)


def test_upsample_shape_and_nodes(rng):
    r = rng.standard_normal((17, 17))
    up = upsample_response(r, 16)
    assert up.shape == (257, 257)
    np.testing.assert_allclose(up[::16, ::16], r, atol=1e-10)


def test_upsampled_peak_of_centred_bump_is_centre():
    y, x = np.mgrid[0:17, 0:17]
    bump = np.exp(-((y - 8) ** 2 + (x - 8) ** 2) / 6.0)
    assert peak_location(upsample_response(bump, 16)) == (128, 128)


# -- cropping ------------------------------------------------------------------------

def test_context_side():
    assert context_side(20, 20) == pytest.approx(40.0)
    assert context_side(10, 40, margin=0.0) == pytest.approx(20.0)


def test_identity_crop():
    frame = np.arange(100, dtype=np.uint8).reshape(10, 10)
    crop = crop_square(frame, (5.0, 5.0), 10.0, 10)
    np.testing.assert_allclose(crop, frame / 255.0, atol=1e-6)
    assert box_center([2, 4, 6, 8]) == (5.0, 8.0)


def test_crop_outside_takes_fill():
    frame = np.full((10, 10), 200, dtype=np.uint8)
    crop = crop_square(frame, (0.0, 0.0), 10.0, 10, fill=51.0)
    assert crop[0, 0] == pytest.approx(0.2) and crop[-1, -1] == pytest.approx(200 / 255)


# -- tracking loop -----------------------------------------------------------------

def test_degenerate_boxes_rejected(untrained, short_seq):
    params, net = untrained
    frame = short_seq.frames[0]
    with pytest.raises(BoxOutOfFrameError):
        init(frame, [10, 10, 0, 0], params, net)
    with pytest.raises(BoxOutOfFrameError):
        init(frame, [10, 10, 3, 3], params, net)
    with pytest.raises(BoxOutOfFrameError):
        init(frame, [310, 10, 20, 20], params, net)


def test_uninitialised_state(untrained, short_seq):
    params, net = untrained
    with pytest.raises(TrackerStateError):
        track_frame(None, short_seq.frames[0], params, net)
    with pytest.raises(TrackerStateError):
        SiameseTracker(params, net).update(short_seq.frames[0])


def test_frame_shape_must_match(untrained, short_seq):
    params, net = untrained
    state = init(short_seq.frames[0], short_seq.boxes[0], params, net)
    with pytest.raises(ValueError):
        track_frame(state, short_seq.frames[0][:100], params, net)


def test_templates_are_fixed(untrained, short_seq):
    params, net = untrained
    state = init(short_seq.frames[0], short_seq.boxes[0], params, net)
    again = init(short_seq.frames[0], short_seq.boxes[0], params, net)
    before = [t.data.tobytes() for t in state.templates]
    assert before == [t.data.tobytes() for t in again.templates]
    for frame in short_seq.frames[1:]:
        _, diag = track_frame(state, frame, params, net)
        assert diag["response"].shape == (17, 17) and len(diag["peaks"]) == 3
    assert [t.data.tobytes() for t in state.templates] == before
    assert state.frames_tracked == len(short_seq) - 1


def test_center_stays_in_frame(untrained, short_seq):
    params, net = untrained
    state = init(short_seq.frames[0], short_seq.boxes[0], params, net)
    for frame in short_seq.frames[1:]:
        track_frame(state, frame, params, net)
        assert 0 <= state.center[0] <= 320 and 0 <= state.center[1] <= 240 and state.scale > 0


def test_length_one_sequence(untrained):
    params, net = untrained
    seq = easy_suite(3, 1, 2)[0]
    seq.frames, seq.boxes = seq.frames[:1], seq.boxes[:1]
    out = run_sequence(params, seq, net)
    np.testing.assert_array_equal(out, seq.boxes)


def test_run_is_deterministic(untrained, short_seq):
    params, net = untrained
    a = run_sequence(params, short_seq, net)
    b = run_sequence(params, short_seq, net)
    assert a.tobytes() == b.tobytes()
    np.testing.assert_array_equal(a[0], short_seq.boxes[0])


# -- with a trained model ------------------------------------------------------------

@pytest.mark.slow
def test_self_match(zoo):
    params, net, _, _ = zoo.get("full", 0)
    for seq in easy_suite(500, 5, 2):
        state = init(seq.frames[0], seq.boxes[0], params, net)
        box, _ = track_frame(state, seq.frames[0], params, net)
        assert iou(box, seq.boxes[0]) >= 0.6


@pytest.mark.slow
def test_static_scene(zoo):
    """A motionless target keeps the map peak on the centre cell at unit scale."""
    params, net, _, _ = zoo.get("full", 0)
    still = total = 0
    for seed in range(5):
        seq = generate_sequence(static_config(n_frames=40), seed=seed)
        state = init(seq.frames[0], seq.boxes[0], params, net)
        for frame in seq.frames[1:]:
            _, diag = track_frame(state, frame, params, net)
            centred = peak_location(diag["response"]) == (8, 8)
            still += centred and diag["factor"] == 1.0
            total += 1
    assert still / total >= 0.95


@pytest.mark.slow
def test_easy_sequence_mean_iou(zoo):
    params, net, _, _ = zoo.get("full", 0)
    seq = easy_suite(501, 1, 60)[0]
    boxes = run_sequence(params, seq, net)
    assert np.mean([iou(b, g) for b, g in zip(boxes[1:], seq.boxes[1:])]) >= 0.5
