import numpy as np
import pytest

from chromatrack.errors import ValidationError
from chromatrack.synth import (
    ObjectSpec,
    SceneSpec,
    SyntheticDataset,
    generate,
    random_scene,
    render,
)


def _bbox(mask):
    ys, xs = np.nonzero(mask)
    return xs.min(), ys.min(), xs.max(), ys.max()


def test_static_square_identical_frames():
    spec = SceneSpec(size=32, num_frames=5, background=((10, 20, 30),),
                     objects=[ObjectSpec("rect", (200, 50, 50), (8, 8), (16, 16))])
    clip = generate(spec)
    for t in range(1, 5):
        np.testing.assert_array_equal(clip.frames[t], clip.frames[0])
        np.testing.assert_array_equal(clip.masks[t], clip.masks[0])
    # pixel centers 12.5..19.5 fall inside [12, 20)
    assert _bbox(clip.masks[0] == 1) == (12, 12, 19, 19)


def test_moving_square_shifts_two_pixels_per_frame():
    spec = SceneSpec(size=64, num_frames=6, background=((0, 0, 0),),
                     objects=[ObjectSpec("rect", (255, 255, 255), (10, 10), (15, 30), (2.0, 0.0))])
    masks = generate(spec).masks
    x0 = _bbox(masks[0] == 1)
    for t in range(1, 6):
        assert _bbox(masks[t] == 1) == (x0[0] + 2 * t, x0[1], x0[2] + 2 * t, x0[3])


def test_nearer_object_wins_overlap():
    far = ObjectSpec("rect", (255, 0, 0), (20, 20), (20, 20), depth=5)
    near = ObjectSpec("rect", (0, 0, 255), (20, 20), (28, 28), depth=1)
    spec = SceneSpec(size=48, num_frames=1, background=((0, 0, 0),), objects=[far, near])
    clip = generate(spec)
    # (25, 25) is inside both
    assert clip.masks[0, 25, 25] == 2
    np.testing.assert_array_equal(clip.frames[0, 25, 25], (0, 0, 255))
    assert clip.masks[0, 12, 12] == 1


def test_occluder_zeroes_mask():
    ob = ObjectSpec("rect", (255, 0, 0), (20, 20), (24, 24))
    occ = ObjectSpec("rect", (0, 255, 0), (4, 48), (24, 24), depth=-1)
    clip = generate(SceneSpec(size=48, num_frames=1, background=((0, 0, 0),), objects=[ob], occluder=occ))
    assert clip.masks[0, 24, 24] == 0
    np.testing.assert_array_equal(clip.frames[0, 24, 24], (0, 255, 0))


def test_object_pixels_share_one_color():
    clip = SyntheticDataset(5, "plain", seed=3)[2]
    for t in range(clip.num_frames):
        for k in np.unique(clip.masks[t]):
            if k == 0:
                continue
            colors = clip.frames[t][clip.masks[t] == k]
            assert len(np.unique(colors, axis=0)) == 1


def test_same_seed_same_clip():
    a, b = SyntheticDataset(3, "hard", seed=7)[1], SyntheticDataset(3, "hard", seed=7)[1]
    np.testing.assert_array_equal(a.frames, b.frames)
    np.testing.assert_array_equal(a.masks, b.masks)
    c = SyntheticDataset(3, "hard", seed=8)[1]
    assert not np.array_equal(a.frames, c.frames)


def test_lazy_frames_match_full_render():
    ds = SyntheticDataset(2, "plain", seed=1)
    np.testing.assert_array_equal(ds.frames(1, [3, 4]), ds[1].frames[[3, 4]])


def test_keypoints_lie_on_their_object_when_visible():
    ds = SyntheticDataset(10, "plain", seed=2)
    for clip in ds:
        for t in range(clip.num_frames):
            for p in np.flatnonzero(clip.visible[t]):
                x, y = clip.keypoints[t, p]
                assert clip.masks[t, int(y), int(x)] == clip.keypoint_owner[p]


def test_hard_preset_has_same_color_crossing_pairs():
    ds = SyntheticDataset(10, "hard", seed=0)
    pairs = [i for i in range(10) if ds.spec(i).tags.get("crossing")]
    assert len(pairs) >= 3
    for i in pairs:
        a, b = ds.spec(i).objects[:2]
        assert a.rgb == b.rgb
        ca0, cb0 = a.center(0)[0], b.center(0)[0]
        caT, cbT = a.center(19)[0], b.center(19)[0]
        assert np.sign(ca0 - cb0) != np.sign(caT - cbT)


def test_hard_preset_sizes():
    spec = random_scene("hard", 0, 1)
    assert 3 <= len(spec.objects) <= 5


def test_static_preset_is_grid_aligned():
    for i in range(5):
        clip = SyntheticDataset(5, "static", seed=4)[i]
        for k in np.unique(clip.masks[0])[1:]:
            x0, y0, x1, y1 = _bbox(clip.masks[0] == k)
            assert x0 % 8 == 0 and y0 % 8 == 0 and (x1 + 1) % 8 == 0 and (y1 + 1) % 8 == 0


def test_spec_round_trip():
    spec = random_scene("hard", 5, 0)
    again = SceneSpec.from_dict(spec.to_dict())
    np.testing.assert_array_equal(render(again)[0], render(spec)[0])


def test_rejects_bad_preset_and_size():
    with pytest.raises(ValidationError):
        SyntheticDataset(3, "nope")
    with pytest.raises(ValidationError):
        SceneSpec(size=0, num_frames=3).validate()
