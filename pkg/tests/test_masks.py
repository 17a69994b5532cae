import numpy as np
import pytest

from tryonlab.errors import (
    EmptyRegion,
    FineNotInCoarse,
    IndivisibleShape,
    PoseIncomplete,
    ShapeMismatch,
)
from tryonlab.labels import KEYPOINT_INDEX, PARSE_LABELS
from tryonlab.masks import (
    DilationSpec,
    Mask,
    StructuringElement,
    block_interior_mask,
    build_coarse_mask,
    build_fine_mask,
    default_n_max,
    dilate,
    is_subset,
    mask_intersect,
    mask_union,
    random_dilation_augment,
    resize_to_latent,
    square_element,
)
from tryonlab.data import TryOnSample

from oracles import augment_oracle, dilate_oracle, random_mask_pair


def mk(bits, kind="fine"):
    return Mask(np.asarray(bits, dtype=bool), kind)


# ---------------------------------------------------------------------------
# Mask / StructuringElement types
# ---------------------------------------------------------------------------

def test_mask_rejects_nonbinary():
    with pytest.raises(ValueError):
        Mask(np.array([[0, 2]], dtype=np.uint8), "fine")


def test_mask_accepts_01_ints():
    m = Mask(np.array([[0, 1], [1, 0]], dtype=np.uint8), "coarse")
    assert m.bits.dtype == np.bool_
    assert m.area() == 2


def test_element_needs_origin_and_odd_square():
    with pytest.raises(ValueError):
        StructuringElement(np.zeros((3, 3), dtype=bool))
    with pytest.raises(ValueError):
        StructuringElement(np.ones((2, 2), dtype=bool))
    with pytest.raises(ValueError):
        StructuringElement(np.ones((3, 5), dtype=bool))
    assert square_element(2).radius == 2


def test_default_n_max():
    assert default_n_max((64, 48)) == 4
    assert default_n_max((1024, 768)) == 64


# ---------------------------------------------------------------------------
# dilation vs the brute-force oracle
# ---------------------------------------------------------------------------

def test_dilate_zero_is_identity():
    rng = np.random.default_rng(0)
    m = mk(rng.random((9, 13)) < 0.3)
    out = dilate(m, square_element(), 0)
    assert np.array_equal(out.bits, m.bits)


def test_dilate_center_pixel_once():
    bits = np.zeros((5, 5), dtype=bool)
    bits[2, 2] = True
    out = dilate(mk(bits), square_element(), 1)
    expected = np.zeros((5, 5), dtype=bool)
    expected[1:4, 1:4] = True
    assert np.array_equal(out.bits, expected)


def test_dilate_saturates_whole_grid():
    bits = np.zeros((7, 5), dtype=bool)
    bits[6, 0] = True
    out = dilate(mk(bits), square_element(), 10)  # >= grid diameter
    assert out.bits.all()


@pytest.mark.parametrize("seed", range(8))
def test_dilate_matches_oracle_random(seed):
    rng = np.random.default_rng(seed)
    bits = rng.random((17, 23)) < 0.15
    elem = square_element()
    for n in (1, 2, 3):
        got = dilate(mk(bits), elem, n).bits
        assert np.array_equal(got, dilate_oracle(bits, elem.bits, n))


def test_dilate_matches_oracle_asymmetric_element():
    rng = np.random.default_rng(42)
    bits = rng.random((12, 12)) < 0.2
    elem_bits = np.zeros((3, 3), dtype=bool)
    elem_bits[1, 1] = elem_bits[0, 2] = elem_bits[2, 0] = elem_bits[1, 0] = True
    elem = StructuringElement(elem_bits)
    got = dilate(mk(bits), elem, 2).bits
    assert np.array_equal(got, dilate_oracle(bits, elem.bits, 2))


# ---------------------------------------------------------------------------
# random dilation augmentation
# ---------------------------------------------------------------------------

def test_augment_zero_budget_returns_fine():
    rng = np.random.default_rng(3)
    fine, coarse = random_mask_pair(rng)
    out = random_dilation_augment(mk(fine), mk(coarse, "coarse"),
                                  DilationSpec(n_max=0, rng_seed=5))
    assert np.array_equal(out.bits, fine)
    assert out.kind == "dilated"


def test_augment_saturation_returns_coarse():
    fine = np.zeros((16, 16), dtype=bool)
    fine[8, 8] = True
    coarse = np.ones((16, 16), dtype=bool)
    # force the n = n_max draw by scanning seeds
    n_max = 40
    seed = next(s for s in range(1000)
                if np.random.default_rng(s).integers(0, n_max + 1) == n_max)
    out = random_dilation_augment(mk(fine), mk(coarse, "coarse"),
                                  DilationSpec(n_max=n_max, rng_seed=seed))
    assert np.array_equal(out.bits, coarse)


def test_augment_matches_oracle_fixed_n():
    rng = np.random.default_rng(9)
    fine, coarse = random_mask_pair(rng)
    elem = square_element()
    for seed in range(10):
        n = int(np.random.default_rng(seed).integers(0, 3))  # documented draw
        out = random_dilation_augment(mk(fine), mk(coarse, "coarse"),
                                      DilationSpec(elem, n_max=2, rng_seed=seed))
        assert np.array_equal(out.bits, augment_oracle(fine, coarse, elem.bits, n))


def test_augment_deterministic_in_seed():
    rng = np.random.default_rng(4)
    fine, coarse = random_mask_pair(rng)
    spec = DilationSpec(n_max=4, rng_seed=77)
    a = random_dilation_augment(mk(fine), mk(coarse, "coarse"), spec)
    b = random_dilation_augment(mk(fine), mk(coarse, "coarse"), spec)
    assert np.array_equal(a.bits, b.bits)


def test_augment_rejects_shape_mismatch_and_escape():
    fine = mk(np.ones((4, 4), dtype=bool))
    with pytest.raises(ShapeMismatch):
        random_dilation_augment(fine, mk(np.ones((4, 5), dtype=bool), "coarse"),
                                DilationSpec())
    coarse = np.ones((4, 4), dtype=bool)
    coarse[0, 0] = False
    with pytest.raises(FineNotInCoarse):
        random_dilation_augment(fine, mk(coarse, "coarse"), DilationSpec())


# ---------------------------------------------------------------------------
# algebra
# ---------------------------------------------------------------------------

def test_union_idempotent_and_intersect_complement():
    rng = np.random.default_rng(5)
    bits = rng.random((8, 8)) < 0.5
    a = mk(bits)
    assert np.array_equal(mask_union(a, a).bits, bits)
    comp = mk(~bits)
    assert mask_intersect(a, comp).area() == 0


def test_union_matches_pixel_loop():
    rng = np.random.default_rng(6)
    a = rng.random((6, 7)) < 0.4
    b = rng.random((6, 7)) < 0.4
    got = mask_union(mk(a), mk(b)).bits
    expected = np.zeros_like(a)
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            expected[i, j] = a[i, j] or b[i, j]
    assert np.array_equal(got, expected)


def test_is_subset_and_shape_errors():
    a = mk(np.eye(4, dtype=bool))
    b = mk(np.ones((4, 4), dtype=bool))
    assert is_subset(a, b) and not is_subset(b, a)
    with pytest.raises(ShapeMismatch):
        is_subset(a, mk(np.ones((3, 4), dtype=bool)))
    with pytest.raises(ShapeMismatch):
        mask_union(a, mk(np.ones((5, 5), dtype=bool)))


# ---------------------------------------------------------------------------
# latent resize
# ---------------------------------------------------------------------------

def test_resize_all_ones():
    m = mk(np.ones((16, 8), dtype=bool))
    out = resize_to_latent(m, 4)
    assert out.shape == (4, 2) and out.all()


def test_resize_checkerboard_anchor_rule():
    # top-left anchor at factor 2 samples (2i, 2j); (2i + 2j) % 2 == 0 everywhere
    ii, jj = np.meshgrid(np.arange(8), np.arange(8), indexing="ij")
    checker = ((ii + jj) % 2).astype(bool)
    out = resize_to_latent(mk(checker), 2)
    assert not out.any()
    # shifted checkerboard samples the set phase instead
    out2 = resize_to_latent(mk(~checker), 2)
    assert out2.all()


def test_resize_indivisible():
    with pytest.raises(IndivisibleShape):
        resize_to_latent(mk(np.ones((30, 30), dtype=bool)), 8)


def test_block_interior_mask_conservative():
    bits = np.zeros((8, 8), dtype=bool)
    bits[0:4, 0:4] = True          # one fully covered block
    bits[4, 4] = True              # one partially covered block
    out = block_interior_mask(mk(bits), 4)
    assert out[0, 0] and not out[1, 1] and not out[0, 1] and not out[1, 0]


# ---------------------------------------------------------------------------
# fine / coarse construction
# ---------------------------------------------------------------------------

def _blocky_sample(parse, keypoints=None, category="upper_body"):
    h, w = parse.shape
    rgb = np.zeros((h, w, 3), dtype=np.float32)
    kp = np.zeros((14, 3)) if keypoints is None else keypoints
    return TryOnSample("t", rgb, rgb, rgb, parse, kp, category)


def test_fine_mask_known_set_arithmetic():
    parse = np.zeros((64, 48), dtype=np.uint8)
    parse[10:50, 9:39] = PARSE_LABELS["upper_clothes"]      # 40 x 30 garment block
    parse[10:30, 5:9] = PARSE_LABELS["arms"]                # left arm strip
    parse[10:30, 39:43] = PARSE_LABELS["arms"]              # right arm strip
    parse[30:36, 5:9] = PARSE_LABELS["hands"]
    parse[30:36, 39:43] = PARSE_LABELS["hands"]
    sample = _blocky_sample(parse)
    fine = build_fine_mask(sample)
    expected = (parse == PARSE_LABELS["upper_clothes"]) | (parse == PARSE_LABELS["arms"])
    assert np.array_equal(fine.bits, expected)
    assert fine.kind == "fine"
    assert not (fine.bits & (parse == PARSE_LABELS["hands"])).any()


def test_fine_mask_empty_region():
    parse = np.zeros((8, 8), dtype=np.uint8)
    parse[2:4, 2:4] = PARSE_LABELS["lower_clothes"]
    with pytest.raises(EmptyRegion):
        build_fine_mask(_blocky_sample(parse, category="upper_body"))


def _kp(coords: dict) -> np.ndarray:
    kp = np.zeros((14, 3))
    for name, (x, y) in coords.items():
        kp[KEYPOINT_INDEX[name]] = (x, y, 1.0)
    return kp


def test_coarse_mask_rectangle_corners_by_hand():
    parse = np.zeros((64, 48), dtype=np.uint8)
    parse[20:30, 16:32] = PARSE_LABELS["upper_clothes"]  # garment inside rectangle
    kp = _kp({
        "right_shoulder": (14, 16), "left_shoulder": (33, 16),
        "right_hip": (15, 36), "left_hip": (32, 36),
        "right_elbow": (11, 24), "left_elbow": (36, 24),
        "right_wrist": (11, 30), "left_wrist": (36, 30),
    })
    sample = _blocky_sample(parse, kp)
    coarse = build_coarse_mask(sample, pad=2)
    # documented formula, evaluated by hand:
    #   rows [min(16,16)-2, max(36,36)+2] = [14, 38]
    #   cols [min(x over shoulders/hips/elbows/wrists)-2, max+2] = [9, 38]
    expected = np.zeros((64, 48), dtype=bool)
    expected[14:39, 9:39] = True
    assert np.array_equal(coarse.bits, expected)
    assert coarse.kind == "coarse"


def test_coarse_mask_pose_incomplete():
    parse = np.zeros((64, 48), dtype=np.uint8)
    parse[20:30, 16:32] = PARSE_LABELS["upper_clothes"]
    sample = _blocky_sample(parse, np.zeros((14, 3)))
    with pytest.raises(PoseIncomplete):
        build_coarse_mask(sample)


def test_fine_subset_of_coarse_on_synthetic(test_index):
    from tryonlab.data import load_sample
    for idx in range(len(test_index)):
        sample = load_sample(test_index, idx)
        fine = build_fine_mask(sample)
        coarse = build_coarse_mask(sample)
        assert is_subset(fine, coarse)
        handfoot = np.isin(sample.parsing_map,
                           [PARSE_LABELS["hands"], PARSE_LABELS["feet"]])
        assert not (fine.bits & handfoot).any()
        assert not (coarse.bits & handfoot).any()
