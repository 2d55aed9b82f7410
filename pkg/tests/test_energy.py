import numpy as np
import pytest
from hypothesis import given, strategies as st

from helpers import DYADIC, block_object, random_labeling, random_model, reference_energy

from objstitch.core import OCCLUDED, Raster
from objstitch.energy import (
    EnergyModel,
    EnergyParams,
    bbox_bilinear_map,
    classical_model,
    crop_cost,
    data_cost,
    dense_crop_cost,
    duplication_cost,
    duplication_links,
    grid_edges,
    occlusion_cost,
    patch_offsets,
    smoothness_cost,
    total_energy,
)


@given(st.integers(0, 2 ** 32 - 1))
def test_energy_evaluators_agree_with_reference(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng, int(rng.integers(1, 5)), int(rng.integers(2, 5)), k=int(rng.integers(1, 4)),
                         n_objects=int(rng.integers(0, 4)), channels=int(rng.choice([1, 3])))
    lab = random_labeling(rng, model)
    ref = reference_energy(lab, model)
    assert total_energy(lab, model).total == ref
    assert model.mrf.energy(lab) == ref


@given(st.integers(0, 2 ** 32 - 1))
def test_dense_crop_mode_agrees_with_reference(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng, 3, 3, k=2, n_objects=2, crop_mode="dense")
    lab = random_labeling(rng, model)
    direct = total_energy(lab, model)
    assert model.mrf.energy(lab) == direct.total
    o = model.objects[0]
    vals = lab[o.mask]
    lab_o = o.source_id + 1
    pairs = sum(1 for a in vals for b in vals if a == lab_o and b != lab_o)
    assert dense_crop_cost(lab, o, lab_o, model) == pairs


def test_params_defaults_and_validation():
    p = EnergyParams()
    assert (p.lambda_d, p.lambda_s, p.lambda_c, p.lambda_r, p.delta, p.radius) == (50.0, 1.0, 4.0, 4.0, 0.5, 1)
    assert p.occlusion_weight == 50.0 and p.resolved().lambda_o == 50.0
    for bad in ({"lambda_d": -1.0}, {"delta": 0.0}, {"radius": 1.5}, {"lambda_o": float("nan")}):
        with pytest.raises(ValueError):
            EnergyParams(**bad)


def test_grid_edge_order_and_patch_offsets():
    pi, pj = grid_edges(2, 3)
    assert list(zip(pi, pj)) == [(0, 1), (1, 2), (3, 4), (4, 5), (0, 3), (1, 4), (2, 5)]
    assert len(patch_offsets(1, True)) == 8
    assert len(patch_offsets(0, False)) == 2


def _two_image_model(params=DYADIC, objects=(), pairs=(), m0=None, m1=None):
    shape = (2, 3)
    a = np.array([[1, 2, 3], [4, 5, 6]], float)
    b = a + np.array([[0, 0, 4], [0, 2, 0]], float)
    m0 = np.ones(shape, bool) if m0 is None else m0
    m1 = np.ones(shape, bool) if m1 is None else m1
    return EnergyModel([Raster(a, m0), Raster(b, m1)], objects, pairs, params)


def test_data_and_smoothness_hand_values():
    m1 = np.array([[0, 1, 1], [1, 1, 1]], bool)
    model = _two_image_model(m1=m1)
    assert data_cost((0, 0), 2, model) == 1.0
    assert data_cost((1, 0), 2, model) == 0.0
    assert data_cost((0, 0), OCCLUDED, model) == 1.5
    # edge (0,0)-(1,0), radius 1: union of the two diamonds covers every
    # pixel except (2,1); (0,0) is masked in image 2, so only (2,0)=4 and
    # (1,1)=2 contribute
    assert smoothness_cost((0, 0), (1, 0), 1, 2, model) == 6.0
    assert smoothness_cost((0, 0), (1, 0), 2, 2, model) == 0.0
    assert model.i_max == 6.0
    assert smoothness_cost((0, 0), (1, 0), OCCLUDED, 1, model) == 6.0
    with pytest.raises(ValueError):
        smoothness_cost((0, 0), (2, 0), 1, 2, model)


def test_crop_cost_counts_ordered_boundary_pairs():
    shape = (2, 3)
    o = block_object(0, 0, 0, 2, 2, shape)
    model = _two_image_model(objects=[o])
    lab = np.array([[1, 2, 1], [1, 1, 2]])
    # violations from object pixels labelled 1: (0,0)->(1,0), (1,1)->(1,0), (1,1)->(2,1)
    assert crop_cost(lab, o, 1, model) == 3.0
    assert total_energy(lab, model).crop == DYADIC.lambda_c * 3.0


def test_bbox_map_and_duplication_links():
    assert np.allclose(bbox_bilinear_map([2.0, 3.0], (2, 3, 2, 2), (10, 10, 4, 4)), [10.0, 10.0])
    assert np.allclose(bbox_bilinear_map([[3.0, 4.0]], (2, 3, 2, 2), (10, 10, 4, 4)), [[12.0, 12.0]])
    shape = (4, 8)
    o1 = block_object(0, 0, 0, 2, 2, shape)
    o2 = block_object(1, 5, 1, 2, 2, shape)
    a, b = duplication_links(o1, o2, shape)
    assert list(zip(a.tolist(), b.tolist())) == [(0, 13), (1, 14), (8, 21), (9, 22)]
    # a pixel mapped onto itself is not linked
    same = block_object(1, 0, 0, 2, 2, shape)
    assert len(duplication_links(o1, same, shape)[0]) == 0


def test_duplication_and_occlusion_terms():
    shape = (2, 3)
    o1 = block_object(0, 0, 0, 1, 1, shape)
    o2 = block_object(1, 2, 0, 1, 1, shape)
    m0 = np.array([[0, 1, 1], [1, 1, 1]], bool)
    model = _two_image_model(objects=[o1, o2], pairs=[(o1, o2)], m0=m0)
    lab = np.array([[1, 1, 2], [1, 1, 1]])
    t = total_energy(lab, model)
    assert t.duplication == DYADIC.lambda_r * 1
    # o1 is shown from image 1 where it is masked out: 2 * delta per pixel
    assert t.occlusion == DYADIC.occlusion_weight * 2 * DYADIC.delta
    assert t.total == reference_energy(lab, model)


def test_object_validation():
    shape = (2, 3)
    o = block_object(0, 0, 0, 1, 1, (3, 3))
    with pytest.raises(ValueError):
        _two_image_model(objects=[o])
    a = block_object(0, 0, 0, 1, 1, shape)
    b = block_object(0, 1, 0, 1, 1, shape)
    with pytest.raises(ValueError):
        _two_image_model(objects=[a, b], pairs=[(a, b)])


def test_initial_labeling_and_classical_model():
    m0 = np.array([[0, 1, 1], [0, 0, 1]], bool)
    m1 = np.array([[1, 0, 1], [0, 1, 1]], bool)
    o = block_object(0, 1, 0, 1, 1, (2, 3))
    model = _two_image_model(objects=[o], m0=m0, m1=m1)
    assert model.initial_labeling().tolist() == [[2, 1, 1], [0, 2, 1]]
    c = classical_model(model)
    assert c.objects == [] and c.pairs == []
    lab = np.array([[1, 1, 2], [1, 2, 1]])
    t = total_energy(lab, c)
    assert t.crop == t.duplication == t.occlusion == 0.0
    assert t.data + t.smoothness == total_energy(lab, model).data + total_energy(lab, model).smoothness


def test_smoothness_radius_zero_example():
    a = np.array([[10.0, 20.0]])
    b = np.array([[14.0, 21.0]])
    full = np.ones((1, 2), bool)
    model = EnergyModel([Raster(a, full), Raster(b, full)], [], [], EnergyParams(radius=0))
    assert smoothness_cost((0, 0), (1, 0), 1, 2, model) == 5.0
    assert smoothness_cost((0, 0), (1, 0), 2, 2, model) == 0.0


def _brute_crop(lab, o, label):
    h, w = lab.shape
    n = 0
    for y, x in np.argwhere(o.mask):
        if lab[y, x] != label:
            continue
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            qx, qy = x + dx, y + dy
            if 0 <= qx < w and 0 <= qy < h and lab[qy, qx] != label:
                n += 1
    return n


def _five_by_five(objects=(), pairs=()):
    full = np.ones((5, 5), bool)
    ims = [Raster(np.zeros((5, 5)), full), Raster(np.ones((5, 5)), full)]
    return EnergyModel(ims, list(objects), list(pairs), DYADIC)


def test_crop_cost_examples():
    o = block_object(0, 1, 1, 3, 3, (5, 5))
    model = _five_by_five([o])
    assert crop_cost(np.ones((5, 5), dtype=np.int64), o, 1, model) == 0.0
    assert crop_cost(np.full((5, 5), 2), o, 1, model) == 0.0
    lab = np.full((5, 5), 2)
    lab[1:4, 1] = 1
    assert crop_cost(lab, o, 1, model) == _brute_crop(lab, o, 1) == 8


def test_bbox_map_corner_centre_and_affine_cases():
    b1, b2 = (0, 0, 10, 10), (100, 50, 20, 40)
    assert np.allclose(bbox_bilinear_map([0.0, 0.0], b1, b2), [100.0, 50.0])
    assert np.allclose(bbox_bilinear_map([5.0, 5.0], b1, b2), [110.0, 70.0])
    assert np.allclose(bbox_bilinear_map([2.0, 5.0], b1, b2), [104.0, 70.0])


def _dup_scene():
    shape = (8, 16)
    o1 = block_object(0, 1, 1, 6, 6, shape)
    o2 = block_object(1, 9, 1, 6, 6, shape)
    full = np.ones(shape, bool)
    model = EnergyModel([Raster(np.zeros(shape), full), Raster(np.zeros(shape), full)], [o1, o2], [(o1, o2)], DYADIC)
    return model, o1, o2


def _brute_dup(lab, o1, o2):
    n = 0
    for y, x in np.argwhere(o1.mask):
        qx = int(np.floor(9 + (x - 1) / 6 * 6 + 0.5))
        qy = int(np.floor(1 + (y - 1) / 6 * 6 + 0.5))
        n += lab[y, x] == 1 and lab[qy, qx] == 2
    return n


def test_duplication_cost_examples():
    model, o1, o2 = _dup_scene()
    lab = np.zeros((8, 16), dtype=np.int64)
    lab[o1.mask] = 1
    lab[o2.mask] = 1
    assert duplication_cost(lab, (o1, o2), model) == 0.0
    lab[o2.mask] = 2
    assert duplication_cost(lab, (o1, o2), model) == 36.0
    lab[:] = OCCLUDED
    lab[1:7, 1:4] = 1
    lab[1:7, 9:12] = 2
    assert duplication_cost(lab, (o1, o2), model) == _brute_dup(lab, o1, o2) == 18


def test_occlusion_cost_examples():
    shape = (3, 4)
    o1 = block_object(0, 0, 0, 4, 2, shape)
    o2 = block_object(1, 0, 2, 1, 1, shape)
    m0 = np.ones(shape, bool)
    model = EnergyModel([Raster(np.zeros(shape), m0), Raster(np.zeros(shape), np.ones(shape, bool))],
                        [o1, o2], [(o1, o2)], DYADIC)
    lab = np.ones(shape, dtype=np.int64)
    assert occlusion_cost(lab, (o1, o2), model) == 0.0
    m0 = m0.copy()
    m0[0, :] = False
    m0[1, 0] = False
    model = EnergyModel([Raster(np.zeros(shape), m0), Raster(np.zeros(shape), np.ones(shape, bool))],
                        [o1, o2], [(o1, o2)], DYADIC)
    assert occlusion_cost(lab, (o1, o2), model) == 2 * 0.5 * 5


def test_uniform_labeling_without_objects_costs_nothing():
    rng = np.random.default_rng(3)
    full = np.ones((3, 3), bool)
    model = EnergyModel([Raster(rng.uniform(0, 255, (3, 3)), full), Raster(rng.uniform(0, 255, (3, 3)), full)],
                        [], [], DYADIC)
    assert total_energy(np.ones((3, 3), dtype=np.int64), model).total == 0.0


@given(st.integers(0, 2 ** 32 - 1))
def test_total_is_the_sum_of_the_terms(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng, 3, 3)
    t = total_energy(random_labeling(rng, model), model)
    assert t.total == t.data + t.smoothness + t.crop + t.duplication + t.occlusion
    assert t.as_dict()["total"] == t.total
