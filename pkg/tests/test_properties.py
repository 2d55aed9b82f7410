"""Invariants checked over random instances."""

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from helpers import DYADIC, block_object, random_labeling, random_model

from objstitch.blending import composite, render_occlusion
from objstitch.core import OCCLUDED, PointMatchSet, Raster, overlap_mask
from objstitch.correspondence import DensityConfig, build_equivalence, correspondence_density, match_objects
from objstitch.energy import EnergyModel, EnergyParams, smoothness_cost, total_energy
from objstitch.evaluation import count_report, ms_ssim, normxcorr
from objstitch.registration import (
    Homography,
    RansacConfig,
    cpw_objective,
    cpw_refine,
    estimate_homography,
    similarity_deviation,
    warp_image,
)
from objstitch.solver import alpha_expansion

seeds = st.integers(0, 2 ** 32 - 1)
masks = arrays(bool, (4, 5))


@given(masks, masks)
def test_mask_intersection_commutes_and_is_idempotent(a, b):
    ra, rb = Raster(np.zeros((4, 5)), a), Raster(np.zeros((4, 5)), b)
    assert np.array_equal(overlap_mask(ra, rb), overlap_mask(rb, ra))
    assert np.array_equal(overlap_mask(ra, ra), a)


# ---------------------------------------------------------------------------
# Registration
# ---------------------------------------------------------------------------

def _planted(rng, n_in=60, n_out=30):
    h = Homography([[1.02, 0.03, 15.0], [-0.02, 0.98, 6.0], [1e-4, -5e-5, 1.0]])
    q = rng.uniform(0, 200, (n_in, 2))
    qo = rng.uniform(0, 200, (n_out, 2))
    po = h(qo) + rng.uniform(40, 80, (n_out, 2)) * rng.choice([-1, 1], (n_out, 2))
    return PointMatchSet(np.vstack([h(q), po]), np.vstack([q, qo]))


@given(seeds)
def test_estimate_is_invariant_to_match_order(seed):
    rng = np.random.default_rng(seed)
    ms = _planted(rng)
    perm = rng.permutation(len(ms))
    shuffled = PointMatchSet(ms.p[perm], ms.q[perm])
    cfg = RansacConfig(iterations=300)
    a = estimate_homography(ms, cfg, canvas=(200, 200), seed=1)[0]
    b = estimate_homography(shuffled, cfg, canvas=(200, 200), seed=2)[0]
    assert a.inliers == b.inliers == 60
    assert np.allclose(a.matrix / a.matrix[2, 2], b.matrix / b.matrix[2, 2], atol=1e-9)


@given(seeds)
def test_returned_candidates_respect_the_deviation_bound(seed):
    rng = np.random.default_rng(seed)
    p = rng.uniform(0, 100, (40, 2))
    q = rng.uniform(0, 100, (40, 2))
    q[:20] = p[:20] + rng.normal(0, 2, (20, 2))
    cfg = RansacConfig(iterations=100, min_inliers=4, max_similarity_deviation=0.05)
    try:
        cands = estimate_homography(PointMatchSet(p, q), cfg, canvas=(100, 100), seed=seed % 1000)
    except Exception:
        return
    assert all(similarity_deviation(h, (100, 100)) <= 0.05 for h in cands)


@given(seeds, st.floats(0.0, 10.0), st.floats(0.0, 10.0))
def test_cpw_objective_nests_in_lambda(seed, l1, l2):
    lo, hi = sorted((l1, l2))
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 60, (200, 2))
    flow = rng.normal(0, 1, (200, 2))
    h = Homography.identity()
    m_lo = cpw_refine(h, pts, flow, (60, 60), grid=(3, 3), lam=lo)
    m_hi = cpw_refine(h, pts, flow, (60, 60), grid=(3, 3), lam=hi)
    f_lo = cpw_objective(m_lo, pts, flow, lam=lo)
    f_hi = cpw_objective(m_hi, pts, flow, lam=hi)
    assert f_lo <= f_hi * (1 + 1e-9) + 1e-12


@given(seeds)
def test_warp_round_trip_on_smooth_images(seed):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:40, 0:50]
    img = 120 + 60 * np.sin(xx / 7.0 + rng.uniform(0, 6)) * np.cos(yy / 9.0 + rng.uniform(0, 6))
    t = Homography.similarity(rng.uniform(0.9, 1.1), rng.uniform(-0.2, 0.2), rng.uniform(-5, 5), rng.uniform(-5, 5))
    src = Raster(img, np.ones((40, 50), bool))
    back = warp_image(warp_image(src, t, (50, 40)), t.inverse(), (50, 40))
    ok = back.mask
    assert ok.sum() > 500
    assert np.abs(back.data[ok] - src.data[ok]).mean() < 2.0


# ---------------------------------------------------------------------------
# Correspondence
# ---------------------------------------------------------------------------

SHAPE = (40, 80)


def _scene(rng, n_images=3, per_image=2):
    objs = [[block_object(i, 10 * j + 25 * i, 5 + 15 * (j % 2), 10, 10, SHAPE, j) for j in range(per_image)]
            for i in range(n_images)]
    counts = iter(rng.permutation(np.arange(3, 60))[:64].tolist())
    matches = {}
    for a in range(n_images):
        for b in range(a + 1, n_images):
            ps, qs = [], []
            for oa in objs[a]:
                for ob in objs[b]:
                    if rng.random() < 0.6:
                        n = next(counts)
                        ps.append(np.argwhere(oa.mask)[:n][:, ::-1].astype(float))
                        qs.append(np.argwhere(ob.mask)[:n][:, ::-1].astype(float))
            if ps:
                matches[(a, b)] = PointMatchSet(np.vstack(ps), np.vstack(qs))
    return objs, matches


@given(seeds)
def test_duplicated_matches_double_density(seed):
    rng = np.random.default_rng(seed)
    objs, matches = _scene(rng, 2, 2)
    if (0, 1) not in matches:
        return
    ms = matches[(0, 1)]
    twice = PointMatchSet(np.vstack([ms.p, ms.p]), np.vstack([ms.q, ms.q]))
    for a in objs[0]:
        for b in objs[1]:
            assert correspondence_density(a, b, twice) == 2 * correspondence_density(a, b, ms)


@given(seeds)
def test_match_objects_ignores_detection_order(seed):
    rng = np.random.default_rng(seed)
    objs, matches = _scene(rng, 2, 3)
    if (0, 1) not in matches:
        return
    fwd = match_objects(objs[0], objs[1], matches[(0, 1)])
    rev = match_objects(objs[0][::-1], objs[1][::-1], matches[(0, 1)])
    assert sorted((c.a.key, c.b.key) for c in fwd) == sorted((c.a.key, c.b.key) for c in rev)


@given(seeds, st.floats(0.01, 0.3), st.floats(0.01, 0.3))
def test_raising_tau_never_adds_a_match(seed, t1, t2):
    lo, hi = sorted((t1, t2))
    rng = np.random.default_rng(seed)
    objs, matches = _scene(rng, 2, 3)
    if (0, 1) not in matches:
        return
    got_lo = match_objects(objs[0], objs[1], matches[(0, 1)], DensityConfig(threshold=lo))
    got_hi = match_objects(objs[0], objs[1], matches[(0, 1)], DensityConfig(threshold=hi))
    assert len(got_hi) <= len(got_lo)


@given(seeds)
def test_classes_hold_one_object_per_image(seed):
    rng = np.random.default_rng(seed)
    objs, matches = _scene(rng)
    ms = build_equivalence(objs, matches)
    for cls in ms.classes:
        sources = [o.source_id for o in cls]
        assert len(sources) == len(set(sources))
    assert sum(len(c) for c in ms.classes) == sum(len(o) for o in objs)


@given(seeds, st.permutations([0, 1, 2]))
def test_expected_count_ignores_image_order(seed, perm):
    rng = np.random.default_rng(seed)
    objs, matches = _scene(rng)
    inv = {old: new for new, old in enumerate(perm)}
    objs2 = [[block_object(inv[i], *o.bbox, SHAPE, o.index) for o in objs[i]] for i in perm]
    matches2 = {}
    for (a, b), ms in matches.items():
        na, nb = inv[a], inv[b]
        matches2[(na, nb) if na < nb else (nb, na)] = ms if na < nb else ms.swapped()
    assert build_equivalence(objs, matches).counts_by_category() == \
        build_equivalence(objs2, matches2).counts_by_category()


@given(seeds, st.integers(0, 8))
def test_duplication_flag_implies_positive_delta(seed, n_out):
    rng = np.random.default_rng(seed)
    objs, matches = _scene(rng)
    ms = build_equivalence(objs, matches)
    out = [block_object(0, 2 * i, 0, 1, 1, SHAPE, i) for i in range(n_out)]
    for c in count_report(out, objs, ms).values():
        if c.duplication_flag:
            assert c.delta > 0
        assert c.n_expected >= c.max_input and c.n_expected <= c.sum_input


# ---------------------------------------------------------------------------
# Energy
# ---------------------------------------------------------------------------

@given(seeds)
def test_smoothness_is_symmetric(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng, 3, 4, k=3, channels=3)
    h, w = model.shape
    for _ in range(10):
        y, x = int(rng.integers(0, h)), int(rng.integers(0, w - 1))
        p, q = (x, y), (x + 1, y)
        a, b = rng.integers(0, model.n_labels, 2)
        assert smoothness_cost(p, q, a, b, model) == smoothness_cost(q, p, b, a, model)


def _crop_zero_condition(lab, o, label):
    inside = lab[o.mask] == label
    if not inside.any():
        return True
    if not inside.all():
        return False
    ring = np.zeros_like(o.mask)
    ys, xs = np.nonzero(o.mask)
    for dy, dx in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        yy, xx = ys + dy, xs + dx
        ok = (yy >= 0) & (yy < lab.shape[0]) & (xx >= 0) & (xx < lab.shape[1])
        ring[yy[ok], xx[ok]] = True
    ring &= ~o.mask
    return bool((lab[ring] == label).all())


@given(seeds)
def test_crop_cost_vanishes_exactly_on_whole_or_absent_objects(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng, 4, 4, k=2, n_objects=2)
    lab = rng.integers(1, 3, model.shape) if rng.random() < 0.5 else np.full(model.shape, int(rng.integers(0, 3)))
    if rng.random() < 0.5:
        o = model.objects[0]
        lab[o.mask] = o.source_id + 1
    from objstitch.energy import crop_cost

    for o in model.objects:
        label = o.source_id + 1
        assert (crop_cost(lab, o, label, model) == 0) == _crop_zero_condition(lab, o, label)


@given(seeds, st.sampled_from(["lambda_d", "lambda_s", "lambda_c", "lambda_r", "lambda_o"]), st.floats(0.0, 4.0))
def test_terms_are_nonnegative_and_monotone_in_weights(seed, name, bump):
    rng = np.random.default_rng(seed)
    model = random_model(rng, 3, 3)
    lab = random_labeling(rng, model)
    t = total_energy(lab, model)
    assert min(t.data, t.smoothness, t.crop, t.duplication, t.occlusion) >= 0
    p = model.params.resolved()
    heavier = EnergyParams(**{**vars(p), name: getattr(p, name) + bump})
    m2 = EnergyModel([Raster(d, m) for d, m in zip(model.images, model.masks)], model.objects, model.pairs, heavier)
    assert total_energy(lab, m2).total >= t.total


@given(seeds)
def test_intensity_scaling_scales_only_smoothness(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng, 3, 4, k=2)
    scaled = EnergyModel([Raster(2.0 * d, m) for d, m in zip(model.images, model.masks)],
                         model.objects, model.pairs, model.params)
    assert scaled.i_max == 2 * model.i_max
    lab = random_labeling(rng, model)
    a, b = total_energy(lab, model), total_energy(lab, scaled)
    assert b.smoothness == 2 * a.smoothness
    assert (b.data, b.crop, b.duplication, b.occlusion) == (a.data, a.crop, a.duplication, a.occlusion)


# ---------------------------------------------------------------------------
# Solver, blending, evaluation
# ---------------------------------------------------------------------------

@given(seeds)
def test_alpha_expansion_is_deterministic(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng, 4, 4, k=2, params=DYADIC)
    a, b = alpha_expansion(model), alpha_expansion(model)
    assert np.array_equal(a.labeling, b.labeling) and a.as_dict() == b.as_dict()
    assert a.energy <= model.mrf.energy(model.initial_labeling())


@given(seeds)
def test_composite_copies_source_pixels(seed):
    rng = np.random.default_rng(seed)
    images = [Raster(rng.uniform(0, 255, (4, 5, 3)), rng.random((4, 5)) < 0.7) for _ in range(3)]
    lab = rng.integers(0, 4, (4, 5))
    comp = composite(images, lab)
    for (y, x), v in np.ndenumerate(lab):
        if v != OCCLUDED:
            assert np.array_equal(comp.data[y, x], images[v - 1].data[y, x])


@given(arrays(bool, st.tuples(st.integers(2, 7), st.integers(2, 7))))
def test_crop_mode_leaves_no_hole(occluded):
    if occluded.all():
        return
    lab = np.where(occluded, OCCLUDED, 1)
    r = Raster(np.full(lab.shape, 9.0), ~occluded)
    out = render_occlusion(r, lab, "crop")
    x, y, w, h = out.crop
    assert (lab[y:y + h, x:x + w] != OCCLUDED).all() and out.raster.mask.all()


@given(seeds)
def test_poisson_is_identity_when_sources_agree(seed):
    from objstitch.blending import poisson_blend

    rng = np.random.default_rng(seed)
    data = rng.uniform(0, 255, (6, 7))
    full = np.ones((6, 7), bool)
    lab = rng.integers(1, 3, (6, 7))
    res = poisson_blend([Raster(data, full), Raster(data, full)], lab, band=None)
    assert np.abs(res.raster.data[..., 0] - data).max() < 1e-4


@given(seeds)
def test_ms_ssim_is_symmetric(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 255, (170, 165))
    b = np.clip(a + rng.normal(0, 30, a.shape), 0, 255)
    assert ms_ssim(a, b) == pytest.approx(ms_ssim(b, a), abs=1e-12)


@given(seeds, st.floats(0.1, 5.0), st.floats(-50, 50))
def test_ncc_ignores_affine_template_intensity(seed, gain, offset):
    rng = np.random.default_rng(seed)
    im = rng.uniform(0, 255, (12, 14))
    t = im[3:8, 2:9]
    assert np.allclose(normxcorr(t, im), normxcorr(gain * t + offset, im), atol=1e-9)
