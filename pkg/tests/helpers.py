"""Shared builders and slow reference implementations for the tests.

The reference functions here are written from the term definitions with
plain loops and share no code with the package beyond its data classes.
"""

import itertools

import numpy as np

from objstitch.core import DetectedObject, Raster, mask_bbox
from objstitch.energy import EnergyModel, EnergyParams

# dyadic weights keep every energy exactly representable in float64
DYADIC = EnergyParams(lambda_d=8.0, lambda_s=1.0, lambda_c=2.0, lambda_r=4.0, delta=0.5, radius=1)


def block_object(source, x, y, w, h, shape, index=0, category="person"):
    m = np.zeros(shape, dtype=bool)
    m[y:y + h, x:x + w] = True
    return DetectedObject(source, category, 1.0, mask_bbox(m), m, index)


def random_model(rng, height=4, width=4, k=2, n_objects=2, params=DYADIC, mask_p=0.8,
                 channels=1, max_value=8, pair=True, crop_mode="local"):
    """Random instance with planted 2x2 objects; the first two objects (from
    distinct sources) are paired when ``pair`` is set."""
    shape = (height, width)
    images = []
    for _ in range(k):
        data = rng.integers(0, max_value, (height, width, channels)).astype(np.float64)
        images.append(Raster(data, rng.random(shape) < mask_p))
    objects = []
    for i in range(n_objects):
        src = i % k
        ow, oh = (2, 2) if width >= 2 and height >= 2 else (1, 1)
        x = int(rng.integers(0, width - ow + 1))
        y = int(rng.integers(0, height - oh + 1))
        objects.append(block_object(src, x, y, ow, oh, shape, index=i // k))
    pairs = [(objects[0], objects[1])] if pair and n_objects >= 2 and k >= 2 else []
    return EnergyModel(images, objects, pairs, params, crop_mode=crop_mode)


def random_labeling(rng, model):
    return rng.integers(0, model.n_labels, model.shape)


# ---------------------------------------------------------------------------
# Reference energy
# ---------------------------------------------------------------------------

def _neighbours(x, y, h, w):
    for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        if 0 <= x + dx < w and 0 <= y + dy < h:
            yield x + dx, y + dy


def _patch_sum(model, a, b, p, q):
    h, w = model.shape
    r = int(model.params.radius)
    cells = set()
    for cx, cy in (p, q):
        for dx in range(-r, r + 1):
            for dy in range(-r, r + 1):
                if abs(dx) + abs(dy) <= r:
                    cells.add((cx + dx, cy + dy))
    total = 0.0
    for x, y in cells:
        if 0 <= x < w and 0 <= y < h and model.masks[a, y, x] and model.masks[b, y, x]:
            for c in range(model.images.shape[-1]):
                total += abs(float(model.images[a, y, x, c]) - float(model.images[b, y, x, c]))
    return total


def _edges(h, w):
    for y in range(h):
        for x in range(w):
            if x + 1 < w:
                yield (x, y), (x + 1, y)
            if y + 1 < h:
                yield (x, y), (x, y + 1)


def reference_i_max(model):
    h, w = model.shape
    best = 0.0
    for p, q in _edges(h, w):
        for a in range(model.k):
            for b in range(model.k):
                best = max(best, _patch_sum(model, a, b, p, q))
    return best


def reference_energy(labeling, model, i_max=None):
    """Total weighted energy, accumulated one scalar at a time."""
    x = np.asarray(labeling)
    h, w = model.shape
    prm = model.params
    if i_max is None:
        i_max = reference_i_max(model)

    data = 0.0
    for yy in range(h):
        for xx in range(w):
            lab = int(x[yy, xx])
            if lab == 0:
                data += 1.0 + prm.delta
            elif not model.masks[lab - 1, yy, xx]:
                data += 1.0

    smooth = 0.0
    for p, q in _edges(h, w):
        lp, lq = int(x[p[1], p[0]]), int(x[q[1], q[0]])
        if lp == lq:
            continue
        if lp == 0 or lq == 0:
            smooth += i_max
        else:
            smooth += _patch_sum(model, lp - 1, lq - 1, p, q)

    crop = 0.0
    for o in model.objects:
        lab = o.source_id + 1
        for yy, xx in zip(*np.nonzero(o.mask)):
            if x[yy, xx] != lab:
                continue
            for nx, ny in _neighbours(xx, yy, h, w):
                if x[ny, nx] != lab:
                    crop += 1.0

    dup = 0.0
    occ = 0.0
    for o1, o2 in model.pairs:
        l1, l2 = o1.source_id + 1, o2.source_id + 1
        ys1, xs1 = np.nonzero(o1.mask)
        ys2, xs2 = np.nonzero(o2.mask)
        x0, y0 = xs1.min(), ys1.min()
        w1, h1 = xs1.max() - x0 + 1, ys1.max() - y0 + 1
        u0, v0 = xs2.min(), ys2.min()
        w2, h2 = xs2.max() - u0 + 1, ys2.max() - v0 + 1
        for yy, xx in zip(ys1, xs1):
            mx = int(np.floor(u0 + (xx - x0) * w2 / w1 + 0.5))
            my = int(np.floor(v0 + (yy - y0) * h2 / h1 + 0.5))
            if not (0 <= mx < w and 0 <= my < h) or (mx, my) == (xx, yy):
                continue
            if x[yy, xx] == l1 and x[my, mx] == l2:
                dup += 1.0
        for o in (o1, o2):
            lab = o.source_id + 1
            for yy, xx in zip(*np.nonzero(o.mask)):
                if not model.masks[o.source_id, yy, xx] and x[yy, xx] == lab:
                    occ += 2.0 * prm.delta

    return (prm.lambda_d * data + prm.lambda_s * smooth + prm.lambda_c * crop
            + prm.lambda_r * dup + prm.occlusion_weight * occ)


def enumerate_minimum(model, energy=None):
    """Lexicographically first global minimiser by plain enumeration."""
    if energy is None:
        i_max = reference_i_max(model)
        energy = lambda lab: reference_energy(lab, model, i_max)  # noqa: E731
    best, best_lab = np.inf, None
    for combo in itertools.product(range(model.n_labels), repeat=model.shape[0] * model.shape[1]):
        lab = np.array(combo).reshape(model.shape)
        e = energy(lab)
        if e < best:
            best, best_lab = e, lab
    return best_lab, best


def enumerate_binary(problem):
    """All 2^n assignments of a BinaryProblem with their energies."""
    out = []
    for combo in itertools.product((0, 1), repeat=problem.n):
        b = np.array(combo, dtype=np.int64)
        out.append((b, problem.energy(b)))
    return out
