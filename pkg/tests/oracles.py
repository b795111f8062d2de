"""Brute-force reference implementations used by the tests.

Deliberately naive: pixel sets, explicit loops, exhaustive enumeration.
Nothing here imports from birdtag.
"""
import itertools
from collections import deque

import numpy as np


def box_pixels(t0, t1, f0, f1):
    return {(t, f) for t in range(t0, t1 + 1) for f in range(f0, f1 + 1)}


def pixel_iou(a, b):
    pa, pb = box_pixels(*a), box_pixels(*b)
    return len(pa & pb) / len(pa | pb)


def pixel_dice(a, b):
    sa = {tuple(p) for p in np.argwhere(a)}
    sb = {tuple(p) for p in np.argwhere(b)}
    if not sa and not sb:
        return 1.0
    return 2 * len(sa & sb) / (len(sa) + len(sb))


def pairs_auc(labels, scores):
    pos = [s for l, s in zip(labels, scores) if l == 1]
    neg = [s for l, s in zip(labels, scores) if l == 0]
    wins = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1.0
            elif p == n:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def greedy_pairs(scores):
    """Greedy matching by walking all pairs sorted by (-score, row, col)."""
    order = sorted(((-s, i, j) for (i, j), s in np.ndenumerate(np.asarray(scores))), key=lambda t: t)
    used_r, used_c, total = set(), set(), 0.0
    for neg, i, j in order:
        if -neg <= 0:
            break
        if i in used_r or j in used_c:
            continue
        used_r.add(i)
        used_c.add(j)
        total += -neg
    return total


def best_matching_total(scores):
    scores = np.asarray(scores)
    r, c = scores.shape
    if r > c:
        scores = scores.T
        r, c = c, r
    best = 0.0
    for cols in itertools.permutations(range(c), r):
        best = max(best, sum(scores[i, j] for i, j in enumerate(cols)))
    return best


def flood_fill_components(mask):
    """8-connected components by BFS; returns a list of pixel sets."""
    mask = np.asarray(mask, dtype=bool)
    seen = np.zeros_like(mask)
    comps = []
    rows, cols = mask.shape
    for r in range(rows):
        for c in range(cols):
            if mask[r, c] and not seen[r, c]:
                comp, q = set(), deque([(r, c)])
                seen[r, c] = True
                while q:
                    y, x = q.popleft()
                    comp.add((y, x))
                    for dy in (-1, 0, 1):
                        for dx in (-1, 0, 1):
                            ny, nx = y + dy, x + dx
                            if 0 <= ny < rows and 0 <= nx < cols and mask[ny, nx] and not seen[ny, nx]:
                                seen[ny, nx] = True
                                q.append((ny, nx))
                comps.append(comp)
    return comps


def loop_dilate(mask, se):
    mask = np.asarray(mask, dtype=bool)
    rows, cols = mask.shape
    cr, cc = se.shape[0] // 2, se.shape[1] // 2
    out = np.zeros_like(mask)
    for r in range(rows):
        for c in range(cols):
            for i in range(se.shape[0]):
                for j in range(se.shape[1]):
                    if se[i, j]:
                        y, x = r - (i - cr), c - (j - cc)
                        if 0 <= y < rows and 0 <= x < cols and mask[y, x]:
                            out[r, c] = True
    return out


def loop_erode(mask, se):
    mask = np.asarray(mask, dtype=bool)
    rows, cols = mask.shape
    cr, cc = se.shape[0] // 2, se.shape[1] // 2
    out = np.ones_like(mask)
    for r in range(rows):
        for c in range(cols):
            for i in range(se.shape[0]):
                for j in range(se.shape[1]):
                    if se[i, j]:
                        y, x = r + (i - cr), c + (j - cc)
                        if 0 <= y < rows and 0 <= x < cols and not mask[y, x]:
                            out[r, c] = False
    return out


def neighbourhood_majority(mask, k):
    mask = np.asarray(mask, dtype=bool)
    rows, cols = mask.shape
    h = k // 2
    out = np.zeros_like(mask)
    for r in range(rows):
        for c in range(cols):
            count = 0
            for y in range(r - h, r + h + 1):
                for x in range(c - h, c + h + 1):
                    if 0 <= y < rows and 0 <= x < cols and mask[y, x]:
                        count += 1
            out[r, c] = count > (k * k) // 2
    return out


def direct_dft_magnitude(frame):
    n = len(frame)
    k = np.arange(n // 2)[:, None]
    t = np.arange(n)[None, :]
    re = (frame * np.cos(2 * np.pi * k * t / n)).sum(axis=1)
    im = (frame * np.sin(2 * np.pi * k * t / n)).sum(axis=1)
    return np.hypot(re, im)


def periodic_hamming(n):
    return np.array([0.54 - 0.46 * np.cos(2 * np.pi * i / n) for i in range(n)])


def loop_frame_count(n_samples, window_len, hop):
    count, start = 0, 0
    while start + window_len <= n_samples:
        count += 1
        start += hop
    return count


def central_difference(f, theta, i, h_rel=1e-5):
    """Central difference of scalar ``f()`` w.r.t. ``theta[i]`` (in-place)."""
    old = theta[i]
    h = h_rel * max(1.0, abs(old))
    theta[i] = old + h
    fp = f()
    theta[i] = old - h
    fm = f()
    theta[i] = old
    return (fp - fm) / (2 * h)


def rel_err(a, b, floor=1e-8):
    return abs(a - b) / max(abs(a), abs(b), floor)
