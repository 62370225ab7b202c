"""Regenerate the preset design matrices and masks under data/.

Designs: four event conditions (U1, U2, F1, F2) convolved with an SPM-style
canonical HRF (and, for the 13-column design, its temporal and dispersion
derivatives), sampled at TR = 2 s for T = 351 scans, plus a constant.
Event onsets come from a fixed-seed schedule; they stand in for the
face-repetition onsets, which are not shipped.

Masks: a full 20 x 20 desk grid and a brain-shaped 53 x 63 mask with
exactly 2087 voxels.
"""

import argparse
from pathlib import Path

import numpy as np
from scipy.stats import gamma

TR = 2.0
T = 351
MICROTIME = 16
CONDITIONS = ["U1", "U2", "F1", "F2"]
EVENTS_PER_CONDITION = 26


def canonical_hrf(dt, peak=6.0, under=16.0, disp=1.0, ratio=6.0, length=32.0):
    t = np.arange(0.0, length + dt, dt)
    h = gamma.pdf(t, peak / disp, scale=disp) - gamma.pdf(t, under / disp, scale=disp) / ratio
    return h / h.sum()


def basis(dt):
    h = canonical_hrf(dt)
    shifted = canonical_hrf(dt)
    # Temporal derivative: difference with the response delayed by 1 s.
    lag = int(round(1.0 / dt))
    shifted = np.concatenate([np.zeros(lag), shifted[:-lag]])
    dtemp = h - shifted
    ddisp = (h - canonical_hrf(dt, disp=1.01)) / 0.01
    return h, dtemp, ddisp


def onsets(rng):
    total = EVENTS_PER_CONDITION * len(CONDITIONS)
    labels = np.repeat(np.arange(len(CONDITIONS)), EVENTS_PER_CONDITION)
    rng.shuffle(labels)
    # Stochastic SOA with null events: mean spacing fills the run.
    span = (T - 16) * TR
    gaps = rng.exponential(1.0, total) + 0.6
    times = 8.0 + np.cumsum(gaps) / gaps.sum() * span
    return {c: np.sort(times[labels == i]) for i, c in enumerate(CONDITIONS)}


def design(events, derivatives):
    dt = TR / MICROTIME
    n_micro = T * MICROTIME
    funcs = basis(dt) if derivatives else basis(dt)[:1]
    cols, names = [], []
    for c in CONDITIONS:
        stick = np.zeros(n_micro)
        # Stick height 1/dt gives each event a response of unit area in seconds.
        for t in events[c]:
            stick[int(round(t / dt))] += 1.0 / dt
        for j, f in enumerate(funcs):
            x = np.convolve(stick, f)[:n_micro]
            cols.append(x[::MICROTIME])
            names.append(c + ["", "_dt", "_disp"][j])
    cols.append(np.ones(T))
    names.append("constant")
    return names, np.column_stack(cols)


def write_design(path, names, X):
    with open(path, "w") as f:
        f.write(",".join(names) + "\n")
        for row in X:
            f.write(",".join(repr(float(v)) for v in row) + "\n")


def brain_mask(rows=53, cols=63, target=2087):
    r, c = np.mgrid[0:rows, 0:cols]
    y = (r - (rows - 1) / 2) / (rows / 2)
    x = (c - (cols - 1) / 2) / (cols / 2)
    # Ellipse with a flattened base, a shallow frontal notch and lateral bulges.
    score = x**2 + (y * (1.0 + 0.15 * (y > 0.4))) ** 2
    score -= 0.08 * np.cos(3.0 * np.arctan2(y, x)) * (x**2 + y**2)
    score += 0.25 * np.exp(-((x / 0.12) ** 2) - ((y + 0.95) / 0.25) ** 2)
    order = np.lexsort((np.arange(score.size), score.ravel()))
    inside = np.zeros(score.size, dtype=bool)
    inside[order[:target]] = True
    return inside.reshape(rows, cols)


def write_mask(path, m):
    with open(path, "w") as f:
        f.write("dims: " + " ".join(str(d) for d in m.shape) + "\n")
        for row in m:
            f.write(" ".join("1" if v else "0" for v in row) + "\n")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parent.parent / "data")
    ap.add_argument("--seed", type=int, default=20180522)
    args = ap.parse_args()
    (args.out / "designs").mkdir(parents=True, exist_ok=True)
    (args.out / "masks").mkdir(parents=True, exist_ok=True)

    events = onsets(np.random.default_rng(args.seed))
    names, X = design(events, derivatives=False)
    write_design(args.out / "designs" / "design_k5.csv", names, X)
    names, X = design(events, derivatives=True)
    write_design(args.out / "designs" / "design_k13.csv", names, X)
    with open(args.out / "designs" / "onsets.csv", "w") as f:
        f.write("condition,onset_seconds\n")
        for c in CONDITIONS:
            for t in events[c]:
                f.write(f"{c},{t:.3f}\n")

    write_mask(args.out / "masks" / "desk_20x20.txt", np.ones((20, 20), dtype=bool))
    brain = brain_mask()
    assert brain.sum() == 2087
    write_mask(args.out / "masks" / "brain_53x63.txt", brain)


if __name__ == "__main__":
    main()
