"""Regenerate the bundled benchmark datasets.

Each dataset is a small synthetic classification problem stored as a
headerless CSV (features then one integer label column). Several embed
their class signal in the time ordering of the features (trend sign,
autocorrelation, frequency, event position) so that sequence-aware
kernels have structure to exploit; one is a plain Gaussian-blob control.
All draws are fixed-seed, so rerunning this script reproduces the
committed files byte for byte.

Usage: python3 scripts/make_datasets.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np


def drift(rng):
    """Rising vs falling linear trend under heavy noise. N=160, T=8."""
    n_per, T = 80, 8
    t = np.arange(T) / (T - 1)
    rows, labels = [], []
    for cls, slope in enumerate((0.9, -0.9)):
        base = slope * (t - 0.5)
        rows.append(base + 0.55 * rng.standard_normal((n_per, T))
                    + 0.3 * rng.standard_normal((n_per, 1)))
        labels.append(np.full(n_per, cls))
    return np.vstack(rows), np.concatenate(labels)


def lags(rng):
    """AR(1) sign of autocorrelation; per-feature marginals match. N=200, T=12."""
    n_per, T = 100, 12
    rows, labels = [], []
    for cls, phi in enumerate((0.7, -0.7)):
        X = np.empty((n_per, T))
        scale = np.sqrt(1.0 - phi * phi)
        X[:, 0] = rng.standard_normal(n_per)
        for t in range(1, T):
            X[:, t] = phi * X[:, t - 1] + scale * rng.standard_normal(n_per)
        rows.append(X)
        labels.append(np.full(n_per, cls))
    return np.vstack(rows), np.concatenate(labels)


def waves(rng):
    """Sinusoids at one of three frequencies, random phase. N=180, T=16."""
    n_per, T = 60, 16
    t = np.arange(T)
    rows, labels = [], []
    for cls, cycles in enumerate((1.0, 2.0, 3.0)):
        phase = rng.uniform(0, 2 * np.pi, size=(n_per, 1))
        X = np.sin(2 * np.pi * cycles * t / T + phase)
        X += 0.4 * rng.standard_normal((n_per, T))
        rows.append(X)
        labels.append(np.full(n_per, cls))
    return np.vstack(rows), np.concatenate(labels)


def blobs(rng):
    """Plain Gaussian blobs with no temporal structure. N=150, T=6."""
    T = 6
    centers = rng.standard_normal((3, T)) * 1.6
    counts = (50, 50, 50)
    rows, labels = [], []
    for cls, (c, n_per) in enumerate(zip(centers, counts)):
        rows.append(c + rng.standard_normal((n_per, T)))
        labels.append(np.full(n_per, cls))
    return np.vstack(rows), np.concatenate(labels)


def spikes(rng):
    """A single bump early vs late in the sequence. N=160, T=10."""
    n_per, T = 80, 10
    t = np.arange(T)
    rows, labels = [], []
    for cls, center in enumerate((2.0, 7.0)):
        pos = center + rng.uniform(-1.0, 1.0, size=(n_per, 1))
        amp = 1.0 + 0.3 * rng.standard_normal((n_per, 1))
        X = amp * np.exp(-0.5 * ((t - pos) / 1.2) ** 2)
        X += 0.35 * rng.standard_normal((n_per, T))
        rows.append(X)
        labels.append(np.full(n_per, cls))
    return np.vstack(rows), np.concatenate(labels)


def damped(rng):
    """Oscillations that decay vs grow along the sequence. N=144, T=12."""
    n_per, T = 72, 12
    t = np.arange(T)
    rows, labels = [], []
    for cls, rate in enumerate((-0.18, 0.18)):
        phase = rng.uniform(0, 2 * np.pi, size=(n_per, 1))
        env = np.exp(rate * (t - T / 2))
        X = env * np.sin(2 * np.pi * 2.0 * t / T + phase)
        X += 0.4 * rng.standard_normal((n_per, T))
        rows.append(X)
        labels.append(np.full(n_per, cls))
    return np.vstack(rows), np.concatenate(labels)


GENERATORS = {
    "drift": drift,
    "lags": lags,
    "waves": waves,
    "blobs": blobs,
    "spikes": spikes,
    "damped": damped,
}


def main():
    out_dir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("datasets")
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, gen in GENERATORS.items():
        seed = int.from_bytes(name.encode("utf-8"), "little") % (2**32)
        rng = np.random.default_rng(seed)
        X, y = gen(rng)
        order = np.random.default_rng(seed + 1).permutation(len(y))
        X, y = X[order], y[order]
        lines = []
        for row, lab in zip(X, y):
            cells = [f"{v:.10g}" for v in row]
            cells.append(str(int(lab)))
            lines.append(",".join(cells))
        path = out_dir / f"{name}.csv"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        print(f"wrote {path} N={len(y)} T={X.shape[1]} classes={len(set(y.tolist()))}")


if __name__ == "__main__":
    main()
