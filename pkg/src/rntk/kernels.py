"""Closed-form CK and NTK kernels of infinite-width recurrent networks.

Computes the conjugate kernel (CK, the Gaussian-process covariance of the
network output at initialization) and the neural tangent kernel (NTK, the
gradient inner-product kernel) for deep simple RNNs with ReLU activations,
including bidirectional and average-pooled readouts. The kernels follow a
layer-and-time covariance recursion whose only nonlinearity-dependent
primitive is the arc-cosine expectation ``vphi`` and its derivative form
``vphi_prime``.

All entries of a Gram matrix are independent scalar recursions, so the
batched implementation processes pairs of rows in tiles; tiles write to
disjoint output regions and may run concurrently.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Sequence

import numpy as np

_INV_2PI = 0.5 / np.pi

# Default number of pairs per work tile (256 x 256 block of a Gram matrix).
TILE_PAIRS = 256 * 256


class ShapeError(ValueError):
    """Inputs have inconsistent or unusable shapes."""


class CompositionError(ValueError):
    """Kernel matrices cannot be composed (shape or parameter mismatch)."""


class Arch(Enum):
    """Recurrent architecture whose infinite-width kernel is computed."""

    RNN = "rnn"
    BI_RNN = "bi-rnn"
    RNN_AVG = "rnn-avg"
    BI_RNN_AVG = "bi-rnn-avg"


class InputOrder(Enum):
    """Time ordering in which input coordinates are fed to the network."""

    DEFAULT = "default"
    FLIPPED = "flipped"


@dataclass(frozen=True)
class Variant:
    """Architecture plus input ordering.

    Bidirectional architectures consume both orderings internally, so their
    ``input_order`` is normalized to DEFAULT and has no effect.
    """

    arch: Arch = Arch.RNN
    input_order: InputOrder = InputOrder.DEFAULT

    def __post_init__(self):
        if self.bidirectional and self.input_order is not InputOrder.DEFAULT:
            object.__setattr__(self, "input_order", InputOrder.DEFAULT)

    @property
    def bidirectional(self) -> bool:
        return self.arch in (Arch.BI_RNN, Arch.BI_RNN_AVG)

    @property
    def pooled(self) -> bool:
        """True when the readout sums one output head per time step."""
        return self.arch in (Arch.RNN_AVG, Arch.BI_RNN_AVG)

    @property
    def label(self) -> str:
        if self.input_order is InputOrder.FLIPPED:
            return f"{self.arch.value}-flip"
        return self.arch.value

    @staticmethod
    def parse(arch: str, order: str = "default") -> "Variant":
        return Variant(Arch(arch), InputOrder(order))


@dataclass(frozen=True)
class HyperParams:
    """Initialization scales and depth of the recurrent network.

    sigma_w scales recurrent weights, sigma_u input weights, sigma_b biases,
    sigma_v the output layer; depth_L is the number of stacked layers.
    Weights themselves are standard normal; the scales multiply them at use
    sites, which is what makes these the sole knobs of the kernel recursion.
    """

    sigma_w: float = math.sqrt(2.0)
    sigma_u: float = 0.5
    sigma_b: float = 0.1
    sigma_v: float = 1.0
    depth_L: int = 1
    activation: str = "relu"

    def __post_init__(self):
        for name in ("sigma_w", "sigma_u", "sigma_b", "sigma_v"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ValueError(f"{name} must be a finite real, got {value!r}")
        if self.sigma_w <= 0 or self.sigma_u <= 0 or self.sigma_v <= 0:
            raise ValueError("sigma_w, sigma_u, sigma_v must be positive")
        if self.sigma_b < 0:
            raise ValueError("sigma_b must be nonnegative")
        if not isinstance(self.depth_L, int) or self.depth_L < 1:
            raise ValueError(f"depth_L must be a positive integer, got {self.depth_L!r}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")


@dataclass(frozen=True)
class Cov2:
    """2x2 covariance of a bivariate Gaussian: variances k1, k2, covariance k3."""

    k1: float
    k2: float
    k3: float

    def __post_init__(self):
        for name in ("k1", "k2", "k3"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ValueError(f"{name} must be a finite real, got {value!r}")
        if self.k1 < 0 or self.k2 < 0:
            raise ValueError("variances k1, k2 must be nonnegative")


def _vphi_arrays(k1, k2, k3):
    """Elementwise (vphi, vphi_prime) for arrays of 2x2 covariances.

    The correlation is clamped to [-1, 1] before acos/sqrt so that rounding
    drift cannot produce NaN. Zero-variance entries (k1*k2 == 0) get the
    c = 0 limit: vphi = 0, vphi_prime = 1/4.
    """
    q = np.sqrt(k1 * k2)
    c = np.divide(k3, q, out=np.zeros_like(q), where=q > 0)
    np.clip(c, -1.0, 1.0, out=c)
    ang = np.pi - np.arccos(c)
    vp = (c * ang + np.sqrt(1.0 - c * c)) * q * _INV_2PI
    vpp = ang * _INV_2PI
    # Identical streams must pin the c = 1 limit exactly: acos has an
    # unbounded derivative there, so letting rounding decide c would make
    # self pairs drift away from their own variance recursion.
    eq = (k1 == k3) & (k2 == k3) & (k3 > 0)
    if eq.any():
        vp = np.where(eq, 0.5 * k3, vp)
        vpp = np.where(eq, 0.5, vpp)
    return vp, vpp


def vphi(cov: Cov2) -> float:
    """E[relu(z1) * relu(z2)] for (z1, z2) ~ N(0, [[k1, k3], [k3, k2]]).

    Closed form: (c*(pi - acos(c)) + sqrt(1 - c^2)) * sqrt(k1*k2) / (2*pi)
    with c = k3 / sqrt(k1*k2) clamped to [-1, 1].
    """
    vp, _ = _vphi_arrays(np.float64(cov.k1), np.float64(cov.k2), np.float64(cov.k3))
    return float(vp)


def vphi_prime(cov: Cov2) -> float:
    """E[relu'(z1) * relu'(z2)] = (pi - acos(c)) / (2*pi), c clamped to [-1, 1]."""
    _, vpp = _vphi_arrays(np.float64(cov.k1), np.float64(cov.k2), np.float64(cov.k3))
    return float(vpp)


class PairOutputs(NamedTuple):
    """Kernels of one input pair: last-step and pooled readouts."""

    ck_last: float
    ntk_last: float
    ck_avg: float
    ntk_avg: float


def _vphi_scalar(k1: float, k2: float, k3: float) -> tuple[float, float]:
    if k3 > 0.0 and k1 == k3 and k2 == k3:
        return 0.5 * k3, 0.5
    q = math.sqrt(k1 * k2)
    if q <= 0.0:
        return 0.0, 0.25
    c = min(1.0, max(-1.0, k3 / q))
    ang = math.pi - math.acos(c)
    vp = (c * ang + math.sqrt(max(0.0, 1.0 - c * c))) * q / (2.0 * math.pi)
    return vp, ang / (2.0 * math.pi)


def kernel_pair(x, x_prime, params: HyperParams) -> PairOutputs:
    """Scalar reference recursion for a single input pair.

    Runs the covariance recursion with plain Python floats, one layer state
    per depth, advancing one time step at a time:

      t = 1:  sig[1] = su^2*x_1*x_1' + sb^2, deeper layers feed vphi upward;
      t >= 2: layer 1 adds sw^2*vphi(prev step), layer l >= 2 combines
              su^2*vphi(layer below, same step) + sw^2*vphi(same layer, prev
              step); biases add sb^2 everywhere.

    The NTK companion state accumulates vphi_prime-weighted products along
    the same schedule; each step's output head contributes
    ck_t = sv^2*vphi(top) and ntk_t = ck_t + sv^2*psi_top*vphi_prime(top).
    ck_avg/ntk_avg sum the per-step heads, ck_last/ntk_last keep the final
    step. Intended as the independently-auditable counterpart of `gram`;
    the batched path must agree with it entrywise.
    """
    xa = np.asarray(x, dtype=np.float64)
    xb = np.asarray(x_prime, dtype=np.float64)
    if xa.ndim != 1 or xb.ndim != 1:
        raise ShapeError("inputs must be 1-D sequences")
    if xa.shape != xb.shape:
        raise ShapeError(f"length mismatch: {xa.shape[0]} vs {xb.shape[0]}")
    if xa.shape[0] == 0:
        raise ShapeError("inputs must have at least one time step")
    if not (np.all(np.isfinite(xa)) and np.all(np.isfinite(xb))):
        raise ValueError("inputs must be finite")

    su2 = params.sigma_u**2
    sw2 = params.sigma_w**2
    sb2 = params.sigma_b**2
    sv2 = params.sigma_v**2
    L = params.depth_L
    T = xa.shape[0]

    sab = [0.0] * L  # cross covariance per layer
    saa = [0.0] * L  # self covariance of x per layer
    sbb = [0.0] * L  # self covariance of x' per layer
    psi = [0.0] * L  # NTK companion state per layer
    vp = [0.0] * L
    vpp = [0.0] * L

    ck_last = ntk_last = ck_avg = ntk_avg = 0.0
    for t in range(T):
        for layer in range(L):
            if layer == 0:
                sab_new = su2 * float(xa[t] * xb[t]) + sb2
                saa_new = su2 * float(xa[t] * xa[t]) + sb2
                sbb_new = su2 * float(xb[t] * xb[t]) + sb2
                psi_new = 0.0
            else:
                sab_new = su2 * vp[layer - 1] + sb2
                saa_new = su2 * 0.5 * saa[layer - 1] + sb2
                sbb_new = su2 * 0.5 * sbb[layer - 1] + sb2
                psi_new = su2 * psi[layer - 1] * vpp[layer - 1]
            if t > 0:
                sab_new += sw2 * vp[layer]
                # vphi of a self pair is half its variance (correlation 1)
                saa_new += sw2 * 0.5 * saa[layer]
                sbb_new += sw2 * 0.5 * sbb[layer]
                psi_new += sw2 * psi[layer] * vpp[layer]
            psi_new += sab_new
            sab[layer], saa[layer], sbb[layer] = sab_new, saa_new, sbb_new
            psi[layer] = psi_new
            vp[layer], vpp[layer] = _vphi_scalar(saa[layer], sbb[layer], sab[layer])
        ck_t = sv2 * vp[L - 1]
        ntk_t = ck_t + sv2 * psi[L - 1] * vpp[L - 1]
        ck_avg += ck_t
        ntk_avg += ntk_t
        ck_last, ntk_last = ck_t, ntk_t
    return PairOutputs(ck_last, ntk_last, ck_avg, ntk_avg)


class RecursionState:
    """Per-tile buffers of the batched recursion.

    Holds one array per layer for the cross covariance, the two self
    covariances, the NTK companion state, and the cached vphi/vphi_prime of
    the current step, plus four readout accumulators. 6*L + 4 arrays total,
    each sized to the tile's pair count: the working set never grows with
    the sequence length T.
    """

    def __init__(self, depth_L: int):
        self.depth_L = depth_L
        none = [None] * depth_L
        self.sab = list(none)
        self.saa = list(none)
        self.sbb = list(none)
        self.psi = list(none)
        self.vp = list(none)
        self.vpp = list(none)
        self.ck_last = None
        self.ntk_last = None
        self.ck_avg = None
        self.ntk_avg = None

    def buffer_count(self) -> int:
        return 6 * self.depth_L + 4

    def step_heads(self, sv2: float):
        """Update readouts from the top layer after a time step."""
        top = self.depth_L - 1
        ck_t = sv2 * self.vp[top]
        ntk_t = ck_t + sv2 * self.psi[top] * self.vpp[top]
        if self.ck_avg is None:
            self.ck_avg = ck_t.copy()
            self.ntk_avg = ntk_t.copy()
        else:
            self.ck_avg += ck_t
            self.ntk_avg += ntk_t
        self.ck_last, self.ntk_last = ck_t, ntk_t


def _tile_kernels(Xa, Xb, ia, ib, cols, params: HyperParams) -> RecursionState:
    """Run the pair recursion for one tile of (row of Xa, row of Xb) pairs.

    `cols[t]` is the feature column fed at step t (reversed for flipped
    input order). Values are gathered per step, so nothing with a T-sized
    footprint is retained across steps.
    """
    su2 = params.sigma_u**2
    sw2 = params.sigma_w**2
    sb2 = params.sigma_b**2
    sv2 = params.sigma_v**2
    L = params.depth_L

    st = RecursionState(L)
    for t, col in enumerate(cols):
        xa = Xa[ia, col]
        xb = Xb[ib, col]
        for layer in range(L):
            if layer == 0:
                sab_new = su2 * (xa * xb) + sb2
                saa_new = su2 * (xa * xa) + sb2
                sbb_new = su2 * (xb * xb) + sb2
                psi_new = None
            else:
                sab_new = su2 * st.vp[layer - 1] + sb2
                saa_new = (su2 * 0.5) * st.saa[layer - 1] + sb2
                sbb_new = (su2 * 0.5) * st.sbb[layer - 1] + sb2
                psi_new = su2 * st.psi[layer - 1] * st.vpp[layer - 1]
            if t > 0:
                # st.vp/st.vpp[layer] still hold the previous step here.
                sab_new += sw2 * st.vp[layer]
                saa_new += (sw2 * 0.5) * st.saa[layer]
                sbb_new += (sw2 * 0.5) * st.sbb[layer]
                carry = sw2 * st.psi[layer] * st.vpp[layer]
                psi_new = carry if psi_new is None else psi_new + carry
            psi_new = sab_new if psi_new is None else psi_new + sab_new
            st.sab[layer], st.saa[layer], st.sbb[layer] = sab_new, saa_new, sbb_new
            st.psi[layer] = psi_new
            st.vp[layer], st.vpp[layer] = _vphi_arrays(saa_new, sbb_new, sab_new)
        st.step_heads(sv2)
    return st


def _resolve_threads(threads) -> int:
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("RNTK_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _run_pairs(Xa, Xb, ia, ib, cols, params, tile_pairs, threads):
    """Evaluate all index pairs tile by tile; returns four (P,) arrays."""
    n_pairs = ia.shape[0]
    out = tuple(np.empty(n_pairs) for _ in range(4))

    def run_tile(start: int, stop: int):
        st = _tile_kernels(Xa, Xb, ia[start:stop], ib[start:stop], cols, params)
        for dst, src in zip(out, (st.ck_last, st.ntk_last, st.ck_avg, st.ntk_avg)):
            dst[start:stop] = src

    bounds = list(range(0, n_pairs, tile_pairs)) + [n_pairs]
    tiles = [(a, b) for a, b in zip(bounds, bounds[1:]) if b > a]
    workers = min(_resolve_threads(threads), len(tiles))
    if workers <= 1:
        for a, b in tiles:
            run_tile(a, b)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for future in [pool.submit(run_tile, a, b) for a, b in tiles]:
                future.result()
    return out


def _as_matrix(data, name: str = "dataset") -> np.ndarray:
    try:
        arr = np.asarray(data, dtype=np.float64)
    except (ValueError, TypeError) as exc:
        raise ShapeError(f"{name} has ragged or non-numeric rows: {exc}") from exc
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be a 2-D array of shape (N, T), got ndim={arr.ndim}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ShapeError(f"{name} must be nonempty, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return np.ascontiguousarray(arr)


def _direction_passes(variant: Variant, T: int) -> list[np.ndarray]:
    forward = np.arange(T)
    if variant.bidirectional:
        return [forward, forward[::-1]]
    if variant.input_order is InputOrder.FLIPPED:
        return [forward[::-1]]
    return [forward]


@dataclass(frozen=True)
class GramPair:
    """CK and NTK Gram matrices over one dataset.

    Both matrices are exactly symmetric (each unordered pair is computed
    once and mirrored) and positive semi-definite up to numerical
    tolerance; NTK diagonal entries dominate CK diagonal entries.
    """

    ck: np.ndarray
    ntk: np.ndarray
    params: HyperParams
    variant: Variant

    @property
    def n_points(self) -> int:
        return self.ck.shape[0]


@dataclass(frozen=True)
class CrossGram:
    """Rectangular CK/NTK kernel blocks: rows index test points, columns train points."""

    ck: np.ndarray
    ntk: np.ndarray
    params: HyperParams
    variant: Variant


def _select_heads(st_out, pooled: bool):
    ck_last, ntk_last, ck_avg, ntk_avg = st_out
    return (ck_avg, ntk_avg) if pooled else (ck_last, ntk_last)


def gram(data, params: HyperParams, variant: Variant = Variant(), *,
         tile_pairs: int = TILE_PAIRS, threads=None) -> GramPair:
    """Compute the CK/NTK Gram matrices of a dataset under one variant.

    Entry (i, j) matches `kernel_pair` on rows i and j with the variant's
    readout, input ordering, and sigma_v scaling applied. Only the upper
    triangle is computed; mirroring makes symmetry exact by construction.
    """
    X = _as_matrix(data)
    N, T = X.shape
    ia, ib = np.triu_indices(N)
    ck_flat = ntk_flat = None
    for cols in _direction_passes(variant, T):
        ck_dir, ntk_dir = _select_heads(
            _run_pairs(X, X, ia, ib, cols, params, tile_pairs, threads), variant.pooled)
        if ck_flat is None:
            ck_flat, ntk_flat = ck_dir, ntk_dir
        else:
            ck_flat = ck_flat + ck_dir
            ntk_flat = ntk_flat + ntk_dir
    ck = np.empty((N, N))
    ntk = np.empty((N, N))
    ck[ia, ib] = ck_flat
    ck[ib, ia] = ck_flat
    ntk[ia, ib] = ntk_flat
    ntk[ib, ia] = ntk_flat
    return GramPair(ck=ck, ntk=ntk, params=params, variant=variant)


def gram_cross(train, test, params: HyperParams, variant: Variant = Variant(), *,
               tile_pairs: int = TILE_PAIRS, threads=None) -> CrossGram:
    """Kernels between test rows and train rows: entry (i, j) = k(test_i, train_j)."""
    Xtr = _as_matrix(train, "train")
    Xte = _as_matrix(test, "test")
    if Xtr.shape[1] != Xte.shape[1]:
        raise ShapeError(
            f"feature length mismatch: train T={Xtr.shape[1]}, test T={Xte.shape[1]}")
    n_te, T = Xte.shape
    n_tr = Xtr.shape[0]
    ia = np.repeat(np.arange(n_te), n_tr)
    ib = np.tile(np.arange(n_tr), n_te)
    ck_flat = ntk_flat = None
    for cols in _direction_passes(variant, T):
        ck_dir, ntk_dir = _select_heads(
            _run_pairs(Xte, Xtr, ia, ib, cols, params, tile_pairs, threads), variant.pooled)
        if ck_flat is None:
            ck_flat, ntk_flat = ck_dir, ntk_dir
        else:
            ck_flat = ck_flat + ck_dir
            ntk_flat = ntk_flat + ntk_dir
    return CrossGram(ck=ck_flat.reshape(n_te, n_tr), ntk=ntk_flat.reshape(n_te, n_tr),
                     params=params, variant=variant)


def flip(x):
    """Reverse the time order of a sequence: out[t] = in[T-1-t]. An involution."""
    arr = np.asarray(x)
    if arr.ndim != 1:
        raise ShapeError("flip expects a 1-D sequence")
    return arr[::-1].copy()


_BI_OF = {Arch.RNN: Arch.BI_RNN, Arch.RNN_AVG: Arch.BI_RNN_AVG}


def compose_bidirectional(fwd: GramPair, bwd: GramPair) -> GramPair:
    """Sum a forward-direction and a reversed-direction GramPair entrywise.

    The bidirectional kernel is the sum of the two directional kernels
    because the two directions use independent weights and independent
    output heads, which has the cross terms vanish in the infinite-width
    limit. `bwd` must be the same dataset processed in reversed time order.
    """
    if fwd.ck.shape != bwd.ck.shape:
        raise CompositionError(
            f"shape mismatch: {fwd.ck.shape} vs {bwd.ck.shape}")
    if fwd.params != bwd.params:
        raise CompositionError("hyperparameter mismatch between directions")
    if fwd.variant.arch != bwd.variant.arch or fwd.variant.arch not in _BI_OF:
        raise CompositionError(
            "both directions must share a unidirectional architecture "
            f"(got {fwd.variant.arch.value}, {bwd.variant.arch.value})")
    return GramPair(ck=fwd.ck + bwd.ck, ntk=fwd.ntk + bwd.ntk,
                    params=fwd.params, variant=Variant(_BI_OF[fwd.variant.arch]))
