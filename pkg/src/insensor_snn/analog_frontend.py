"""Behavioural model of the in-pixel first layer.

Signed kernels are split into two unsigned banks (transistor widths can only
be positive).  Each bank is accumulated on the column bit-line through a
pixel transfer curve, the two phases are subtracted by the analog CDS stage,
and a comparator with a per-channel trip point emits one spike bit.  Batch
norm is folded into the bank weights (scale) and the trip point (shift).
A max pool in the periphery follows the comparator.

All analog quantities are carried in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import curve_fit

from .numerics import (
    DimensionError,
    ParameterError,
    bn_affine,
    conv_output_size,
    im2col,
    maxpool2d,
)

FAMILIES = ("ideal", "saturating", "polynomial")

# default behavioural generator: V = v_max * (1 - exp(-k * w * x))
DEFAULT_V_MAX = 1.0
DEFAULT_K = 2.0


class FitError(ValueError):
    """Curve fitting could not produce a well-posed least-squares solution."""


@dataclass(frozen=True)
class CurveModel:
    """Pixel transfer curve ``f(w, x)`` replacing the ideal product ``w * x``.

    ``saturating`` coefficients are ``(a, k)`` for ``a * (1 - exp(-k*w*x))``.
    ``polynomial`` with integer ``degree`` d has coefficients ``c_0..c_d`` of
    a polynomial in ``u = w*x``; with ``degree=(dw, dx)`` the coefficients are
    the row-major grid ``c[i][j]`` of ``w**i * x**j``.
    """

    family: str = "ideal"
    coefficients: tuple = ()
    v_max: float = np.inf
    v_min: float = 0.0
    degree: object = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ParameterError(f"unknown curve family {self.family!r}")
        if not self.v_max > self.v_min:
            raise ParameterError("v_max must exceed v_min")
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        if isinstance(self.degree, list):
            object.__setattr__(self, "degree", tuple(self.degree))
        if self.family == "ideal" and self.coefficients:
            raise ParameterError("ideal curve takes no coefficients")
        if self.family == "saturating" and len(self.coefficients) != 2:
            raise ParameterError("saturating curve needs coefficients (a, k)")
        if self.family == "polynomial" and len(self.coefficients) != _n_poly_terms(self.degree):
            raise ParameterError(
                f"polynomial of degree {self.degree} needs {_n_poly_terms(self.degree)} coefficients"
            )

    @classmethod
    def ideal(cls, v_max: float = np.inf, v_min: float = 0.0) -> "CurveModel":
        return cls("ideal", (), v_max, v_min)

    @classmethod
    def saturating(cls, v_max: float = DEFAULT_V_MAX, k: float = DEFAULT_K,
                   v_min: float = 0.0) -> "CurveModel":
        return cls("saturating", (v_max, k), v_max, v_min)

    def __call__(self, w, x) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        x = np.asarray(x, dtype=np.float64)
        if self.family == "ideal":
            return w * x
        if self.family == "saturating":
            a, k = self.coefficients
            return a * -np.expm1(-k * w * x)
        if isinstance(self.degree, tuple):
            dw, dx = self.degree
            c = np.asarray(self.coefficients).reshape(dw + 1, dx + 1)
            return np.polynomial.polynomial.polyval2d(w, x, c)
        return np.polynomial.polynomial.polyval(w * x, self.coefficients)

    @property
    def small_signal_gain(self) -> float:
        """Slope of the curve along ``w*x`` at the origin."""
        if self.family == "ideal":
            return 1.0
        if self.family == "saturating":
            a, k = self.coefficients
            return a * k
        if isinstance(self.degree, tuple):
            dw, dx = self.degree
            if dw < 1 or dx < 1:
                return 0.0
            return self.coefficients[1 * (dx + 1) + 1]
        return self.coefficients[1] if len(self.coefficients) > 1 else 0.0

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "coefficients": list(self.coefficients),
            "v_max": None if np.isinf(self.v_max) else self.v_max,
            "v_min": self.v_min,
            "degree": list(self.degree) if isinstance(self.degree, tuple) else self.degree,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CurveModel":
        v_max = d.get("v_max")
        return cls(d["family"], tuple(d.get("coefficients", ())),
                   np.inf if v_max is None else float(v_max),
                   float(d.get("v_min", 0.0)), d.get("degree"))


def _n_poly_terms(degree) -> int:
    if isinstance(degree, (tuple, list)):
        dw, dx = degree
        return (dw + 1) * (dx + 1)
    if degree is None:
        return 0
    return int(degree) + 1


def behavioral_pixel_model(w, x, v_max: float = DEFAULT_V_MAX, k: float = DEFAULT_K) -> np.ndarray:
    """Synthetic pixel output voltage for bank weight ``w >= 0`` and pixel ``x`` in [0, 1]."""
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if np.any(w < 0):
        raise ParameterError("pixel weights must be non-negative")
    if np.any(x < 0) or np.any(x > 1):
        raise ParameterError("pixel input must lie in [0, 1]")
    return v_max * -np.expm1(-k * w * x)


def fit_curve(samples, family: str = "polynomial", degree=3,
              v_max: float = DEFAULT_V_MAX, v_min: float = 0.0):
    """Least-squares fit of a :class:`CurveModel` to ``(w, x, volts)`` samples.

    Returns ``(model, rmse)``.
    """
    s = np.asarray(samples, dtype=np.float64)
    if s.ndim != 2 or s.shape[1] != 3:
        raise FitError(f"samples must be an (n, 3) array of (w, x, volts), got {s.shape}")
    w, x, v = s.T
    if family == "polynomial":
        if isinstance(degree, (tuple, list)):
            dw, dx = degree
            design = np.stack([w ** i * x ** j for i in range(dw + 1) for j in range(dx + 1)], axis=1)
            degree = (int(dw), int(dx))
        else:
            degree = int(degree)
            u = w * x
            design = np.stack([u ** i for i in range(degree + 1)], axis=1)
        n_coef = design.shape[1]
        if len(s) < n_coef:
            raise FitError(f"{len(s)} samples cannot determine {n_coef} coefficients")
        coef, _, rank, sv = np.linalg.lstsq(design, v, rcond=None)
        if rank < n_coef:
            raise FitError(
                f"rank-deficient design matrix: rank {rank} < {n_coef} coefficients "
                f"(smallest singular value {sv.min():.3g}); samples do not span the basis"
            )
        model = CurveModel("polynomial", tuple(coef), v_max, v_min, degree)
    elif family == "saturating":
        if len(s) < 2:
            raise FitError(f"{len(s)} samples cannot determine 2 coefficients")
        u = w * x
        if np.ptp(u) == 0:
            raise FitError("all samples share one w*x value; saturating fit is rank-deficient")
        a0 = max(float(v.max()), 1e-12)
        slope0 = float(np.polyfit(u, v, 1)[0]) if np.ptp(u) > 0 else 1.0
        k0 = max(slope0 / a0, 1e-6)
        try:
            (a, k), _ = curve_fit(lambda uu, a, k: a * -np.expm1(-k * uu), u, v,
                                  p0=(a0, k0), maxfev=20000, xtol=1e-14, ftol=1e-14)
        except (RuntimeError, ValueError) as exc:
            raise FitError(f"saturating fit failed: {exc}") from exc
        model = CurveModel("saturating", (a, k), v_max, v_min)
    else:
        raise FitError(f"cannot fit family {family!r}; choose 'polynomial' or 'saturating'")
    resid = model(w, x) - v
    return model, float(np.sqrt(np.mean(resid ** 2)))


def sample_grid(n: int = 50, w_max: float = 1.0, v_max: float = DEFAULT_V_MAX,
                k: float = DEFAULT_K) -> np.ndarray:
    """``n*n`` samples of the behavioural generator over ``[0, w_max] x [0, 1]``."""
    ww, xx = np.meshgrid(np.linspace(0, w_max, n), np.linspace(0, 1, n), indexing="ij")
    vv = behavioral_pixel_model(ww, xx, v_max, k)
    return np.stack([ww.ravel(), xx.ravel(), vv.ravel()], axis=1)


@dataclass(frozen=True)
class WeightBanks:
    positive: np.ndarray
    negative: np.ndarray

    def __post_init__(self):
        if self.positive.shape != self.negative.shape:
            raise DimensionError("bank shapes differ")
        if np.any(self.positive < 0) or np.any(self.negative < 0):
            raise ParameterError("bank weights must be non-negative")
        if np.any((self.positive != 0) & (self.negative != 0)):
            raise ParameterError("a weight cannot sit in both banks")

    def signed(self) -> np.ndarray:
        return self.positive - self.negative


def split_weights(theta) -> WeightBanks:
    theta = np.asarray(theta)
    if not np.all(np.isfinite(theta)):
        raise ParameterError("weights must be finite")
    pos = np.maximum(theta, 0)
    neg = np.maximum(-theta, 0)
    # max(-0.0, 0) keeps the sign bit; normalise so both banks hold +0.0
    return WeightBanks(pos + 0.0, neg + 0.0)


def quantize_weights(theta, bits: Optional[int]) -> np.ndarray:
    """Symmetric uniform per-tensor quantisation, round half to even."""
    theta = np.asarray(theta, dtype=np.float64)
    if bits is None:
        return theta
    if bits < 2:
        raise ParameterError("symmetric quantisation needs at least 2 bits")
    levels = 2 ** (bits - 1) - 1
    peak = np.abs(theta).max()
    if peak == 0:
        return theta.copy()
    scale = peak / levels
    return np.round(theta / scale) * scale


def pixel_accumulate(patch, bank, curve: CurveModel) -> float:
    """Bit-line voltage of one accumulation phase: clamp(sum_i f(bank_i, patch_i))."""
    patch = np.asarray(patch, dtype=np.float64)
    bank = np.asarray(bank, dtype=np.float64)
    if patch.shape != bank.shape:
        raise DimensionError(f"patch {patch.shape} and bank {bank.shape} differ")
    return float(np.clip(curve(bank, patch).sum(), curve.v_min, curve.v_max))


def cds_subtract(v_pos, v_neg, noise_sigma: float = 0.0,
                 rng: Optional[np.random.Generator] = None):
    """Two-phase CDS: phase I holds ``v_neg``, phase II samples ``v_pos``."""
    diff = np.asarray(v_pos, dtype=np.float64) - np.asarray(v_neg, dtype=np.float64)
    if noise_sigma > 0:
        if rng is None:
            raise ParameterError("noise requires an explicit random generator")
        diff = diff + rng.normal(0.0, noise_sigma, size=np.shape(diff))
    return diff if np.ndim(diff) else float(diff)


def comparator(diff, trip_point):
    """1 where ``diff >= trip_point`` (ties spike), else 0."""
    return (np.asarray(diff) >= np.asarray(trip_point)).astype(np.uint8)


@dataclass(frozen=True)
class BNParams:
    gamma: np.ndarray
    beta: np.ndarray
    mu: np.ndarray
    sigma2: np.ndarray
    eps: float = 1e-5

    def __post_init__(self):
        for name in ("gamma", "beta", "mu", "sigma2"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.eps <= 0:
            raise ParameterError("eps must be positive")
        if np.any(self.sigma2 < 0):
            raise ParameterError("sigma2 must be non-negative")

    def affine(self):
        return bn_affine(self.gamma, self.beta, self.mu, self.sigma2, self.eps)


@dataclass(frozen=True)
class FusedFrontend:
    """Deployable in-sensor layer: weight banks, trip points, curve and geometry.

    ``weight_ref`` maps bank weights to normalised conductances (``w / weight_ref``)
    and ``voltage_scale`` converts one unit of digital activation to bit-line
    volts; for the ideal, unclamped curve both are 1.
    """

    banks: WeightBanks
    trip_points: np.ndarray
    v_th: float
    curve: CurveModel = field(default_factory=CurveModel.ideal)
    stride: int = 1
    padding: int = 0
    pool_window: int = 1
    voltage_scale: float = 1.0
    weight_ref: float = 1.0
    noise_sigma: float = 0.0
    quant_bits: Optional[int] = None

    def __post_init__(self):
        if self.stride < 1 or self.pool_window < 1:
            raise ParameterError("stride and pool_window must be >= 1")
        if self.trip_points.shape != (self.banks.positive.shape[0],):
            raise DimensionError("one trip point per output channel required")
        if self.weight_ref <= 0:
            raise ParameterError("weight_ref must be positive")

    @property
    def out_channels(self) -> int:
        return self.banks.positive.shape[0]

    def output_shape(self, in_shape: Sequence[int]) -> tuple:
        _, h, w = in_shape
        kh, kw = self.banks.positive.shape[2:]
        ho = conv_output_size(h, kh, self.stride, self.padding) // self.pool_window
        wo = conv_output_size(w, kw, self.stride, self.padding) // self.pool_window
        return (self.out_channels, ho, wo)

    def with_curve(self, curve: CurveModel, weight_ref: Optional[float] = None) -> "FusedFrontend":
        """Same banks re-targeted at another transfer curve (trip points rescaled)."""
        b = self.v_th - self.trip_points / self.voltage_scale
        ref = full_scale_weight_ref(self.banks, curve) if weight_ref is None else weight_ref
        scale = curve.small_signal_gain / ref
        return FusedFrontend(self.banks, scale * (self.v_th - b), self.v_th, curve,
                             self.stride, self.padding, self.pool_window, scale, ref,
                             self.noise_sigma, self.quant_bits)


def full_scale_weight_ref(banks: WeightBanks, curve: CurveModel) -> float:
    """Weight normalisation so the largest possible ideal phase sum reaches full scale.

    Unclamped ideal curves use 1 (no normalisation).  Otherwise the busiest bank,
    driven by an all-ones patch, maps to ``v_max - v_min`` under the curve's
    small-signal gain, so the linear model never engages the clamp.
    """
    span = curve.v_max - curve.v_min
    if not np.isfinite(span):
        return 1.0
    c = banks.positive.shape[0]
    load = max(banks.positive.reshape(c, -1).sum(axis=1).max(),
               banks.negative.reshape(c, -1).sum(axis=1).max())
    if load == 0:
        return 1.0
    return float(curve.small_signal_gain * load / span)


def fuse_bn(theta, bn: BNParams, v_th: float, curve: Optional[CurveModel] = None,
            stride: int = 1, padding: int = 0, pool_window: int = 1,
            quant_bits: Optional[int] = None, weight_ref: Optional[float] = None,
            noise_sigma: float = 0.0) -> FusedFrontend:
    """Fold batch norm into the weight banks and the comparator trip points.

    Weights become ``A[c] * theta[c]`` (then optionally quantised and split);
    trip points become ``voltage_scale * (v_th - B[c])``.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 4:
        raise DimensionError(f"theta must be [C_out, C_in, kH, kW], got {theta.shape}")
    curve = CurveModel.ideal() if curve is None else curve
    if bn.gamma.shape != (theta.shape[0],):
        raise DimensionError(
            f"batch norm has {bn.gamma.shape[0]} channels, theta has {theta.shape[0]}"
        )
    a, b = bn.affine()
    fused = quantize_weights(a[:, None, None, None] * theta, quant_bits)
    banks = split_weights(fused)
    ref = full_scale_weight_ref(banks, curve) if weight_ref is None else float(weight_ref)
    gain = curve.small_signal_gain
    if gain <= 0:
        raise ParameterError("curve has no positive small-signal gain; cannot place trip points")
    scale = gain / ref
    trips = scale * (float(v_th) - b)
    return FusedFrontend(banks, trips, float(v_th), curve, stride, padding, pool_window,
                         scale, ref, noise_sigma, quant_bits)


def phase_voltages(image, fe: FusedFrontend, chunk: int = 64):
    """Per-phase bit-line voltages ``(v_pos, v_neg)``, each ``[N, C_out, H', W']``."""
    x = np.asarray(image, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4:
        raise DimensionError(f"image must be [C, H, W] or [N, C, H, W], got {np.shape(image)}")
    pos = fe.banks.positive
    if x.shape[1] != pos.shape[1]:
        raise DimensionError(f"image has {x.shape[1]} channels, banks expect {pos.shape[1]}")
    kh, kw = pos.shape[2:]
    if kh > x.shape[2] + 2 * fe.padding or kw > x.shape[3] + 2 * fe.padding:
        raise DimensionError("kernel larger than padded image")
    c = pos.shape[0]
    wp = pos.reshape(c, -1) / fe.weight_ref
    wn = fe.banks.negative.reshape(c, -1) / fe.weight_ref
    curve = fe.curve
    outs_p, outs_n = [], []
    for start in range(0, x.shape[0], chunk):
        cols = im2col(x[start:start + chunk], kh, kw, fe.stride, fe.padding)  # [n, ho, wo, K]
        if curve.family == "ideal":
            vp = cols @ wp.T
            vn = cols @ wn.T
        else:
            vp = curve(wp[None, None, None], cols[:, :, :, None, :]).sum(axis=-1)
            vn = curve(wn[None, None, None], cols[:, :, :, None, :]).sum(axis=-1)
        outs_p.append(np.clip(vp, curve.v_min, curve.v_max).transpose(0, 3, 1, 2))
        outs_n.append(np.clip(vn, curve.v_min, curve.v_max).transpose(0, 3, 1, 2))
    vp = np.concatenate(outs_p)
    vn = np.concatenate(outs_n)
    return (vp[0], vn[0]) if single else (vp, vn)


def frontend_forward(image, fe: FusedFrontend, rng: Optional[np.random.Generator] = None,
                     return_prepool: bool = False):
    """Binary spike map ``[C_out, H'', W'']`` (or batched) produced by the sensor."""
    x = np.asarray(image)
    if np.any(x < 0) or np.any(x > 1):
        raise ParameterError("image must be normalised to [0, 1]")
    vp, vn = phase_voltages(x, fe)
    diff = cds_subtract(vp, vn, fe.noise_sigma, rng)
    trip = fe.trip_points.reshape((-1, 1, 1))
    spikes = comparator(diff, trip)
    out = maxpool2d(spikes, fe.pool_window) if fe.pool_window > 1 else spikes
    if return_prepool:
        return out, spikes
    return out
