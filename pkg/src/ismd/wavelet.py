"""DWT denoising and Morlet continuous wavelet transform.

The DWT side delegates the filter bank to PyWavelets. The CWT is computed
here as an FFT convolution with the sampled, scaled and conjugated mother
wavelet, which makes it agree with direct summation of the wavelet integral
to rounding error.
"""
from __future__ import annotations

import functools
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pywt
from scipy import fft as sfft

from .io import atomic_write_bytes, atomic_write_text

DEFAULT_FAMILY = "db4"
DEFAULT_MODE = "symmetric"


def default_levels(n: int) -> int:
    return max(1, min(4, int(math.floor(math.log2(n))) - 3))


@dataclass
class DwtDecomposition:
    approx: list[np.ndarray]
    details: list[np.ndarray]
    family: str
    levels: int
    original_length: int
    mode: str = DEFAULT_MODE

    def coeffs(self) -> list[np.ndarray]:
        """PyWavelets ordering: [cA_n, cD_n, ..., cD_1]."""
        return [self.approx[-1]] + self.details[::-1]


def _check_family(family: str):
    if family not in pywt.wavelist(kind="discrete"):
        raise ValueError(f"unknown wavelet family {family!r}")


def dwt_decompose(x, family: str = DEFAULT_FAMILY, levels: int | None = None,
                  mode: str = DEFAULT_MODE) -> DwtDecomposition:
    """Pyramidal decomposition.

    ``approx[j]`` and ``details[j]`` hold level ``j + 1`` (finest first).
    """
    x = np.asarray(x, dtype=float)
    _check_family(family)
    n = len(x)
    if levels is None:
        levels = default_levels(n)
    if levels < 1:
        raise ValueError("levels must be >= 1")
    if n < 2 ** levels:
        raise ValueError(f"input of length {n} too short for {levels} levels (need >= {2 ** levels})")
    approx, details = [], []
    a = x
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        for _ in range(levels):
            a, d = pywt.dwt(a, family, mode=mode)
            approx.append(a)
            details.append(d)
    return DwtDecomposition(approx, details, family, levels, n, mode)


def dwt_reconstruct(dec: DwtDecomposition) -> np.ndarray:
    if len(dec.details) != dec.levels or not dec.approx:
        raise ValueError("decomposition has inconsistent level count")
    a = dec.approx[-1]
    for level in range(dec.levels - 1, -1, -1):
        d = dec.details[level]
        if len(a) > len(d):
            # odd-length levels leave one extra sample after upsampling
            a = a[:len(d)]
        if len(a) != len(d):
            raise ValueError(f"coefficient shape mismatch at level {level + 1}: {len(a)} vs {len(d)}")
        a = pywt.idwt(a, d, dec.family, mode=dec.mode)
    if len(a) < dec.original_length:
        raise ValueError("coefficients too short for the recorded original length")
    return a[:dec.original_length]


@dataclass(frozen=True)
class DenoisePolicy:
    kind: str = "soft"                      # soft | hard
    threshold: float | str = "universal"    # "universal" or a fixed value

    def __post_init__(self):
        if self.kind not in ("soft", "hard"):
            raise ValueError(f"threshold kind must be soft or hard, got {self.kind!r}")
        if isinstance(self.threshold, str):
            if self.threshold != "universal":
                raise ValueError(f"unknown threshold rule {self.threshold!r}")
        elif self.threshold < 0:
            raise ValueError("threshold must be >= 0")


@dataclass(frozen=True)
class DenoiseInfo:
    threshold: float
    sigma: float
    levels: int
    family: str
    kind: str


def noise_sigma(dec: DwtDecomposition) -> float:
    """Robust noise estimate: median |finest detail| / 0.6745."""
    return float(np.median(np.abs(dec.details[0])) / 0.6745)


def denoise(x, family: str = DEFAULT_FAMILY, levels: int | None = None,
            policy: DenoisePolicy = DenoisePolicy()) -> tuple[np.ndarray, DenoiseInfo]:
    x = np.asarray(x, dtype=float)
    dec = dwt_decompose(x, family, levels)
    sigma = noise_sigma(dec)
    if policy.threshold == "universal":
        thr = sigma * math.sqrt(2.0 * math.log(len(x)))
    else:
        thr = float(policy.threshold)
    if thr > 0:
        dec.details = [pywt.threshold(d, thr, mode=policy.kind) for d in dec.details]
    return dwt_reconstruct(dec), DenoiseInfo(thr, sigma, dec.levels, family, policy.kind)


# --- continuous transform -------------------------------------------------

DEFAULT_OMEGA0 = 6.0
_SUPPORT = 8.0  # Gaussian envelope cut at 8 sigma, exp(-32) ~ 1e-14


def morlet(t, omega0: float = DEFAULT_OMEGA0) -> np.ndarray:
    """Complex Morlet with the admissibility correction term."""
    t = np.asarray(t, dtype=float)
    return np.pi ** -0.25 * (np.exp(1j * omega0 * t) - np.exp(-0.5 * omega0 ** 2)) * np.exp(-0.5 * t * t)


def center_frequency(scale, sample_rate: float, omega0: float = DEFAULT_OMEGA0):
    """Hz for a scale measured in samples."""
    return omega0 / (2.0 * np.pi) * sample_rate / np.asarray(scale, dtype=float)


def scale_grid(sample_rate: float, f_min: float, f_max: float, n_scales: int,
               omega0: float = DEFAULT_OMEGA0) -> np.ndarray:
    """Log-spaced scales, highest frequency first."""
    if not (0 < f_min < f_max <= sample_rate / 2.0):
        raise ValueError(f"invalid band: need 0 < f_min < f_max <= {sample_rate / 2.0}, got [{f_min}, {f_max}]")
    if n_scales < 2:
        raise ValueError("n_scales must be >= 2")
    freqs = np.geomspace(f_max, f_min, int(n_scales))
    return omega0 / (2.0 * np.pi) * sample_rate / freqs


@dataclass
class Scalogram:
    magnitudes: np.ndarray
    scales: np.ndarray
    times: np.ndarray
    sample_rate: float
    wavelet: str = "morlet"
    omega0: float = DEFAULT_OMEGA0
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.magnitudes.shape != (len(self.scales), len(self.times)):
            raise ValueError("magnitude matrix does not match scales x times")

    @property
    def frequencies(self) -> np.ndarray:
        return center_frequency(self.scales, self.sample_rate, self.omega0)


@functools.lru_cache(maxsize=12)
def _kernel_bank(n: int, scales: tuple, omega0: float):
    a = np.asarray(scales, dtype=float)
    lag = int(min(math.ceil(_SUPPORT * a.max()), n - 1))
    nfft = sfft.next_fast_len(n + lag)
    j = np.arange(-lag, lag + 1)
    # W[b] = sum_n x[n] conj(psi((n - b) / a)) / sqrt(a) is x convolved with g[j] = conj(psi(-j / a)) / sqrt(a)
    g = np.conj(morlet(-j[None, :] / a[:, None], omega0)) / np.sqrt(a)[:, None]
    bank = np.zeros((len(a), nfft), dtype=complex)
    bank[:, j % nfft] = g
    return sfft.fft(bank, axis=1), nfft


def cwt_coefficients(x, scales, omega0: float = DEFAULT_OMEGA0) -> np.ndarray:
    """Complex coefficients, shape (n_scales, len(x)); scales in samples."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or len(x) == 0:
        raise ValueError("cwt needs a nonempty 1-D input")
    scales = np.asarray(scales, dtype=float)
    if scales.ndim != 1 or len(scales) == 0 or np.any(~(scales > 0)):
        raise ValueError("scales must be positive")
    n = len(x)
    bank, nfft = _kernel_bank(n, tuple(scales.tolist()), float(omega0))
    spec = sfft.fft(x, n=nfft)
    return sfft.ifft(bank * spec[None, :], axis=1)[:, :n]


def cwt(x, sample_rate: float, scales, wavelet: str = "morlet", omega0: float = DEFAULT_OMEGA0,
        n_times: int | None = None) -> Scalogram:
    """Magnitude scalogram.

    With ``n_times`` the translation grid is thinned to a uniform stride of
    ``ceil(len(x) / n_times)`` samples.
    """
    if wavelet != "morlet":
        raise ValueError(f"unsupported wavelet {wavelet!r}")
    coef = cwt_coefficients(x, scales, omega0)
    n = coef.shape[1]
    stride = 1 if not n_times else max(1, math.ceil(n / n_times))
    cols = np.arange(0, n, stride)
    return Scalogram(np.abs(coef[:, cols]), np.asarray(scales, dtype=float), cols / sample_rate,
                     float(sample_rate), wavelet, float(omega0))


def write_scalogram(sc: Scalogram, path) -> None:
    """``<path>`` gets little-endian float64 row-major data, ``<path>.json`` the header."""
    path = Path(path)
    dt = float(sc.times[1] - sc.times[0]) if len(sc.times) > 1 else 1.0 / sc.sample_rate
    header = {
        "n_scales": int(sc.magnitudes.shape[0]),
        "n_times": int(sc.magnitudes.shape[1]),
        "scales": [float(a) for a in sc.scales],
        "t0": float(sc.times[0]),
        "dt": dt,
        "wavelet": sc.wavelet,
        "omega0": float(sc.omega0),
        "sample_rate_hz": float(sc.sample_rate),
    }
    atomic_write_bytes(path, np.ascontiguousarray(sc.magnitudes, dtype="<f8").tobytes())
    atomic_write_text(path.with_name(path.name + ".json"), json.dumps(header, indent=2, sort_keys=True))


def read_scalogram(path) -> Scalogram:
    path = Path(path)
    header = json.loads(path.with_name(path.name + ".json").read_text())
    data = np.frombuffer(path.read_bytes(), dtype="<f8")
    shape = (header["n_scales"], header["n_times"])
    if data.size != shape[0] * shape[1]:
        raise ValueError(f"{path}: payload holds {data.size} values, header says {shape}")
    times = header["t0"] + header["dt"] * np.arange(shape[1])
    return Scalogram(data.reshape(shape).astype(float), np.asarray(header["scales"]), times,
                     header.get("sample_rate_hz", 1.0 / header["dt"]), header["wavelet"], header["omega0"])
