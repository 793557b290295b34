"""Physical conditioning features: per-pixel maps, global stats, spectral bands.

The SDR input is linearized first (BT.709 EOTF, then gamut mapped to
BT.2020) so every descriptor lives in the same physical space as the HDR
target.
"""

from dataclasses import dataclass

import numpy as np

from . import colorimetry as cm
from . import tensorcore as tc
from .errors import ConfigError, DimensionError, TagError


@dataclass
class PhysFeatures:
    y_map: np.ndarray  # H x W luminance
    loggrad_map: np.ndarray  # H x W, log(1 + |grad Y|)
    sat_map: np.ndarray  # H x W saturation in [0, 1]
    t_phys: np.ndarray  # H x W x C mixed descriptor
    s_g: np.ndarray  # [mean, std, p95, p99]
    g: np.ndarray  # global embedding


@dataclass
class SpectralDescriptor:
    r: np.ndarray  # band energies, DC-first


def linearize_sdr(sdr):
    """Decode an encoded BT.709 SDR frame to linear BT.2020, relative [0, 1]."""
    if sdr.tag.transfer is not cm.Transfer.GAMMA709 or sdr.tag.primaries is not cm.Primaries.BT709:
        raise TagError("expected a Gamma709/BT709 SDR frame")
    linear = cm.apply_transfer(sdr, cm.Direction.DECODE)
    relative = linear.with_pixels(
        linear.pixels / linear.tag.peak_nits,
        cm.ColorSpaceTag(cm.Primaries.BT709, cm.Transfer.LINEAR, 1.0),
    )
    wide, _ = cm.convert_gamut(relative, cm.Primaries.BT2020)
    return wide


def gradient_magnitude(y_map):
    """Central differences with replicate borders."""
    gy_r = np.empty_like(y_map)
    gy_c = np.empty_like(y_map)
    padded = np.pad(y_map, 1, mode="edge")
    gy_r[:] = (padded[2:, 1:-1] - padded[:-2, 1:-1]) / 2.0
    gy_c[:] = (padded[1:-1, 2:] - padded[1:-1, :-2]) / 2.0
    return np.sqrt(gy_r**2 + gy_c**2)


def saturation(rgb):
    mx = np.max(rgb, axis=-1)
    mn = np.min(rgb, axis=-1)
    return (mx - mn) / (mx + 1e-6)


def conv3x3(stack, weights):
    """3x3 convolution with replicate padding; stack is H x W x Cin."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 4 or weights.shape[1:3] != (3, 3) or weights.shape[3] != stack.shape[2]:
        raise DimensionError(f"conv weights must be Cx3x3x{stack.shape[2]}")
    padded = np.pad(stack, ((1, 1), (1, 1), (0, 0)), mode="edge")
    h, w, cin = stack.shape
    out = np.zeros((h, w, weights.shape[0]))
    for dr in range(3):
        for dc in range(3):
            patch = padded[dr : dr + h, dc : dc + w, :]
            out += np.einsum("hwi,ci->hwc", patch, weights[:, dr, dc, :])
    return out


def global_stats(y_map):
    """[mean, population std, p95, p99] with linear-interpolated percentiles."""
    flat = np.asarray(y_map, dtype=np.float64).reshape(-1)
    if flat.size == 0:
        raise DimensionError("global_stats needs a nonempty map")
    p95, p99 = np.percentile(flat, [95.0, 99.0])
    return np.array([np.mean(flat), np.std(flat), p95, p99])


def global_mlp(s_g, w1, b1, w2, b2):
    """Two-layer perceptron over the global stats vector (tanh hidden)."""
    hidden = np.tanh(w1 @ s_g + b1)
    return w2 @ hidden + b2


def extract_phys(sdr, conv_weights, mlp_weights=None):
    """Assemble physical maps, the mixed conv descriptor, and global stats."""
    wide = linearize_sdr(sdr)
    y = cm.luma2020(wide)
    loggrad = np.log1p(gradient_magnitude(y))
    sat = saturation(wide.pixels)
    stack = np.stack([y, loggrad, sat], axis=-1)
    t_phys = conv3x3(stack, conv_weights)
    s_g = global_stats(y)
    if mlp_weights is not None:
        g = global_mlp(s_g, *mlp_weights)
    else:
        g = s_g.copy()
    return PhysFeatures(y_map=y, loggrad_map=loggrad, sat_map=sat, t_phys=t_phys, s_g=s_g, g=g)


def spectral_descriptor(y_map, k_bands=8):
    """Radial band energies of the luminance power spectrum.

    Bands are equal-width annuli in normalized frequency [0, 0.5]; the
    conjugate-symmetric half-plane is double counted except the DC and
    Nyquist columns, and energies are normalized so their sum equals the
    spatial mean square (Parseval).
    """
    if k_bands < 2:
        raise ConfigError("k_bands must be at least 2")
    y_map = np.asarray(y_map, dtype=np.float64)
    rows, cols = y_map.shape
    spec = tc.rfft2(y_map)
    power = np.abs(spec.bins) ** 2
    weights = np.full(spec.bins.shape[1], 2.0)
    weights[0] = 1.0
    if cols % 2 == 0:
        weights[-1] = 1.0
    fr = np.fft.fftfreq(rows)[:, None]
    fc = np.arange(spec.bins.shape[1])[None, :] / cols
    radius = np.sqrt(fr**2 + fc**2)
    band = np.minimum((radius / 0.5 * k_bands).astype(int), k_bands - 1)
    energies = np.zeros(k_bands)
    np.add.at(energies, band.reshape(-1), (power * weights[None, :]).reshape(-1))
    return SpectralDescriptor(r=energies / (rows * cols) ** 2)
