"""Forward tone-mapping operators and the SDR degradation chain.

Each operator maps absolute HDR luminance to relative SDR-range linear
light in [0, 1]; chroma follows by luminance-ratio scaling so hue is
preserved. The full chain manufactures paired 8-bit BT.709 SDR frames
from PQ/BT.2020 HDR input, with a deterministic DCT codec proxy standing
in for real HEVC encodes at the three CRF working points.
"""

import enum
from dataclasses import dataclass, field

import numpy as np

from . import colorimetry as cm
from .errors import ConfigError, DomainError, TagError

VALID_CRF = (23, 31, 39)

# JPEG Annex K luminance quantization base, reused for all three channels
JPEG_BASE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)

# Orthonormal DCT-II basis, 8 points
_DCT_N = 8
_dct_k = np.arange(_DCT_N)[:, None]
_dct_n = np.arange(_DCT_N)[None, :]
DCT8 = np.cos(np.pi * (2 * _dct_n + 1) * _dct_k / (2 * _DCT_N)) * np.sqrt(2.0 / _DCT_N)
DCT8[0, :] /= np.sqrt(2.0)


class ToneKind(enum.Enum):
    REINHARD = "Reinhard"
    BT2446A = "BT2446A"
    BT2446C_GM = "BT2446C_GM"
    HARDCLIP_GM = "HardClipGM"
    BT2390EETF_GM = "BT2390EETF_GM"
    LOGC = "LogC"
    EXPERT_STUB = "ExpertStub"


@dataclass(frozen=True)
class ToneOperator:
    kind: ToneKind
    params: dict = field(default_factory=dict)

    def to_json(self):
        return {"kind": self.kind.value, "params": dict(self.params)}

    @classmethod
    def from_json(cls, doc):
        return cls(kind=ToneKind(doc["kind"]), params=dict(doc.get("params", {})))


@dataclass(frozen=True)
class DegradationSpec:
    tmo: ToneOperator
    crf: int | None  # None bypasses the codec proxy
    seed: int = 0

    def __post_init__(self):
        if self.crf is not None and self.crf not in VALID_CRF:
            raise ConfigError(f"crf must be one of {VALID_CRF} or None, got {self.crf}")

    def to_json(self):
        return {"tmo": self.tmo.to_json(), "crf": self.crf, "seed": self.seed}

    @classmethod
    def from_json(cls, doc):
        return cls(
            tmo=ToneOperator.from_json(doc["tmo"]),
            crf=doc.get("crf"),
            seed=int(doc.get("seed", 0)),
        )


def _curve_reinhard(lum, params):
    peak = params.get("peak_in_nits", 1000.0)
    ln = lum / peak
    return ln / (1.0 + ln)


def _curve_bt2446a(lum, params):
    """ITU-R BT.2446 method A luminance mapping, HDR peak -> SDR peak."""
    l_hdr = params.get("peak_in_nits", 1000.0)
    l_sdr = params.get("peak_out_nits", 100.0)
    yp = np.power(np.clip(lum / l_hdr, 0.0, 1.0), 1.0 / 2.4)
    rho_hdr = 1.0 + 32.0 * np.power(l_hdr / 10000.0, 1.0 / 2.4)
    rho_sdr = 1.0 + 32.0 * np.power(l_sdr / 10000.0, 1.0 / 2.4)
    yp = np.log1p((rho_hdr - 1.0) * yp) / np.log(rho_hdr)
    yc = np.where(
        yp <= 0.7399,
        1.0770 * yp,
        np.where(yp < 0.9909, -1.1510 * yp * yp + 2.7811 * yp - 0.6302, 0.5 * yp + 0.5),
    )
    ysdr = (np.power(rho_sdr, yc) - 1.0) / (rho_sdr - 1.0)
    return np.clip(np.power(ysdr, 2.4), 0.0, 1.0)


def _curve_bt2446c(lum, params):
    """BT.2446 method C style: linear segment with exponential shoulder."""
    peak = params.get("peak_in_nits", 1000.0)
    a = params.get("slope", 4.0)
    k = params.get("knee", 0.08)
    x = lum / peak
    yk = a * k
    shoulder = yk + (1.0 - yk) * (1.0 - np.exp(-a * (x - k) / (1.0 - yk)))
    return np.where(x <= k, a * x, shoulder)


def _curve_hardclip(lum, params):
    peak_out = params.get("peak_out_nits", 100.0)
    return np.clip(lum / peak_out, 0.0, 1.0)


def _curve_bt2390(lum, params):
    """BT.2390 EETF: Hermite knee roll-off applied in the PQ domain."""
    src_peak = params.get("peak_in_nits", 1000.0)
    dst_peak = params.get("peak_out_nits", 100.0)
    e_src = cm.pq_encode(src_peak)
    max_lum = cm.pq_encode(dst_peak) / e_src
    e1 = cm.pq_encode(np.clip(lum, 0.0, src_peak)) / e_src
    if max_lum >= 1.0:
        e2 = e1
    else:
        ks = 1.5 * max_lum - 0.5
        t = (e1 - ks) / (1.0 - ks)
        spline = (
            (2.0 * t**3 - 3.0 * t**2 + 1.0) * ks
            + (t**3 - 2.0 * t**2 + t) * (1.0 - ks)
            + (-2.0 * t**3 + 3.0 * t**2) * max_lum
        )
        e2 = np.where(e1 < ks, e1, spline)
    out_nits = cm.pq_decode(np.clip(e2 * e_src, 0.0, 1.0))
    return np.clip(out_nits / dst_peak, 0.0, 1.0)


def _curve_logc(lum, params):
    """LogC-style log curve with a linear toe, normalized to [0, 1]."""
    peak = params.get("peak_in_nits", 1000.0)
    a = params.get("a", 5.555556)
    b = params.get("b", 0.052272)
    c = params.get("c", 0.247190)
    d = params.get("d", 0.385537)
    cut = params.get("cut", 0.010591)
    slope = params.get("slope", 5.367655)
    off = params.get("off", 0.092809)
    x = lum / peak
    y = np.where(x > cut, c * np.log10(a * x + b) + d, slope * x + off)
    y0 = slope * 0.0 + off
    y1 = c * np.log10(a + b) + d
    return np.clip((y - y0) / (y1 - y0), 0.0, 1.0)


def _curve_expert_stub(lum, params):
    """Configurable smooth grade for pipeline testing; not a published TMO."""
    if params.get("passthrough"):
        peak = params.get("peak_in_nits", 100.0)
        return np.clip(lum / peak, 0.0, 1.0)
    peak = params.get("peak_in_nits", 1000.0)
    gamma = params.get("gamma", 0.85)
    mix = params.get("mix", 0.2)
    x = np.clip(lum / peak, 0.0, 1.0)
    return (1.0 - mix) * np.power(x, gamma) + mix * (3.0 * x * x - 2.0 * x**3)


_CURVES = {
    ToneKind.REINHARD: _curve_reinhard,
    ToneKind.BT2446A: _curve_bt2446a,
    ToneKind.BT2446C_GM: _curve_bt2446c,
    ToneKind.HARDCLIP_GM: _curve_hardclip,
    ToneKind.BT2390EETF_GM: _curve_bt2390,
    ToneKind.LOGC: _curve_logc,
    ToneKind.EXPERT_STUB: _curve_expert_stub,
}


def tone_curve(op, lum_nits):
    """Evaluate the operator's luminance curve on absolute nits."""
    lum = np.asarray(lum_nits, dtype=np.float64)
    if np.any(lum < 0.0):
        raise DomainError("tone curve input must be nonnegative")
    return _CURVES[op.kind](lum, op.params)


def tone_map(op, img):
    """Tone map a linear BT.2020 HDR image to relative [0, 1] linear light."""
    if img.tag.transfer is not cm.Transfer.LINEAR or img.tag.primaries is not cm.Primaries.BT2020:
        raise TagError("tone_map expects linear BT.2020 input")
    if np.any(img.pixels < 0.0):
        raise DomainError("tone_map input must be nonnegative")
    lum = cm.luma2020(img)
    y = tone_curve(op, lum)
    ratio = np.where(lum > 0.0, y / np.maximum(lum, 1e-12), 0.0)
    out = np.clip(img.pixels * ratio[..., None], 0.0, 1.0)
    tag = cm.ColorSpaceTag(cm.Primaries.BT2020, cm.Transfer.LINEAR, 1.0)
    return cm.TaggedImage(out, tag)


def quantize(img, bits):
    """Snap encoded samples to the 2^bits - 1 uniform grid (half away from zero)."""
    if bits not in (8, 10):
        raise ConfigError(f"unsupported bit depth {bits}")
    if img.tag.transfer is cm.Transfer.LINEAR:
        raise TagError("quantize expects an encoded image")
    levels = float(2**bits - 1)
    out = np.floor(img.pixels * levels + 0.5) / levels
    return img.with_pixels(out)


def _blockwise_dct_quant(plane, step):
    h, w = plane.shape
    ph = (-h) % _DCT_N
    pw = (-w) % _DCT_N
    padded = np.pad(plane, ((0, ph), (0, pw)), mode="edge")
    hh, ww = padded.shape
    blocks = padded.reshape(hh // _DCT_N, _DCT_N, ww // _DCT_N, _DCT_N)
    blocks = blocks.transpose(0, 2, 1, 3).reshape(-1, _DCT_N, _DCT_N)
    coefs = np.einsum("ik,nkl,jl->nij", DCT8, blocks, DCT8)
    # deadzone: round magnitudes toward zero so AC energy never grows; DC kept
    quant = np.sign(coefs) * np.floor(np.abs(coefs) / step[None, :, :]) * step[None, :, :]
    quant[:, 0, 0] = coefs[:, 0, 0]
    rec = np.einsum("ki,nkl,lj->nij", DCT8, quant, DCT8)
    rec = rec.reshape(hh // _DCT_N, ww // _DCT_N, _DCT_N, _DCT_N)
    rec = rec.transpose(0, 2, 1, 3).reshape(hh, ww)
    return rec[:h, :w]


def crf_quality_scale(crf):
    """Quantizer scale: doubles every 6 CRF steps, 1.0 at CRF 23."""
    return 2.0 ** ((crf - 23) / 6.0)


def codec_proxy(img, crf):
    """Deterministic stand-in for lossy encoding: per-channel 8x8 DCT quantization."""
    if crf is None:
        return img
    if crf not in VALID_CRF:
        raise ConfigError(f"crf must be one of {VALID_CRF}, got {crf}")
    step = (JPEG_BASE / 255.0) * 0.25 * crf_quality_scale(crf)
    out = np.empty_like(img.pixels)
    for ch in range(3):
        out[:, :, ch] = _blockwise_dct_quant(img.pixels[:, :, ch], step)
    return img.with_pixels(np.clip(out, 0.0, 1.0))


def degrade(img_pq, spec):
    """Full HDR->SDR chain: PQ decode, tone map, gamut clamp, encode, quantize, codec."""
    if img_pq.tag.transfer is not cm.Transfer.PQ or img_pq.tag.primaries is not cm.Primaries.BT2020:
        raise TagError("degrade expects a PQ/BT.2020 image")
    linear = cm.apply_transfer(img_pq, cm.Direction.DECODE)
    mapped = tone_map(spec.tmo, linear)
    sdr709, _ = cm.convert_gamut(mapped, cm.Primaries.BT709)
    clipped = sdr709.with_pixels(
        np.clip(sdr709.pixels, 0.0, 1.0),
        cm.ColorSpaceTag(cm.Primaries.BT709, cm.Transfer.LINEAR, 100.0),
    )
    # encode operates on relative linear light; peak is the SDR nominal 100 nits
    encoded = cm.encode_transfer(
        clipped.with_pixels(clipped.pixels * 100.0, clipped.tag), cm.Transfer.GAMMA709
    )
    quantized = quantize(encoded, 8)
    return codec_proxy(quantized, spec.crf)
