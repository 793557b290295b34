"""Full-reference HDR quality metrics in PU21 space plus DeltaE_ITP.

PSNR is computed after PQ-decoding both images to absolute nits and
applying the PU21 perceptual encoding; the code range is the PU21 value
of 10^4 cd/m^2. Identical images report the 99 dB sentinel cap.
"""

from dataclasses import dataclass, asdict

import numpy as np

from . import colorimetry as cm
from .errors import DimensionError, TagError

PSNR_CAP_DB = 99.0
REPORT_SCHEMA_VERSION = 1

# field name -> allowed JSON types, in fixed emission order
REPORT_SCHEMA = {
    "psnr_pu21": ("number",),
    "psnr_y_pu21": ("number",),
    "delta_e_itp_mean": ("number",),
    "clamp_fraction": ("number",),
    "pu21_variant": ("string",),
    "peak_nits": ("number",),
    "ssim": ("null", "number"),
    "hdr_vdp3": ("null", "number"),
    "hdr_lpips": ("null", "number"),
    "fr_hidrovqa": ("null", "number"),
    "schema_version": ("integer",),
}


def validate_report(doc):
    """Check a report dict against REPORT_SCHEMA; returns a list of problems."""
    problems = []
    for key, kinds in REPORT_SCHEMA.items():
        if key not in doc:
            problems.append(f"missing field {key}")
            continue
        val = doc[key]
        ok = (
            ("null" in kinds and val is None)
            or ("number" in kinds and isinstance(val, (int, float)) and val is not None)
            or ("integer" in kinds and isinstance(val, int))
            or ("string" in kinds and isinstance(val, str))
        )
        if not ok:
            problems.append(f"field {key} has invalid type {type(val).__name__}")
    problems.extend(f"unknown field {k}" for k in doc if k not in REPORT_SCHEMA)
    return problems


@dataclass
class MetricReport:
    psnr_pu21: float
    psnr_y_pu21: float
    delta_e_itp_mean: float
    clamp_fraction: float
    pu21_variant: str = "banding_glare"
    peak_nits: float = cm.PQ_PEAK_NITS
    # out-of-scope columns kept for schema completeness
    ssim: None = None
    hdr_vdp3: None = None
    hdr_lpips: None = None
    fr_hidrovqa: None = None
    schema_version: int = REPORT_SCHEMA_VERSION

    def to_json(self):
        return asdict(self)


def _decode_to_nits(img):
    if img.tag.transfer is not cm.Transfer.PQ or img.tag.primaries is not cm.Primaries.BT2020:
        raise TagError("metrics expect PQ/BT.2020 images")
    return cm.apply_transfer(img, cm.Direction.DECODE)


def pu21_range():
    return float(cm.pu21_encode(cm.PQ_PEAK_NITS) - cm.pu21_encode(cm.PU21_MIN_NITS))


def psnr_pu21(ref, test, luma_only=False):
    """PSNR over PU21-encoded nits, all channels or luminance only."""
    if ref.pixels.shape != test.pixels.shape:
        raise DimensionError("psnr_pu21: image extents differ")
    ref_lin = _decode_to_nits(ref)
    test_lin = _decode_to_nits(test)
    if luma_only:
        a = cm.pu21_encode(cm.luma2020(ref_lin))
        b = cm.pu21_encode(cm.luma2020(test_lin))
    else:
        a = cm.pu21_encode(ref_lin.pixels)
        b = cm.pu21_encode(test_lin.pixels)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 20.0 * np.log10(pu21_range()) - 10.0 * np.log10(mse))


def metric_report(ref, test, clamp_fraction=0.0):
    """Assemble every in-scope metric into a machine-readable report."""
    ref_lin = _decode_to_nits(ref)
    test_lin = _decode_to_nits(test)
    return MetricReport(
        psnr_pu21=psnr_pu21(ref, test, luma_only=False),
        psnr_y_pu21=psnr_pu21(ref, test, luma_only=True),
        delta_e_itp_mean=cm.delta_e_itp(ref_lin, test_lin),
        clamp_fraction=clamp_fraction,
    )
