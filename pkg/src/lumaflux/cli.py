"""Command-line surface: synthesize, fit-expand, metrics, features, adapter-demo.

Exit codes: 0 ok, 2 I/O failure, 3 invalid config, 4 numerical failure.
LUMAFLUX_THREADS caps frame-level parallelism; outputs are independent of
the worker count because every frame derives its own seed.
"""

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from . import adapters as ad
from . import colorimetry as cm
from . import features as ft
from . import metrics as mt
from . import pfm
from . import rqs
from . import tonemap as tm
from .errors import ConfigError, FitError, LumaFluxError

DEFAULT_CONFIG = {
    "tmos": [
        {"kind": "Reinhard", "params": {"peak_in_nits": 1000.0}},
        {"kind": "BT2446A", "params": {}},
        {"kind": "BT2446C_GM", "params": {}},
        {"kind": "HardClipGM", "params": {}},
        {"kind": "BT2390EETF_GM", "params": {}},
        {"kind": "LogC", "params": {}},
        {"kind": "ExpertStub", "params": {"gamma": 0.85}},
        {"kind": "ExpertStub", "params": {"gamma": 1.1, "mix": 0.35}},
    ],
    "crfs": [23, 31, 39],
    "seed": 0,
    "spline_knots": 8,
    "k_bands": 8,
    "peak_nits": 1000.0,
    "lambda_l1": 1.0,
    "lambda_rgb": 0.0,
    "lambda_smooth": 1e-2,
    "fit_iterations": 800,
    "fit_samples": 16384,
    "feature_seed": 7,
    "output_dir": "out",
}


def load_config(path=None, overrides=None):
    cfg = dict(DEFAULT_CONFIG)
    if path:
        with open(path) as fh:
            cfg.update(json.load(fh))
    for key, val in (overrides or {}).items():
        if val is not None:
            cfg[key] = val
    return cfg


def _max_workers():
    try:
        return max(1, int(os.environ.get("LUMAFLUX_THREADS", "4")))
    except ValueError:
        return 4


def cmd_synthesize(args):
    cfg = load_config(args.config, {"seed": args.seed, "output_dir": args.output_dir})
    if not cfg["tmos"]:
        print("config error: empty tmo list", file=sys.stderr)
        return 3
    try:
        crfs = [int(c) for c in cfg["crfs"]]
        specs = []
        for i, tmo_doc in enumerate(cfg["tmos"]):
            op = tm.ToneOperator.from_json(tmo_doc)
            for crf in crfs:
                idx = len(specs)
                specs.append((idx, tm.DegradationSpec(tmo=op, crf=crf, seed=cfg["seed"] ^ idx)))
    except (ConfigError, KeyError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    try:
        hdr = pfm.read_tagged(args.hdr_input)
    except (OSError, LumaFluxError) as exc:
        print(f"cannot read {args.hdr_input}: {exc}", file=sys.stderr)
        return 2
    if hdr.tag.transfer is not cm.Transfer.PQ or hdr.tag.primaries is not cm.Primaries.BT2020:
        print("input must carry a PQ/BT.2020 tag", file=sys.stderr)
        return 2
    os.makedirs(cfg["output_dir"], exist_ok=True)
    # hash only the generative parameters, not where the frames land
    hash_cfg = {k: v for k, v in cfg.items() if k != "output_dir"}

    def run(job):
        idx, spec = job
        sdr = tm.degrade(hdr, spec)
        name = f"sdr_{idx:03d}_{spec.tmo.kind.value}_crf{spec.crf}.pfm"
        path = os.path.join(cfg["output_dir"], name)
        pfm.write_tagged(path, sdr, seed=spec.seed, config=hash_cfg,
                         extra={"degradation": spec.to_json()})
        return path

    with ThreadPoolExecutor(max_workers=_max_workers()) as pool:
        paths = list(pool.map(run, specs))
    print(json.dumps({"frames": sorted(paths)}, indent=2))
    return 0


def expand_sdr(sdr, params, peak_nits):
    """Apply a fitted tone spline to an SDR frame; returns linear BT.2020 nits."""
    wide = ft.linearize_sdr(sdr)
    y_sdr = cm.luma2020(wide)
    y_hat = rqs.rqs_forward(params, y_sdr)
    ratio = np.where(y_sdr > 1e-8, y_hat / np.maximum(y_sdr, 1e-8), 0.0)
    rgb = wide.pixels * ratio[..., None]
    nits = np.clip(rgb * peak_nits, 0.0, cm.PQ_PEAK_NITS)
    tag = cm.ColorSpaceTag(cm.Primaries.BT2020, cm.Transfer.LINEAR, cm.PQ_PEAK_NITS)
    return cm.TaggedImage(nits, tag)


def refine_chroma(expanded, ref_linear):
    """Least-squares 1x1 mix of the color-difference channels against the reference."""
    wr, wg, wb = cm.LUMA_WEIGHTS_2020
    def to_yuv(px):
        y = px @ cm.LUMA_WEIGHTS_2020
        return y, px[..., 2] - y, px[..., 0] - y

    ye, ue, ve = to_yuv(expanded.pixels)
    _, ur, vr = to_yuv(ref_linear.pixels)
    a = np.stack([ue.reshape(-1), ve.reshape(-1), np.ones(ue.size)], axis=1)
    coef, *_ = np.linalg.lstsq(a, np.stack([ur.reshape(-1), vr.reshape(-1)], axis=1), rcond=None)
    mixed = a @ coef
    u2 = mixed[:, 0].reshape(ue.shape)
    v2 = mixed[:, 1].reshape(ve.shape)
    r = ye + v2
    b = ye + u2
    g = (ye - wr * r - wb * b) / wg
    px = np.clip(np.stack([r, g, b], axis=-1), 0.0, cm.PQ_PEAK_NITS)
    return expanded.with_pixels(px)


def cmd_fit_expand(args):
    cfg = load_config(args.config, {})
    try:
        sdr = pfm.read_tagged(args.sdr)
        ref = pfm.read_tagged(args.hdr_ref)
    except (OSError, LumaFluxError) as exc:
        print(f"cannot read inputs: {exc}", file=sys.stderr)
        return 2
    if sdr.pixels.shape != ref.pixels.shape:
        print("input extents differ", file=sys.stderr)
        return 2
    peak = float(cfg["peak_nits"])
    wide = ft.linearize_sdr(sdr)
    y_sdr = cm.luma2020(wide).reshape(-1)
    ref_linear = cm.apply_transfer(ref, cm.Direction.DECODE)
    y_ref = np.clip(cm.luma2020(ref_linear).reshape(-1) / peak, 0.0, 1.0)
    stride = max(1, y_sdr.size // int(cfg["fit_samples"]))
    fit_cfg = rqs.FitConfig(
        lambda_l1=float(cfg["lambda_l1"]),
        lambda_smooth=float(cfg["lambda_smooth"]),
        iterations=int(cfg["fit_iterations"]),
    )
    try:
        params, raw, trace = rqs.fit_rqs(
            y_sdr[::stride], y_ref[::stride], K=int(cfg["spline_knots"]), cfg=fit_cfg
        )
    except FitError as exc:
        trace_path = args.output + ".trace.csv"
        np.savetxt(trace_path, getattr(exc, "trace", np.array([])),
                   header="loss", comments="")
        print(f"fit diverged: {exc} (trace at {trace_path})", file=sys.stderr)
        return 4
    expanded = expand_sdr(sdr, params, peak)
    refined = refine_chroma(expanded, ref_linear)
    out_pq = cm.encode_transfer(refined, cm.Transfer.PQ)
    pfm.write_tagged(args.output, out_pq, seed=int(cfg["seed"]), config=cfg)
    rqs.save_fit(args.output + ".rqs.json", params, raw, fit_cfg)
    np.savetxt(args.output + ".trace.csv", trace, header="loss", comments="")
    print(json.dumps({"output": args.output, "final_loss": float(trace[-1])}, indent=2))
    return 0


def cmd_metrics(args):
    try:
        ref = pfm.read_tagged(args.ref)
        test = pfm.read_tagged(args.test)
    except (OSError, LumaFluxError) as exc:
        print(f"cannot read inputs: {exc}", file=sys.stderr)
        return 2
    report = mt.metric_report(ref, test)
    doc = json.dumps(report.to_json(), indent=2, sort_keys=True)
    print(doc)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(doc + "\n")
    return 0


def feature_weights(cfg):
    rng = np.random.default_rng(int(cfg["feature_seed"]))
    c_phys = 8
    d_g = 4
    conv = rng.normal(0.0, 0.2, (c_phys, 3, 3, 3))
    mlp = (
        rng.normal(0.0, 0.3, (16, 4)), np.zeros(16),
        rng.normal(0.0, 0.3, (d_g, 16)), np.zeros(d_g),
    )
    return conv, mlp


def _map_summary(name, arr):
    return {
        "name": name,
        "min": float(np.min(arr)),
        "max": float(np.max(arr)),
        "mean": float(np.mean(arr)),
    }


def cmd_features(args):
    cfg = load_config(args.config, {})
    try:
        sdr = pfm.read_tagged(args.frame)
    except (OSError, LumaFluxError) as exc:
        print(f"cannot read {args.frame}: {exc}", file=sys.stderr)
        return 2
    conv, mlp = feature_weights(cfg)
    feats = ft.extract_phys(sdr, conv, mlp)
    desc = ft.spectral_descriptor(feats.y_map, int(cfg["k_bands"]))
    doc = {
        "s_g": feats.s_g.tolist(),
        "g": feats.g.tolist(),
        "r": desc.r.tolist(),
        "maps": [
            _map_summary("y", feats.y_map),
            _map_summary("loggrad", feats.loggrad_map),
            _map_summary("sat", feats.sat_map),
        ],
    }
    print(json.dumps(doc, indent=2))
    if args.dump_maps:
        base = os.path.splitext(args.frame)[0]
        stack = np.stack([feats.y_map, feats.loggrad_map, feats.sat_map], axis=-1)
        pfm.write_pfm(base + ".features.pfm", stack)
    return 0


def cmd_adapter_demo(args):
    cfg = ad.ToyBlockConfig(
        d=args.width, n_tokens=args.tokens, heads=4, layers=2, rank=args.rank,
        d_p=8, c_phys=4, d_g=4, k_bands=4, psi_hidden=8,
    )
    backbone = ad.BackboneWeights.seeded(cfg, seed=args.seed)
    state = ad.AdapterState.seeded(cfg, seed=args.seed + 1)
    inputs = ad.demo_inputs(cfg, seed=args.seed + 2)
    z = inputs[0]

    null_state = ad.AdapterState.null(cfg)
    adapted, _ = ad.block_forward(z, *inputs[1:], backbone, null_state, cfg, t=0.5, layer=0)
    vanilla = ad.vanilla_block_forward(z, backbone, cfg.heads)
    preservation = bool(np.array_equal(adapted, vanilla))

    tail = ad.low_rank_svd_tail(state, cfg)
    rank_ok = tail <= 1e-9

    report = ad.grad_check_adapters(backbone, state, cfg, inputs=inputs)
    doc = {
        "backbone_preservation": preservation,
        "svd_tail_beyond_rank": tail,
        "rank_ok": rank_ok,
        "gradients": report,
        "version": __version__,
    }
    print(json.dumps(doc, indent=2))
    ok = preservation and rank_ok and report["passed"]
    return 0 if ok else 4


def build_parser():
    parser = argparse.ArgumentParser(prog="lumaflux", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthesize", help="degrade an HDR frame into SDR variants")
    p.add_argument("hdr_input")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir", default="out")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("fit-expand", help="fit a tone spline and expand SDR to HDR")
    p.add_argument("sdr")
    p.add_argument("hdr_ref")
    p.add_argument("--output", default="expanded.pfm")
    p.add_argument("--config")
    p.set_defaults(func=cmd_fit_expand)

    p = sub.add_parser("metrics", help="full-reference HDR metric report")
    p.add_argument("ref")
    p.add_argument("test")
    p.add_argument("--output")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("features", help="dump physical feature descriptors")
    p.add_argument("frame")
    p.add_argument("--config")
    p.add_argument("--dump-maps", action="store_true")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("adapter-demo", help="run adapter preservation/rank/gradient suites")
    p.add_argument("--width", type=int, default=8)
    p.add_argument("--tokens", type=int, default=8)
    p.add_argument("--rank", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_adapter_demo)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad flags; the contract reserves 2 for I/O
        if exc.code not in (0, None):
            raise SystemExit(3)
        raise
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except LumaFluxError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
