"""Command-line front end.

Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import CifError, InvalidConfig, IoFailure
from .evaluation import evaluate_run
from .feature_io import (Modality, PatchGrid, atomic_write_bytes, load_manifest,
                         read_feature_tensor, read_mask, write_feature_tensor)
from .hypergraph import build_sahc, quality_metrics
from .pipeline import (RunConfig, build_banks, detect_sample, load_banks,
                       load_sample, mp_sweep)
from .search import bank_scale
from .synth import SynthConfig, generate_synthetic_class

log = logging.getLogger("cif")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


def _csv_bytes(header, rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue().encode()


def _fmt(x):
    return "none" if x is None else repr(float(x)) if isinstance(x, float) else str(x)


def pgm16(values: np.ndarray) -> bytes:
    """Binary 16-bit PGM, min-max scaled to the full range."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = v.min(), v.max()
    scaled = np.zeros_like(v) if hi <= lo else (v - lo) / (hi - lo)
    pixels = np.round(scaled * 65535).astype(">u2")
    h, w = v.shape
    return f"P5\n{w} {h}\n65535\n".encode() + pixels.tobytes()


def _load_config(args) -> RunConfig:
    doc = {}
    if getattr(args, "config", None):
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidConfig(f"cannot load config {args.config}: {exc}") from exc
        if not isinstance(doc, dict):
            raise InvalidConfig("config must be a JSON object")
    overrides = {
        ("sahc", "n_edges"): getattr(args, "edges", None),
        ("sahc", "tau"): getattr(args, "tau", None),
        ("sahc", "seed"): getattr(args, "seed", None),
        ("mp", "alpha"): getattr(args, "alpha", None),
        ("mp", "layers"): getattr(args, "layers", None),
        ("mp", "k_cross"): getattr(args, "k_cross", None),
        ("search", "k_edges"): getattr(args, "k_edges", None),
        ("memory", "rate"): getattr(args, "rate", None),
    }
    for (section, key), value in overrides.items():
        if value is not None:
            doc.setdefault(section, {})[key] = value
    if getattr(args, "modality", None):
        doc["modality"] = args.modality
    if getattr(args, "shots", None):
        doc["shots"] = args.shots
    return RunConfig.from_dict(doc)


def _manifest(path):
    try:
        return load_manifest(path)
    except IoFailure as exc:
        raise InvalidConfig(str(exc)) from exc


def _bank_paths(bank_dir):
    paths = sorted(Path(bank_dir).glob("bank_*.cifb"))
    if not paths:
        raise InvalidConfig(f"no bank_*.cifb files in {bank_dir}")
    return paths


# ------------------------------------------------------------------ commands

def cmd_synth(args) -> int:
    doc = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidConfig(f"cannot load synth config: {exc}") from exc
    cfg = SynthConfig.from_dict(doc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    m = generate_synthetic_class(cfg, args.seed, out)
    log.info("wrote %d samples to %s", len(m.samples), out)
    return EXIT_OK


def cmd_build_memory(args) -> int:
    cfg = _load_config(args)
    manifest = _manifest(args.manifest)
    shots = args.shots or cfg.shots or len(manifest.split("train"))
    if shots > len(manifest.split("train")):
        raise InvalidConfig(f"{shots} shots requested, only "
                            f"{len(manifest.split('train'))} train samples")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        banks = build_banks(manifest, cfg, shots)
    except InvalidConfig:
        raise  # exit 2 via main
    except CifError as exc:
        log.error("memory build failed: %s", exc)
        return EXIT_RUNTIME
    for mod, bank in banks.items():
        bank.save(out / f"bank_{mod.value}.cifb")
        log.info("bank %s: bucket sizes %s", mod.value, bank.sizes)
    atomic_write_bytes(out / "config.json", json.dumps(cfg.to_dict(), indent=2).encode())
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = _load_config(args)
    manifest = _manifest(args.manifest)
    banks = load_banks(_bank_paths(args.banks))
    wanted = cfg.modalities([m.value for m in banks])
    banks = {m: banks[m] for m in wanted}
    out = Path(args.out)
    (out / "maps").mkdir(parents=True, exist_ok=True)
    scales = {m: bank_scale(b, cfg.search.combine) for m, b in banks.items()}
    rows, failures = [], []
    for entry in manifest.split("test"):
        try:
            s = load_sample(manifest, entry, list(banks))
            r = detect_sample(s, banks, cfg, scales)
        except CifError as exc:
            log.error("sample %s failed: %s", entry.id, exc)
            failures.append((entry.id, str(exc)))
            continue
        h, w = r.pixel_scores.shape
        write_feature_tensor(PatchGrid(h, w, r.pixel_scores.reshape(-1, 1).astype(np.float32)),
                             out / "maps" / f"{entry.id}.cift")
        atomic_write_bytes(out / "maps" / f"{entry.id}.pgm", pgm16(r.pixel_scores))
        rows.append((entry.id, repr(r.image_score), entry.label))
    atomic_write_bytes(out / "scores.csv", _csv_bytes(["id", "image_score", "label"], rows))
    if failures:
        atomic_write_bytes(out / "failures.csv", _csv_bytes(["id", "error"], failures))
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_eval(args) -> int:
    manifest = _manifest(args.manifest)
    det = Path(args.detect_dir)
    try:
        with open(det / "scores.csv", newline="") as fh:
            scores = {r["id"]: float(r["image_score"]) for r in csv.DictReader(fh)}
    except OSError as exc:
        raise InvalidConfig(f"missing detection scores: {exc}") from exc
    labels, image_scores, maps, gts = [], [], [], []
    for entry in manifest.split("test"):
        map_path = det / "maps" / f"{entry.id}.cift"
        if entry.id not in scores or not map_path.is_file():
            raise InvalidConfig(f"no detection output for sample {entry.id}")
        pix = read_feature_tensor(map_path)
        pmap = pix.data.reshape(pix.rows, pix.cols).astype(np.float64)
        if entry.gt_mask_path:
            gt = read_mask(manifest.resolve(entry.gt_mask_path)).as_image()
        else:
            gt = np.zeros(pmap.shape, dtype=bool)
        if gt.shape != pmap.shape:
            raise InvalidConfig(f"{entry.id}: ground truth {gt.shape} vs map {pmap.shape}")
        labels.append(int(entry.label == "anomalous"))
        image_scores.append(scores[entry.id])
        maps.append(pmap)
        gts.append(gt)
    try:
        rep = evaluate_run(image_scores, labels, maps, gts, manifest.class_name, args.fpr_limit)
    except CifError as exc:
        log.error("evaluation failed: %s", exc)
        return EXIT_RUNTIME
    out = Path(args.out or det)
    out.mkdir(parents=True, exist_ok=True)
    header = ["class", "i_auroc", "p_auroc", "aupro", "n_test"]
    row = [rep.class_name, repr(rep.i_auroc), repr(rep.p_auroc), repr(rep.aupro), rep.n_test]
    mean = ["mean", repr(rep.i_auroc), repr(rep.p_auroc), repr(rep.aupro), rep.n_test]
    atomic_write_bytes(out / "report.csv", _csv_bytes(header, [row, mean]))
    atomic_write_bytes(out / "report.json", json.dumps(rep.as_dict(), indent=2).encode())
    print(f"{rep.class_name}: I-AUROC {rep.i_auroc:.4f}  P-AUROC {rep.p_auroc:.4f}  "
          f"AUPRO {rep.aupro:.4f}")
    return EXIT_OK


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def cmd_mp_diag(args) -> int:
    cfg = _load_config(args)
    manifest = _manifest(args.manifest)
    banks = load_banks(_bank_paths(args.banks))
    mod = Modality(args.modality) if args.modality in ("rgb", "3d") else next(iter(banks))
    if mod not in banks:
        raise InvalidConfig(f"no {mod.value} bank in {args.banks}")
    try:
        rows = mp_sweep(manifest, banks, cfg, args.alphas, args.layer_grid, mod)
    except CifError as exc:
        log.error("diagnostics failed: %s", exc)
        return EXIT_RUNTIME
    body = _csv_bytes(["alpha", "layers", "annd", "pcs"],
                      [[_fmt(r["alpha"]), _fmt(r["layers"]), repr(r["annd"]), repr(r["pcs"])]
                       for r in rows])
    if args.out:
        atomic_write_bytes(Path(args.out), body)
    else:
        sys.stdout.write(body.decode())
    return EXIT_OK


def cmd_hg_metrics(args) -> int:
    cfg = _load_config(args)
    manifest = _manifest(args.manifest)
    out = Path(args.out)
    (out / "hypergraphs").mkdir(parents=True, exist_ok=True)
    rows, status = [], EXIT_OK
    for entry in manifest.samples:
        try:
            s = load_sample(manifest, entry, [Modality.RGB])
            grid = s.grids[Modality.RGB]
            hg = build_sahc(grid, s.mask, cfg.sahc)
            q = quality_metrics(grid.data, hg)
        except CifError as exc:
            log.error("sample %s failed: %s", entry.id, exc)
            status = EXIT_RUNTIME
            continue
        hg.save(out / "hypergraphs" / f"{entry.id}.json")
        rows.append([entry.id] + [repr(q[k]) for k in ("HE", "ICS", "ICD", "SIL")])
    atomic_write_bytes(out / "hg_metrics.csv", _csv_bytes(["id", "HE", "ICS", "ICD", "SIL"], rows))
    return status


# ------------------------------------------------------------------ parser

def _add_run_flags(p, with_manifest=True):
    if with_manifest:
        p.add_argument("--manifest", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--layers", type=int)
    p.add_argument("--k-cross", dest="k_cross", type=int)
    p.add_argument("--k-edges", dest="k_edges", type=int)
    p.add_argument("--edges", type=int)
    p.add_argument("--rate", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--modality", choices=["rgb", "3d", "both"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cif", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic class")
    p.add_argument("--config", help="JSON file with SynthConfig fields")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build-memory", help="build per-modality memory banks")
    _add_run_flags(p)
    p.add_argument("--shots", type=int)
    p.add_argument("--out", required=True, help="output directory for bank_*.cifb")
    p.set_defaults(func=cmd_build_memory)

    p = sub.add_parser("detect", help="score every test sample")
    _add_run_flags(p)
    p.add_argument("--banks", required=True, help="directory holding bank_*.cifb")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="compute I-AUROC, P-AUROC and AUPRO")
    p.add_argument("--manifest", required=True)
    p.add_argument("--detect-dir", dest="detect_dir", required=True)
    p.add_argument("--out")
    p.add_argument("--fpr-limit", dest="fpr_limit", type=float, default=0.3)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("mp-diag", help="ANND/PCS sweep over alpha and layers")
    _add_run_flags(p)
    p.add_argument("--banks", required=True)
    p.add_argument("--alphas", type=_float_list,
                   default=[round(0.9 - 0.1 * i, 1) for i in range(10)])
    p.add_argument("--layer-grid", dest="layer_grid", type=_int_list, default=[1, 2, 3, 4, 5, 6])
    p.add_argument("--out", help="CSV path (stdout if omitted)")
    p.set_defaults(func=cmd_mp_diag)

    p = sub.add_parser("hg-metrics", help="hypergraph quality metrics per sample")
    _add_run_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_hg_metrics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InvalidConfig, IoFailure) as exc:
        print(f"cif: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CifError as exc:
        print(f"cif: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
