"""Command-line interface: prune, eval, bench, inspect.

Exit codes: 0 success, 2 parameter budget infeasible, 3 I/O or archive
format error, 4 validation error (bad shapes, permutations, or flags).
Reports are JSON (schema 1) written to --report or stdout; bench emits CSV.
"""

import argparse
import csv
import io
import json
import logging
import os
import sys
import time

import numpy as np

from .archive import load_archive, save_archive
from .compress import (
    compensate_model,
    model_importances,
    model_reconstruction_error,
    pgb_compress,
)
from .config import DEFAULT_G_MAX, DEFAULT_N_PERM, DEFAULT_RIDGE, DEFAULT_TAU, PruneConfig
from .errors import ArchiveError, BudgetError, ShapeError, ValidationError
from .grouping import GroupedMatrix, random_grouping
from .importance import PROVIDERS
from .infer import discrepancy, encoder_forward, layerwise_discrepancy, pgb_linear
from .model import (
    WEIGHT_SLOTS,
    env_seed,
    model_flops,
    model_param_count,
    tensor_name,
)
from .serialization import (
    archive_to_activations,
    archive_to_model,
    archive_to_pruned,
    pruned_to_archive,
)
from .tensor import check_permutation, matmul, permutation_checksum

logger = logging.getLogger(__name__)

REPORT_SCHEMA = 1


def _emit_report(report: dict, path: str | None) -> None:
    text = json.dumps(report, indent=2, sort_keys=True)
    if path:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    else:
        print(text)


def _outcome_summary(value) -> dict:
    if value is None:
        return {"dropped": True}
    if isinstance(value, GroupedMatrix):
        return {"g": value.group_count, "params": value.stored_params}
    return {"g": 1, "params": int(value.shape[0] * value.shape[1])}


def _layer_table(model) -> list[dict]:
    rows = []
    for i, layer in enumerate(model.layers):
        entry = {"layer": i}
        for slot in WEIGHT_SLOTS:
            entry[slot] = _outcome_summary(getattr(layer, slot))
        if hasattr(layer, "ffn_selected"):
            entry["ffn_selected"] = layer.ffn_selected
        rows.append(entry)
    return rows


def cmd_prune(args) -> int:
    model = archive_to_model(load_archive(args.model))
    grads = load_archive(args.grads) if args.grads else None
    if args.importance == "fisher" and grads is None:
        raise ValidationError("--importance fisher requires --grads")
    cfg = PruneConfig(
        gamma=args.gamma, tau=args.tau, g_max=args.gmax, n_perm=args.nperm,
        ridge=args.ridge,
    )
    timings = {}
    t0 = time.perf_counter()
    importances = model_importances(model, args.importance, grads)
    timings["importance_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    pruned = pgb_compress(
        model, importances, cfg, provider=args.importance, threads=args.threads
    )
    timings["prune_s"] = time.perf_counter() - t0

    if args.calib:
        x = archive_to_activations(load_archive(args.calib))
        t0 = time.perf_counter()
        pruned = compensate_model(pruned, model, x, lam=args.ridge, threads=args.threads)
        timings["compensate_s"] = time.perf_counter() - t0

    save_archive(pruned_to_archive(pruned), args.out)

    params_before = model_param_count(model)
    params_after = model_param_count(pruned)
    report = {
        "schema": REPORT_SCHEMA,
        "command": "prune",
        "config": cfg.as_dict(),
        "importance": args.importance,
        "model": {
            "layers": model.n_layers, "d": model.d, "d_ffn": model.d_ffn,
            "n_heads": model.n_heads,
        },
        "params": {
            "before": params_before,
            "after": params_after,
            "budget": args.gamma * params_before,
            "kept_fraction": params_after / params_before,
        },
        "macs": {
            "seq_len": args.seq_len,
            "before": model_flops(model, args.seq_len),
            "after": model_flops(pruned, args.seq_len),
        },
        "layers": _layer_table(pruned),
        "ffn_selected": pruned.provenance["ffn_selected"],
        "timings": timings,
        "out": args.out,
    }
    _emit_report(report, args.report)
    return 0


def cmd_eval(args) -> int:
    dense = archive_to_model(load_archive(args.dense))
    pruned = archive_to_pruned(load_archive(args.pruned))
    x = archive_to_activations(load_archive(args.inputs))

    out_dense = encoder_forward(x, dense)

    def metrics(model) -> dict:
        return {
            "per_layer_l2": layerwise_discrepancy(x, dense, model),
            "end_to_end_l2": discrepancy(out_dense, encoder_forward(x, model)),
            "calibration_reconstruction_l2": model_reconstruction_error(model, dense, x),
        }

    compensated = compensate_model(pruned, dense, x, lam=args.ridge, threads=args.threads)
    report = {
        "schema": REPORT_SCHEMA,
        "command": "eval",
        "inputs": {"rows": int(np.asarray(x).shape[0]), "width": int(np.asarray(x).shape[1])},
        "ridge": args.ridge,
        "uncompensated": metrics(pruned),
        "compensated": metrics(compensated),
    }
    _emit_report(report, args.report)
    return 0


def _median_ms(fn, reps: int) -> float:
    for _ in range(3):
        fn()
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - t0) * 1e3)
    return float(np.median(samples))


def cmd_bench(args) -> int:
    rng = np.random.default_rng(env_seed(args.seed))
    reps = max(args.reps, 30)
    groups = []
    for token in args.groups.split(","):
        token = token.strip()
        if token:
            groups.append(int(token))
    if not groups or any(g < 1 for g in groups):
        raise ValidationError(f"invalid --groups list {args.groups!r}")

    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["shape", "seq_len", "kind", "g", "macs", "median_ms", "speedup_vs_dense"])
    for shape_token in args.shape:
        try:
            m, n = (int(t) for t in shape_token.lower().split("x"))
        except ValueError as exc:
            raise ValidationError(f"invalid --shape {shape_token!r}, expected MxN") from exc
        w = rng.normal(0.0, 1.0, size=(m, n)).astype(np.float32)
        x = rng.normal(0.0, 1.0, size=(args.seq_len, m)).astype(np.float32)
        dense_ms = _median_ms(lambda: matmul(x, w), reps)
        writer.writerow(
            [f"{m}x{n}", args.seq_len, "dense", 1, args.seq_len * m * n,
             f"{dense_ms:.4f}", "1.00"]
        )
        for g in groups:
            if m % g or n % g:
                logger.warning("skipping g=%d: does not divide %dx%d", g, m, n)
                continue
            gm = random_grouping(w, g, rng)
            grouped_ms = _median_ms(lambda: pgb_linear(x, gm), reps)
            writer.writerow(
                [f"{m}x{n}", args.seq_len, "grouped", g, args.seq_len * m * n // g,
                 f"{grouped_ms:.4f}", f"{dense_ms / grouped_ms:.2f}"]
            )
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as f:
            f.write(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return 0


def cmd_inspect(args) -> int:
    archive = load_archive(args.archive)
    meta_model = archive.meta.get("model", {})
    grouping = archive.meta.get("grouping", {})
    if meta_model:
        dims = ", ".join(
            f"{key}={meta_model[key]}" for key in ("layers", "d", "d_ffn", "n_heads")
            if key in meta_model
        )
        print(f"model: kind={meta_model.get('kind', '?')} {dims}")
        provenance = meta_model.get("provenance")
        if provenance:
            print(f"provenance: {json.dumps(provenance, sort_keys=True)}")
    print(f"tensors: {len(archive.tensors)}")
    for name, arr in archive.tensors.items():
        shape = "x".join(str(s) for s in arr.shape)
        print(f"  {name}  shape={shape} dtype=f32")
    if grouping:
        print(f"grouped tensors: {len(grouping)}")
        for name in sorted(grouping):
            entry = grouping[name]
            if entry.get("dropped"):
                print(f"  {name}  dropped")
                continue
            try:
                pr = check_permutation(
                    np.asarray(entry["pr"], dtype=np.int64), name=f"{name} pr"
                )
                pc = check_permutation(
                    np.asarray(entry["pc"], dtype=np.int64), name=f"{name} pc"
                )
            except (KeyError, ValidationError) as exc:
                raise ValidationError(f"tensor {name!r}: {exc}") from exc
            br, bc = entry.get("block_shape", ["?", "?"])
            print(
                f"  {name}  G={entry.get('g')} blocks={entry.get('g')}x({br}x{bc}) "
                f"pr_crc={permutation_checksum(pr)} pc_crc={permutation_checksum(pc)}"
            )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pgb",
        description="Compress weight matrices into permuted diagonal groups and "
        "run or inspect the result.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prune", help="compress a dense model archive")
    p.add_argument("--model", required=True, help="dense model .pgbt archive")
    p.add_argument("--out", required=True, help="output pruned .pgbt archive")
    p.add_argument("--gamma", required=True, type=float, help="kept parameter fraction in (0, 1]")
    p.add_argument("--tau", type=float, default=DEFAULT_TAU, help="importance threshold")
    p.add_argument("--gmax", type=int, default=DEFAULT_G_MAX, help="maximum groups per matrix")
    p.add_argument("--nperm", type=int, default=DEFAULT_N_PERM, help="sorting passes per permutation search")
    p.add_argument("--importance", choices=PROVIDERS, default="magnitude2")
    p.add_argument("--grads", help="gradient .pgbt archive (required for fisher)")
    p.add_argument("--calib", help="activations .pgbt archive; enables weight compensation")
    p.add_argument("--ridge", type=float, default=DEFAULT_RIDGE, help="compensation anchor strength")
    p.add_argument("--seq-len", type=int, default=128, help="sequence length for MAC reporting")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--report", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("eval", help="compare a pruned model against its dense source")
    p.add_argument("--dense", required=True, help="dense model .pgbt archive")
    p.add_argument("--pruned", required=True, help="pruned model .pgbt archive")
    p.add_argument("--inputs", required=True, help="activations .pgbt archive (tensor 'x')")
    p.add_argument("--ridge", type=float, default=DEFAULT_RIDGE)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--report", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time the grouped operator against dense matmul")
    p.add_argument("--shape", action="append", default=None, help="matrix shape MxN (repeatable)")
    p.add_argument("--seq-len", type=int, default=128)
    p.add_argument("--groups", default="1,2,3,6", help="comma-separated group counts")
    p.add_argument("--reps", type=int, default=30, help="timing repetitions (min 30)")
    p.add_argument("--seed", type=int, default=0, help="RNG seed (PGB_SEED overrides)")
    p.add_argument("--out", help="write CSV here instead of stdout")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("inspect", help="dump an archive's manifest and grouping metadata")
    p.add_argument("archive", help=".pgbt archive path")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if getattr(args, "shape", None) is None and args.command == "bench":
        args.shape = ["768x768"]
    try:
        return args.func(args)
    except BudgetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ArchiveError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValidationError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
