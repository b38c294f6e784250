"""Command-line front end over headerless raw binary arrays.

Exit codes: 0 success, 2 configuration error, 3 corrupt stream,
4 tolerance not reachable (the achieved bound is still printed).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from collections import Counter

import numpy as np

from . import container, fields, qoi
from .bitplane import Layout
from .container import DTYPES, Reader
from .decomposer import Decomposer
from .errors import CorruptPayload, RefactorError, StageFailure, UnreachableTolerance
from .lossless import GroupingPolicy, Method

log = logging.getLogger("bitrefactor")

EXIT_OK, EXIT_CONFIG, EXIT_CORRUPT, EXIT_UNREACHABLE = 0, 2, 3, 4

F32_CAST = 2.0 ** -24  # relative rounding of a float64 -> float32 cast
F32_TINY = 2.0 ** -150  # absolute rounding below the normal range

LAYOUTS = {"interleaved": Layout.INTERLEAVED_TILE, "sequential": Layout.SEQUENTIAL_BLOCK}
DECOMPOSERS = {"hierarchical": Decomposer.HIERARCHICAL, "identity": Decomposer.IDENTITY}
DTYPE_NAMES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
DEFAULT_TAUS = "1e-1,1e-2,1e-3,1e-4,1e-5,1e-6"


class ConfigError(Exception):
    pass


def _dims(text: str) -> tuple:
    try:
        dims = tuple(int(x) for x in text.replace("x", ",").split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad dims {text!r}") from None
    if not dims or any(n < 1 for n in dims):
        raise argparse.ArgumentTypeError("dims must be positive integers")
    return dims


def _float_list(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from None


def load_raw(path, dims, dtype) -> np.ndarray:
    dtype = np.dtype(dtype)
    expect = int(np.prod(dims)) * dtype.itemsize
    try:
        size = os.path.getsize(path)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    if size != expect:
        raise ConfigError(f"{path}: {size} bytes, but dims {dims} x {dtype.itemsize} = {expect}")
    return np.fromfile(path, dtype=dtype).reshape(dims)


def _open(path) -> Reader:
    if not os.path.exists(path):
        raise ConfigError(f"{path}: no such file")
    return Reader(path)


def methods_histogram(meta) -> str:
    hist = Counter(g.method for lv in meta.levels for g in lv.groups if g.comp_size)
    return " ".join(f"{m.name}:{hist.get(m, 0)}" for m in Method)


def _policy(args) -> GroupingPolicy:
    try:
        return GroupingPolicy(m=args.m, T_s=args.T_s, T_cr=args.T_cr)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# ---- commands ----

def cmd_generate(args):
    dtype = DTYPE_NAMES[args.dtype]
    data = fields.generate(args.kind, args.dims, args.seed, dtype)
    arrays = data if isinstance(data, list) else [data]
    if len(args.output) != len(arrays):
        raise ConfigError(f"{args.kind} produces {len(arrays)} arrays; give that many outputs")
    for arr, path in zip(arrays, args.output):
        arr.astype(dtype).tofile(path)
        log.info("wrote %s", path)
    return EXIT_OK


def cmd_refactor(args):
    if len(args.output) != len(args.inputs):
        raise ConfigError("one output path per input required")
    dtype = DTYPE_NAMES[args.dtype]
    arrays = [load_raw(p, args.dims, dtype) for p in args.inputs]
    policy = _policy(args)
    B = args.B
    if B is not None and not 1 <= B <= 64:
        raise ConfigError("B must be in 1..64")
    scheduler = "pipelined" if args.pipeline == "on" else "sequential"
    t0 = time.perf_counter()
    results = container.refactor_batch(arrays, B, policy, LAYOUTS[args.layout],
                                       DECOMPOSERS[args.decomposer], scheduler)
    log.info("refactored %d array(s) in %.3f s (%s)", len(arrays), time.perf_counter() - t0, scheduler)
    print("variable,raw_bytes,stored_bytes,levels,B,methods_histogram")
    for path, out, (blob, meta) in zip(args.inputs, args.output, results):
        with open(out, "wb") as fh:
            fh.write(blob)
        name = os.path.splitext(os.path.basename(path))[0]
        print(f"{name},{os.path.getsize(path)},{len(blob)},{len(meta.levels)},{meta.B},{methods_histogram(meta)}")
    return EXIT_OK


def _cast_slack(arr, dtype) -> float:
    if np.dtype(dtype) == np.float64 or arr.size == 0:
        return 0.0
    return float(np.max(np.abs(arr))) * F32_CAST + F32_TINY


def cmd_retrieve(args):
    if args.tau < 0:
        raise ConfigError("tau must be non-negative")
    reader = _open(args.stream)
    try:
        meta = reader.meta
        state = container.load_state(args.resume_state, meta) if args.resume_state else reader.initial_state()
        full = args.tau == 0
        target = 0.0 if full else args.tau
        if full:
            plan = container.FetchPlan(tuple(meta.level_groups(j) - lv.groups_loaded
                                             for j, lv in enumerate(state.levels)))
        else:
            plan = container.plan_retrieval(meta, target, state)
        _, state = reader.fetch(plan, state)
        arr, bound = container.reconstruct(meta, state)
        out_dtype = DTYPES[meta.dtype]
        slack = _cast_slack(arr, out_dtype)
        if not full and bound + slack > target and target - slack > 0:
            # leave room for the output cast
            _, state = reader.fetch(container.plan_retrieval(meta, target - slack, state), state)
            arr, bound = container.reconstruct(meta, state)
            slack = _cast_slack(arr, out_dtype)
        out = arr.astype(out_dtype)
        bound += slack
        if args.output:
            out.tofile(args.output)
        if args.save_state:
            container.save_state(args.save_state, state)
        real = ""
        if args.ground_truth:
            truth = load_raw(args.ground_truth, meta.dims, out_dtype)
            real = repr(float(np.max(np.abs(truth.astype(np.float64) - out.astype(np.float64))))) if out.size else "0.0"
        print("tau,bytes_read,bound,max_real_err")
        print(f"{args.tau!r},{state.bytes_read},{bound!r},{real}")
        if not full and bound > target:
            log.error("tolerance %g not reachable; achieved bound %r", args.tau, bound)
            return EXIT_UNREACHABLE
        return EXIT_OK
    finally:
        reader.close()


def cmd_qoi_retrieve(args):
    if args.qoi != "vtotal":
        raise ConfigError(f"unknown QoI {args.qoi!r}")
    readers = [_open(p) for p in args.streams]
    try:
        spec = qoi.QoiSpec(len(readers))
        if args.ground_truth and len(args.ground_truth) != len(readers):
            raise ConfigError("one ground-truth file per stream required")
        code = EXIT_OK
        try:
            res = qoi.progressive_qoi_retrieve(readers, args.tau, spec, args.strategy, args.mape_c)
        except UnreachableTolerance as exc:
            res, code = exc.result, EXIT_UNREACHABLE
            log.error("tolerance %g not reachable; achieved estimate %r", args.tau, exc.achieved)
        real = ""
        if args.ground_truth:
            truth = [load_raw(p, r.meta.dims, DTYPES[r.meta.dtype]) for p, r in zip(args.ground_truth, readers)]
            real = repr(qoi.real_qoi_error(truth, res.arrays, spec))
        if args.output:
            if len(args.output) != len(readers):
                raise ConfigError("one output path per stream required")
            for arr, path, r in zip(res.arrays, args.output, readers):
                arr.astype(DTYPES[r.meta.dtype]).tofile(path)
        print("tau,strategy,iterations,bytes,bitrate,est_err,real_err")
        print(f"{args.tau!r},{args.strategy},{res.iterations},{res.bytes_fetched},{res.bitrate:.6f},{res.est_err!r},{real}")
        return code
    finally:
        for r in readers:
            r.close()


def cmd_inspect(args):
    reader = _open(args.stream)
    try:
        meta = reader.meta
        print(f"dtype={DTYPES[meta.dtype].name} dims={'x'.join(map(str, meta.dims))} "
              f"decomposer={meta.decomposer.name.lower()} layout={meta.layout.name.lower()} "
              f"B={meta.B} m={meta.m} levels={len(meta.levels)} bytes={reader.source.size}")
        print("level,count,e,groups,stored_bytes,methods")
        for j, lv in enumerate(meta.levels):
            codes = "".join(g.method.name[0] if g.comp_size else "-" for g in lv.groups)
            print(f"{j},{lv.count},{lv.e},{len(lv.groups)},{sum(g.comp_size for g in lv.groups)},{codes}")
        return EXIT_OK
    finally:
        reader.close()


def bench_rows(args) -> list:
    """Rows of the bench table; bitrate columns are deterministic."""
    dtype = DTYPE_NAMES[args.dtype]
    data = fields.generate(args.kind, args.dims, args.seed, dtype)
    policy = _policy(args)
    layout, mode = LAYOUTS[args.layout], DECOMPOSERS[args.decomposer]
    rows = []
    if isinstance(data, list):
        readers = [Reader(blob) for blob, _ in container.refactor_batch(data, args.B, policy, layout, mode)]
        q = qoi.VTOTAL.evaluate(data)
        span = float(q.max() - q.min()) or 1.0
        header = ["tau"] + [f"{s}_{c}" for s in args.strategies for c in ("bitrate", "iterations", "seconds")]
        for rel in args.taus:
            row = [f"{rel:g}"]
            for s in args.strategies:
                t0 = time.perf_counter()
                try:
                    res = qoi.progressive_qoi_retrieve(readers, rel * span, qoi.VTOTAL, s, args.mape_c)
                except UnreachableTolerance as exc:
                    res = exc.result
                row += [f"{res.bitrate:.4f}", str(res.iterations), f"{time.perf_counter() - t0:.3f}"]
            rows.append(row)
    else:
        blob, _ = container.refactor(data, args.B, policy, layout, mode)
        reader = Reader(blob)
        span = float(data.max() - data.min()) or 1.0
        header = ["tau", "bitrate", "bound", "seconds"]
        for rel in args.taus:
            t0 = time.perf_counter()
            got = reader.retrieve(rel * span)
            bits = 8.0 * got.state.bytes_read / data.size
            rows.append([f"{rel:g}", f"{bits:.4f}", f"{got.bound:.6g}", f"{time.perf_counter() - t0:.3f}"])
    return [header] + rows


def cmd_bench(args):
    if any(t <= 0 for t in args.taus):
        raise ConfigError("tolerances must be positive")
    for row in bench_rows(args):
        print(",".join(row))
    return EXIT_OK


# ---- parser ----

def _add_codec_flags(p):
    p.add_argument("--B", type=int, default=None, help="fixed-point width (default 32 for f32, 52 for f64)")
    p.add_argument("--m", type=int, default=4, help="bitplanes per group")
    p.add_argument("--T-s", dest="T_s", type=int, default=1024, help="groups at or below this many bytes are stored raw")
    p.add_argument("--T-cr", dest="T_cr", type=float, default=1.0, help="minimum estimated ratio to pick an entropy coder")
    p.add_argument("--layout", choices=sorted(LAYOUTS), default="interleaved")
    p.add_argument("--decomposer", choices=sorted(DECOMPOSERS), default="hierarchical")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bitrefactor", description="Precision-progressive refactoring of floating-point arrays.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a deterministic synthetic field")
    p.add_argument("--kind", choices=fields.KINDS, default="smooth")
    p.add_argument("--dims", type=_dims, required=True)
    p.add_argument("--dtype", choices=sorted(DTYPE_NAMES), default="f32")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", nargs="+", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("refactor", help="raw arrays -> refactored streams")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--dims", type=_dims, required=True)
    p.add_argument("--dtype", choices=sorted(DTYPE_NAMES), default="f32")
    p.add_argument("--pipeline", choices=("on", "off"), default="on")
    p.add_argument("-o", "--output", nargs="+", required=True)
    _add_codec_flags(p)
    p.set_defaults(func=cmd_refactor)

    p = sub.add_parser("retrieve", help="stream -> raw array within an L-inf tolerance")
    p.add_argument("stream")
    p.add_argument("--tau", type=float, required=True, help="absolute tolerance; 0 fetches everything")
    p.add_argument("-o", "--output")
    p.add_argument("--ground-truth")
    p.add_argument("--resume-state")
    p.add_argument("--save-state")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("qoi-retrieve", help="several streams -> arrays within a QoI tolerance")
    p.add_argument("streams", nargs="+")
    p.add_argument("--qoi", default="vtotal")
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--strategy", choices=[s.value for s in qoi.Strategy], default="mape")
    p.add_argument("--mape-c", type=float, default=10.0)
    p.add_argument("--ground-truth", nargs="+")
    p.add_argument("-o", "--output", nargs="+")
    p.set_defaults(func=cmd_qoi_retrieve)

    p = sub.add_parser("inspect", help="print a stream's header")
    p.add_argument("stream")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("bench", help="bitrate table over relative tolerances")
    p.add_argument("--kind", choices=fields.KINDS, default="velocity")
    p.add_argument("--dims", type=_dims, default=(33, 33, 33))
    p.add_argument("--dtype", choices=sorted(DTYPE_NAMES), default="f32")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--taus", type=_float_list, default=_float_list(DEFAULT_TAUS),
                   help="relative tolerances (times the value range)")
    p.add_argument("--strategies", type=lambda s: [x for x in s.split(",") if x], default=["cp", "ma", "mape"])
    p.add_argument("--mape-c", type=float, default=10.0)
    _add_codec_flags(p)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if getattr(args, "strategies", None):
        bad = set(args.strategies) - {s.value for s in qoi.Strategy}
        if bad:
            log.error("unknown strategies %s", sorted(bad))
            return EXIT_CONFIG
    try:
        try:
            return args.func(args)
        except StageFailure as exc:
            # report what went wrong inside the pipeline, not the wrapper
            raise exc.cause if isinstance(exc.cause, Exception) else exc
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except CorruptPayload as exc:
        log.error("corrupt stream: %s", exc)
        return EXIT_CORRUPT
    except UnreachableTolerance as exc:
        print(f"achieved={exc.achieved!r}")
        return EXIT_UNREACHABLE
    except (RefactorError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
