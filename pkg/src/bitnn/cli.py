"""Command-line driver: ``bitnn {train-real,train-bnn,eval,bench}``."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import modelio
from .bitcore import BitPlane, TernaryLayer, layer_forward, pack_bipolar
from .bnn import BnnConfig, BnnState, evaluate, train_phase2
from .dataio import Encoding, EncodedDataset, encode, load_split
from .realnet import DivergenceError, EpochRecord, RealNetwork, TrainConfig, error_rate, train_phase1
from .ternarize import TernarizeSpec

log = logging.getLogger("bitnn")


class CliError(Exception):
    pass


def _hidden(text: str) -> list[int]:
    try:
        sizes = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad --hidden value {text!r}") from None
    if any(s < 1 for s in sizes):
        raise argparse.ArgumentTypeError("hidden sizes must be positive")
    return sizes


def _dims(text: str) -> tuple[int, int]:
    try:
        rows, cols = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"--dims must look like 1024x1024, got {text!r}") from None
    if rows < 1 or cols < 1:
        raise argparse.ArgumentTypeError("dims must be positive")
    return rows, cols


def _print_record(rec: EpochRecord) -> None:
    print(rec.line(), flush=True)


def _load_encoded(data_dir: str, split: str, encoding: Encoding, limit: int | None) -> EncodedDataset:
    try:
        raw = load_split(data_dir, split)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read {split} data from {data_dir}: {exc}") from exc
    if limit:
        raw = raw.subset(limit)
    return encode(raw, encoding)


def _load_test(args, encoding: Encoding) -> EncodedDataset | None:
    try:
        return _load_encoded(args.data_dir, "test", encoding, args.test_limit)
    except CliError:
        log.info("no test split found; test_err will read nan")
        return None


def _read_model(path: str) -> modelio.ModelFile:
    try:
        return modelio.load(path)
    except OSError as exc:
        raise CliError(f"cannot read model {path}: {exc}") from exc


def cmd_train_real(args) -> int:
    encoding = Encoding(args.encoding)
    train = _load_encoded(args.data_dir, "train", encoding, args.train_limit)
    test = _load_test(args, encoding)
    sizes = [train.width, *args.hidden, int(train.labels.max()) + 1 if args.classes is None else args.classes]
    config = TrainConfig(
        lr=args.lr,
        lr_decay=args.lr_decay,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
        keep_input=args.keep_input,
        keep_hidden=args.keep_hidden,
        reduction=args.reduction,
    )
    net = RealNetwork.initialize(sizes, np.random.default_rng([args.seed, 0]))
    log.info("phase-1 topology %s, encoding %s", "-".join(map(str, sizes)), encoding.value)
    train_phase1(
        net,
        train.real_inputs,
        train.labels,
        config,
        test=(test.real_inputs, test.labels) if test is not None else None,
        on_epoch=_print_record,
    )
    modelio.save(modelio.ModelFile.from_real(net, encoding, epoch=args.epochs), args.out)
    return 0


def cmd_train_bnn(args) -> int:
    if (args.init is None) == (args.resume is None):
        raise CliError("give exactly one of --init (real model) or --resume (ternary model)")
    if args.init is not None:
        model = _read_model(args.init)
        if model.phase != modelio.PHASE_REAL:
            raise modelio.PhaseMismatchError(
                f"--init expects a real-phase model, {args.init} is {model.phase_name}"
            )
        state = BnnState.from_real(model.real, TernarizeSpec(args.sparsity), freeze_beta=args.freeze_beta)
    else:
        model = _read_model(args.resume)
        state = model.to_state()
    encoding = model.encoding
    if args.encoding is not None and Encoding(args.encoding) is not encoding:
        raise CliError(f"model was trained on {encoding.value} inputs, not {args.encoding}")
    train = _load_encoded(args.data_dir, "train", encoding, args.train_limit)
    if train.width != state.layers[0].cols:
        raise CliError(f"data width {train.width} does not match model input {state.layers[0].cols}")
    test = _load_test(args, encoding)
    config = BnnConfig(
        lr=args.lr, lr_decay=args.lr_decay, batch_size=args.batch_size, epochs=args.epochs, seed=args.seed,
        reduction=args.reduction,
    )
    rng = np.random.default_rng([args.seed, 2, state.epoch])
    train_phase2(
        state,
        train.bit_words,
        train.labels,
        config,
        test=(test.bit_words, test.labels) if test is not None else None,
        rng=rng,
        on_epoch=_print_record,
    )
    modelio.save(modelio.ModelFile.from_state(state, encoding), args.out)
    return 0


def cmd_eval(args) -> int:
    model = _read_model(args.model)
    if args.encoding is not None and Encoding(args.encoding) is not model.encoding:
        raise CliError(f"model header says {model.encoding.value} encoding, not {args.encoding}")
    data = _load_encoded(args.data_dir, args.split, model.encoding, args.limit)
    if data.width != model.real.sizes[0]:
        raise CliError(f"data width {data.width} does not match model input {model.real.sizes[0]}")
    if model.phase == modelio.PHASE_TERNARY:
        result = evaluate(model.layers, data.bit_words, data.labels, bit_errors=args.bit_errors)
        print(f"error={result.error:.6f} n={result.n}")
        if result.bit_error_hist is not None:
            hist = " ".join(f"{k}:{int(v)}" for k, v in enumerate(result.bit_error_hist))
            print(f"bit_errors {hist}")
    else:
        err = error_rate(model.real, data.real_inputs, data.labels)
        print(f"error={err:.6f} n={data.labels.shape[0]}")
    return 0


def bench_layer(rows: int, cols: int, sparsity: float, rng: np.random.Generator) -> TernaryLayer:
    weights = rng.choice(np.array([-1, 1], dtype=np.int8), size=(rows, cols))
    weights[rng.random((rows, cols)) < sparsity] = 0
    bias = rng.choice(np.array([-1, 0, 1], dtype=np.int8), size=rows)
    return TernaryLayer.from_dense(weights, bias)


def run_bench(rows: int, cols: int, iters: int, seed: int = 0, sparsity: float = 0.0) -> dict:
    """Time single-sample forward passes: packed XNOR/popcount vs dense f64.

    Raises ``AssertionError`` if the two paths disagree on any checked input;
    nothing is timed in that case.
    """
    rng = np.random.default_rng(seed)
    layer = bench_layer(rows, cols, sparsity, rng)
    w = layer.dense_weights().astype(np.float64)
    b = layer.dense_bias().astype(np.float64)
    xs = rng.choice(np.array([-1, 1], dtype=np.int8), size=(iters, cols))
    planes = [BitPlane(cols, words) for words in pack_bipolar(xs)]
    xf = xs.astype(np.float64)

    def naive(x):
        a = w @ x + b
        return a, a >= 0

    for plane, x in zip(planes[:16], xf[:16]):
        pre, out = layer_forward(layer, plane)
        ref_pre, ref_out = naive(x)
        if not (np.array_equal(pre, ref_pre.astype(np.int64)) and np.array_equal(out.unpack() > 0, ref_out)):
            raise AssertionError("packed and f64 forward passes disagree")

    t0 = time.perf_counter()
    for plane in planes:
        layer_forward(layer, plane)
    packed_s = time.perf_counter() - t0
    t0 = time.perf_counter()
    for x in xf:
        naive(x)
    naive_s = time.perf_counter() - t0
    packed_rate = iters / packed_s
    naive_rate = iters / naive_s
    return {
        "rows": rows,
        "cols": cols,
        "iters": iters,
        "packed_per_s": packed_rate,
        "naive_per_s": naive_rate,
        "speedup": packed_rate / naive_rate,
        "packed_bytes": 2 * layer.sign_words.nbytes,
        "naive_bytes": w.nbytes,
    }


def cmd_bench(args) -> int:
    rows, cols = args.dims
    report = run_bench(rows, cols, args.iters, args.seed, args.sparsity)
    print("precheck=ok")
    print(
        f"dims={rows}x{cols} iters={args.iters} packed={report['packed_per_s']:.1f}/s "
        f"naive_f64={report['naive_per_s']:.1f}/s speedup={report['speedup']:.2f} "
        f"weight_bytes packed={report['packed_bytes']} f64={report['naive_bytes']}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bitnn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def data_flags(p, with_encoding_default: bool):
        p.add_argument("--data-dir", required=True)
        if with_encoding_default:
            p.add_argument("--encoding", choices=[e.value for e in Encoding], default="bipolar")
        else:
            p.add_argument("--encoding", choices=[e.value for e in Encoding], default=None)
        p.add_argument("--train-limit", type=int, default=None, help="use only the first N training samples")
        p.add_argument("--test-limit", type=int, default=None)

    p = sub.add_parser("train-real", help="phase 1: weight-compressed real-valued network")
    data_flags(p, True)
    p.add_argument("--hidden", type=_hidden, default=[1024, 1024, 1024])
    p.add_argument("--classes", type=int, default=None, help="output units (default: max label + 1)")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--lr-decay", type=float, default=0.99)
    p.add_argument("--batch-size", type=int, default=100)
    p.add_argument("--keep-input", type=float, default=0.8)
    p.add_argument("--keep-hidden", type=float, default=0.5)
    p.add_argument("--reduction", choices=["mean", "sum"], default="mean", help="batch gradient reduction")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_real)

    p = sub.add_parser("train-bnn", help="phase 2: noisy backpropagation on ternary weights")
    data_flags(p, False)
    p.add_argument("--init", help="real-phase model to start from")
    p.add_argument("--resume", help="ternary-phase model to continue training")
    p.add_argument("--sparsity", type=float, default=0.0)
    p.add_argument("--freeze-beta", action="store_true")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=BnnConfig.lr)
    p.add_argument("--lr-decay", type=float, default=BnnConfig.lr_decay)
    p.add_argument("--batch-size", type=int, default=100)
    p.add_argument("--reduction", choices=["mean", "sum"], default="mean", help="batch gradient reduction")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_bnn)

    p = sub.add_parser("eval", help="classification error of a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--encoding", choices=[e.value for e in Encoding], default=None)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--bit-errors", action="store_true", help="also print the output bit-error histogram")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="packed vs dense f64 single-layer throughput")
    p.add_argument("--dims", type=_dims, default=(1024, 1024))
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--sparsity", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (CliError, modelio.ModelFormatError, DivergenceError, AssertionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
