"""Command line interface: ``agfilter {filter,refine,gradcheck,eval,fit}``.

Numeric results go to stdout as one ``key=value`` line; diagnostics go to
stderr. Exit codes: 0 success, 1 numeric check failed, 2 I/O or file format
error, 3 validation error. Output files are written atomically.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import autodiff, metrics
from .attention import attention_block, default_weights, load_weights, save_weights
from .errors import AGFilterError, DivergedLoss, FormatError, ValidationError
from .guided import FilterParams, attention_guided_filter
from .imageio import gamma_correct, read_any, write_image, write_tensor
from .synthetic import fit_task
from .tensor import Tensor, bilinear_resize

EXIT_OK = 0
EXIT_CHECK = 1
EXIT_IO = 2
EXIT_INVALID = 3

DEFAULT_RADIUS = FilterParams().radius
DEFAULT_LAMBDA = FilterParams().regularization
DEFAULT_LR = 300.0
DEFAULT_GAMMA = 2.2
GRADCHECK_TOL = 1e-4


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # usage errors are validation errors (exit 3), not argparse's default 2
    def error(self, message):
        raise _UsageError(message)


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def _emit(**fields) -> None:
    print(" ".join(f"{k}={v}" for k, v in fields.items()), flush=True)


def _gray(t: Tensor) -> Tensor:
    if t.channels == 1:
        return t
    return Tensor._wrap(t.data.mean(axis=0, keepdims=True, dtype=np.float64).astype(t.dtype))


def _attention_guidance(O: Tensor, I_low: Tensor) -> Tensor:
    """Guidance as seen by the attention block: channel mean when ``O`` is single-channel."""
    if O.channels == I_low.channels:
        return I_low
    if O.channels == 1:
        return _gray(I_low)
    raise ValidationError(f"attention needs matching channels, got O={O.channels} and guidance={I_low.channels}")


def _params(args) -> FilterParams:
    return FilterParams(radius=args.radius, regularization=args.lam)


def _load_guidance(args) -> Tensor:
    I = read_any(args.guidance)
    if args.gamma is not None:
        I = gamma_correct(I, args.gamma)
    return I


def _write_output(path: str, t: Tensor) -> None:
    if Path(path).suffix.lower() in (".pgm", ".ppm"):
        write_image(path, Tensor._wrap(np.clip(t.data, 0.0, 1.0)))
    else:
        write_tensor(path, t)


def cmd_filter(args) -> int:
    I = _load_guidance(args)
    O = read_any(args.input)
    p = _params(args)
    if args.attention is not None:
        T = read_any(args.attention)
    elif args.weights is not None:
        w = load_weights(args.weights)
        I_low = bilinear_resize(I, O.height, O.width)
        T = attention_block(O, _attention_guidance(O, I_low), w)
    else:
        T = Tensor.full(O.height, O.width, 1.0)
    out = attention_guided_filter(I, O, T, p)
    _write_output(args.output, out)
    _emit(
        shape=f"{out.height}x{out.width}x{out.channels}",
        min=_fmt(float(out.data.min())),
        max=_fmt(float(out.data.max())),
        r=p.radius,
        lam=_fmt(p.regularization),
    )
    return EXIT_OK


def refine(I: Tensor, prob: Tensor, w, p: FilterParams) -> Tensor:
    """Upsample a low-resolution probability map under image guidance, clamped to [0, 1]."""
    if prob.data.min() < 0.0 or prob.data.max() > 1.0:
        raise ValidationError("probability map values must lie in [0, 1]")
    if prob.channels == 1:
        I = _gray(I)
    if w is None:
        w = default_weights(prob.channels)
    I_low = bilinear_resize(I, prob.height, prob.width)
    T = attention_block(prob, I_low, w)
    out = attention_guided_filter(I, prob, T, p)
    return Tensor._wrap(np.clip(out.data, 0.0, 1.0))


def cmd_refine(args) -> int:
    if not 0.0 <= args.threshold <= 1.0:
        raise ValidationError(f"threshold must lie in [0, 1], got {args.threshold}")
    I = _load_guidance(args)
    prob = read_any(args.prob)
    w = load_weights(args.weights) if args.weights else None
    out = refine(I, prob, w, _params(args))
    mask = metrics.binarize(out, args.threshold)
    out_prob = args.out_prob or str(Path(args.out_mask).with_suffix(".tnsr"))
    write_tensor(out_prob, out)
    write_image(args.out_mask, mask)
    _emit(
        shape=f"{out.height}x{out.width}x{out.channels}",
        mean=_fmt(float(out.data.mean(dtype=np.float64))),
        min=_fmt(float(out.data.min())),
        max=_fmt(float(out.data.max())),
        foreground=int(mask.data.sum()),
    )
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.op not in autodiff.PRIMITIVES:
        raise ValidationError(f"unknown op {args.op!r}; choose from {', '.join(autodiff.PRIMITIVES)}")
    inputs, params = autodiff.sample_inputs(args.op, args.seed)
    report = autodiff.gradcheck(args.op, inputs, args.epsilon, params, probes=args.probes, seed=args.seed)
    ok = report.passed(GRADCHECK_TOL)
    _emit(
        op=args.op,
        seed=args.seed,
        epsilon=_fmt(args.epsilon),
        **{f"err_{k}": f"{v:.3e}" for k, v in report.max_rel_error.items()},
        nan=report.nan_count,
        status="pass" if ok else "fail",
    )
    return EXIT_OK if ok else EXIT_CHECK


def evaluate(pred: Tensor, gt: Tensor, scores: Optional[Tensor] = None) -> dict[str, object]:
    """All metrics for one binary prediction; ``vacuous`` lists sentinel-valued metrics."""
    counts = metrics.confusion(pred, gt)
    values, flagged = counts.rates()
    result: dict[str, object] = dict(values)
    result["oe"] = metrics.overlap_error(gt, pred)
    if scores is not None:
        result["auc"] = metrics.auc(scores, gt)
    if flagged:
        result["vacuous"] = ",".join(flagged)
    return result


def cmd_eval(args) -> int:
    pred = metrics.binarize(read_any(args.pred), args.threshold)
    gt = metrics.binarize(read_any(args.gt), args.threshold)
    scores = read_any(args.scores) if args.scores else None
    result = evaluate(pred, gt, scores)
    _emit(**{k: f"{v:.6f}" if isinstance(v, float) else v for k, v in result.items()})
    return EXIT_OK


def cmd_fit(args) -> int:
    p = _params(args)
    if args.synthetic:
        task = fit_task(args.seed, p=p)
        I, O, target, w0 = task.guidance, task.source, task.target, task.initial
    else:
        missing = [n for n in ("guidance", "input", "target") if getattr(args, n) is None]
        if missing:
            raise ValidationError(f"fit needs --{', --'.join(missing)} or --synthetic")
        I = _load_guidance(args)
        O = read_any(args.input)
        target = read_any(args.target)
        I = _gray(I) if O.channels == 1 else I
        w0 = None
    if args.init_weights:
        w0 = load_weights(args.init_weights)
    if w0 is None:
        w0 = default_weights(O.channels)
    if args.steps < 0:
        raise ValidationError("steps must be >= 0")
    if args.steps == 0:
        save_weights(args.out_weights, w0)
        _emit(steps=0, written=args.out_weights)
        return EXIT_OK

    def report(step, loss):
        if step % 10 == 0:
            _emit(step=step, loss=_fmt(loss))

    try:
        w, history = autodiff.fit_attention(I, O, target, w0, args.steps, args.lr, p, callback=report)
    except DivergedLoss as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECK
    save_weights(args.out_weights, w)
    _emit(
        steps=args.steps,
        initial_loss=_fmt(history[0]),
        final_loss=_fmt(history[-1]),
        ratio=_fmt(history[-1] / history[0]) if history[0] > 0 else "nan",
    )
    return EXIT_OK


def _add_filter_params(sp) -> None:
    sp.add_argument("-r", "--radius", type=int, default=DEFAULT_RADIUS, help="window radius on the low-res grid")
    sp.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_LAMBDA, help="regularization weight")
    sp.add_argument(
        "--gamma", type=float, nargs="?", const=DEFAULT_GAMMA, default=None,
        help=f"gamma-correct the guidance; bare flag uses {DEFAULT_GAMMA}",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="agfilter", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("filter", help="filter an input under a guidance image")
    sp.add_argument("--guidance", required=True)
    sp.add_argument("--input", required=True)
    att = sp.add_mutually_exclusive_group()
    att.add_argument("--attention", help="precomputed single-channel attention map")
    att.add_argument("--weights", help="attention block weights archive")
    sp.add_argument("-o", "--output", required=True)
    _add_filter_params(sp)
    sp.set_defaults(func=cmd_filter)

    sp = sub.add_parser("refine", help="refine a low-resolution probability map")
    sp.add_argument("--guidance", required=True)
    sp.add_argument("--prob", required=True, help="low-resolution probability map")
    sp.add_argument("--weights", help="attention weights archive (default initialisation if omitted)")
    sp.add_argument("--out-mask", required=True, help="thresholded mask (PGM)")
    sp.add_argument("--out-prob", help="refined probability map (TNSR); defaults to the mask path with .tnsr")
    sp.add_argument("--threshold", type=float, default=0.5)
    _add_filter_params(sp)
    sp.set_defaults(func=cmd_refine)

    sp = sub.add_parser("gradcheck", help="finite-difference check of an analytic gradient")
    sp.add_argument("--op", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--epsilon", type=float, default=1e-3)
    sp.add_argument("--probes", type=int, default=64)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("eval", help="segmentation metrics for a predicted mask")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--scores", help="probability map for AUC")
    sp.add_argument("--threshold", type=float, default=0.5, help="binarisation threshold for pred and gt")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("fit", help="fit attention weights by gradient descent")
    sp.add_argument("--guidance")
    sp.add_argument("--input")
    sp.add_argument("--target")
    sp.add_argument("--synthetic", action="store_true", help="use the seeded hidden-weights task")
    sp.add_argument("--init-weights")
    sp.add_argument("--steps", type=int, default=200)
    sp.add_argument("--lr", type=float, default=DEFAULT_LR)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out-weights", required=True)
    _add_filter_params(sp)
    sp.set_defaults(func=cmd_fit)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except (OSError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (AGFilterError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
