"""Command-line entry point: ``pcnn <subcommand> ...``.

Exit status is 0 on success, 1 when a verification check fails and 2 on
usage or configuration errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _cmd_gen(args) -> int:
    from .data import gen_synthetic

    man = gen_synthetic(args.out, args.classes, args.per_class, args.points, args.seed, normals=args.normals)
    print(f"wrote {len(man.records)} clouds ({len(man.split('train'))} train, "
          f"{len(man.split('test'))} test) to {args.out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    from .train import RunConfig, Trainer

    cfg = RunConfig.load(args.config)
    for key in ("epochs", "seed", "threads"):
        if getattr(args, key) is not None:
            setattr(cfg, key, getattr(args, key))
    if args.out is not None:
        cfg.out_dir = args.out
    cfg.__post_init__()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    rows = Trainer(cfg).run(out / "log.csv", out / "model.ckpt")
    epoch, _, loss, metric = rows[-1]
    print(f"epoch {epoch}: test loss {loss:.6g}, metric {metric:.6g}; wrote {out / 'model.ckpt'}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    from .data import DatasetManifest
    from .nn import load_checkpoint
    from .train import evaluate, subsample

    net = load_checkpoint(args.model)
    man = DatasetManifest.read(args.data)
    pts, labels, normals = man.load(args.split)
    if not pts:
        raise UsageError(f"split {args.split!r} is empty")
    if net.arch == "normals" and any(n is None for n in normals):
        raise UsageError("normal evaluation needs points files with normal columns")
    counts = args.subsample or [None]
    for k in counts:
        cur_p, cur_n = pts, normals
        if k is not None:
            if k > min(p.shape[0] for p in pts):
                print(f"subsample {k}: skipped, clouds have fewer points")
                continue
            if net.arch == "normals":
                cur_p, cur_n = subsample(pts, k, args.seed, normals)
            else:
                cur_p = subsample(pts, k, args.seed)
        loss, metric = evaluate(net, cur_p, labels, cur_n, net.hyper.in_channels == 1)
        name = "accuracy" if net.arch == "classification" else "cosine_distance"
        size = k if k is not None else pts[0].shape[0]
        print(f"points {size}: loss {loss:.6g} {name} {metric:.6g}")
    return EXIT_OK


def _cmd_normals(args) -> int:
    from .data import read_points, write_points
    from .nn import load_checkpoint
    from .train import predict

    net = load_checkpoint(args.model)
    if net.arch != "normals":
        raise UsageError(f"{args.model} holds a {net.arch} network, not a normals network")
    pts, _ = read_points(args.input)
    out = predict(net, [pts], net.hyper.in_channels == 1)[0]
    out = out / np.maximum(np.linalg.norm(out, axis=1, keepdims=True), 1e-12)
    write_points(args.output, pts, out)
    print(f"wrote {pts.shape[0]} normals to {args.output}")
    return EXIT_OK


def _cmd_extend(args) -> int:
    from .data import read_points
    from .extension import ExtendedFunction, sample_grid, write_volume
    from .rbf import RbfBasis, omega_practical, sigma_rule

    pts, _ = read_points(args.input)
    sigma = args.sigma if args.sigma is not None else sigma_rule(pts.shape[0], args.sigma_scale)
    if not sigma > 0:
        raise UsageError("sigma must be positive")
    dims = np.array(args.dims, dtype=np.int64)
    if np.any(dims < 1):
        raise UsageError("grid dims must be positive")
    basis = RbfBasis.gaussian(sigma)
    ext = ExtendedFunction(pts, np.ones((pts.shape[0], 1)), omega_practical(pts, basis), basis)
    lo, hi = pts.min(axis=0) - args.margin * sigma, pts.max(axis=0) + args.margin * sigma
    if args.origin is not None:
        origin = np.array(args.origin, dtype=np.float64)
    else:
        origin = np.where(dims > 1, lo, 0.5 * (lo + hi))
    if args.spacing is not None:
        spacing = np.array(args.spacing, dtype=np.float64)
    else:
        spacing = np.where(dims > 1, (hi - lo) / np.maximum(dims - 1, 1), 1.0)
    grid = sample_grid(ext, tuple(int(d) for d in dims), origin, spacing)
    write_volume(args.output, grid)
    print(f"wrote {'x'.join(str(int(d)) for d in dims)} grid (sigma {sigma:.6g}) to {args.output}")
    return EXIT_OK


def verify_status(results) -> int:
    """Exit status of ``verify``: zero only when every executed check passed."""
    return EXIT_OK if results and all(r.passed for r in results) else EXIT_FAILED


def _cmd_verify(args) -> int:
    from . import checks, training_checks

    if args.list:
        for name in list(checks.CHECKS) + [f"{n} (training, skipped by --quick)" for n in training_checks.CHECKS]:
            print(name)
        return EXIT_OK
    try:
        results = checks.run_checks(args.only or None, args.skip, full=not args.quick)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from exc
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed" + (f"; failed: {', '.join(failed)}" if failed else ""))
    if args.quick or args.skip or args.only:
        print("partial run: a zero exit status covers only the checks listed above")
    return verify_status(results)


def _cmd_report(args) -> int:
    from . import analysis

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports = []
    for name, surf in analysis.standard_surfaces().items():
        reports.append(analysis.indicator_experiment(surf, seed=args.seed))
        reports.append(analysis.mean_curvature_experiment(surf, seed=args.seed))
    text = "\n".join(r.to_text() for r in reports)
    cons = analysis.sampling_consistency_experiment(analysis.standard_surfaces()["sphere"], seed=args.seed)
    text += "\nsampling_consistency_sphere I=4096: " + ", ".join(f"{k} {v:.6g}" for k, v in cons.items())
    (out / "report.txt").write_text(text + "\n")
    (out / "report.csv").write_text(analysis.reports_to_csv(reports))
    print(text)
    return EXIT_OK


def _cmd_bench(args) -> int:
    from .conv import build_q, conv_forward, default_translations
    from .rbf import RbfBasis, omega_practical, sigma_rule
    from .shapes import Sphere

    rng = np.random.default_rng(args.seed)
    print("I       nnz(q)      build_q_s   conv_s      conv_points_per_s")
    for n in args.sizes:
        pts = Sphere(1.0).sample(n, rng)
        sigma = sigma_rule(n, args.sigma_scale)
        basis = RbfBasis.gaussian(sigma)
        t0 = time.perf_counter()
        q = build_q(pts, pts, sigma, default_translations(sigma))
        t_build = time.perf_counter() - t0
        w = omega_practical(pts, basis)
        f = rng.normal(size=(n, args.channels))
        k = rng.normal(size=(27, args.channels, args.channels))
        mat = q.contraction_matrix(w, basis.c)
        t0 = time.perf_counter()
        for _ in range(args.repeat):
            conv_forward(q, w, f, k, basis.c, matrix=mat)
        t_conv = (time.perf_counter() - t0) / args.repeat
        print(f"{n:<8d}{q.nnz:<12d}{t_build:<12.4f}{t_conv:<12.4f}{n / t_conv:.0f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pcnn", description="Point-cloud convolution by extension and restriction.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen", help="synthesize a shape dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--classes", nargs="+", default=["sphere", "cube", "torus", "cylinder"])
    g.add_argument("--per-class", type=int, default=10)
    g.add_argument("--points", type=int, default=512)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--normals", action="store_true", help="store analytic normals as extra columns")
    g.set_defaults(func=_cmd_gen)

    t = sub.add_parser("train", help="train from a JSON run configuration")
    t.add_argument("--config", required=True)
    t.add_argument("--out", help="override the configured output directory")
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--threads", type=int)
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True, help="dataset directory or manifest file")
    e.add_argument("--split", default="test", choices=["train", "test"])
    e.add_argument("--subsample", type=int, nargs="+", help="evaluate on random subsets of these sizes")
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=_cmd_eval)

    n = sub.add_parser("normals", help="predict per-point normals with a normals checkpoint")
    n.add_argument("--model", required=True)
    n.add_argument("--input", required=True)
    n.add_argument("--output", required=True)
    n.set_defaults(func=_cmd_normals)

    x = sub.add_parser("extend", help="write the extended indicator of a cloud as a PCNNVOL1 grid")
    x.add_argument("--input", required=True)
    x.add_argument("--output", required=True)
    x.add_argument("--dims", type=int, nargs=3, default=[32, 32, 32], metavar=("NX", "NY", "NZ"))
    x.add_argument("--origin", type=float, nargs=3)
    x.add_argument("--spacing", type=float, nargs=3)
    x.add_argument("--sigma", type=float)
    x.add_argument("--sigma-scale", type=float, default=1.0)
    x.add_argument("--margin", type=float, default=3.0, help="bounding-box padding in units of sigma")
    x.set_defaults(func=_cmd_extend)

    v = sub.add_parser("verify", help="run the numerical check suite")
    v.add_argument("--skip", action="append", default=[], metavar="NAME")
    v.add_argument("--only", action="append", default=[], metavar="NAME")
    v.add_argument("--quick", action="store_true", help="leave out the training checks (about ten minutes)")
    v.add_argument("--list", action="store_true")
    v.set_defaults(func=_cmd_verify)

    r = sub.add_parser("report", help="write indicator and curvature experiment reports")
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int, default=0)
    r.set_defaults(func=_cmd_report)

    b = sub.add_parser("bench", help="time q construction and convolution against cloud size")
    b.add_argument("--sizes", type=int, nargs="+", default=[256, 512, 1024, 2048, 4096])
    b.add_argument("--channels", type=int, default=32)
    b.add_argument("--repeat", type=int, default=3)
    b.add_argument("--sigma-scale", type=float, default=1.0)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=_cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().strip())
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(message)s", stream=sys.stderr)
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, KeyError, OSError) as exc:
        print(f"pcnn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
