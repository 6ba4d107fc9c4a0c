"""Command-line interface: ``tanimoto-rf <command> [flags]``.

Exit codes: 0 success, 1 usage error, 2 parse or I/O error, 3 numerical failure.
Every CSV output starts with a ``#config=`` line holding the resolved
configuration as JSON; binary outputs get a ``PATH.config.json`` sidecar.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time

import numpy as np
import scipy.sparse as sp

from . import gp, kernels, maps
from .core import (
    TAG_GP,
    TAG_SYNTH,
    Dataset,
    FingerprintFormatError,
    SeedStream,
    load_fingerprints,
    save_fingerprints,
    synth_clustered,
    synth_dataset,
)
from .hashrf import MinMaxFeatureMap
from .prefactor import PrefactorSpec, estimate_zeta, tuned_params
from .tdprf import TdpFeatureSpec
from .trff import TrffError, write_trff

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_NUMERIC = 0, 1, 2, 3
MAX_EXACT_N = 2000


class UsageError(Exception):
    pass


class SpecFileError(Exception):
    """A feature-map spec file that is not a valid description."""


def _load_spec(path):
    try:
        return maps.load_spec(path)
    except (ValueError, UnicodeDecodeError) as exc:
        raise SpecFileError(f"{path}: {exc}") from exc


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("expected positive integers")
    return vals


def _common(p):
    p.add_argument("--seed", type=int, default=0, help="master seed (64-bit unsigned)")
    p.add_argument("--threads", type=int, default=None, help="cap on BLAS/FFT threads; never changes results")
    p.add_argument("--output", required=True, help="output path")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tanimoto-rf", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gram", help="exact Gram matrix as TRFF")
    _common(s)
    s.add_argument("--input", required=True)
    s.add_argument("--kernel", choices=kernels.KERNELS, default="tmm")
    s.add_argument("--sqrt-counts", action="store_true")
    s.add_argument("--check-psd", action="store_true")

    s = sub.add_parser("features", help="random feature matrix as TRFF")
    _common(s)
    s.add_argument("--input", required=True)
    s.add_argument("--spec", required=True, help="feature map JSON file")
    s.add_argument("--sqrt-counts", action="store_true")

    s = sub.add_parser("mse-sweep", help="Gram reconstruction MSE vs number of features")
    _common(s)
    s.add_argument("--input", required=True)
    s.add_argument("--family", choices=("minmax", "tdp", "prefactor"), required=True)
    s.add_argument("--M", type=_int_list, default=[256, 1024, 4096, 16384])
    s.add_argument("--trials", type=int, default=5)
    s.add_argument("--r", type=int, default=1, help="prefactor order (prefactor family)")
    s.add_argument("--spec", default=None, help="base spec JSON; M and seed are overridden")
    s.add_argument("--sqrt-counts", action="store_true")

    s = sub.add_parser("gp", help="GP regression with an exact subset or random features")
    _common(s)
    s.add_argument("--train", required=True)
    s.add_argument("--train-labels", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--test-labels", required=True)
    s.add_argument("--kernel", choices=kernels.KERNELS, default="tdp")
    s.add_argument("--spec", default=None, help="feature map JSON (rf mode); default built from --kernel and --M")
    s.add_argument("--mode", choices=("subset", "rf"), required=True)
    s.add_argument("--M", type=int, default=512, help="features (rf) or subset size (subset)")
    s.add_argument("--fit-size", type=int, default=1000, help="points used to fit hyperparameters")
    s.add_argument("--hypers", default=None, help="JSON file with mean, amplitude, noise (skips fitting)")
    s.add_argument("--sqrt-counts", action="store_true")

    s = sub.add_parser("thompson", help="batch Thompson sampling benchmark")
    _common(s)
    s.add_argument("--pool", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--mode", choices=("exact", "rf", "both"), default="both")
    s.add_argument("--kernel", choices=kernels.KERNELS, default="tdp")
    s.add_argument("--batch", type=int, default=100)
    s.add_argument("--sizes", type=_int_list, default=[500, 2000, 8000])
    s.add_argument("--M", type=int, default=512)
    s.add_argument("--seeds", type=int, default=1, help="independent repetitions per size")
    s.add_argument("--warmup", type=int, default=3)
    s.add_argument("--repeats", type=int, default=5)
    s.add_argument("--hypers", default=None)
    s.add_argument("--sqrt-counts", action="store_true")

    s = sub.add_parser("synth", help="write a synthetic fingerprint file (and optional GP labels)")
    _common(s)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--dim", type=int, default=1024)
    s.add_argument("--density", type=float, default=0.03)
    s.add_argument("--max-count", type=int, default=1)
    s.add_argument("--clusters", type=int, default=0, help="draw around this many prototypes (0: independent)")
    s.add_argument("--mutation", type=float, default=0.2)
    s.add_argument("--labels", default=None, help="also write labels drawn from an exact GP prior")
    s.add_argument("--label-kernel", choices=kernels.KERNELS, default="tdp")
    s.add_argument("--label-amplitude", type=float, default=1.0)
    s.add_argument("--label-noise", type=float, default=0.1)
    return p


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items())}


def _open_csv(path, config):
    fh = open(path, "w", newline="")
    fh.write("#config=" + json.dumps(config, sort_keys=True) + "\n")
    return fh, csv.writer(fh, lineterminator="\n")


def _write_sidecar(path, config):
    with open(str(path) + ".config.json", "w") as fh:
        json.dump(config, fh, sort_keys=True, indent=1)


def _load(path, sqrt_counts):
    return load_fingerprints(path, sqrt_counts=sqrt_counts)


def read_labels(path, ids) -> np.ndarray:
    """Targets from an ``id,y`` CSV, ordered like ``ids``."""
    vals = {}
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].startswith("#") or row == ["id", "y"]:
                continue
            if len(row) != 2:
                raise FingerprintFormatError(lineno, "expected 'id,y'")
            try:
                y = float(row[1])
            except ValueError:
                raise FingerprintFormatError(lineno, f"bad label {row[1]!r}")
            if not math.isfinite(y):
                raise FingerprintFormatError(lineno, "non-finite label")
            if row[0] in vals:
                raise FingerprintFormatError(lineno, f"duplicate id {row[0]!r}")
            vals[row[0]] = y
    missing = [i for i in ids if i not in vals]
    if missing:
        raise FingerprintFormatError(0, f"{len(missing)} ids without labels, e.g. {missing[0]!r}")
    return np.array([vals[i] for i in ids])


def write_labels(path, ids, y, config=None):
    with open(path, "w", newline="") as fh:
        if config is not None:
            fh.write("#config=" + json.dumps(config, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "y"])
        for i, v in zip(ids, y):
            w.writerow([i, repr(float(v))])


def _trial_seed(seed: int, trial: int) -> int:
    return SeedStream(seed, trial).seed


def _default_map(kernel, D, M, seed):
    if kernel == "tmm":
        return MinMaxFeatureMap(M=M, seed=seed)
    return TdpFeatureSpec.for_dataset(D, M, seed=seed)


def _hypers(args, D, y):
    if args.hypers:
        with open(args.hypers) as fh:
            return gp.GpHypers.from_dict(json.load(fh))
    size = min(len(D), args.fit_size if hasattr(args, "fit_size") else 1000)
    idx = gp.random_subset(len(D), size, seed=args.seed)
    return gp.fit_hypers(D.subset(idx), y[idx], args.kernel)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gram(args) -> int:
    D = _load(args.input, args.sqrt_counts)
    K = kernels.gram(D, args.kernel)
    write_trff(args.output, K, gram=True)
    config = _config(args)
    config["n"] = len(D)
    print(f"n={len(D)}")
    if args.check_psd:
        lam = kernels.min_eigenvalue(K)
        config["min_eigenvalue"] = lam
        print(f"min_eigenvalue={lam:.6e}")
    _write_sidecar(args.output, config)
    return EXIT_OK


def cmd_features(args) -> int:
    D = _load(args.input, args.sqrt_counts)
    fmap = _load_spec(args.spec)
    if isinstance(fmap, TdpFeatureSpec) and fmap.max_sqnorm is None:
        fmap = TdpFeatureSpec.from_dict({**fmap.to_dict(), "max_sqnorm": float(D.sqnorms.max())})
    F = fmap.transform(D)
    write_trff(args.output, F)
    config = _config(args)
    config["resolved_spec"] = fmap.to_dict()
    config["shape"] = list(F.shape)
    _write_sidecar(args.output, config)
    return EXIT_OK


def _prefactor_gram(sq, r):
    return (sq[:, None] + sq[None, :]) ** (-float(r))


def cmd_mse_sweep(args) -> int:
    D = _load(args.input, args.sqrt_counts)
    if len(D) > MAX_EXACT_N:
        raise UsageError(f"mse-sweep needs an exact Gram; n={len(D)} exceeds {MAX_EXACT_N}")
    base = {}
    if args.spec:
        with open(args.spec) as fh:
            base = json.load(fh)
        if base.get("family") != args.family:
            raise UsageError(f"spec family {base.get('family')!r} does not match --family {args.family}")
    if args.family == "minmax":
        K = kernels.gram(D, "tmm")
    elif args.family == "tdp":
        K = kernels.gram(D, "tdp")
        base = {"family": "tdp", "zeta": estimate_zeta(D), "max_sqnorm": float(D.sqnorms.max()), **base}
    else:
        K = _prefactor_gram(D.sqnorms, args.r)
        s, c = tuned_params(args.r, estimate_zeta(D))
        base = {"family": "prefactor", "r": args.r, "s": s, "c": c, "norm_scale": float(D.sqnorms.max()), **base}
    config = _config(args)
    fh, w = _open_csv(args.output, config)
    with fh:
        w.writerow(["family", "M", "trial", "mse"])
        for M in args.M:
            for t in range(args.trials):
                spec = {"family": args.family, **base, "M": M, "seed": _trial_seed(args.seed, t)}
                F = maps.from_dict(spec).transform(D)
                mse = float(np.mean((F.T @ F - K) ** 2))
                w.writerow([args.family, M, t, repr(mse)])
    return EXIT_OK


def cmd_gp(args) -> int:
    train = _load(args.train, args.sqrt_counts)
    test = _load(args.test, args.sqrt_counts)
    y = read_labels(args.train_labels, train.ids)
    y_test = read_labels(args.test_labels, test.ids)
    h = _hypers(args, train, y)
    config = _config(args)
    config["hypers"] = h.to_dict()
    if args.mode == "subset":
        if args.M > len(train):
            raise UsageError(f"subset size {args.M} exceeds training size {len(train)}")
        mean, var = gp.exact_subset_gp(train, y, args.M, args.kernel, h, test, seed=args.seed)
    else:
        if args.spec:
            fmap = _load_spec(args.spec)
        else:
            # norm scale and zeta cover both sets so test points stay in the tuned band
            both = Dataset.from_csr(sp.vstack([train.csr, test.csr]).tocsr())
            fmap = _default_map(args.kernel, both, args.M, args.seed)
        config["resolved_spec"] = fmap.to_dict()
        post = gp.rfgp_fit(fmap.transform(train), y, h, spec=fmap.to_dict())
        mean, var = gp.rfgp_predict(post, fmap.transform(test))
    logp = gp.gaussian_log_density(y_test, mean, var)
    summary = {"avg_log_prob": float(np.mean(logp)), "r2": gp.r_squared(y_test, mean), "n_test": len(test)}
    fh, w = _open_csv(args.output, config)
    with fh:
        w.writerow(["id", "y", "mean", "var", "log_prob"])
        for row in zip(test.ids, y_test, mean, var, logp):
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        fh.write("#summary=" + json.dumps(summary, sort_keys=True) + "\n")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _timed(fn, warmup: int, repeats: int):
    for _ in range(warmup):
        fn()
    times = []
    out = None
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times)), out


def thompson_run(mode, pool, h, batch, kernel, M, seed):
    """One full selection from fingerprints: Gram or features, prior draws, argmax."""
    if mode == "exact":
        K = kernels.gram(pool, kernel)
        return gp.exact_thompson_select(K, h, batch, seed)
    fmap = _default_map(kernel, pool, M, seed)
    return gp.thompson_select(fmap.transform(pool), h, batch, seed)


def cmd_thompson(args) -> int:
    pool = _load(args.pool, args.sqrt_counts)
    y = read_labels(args.labels, pool.ids)
    if args.batch > min(args.sizes):
        raise UsageError(f"batch {args.batch} exceeds the smallest pool size {min(args.sizes)}")
    if max(args.sizes) > len(pool):
        raise UsageError(f"pool has {len(pool)} points, fewer than size {max(args.sizes)}")
    if args.hypers:
        with open(args.hypers) as fh:
            h = gp.GpHypers.from_dict(json.load(fh))
    else:
        h = gp.GpHypers.default(y)
    modes = ("exact", "rf") if args.mode == "both" else (args.mode,)
    config = _config(args)
    config["hypers"] = h.to_dict()
    fh, w = _open_csv(args.output, config)
    with fh:
        w.writerow(["mode", "n", "wall_time_s", "mean_selected_label", "seed"])
        for n in args.sizes:
            for rep in range(args.seeds):
                seed = _trial_seed(args.seed, rep)
                idx = np.sort(SeedStream(seed, TAG_GP).generator().choice(len(pool), n, replace=False))
                sub = pool.subset(idx)
                for mode in modes:
                    t, sel = _timed(
                        lambda: thompson_run(mode, sub, h, args.batch, args.kernel, args.M, seed),
                        args.warmup, args.repeats,
                    )
                    w.writerow([mode, n, repr(t), repr(float(np.mean(y[idx][sel]))), rep])
                    fh.flush()
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.clusters > 0:
        D = synth_clustered(args.n, args.dim, args.clusters, args.density, args.max_count, args.mutation, args.seed)
    else:
        D = synth_dataset(args.n, args.dim, args.density, args.max_count, args.seed)
    save_fingerprints(D, args.output)
    if args.labels:
        K = kernels.gram(D, args.label_kernel)
        h = gp.GpHypers(0.0, args.label_amplitude, args.label_noise)
        y = gp.sample_gp_labels(K, h, seed=SeedStream(args.seed, TAG_SYNTH).child(2).seed)
        write_labels(args.labels, D.ids, y, _config(args))
    return EXIT_OK


COMMANDS = {
    "gram": cmd_gram,
    "features": cmd_features,
    "mse-sweep": cmd_mse_sweep,
    "gp": cmd_gp,
    "thompson": cmd_thompson,
    "synth": cmd_synth,
}


def _run(args) -> int:
    if args.threads is not None:
        if args.threads < 1:
            raise UsageError("--threads must be positive")
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=args.threads):
            return COMMANDS[args.command](args)
    return COMMANDS[args.command](args)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _run(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FingerprintFormatError, SpecFileError, TrffError, OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (gp.FactorizationError, OverflowError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # invalid specs and arguments that only fail once values are checked
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
