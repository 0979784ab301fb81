"""Command-line interface.

Subcommands: gen, fit, score, eval, project, filter-sweep, register.
Options may also come from a ``key=value`` file given with ``--config``;
command-line flags take precedence. Errors go to stderr as
``error:<module>:<kind>: message`` with exit status 1 (domain) or 2 (usage).
"""
import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .descriptors import FpfhConfig, PatchConfig, parse_feature_matrix
from .errors import IsmpError
from .evaluation import (ANOMALIES, SHAPES, evaluate_category, load_dataset, metrics_csv,
                         write_synthetic_category)
from .filtering import FilterParams, filter_sweep, sweep_to_csv
from .geometry import load_cloud
from .pipeline import Ablation, PipelineConfig, RunManifest, fit, score_many
from .registration import RansacConfig, register_clouds
from .scoring import AnomalyResult, load_bank, save_bank
from .sie import render_slices, write_slices


class UsageError(Exception):
    pass


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_common(p):
    p.add_argument("--config", help="key=value file; flags override its entries")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="worker threads (default: all cores); output does not depend on it")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_pipeline(p):
    g = p.add_argument_group("pipeline")
    g.add_argument("--m", type=int, default=512, help="patch centers per sample")
    g.add_argument("--k-max", type=int, default=32)
    g.add_argument("--radius", type=float, default=0.05,
                   help="patch radius, as a fraction of the bbox diagonal unless --absolute-radius")
    g.add_argument("--absolute-radius", action="store_true")
    g.add_argument("--bins", type=int, default=11, help="FPFH bins per angle feature")
    g.add_argument("--k-spfh", type=int, default=16)
    g.add_argument("--alpha", type=float, default=0.2)
    g.add_argument("--beta", type=float, default=0.2)
    g.add_argument("--gamma", type=float, default=0.001)
    g.add_argument("--resolution", type=int, default=224)
    g.add_argument("--global-bins", type=int, default=16)
    g.add_argument("--eq6-k", type=float, default=3.0)
    g.add_argument("--normal-k", type=int, default=16)
    g.add_argument("--no-registration", action="store_true")
    g.add_argument("--keypoints", type=int, default=256)
    g.add_argument("--ransac-iterations", type=int, default=4096)
    g.add_argument("--ransac-seed", type=int, default=0)
    g.add_argument("--coreset-fraction", type=float, default=1.0)
    g.add_argument("--coord-count", type=int, default=4096)
    g.add_argument("--score-mode", choices=("raw", "calibrated"), default="raw")
    g.add_argument("--no-sie", action="store_true")
    g.add_argument("--no-filter", action="store_true")
    g.add_argument("--no-enhanced", action="store_true")
    g.add_argument("--external-only", action="store_true")


def pipeline_config(a):
    return PipelineConfig(
        patch=PatchConfig(a.m, a.k_max, a.radius, not a.absolute_radius),
        fpfh=FpfhConfig(a.bins, a.k_spfh),
        filter=FilterParams(a.alpha, a.beta, a.gamma),
        ransac=RansacConfig(max_iterations=a.ransac_iterations, rng_seed=a.ransac_seed),
        ablation=Ablation(not a.no_sie, not a.no_filter, not a.no_enhanced, a.external_only),
        slice_resolution=a.resolution,
        global_bins=a.global_bins,
        eq6_k=a.eq6_k,
        normal_k=a.normal_k,
        use_registration=not a.no_registration,
        registration_keypoints=a.keypoints,
        coreset_fraction=a.coreset_fraction,
        coord_count=a.coord_count,
        score_mode=a.score_mode,
    )


def build_parser():
    parser = argparse.ArgumentParser(prog="ismp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ismp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic category in the dataset layout")
    _add_common(p)
    p.add_argument("--shape", choices=SHAPES, default="sphere")
    p.add_argument("--anomaly", default="bulge",
                   help=f"defect kind, or comma list cycled over anomalous samples ({', '.join(ANOMALIES[1:])})")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="dataset root directory")
    p.add_argument("--category", help="category name (default: the shape)")
    p.add_argument("--n-train", type=int, default=4)
    p.add_argument("--n-test-normal", type=int, default=8)
    p.add_argument("--n-test-anomalous", type=int, default=8)
    p.add_argument("--n-points", type=int, default=2048)
    p.add_argument("--amplitude", type=float, default=0.1, help="fraction of bbox diagonal")
    p.add_argument("--region-fraction", type=float, default=0.1)
    p.add_argument("--noise", type=float, default=0.0, help="fraction of bbox diagonal")

    p = sub.add_parser("fit", help="build memory banks from a category's training clouds")
    _add_common(p)
    _add_pipeline(p)
    p.add_argument("--data", required=True, help="dataset root")
    p.add_argument("--category", required=True)
    p.add_argument("--out", required=True, help="bank file to write")
    p.add_argument("--manifest", help="write the run manifest here")
    p.add_argument("--timings", action="store_true", help="include wall-clock timings in the manifest")

    p = sub.add_parser("score", help="score a category's test clouds against a bank")
    _add_common(p)
    _add_pipeline(p)
    p.add_argument("--bank", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--category", required=True)
    p.add_argument("--out", required=True, help="output directory (objects.csv + points/)")
    p.add_argument("--manifest")
    p.add_argument("--timings", action="store_true")

    p = sub.add_parser("eval", help="O-AUROC / P-AUROC for a category")
    _add_common(p)
    _add_pipeline(p)
    p.add_argument("--data", required=True)
    p.add_argument("--category", required=True)
    p.add_argument("--scores", help="directory written by 'score'; omit to fit and score now")
    p.add_argument("--method", default="ISMP")
    p.add_argument("--out", help="CSV file (default: stdout)")

    p = sub.add_parser("project", help="render the four depth slices as PGM images")
    _add_common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resolution", type=int, default=224)

    p = sub.add_parser("filter-sweep", help="mean/variance shift of the feature filter over a grid")
    _add_common(p)
    p.add_argument("--input", help="ISMP-FM feature matrix (default: random standard normal)")
    p.add_argument("--rows", type=int, default=32)
    p.add_argument("--dims", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alphas", type=_floats, default=[0.2])
    p.add_argument("--betas", type=_floats, default=[0.2])
    p.add_argument("--gammas", type=_floats, default=[0.001])
    p.add_argument("--out", help="CSV file (default: stdout)")

    p = sub.add_parser("register", help="RANSAC-align a source cloud to a template")
    _add_common(p)
    p.add_argument("--source", required=True)
    p.add_argument("--template", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iterations", type=int, default=4096)
    p.add_argument("--threshold", type=float, help="inlier threshold (default: 0.01 x template diagonal)")
    p.add_argument("--min-inlier-fraction", type=float, default=0.25)
    p.add_argument("--keypoints", type=int, default=256)
    p.add_argument("--normal-k", type=int, default=16)
    p.add_argument("--fallback", action="store_true", help="print identity instead of failing")
    p.add_argument("--out", help="write the 12 numbers here (default: stdout)")
    return parser


# ---------------------------------------------------------------------------

def read_config_file(path):
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def _apply_config(parser, argv):
    """Parse argv with defaults taken from --config, so explicit flags win."""
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in read_config_file(args.config).items():
        action = actions.get(key)
        if action is None or key in ("config", "help"):
            raise UsageError(f"{args.config}: unknown option {key!r}")
        if action.nargs == 0:
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            try:
                defaults[key] = action.type(raw)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"{args.config}: bad value for {key}: {exc}") from None
        else:
            defaults[key] = raw
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


_NOT_CONFIG = {"threads", "config", "verbose", "out", "manifest", "timings"}


def args_digest(args):
    blob = {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_CONFIG}
    text = json.dumps(blob, sort_keys=True, default=str, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _emit(text, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _fmt(v):
    return "%.17g" % v


def cmd_gen(a):
    kinds = [k.strip() for k in a.anomaly.split(",") if k.strip()]
    bad = [k for k in kinds if k not in ANOMALIES]
    if bad or not kinds:
        raise UsageError(f"--anomaly: unknown kind(s) {bad}")
    write_synthetic_category(a.out, a.category or a.shape, a.shape, kinds[0], a.seed,
                             a.n_train, a.n_test_normal, a.n_test_anomalous, a.n_points,
                             a.amplitude, a.region_fraction, a.noise, anomalies=kinds)


def cmd_fit(a):
    cfg = pipeline_config(a)
    ds = load_dataset(a.data, a.category)
    bank, manifest = fit(ds.train, cfg, a.category, threads=a.threads, sample_ids=ds.train_ids,
                         record_timings=a.timings)
    save_bank(bank, a.out)
    if a.manifest:
        Path(a.manifest).write_text(manifest.to_text())


def _score_dataset(ds, bank, cfg, threads, manifest):
    return score_many([s.cloud for s in ds.test], bank, cfg, threads,
                      [s.sample_id for s in ds.test], manifest)


def write_scores(out_dir, samples, results):
    out_dir = Path(out_dir)
    (out_dir / "points").mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample_id", "object_score", "object_label", "flagged_fraction"])
    for s, r in zip(samples, results):
        w.writerow([s.sample_id, _fmt(r.object_score), s.object_label, _fmt(r.flagged_fraction)])
        s_f, s_c = r.channels
        lines = (f"{_fmt(a)} {_fmt(b)} {_fmt(c)}\n" for a, b, c in zip(r.point_scores, s_f, s_c))
        (out_dir / "points" / f"{s.sample_id}.txt").write_text("".join(lines))
    (out_dir / "objects.csv").write_text(buf.getvalue())


def read_scores(scores_dir, samples):
    scores_dir = Path(scores_dir)
    table = {}
    with open(scores_dir / "objects.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            table[row["sample_id"]] = float(row["object_score"])
    results = []
    for s in samples:
        if s.sample_id not in table:
            raise UsageError(f"{scores_dir}: no score for sample {s.sample_id}")
        pfile = scores_dir / "points" / f"{s.sample_id}.txt"
        pts = np.array([float(ln.split()[0]) for ln in pfile.read_text().splitlines() if ln.strip()])
        results.append(AnomalyResult(pts, table[s.sample_id]))
    return results


def cmd_score(a):
    cfg = pipeline_config(a)
    bank = load_bank(a.bank, cfg.digest())
    ds = load_dataset(a.data, a.category)
    manifest = RunManifest(cfg.digest(), record_timings=a.timings)
    results = _score_dataset(ds, bank, cfg, a.threads, manifest)
    write_scores(a.out, ds.test, results)
    if a.manifest:
        Path(a.manifest).write_text(manifest.to_text())


def cmd_eval(a):
    ds = load_dataset(a.data, a.category)
    if a.scores:
        results = read_scores(a.scores, ds.test)
    else:
        cfg = pipeline_config(a)
        bank, manifest = fit(ds.train, cfg, a.category, threads=a.threads, sample_ids=ds.train_ids)
        results = _score_dataset(ds, bank, cfg, a.threads, manifest)
    metrics = evaluate_category(zip(results, ds.test))
    for note in metrics.notes:
        print(f"warning:evaluation:{note}", file=sys.stderr)
    _emit(metrics_csv([(a.method, a.category, metrics)]), a.out)


def cmd_project(a):
    cloud = load_cloud(a.input)
    write_slices(render_slices(cloud, a.resolution), a.out, Path(a.input).stem)


def cmd_filter_sweep(a):
    if a.input:
        lines = iter(Path(a.input).read_text().splitlines())
        X = parse_feature_matrix(lines, a.input).values
    else:
        X = np.random.default_rng(a.seed).standard_normal((a.rows, a.dims))
    _emit(sweep_to_csv(filter_sweep(X, a.alphas, a.betas, a.gammas)), a.out)


def cmd_register(a):
    src = load_cloud(a.source)
    tpl = load_cloud(a.template)
    cfg = RansacConfig(a.iterations, a.threshold, 3, a.min_inlier_fraction, a.seed)
    t, frac = register_clouds(src, tpl, cfg, a.keypoints, a.normal_k, fallback=a.fallback)
    print(f"inlier_fraction={frac:.6f}", file=sys.stderr)
    _emit(" ".join(_fmt(v) for v in t.as_row()) + "\n", a.out)


COMMANDS = {
    "gen": cmd_gen,
    "fit": cmd_fit,
    "score": cmd_score,
    "eval": cmd_eval,
    "project": cmd_project,
    "filter-sweep": cmd_filter_sweep,
    "register": cmd_register,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except UsageError as exc:
        print(f"error:cli:usage: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # argparse usage errors and --help/--version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        if hasattr(args, "m"):
            digest = pipeline_config(args).digest()
        else:
            digest = args_digest(args)
        print(f"config_digest={digest}", file=sys.stderr)
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error:cli:usage: {exc}", file=sys.stderr)
        return 2
    except IsmpError as exc:
        print(f"error:{exc.module}:{exc.kind}: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error:cli:InvalidValue: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error:io:{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
