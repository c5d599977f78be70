"""Command-line entry point: ``pprec ingest | run | sweep``.

Exit codes: 0 success, 1 internal/stage error, 2 usage or input error.
Settings come from flags, then ``--config`` (``key = value`` lines using the
long flag names), then built-in defaults. The effective configuration is
written next to every output.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import contextmanager
from pathlib import Path

from pprec import __version__, kernels
from pprec.dataset import (
    FORMATS,
    ParseError,
    binarize,
    load_raw,
    split_train_test,
    stats,
    subsample,
    write_pairs_tsv,
)
from pprec.evaluation import (
    DEFAULT_ALPHAS,
    sweep_k,
    walk_seed,
    resolve_k,
    write_ae_histogram_csv,
    write_report_csv,
    write_report_json,
)
from pprec.recommender import recommend_all, write_recommendations_csv
from pprec.similarity import (
    MODES,
    estimate_matrix_from_rounds,
    exact_similarity_matrix,
    write_similarity_csv,
)
from pprec.walksim import (
    Population,
    WalkConfig,
    run_protocol,
    write_counts_csv,
    write_roundlog_jsonl,
)

_log = logging.getLogger("pprec")

DEFAULTS = {
    "format": "pairs-tsv",
    "ratio": 0.8,
    "seeds": "0",
    "mode": "union-normalized",
    "n": 10,
    "rho": 0.5,
    "threads": 1,
    "alphas": ",".join(f"{a:g}" for a in DEFAULT_ALPHAS),
    "sample_seed": 0,
    "out_dir": "pprec-out",
    "k_fracs": "0.1,0.2,...,1.0",
    "precision_target": "test",
}


class UsageError(Exception):
    pass


class StageError(Exception):
    def __init__(self, stage, exc):
        super().__init__(f"stage '{stage}' failed: {exc}")
        self.stage = stage


@contextmanager
def stage(name):
    try:
        yield
    except (UsageError, StageError):
        raise
    except Exception as exc:  # noqa: BLE001
        raise StageError(name, exc) from exc


def parse_float_list(text):
    """``"0.1,0.2,...,1.0"`` expands an arithmetic progression; plain lists pass through."""
    parts = [p.strip() for p in str(text).split(",") if p.strip()]
    if "..." in parts:
        at = parts.index("...")
        if at < 2 or at != len(parts) - 2:
            raise UsageError(f"cannot expand {text!r}; use 'a,b,...,z'")
        head = [float(p) for p in parts[:at]]
        step, last = head[-1] - head[-2], float(parts[-1])
        if step <= 0:
            raise UsageError(f"non-increasing progression in {text!r}")
        out = list(head)
        i = 1
        while True:
            v = round(head[-1] + i * step, 10)
            if v > last + 1e-9:
                break
            out.append(v)
            i += 1
        return out
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise UsageError(f"not a number list: {text!r}") from None


def parse_seeds(text):
    """``"1..10"`` (inclusive) or ``"1,2,3"``."""
    text = str(text).strip()
    try:
        if ".." in text:
            lo, hi = text.split("..")
            return list(range(int(lo), int(hi) + 1))
        return [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise UsageError(f"bad seed list {text!r}") from None


def read_config(path):
    out = {}
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _common(p, data_flag="--data"):
    p.add_argument("--config", help="key = value file; flags take precedence")
    p.add_argument(data_flag, dest="data", help="interaction file")
    p.add_argument("--format", choices=FORMATS)
    p.add_argument("--max-users", type=int)
    p.add_argument("--max-items", type=int)
    p.add_argument("--sample-seed", type=int)


def _eval_flags(p):
    p.add_argument("--out-dir")
    p.add_argument("--ratio", type=float, help="train fraction of each split")
    p.add_argument("--seeds", help="split seeds, e.g. 1..10 or 1,4,9")
    p.add_argument("--mode", help=f"comma list of {', '.join(MODES)}")
    p.add_argument("--n", type=int, help="recommendation list length")
    p.add_argument("--rho", type=float, help="acceptance probability for every user")
    p.add_argument("--threads", type=int)
    p.add_argument("--alphas", help="AE thresholds, comma separated")
    p.add_argument("--dataset-name")
    p.add_argument("--exclude-cold-start", action="store_const", const=True)
    p.add_argument("--no-timing", action="store_const", const=True)
    p.add_argument("--precision-target", choices=("test", "train"),
                   help="likes that count as hits (train is a sensitivity check)")


def build_parser():
    parser = argparse.ArgumentParser(prog="pprec", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"pprec {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    ing = sub.add_parser("ingest", help="binarize a raw ratings file into canonical likes")
    _common(ing, "--in")
    ing.add_argument("--out", help="canonical pairs-tsv output")

    run = sub.add_parser("run", help="evaluate one k configuration")
    _common(run)
    _eval_flags(run)
    kg = run.add_mutually_exclusive_group()
    kg.add_argument("--k-frac", type=float, help="rounds as a fraction of users")
    kg.add_argument("--k", type=int, help="absolute number of rounds")
    run.add_argument("--emit-roundlog", action="store_const", const=True)
    run.add_argument("--emit-sims", action="store_const", const=True)
    run.add_argument("--emit-recs", action="store_const", const=True)

    sw = sub.add_parser("sweep", help="evaluate a list of k values")
    _common(sw)
    _eval_flags(sw)
    kg = sw.add_mutually_exclusive_group()
    kg.add_argument("--k-fracs", help="e.g. 0.1,0.2,...,1.0")
    kg.add_argument("--ks", help="absolute k values, comma separated")
    return parser


def resolve(args):
    """Merge flags over config file over defaults into one plain dict."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(read_config(args.config))
    for key, value in vars(args).items():
        if value is not None and key != "config":
            cfg[key] = value
    for key in ("ratio", "rho"):
        cfg[key] = float(cfg[key])
    for key in ("n", "threads", "sample_seed"):
        cfg[key] = int(cfg[key])
    for key in ("max_users", "max_items", "k"):
        if cfg.get(key) is not None:
            cfg[key] = int(cfg[key])
    if cfg.get("k_frac") is not None:
        cfg["k_frac"] = float(cfg["k_frac"])
    for key in ("emit_roundlog", "emit_sims", "emit_recs", "exclude_cold_start", "no_timing"):
        cfg[key] = str(cfg.get(key, False)).lower() in ("1", "true", "yes")
    if cfg["precision_target"] not in ("test", "train"):
        raise UsageError(f"unknown precision target {cfg['precision_target']!r}")
    if cfg.get("format") not in FORMATS:
        raise UsageError(f"unknown format {cfg.get('format')!r}")
    return cfg


def _load(cfg):
    path = cfg.get("data")
    if not path:
        raise UsageError("no input file given")
    if not Path(path).exists():
        raise UsageError(f"input file not found: {path}")
    records = load_raw(path, cfg["format"])
    records = subsample(records, cfg.get("max_users"), cfg.get("max_items"), cfg["sample_seed"])
    return binarize(records)


def _modes(cfg):
    modes = [m.strip() for m in str(cfg["mode"]).split(",") if m.strip()]
    bad = [m for m in modes if m not in MODES]
    if bad or not modes:
        raise UsageError(f"unknown estimator mode(s) {bad}; expected {', '.join(MODES)}")
    return tuple(modes)


def _write_outputs(report, cfg, out_dir, extra):
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = list(extra)
    write_report_csv(report, out_dir / "report.csv")
    write_report_json(report, out_dir / "report.json")
    artifacts += ["report.csv", "report.json"]
    for (k, mode), st in sorted(report.ae.items()):
        name = f"ae_hist_k{k}_{mode}.csv"
        write_ae_histogram_csv(st, out_dir / name)
        artifacts.append(name)
    echo = {k: v for k, v in sorted(cfg.items())}
    echo["kernel_backend"] = kernels.BACKEND
    echo["version"] = __version__
    (out_dir / "config.json").write_text(json.dumps(echo, indent=2, default=str) + "\n", encoding="utf-8")
    artifacts.append("config.json")
    manifest = {"artifacts": sorted(artifacts), "command": cfg["command"]}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def _print_table(report, out=sys.stdout):
    cols = ["method", "mode", "k", "precision", "precision_loss_pct", "sim_time_s", "ae_mean"]
    cols += [c for c in report.columns if c.startswith("cov_")]
    print("\t".join(cols), file=out)
    for row in report.rows:
        cells = []
        for c in cols:
            v = row.get(c)
            cells.append(f"{v:.4g}" if isinstance(v, float) else ("" if v is None else str(v)))
        print("\t".join(cells), file=out)


def cmd_ingest(cfg):
    src = cfg.get("data")
    if not src:
        raise UsageError("--in is required")
    if not Path(src).exists():
        raise UsageError(f"input file not found: {src}")
    if not cfg.get("out"):
        raise UsageError("--out is required")
    with stage("load"):
        records = load_raw(src, cfg["format"])
        records = subsample(records, cfg.get("max_users"), cfg.get("max_items"), cfg["sample_seed"])
        ds = binarize(records)
    with stage("write"):
        write_pairs_tsv(ds, cfg["out"])
    st = stats(ds)
    print(f"users={st.n_users} items={st.n_items} likes={st.n_likes} density={st.density:.6%}")
    return 0


def cmd_run(cfg):
    modes = _modes(cfg)
    alphas = parse_float_list(cfg["alphas"])
    seeds = parse_seeds(cfg["seeds"])
    with stage("load"):
        ds = _load(cfg)
    if cfg.get("k") is not None and cfg.get("k_frac") is not None:
        raise UsageError("give either --k or --k-frac, not both")
    if cfg.get("k") is None and cfg.get("k_frac") is None:
        cfg["k_frac"] = 1.0
    try:
        k, _ = resolve_k(ds.n_users, cfg.get("k_frac"), cfg.get("k"))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    with stage("evaluate"):
        report = sweep_k(
            ds, k_absolute=[k], n=cfg["n"], seeds=seeds, modes=modes, alphas=alphas,
            ratio=cfg["ratio"], rho=cfg["rho"], threads=cfg["threads"],
            dataset_name=cfg.get("dataset_name") or Path(cfg["data"]).stem,
            include_cold_start=not cfg["exclude_cold_start"], time_stages=not cfg["no_timing"],
            precision_target=cfg["precision_target"],
        )
    if cfg.get("k_frac") is not None:
        for row in report.rows[1:]:
            row["k_frac"] = cfg["k_frac"]
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    extra = []
    if cfg["emit_roundlog"] or cfg["emit_sims"] or cfg["emit_recs"]:
        with stage("emit"):
            split = split_train_test(ds, cfg["ratio"], seeds[0])
            pop = Population.from_dataset(split.train, cfg["rho"])
            log, counts = run_protocol(pop, WalkConfig(k_rounds=k, seed=walk_seed(seeds[0], k)),
                                       threads=cfg["threads"])
            if cfg["emit_roundlog"]:
                write_roundlog_jsonl(log, out_dir / "roundlog.jsonl")
                write_roundlog_jsonl(log, out_dir / "roundlog.redacted.jsonl", redacted=True)
                write_counts_csv(counts, out_dir / "cooc_pairs.csv", out_dir / "cooc_items.csv")
                extra += ["roundlog.jsonl", "roundlog.redacted.jsonl", "cooc_pairs.csv", "cooc_items.csv"]
            sims = {"exact": exact_similarity_matrix(split.train, threads=cfg["threads"])}
            for mode in modes:
                sims[mode] = estimate_matrix_from_rounds(counts, mode)
            if cfg["emit_sims"]:
                for name, s in sims.items():
                    write_similarity_csv(s, out_dir / f"similarity_{name}.csv")
                    extra.append(f"similarity_{name}.csv")
            if cfg["emit_recs"]:
                for name, s in sims.items():
                    write_recommendations_csv(recommend_all(split.train, s, cfg["n"]),
                                              out_dir / f"recommendations_{name}.csv")
                    extra.append(f"recommendations_{name}.csv")
    with stage("report"):
        _write_outputs(report, cfg, out_dir, extra)
    _print_table(report)
    return 0


def cmd_sweep(cfg):
    modes = _modes(cfg)
    alphas = parse_float_list(cfg["alphas"])
    seeds = parse_seeds(cfg["seeds"])
    if cfg.get("ks"):
        ks = [int(float(v)) for v in parse_float_list(cfg["ks"])]
        fracs = None
    else:
        fracs = parse_float_list(cfg["k_fracs"])
        ks = None
        if any(not 0 < f <= 1 for f in fracs):
            raise UsageError("k fractions must lie in (0, 1]")
    with stage("load"):
        ds = _load(cfg)
    with stage("evaluate"):
        report = sweep_k(
            ds, k_fractions=fracs, k_absolute=ks, n=cfg["n"], seeds=seeds, modes=modes,
            alphas=alphas, ratio=cfg["ratio"], rho=cfg["rho"], threads=cfg["threads"],
            dataset_name=cfg.get("dataset_name") or Path(cfg["data"]).stem,
            include_cold_start=not cfg["exclude_cold_start"], time_stages=not cfg["no_timing"],
            precision_target=cfg["precision_target"],
        )
    with stage("report"):
        _write_outputs(report, cfg, Path(cfg["out_dir"]), [])
    _print_table(report)
    return 0


COMMANDS = {"ingest": cmd_ingest, "run": cmd_run, "sweep": cmd_sweep}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"pprec: error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        cause = exc.__cause__
        print(f"pprec: error: {exc}", file=sys.stderr)
        return 2 if isinstance(cause, (ParseError, FileNotFoundError, ValueError)) and exc.stage == "load" else 1


if __name__ == "__main__":
    sys.exit(main())
