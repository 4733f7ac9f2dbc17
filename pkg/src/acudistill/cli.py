"""Command-line pipeline driver.

Every stage reads and writes artifacts inside the configured work
directory, so stages can be run one at a time or all at once with
``acudistill run``. Exit codes:

    0  success
    1  unexpected internal error
    2  bad command line or invalid configuration
    3  a required upstream artifact is missing
    4  invalid input data
    5  numerical failure (e.g. eigensolver did not converge)
    6  corrupt or incompatible artifact file
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time

import numpy as np

from . import store
from .config import DATA_ENV, PipelineConfig, stage_seed
from .coreselect import (SimilarityConfig, item_similarity_topk, select_core_users,
                         user_similarity_topk)
from .errors import ConfigError, DataError, NumericalError, StoreError
from .evaluation import item_vectors_testing_error, sparse_means_error, sv_profile
from .memory import memory_report, paper_scale_report
from .ratings import SparseRatings, load_movielens, mean_abs_entries, preprocess, split_users
from .training import generate_acus, init_acu

logger = logging.getLogger("acudistill")

EXIT_OK, EXIT_INTERNAL, EXIT_CONFIG, EXIT_MISSING, EXIT_DATA, EXIT_NUMERIC, EXIT_STORE = range(7)


class MissingArtifact(Exception):
    pass


class Stage:
    """Resolved paths plus helpers shared by all subcommands."""

    def __init__(self, cfg, threads=1, dry_run=False):
        self.cfg = cfg
        self.threads = threads
        self.dry_run = dry_run
        self.dir = cfg.workdir

    def path(self, *parts):
        return self.dir.joinpath(*parts)

    def need(self, *parts):
        p = self.path(*parts)
        if not p.exists():
            raise MissingArtifact(f"missing artifact {p} (run the upstream stage first)")
        return p

    def write(self, obj, *parts, **manifest):
        p = self.path(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        store.save(obj, p, **manifest)
        return p

    def write_text(self, text, *parts):
        p = self.path(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)
        return p

    def core_file(self, sim):
        return ("core", f"{sim.name}.csv")


def _say(msg):
    print(msg, flush=True)


def _table(rows, header):
    cols = list(zip(*([header] + rows)))
    widths = [max(len(str(c)) for c in col) for col in cols]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*header), fmt.format(*["-" * w for w in widths])]
    lines += [fmt.format(*r) for r in rows]
    return "\n".join(lines) + "\n"


# stages ----------------------------------------------------------------------

def cmd_ingest(st):
    R, user_map, item_map = load_movielens(st.cfg.dataset_path())
    st.write(R, "ratings.acus", seeds={"root": st.cfg.seed})
    st.write({"user_ids": sorted(user_map), "item_ids": sorted(item_map)}, "ids.json")
    _say(f"ingest: {R.n_users} users, {R.n_items} items, {R.nnz} ratings")


def cmd_preprocess(st):
    R = store.load(st.need("ratings.acus"), "sparse")
    if st.cfg["preprocess"]:
        Rn, transform = preprocess(R)
        st.write(transform, "transform.json")
    else:
        Rn = R
    st.write(Rn, "normalized.acus")
    _say(f"preprocess: mean |entry| = {mean_abs_entries(Rn):.4f}")


def cmd_split(st):
    R = store.load(st.need("normalized.acus"), "sparse")
    seed = stage_seed(st.cfg.seed, "split")
    train, test, train_idx, test_idx = split_users(R, st.cfg["split"]["test_fraction"], seed)
    st.write(train, "train.acus", seeds={"split": seed})
    st.write(test, "test.acus", seeds={"split": seed})
    st.write({"train_users": train_idx.tolist(), "test_users": test_idx.tolist(),
              "seed": seed}, "split.json")
    _say(f"split: {train.n_users} train users, {test.n_users} test users")


def _select(st, train, sims, item_lists=None, dump=False):
    s = st.cfg.core_size(_n_all_users(st, train))
    out = {}
    for sim in sims:
        if sim.use_item_similarity and item_lists is None:
            item_lists = item_similarity_topk(train, sim.top_k_items)
        lists = user_similarity_topk(train, sim, item_lists)
        core = select_core_users(lists, s, sim.rank_based)
        st.write(core, *st.core_file(sim))
        if dump:
            st.write(lists, "core", f"{sim.name}.neighbors.acus")
        out[sim.name] = core
    return out, item_lists


def _n_all_users(st, train):
    split = st.path("split.json")
    if split.exists():
        info = json.loads(split.read_text())
        return len(info["train_users"]) + len(info["test_users"])
    return train.n_users


def cmd_core_select(st, all_variants=False, dump=False):
    train = store.load(st.need("train.acus"), "sparse")
    base = st.cfg.similarity()
    sims = (SimilarityConfig.all_variants(base.top_k_users, base.top_k_items)
            if all_variants else [base])
    cores, _ = _select(st, train, sims, dump=dump)
    for name, core in cores.items():
        _say(f"core-select: {name}: {len(core)} core users, top score {core.scores[0]:.4g}")


def cmd_acu_train(st):
    train = store.load(st.need("train.acus"), "sparse")
    sim = st.cfg.similarity()
    core = store.load(st.need(*st.core_file(sim)), "coreset")
    tc = st.cfg.train_config(_n_all_users(st, train))
    if len(core) != tc.s:
        raise DataError(f"core set has {len(core)} users but s={tc.s}; rerun core-select")
    model = generate_acus(train, core, tc, threads=st.threads)
    run_config = {k: v for k, v in st.cfg.to_json().items() if k != "workdir"}
    st.write(model, "model.acum", config=run_config, seeds={"train": tc.seed})
    st.write(init_acu(train, core), "init.acud")
    last = model.trace[-1]["batch_mae"] if model.trace else None
    _say(f"acu-train: {tc.outer_iters} outer iterations over {tc.zeta} blocks; "
         f"last batch MAE {last}")


def _subjects(st):
    subjects = {"core_init": store.load(st.need("init.acud"), "dense")}
    model = st.path("model.acum")
    if model.exists():
        subjects["acu"] = store.load(model, "model").R_acu
    return subjects


def _ivte(st, test, subject, n_factors):
    ev = st.cfg["eval"]
    zeta = int(st.cfg["train"]["zeta"])
    return item_vectors_testing_error(
        test, subject, zeta, int(n_factors), beta=ev["beta"], gamma=ev["gamma"],
        train_stop=ev["train_stop"], runs=ev["runs"], users_per_run=ev["users_per_run"],
        seed=stage_seed(st.cfg.seed, "ivte"), max_iters=ev["max_iters"])


def cmd_eval_ivte(st):
    test = store.load(st.need("test.acus"), "sparse")
    results, rows = {}, []
    for name, subject in _subjects(st).items():
        for nf in st.cfg["eval"]["n_factors"]:
            rep = _ivte(st, test, subject, nf)
            results[f"{name}@{nf}"] = rep.to_json()
            rows.append([name, nf, f"{rep.train_mae:.4f}", f"{rep.probe_mae:.4f}",
                         f"{rep.sv_mass_fraction:.3f}", f"{rep.runs - rep.unconverged_runs}/{rep.runs}"])
    st.write(results, "reports", "ivte.json")
    text = _table(rows, ["subject", "factors", "train_mae", "probe_mae", "sv_mass", "reached_stop"])
    st.write_text(text, "reports", "ivte.txt")
    _say(text.rstrip())


def cmd_eval_sme(st):
    test = store.load(st.need("test.acus"), "sparse")
    results = {"zero_centroid": sparse_means_error(test, np.zeros((1, test.n_items))),
               "mean_abs_test": mean_abs_entries(test)}
    for name, subject in _subjects(st).items():
        results[name] = sparse_means_error(test, subject)
    st.write(results, "reports", "sme.json")
    text = _table([[k, f"{v:.6f}"] for k, v in results.items()], ["subject", "sme"])
    st.write_text(text, "reports", "sme.txt")
    _say(text.rstrip())


def cmd_sv_profile(st):
    train = store.load(st.need("train.acus"), "sparse")
    core = store.load(st.need(*st.core_file(st.cfg.similarity())), "coreset")
    subjects = {"core": train.select_rows(core.indices)}
    model = st.path("model.acum")
    if model.exists():
        R_acu = store.load(model, "model").R_acu
        subjects["acu"] = SparseRatings.from_dense(R_acu, mask=np.ones(R_acu.shape, bool))
    seed = stage_seed(st.cfg.seed, "sv_profile")
    summary = {}
    for name, R in subjects.items():
        prof = sv_profile(R, seed, top_k=st.cfg["sv_profile"]["top_k"])
        for curve in ("subject", "random", "difference"):
            st.write_text(prof.to_csv(curve, R.n_users), "reports", f"sv_{name}_{curve}.csv")
        cut = max(1, int(np.ceil(0.01 * prof.subject.shape[0])))
        summary[name] = {"n": int(prof.subject.shape[0]),
                         "max_difference_beyond_first_percent": float(prof.difference[cut:].max())
                         if prof.subject.shape[0] > cut else 0.0,
                         "top_subject": prof.subject[:5].tolist(),
                         "top_random": prof.random[:5].tolist()}
    st.write(summary, "reports", "sv_profile.json")
    for name, info in summary.items():
        _say(f"sv-profile: {name}: max |diff| beyond first 1% = "
             f"{info['max_difference_beyond_first_percent']:.4f}")


def cmd_report(st):
    """Selection-variant grid (IVTE per variant) plus memory accounting."""
    train = store.load(st.need("train.acus"), "sparse")
    test = store.load(st.need("test.acus"), "sparse")
    base = st.cfg.similarity()
    sims = SimilarityConfig.all_variants(base.top_k_users, base.top_k_items)
    cores, _ = _select(st, train, sims)
    nf = int(st.cfg["eval"]["n_factors"][0])
    grid, rows = [], []
    for sim in sims:
        rep = _ivte(st, test, train.select_rows(cores[sim.name].indices), nf)
        grid.append({"variant": sim.name, "item_similarity": sim.use_item_similarity,
                     "ratings": sim.use_ratings, "frequency_based": not sim.rank_based,
                     "probe_mae": rep.probe_mae, "train_mae": rep.train_mae,
                     "unconverged_runs": rep.unconverged_runs})
        yn = {True: "yes", False: "no"}
        rows.append([yn[sim.use_item_similarity], yn[sim.use_ratings], yn[not sim.rank_based],
                     f"{rep.train_mae:.4f}", f"{rep.probe_mae:.4f}"])

    core = cores[base.name]
    s = len(core)
    run_memory = memory_report(
        n_users=_n_all_users(st, train), n_items=train.n_items,
        nnz=store.load(st.need("normalized.acus"), "sparse").nnz,
        n_core=s, s=s, n_factors=nf, core_nnz=train.select_rows(core.indices).nnz)
    report = {"n_factors": nf, "table": grid, "memory": run_memory,
              "memory_paper_scale": paper_scale_report()}
    st.write(report, "reports", "report.json")
    text = _table(rows, ["item_sim", "ratings", "freq_based", "train_mae", "probe_mae"])
    for title, mem in (("this run", run_memory), ("ml-20m scale", report["memory_paper_scale"])):
        text += f"\nmemory ({title}):\n"
        text += _table([[k, str(round(mem["stored_numbers"][k])),
                         f"{100 * mem['reduction'][k]:.1f}%" if k in mem["reduction"] else "-"]
                        for k in mem["stored_numbers"]], ["stored", "numbers", "reduction"])
    st.write_text(text, "reports", "report.txt")
    _say(text.rstrip())


PIPELINE = ["ingest", "preprocess", "split", "core-select", "acu-train", "eval-ivte",
            "eval-sme", "sv-profile", "report"]


def _dispatch(st, command, args):
    if command == "ingest":
        cmd_ingest(st)
    elif command == "preprocess":
        cmd_preprocess(st)
    elif command == "split":
        cmd_split(st)
    elif command == "core-select":
        cmd_core_select(st, getattr(args, "all_variants", False), getattr(args, "dump_neighbors", False))
    elif command == "acu-train":
        cmd_acu_train(st)
    elif command == "eval-ivte":
        cmd_eval_ivte(st)
    elif command == "eval-sme":
        cmd_eval_sme(st)
    elif command == "sv-profile":
        cmd_sv_profile(st)
    elif command == "report":
        cmd_report(st)
    elif command == "run":
        stages = PIPELINE if not args.skip_report else PIPELINE[:-1]
        for name in stages:
            t0 = time.perf_counter()
            _dispatch(st, name, args)
            _say(f"[{name} done in {time.perf_counter() - t0:.1f}s]")
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError(f"unknown command {command}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="acudistill",
        description="Core-user selection and Artificial Core User distillation.",
        epilog=f"Relative dataset paths are also looked up under ${DATA_ENV} (default ./data).",
    )
    parser.add_argument("-c", "--config", help="pipeline config (JSON)")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. --set train.outer_iters=5")
    parser.add_argument("--workdir", help="override the config's workdir")
    parser.add_argument("--seed", type=int, help="override the root seed")
    parser.add_argument("--threads", type=int, default=1, help="worker cap for block training")
    parser.add_argument("--dry-run", action="store_true", help="validate the config and exit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in PIPELINE:
        p = sub.add_parser(name)
        if name == "core-select":
            p.add_argument("--all-variants", action="store_true",
                           help="write all 8 selection variants")
            p.add_argument("--dump-neighbors", action="store_true",
                           help="also store the user neighbor lists")
    run = sub.add_parser("run", help="every stage in order")
    run.add_argument("--skip-report", action="store_true")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = list(args.set)
        if args.workdir:
            overrides.append(f"workdir={json.dumps(args.workdir)}")
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        cfg = PipelineConfig.load(args.config, overrides)
        cfg.validate(check_dataset=args.command in ("ingest", "run"))
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        if args.dry_run:
            _say(f"config ok: workdir {cfg.workdir}, dataset {cfg.dataset_path()}")
            return EXIT_OK
        st = Stage(cfg, threads=args.threads)
        st.dir.mkdir(parents=True, exist_ok=True)
        _dispatch(st, args.command, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingArtifact, FileNotFoundError) as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except StoreError as exc:
        print(f"artifact error: {exc}", file=sys.stderr)
        return EXIT_STORE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
