"""Command-line front end.

Every subcommand reads one JSON run config (see FORMATS.md), writes its
artifacts below the run's output directory together with the resolved config,
and refuses to overwrite earlier artifacts unless ``--force`` is given.
"""

from __future__ import annotations

import argparse
import csv
import json
import shutil
import sys
from pathlib import Path

from . import evaluation as ev
from ._seeding import hash64
from .config import OUTPUT_ROOT_ENV, RunConfig, load_config
from .datasets import DataError, SplitPlan
from .direct import HypothesisResult
from .ensemble import ContaminationError, build_positive_reference_models, load_ensemble, save_ensemble
from .indirect import find_enhancing, indirect_attack_many, read_enhancing, write_enhancing
from .model import ConfigurationError, DivergenceError, load_model, save_model
from .selection import SelectionParams, select_vulnerable, selected_ids, write_verdicts

SNAPSHOT = "config.resolved.json"


class UsageError(Exception):
    """Bad invocation; reported with exit status 2."""


# ---------------------------------------------------------------------------
# run-directory helpers


class Run:
    def __init__(self, config: RunConfig, output: Path, force: bool, jobs: int):
        self.config = config
        self.out = output
        self.force = force
        self.jobs = jobs
        self._pools = None

    def claim(self, relative: str) -> Path:
        """Path for a new artifact; existing ones are only replaced with --force."""
        path = self.out / relative
        if path.exists():
            if not self.force:
                raise UsageError(f"{path} already exists; rerun with --force to replace it")
            shutil.rmtree(path) if path.is_dir() else path.unlink()
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    def snapshot(self) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / SNAPSHOT
        text = json.dumps(self.config.to_dict(), indent=2, sort_keys=True) + "\n"
        if path.exists() and path.read_text() != text and not self.force:
            raise UsageError(f"{self.out} holds a run with a different config; use another output or --force")
        path.write_text(text)

    def pools(self):
        if self._pools is None:
            self._pools = ev.make_pools(self.config.load_dataset(), self.config.protocol)
        return self._pools

    def ensemble(self):
        refs = self.out / "refs"
        if not (refs / "ensemble.json").exists():
            raise UsageError(f"no reference ensemble in {refs}; run train-refs first")
        return load_ensemble(refs, self.pools()[1])

    def targets(self):
        """Protocol target models, trained once and cached under targets/."""
        target_pool = self.pools()[0]
        tdir = self.out / "targets"
        if (tdir / "plan.json").exists():
            plan = SplitPlan.from_dict(json.loads((tdir / "plan.json").read_text()))
            ids = tuple(f"m{j:03d}" for j in range(plan.n_models))
            models = tuple(load_model(tdir / f"{mid}.npz")[0] for mid in ids)
            return plan, models, ids
        plan, models, ids = ev.train_target_models(target_pool, self.config.protocol, self.jobs)
        tdir.mkdir(parents=True, exist_ok=True)
        for mid, m in zip(ids, models):
            save_model(tdir / f"{mid}.npz", m)
        (tdir / "plan.json").write_text(json.dumps(plan.to_dict()))
        return plan, models, ids

    def selection_params(self) -> SelectionParams:
        p = self.config.protocol
        target_pool, reference_pool, _ = self.pools()
        return SelectionParams(p.delta, p.beta, len(target_pool) // 2, len(reference_pool), p.neighbor_ratio)


# ---------------------------------------------------------------------------
# commands


def cmd_train_refs(run: Run, args) -> int:
    path = run.claim("refs")
    ens = ev.train_reference_ensemble(run.pools()[1], run.config.protocol, run.jobs)
    save_ensemble(path, ens)
    target_pool, reference_pool, _ = run.pools()
    (run.out / "pools.json").write_text(json.dumps({"target": list(target_pool.ids),
                                                    "reference": list(reference_pool.ids)}))
    print(f"trained {ens.k} reference models -> {path}")
    return 0


def cmd_select_targets(run: Run, args) -> int:
    ens = run.ensemble()
    params = run.selection_params()
    verdicts = select_vulnerable(run.pools()[0], run.pools()[1], ens, params)
    path = run.claim("verdicts.csv")
    write_verdicts(path, verdicts, params)
    print(f"{len(selected_ids(verdicts))} of {len(verdicts)} records selected -> {path}")
    return 0


def _records(run: Run, requested: list[str] | None) -> list[str]:
    target_pool = run.pools()[0]
    if requested:
        unknown = [r for r in requested if r not in set(target_pool.ids)]
        if unknown:
            raise UsageError(f"unknown record id(s): {', '.join(unknown)}")
        return requested
    verdicts = run.out / "verdicts.csv"
    if verdicts.exists():
        with verdicts.open(newline="") as fh:
            return [r["record_id"] for r in csv.DictReader(fh) if r["selected"] == "1"]
    return selected_ids(select_vulnerable(target_pool, run.pools()[1], run.ensemble(), run.selection_params()))


def _enhancing(run: Run, ens, record, write: bool = True):
    path = run.out / "enhancing" / f"{record.id}.csv"
    if path.exists() and not (write and run.force):
        return [e.record for e in read_enhancing(path)]
    p = run.config.protocol
    positive = build_positive_reference_models(ens, record, p.update, p.positive_batches)
    found = find_enhancing(record, ens, positive, p.indirect, run.pools()[1].feature_ranges(),
                           hash64(p.seed_for("enhancing"), record.id), p.cluster_candidates)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_enhancing(path, record, found)
    return [e.record for e in found]


def cmd_gen_enhancing(run: Run, args) -> int:
    ens = run.ensemble()
    target_pool = run.pools()[0]
    for rid in _records(run, args.record):
        path = run.out / "enhancing" / f"{rid}.csv"
        if path.exists() and not run.force:
            raise UsageError(f"{path} already exists; rerun with --force to replace it")
        found = _enhancing(run, ens, target_pool.get(rid))
        print(f"{rid}: {len(found)} enhancing records -> {path}")
    return 0


def cmd_attack(run: Run, args) -> int:
    ens = run.ensemble()
    target_pool = run.pools()[0]
    records = _records(run, args.record)
    if args.target_model:
        models = [load_model(p)[0] for p in args.target_model]
        model_ids = [Path(p).stem for p in args.target_model]
        members = None
    else:
        plan, models, model_ids = run.targets()
        members = plan.matrix()
        if args.model:
            unknown = [m for m in args.model if m not in model_ids]
            if unknown:
                raise UsageError(f"unknown model id(s): {', '.join(unknown)}")
            keep = [model_ids.index(m) for m in args.model]
            models = [models[i] for i in keep]
            model_ids = [model_ids[i] for i in keep]
            members = members[:, keep]
    out = run.claim(f"attack-{args.kind}.csv")
    pos = {rid: i for i, rid in enumerate(target_pool.ids)}
    rows: list[HypothesisResult] = []
    for rid in records:
        record = target_pool.get(rid)
        if args.kind == "direct":
            pv, losses = ev.direct_scores(models, ens, target_pool.take([rid]))
            rows += [HypothesisResult(rid, mid, float(s), float(p)) for mid, s, p in zip(model_ids, losses[0], pv[0])]
        else:
            enhancing = _enhancing(run, ens, record, write=False)
            if not enhancing:
                print(f"warning: no enhancing records for {rid}; skipped", file=sys.stderr)
                continue
            rows += indirect_attack_many(models, record, enhancing, ens, model_ids)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record_id", "model_id", "kind", "statistic", "p_value", "member"])
        for r in rows:
            j = model_ids.index(r.model_id)
            member = "" if members is None else int(members[pos[r.record_id], j])
            w.writerow([r.record_id, r.model_id, r.kind, repr(r.statistic), repr(r.p_value), member])
    print(f"{len(rows)} results -> {out}")
    return 0


def cmd_evaluate(run: Run, args) -> int:
    if args.preset == "toy":
        return cmd_toy_demo(run, args)
    out = run.claim("evaluate")
    dataset = run.config.load_dataset()
    if args.sweep:
        values = [json.loads(v) for v in args.values or []]
        rows = ev.sweep(dataset, run.config.protocol, args.sweep, values, jobs=run.jobs)
        out.mkdir(parents=True)
        ev.write_sweep(rows, out / f"sweep-{args.sweep}.json", args.sweep)
        for row in rows:
            print(f"{args.sweep}={row.value}: {row.n_selected} selected")
        return 0
    report = ev.run_protocol(dataset, run.config.protocol, jobs=run.jobs)
    ev.write_report(report, out)
    for kind in report.kinds():
        for m in report.metrics(kind):
            prec = "-" if m.precision is None else f"{m.precision:.4f}"
            print(f"{kind} p<{m.cutoff:g}: precision {prec} recall {m.recall:.4f} (TP {m.tp}, FP {m.fp})")
    if report.empty:
        print("no vulnerable records selected; report is empty")
    return 0


def cmd_toy_demo(run: Run, args) -> int:
    out = run.claim("toy")
    result = ev.toy_demonstration(run.config.seed)
    ev.write_toy(result, out)
    print(f"outlier AUC {result.outlier.auc:.3f}, control AUC {result.control.auc:.3f} -> {out}")
    return 0


COMMANDS = {
    "train-refs": cmd_train_refs,
    "select-targets": cmd_select_targets,
    "gen-enhancing": cmd_gen_enhancing,
    "attack": cmd_attack,
    "evaluate": cmd_evaluate,
    "toy-demo": cmd_toy_demo,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gmia", description="Membership inference against well-generalized models.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config JSON (defaults apply when omitted)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field, e.g. protocol.delta=0.2")
    common.add_argument("--output", help=f"output directory (relative paths go under ${OUTPUT_ROOT_ENV} if set)")
    common.add_argument("--force", action="store_true", help="replace existing artifacts")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for training")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train-refs", parents=[common], help="train the reference ensemble")
    sub.add_parser("select-targets", parents=[common], help="write vulnerability verdicts")
    p = sub.add_parser("gen-enhancing", parents=[common], help="find enhancing records for target records")
    p.add_argument("--record", action="append", help="target record id (default: selected records)")
    p = sub.add_parser("attack", parents=[common], help="attack target models")
    p.add_argument("--kind", choices=("direct", "indirect"), default="direct")
    p.add_argument("--record", action="append", help="target record id (default: selected records)")
    p.add_argument("--model", action="append", help="protocol target model id, e.g. m007 (default: all)")
    p.add_argument("--target-model", action="append", help="saved model file to attack instead of protocol models")
    p = sub.add_parser("evaluate", parents=[common], help="run the full protocol and write a report")
    p.add_argument("--preset", choices=("toy",), help="run a canned experiment instead")
    p.add_argument("--sweep", choices=ev.SWEEP_AXES, help="sweep one setting instead of a single run")
    p.add_argument("--values", nargs="+", help="sweep values as JSON, e.g. 0 0.01 or [0.1,0.1]")
    sub.add_parser("toy-demo", parents=[common], help="in/out output distributions on the toy dataset")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.jobs < 1:
            raise UsageError("--jobs must be at least 1")
        config = load_config(args.config, args.set)
        run = Run(config, config.output_dir(args.output), args.force, args.jobs)
        run.snapshot()
        return COMMANDS[args.command](run, args)
    except (UsageError, ConfigurationError, DataError) as exc:
        print(f"gmia {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ContaminationError, DivergenceError, OSError, ValueError, KeyError) as exc:
        print(f"gmia {args.command}: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
