"""Command-line surface: simulate / infer / sweep / eval.

Exit codes: 0 success, 1 validation (bad inputs/flags), 2 runtime or
feasibility failures. All outputs are deterministic given the seed; each
output directory gets a manifest recording the resolved configuration,
input digests, and id-to-index order.
"""

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import io as cio
from .errors import FeasibilityError, ValidationError
from .gibbs import ChainConfig, majority_vote, run_chain
from .likelihoods import ModelKind
from .posterior import improvement_curve, summarize
from .synthetic import PRESET_NAMES, PopulationSpec, mask, preset, simulate

__all__ = ["main", "build_parser", "sweep_grid"]


def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(x):
    return repr(float(x))


def _load_config(path):
    return cio.parse_config_file(path) if path else {}


def _spec_from_file(path):
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    try:
        beta = np.asarray(
            [[float(v) for v in row] for row in raw["cluster_beta"]], dtype=float
        )
        return PopulationSpec(
            n_instances=raw["n_instances"],
            n_users=raw["n_users"],
            n_categories=raw["n_categories"],
            cluster_weights=raw["cluster_weights"],
            cluster_eta=raw["cluster_eta"],
            cluster_beta=beta,
            tau=raw["tau"],
            name=raw.get("name", Path(path).stem),
        )
    except KeyError as exc:
        raise ValidationError(f"{path}: missing population field {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{path}: bad population value ({exc})") from None


def _cmd_simulate(args):
    started = time.monotonic()
    if bool(args.preset) == bool(args.spec_file):
        raise ValidationError("simulate needs exactly one of --preset or --spec-file")
    spec = preset(args.preset, args.scale) if args.preset else _spec_from_file(args.spec_file)
    result = simulate(spec, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    instance_ids = [f"i{k}" for k in range(spec.n_instances)]
    user_ids = [f"u{k}" for k in range(spec.n_users)]
    cio.write_annotations(out / "annotations.csv", result.labels, instance_ids, user_ids)
    cio.write_gold(out / "gold.csv", instance_ids, result.truth)
    _write_rows(
        out / "clusters.csv",
        ["user_id", "cluster"],
        [(user_ids[l], int(m)) for l, m in enumerate(result.user_clusters)],
    )
    C = spec.n_categories
    conf_rows = [
        (user_ids[l], t + 1, c + 1, _fmt(result.user_confusions[l, t, c]))
        for l in range(spec.n_users)
        for t in range(C)
        for c in range(C)
    ]
    _write_rows(out / "confusions.csv", ["user_id", "truth", "label", "prob"], conf_rows)
    cio.RunManifest(
        command="simulate",
        arguments={
            "preset": args.preset,
            "spec_file": args.spec_file,
            "scale": args.scale,
            "population": spec.name,
        },
        seed=args.seed,
        input_digests=(
            {args.spec_file: cio.sha256_file(args.spec_file)} if args.spec_file else {}
        ),
        duration_seconds=time.monotonic() - started,
        instance_ids=instance_ids,
        user_ids=user_ids,
    ).write(out / "manifest.json")
    print(f"simulate: wrote {result.labels.n_annotations} annotations "
          f"({spec.n_instances} x {spec.n_users}, C={C}) to {out}")


def _resolve_inference_inputs(args):
    labels, instance_ids, user_ids = cio.read_annotations(
        args.annotations, n_categories=args.categories
    )
    config = _load_config(args.config)
    hyper_over, chain_over = cio.split_config(config)
    hypers = cio.make_hyperparameters(labels.n_categories, hyper_over)
    chain = cio.make_chain_config(
        chain_over,
        n_iterations=args.iters,
        burn_in=args.burnin,
        seed=args.seed,
        h_aux_clusters=args.aux_clusters,
        alpha_subiterations=args.alpha_subiters,
    )
    gold = (
        cio.read_gold(args.gold, instance_ids, labels.n_categories) if args.gold else None
    )
    return labels, instance_ids, user_ids, hypers, chain, gold


def _write_summary_outputs(out, summary, instance_ids, user_ids, records):
    _write_rows(
        out / "zhat.csv",
        ["instance_id", "label"],
        [(instance_ids[i], int(t)) for i, t in enumerate(summary.z_hat)],
    )
    C = summary.z_marginals.shape[1]
    _write_rows(
        out / "marginals.csv",
        ["instance_id"] + [f"p{t}" for t in range(1, C + 1)],
        [
            (instance_ids[i], *(_fmt(p) for p in summary.z_marginals[i]))
            for i in range(len(instance_ids))
        ],
    )
    _write_rows(
        out / "cooccurrence.csv",
        ["user_id"] + list(user_ids),
        [
            (user_ids[l], *(_fmt(p) for p in summary.cooccurrence[l]))
            for l in range(len(user_ids))
        ],
    )
    if records is not None:
        _write_rows(
            out / "trace.csv",
            ["iteration", "n_clusters", "alpha", "log_joint"],
            [
                (rec.iteration, rec.n_clusters, _fmt(rec.alpha), _fmt(rec.log_joint))
                for rec in records
            ],
        )
    payload = {
        "z_hat": summary.z_hat,
        "mean_n_clusters": summary.mean_n_clusters,
        "std_n_clusters": summary.std_n_clusters,
        "n_samples": summary.n_samples,
        "reference_iteration": summary.reference_iteration,
        "accuracy": summary.accuracy,
        "cluster_profiles": [
            {
                "handle": p.handle,
                "n_members": p.n_members,
                "member_share": p.member_share,
                "confusion": p.confusion,
            }
            for p in summary.cluster_profiles
        ],
    }
    cio.write_json(out / "summary.json", payload)


def _write_report(out, model, labels, chain, summary):
    lines = [
        "crowdclust inference report",
        f"model: {model.value}",
        f"instances: {labels.n_instances}  users: {labels.n_users}  "
        f"categories: {labels.n_categories}",
        f"annotations: {labels.n_annotations}  sparsity: {labels.sparsity():.4f}",
    ]
    if chain is not None:
        lines.append(
            f"iterations: {chain.n_iterations}  burn-in: {chain.burn_in}  "
            f"retained: {summary.n_samples}"
        )
        lines.append(
            f"clusters: {summary.mean_n_clusters:.3f} +- {summary.std_n_clusters:.3f}"
        )
        lines.append(f"reference sample: iteration {summary.reference_iteration}")
    if summary.accuracy is not None:
        lines.append(f"accuracy vs gold: {summary.accuracy:.4f}")
    lines.append("")
    for prof in summary.cluster_profiles:
        lines.append(
            f"cluster {prof.handle}: {prof.n_members} users "
            f"(share {prof.member_share:.3f})"
        )
        for row in prof.confusion:
            lines.append("    " + "  ".join(f"{v:.3f}" for v in row))
    (out / "report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _cmd_infer(args):
    started = time.monotonic()
    model = ModelKind.parse(args.model)
    labels, instance_ids, user_ids, hypers, chain, gold = _resolve_inference_inputs(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if model == ModelKind.MAJORITY_VOTE:
        rng = np.random.default_rng(np.random.SeedSequence(chain.seed))
        z_hat = majority_vote(labels, rng)
        from .posterior import PosteriorSummary, accuracy as _acc

        summary = PosteriorSummary(
            z_hat=z_hat,
            z_marginals=np.eye(labels.n_categories)[z_hat - 1],
            cooccurrence=np.ones((labels.n_users, labels.n_users)),
            mean_n_clusters=1.0,
            std_n_clusters=0.0,
            cluster_profiles=[],
            n_samples=1,
            reference_iteration=0,
            accuracy=_acc(z_hat, gold) if gold is not None else None,
        )
        records = None
        chain_used = None
    else:
        records = run_chain(model, labels, hypers, chain)
        summary = summarize(records, labels, gold=gold, hypers=hypers)
        chain_used = chain
    _write_summary_outputs(out, summary, instance_ids, user_ids, records)
    _write_report(out, model, labels, chain_used, summary)
    cio.RunManifest(
        command="infer",
        arguments={
            "model": model.value,
            "annotations": str(args.annotations),
            "gold": str(args.gold) if args.gold else None,
            "config": str(args.config) if args.config else None,
            "categories": labels.n_categories,
            "chain": None if chain_used is None else {
                "n_iterations": chain.n_iterations,
                "burn_in": chain.burn_in,
                "alpha_subiterations": chain.alpha_subiterations,
                "h_aux_clusters": chain.h_aux_clusters,
                "refresh_interval": chain.refresh_interval,
                "initial_alpha": chain.initial_alpha,
            },
            "hyperparameters": {
                "eta": hypers.eta, "beta": hypers.beta,
                "epsilon": hypers.epsilon, "mu": hypers.mu,
                "a_alpha": hypers.a_alpha, "b_alpha": hypers.b_alpha,
                "gamma": hypers.gamma, "phi": hypers.phi,
                "a_t": hypers.a_t, "b_t": hypers.b_t,
            },
        },
        seed=chain.seed,
        input_digests={
            str(p): cio.sha256_file(p)
            for p in [args.annotations, args.gold, args.config]
            if p
        },
        duration_seconds=time.monotonic() - started,
        instance_ids=instance_ids,
        user_ids=user_ids,
    ).write(out / "manifest.json")
    acc = "" if summary.accuracy is None else f"  accuracy={summary.accuracy:.4f}"
    print(f"infer[{model.value}]: {summary.n_samples} samples, "
          f"clusters {summary.mean_n_clusters:.2f}{acc} -> {out}")


def sweep_grid(labels, gold, models, sparsities, replicates, seed, hypers, chain_template):
    """Mask / infer / score over a (sparsity x replicate x model) grid.

    Majority voting always runs (it is the pairing baseline). Every cell draws
    its own spawned generator, so results do not depend on execution order.
    Returns (rows, curve, cluster_rows): rows are (model, sparsity, replicate,
    accuracy); cluster_rows carry the posterior mean cluster count per MCMC run.
    """
    models = [ModelKind.parse(m) for m in models]
    mcmc = [m for m in models if m != ModelKind.MAJORITY_VOTE]
    sparsities = [float(s) for s in sparsities]
    root = np.random.SeedSequence(seed)
    slots = 2 + len(mcmc)
    children = root.spawn(len(sparsities) * replicates * slots)
    rows = []
    cluster_rows = []
    for si, sparsity in enumerate(sparsities):
        for rep in range(replicates):
            base = (si * replicates + rep) * slots
            masked = mask(labels, sparsity, np.random.default_rng(children[base]))
            mv_rng = np.random.default_rng(children[base + 1])
            z_mv = majority_vote(masked, mv_rng)
            from .posterior import accuracy as _acc

            rows.append((ModelKind.MAJORITY_VOTE.value, sparsity, rep, _acc(z_mv, gold)))
            for mi, model in enumerate(mcmc):
                child_seed = int(children[base + 2 + mi].generate_state(1, dtype=np.uint64)[0])
                config = ChainConfig(
                    n_iterations=chain_template.n_iterations,
                    burn_in=chain_template.burn_in,
                    seed=child_seed,
                    alpha_subiterations=chain_template.alpha_subiterations,
                    h_aux_clusters=chain_template.h_aux_clusters,
                    refresh_interval=chain_template.refresh_interval,
                    initial_alpha=chain_template.initial_alpha,
                )
                records = run_chain(model, masked, hypers, config)
                summary = summarize(records, masked, gold=gold, hypers=hypers)
                rows.append((model.value, sparsity, rep, summary.accuracy))
                cluster_rows.append(
                    (model.value, sparsity, rep,
                     summary.mean_n_clusters, summary.std_n_clusters)
                )
    requested = {m.value for m in models}
    reported = [r for r in rows if r[0] in requested or r[0] == "mv"]
    return reported, improvement_curve(rows), cluster_rows


def _cmd_sweep(args):
    started = time.monotonic()
    labels, instance_ids, user_ids, hypers, chain, gold = _resolve_inference_inputs(args)
    if gold is None:
        raise ValidationError("sweep needs --gold to score the masked runs")
    models = [m.strip() for m in args.models.split(",") if m.strip()]
    sparsities = [float(s) for s in args.sparsity.split(",") if s.strip()]
    if not models or not sparsities:
        raise ValidationError("sweep needs non-empty --models and --sparsity")
    if args.replicates < 1:
        raise ValidationError("--replicates must be >= 1")
    rows, curve, cluster_rows = sweep_grid(
        labels, gold, models, sparsities, args.replicates, chain.seed, hypers, chain
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(
        out / "accuracies.csv",
        ["model", "sparsity", "replicate", "accuracy"],
        [(m, _fmt(s), r, _fmt(a)) for m, s, r, a in rows],
    )
    _write_rows(
        out / "improvement.csv",
        ["model", "sparsity", "mean_improvement", "std_improvement", "n_replicates"],
        [
            (p.method, _fmt(p.sparsity), _fmt(p.mean_improvement),
             _fmt(p.std_improvement), p.n_replicates)
            for p in curve
        ],
    )
    _write_rows(
        out / "clusters.csv",
        ["model", "sparsity", "replicate", "mean_n_clusters", "std_n_clusters"],
        [(m, _fmt(s), r, _fmt(mean), _fmt(std)) for m, s, r, mean, std in cluster_rows],
    )
    cio.RunManifest(
        command="sweep",
        arguments={
            "models": models,
            "sparsities": sparsities,
            "replicates": args.replicates,
            "annotations": str(args.annotations),
            "gold": str(args.gold),
            "chain": {
                "n_iterations": chain.n_iterations,
                "burn_in": chain.burn_in,
                "alpha_subiterations": chain.alpha_subiterations,
                "h_aux_clusters": chain.h_aux_clusters,
            },
        },
        seed=chain.seed,
        input_digests={
            str(p): cio.sha256_file(p)
            for p in [args.annotations, args.gold, args.config]
            if p
        },
        duration_seconds=time.monotonic() - started,
        instance_ids=instance_ids,
        user_ids=user_ids,
    ).write(out / "manifest.json")
    print(f"sweep: {len(rows)} runs over {len(sparsities)} sparsity levels -> {out}")


def _cmd_eval(args):
    inferred = Path(args.inferred)
    zhat_path = inferred / "zhat.csv" if inferred.is_dir() else inferred
    ids, z_hat = [], []
    with open(zhat_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:2]] != ["instance_id", "label"]:
            raise ValidationError(
                f"{zhat_path}: expected header 'instance_id,label', got {header}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ValidationError(f"{zhat_path}:{lineno}: expected 2 columns")
            ids.append(row[0].strip())
            try:
                z_hat.append(int(row[1]))
            except ValueError:
                raise ValidationError(
                    f"{zhat_path}:{lineno}: label {row[1]!r} is not an integer"
                ) from None
    if not ids:
        raise ValidationError(f"{zhat_path}: no estimates")
    z_hat = np.asarray(z_hat, dtype=np.int64)
    gold = cio.read_gold(args.gold, ids, int(max(z_hat.max(), 1)))
    from .posterior import accuracy as _acc

    acc = _acc(z_hat, gold)
    print(f"eval: accuracy {acc:.4f} over {len(ids)} instances")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        cio.write_json(out / "accuracy.json", {
            "accuracy": acc,
            "n_instances": len(ids),
            "inferred": str(zhat_path),
            "gold": str(args.gold),
        })


def build_parser():
    parser = argparse.ArgumentParser(
        prog="crowdclust",
        description="Crowd label aggregation with nonparametric annotator clustering.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic dataset")
    sim.add_argument("--preset", choices=PRESET_NAMES, help="named population")
    sim.add_argument("--scale", choices=("desk", "paper"), default="desk")
    sim.add_argument("--spec-file", help="JSON population description")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True)
    sim.set_defaults(func=_cmd_simulate)

    def add_infer_flags(p):
        p.add_argument("annotations", help="annotation CSV (instance_id,user_id,label)")
        p.add_argument("--gold", help="gold CSV (instance_id,label)")
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True)
        p.add_argument("--iters", type=int, default=None, dest="iters",
                       help="chain iterations (default 10000)")
        p.add_argument("--burnin", type=int, default=None)
        p.add_argument("--aux-clusters", type=int, default=None, dest="aux_clusters")
        p.add_argument("--alpha-subiters", type=int, default=None, dest="alpha_subiters")
        p.add_argument("--categories", type=int, default=None)

    inf = sub.add_parser("infer", help="estimate ground truth from annotations")
    inf.add_argument("--model", required=True,
                     choices=[m.value for m in ModelKind])
    add_infer_flags(inf)
    inf.set_defaults(func=_cmd_infer)

    sweep = sub.add_parser("sweep", help="sparsity grid x replicates x models")
    add_infer_flags(sweep)
    sweep.add_argument("--models", default="mv,ibcc,cbcc,hcbcc")
    sweep.add_argument(
        "--sparsity",
        default=",".join(str(0.825 + 0.025 * k) for k in range(7)),
        help="comma-separated missing fractions",
    )
    sweep.add_argument("--replicates", type=int, default=50)
    sweep.set_defaults(func=_cmd_sweep)

    ev = sub.add_parser("eval", help="score an inference output against gold")
    ev.add_argument("inferred", help="infer output directory or zhat.csv")
    ev.add_argument("--gold", required=True)
    ev.add_argument("--out", default=None)
    ev.set_defaults(func=_cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FeasibilityError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
