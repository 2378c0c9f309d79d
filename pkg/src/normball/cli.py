"""Command-line entry point: generate, train, eval, ablate, rl.

Every run writes into ``<out>/<command>-s<seed>-<hash>/`` where ``hash``
digests the resolved configuration. ``config.txt`` (key=value) is written
there before any work starts; passing it back via ``--config`` reproduces the
run. Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .cohort import CohortConfig, generate_cohort, load_cohort_csv, save_cohort_csv, worst_organs
from .embedding import EmbeddingModel, LossConfig, NormedEmbedding, config_hash
from .numerics import atomic_write_text
from .numerics.checkpoint import format_meta, parse_meta

OUT_ENV = "NORMBALL_OUT"
# never part of the config hash: they change where or how fast, not what
_RUNTIME_KEYS = ("command", "out", "config", "jobs")


class UsageError(Exception):
    pass


def _parent() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="key=value file; explicit flags override it")
    p.add_argument("--out", default=None, help=f"output root (default ${OUT_ENV} or ./runs)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1, help="worker processes for parallel paths")
    return p


def _embedding_flags(p: argparse.ArgumentParser, epochs: int = 10) -> None:
    g = p.add_argument_group("encoder")
    g.add_argument("--encoder", choices=("mlp", "gru"), default="mlp")
    g.add_argument("--dim", type=int, default=3, help="embedding dimension")
    g.add_argument("--hidden", type=int, default=512)
    g.add_argument("--layers", type=int, default=8)
    g.add_argument("--gru-hidden", type=int, default=128)
    g.add_argument("--gru-layers", type=int, default=2)
    g.add_argument("--horizon", type=int, default=12)
    g.add_argument("--init", choices=("orthogonal", "uniform"), default="orthogonal")
    g.add_argument("--val-fraction", type=float, default=0.2)
    g.add_argument("--steps-per-epoch", type=int, default=None)
    g = p.add_argument_group("loss")
    g.add_argument("--beta", type=float, default=0.75)
    g.add_argument("--lambda1", type=float, default=0.7)
    g.add_argument("--lambda2", type=float, default=10.0)
    g.add_argument("--lambda3", type=float, default=0.2)
    g.add_argument("--lambda4", type=float, default=0.05)
    g.add_argument("--alpha", type=float, default=3.0)
    g.add_argument("--triplet-margin", type=float, default=0.2)
    g.add_argument("--cosine-margin", type=float, default=0.05)
    g.add_argument("--cosine-variant", choices=("standard", "inner_product"), default="standard")
    g.add_argument("--lambda4-release-target", choices=("anchor", "positive"), default="anchor")
    g.add_argument("--t", type=int, default=24, help="near-terminal window in hours")
    g.add_argument("--nonsurvivor-weight", type=float, default=5.0)
    g.add_argument("--batch", type=int, default=None)
    g.add_argument("--lr", type=float, default=3e-5)
    g.add_argument("--epochs", type=int, default=epochs)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="normball", description="Normed clinical-state embeddings.")
    sub = parser.add_subparsers(dest="command", required=True)
    parent = _parent()

    p = sub.add_parser("generate", parents=[parent], help="write a synthetic cohort CSV")
    p.add_argument("--patients", type=int, required=True)
    p.add_argument("--survivor-fraction", type=float, default=0.9)
    p.add_argument("--min-length", type=int, default=24)
    p.add_argument("--max-length", type=int, default=72)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--treatment-effect", type=float, default=0.15)
    p.add_argument("--baseline-scale", type=float, default=1.0, help="sd of chronic patient baselines")

    p = sub.add_parser("train", parents=[parent], help="train a normed embedding")
    p.add_argument("--cohort", required=True)
    _embedding_flags(p)

    p = sub.add_parser("eval", parents=[parent], help="evaluate a checkpoint on a cohort")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cohort", required=True)
    for flag in ("auroc", "probe", "jumps", "curves", "separation", "all"):
        p.add_argument(f"--{flag}", action="store_true")
    p.add_argument("--probe-splits", type=int, default=100)
    p.add_argument("--max-hours", type=int, default=72)
    p.add_argument("--t", type=int, default=24)

    p = sub.add_parser("ablate", parents=[parent], help="sweep beta and intermediate-loss variants")
    p.add_argument("--cohort", required=True)
    p.add_argument("--grid", default=None, help='e.g. "beta=0,1" (default: 5 betas + 3 variants)')
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--probe-splits", type=int, default=100)
    _embedding_flags(p)

    p = sub.add_parser("rl", parents=[parent], help="c51 ensembles on embedding-shaped rewards")
    p.add_argument("--cohort", required=True)
    p.add_argument("--reward", choices=("terminal", "r1", "r2"), required=True)
    p.add_argument("--ensemble", type=int, default=5)
    p.add_argument("--augment", action="store_true")
    p.add_argument("--risk-members", type=int, default=10)
    p.add_argument("--risk-dir", default=None, help="reuse member checkpoints from an earlier rl run")
    p.add_argument("--rl-epochs", type=int, default=8)
    p.add_argument("--rl-batch", type=int, default=100)
    p.add_argument("--rl-lr", type=float, default=3e-4)
    p.add_argument("--rl-hidden", type=int, default=256)
    p.add_argument("--rl-steps-per-epoch", type=int, default=None)
    p.add_argument("--gamma", type=float, default=0.999)
    p.add_argument("--tau", type=float, default=0.005)
    p.add_argument("--atoms", type=int, default=51)
    p.add_argument("--vmin", type=float, default=-18.0)
    p.add_argument("--vmax", type=float, default=18.0)
    p.add_argument("--save-transitions", action="store_true")
    _embedding_flags(p)
    p.set_defaults(dim=10)
    return parser


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    for action in parser._subparsers._group_actions:
        if command in action.choices:
            return action.choices[command]
    raise KeyError(command)


def _coerce(action: argparse.Action, raw: str):
    if raw in ("", "None"):
        return None
    if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    value = action.type(raw) if action.type is not None else raw
    if action.choices is not None and value not in action.choices:
        raise UsageError(f"config value {raw!r} for {action.dest} not in {list(action.choices)}")
    return value


def parse_args(argv=None) -> argparse.Namespace:
    """Parse flags, layering a ``--config`` file underneath explicit flags."""
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config and known.command in COMMANDS:
        sub = _subparser(parser, known.command)
        values = parse_meta(Path(known.config).read_text(encoding="utf-8"))
        if values.get("command", known.command) != known.command:
            sub.error(f"config file is for {values['command']!r}, not {known.command!r}")
        actions = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, raw in values.items():
            if key in _RUNTIME_KEYS or key == "config_hash":
                continue
            if key not in actions:
                sub.error(f"unknown key {key!r} in config file {known.config}")
            try:
                defaults[key] = _coerce(actions[key], raw)
            except (ValueError, UsageError) as exc:
                sub.error(str(exc))
        for a in sub._actions:
            if a.dest in defaults:
                a.required = False
        sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def resolved(args: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in _RUNTIME_KEYS}


def run_dir(args: argparse.Namespace) -> tuple[Path, str]:
    digest = config_hash({"command": args.command}, resolved(args))
    root = Path(args.out or os.environ.get(OUT_ENV) or "runs")
    return root / f"{args.command}-s{args.seed}-{digest}", digest


def write_snapshot(args, out: Path, digest: str) -> None:
    meta = {"command": args.command, **resolved(args), "config_hash": digest}
    atomic_write_text(out / "config.txt", format_meta(meta))


def loss_config(args) -> LossConfig:
    try:
        return LossConfig(
            beta=args.beta, lambda1=args.lambda1, lambda2=args.lambda2, lambda3=args.lambda3,
            lambda4=args.lambda4, alpha=args.alpha, triplet_margin=args.triplet_margin,
            cosine_margin=args.cosine_margin, cosine_variant=args.cosine_variant,
            near_terminal_t=args.t, nonsurvivor_weight=args.nonsurvivor_weight, batch_size=args.batch,
            learning_rate=args.lr, epochs=args.epochs, lambda4_release_target=args.lambda4_release_target,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def estimator_params(args) -> dict:
    return dict(encoder=args.encoder, hidden_dim=args.hidden, num_layers=args.layers,
                gru_hidden_dim=args.gru_hidden, gru_layers=args.gru_layers, horizon=args.horizon,
                init=args.init, validation_fraction=args.val_fraction, steps_per_epoch=args.steps_per_epoch)


def _cohort_seed(cohort_path: str):
    snap = Path(cohort_path).with_name("config.txt")
    if snap.exists():
        return parse_meta(snap.read_text(encoding="utf-8")).get("seed", "")
    return ""


# ------------------------------------------------------------------ commands

def cohort_config(args) -> CohortConfig:
    cfg = CohortConfig(num_patients=args.patients, survivor_fraction=args.survivor_fraction,
                       min_length=args.min_length, max_length=args.max_length, noise_scale=args.noise,
                       treatment_effect=args.treatment_effect, baseline_scale=args.baseline_scale,
                       seed=args.seed)
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return cfg


def validate(args) -> None:
    """Reject bad parameter values before anything is written."""
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    if args.command == "generate":
        cohort_config(args)
    elif args.command in ("train", "ablate", "rl"):
        loss_config(args)
        for name in ("dim", "hidden", "layers", "epochs"):
            if getattr(args, name) < 1:
                raise UsageError(f"--{name} must be >= 1")
        if not 0.0 < args.val_fraction < 1.0:
            raise UsageError("--val-fraction must lie in (0, 1)")


def cmd_generate(args, out: Path, digest: str) -> None:
    save_cohort_csv(generate_cohort(cohort_config(args)), out / "cohort.csv")


def cmd_train(args, out: Path, digest: str) -> None:
    from .evalsuite.report import write_csv

    cfg = loss_config(args)
    cohort = load_cohort_csv(args.cohort)
    est = NormedEmbedding(n_components=args.dim, loss_config=cfg, random_state=args.seed, **estimator_params(args))
    est.fit(cohort)
    hist = est.history_
    rows = [{"epoch": e, "train_loss": tr, "val_loss": va, "best": int(e == hist.best_epoch),
             "seed": args.seed, "config_hash": digest}
            for e, (tr, va) in enumerate(zip(hist.train_losses, hist.val_losses))]
    write_csv(out / "curves.csv", ["epoch", "train_loss", "val_loss", "best", "seed", "config_hash"], rows)
    est.checkpoint_.save(out / "checkpoint.nbck",
                         {"seed": args.seed, "cohort_seed": _cohort_seed(args.cohort), "config_hash": digest})


def cmd_eval(args, out: Path, digest: str) -> None:
    from . import evalsuite as ev

    model, _ = EmbeddingModel.load(args.checkpoint)
    cohort = load_cohort_csv(args.cohort)
    want = {k for k in ("auroc", "probe", "jumps", "curves", "separation") if getattr(args, k) or args.all}
    if not want:
        raise UsageError("choose at least one of --auroc --probe --jumps --curves --separation --all")
    rng = np.random.default_rng(args.seed)
    emb = ev.embed_states(model, cohort)
    d = np.sum(emb**2, axis=-1)
    report = ev.EvalReport(seed=args.seed, config_hash=digest)
    report.risk = d
    report.died = np.concatenate([np.full(p.length, p.died) for p in cohort])
    if "auroc" in want:
        report.auroc = {"norm": ev.scores_auroc(d, cohort)}
        for score in ev.BASELINE_SCORES:
            report.auroc[score] = ev.baseline_score_auroc(cohort, score=score)
    if "probe" in want:
        groups = ev.patient_groups(cohort)
        labels = ev.horizon_labels(cohort, 24)
        splits = ev.probe_splits(groups, labels, args.probe_splits, 0.8, rng)
        report.probe = {
            "embedding": ev.logistic_probe(emb, labels, groups, splits=splits, jobs=args.jobs),
            "embedding+norm": ev.logistic_probe(np.column_stack([emb, d]), labels, groups, splits=splits,
                                                jobs=args.jobs),
        }
    if "jumps" in want:
        report.jumps = ev.jumps_from_risk(ev.trajectory.split_by_patient(d, cohort))
    if "curves" in want:
        report.curves = ev.curve_from_risk(ev.trajectory.split_by_patient(d, cohort), cohort, args.max_hours)
    if "separation" in want:
        report.separation = ev.organ_separation(model, cohort, args.t, rng=rng)
        dead, mask = ev.trajectory.near_death_states(cohort, args.t)
        if dead:
            report.projection = ev.embed_states(model, dead)[mask]
            report.projection_organs = worst_organs(np.concatenate([p.states for p in dead])[mask])
    ev.export_report(report, out)


def cmd_ablate(args, out: Path, digest: str) -> None:
    from .evalsuite import ablation_sweep, default_grid, parse_grid

    base = loss_config(args)
    try:
        grid = default_grid(base.beta) if args.grid is None else parse_grid(args.grid)
        for point in grid:
            point.config(base)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"bad --grid: {exc}") from None
    params = dict(n_components=args.dim, **estimator_params(args))
    ablation_sweep(load_cohort_csv(args.cohort), grid, base, params, out_dir=out, seed=args.seed,
                   cohort_seed=_cohort_seed(args.cohort), test_fraction=args.test_fraction,
                   n_probe_splits=args.probe_splits, jobs=args.jobs)


def _risk_model(args, cohort, out: Path):
    from .rlshape import RiskModel, fit_risk_model

    if args.risk_dir:
        paths = sorted(Path(args.risk_dir).glob("member_*.nbck"))
        if not paths:
            raise FileNotFoundError(f"no member_*.nbck checkpoints in {args.risk_dir}")
        return RiskModel([EmbeddingModel.load(p)[0] for p in paths])
    rm = fit_risk_model(cohort, args.risk_members, args.dim, loss_config(args),
                        np.random.default_rng([args.seed, 1]), **estimator_params(args))
    for i, m in enumerate(rm.members):
        m.save(out / "risk" / f"member_{i:02d}.nbck", {"seed": args.seed})
    return rm


def cmd_rl(args, out: Path, digest: str) -> None:
    from .rlshape import C51Config, RewardSpec, bootstrap_ensemble, build_mdp, policy_report, save_transitions_csv
    from .rlshape.report import export_policy_report

    if args.ensemble < 1:
        raise UsageError("--ensemble must be >= 1")
    try:
        c51 = C51Config(n_atoms=args.atoms, v_min=args.vmin, v_max=args.vmax, gamma=args.gamma,
                        batch_size=args.rl_batch, learning_rate=args.rl_lr, tau=args.tau, epochs=args.rl_epochs,
                        hidden_dim=args.rl_hidden, augment=args.augment, steps_per_epoch=args.rl_steps_per_epoch)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    cohort = load_cohort_csv(args.cohort)
    rm = _risk_model(args, cohort, out)
    spec = RewardSpec(args.reward)
    if args.save_transitions:
        save_transitions_csv(build_mdp(cohort, rm, spec), cohort, out / "transitions.csv")
    ens = bootstrap_ensemble(cohort, rm, spec, c51, args.ensemble, np.random.default_rng([args.seed, 2]),
                             jobs=args.jobs)
    export_policy_report(policy_report(ens, cohort), out, args.seed, digest, args.reward)


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate, "rl": cmd_rl}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except OSError as exc:
        print(f"normball: error: {exc}", file=sys.stderr)
        return 2
    try:
        validate(args)
    except UsageError as exc:
        print(f"normball {args.command}: error: {exc}", file=sys.stderr)
        return 2
    out, digest = run_dir(args)
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_snapshot(args, out, digest)
        COMMANDS[args.command](args, out, digest)
    except UsageError as exc:
        print(f"normball {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure: report and exit 1
        print(f"normball {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
