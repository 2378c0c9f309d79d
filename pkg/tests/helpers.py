"""Shared oracles for the test suite."""
import numpy as np

from normball.cohort import STATE_DIM
from normball.rlshape import TransitionSet


def central_difference(f, params: dict, step: float = 1e-5, order: int = 2, masks: dict | None = None) -> dict:
    """Numerical gradient of scalar f(params) for every entry of every array.

    ``order=2`` is the two-point quotient (error O(step^2)); ``order=4`` the
    five-point stencil (error O(step^4)). With ``masks`` (name -> boolean
    array) only the selected entries are differenced; the rest are NaN.
    """
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    offsets, weights = ((1, -1), (1.0, -1.0)) if order == 2 else ((2, 1, -1, -2), (-1.0, 8.0, -8.0, 1.0))
    scale = 2 * step if order == 2 else 12 * step
    grads = {}
    for name, value in params.items():
        g = np.zeros_like(value)
        mask = None if masks is None else masks.get(name)
        for idx in np.ndindex(value.shape):
            if mask is not None and not mask[idx]:
                g[idx] = np.nan
                continue
            orig = value[idx]
            total = 0.0
            for k, w in zip(offsets, weights):
                value[idx] = orig + k * step
                total += w * f(params)
            value[idx] = orig
            g[idx] = total / scale
        grads[name] = g
    return grads


def max_relative_error(analytic: dict, numeric: dict, floor: float = 1e-8) -> float:
    """Elementwise relative error with denominators bounded below by ``floor``.

    NaN entries of ``numeric`` (not differenced) are skipped.
    """
    worst = 0.0
    for name in numeric:
        keep = ~np.isnan(numeric[name])
        a, n = analytic[name][keep], numeric[name][keep]
        rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(rel.max(initial=0.0)))
    return worst


def resolution_floor(f_value: float, step: float = 1e-5, tol: float = 1e-4, ulps: float = 16.0) -> float:
    """Smallest gradient entry a central difference can check to ``tol``.

    A forward pass returns f with an absolute rounding error of a few ulps
    (``ulps`` * eps * |f|), so the difference quotient is only good to about
    that over ``step``; an entry g below that error over ``tol`` cannot be
    resolved to ``tol`` relative.
    """
    return max(1e-8, ulps * np.finfo(float).eps * abs(f_value) / step / tol)


def elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0)))


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


LOSS_COMPONENTS = ("terminal", "triplet", "cosine_standard", "cosine_inner_product",
                   "contrastive", "intermediate", "total")


def feature_row_masks(params: dict, seed: int, feature_rows: int) -> dict:
    """Select ``feature_rows`` of the STATE_DIM state-feature rows of every
    input-facing weight (the trailing rows), keeping all other entries."""
    rows = (seed * feature_rows + np.arange(feature_rows)) % STATE_DIM
    masks = {}
    for name, value in params.items():
        if value.ndim == 2 and value.shape[0] >= STATE_DIM:
            lead = value.shape[0] - STATE_DIM
            mask = np.zeros(value.shape, dtype=bool)
            mask[:lead] = True
            mask[lead + rows] = True
            masks[name] = mask
    return masks


def loss_gradient_error(cohort, encoder: str, component: str, seed: int, batch_size: int = 3,
                        step: float = 1e-4, feature_rows: int = 8) -> float:
    """Max relative error between tape and central-difference gradients of one
    loss component, taken through a small randomly initialized encoder.

    The five-point stencil at a 1e-4 step makes truncation error negligible
    while keeping the rounding noise of the quotient well under the tolerance.
    Weight rows fed by state features are differenced ``feature_rows`` at a
    time, rotating with ``seed`` so 20 seeds cover every row several times;
    all other entries are differenced on every instance.
    """
    from normball.embedding import (
        EmbeddingModel, LossConfig, cosine_loss, loss_components, loss_contrastive,
        loss_intermediate, loss_terminal, sample_triplet_batch, triplet_loss,
    )
    from normball.numerics import Tape, backward, ops

    rng = np.random.default_rng(seed)
    model = EmbeddingModel.create(encoder, 3, 4, 2, 2, 1, 2, rng=rng)
    model.fit_scaler(np.concatenate([p.states for p in cohort]))
    # larger output weights push some rows outside the ball so the penalty branch is exercised
    model.params["mlp.1.W"] *= rng.uniform(1.0, 6.0)
    config = LossConfig(cosine_variant="inner_product" if component == "cosine_inner_product" else "standard")
    batch = sample_triplet_batch(cohort, config, rng, batch_size, model.horizon)
    death, y = batch.anchor_death, batch.y_ap
    x = np.concatenate([batch.anchor, batch.positive, batch.negative])

    def f(params, tape=None):
        watched = tape.watch(params) if tape is not None else params
        emb = model.forward(x, watched, tape)
        a, p, n = (ops.take(emb, np.arange(i * batch_size, (i + 1) * batch_size)) for i in range(3))
        if component == "terminal":
            return loss_terminal(a, death, config.lambda1)
        if component == "triplet":
            return triplet_loss(a, p, n, config.triplet_margin)
        if component.startswith("cosine"):
            return cosine_loss(a, p, y, config.cosine_variant, config.cosine_margin)
        if component == "contrastive":
            return loss_contrastive(a, p, n, death, y, config)
        if component == "intermediate":
            return loss_intermediate(p, n, a, death, config)
        return loss_components(a, p, n, death, y, config)["total"]

    params = {k: v.copy() for k, v in model.params.items()}
    tape = Tape()
    analytic = backward(tape, f(params, tape))
    masks = feature_row_masks(params, seed, feature_rows)
    numeric = central_difference(lambda p: f(p).item(), params, step, order=4, masks=masks)
    return max_relative_error(analytic, numeric, resolution_floor(f(params).item(), step))


TINY_NET = ["--hidden", "8", "--layers", "2", "--batch", "16", "--steps-per-epoch", "3"]


def run_cli_pipeline(root) -> dict:
    """Run every subcommand at toy scale under ``root``; returns command -> run dir."""
    from pathlib import Path

    from normball.cli import main

    def run(*argv):
        out = capture_main(main, [*argv, "--out", str(root)])
        return Path(out)

    dirs = {}
    dirs["generate"] = run("generate", "--patients", "40", "--seed", "1", "--survivor-fraction", "0.6",
                           "--min-length", "14", "--max-length", "24")
    cohort = str(dirs["generate"] / "cohort.csv")
    dirs["train"] = run("train", "--cohort", cohort, "--epochs", "2", *TINY_NET, "--seed", "2")
    dirs["eval"] = run("eval", "--cohort", cohort, "--checkpoint", str(dirs["train"] / "checkpoint.nbck"),
                       "--all", "--probe-splits", "3")
    dirs["ablate"] = run("ablate", "--cohort", cohort, "--grid", "beta=0,1", "--epochs", "1", *TINY_NET,
                         "--probe-splits", "2")
    dirs["rl"] = run("rl", "--cohort", cohort, "--reward", "r1", "--ensemble", "2", "--risk-members", "2",
                     "--epochs", "1", *TINY_NET, "--rl-hidden", "16", "--rl-epochs", "1",
                     "--rl-steps-per-epoch", "3", "--save-transitions")
    return dirs


def capture_main(main, argv) -> str:
    import contextlib
    import io

    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = main(argv)
    if code != 0:
        raise AssertionError(f"normball {' '.join(argv)} exited {code}")
    return buf.getvalue().strip().splitlines()[-1]


def rerun_from_snapshot(run_dir, root):
    """Re-run a command from its config.txt into another output root."""
    from pathlib import Path

    from normball.cli import main
    from normball.numerics.checkpoint import parse_meta

    snap = Path(run_dir) / "config.txt"
    command = parse_meta(snap.read_text(encoding="utf-8"))["command"]
    return Path(capture_main(main, [command, "--config", str(snap), "--out", str(root)]))


def csv_files(run_dir) -> dict:
    from pathlib import Path

    base = Path(run_dir)
    return {str(p.relative_to(base)): p.read_bytes() for p in sorted(base.rglob("*.csv"))}


# ---------------------------------------------------------------- auroc

def brute_force_auroc(scores, labels):
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for p in pos:
        for n in neg:
            wins += 1.0 if p > n else 0.5 if p == n else 0.0
    return wins / (len(pos) * len(neg))


# ---------------------------------------------------------------- c51

def hat_projection(atoms, probs, z):
    """Each support point collects mass through a triangular kernel of width dz."""
    dz = z[1] - z[0]
    clipped = np.clip(atoms, z[0], z[-1])
    out = np.zeros(len(z))
    for i, zi in enumerate(z):
        for a, p in zip(clipped, probs):
            out[i] += p * max(0.0, 1.0 - abs(a - zi) / dz)
    return out


def single_transition(r, done, s=None):
    s = np.ones((1, STATE_DIM)) if s is None else s
    return TransitionSet(s=s, a=np.array([2]), r=np.array([float(r)]), s_next=s + 1, done=np.array([done]),
                         d_s=np.zeros(1), d_next=np.zeros(1), patient=np.zeros(1, int), hour=np.zeros(1, int))
