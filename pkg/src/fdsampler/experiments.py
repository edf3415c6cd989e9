"""Experiment orchestration: builders, runners, CSV/figure/manifest output.

Each experiment kind writes, into its output directory: delimited CSV
results (floats at 17 significant digits so replay comparison works by
byte equality), PGM images where the artifact is an image, rendered
matplotlib figures next to the CSVs, and a manifest for bit-exact replay.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .config import RunConfig, write_manifest
from .datasets import (GRID_SIZE, NOVEL_GRAY, box_blur, center_patch_indices,
                       make_grid_dataset, make_grid_image, two_region_image)
from .denoisers import (GmmDenoiser, GmmPrior, MlpTrainConfig, heldout_denoising_loss,
                        isotropic_gmm, load_mlp, save_mlp, train_mlp_denoiser)
from .diagnostics import (direction_compare_experiment, jacobian_symmetry_probe,
                          psnr)
from .guidance import (BACKPROP_EXACT, NEWTON_EXACT, NEWTON_FD, GuidanceConfig)
from .imageio import read_image, write_image
from .layers import LayerConfig, infer_layers
from .linalg import SpdMatrix, make_rng
from .operators import (Downsample, Identity, Mask, Measurement,
                        complement_indices, make_freeform_mask,
                        synthesize_measurement)
from .sampler import SamplerConfig, constrained_sample, warm_restart_sample
from .schedule import forward_noise, make_linear_schedule

FLOAT_FMT = "%.17g"
GUIDANCE_NAMES = {"newton-fd": NEWTON_FD, "newton-exact": NEWTON_EXACT,
                  "backprop": BACKPROP_EXACT}


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT % float(v)
    return str(v)


def write_csv(path, header, rows):
    path = Path(path)
    with open(path, "w", newline="") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_fmt(v) for v in row) + "\n")
    return path


def worker_count() -> int:
    return max(1, int(os.environ.get("FDSAMPLER_WORKERS", "1")))


def map_seeds(fn, seeds):
    """Run fn(seed) over a seed sweep on a bounded worker pool, in order.

    Every worker derives its own RNG substream from its seed inside fn, so
    results do not depend on the worker count.
    """
    n = worker_count()
    if n == 1:
        return [fn(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, seeds))


def default_fixture_path() -> Path:
    return Path(__file__).parent / "fixtures" / "grid16_denoiser.bin"


def build_schedule(cfg: RunConfig):
    return make_linear_schedule(cfg["T"], cfg["beta_min"], cfg["beta_max"], cfg["eta"])


def correlated_gaussian_denoiser(sched):
    """Single Gaussian N(0, [[1, 0.9], [0.9, 1]]): analytic posterior oracle."""
    prior = GmmPrior(weights=np.array([1.0]), means=np.zeros((1, 2)),
                     covs=(SpdMatrix([[1.0, 0.9], [0.9, 1.0]]),))
    return GmmDenoiser(prior, sched)


def two_mode_1d_denoiser(sched):
    """1-D mixture 0.3 N(-2, 0.3^2) + 0.7 N(+2, 0.3^2)."""
    return GmmDenoiser(isotropic_gmm([0.3, 0.7], [[-2.0], [2.0]], [0.3, 0.3]), sched)


def grid_gmm_denoiser(sched, scale: float = 0.1):
    """Mixture with one component per noise-free grid image."""
    means = make_grid_dataset(jitter=0.0)
    k = means.shape[0]
    return GmmDenoiser(isotropic_gmm(np.full(k, 1.0 / k), means, np.full(k, scale)),
                       sched)


def build_denoiser(cfg: RunConfig, sched):
    """Returns (denoiser, input_files) for the configured prior."""
    kind = cfg["denoiser"]
    if kind == "mlp-fixture":
        path = Path(cfg["fixture"]) if cfg["fixture"] else default_fixture_path()
        if not path.exists():
            raise FileNotFoundError(f"denoiser fixture not found: {path}")
        return load_mlp(path), [path]
    if kind == "correlated-gaussian":
        return correlated_gaussian_denoiser(sched), []
    if kind == "gmm-two-mode-1d":
        return two_mode_1d_denoiser(sched), []
    if kind == "gmm-grid":
        return grid_gmm_denoiser(sched), []
    raise ValueError(f"unknown denoiser kind {kind!r}")


def target_signal(cfg: RunConfig, dim: int):
    """The clean signal to invert for.

    Defaults to a 16x16 grid image for image-sized priors and a constant
    vector of 2.0 for low-dimensional analytic priors.
    """
    if cfg["image"]:
        x = read_image(cfg["image"]).ravel()
        if x.size != dim:
            raise ValueError(f"image has {x.size} pixels but the denoiser "
                             f"expects dimension {dim}")
        return x, [Path(cfg["image"])]
    if dim == GRID_SIZE * GRID_SIZE:
        return make_grid_image(4, 1, 2), []
    return np.full(dim, 2.0), []


def build_operator(cfg: RunConfig, dim: int, rng):
    kind = cfg["operator"]
    if kind == "identity":
        return Identity(dim)
    side = int(round(np.sqrt(dim)))
    if side * side != dim:
        raise ValueError(f"operator {kind!r} needs a square image, got dim {dim}")
    if kind == "mask-center":
        observed = complement_indices(center_patch_indices(side, cfg["patch"]), dim)
        return Mask(observed, dim)
    if kind == "mask-freeform":
        missing = make_freeform_mask(rng, side, side,
                                     (cfg["coverage_min"], cfg["coverage_max"]))
        return Mask(complement_indices(missing, dim), dim)
    if kind == "downsample":
        return Downsample(cfg["factor"], side, side)
    raise ValueError(f"unknown operator kind {kind!r}")


def sampler_config(cfg: RunConfig) -> SamplerConfig:
    return SamplerConfig(steps=cfg["steps"], inner_iters=cfg["inner_iters"],
                         step_size=cfg["lambda"],
                         guidance=GuidanceConfig(kind=GUIDANCE_NAMES[cfg["guidance"]],
                                                 delta=cfg["delta"]),
                         restarts=cfg["restarts"], restart_t=cfg["restart_t"],
                         perturb_rho=cfg["rho"])


def _save_square_image(x, path):
    side = int(round(np.sqrt(x.size)))
    if side * side == x.size:
        write_image(x.reshape(side, side), path)
        return [Path(path)]
    return []


def run_sample(cfg: RunConfig, out: Path):
    """Unconstrained DDIM sampling (no guidance iterations)."""
    sched = build_schedule(cfg)
    den, inputs = build_denoiser(cfg, sched)
    dim = den.dim
    meas = Measurement(y=np.zeros(dim), op=Identity(dim))
    scfg = replace(sampler_config(cfg), inner_iters=0)

    def one(i):
        x0, _ = constrained_sample(den, sched, meas, scfg, make_rng(cfg["seed"], i))
        return x0

    samples = map_seeds(one, range(cfg["n_seeds"]))
    rows = [[i, *x0] for i, x0 in enumerate(samples)]
    header = ["run"] + [f"x{j}" for j in range(dim)]
    csv = write_csv(out / "samples.csv", header, rows)

    fig, ax = plt.subplots()
    first = np.array([s[0] for s in samples])
    ax.hist(first, bins=40)
    ax.set_xlabel("first coordinate")
    ax.set_ylabel("count")
    fig.savefig(out / "samples_hist.png", dpi=120)
    plt.close(fig)
    return inputs, [csv, out / "samples_hist.png"]


def run_invert(cfg: RunConfig, out: Path):
    """Constrained sampling against a synthesized measurement."""
    sched = build_schedule(cfg)
    den, inputs = build_denoiser(cfg, sched)
    x_true, image_inputs = target_signal(cfg, den.dim)
    inputs += image_inputs
    scfg = sampler_config(cfg)
    outputs = []
    metrics = []

    def one(i):
        rng_prob = make_rng(cfg["seed"], i, 0)
        op = build_operator(cfg, x_true.size, rng_prob)
        meas = synthesize_measurement(op, x_true, cfg["sigma_y"], rng_prob)
        rng_run = make_rng(cfg["seed"], i, 1)
        if cfg["restarts"] > 0:
            x0, trace = warm_restart_sample(den, sched, meas, scfg, rng_run)
        else:
            x0, trace = constrained_sample(den, sched, meas, scfg, rng_run)
        return x0, trace, meas

    results = map_seeds(one, range(cfg["n_seeds"]))
    for i, (x0, trace, meas) in enumerate(results):
        r = meas.op.apply(x0) - meas.y
        metrics.append([i, float(np.linalg.norm(r)), psnr(x0, x_true)])
        if i == 0:
            with open(out / "trace.csv", "w", newline="") as f:
                trace.write_csv(f)
            outputs.append(out / "trace.csv")
            outputs += _save_square_image(x0, out / "x0.pgm")
            outputs += _save_square_image(x_true, out / "x_true.pgm")
            costs = [row.cost for row in trace.inner_rows()]
            fig, ax = plt.subplots()
            ax.semilogy(costs)
            ax.set_xlabel("guidance iteration")
            ax.set_ylabel("constraint cost")
            fig.savefig(out / "cost_curve.png", dpi=120)
            plt.close(fig)
            outputs.append(out / "cost_curve.png")
    outputs.insert(0, write_csv(out / "metrics.csv", ["run", "residual", "psnr_db"],
                                metrics))
    return inputs, outputs


def run_layers(cfg: RunConfig, out: Path):
    """Two-layer decomposition of the two-region fixture (or a given image)."""
    sched = build_schedule(cfg)
    if cfg["image"]:
        x0 = read_image(cfg["image"]).ravel()
        inputs = [Path(cfg["image"])]
    else:
        x0 = two_region_image()
        inputs = []
    dim = x0.size
    den1 = GmmDenoiser(isotropic_gmm([1.0], [0.2 * np.ones(dim)], [0.1]), sched)
    den2 = GmmDenoiser(isotropic_gmm([1.0], [0.8 * np.ones(dim)], [0.1]), sched)
    lcfg = LayerConfig(iterations=cfg["layer_iterations"],
                       samples_per_layer=cfg["samples_per_layer"],
                       t_probe=cfg["t_probe"], perturb_sigma=cfg["perturb_sigma"],
                       mini_steps=cfg["mini_steps"], inner_iters=cfg["inner_iters"],
                       step_size=cfg["lambda"])
    res = infer_layers((den1, den2), sched, x0, lcfg, make_rng(cfg["seed"]))

    outputs = [write_csv(out / "rounds.csv", ["iteration", "blend_rms", "mean_mask"],
                         [[r.iteration, r.blend_rms, r.mean_mask] for r in res.rounds])]
    outputs += _save_square_image(res.layer1, out / "layer1.pgm")
    outputs += _save_square_image(res.layer2, out / "layer2.pgm")
    outputs += _save_square_image(2.0 * res.mask - 1.0, out / "mask.pgm")
    fig, ax = plt.subplots()
    ax.plot([r.blend_rms for r in res.rounds], marker="o")
    ax.set_xlabel("round")
    ax.set_ylabel("blending residual RMS")
    fig.savefig(out / "blend_rms.png", dpi=120)
    plt.close(fig)
    outputs.append(out / "blend_rms.png")
    return inputs, outputs


def run_probe_jacobian(cfg: RunConfig, out: Path):
    """Jacobian symmetry scatter at each probe timestep."""
    sched = build_schedule(cfg)
    den, inputs = build_denoiser(cfg, sched)
    dim = den.dim
    outputs = []
    summary = []
    ts = cfg.int_list("probe_ts")
    fig, axes = plt.subplots(1, len(ts), figsize=(4 * len(ts), 4), squeeze=False)
    for col, t in enumerate(ts):
        rng = make_rng(cfg["seed"], t)
        x_t = rng.standard_normal(dim)
        probe = jacobian_symmetry_probe(den, x_t, t, cfg["n_pairs"], rng)
        rows = [[a, b, jab, jba] for (a, b), (jab, jba)
                in zip(probe.pairs, probe.scatter)]
        outputs.append(write_csv(out / f"scatter_t{t}.csv",
                                 ["a", "b", "j_ab", "j_ba"], rows))
        summary.append([t, probe.asymmetry_score, probe.max_pair_gap()])
        ax = axes[0][col]
        ax.scatter(probe.scatter[:, 0], probe.scatter[:, 1], s=8)
        lim = np.max(np.abs(probe.scatter)) * 1.1 + 1e-12
        ax.plot([-lim, lim], [-lim, lim], "k--", lw=0.8)
        ax.set_title(f"t={t}")
        ax.set_xlabel("J[a,b]")
        ax.set_ylabel("J[b,a]")
    outputs.insert(0, write_csv(out / "summary.csv",
                                ["t", "asymmetry_score", "max_pair_gap"], summary))
    fig.tight_layout()
    fig.savefig(out / "scatter.png", dpi=120)
    plt.close(fig)
    outputs.append(out / "scatter.png")
    return inputs, outputs


def compare_problem(cfg: RunConfig, sched):
    """Grid image with a novel-gray center patch, blurred+rescaled+noised.

    Returns (x_t at compare_t, measurement on the patch, clean target).
    """
    img = make_grid_image(4, 0, 0)
    blurred = box_blur(img)
    lo, hi = blurred.min(), blurred.max()
    blurred = 2.0 * (blurred - lo) / (hi - lo) - 1.0
    rng = make_rng(cfg["seed"], cfg["compare_t"])
    x_t = forward_noise(blurred, cfg["compare_t"], sched, rng=rng)
    patch = center_patch_indices(GRID_SIZE, cfg["patch"])
    y = np.full(patch.size, NOVEL_GRAY)
    target = img.copy()
    target[patch] = NOVEL_GRAY
    return x_t, Measurement(y=y, op=Mask(patch, img.size)), target


def run_direction_compare(cfg: RunConfig, out: Path):
    """Newton vs backprop updates from a shared state at one timestep."""
    sched = build_schedule(cfg)
    if "denoiser" not in cfg.explicit:
        # this experiment is about a model with an asymmetric Jacobian
        cfg = RunConfig(values={**cfg.values, "denoiser": "mlp-fixture"},
                        explicit=cfg.explicit)
    den, inputs = build_denoiser(cfg, sched)
    if den.dim != GRID_SIZE * GRID_SIZE:
        raise ValueError("direction-compare needs a denoiser over 16x16 images")
    x_t, meas, _ = compare_problem(cfg, sched)
    res = direction_compare_experiment(den, meas, x_t, cfg["compare_t"],
                                       n_updates=cfg["n_updates"],
                                       step_size=cfg["lambda"])
    rows = []
    for i in range(len(res.newton_costs)):
        cos = res.cosines[i] if i < len(res.cosines) else ""
        rows.append([i, res.newton_costs[i], res.backprop_costs[i], cos])
    outputs = [write_csv(out / "costs.csv",
                         ["step", "newton_cost", "backprop_cost", "cosine"], rows)]
    outputs += _save_square_image(res.x0_newton, out / "x0_newton.pgm")
    outputs += _save_square_image(res.x0_backprop, out / "x0_backprop.pgm")
    fig, ax = plt.subplots()
    ax.plot(res.newton_costs, marker="o", label="newton (-Je)")
    ax.plot(res.backprop_costs, marker="s", label="backprop (-J^T e)")
    ax.set_xlabel("update")
    ax.set_ylabel("constraint cost")
    ax.legend()
    fig.savefig(out / "costs.png", dpi=120)
    plt.close(fig)
    outputs.append(out / "costs.png")
    return inputs, outputs


def run_train(cfg: RunConfig, out: Path):
    """Train the grid-texture MLP denoiser and save it as a fixture binary."""
    sched = build_schedule(cfg)
    rng = make_rng(cfg["seed"])
    dataset = make_grid_dataset(rng=rng)
    hidden = tuple(cfg.int_list("hidden"))
    tcfg = MlpTrainConfig(hidden=hidden, steps=cfg["train_steps"],
                          batch_size=cfg["batch_size"],
                          learning_rate=cfg["learning_rate"])
    model = train_mlp_denoiser(dataset, sched, tcfg, rng)
    model_path = out / "denoiser.bin"
    save_mlp(model, model_path)
    heldout = heldout_denoising_loss(model, dataset[:50], sched, make_rng(cfg["seed"], 9))
    csv = write_csv(out / "train.csv",
                    ["hidden", "steps", "batch_size", "learning_rate", "heldout_mse"],
                    [["x".join(map(str, hidden)), cfg["train_steps"],
                      cfg["batch_size"], cfg["learning_rate"], heldout]])
    return [], [csv, model_path]


def run_acceptance(cfg: RunConfig, out: Path):
    from .acceptance import run_suite
    results, csv_path = run_suite(out, seed=cfg["seed"])
    outputs = [csv_path]
    if any(not r.passed for r in results):
        raise RuntimeError("acceptance suite failed: " + ", ".join(
            r.name for r in results if not r.passed))
    return [default_fixture_path()], outputs


RUNNERS = {
    "sample": run_sample,
    "invert": run_invert,
    "layers": run_layers,
    "jacobian-probe": run_probe_jacobian,
    "direction-compare": run_direction_compare,
    "train-denoiser": run_train,
    "acceptance": run_acceptance,
}


def run_experiment(cfg: RunConfig, out_dir) -> Path:
    """Dispatch one experiment; writes artifacts plus a replay manifest."""
    kind = cfg["experiment"]
    if kind not in RUNNERS:
        raise ValueError(f"unknown experiment kind {kind!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        inputs, outputs = RUNNERS[kind](cfg, out)
    except Exception as exc:
        raise RuntimeError(f"experiment {kind!r} failed: {exc}") from exc
    return write_manifest(out, cfg, inputs=inputs, outputs=outputs)
