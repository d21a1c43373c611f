"""Training loop, latent-dimension sweeps and sweep CSVs."""
from __future__ import annotations

import csv
import enum
import json
import logging
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .checkpoint import save_model
from .data import load_dataset
from .genesis import ComponentArch, Genesis, GenesisConfig
from .metrics import MetricsReport, evaluate
from .objective import (
    DEFAULT_EMA_DECAY, DEFAULT_GOAL, DEFAULT_STEP_SIZE,
    TrainingDivergenceError, geco_init, geco_step, total_loss,
)

log = logging.getLogger(__name__)

LOG_HEADER = ("step", "batch_err", "err_ema", "beta", "loss")
CSV_HEADER = (
    "dataset", "architecture", "latent_dim", "seed", "ari_mean", "ari_std",
    "msc_mean", "msc_std", "recon_err_final", "steps_to_goal", "collapsed",
)
FINAL_CHECKPOINT = "final.gblab"
LATEST_CHECKPOINT = "latest.gblab"

ASYMMETRIC_LATENTS = (1, 4, 16, 64, 256)
SYMMETRIC_LATENTS = (1, 2, 4, 8, 16)
DEFAULT_SEEDS = (0, 1, 2)


class Mode(str, enum.Enum):
    GENESIS = "GENESIS"
    VANILLA = "VANILLA"


@dataclass
class GecoConfig:
    goal: float = DEFAULT_GOAL
    ema_decay: float = DEFAULT_EMA_DECAY
    step_size: float = DEFAULT_STEP_SIZE


@dataclass
class OptimiserConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    max_steps: int = 20_000


@dataclass
class RunConfig:
    dataset_dir: str
    out_dir: str
    model: GenesisConfig = field(default_factory=GenesisConfig)
    geco: GecoConfig = field(default_factory=GecoConfig)
    optimiser: OptimiserConfig = field(default_factory=OptimiserConfig)
    seed: int = 0
    eval_every: int = 1000
    eval_images: int = 300
    mode: Mode = Mode.GENESIS

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = GenesisConfig.from_dict(self.model)
        if isinstance(self.geco, dict):
            self.geco = GecoConfig(**self.geco)
        if isinstance(self.optimiser, dict):
            self.optimiser = OptimiserConfig(**self.optimiser)
        self.mode = Mode(self.mode)
        if self.optimiser.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.optimiser.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.eval_every < 0 or self.eval_images < 0:
            raise ValueError("eval_every and eval_images must be non-negative")

    @property
    def model_config(self) -> GenesisConfig:
        if self.mode == Mode.VANILLA:
            return replace(self.model, K=1)
        return self.model

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        d["mode"] = self.mode.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class RunResult:
    out_dir: Path
    final_checkpoint: Path
    log_path: Path
    steps_to_goal: int | None
    final_err_ema: float
    history: list
    final_report: MetricsReport | None


def configure_threads(n: int | None = None) -> int:
    """Bound torch intra-op threads by ``GBLAB_THREADS`` (default 1)."""
    if n is None:
        n = max(1, int(os.environ.get("GBLAB_THREADS", "1")))
    torch.set_num_threads(n)
    return n


def _fmt(v: float) -> str:
    return repr(float(v))


def _batches(rng: np.random.Generator, n: int, batch_size: int):
    """Endless epoch-shuffled index batches."""
    bs = min(batch_size, n)
    while True:
        perm = rng.permutation(n)
        for start in range(0, n - bs + 1, bs):
            yield perm[start:start + bs]


def train(cfg: RunConfig, threads: int | None = None) -> RunResult:
    """Train one model; writes ``train_log.csv``, ``metrics.json`` and checkpoints to ``cfg.out_dir``."""
    configure_threads(threads)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")

    dataset = load_dataset(cfg.dataset_dir)
    train_idx = list(dataset.train_indices)
    if not train_idx:
        raise ValueError("dataset has no training images")
    n_val = len(dataset.val_indices)
    eval_images = min(cfg.eval_images, n_val)
    if cfg.eval_images > n_val:
        log.warning("eval_images=%d exceeds validation size %d; using %d", cfg.eval_images, n_val, n_val)
    images = torch.from_numpy(dataset.images(train_idx))

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    noise = torch.Generator().manual_seed(cfg.seed + 1)
    model = Genesis(cfg.model_config)
    model.train()
    opt = torch.optim.Adam(model.parameters(), lr=cfg.optimiser.learning_rate)
    state = geco_init(cfg.geco.goal, cfg.geco.ema_decay, cfg.geco.step_size)
    pixels = images[0].numel()

    history = []
    meta = {"run_config": cfg.to_dict()}
    log_path = out / "train_log.csv"
    batches = _batches(rng, len(train_idx), cfg.optimiser.batch_size)

    def run_eval(step):
        if eval_images == 0:
            return None
        report = evaluate(model, dataset, eval_images, seed=cfg.seed)
        history.append({"step": step, **asdict(report)})
        (out / "metrics.json").write_text(json.dumps(history, indent=2) + "\n")
        save_model(out / LATEST_CHECKPOINT, model, {**meta, "step": step, "geco": state.to_dict()})
        log.info("step %d: ari %.3f msc %.3f usage %s", step, report.ari_mean, report.msc_mean,
                 np.round(report.component_usage, 3).tolist())
        return report

    report = None
    with open(log_path, "w", newline="") as fh:
        fh.write(",".join(LOG_HEADER) + "\n")
        for step in range(1, cfg.optimiser.max_steps + 1):
            x = images[next(batches)]
            fwd = model(x, generator=noise)
            # KL rescaled to per pixel-channel units to match the NLL
            loss = total_loss(
                fwd.nll_per_pixel, fwd.kl_mask / pixels, fwd.kl_component / pixels, state
            )
            if not torch.isfinite(loss):
                msg = f"non-finite loss at step {step}"
                (out / "divergence.txt").write_text(msg + "\n")
                raise TrainingDivergenceError(msg)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            batch_err = fwd.nll_per_pixel.item()
            state = geco_step(state, batch_err, step)
            fh.write(",".join([str(step), _fmt(batch_err), _fmt(state.err_ema),
                               _fmt(state.beta), _fmt(loss.item())]) + "\n")
            if step % 100 == 0:
                fh.flush()
                log.debug("step %d err_ema %.5f beta %.3g", step, state.err_ema, state.beta)
            if cfg.eval_every and step % cfg.eval_every == 0 and step < cfg.optimiser.max_steps:
                run_eval(step)
        report = run_eval(cfg.optimiser.max_steps)

    final = out / FINAL_CHECKPOINT
    save_model(final, model, {**meta, "step": cfg.optimiser.max_steps, "geco": state.to_dict()})
    return RunResult(out, final, log_path, state.steps_to_goal, state.err_ema, history, report)


def steps_to_goal_from_log(log_path, goal: float) -> int | None:
    """First logged step whose ``err_ema`` is at or below ``goal``."""
    with open(log_path) as fh:
        for row in csv.DictReader(fh):
            if float(row["err_ema"]) <= goal:
                return int(row["step"])
    return None


# -- sweeps ---------------------------------------------------------------------


@dataclass
class SweepEntry:
    architecture: ComponentArch
    latent_dims: list
    seeds: list
    base: RunConfig
    dataset: str = "sprites"

    def __post_init__(self):
        self.architecture = ComponentArch(self.architecture)
        if not self.seeds:
            raise ValueError("seed list must not be empty")
        if not self.latent_dims:
            raise ValueError("latent_dims must not be empty")


def load_sweep_config(path) -> list[SweepEntry]:
    """Sweep JSON: ``{"dataset": str, "base": RunConfig, "grids": [{architecture, latent_dims, seeds}]}``."""
    raw = json.loads(Path(path).read_text())
    base = raw["base"]
    return [
        SweepEntry(g["architecture"], g["latent_dims"], g["seeds"],
                   RunConfig.from_dict(base), raw.get("dataset", "sprites"))
        for g in raw["grids"]
    ]


def runs_dir_for(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + "_runs")


def cell_name(architecture, latent_dim: int, seed: int) -> str:
    return f"{ComponentArch(architecture).value}_ld{latent_dim}_s{seed}"


def _cell_config(entry: SweepEntry, latent_dim: int, seed: int, runs: Path) -> RunConfig:
    model = replace(entry.base.model, component_arch=entry.architecture, component_latent_dim=latent_dim)
    return replace(
        entry.base, model=model, seed=seed,
        out_dir=str(runs / entry.dataset / cell_name(entry.architecture, latent_dim, seed)),
    )


def _run_cell(args):
    dataset, cfg, threads = args
    row = {
        "dataset": dataset, "architecture": cfg.model.component_arch.value,
        "latent_dim": cfg.model.component_latent_dim, "seed": cfg.seed,
    }
    try:
        res = train(cfg, threads)
        rep = res.final_report
        nan = float("nan")
        row.update(
            ari_mean=rep.ari_mean if rep else nan, ari_std=rep.ari_std if rep else nan,
            msc_mean=rep.msc_mean if rep else nan, msc_std=rep.msc_std if rep else nan,
            recon_err_final=res.final_err_ema,
            steps_to_goal=-1 if res.steps_to_goal is None else res.steps_to_goal,
            collapsed=bool(rep.collapsed) if rep else False,
        )
        return row, None
    except Exception:  # recorded in the sweep output, the sweep goes on
        nan = float("nan")
        row.update(ari_mean=nan, ari_std=nan, msc_mean=nan, msc_std=nan,
                   recon_err_final=nan, steps_to_goal=-1, collapsed=False)
        return row, traceback.format_exc()


def format_row(row: dict) -> list[str]:
    out = []
    for k in CSV_HEADER:
        v = row[k]
        if isinstance(v, bool):
            out.append("true" if v else "false")
        elif isinstance(v, float):
            out.append(repr(v))
        else:
            out.append(str(v))
    return out


def sweep(entries: list[SweepEntry], csv_path) -> list[dict]:
    """Run every (architecture, latent_dim, seed) cell and write one CSV row per cell.

    Failed cells get NaN metrics; their tracebacks go to ``<csv>.failures.json``.
    """
    if not entries:
        raise ValueError("empty sweep")
    csv_path = Path(csv_path)
    runs = runs_dir_for(csv_path)
    workers = max(1, int(os.environ.get("GBLAB_THREADS", "1")))
    parallel = workers > 1
    jobs = [
        (e.dataset, _cell_config(e, ld, seed, runs), 1 if parallel else None)
        for e in entries for ld in e.latent_dims for seed in e.seeds
    ]
    if parallel and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]

    csv_path.parent.mkdir(parents=True, exist_ok=True)
    failures = []
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for (row, err), (_, cfg, _t) in zip(results, jobs):
            w.writerow(format_row(row))
            if err:
                failures.append({"cell": cell_name(row["architecture"], row["latent_dim"], row["seed"]),
                                 "out_dir": cfg.out_dir, "error": err})
                log.error("sweep cell %s failed:\n%s", cfg.out_dir, err)
    fail_path = csv_path.with_name(csv_path.name + ".failures.json")
    if failures:
        fail_path.write_text(json.dumps(failures, indent=2) + "\n")
    elif fail_path.exists():
        fail_path.unlink()
    return [r for r, _ in results]

