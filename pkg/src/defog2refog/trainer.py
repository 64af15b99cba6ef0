"""Two-direction adversarial training loop with checkpointing.

One iteration samples an unpaired (foggy, clear) pair and runs the defog
direction followed by the refog direction. Within each direction the
discriminator is updated first, then every generator that took part in the
forward pass.
"""

from __future__ import annotations

import contextlib
import csv
import hashlib
import io
import json
import logging
import os
import time
import zipfile
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
import torch.nn as nn

from . import networks
from .config import TrainConfig
from .data import UnpairedDataset, UnpairedSampler
from .losses import (
    PerceptualExtractor,
    adversarial_discriminator_term,
    adversarial_generator_term,
    check_finite,
    mean_squared,
    perceptual_distance,
    total_generator_loss,
)

log = logging.getLogger(__name__)

NETWORK_ROLES = {
    "G": "defog",
    "R": "refog_t",
    "E_d": "enhancer",
    "E_r": "enhancer",
    "D_fog": "discriminator",
    "D_fogfree": "discriminator",
}
CSV_COLUMNS = (
    "iteration",
    "direction",
    "loss1",
    "loss2",
    "loss3",
    "loss4",
    "loss5",
    "generator_total",
    "discriminator_total",
    "wall_ms",
)
CHECKPOINT_FORMAT = 1


class CheckpointError(RuntimeError):
    pass


@dataclass
class LossReport:
    """Scalars of one direction step.

    ``loss3``/``loss4`` are the generator-side adversarial terms on the
    first-stage and enhanced outputs; ``discriminator_total`` is the sum of
    the two discriminator objectives of the same step.
    """

    iteration: int
    direction: str
    loss1: float
    loss2: float
    loss3: float
    loss4: float
    loss5: float
    generator_total: float
    discriminator_total: float
    airlight_sources: tuple[str, ...] = ()
    trace: dict | None = field(default=None, repr=False, compare=False)

    def csv_row(self, wall_ms: float) -> list:
        return [
            self.iteration,
            self.direction,
            *(repr(v) for v in (self.loss1, self.loss2, self.loss3, self.loss4, self.loss5)),
            repr(self.generator_total),
            repr(self.discriminator_total),
            f"{wall_ms:.1f}",
        ]


@dataclass
class TrainState:
    config: TrainConfig
    nets: dict[str, nn.Module]
    optimizers: dict[str, torch.optim.Adam]
    extractor: PerceptualExtractor
    sampler: UnpairedSampler | None = None
    iteration: int = 0
    history: deque = field(default_factory=deque)
    keep_trace: bool = False


def network_seed(seed: int, role: str) -> int:
    return seed * 16 + list(NETWORK_ROLES).index(role)


def _make_optimizer(net: nn.Module, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(net.parameters(), lr=cfg.learning_rate, betas=tuple(cfg.adam_betas))


def _make_extractor(cfg: TrainConfig) -> PerceptualExtractor:
    return PerceptualExtractor(cfg.perceptual_backend, cfg.perceptual_layer, weights_path=cfg.perceptual_weights)


def init_state(cfg: TrainConfig, domain_sizes: tuple[int, int] | None = None) -> TrainState:
    cfg.validate()
    nets = {
        role: networks.init_params(kind, network_seed(cfg.seed, role), cfg.upsample)
        for role, kind in NETWORK_ROLES.items()
    }
    optimizers = {role: _make_optimizer(net, cfg) for role, net in nets.items()}
    sampler = UnpairedSampler(*domain_sizes, seed=cfg.seed) if domain_sizes else None
    return TrainState(
        cfg, nets, optimizers, _make_extractor(cfg), sampler, history=deque(maxlen=cfg.history_size)
    )


@contextlib.contextmanager
def frozen(net: nn.Module):
    """Temporarily stop gradients from accumulating in ``net``'s parameters."""
    flags = [p.requires_grad for p in net.parameters()]
    for p in net.parameters():
        p.requires_grad_(False)
    try:
        yield net
    finally:
        for p, flag in zip(net.parameters(), flags):
            p.requires_grad_(flag)


def update_discriminator(state: TrainState, name: str, real: torch.Tensor, fakes: list[torch.Tensor]) -> float:
    """One optimiser step of discriminator ``name``; generators are untouched."""
    D, opt, mode = state.nets[name], state.optimizers[name], state.config.gan_mode
    opt.zero_grad(set_to_none=True)
    d_real = D(real)
    total = sum(adversarial_discriminator_term(d_real, D(f.detach()), mode) for f in fakes)
    check_finite(discriminator_total=total)
    total.backward()
    opt.step()
    return float(total.detach())


def update_generators(state: TrainState, names: tuple[str, ...], objective: torch.Tensor) -> None:
    """Back-propagate ``objective`` and step the optimisers of ``names`` only."""
    for n in names:
        state.optimizers[n].zero_grad(set_to_none=True)
    objective.backward()
    for n in names:
        state.optimizers[n].step()
    for n in names:
        state.optimizers[n].zero_grad(set_to_none=True)


def _scalar(t) -> float:
    return float(t.detach())


def _airlight(state: TrainState, image: torch.Tensor):
    return networks.estimate_batch_airlight(image, scalar=state.config.airlight_scalar)


def step_defog_direction(state: TrainState, x: torch.Tensor, y: torch.Tensor) -> tuple[TrainState, LossReport]:
    """Foggy ``x`` through G, refogged by R, enhanced by E_d; judged by D_fogfree against clear ``y``."""
    cfg = state.config
    G, R, E_d, D = (state.nets[k] for k in ("G", "R", "E_d", "D_fogfree"))
    _check_batch(x, y, cfg)

    defogged = G(x)
    if cfg.airlight_source == "cycle_origin":
        a1, src1 = _airlight(state, x)
        a2, src2 = a1, src1
    else:
        a1, src1 = _airlight(state, defogged)
    refogged, t1 = R(defogged, a1)
    enhanced = E_d(defogged)
    if cfg.airlight_source != "cycle_origin":
        a2, src2 = _airlight(state, enhanced)
    refogged_enh, t2 = R(enhanced, a2)

    disc_total = update_discriminator(state, "D_fogfree", y, [defogged, enhanced])

    with frozen(D):
        loss3 = adversarial_generator_term(D(defogged), cfg.gan_mode)
        loss4 = adversarial_generator_term(D(enhanced), cfg.gan_mode)
    loss1 = mean_squared(x, refogged)
    target2 = x if cfg.enhancer_target == "input" else E_d(x)
    loss2 = mean_squared(target2, refogged_enh)
    loss5 = perceptual_distance(state.extractor, x, refogged)
    check_finite(loss1=loss1, loss2=loss2, loss3=loss3, loss4=loss4, loss5=loss5)
    total = total_generator_loss(
        {"d_adv": loss3 + loss4, "cycle": loss1, "enhancer": loss2, "perceptual": loss5}, cfg.weights
    )
    check_finite(generator_total=total)
    update_generators(state, ("G", "R", "E_d"), total)

    trace = None
    if state.keep_trace:
        trace = {
            "defogged": defogged.detach(),
            "refogged": refogged.detach(),
            "transmission": t1.detach(),
            "airlight": a1,
        }
    report = LossReport(
        state.iteration,
        "defog",
        *(_scalar(v) for v in (loss1, loss2, loss3, loss4, loss5, total)),
        disc_total,
        tuple(src1) + tuple(src2),
        trace,
    )
    return state, report


def step_refog_direction(state: TrainState, y: torch.Tensor, x: torch.Tensor) -> tuple[TrainState, LossReport]:
    """Clear ``y`` refogged by R, defogged by G, enhanced by E_r; judged by D_fog against foggy ``x``."""
    cfg = state.config
    G, R, E_r, D = (state.nets[k] for k in ("G", "R", "E_r", "D_fog"))
    _check_batch(y, x, cfg)

    a, src = _airlight(state, y)
    refogged, t = R(y, a)
    recon = G(refogged)
    enhanced = E_r(refogged)
    recon_enh = G(enhanced)

    disc_total = update_discriminator(state, "D_fog", x, [refogged, enhanced])

    with frozen(D):
        loss3 = adversarial_generator_term(D(refogged), cfg.gan_mode)
        loss4 = adversarial_generator_term(D(enhanced), cfg.gan_mode)
    loss1 = mean_squared(y, recon)
    target2 = y if cfg.enhancer_target == "input" else E_r(y)
    loss2 = mean_squared(target2, recon_enh)
    loss5 = perceptual_distance(state.extractor, y, recon)
    check_finite(loss1=loss1, loss2=loss2, loss3=loss3, loss4=loss4, loss5=loss5)
    total = total_generator_loss(
        {"r_adv": loss3 + loss4, "cycle": loss1, "enhancer": loss2, "perceptual": loss5}, cfg.weights
    )
    check_finite(generator_total=total)
    update_generators(state, ("R", "G", "E_r"), total)

    trace = None
    if state.keep_trace:
        trace = {"refogged": refogged.detach(), "transmission": t.detach(), "airlight": a, "clear": y.detach()}
    report = LossReport(
        state.iteration,
        "refog",
        *(_scalar(v) for v in (loss1, loss2, loss3, loss4, loss5, total)),
        disc_total,
        tuple(src),
        trace,
    )
    return state, report


def _check_batch(a: torch.Tensor, b: torch.Tensor, cfg: TrainConfig) -> None:
    for t in (a, b):
        if t.ndim != 4 or t.shape[1] != 3 or t.shape[-2:] != (cfg.image_size, cfg.image_size):
            raise ValueError(
                f"batch shape {tuple(t.shape)} does not match configured N x 3 x {cfg.image_size} x {cfg.image_size}"
            )


def run_iteration(state: TrainState, dataset: UnpairedDataset) -> tuple[LossReport, LossReport]:
    bs = state.config.batch_size
    x = dataset.batch("foggy", state.sampler.next("foggy", bs))
    y = dataset.batch("clear", state.sampler.next("clear", bs))
    state.iteration += 1
    _, defog = step_defog_direction(state, x, y)
    _, refog = step_refog_direction(state, y, x)
    state.history.append((defog, refog))
    return defog, refog


# -- checkpoints ------------------------------------------------------------


def _manifest(state: TrainState, payload_sha: str) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "iteration": state.iteration,
        "payload_sha256": payload_sha,
        "config": state.config.to_dict(),
        "networks": {
            role: {
                "network_kind": kind,
                "spec_hash": state.nets[role].spec_hash,
                "seed": state.nets[role].seed,
                "upsample": state.nets[role].upsample,
            }
            for role, kind in NETWORK_ROLES.items()
        },
    }


def save_checkpoint(state: TrainState, path: str | Path) -> Path:
    """Write an archive holding every network, optimiser moment, counter and sampler state.

    The file is written to a temporary name and renamed, so an interrupted
    write leaves any previous checkpoint at ``path`` intact.
    """
    path = Path(path)
    buf = io.BytesIO()
    torch.save(
        {
            "networks": {role: net.state_dict() for role, net in state.nets.items()},
            "optimizers": {role: opt.state_dict() for role, opt in state.optimizers.items()},
            "sampler": state.sampler.state_dict() if state.sampler else None,
            "history": [[asdict(r, dict_factory=_no_trace) for r in pair] for pair in state.history],
        },
        buf,
    )
    payload = buf.getvalue()
    manifest = _manifest(state, hashlib.sha256(payload).hexdigest())
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr("manifest.json", json.dumps(manifest, indent=2, sort_keys=True))
        zf.writestr("state.pt", payload)
    os.replace(tmp, path)
    return path


def _no_trace(items):
    return {k: v for k, v in items if k != "trace"}


def read_manifest(path: str | Path) -> dict:
    try:
        with zipfile.ZipFile(path) as zf:
            return json.loads(zf.read("manifest.json"))
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError, UnicodeDecodeError, OSError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint manifest ({exc})") from exc


def load_checkpoint(path: str | Path) -> TrainState:
    """Restore a :class:`TrainState`; refuses archives whose integrity or architecture differs."""
    path = Path(path)
    manifest = read_manifest(path)
    try:
        with zipfile.ZipFile(path) as zf:
            payload = zf.read("state.pt")
    except (zipfile.BadZipFile, KeyError, OSError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({exc})") from exc
    try:
        if manifest.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(f"{path}: unsupported checkpoint format {manifest.get('format')!r}")
        if hashlib.sha256(payload).hexdigest() != manifest["payload_sha256"]:
            raise CheckpointError(f"{path}: payload checksum mismatch")
        cfg = TrainConfig.from_dict(manifest["config"])
        entries = manifest["networks"]
        iteration = int(manifest["iteration"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: corrupted manifest ({exc})") from exc

    for role, kind in NETWORK_ROLES.items():
        entry = entries.get(role)
        if entry is None or entry.get("network_kind") != kind:
            raise CheckpointError(f"{path}: manifest entry for {role} missing or of the wrong kind")
        current = networks.spec_hash(kind, entry.get("upsample", "deconv"))
        if entry.get("spec_hash") != current:
            raise CheckpointError(f"{path}: architecture hash mismatch for {role}")

    blob = torch.load(io.BytesIO(payload), map_location="cpu", weights_only=True)
    nets = {}
    for role, kind in NETWORK_ROLES.items():
        net = networks.init_params(kind, entries[role]["seed"], entries[role]["upsample"])
        net.load_state_dict(blob["networks"][role])
        nets[role] = net
    optimizers = {}
    for role, net in nets.items():
        opt = _make_optimizer(net, cfg)
        opt.load_state_dict(blob["optimizers"][role])
        optimizers[role] = opt
    sampler = None
    if blob["sampler"] is not None:
        s = blob["sampler"]["sizes"]
        sampler = UnpairedSampler(s["foggy"], s["clear"], seed=0)
        sampler.load_state_dict(blob["sampler"])
    history = deque(
        (tuple(LossReport(**r) for r in pair) for pair in blob["history"]), maxlen=cfg.history_size
    )
    return TrainState(cfg, nets, optimizers, _make_extractor(cfg), sampler, iteration, history)


def load_generator(path: str | Path) -> tuple[nn.Module, TrainConfig]:
    """Defog-Net weights and config from a checkpoint, for inference."""
    state = load_checkpoint(path)
    G = state.nets["G"].eval()
    return G, state.config


# -- training loop ----------------------------------------------------------


class LossLog:
    """Append-only CSV of per-direction losses."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        new = not self.path.exists() or self.path.stat().st_size == 0
        self._fh = open(self.path, "a", newline="")
        self._writer = csv.writer(self._fh)
        if new:
            self._writer.writerow(CSV_COLUMNS)

    @staticmethod
    def truncate_after(path: str | Path, iteration: int) -> None:
        """Drop rows logged after ``iteration`` (work lost since the last checkpoint)."""
        path = Path(path)
        if not path.exists():
            return
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        kept = rows[:1] + [r for r in rows[1:] if int(r[0]) <= iteration]
        if len(kept) != len(rows):
            with open(path, "w", newline="") as fh:
                csv.writer(fh).writerows(kept)

    def write(self, report: LossReport, wall_ms: float) -> None:
        self._writer.writerow(report.csv_row(wall_ms))

    def flush(self) -> None:
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def checkpoint_path(out_dir: str | Path, iteration: int) -> Path:
    return Path(out_dir) / f"checkpoint_{iteration:06d}.ckpt"


def _prune_checkpoints(out_dir: Path, keep: int) -> None:
    if keep <= 0:
        return
    for old in sorted(out_dir.glob("checkpoint_*.ckpt"))[:-keep]:
        old.unlink()


def train(
    config: TrainConfig,
    dataset: UnpairedDataset,
    resume_from: str | Path | None = None,
    out_dir: str | Path | None = None,
    progress=None,
) -> TrainState:
    """Run (or resume) training up to ``config.iterations`` combined iterations.

    Losses go to ``<out_dir>/loss_log.csv``; a checkpoint is written every
    ``checkpoint_every`` iterations and at the end, and ``latest.ckpt`` always
    points at the newest one.
    """
    out_dir = Path(out_dir or config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if resume_from is not None:
        state = load_checkpoint(resume_from)
        if state.sampler is None:
            state.sampler = UnpairedSampler(*dataset.sizes, seed=state.config.seed)
        # the run length may be extended on resume
        state.config = state.config.with_overrides(iterations=config.iterations)
    else:
        state = init_state(config, dataset.sizes)
    cfg = state.config
    if cfg.image_size != dataset.image_size:
        raise ValueError(f"dataset image size {dataset.image_size} != configured {cfg.image_size}")

    if resume_from is not None:
        LossLog.truncate_after(out_dir / "loss_log.csv", state.iteration)
    losslog = LossLog(out_dir / "loss_log.csv")
    try:
        while state.iteration < cfg.iterations:
            t0 = time.perf_counter()
            defog, refog = run_iteration(state, dataset)
            wall_ms = (time.perf_counter() - t0) * 1000.0
            losslog.write(defog, wall_ms)
            losslog.write(refog, wall_ms)
            if state.iteration % cfg.checkpoint_every == 0 or state.iteration == cfg.iterations:
                losslog.flush()
                ckpt = save_checkpoint(state, checkpoint_path(out_dir, state.iteration))
                save_checkpoint(state, out_dir / "latest.ckpt")
                _prune_checkpoints(out_dir, cfg.keep_checkpoints)
                log.info("iteration %d: checkpoint %s", state.iteration, ckpt)
            if progress is not None:
                progress(state, defog, refog)
    finally:
        losslog.close()
    return state
