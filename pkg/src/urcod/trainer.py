"""Staged training (edge generator, builtin pseudo-map model, then the refiner), schedule and checkpoints."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from urcod import checkpoint as ckpt
from urcod.imagedata import split_samples, thread_count
from urcod.losses import structure_loss
from urcod.metrics import MetricReport, evaluate_dataset
from urcod.peg import DacConfig, EdgeLossConfig, PegModel, edge_loss, images_to_tensor, maps_to_tensor
from urcod.pmg import PseudoMapSource, SegmenterModel, generate_pseudo_maps
from urcod.uamr import RefinementWeights, UamrBatch, UamrModel, infer, uamr_losses

log = logging.getLogger(__name__)

MODES = ("full", "no_peg", "no_pmg")


class NonFiniteLossError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 10
    lr0: float = 5e-5
    decay_start_epoch: int = 80
    decay_factor: float = 0.9
    lambda_edge: float = 1.0
    lambda_cvae: float = 1.0
    lambda_ref: float = 1.0
    seed: int = 0
    # stage lengths for the frozen pseudo-label generators
    peg_epochs: int = 20
    pmg_epochs: int = 20
    stage_lr: float = 3e-3
    flooding_level: float = 0.02
    latent_dim: int = 3
    edge_width: int = 1
    lambda_mse_prior: float = 1.0
    lambda_mse_post: float = 1.0
    lambda_smooth_prior: float = 1.0
    lambda_smooth_post: float = 1.0
    lambda_struct_prior: float = 1.0
    lambda_struct_post: float = 1.0
    joint: bool = False
    checkpoint_every: int = 10

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must lie in (0, 1]")
        if self.decay_start_epoch > self.epochs:
            raise ValueError("decay_start_epoch must not exceed epochs")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def refinement_weights(self):
        return RefinementWeights(
            self.lambda_mse_prior,
            self.lambda_mse_post,
            self.lambda_smooth_prior,
            self.lambda_smooth_post,
            self.lambda_struct_prior,
            self.lambda_struct_post,
        )

    @classmethod
    def from_mapping(cls, values):
        """Build from string values (config file / CLI), casting by field type."""
        kwargs = {}
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        for key, raw in values.items():
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            kind = types[key]
            if kind in ("bool", bool):
                if isinstance(raw, bool):
                    kwargs[key] = raw
                elif str(raw).lower() in ("1", "true", "yes", "on"):
                    kwargs[key] = True
                elif str(raw).lower() in ("0", "false", "no", "off"):
                    kwargs[key] = False
                else:
                    raise ValueError(f"{key}: expected a boolean, got {raw!r}")
            elif kind in ("int", int):
                kwargs[key] = int(raw)
            else:
                kwargs[key] = float(raw)
        return cls(**kwargs)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


DESK_SCALE = {
    "epochs": 12,
    "decay_start_epoch": 10,
    "lr0": 1e-3,
    "peg_epochs": 30,
    "pmg_epochs": 20,
}


def desk_config(**overrides):
    """Settings sized for 64x64 synthetic data on a desktop CPU (no pretrained backbones)."""
    return TrainConfig(**{**DESK_SCALE, **overrides})


def parse_config_text(text):
    """Flat ``key=value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


def learning_rate(cfg, epoch):
    """``lr0`` up to ``decay_start_epoch``, then compounded by ``decay_factor`` each epoch."""
    if not 1 <= epoch <= cfg.epochs:
        raise ValueError(f"epoch {epoch} outside 1..{cfg.epochs}")
    if epoch <= cfg.decay_start_epoch:
        return cfg.lr0
    return cfg.lr0 * cfg.decay_factor ** (epoch - cfg.decay_start_epoch)


def total_loss(edge, cvae, ref, cfg):
    return cfg.lambda_edge * edge + cfg.lambda_cvae * cvae + cfg.lambda_ref * ref


def _check_finite(term, value, epoch):
    v = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
    if not math.isfinite(v):
        raise NonFiniteLossError(f"non-finite {term} loss ({v}) at epoch {epoch}")
    return v


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def _set_lr(optimizer, lr):
    for group in optimizer.param_groups:
        group["lr"] = lr


def _adam(params, lr):
    return torch.optim.Adam(params, lr=lr, betas=(0.9, 0.999), eps=1e-8)


def _stage_lr(cfg, epoch, n_epochs):
    # the generator stages reuse the decay rule, rescaled to their own length
    start = min(cfg.decay_start_epoch, n_epochs)
    return learning_rate(cfg.replace(lr0=cfg.stage_lr, epochs=n_epochs, decay_start_epoch=start), epoch)


def train_peg(cfg, samples, model=None, history=None):
    """Fit the edge generator alone with the flooded edge loss. Returns the model."""
    size = samples[0].size[0]
    torch.manual_seed(cfg.seed)
    model = model or PegModel(input_size=size)
    model.train()
    opt = _adam(model.parameters(), cfg.stage_lr)
    rng = np.random.default_rng([cfg.seed, 1])
    images = images_to_tensor([s.image for s in samples])
    edges = maps_to_tensor([s.gt_edge for s in samples])
    floor = EdgeLossConfig(cfg.flooding_level)
    for epoch in range(1, cfg.peg_epochs + 1):
        _set_lr(opt, _stage_lr(cfg, epoch, cfg.peg_epochs))
        losses = []
        for idx in _batches(len(samples), cfg.batch_size, rng):
            idx = torch.as_tensor(idx)
            loss = edge_loss(model(images[idx]), edges[idx], floor)
            _check_finite("edge", loss, epoch)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        mean = float(np.mean(losses))
        if history is not None:
            history.append({"epoch": epoch, "edge": mean})
        log.info("peg epoch=%d edge=%.6f", epoch, mean)
    model.eval()
    return model


def train_pmg(cfg, samples, model=None, history=None):
    """Fit the builtin pseudo-map segmenter with the structure loss."""
    torch.manual_seed(cfg.seed + 1)
    if model is None:
        model = SegmenterModel()
    else:
        # weights drawn before seeding (e.g. when the source was parsed) are redrawn here
        for m in model.modules():
            if hasattr(m, "reset_parameters"):
                m.reset_parameters()
    model.train()
    opt = _adam(model.parameters(), cfg.stage_lr)
    rng = np.random.default_rng([cfg.seed, 2])
    images = images_to_tensor([s.image for s in samples])
    masks = maps_to_tensor([s.gt_map for s in samples])
    for epoch in range(1, cfg.pmg_epochs + 1):
        _set_lr(opt, _stage_lr(cfg, epoch, cfg.pmg_epochs))
        losses = []
        for idx in _batches(len(samples), cfg.batch_size, rng):
            idx = torch.as_tensor(idx)
            loss = structure_loss(model(images[idx]), masks[idx])
            _check_finite("struct", loss, epoch)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        if history is not None:
            history.append({"epoch": epoch, "struct": float(np.mean(losses))})
    model.eval()
    return model


@torch.no_grad()
def predict_edges(peg, samples, batch_size=16):
    peg.eval()
    out = []
    for i in range(0, len(samples), batch_size):
        pred = peg(images_to_tensor([s.image for s in samples[i : i + batch_size]]))
        out.extend(p[0].double().numpy() for p in pred)
    return out


def ablation_inputs(mode, m_pseudo, e_pseudo):
    """Zero out the pseudo label a mode withholds."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if mode == "no_pmg":
        m_pseudo = [np.zeros_like(m) for m in m_pseudo]
    if mode == "no_peg":
        e_pseudo = [np.zeros_like(e) for e in e_pseudo]
    return m_pseudo, e_pseudo


@dataclass
class Pipeline:
    cfg: TrainConfig
    peg: PegModel
    uamr: UamrModel
    source: PseudoMapSource
    mode: str = "full"
    history: list = field(default_factory=list)
    peg_history: list = field(default_factory=list)
    last_checkpoint: Path | None = None

    def pseudo_labels(self, samples, source=None):
        m = generate_pseudo_maps(source or self.source, samples)
        e = predict_edges(self.peg, samples)
        return ablation_inputs(self.mode, m, e)

    def predict(self, samples, mode="mean", seed=0, source=None):
        m, e = self.pseudo_labels(samples, source)
        preds = []
        for i in range(0, len(samples), 16):
            chunk = slice(i, i + 16)
            preds.extend(infer(self.uamr, [s.image for s in samples[chunk]], m[chunk], e[chunk], mode, seed))
        return preds

    def arrays(self):
        arrays = ckpt.module_arrays("peg", self.peg)
        arrays.update(ckpt.module_arrays("uamr", self.uamr))
        if self.source.kind == "builtin":
            arrays.update(ckpt.module_arrays("pmg", self.source.model))
        return arrays

    def meta(self, epoch):
        return {
            "config": dataclasses.asdict(self.cfg),
            "epoch": epoch,
            "input_size": self.peg.input_size,
            "latent_dim": self.uamr.latent_dim,
            "dac": dataclasses.asdict(self.peg.dac_cfg),
            "edge_loss": {"flooding_level": self.cfg.flooding_level},
            "pseudo": self.source.describe(),
            "mode": self.mode,
        }

    def save(self, path, epoch):
        return ckpt.save_checkpoint(path, self.arrays(), self.meta(epoch))


def load_pipeline(path, source=None):
    """Rebuild a :class:`Pipeline` from a checkpoint written by :func:`train`."""
    arrays, meta = ckpt.load_checkpoint(path)
    cfg = TrainConfig(**meta["config"])
    peg = PegModel(input_size=meta["input_size"], dac=DacConfig(**meta["dac"]))
    ckpt.load_module_arrays("peg", peg, arrays)
    uamr = UamrModel(meta["latent_dim"])
    ckpt.load_module_arrays("uamr", uamr, arrays)
    peg.eval()
    uamr.eval()
    if source is None:
        desc = meta["pseudo"]
        source = PseudoMapSource.parse(desc, seed=cfg.seed)
    if source.kind == "builtin":
        if source.model is None or not any(k.startswith("pmg.") for k in arrays):
            raise ckpt.CheckpointError(f"{path}: no builtin pseudo-map model stored")
        ckpt.load_module_arrays("pmg", source.model, arrays)
        source.model.eval()
    return Pipeline(cfg, peg, uamr, source, meta.get("mode", "full"))


def _seed_all(seed):
    torch.manual_seed(seed)
    torch.set_num_threads(thread_count())


def fit(cfg, samples, source, mode="full", peg=None, out_dir=None, log_lines=None):
    """Train everything needed for ``mode`` and return the :class:`Pipeline`.

    A pre-trained ``peg`` (and an already trained builtin source) are reused
    as frozen generators; otherwise they are trained first. With
    ``cfg.joint`` the edge generator is optimized together with the refiner
    under the overall weighted objective.
    """
    if not samples:
        raise ValueError("dataset is empty")
    _seed_all(cfg.seed)
    peg_history = []
    if peg is None:
        peg = PegModel(input_size=samples[0].size[0])
        if not cfg.joint:
            peg = train_peg(cfg, samples, peg, peg_history)
    if source.kind == "builtin" and not getattr(source.model, "fitted", False) and cfg.pmg_epochs > 0:
        train_pmg(cfg, samples, source.model)
        source.model.fitted = True

    m_pseudo = generate_pseudo_maps(source, samples)
    e_pseudo = predict_edges(peg, samples)
    m_pseudo, e_pseudo = ablation_inputs(mode, m_pseudo, e_pseudo)

    torch.manual_seed(cfg.seed + 7)
    uamr = UamrModel(cfg.latent_dim)
    pipe = Pipeline(cfg, peg, uamr, source, mode, peg_history=peg_history)
    params = list(uamr.parameters()) + (list(peg.parameters()) if cfg.joint else [])
    opt = _adam(params, cfg.lr0)
    rng = np.random.default_rng([cfg.seed, 3])
    gen = torch.Generator().manual_seed(cfg.seed)
    full = UamrBatch.from_samples(samples, m_pseudo, e_pseudo)
    floor = EdgeLossConfig(cfg.flooding_level)
    weights = cfg.refinement_weights
    out_dir = Path(out_dir) if out_dir is not None else None
    last_path = None

    for epoch in range(1, cfg.epochs + 1):
        lr = learning_rate(cfg, epoch)
        _set_lr(opt, lr)
        uamr.train()
        peg.train(cfg.joint)
        sums = {"edge": 0.0, "cvae": 0.0, "ref": 0.0, "total": 0.0}
        n_batches = 0
        for idx in _batches(len(samples), cfg.batch_size, rng):
            idx = torch.as_tensor(idx)
            batch = UamrBatch(full.image[idx], full.m_pseudo[idx], full.e_pseudo[idx], full.m_gt[idx], full.e_gt[idx])
            with torch.set_grad_enabled(cfg.joint):
                edges = peg(batch.image)
                edge = edge_loss(edges, batch.e_gt, floor)
            if cfg.joint and mode != "no_peg":
                batch.e_pseudo = edges.detach()
            shape = (len(idx), cfg.latent_dim)
            noise_post = torch.randn(shape, generator=gen)
            noise_prior = torch.randn(shape, generator=gen)
            step = uamr_losses(uamr, batch, noise_post, noise_prior, weights)
            loss = total_loss(edge, step.cvae, step.ref, cfg)
            terms = {"edge": edge, "cvae": step.cvae, "ref": step.ref, "total": loss}
            for name, value in terms.items():
                sums[name] += _check_finite(name, value, epoch)
            opt.zero_grad()
            loss.backward()
            opt.step()
            n_batches += 1
        means = {k: v / n_batches for k, v in sums.items()}
        pipe.history.append({"epoch": epoch, "lr": lr, **means})
        line = (
            f"epoch={epoch} lr={lr:.6g} edge={means['edge']:.6f} cvae={means['cvae']:.6f} "
            f"ref={means['ref']:.6f} total={means['total']:.6f}"
        )
        log.info(line)
        if log_lines is not None:
            log_lines.append(line)
        if out_dir is not None and (epoch % cfg.checkpoint_every == 0 or epoch == cfg.epochs):
            peg.eval()
            uamr.eval()
            last_path = pipe.save(out_dir / f"checkpoint_epoch{epoch:03d}.urcod", epoch)
    peg.eval()
    uamr.eval()
    pipe.last_checkpoint = last_path
    return pipe


def train(cfg, dataset, pseudo_source, out_dir, mode="full"):
    """Run :func:`fit`, write ``train.log`` and checkpoints into ``out_dir``; return the final checkpoint path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    pipe = fit(cfg, dataset, pseudo_source, mode, out_dir=out_dir, log_lines=lines)
    (out_dir / "train.log").write_text("\n".join(lines) + "\n")
    if pipe.peg_history:
        (out_dir / "peg.log").write_text(
            "".join(f"epoch={h['epoch']} edge={h['edge']:.6f}\n" for h in pipe.peg_history)
        )
    final = out_dir / "final.urcod"
    pipe.save(final, cfg.epochs)
    return final


@dataclass
class AblationResult:
    reports: dict

    def rows(self):
        return [(mode, *report.means) for mode, report in self.reports.items()]

    def to_csv(self):
        out = ["mode,mae,s_measure,e_measure,weighted_f"]
        out += [f"{m}," + ",".join(f"{v:.6f}" for v in vals) for m, *vals in self.rows()]
        return "\n".join(out) + "\n"


def ablate(cfg, dataset, pseudo_source, modes=MODES, test_fraction=0.2, split_seed=None):
    """Train one refiner per mode on a shared split and frozen generators; score the held-out part."""
    split = split_samples(dataset, test_fraction, cfg.seed if split_seed is None else split_seed)
    _seed_all(cfg.seed)
    peg = train_peg(cfg, split.train)
    reports = {}
    for mode in modes:
        pipe = fit(cfg, split.train, pseudo_source, mode, peg=peg)
        preds = pipe.predict(split.test)
        reports[mode] = evaluate_dataset(preds, split.test)
        log.info("ablation %s: %s", mode, reports[mode].means)
    return AblationResult(reports)


def evaluate_pseudo(source, samples):
    """Metrics of the raw pseudo-maps, the baseline refinement has to beat."""
    return evaluate_dataset(generate_pseudo_maps(source, samples), samples)

