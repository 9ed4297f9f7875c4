"""Alternating adversarial training, checkpointing, and inference.

Each step updates the discriminator on real-vs-recovered batches first, then
the generator on the combined pixel/adversarial/identity objective with the
epoch-indexed weights. RMSprop drives both (lr 1e-3; the 1e-2 decay knob is
the smoothing complement, i.e. squared-gradient coefficient 0.99).

Checkpoints are single files: a JSON header (format version, config and its
hash, epoch, rng state, tensor directory) followed by raw little-endian
tensor bytes in sorted-name order, so save -> load -> save is byte-identical.
"""

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .dataset import DatasetManifest
from .features import build_extractor
from .images import center_crop_resize, from_net_range, load_image, to_net_range
from .losses import (
    LossWeights,
    discriminator_loss,
    generator_adversarial_loss,
    identity_loss,
    pixel_loss,
    srn_total_loss,
)
from .networks import DN, SRN, SRNConfig
from .stn import LocalizationNet

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
_MAGIC = b"IFRPCKPT"

METRIC_FIELDS = ("step", "epoch", "L_pix", "L_dis", "L_id", "L_SNR", "lambda_n", "eta_n")


class TrainingDiverged(RuntimeError):
    """A loss became non-finite; diagnostics were dumped."""


class CheckpointError(RuntimeError):
    """Corrupt checkpoint or config mismatch on resume."""


@dataclass(frozen=True)
class TrainConfig:
    """Declarative training setup; config files use exactly these keys."""

    batch_size: int = 16
    learning_rate: float = 1e-3
    optimizer_decay: float = 1e-2
    epochs: int = 10
    seed: int = 0
    image_size: int = 32
    base_channels: int = 8
    depth: int = None
    skip_layers: int = 2
    use_stn: bool = True
    loss_weights: LossWeights = field(default_factory=LossWeights)
    extractor: dict = field(
        default_factory=lambda: {"kind": "frozen_conv", "channels": [8, 16], "seed": 0, "tap": -1}
    )
    checkpoint_every: int = 0
    deterministic: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not (0 < self.optimizer_decay < 1):
            raise ValueError(f"optimizer_decay must be in (0, 1), got {self.optimizer_decay}")

    def srn_config(self) -> SRNConfig:
        return SRNConfig(
            image_size=self.image_size,
            base_channels=self.base_channels,
            depth=self.depth,
            skip_layers=self.skip_layers,
            use_stn=self.use_stn,
        )

    def to_dict(self) -> dict:
        d = {
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "optimizer_decay": self.optimizer_decay,
            "epochs": self.epochs,
            "seed": self.seed,
            "image_size": self.image_size,
            "base_channels": self.base_channels,
            "depth": self.depth,
            "skip_layers": self.skip_layers,
            "use_stn": self.use_stn,
            "loss_weights": self.loss_weights.to_dict(),
            "extractor": dict(self.extractor),
            "checkpoint_every": self.checkpoint_every,
            "deterministic": self.deterministic,
        }
        return d

    @staticmethod
    def from_dict(doc: dict) -> "TrainConfig":
        doc = dict(doc)
        known = set(TrainConfig.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "loss_weights" in doc:
            lw = dict(doc["loss_weights"])
            bad = set(lw) - {"lambda0", "eta0", "decay_rate"}
            if bad:
                raise ValueError(f"unknown loss_weights keys: {sorted(bad)}")
            doc["loss_weights"] = LossWeights(**lw)
        return TrainConfig(**doc)

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


@dataclass
class TrainState:
    """Everything one optimization step mutates."""

    config: TrainConfig
    srn: SRN
    dn: DN
    extractor: object
    opt_srn: torch.optim.RMSprop
    opt_dn: torch.optim.RMSprop
    epoch: int = 0
    step: int = 0
    shuffle_rng: np.random.Generator = None


def init_state(config: TrainConfig) -> TrainState:
    net_cfg = config.srn_config()
    srn = SRN(net_cfg)
    dn = DN(net_cfg)
    gen = torch.Generator().manual_seed(config.seed)
    srn.reset_parameters(gen)
    dn.reset_parameters(gen)
    alpha = 1.0 - config.optimizer_decay
    opt_srn = torch.optim.RMSprop(srn.parameters(), lr=config.learning_rate, alpha=alpha, eps=1e-8)
    opt_dn = torch.optim.RMSprop(dn.parameters(), lr=config.learning_rate, alpha=alpha, eps=1e-8)
    return TrainState(
        config=config,
        srn=srn,
        dn=dn,
        extractor=build_extractor(config.extractor),
        opt_srn=opt_srn,
        opt_dn=opt_dn,
        shuffle_rng=np.random.default_rng(config.seed),
    )


def train_step(state: TrainState, sf: torch.Tensor, rf: torch.Tensor) -> dict:
    """One alternating update: discriminator first, then generator.

    sf/rf are matching batches in [-1, 1]. Emits the step's losses and the
    epoch-indexed weights. Raises TrainingDiverged on any non-finite loss.
    """
    if sf.shape != rf.shape:
        raise ValueError(f"batch shape mismatch {tuple(sf.shape)} vs {tuple(rf.shape)}")
    cfg = state.config
    lambda_n = cfg.loss_weights.lambda_at(state.epoch)
    eta_n = cfg.loss_weights.eta_at(state.epoch)

    state.srn.train()
    state.dn.train()

    # discriminator update (generator outputs detached: never touches Theta)
    with torch.no_grad():
        fake = state.srn(sf)
    d_real = state.dn(rf)
    d_fake = state.dn(fake)
    l_dis = discriminator_loss(d_real, d_fake)
    state.opt_dn.zero_grad(set_to_none=True)
    l_dis.backward()
    state.opt_dn.step()

    # generator update against the refreshed discriminator
    recovered = state.srn(sf)
    l_pix = pixel_loss(recovered, rf)
    l_adv = generator_adversarial_loss(state.dn(recovered))
    l_id = identity_loss(recovered, rf, state.extractor)
    l_total = srn_total_loss(l_pix, l_adv, l_id, lambda_n, eta_n)
    state.opt_srn.zero_grad(set_to_none=True)
    state.opt_dn.zero_grad(set_to_none=True)   # discard D grads from the G pass
    l_total.backward()
    state.opt_srn.step()

    metrics = {
        "step": state.step,
        "epoch": state.epoch,
        "L_pix": float(l_pix.detach()),
        "L_dis": float(l_dis.detach()),
        "L_id": float(l_id.detach()),
        "L_SNR": float(l_total.detach()),
        "lambda_n": lambda_n,
        "eta_n": eta_n,
    }
    state.step += 1
    if not all(math.isfinite(v) for v in metrics.values()):
        raise TrainingDiverged(f"non-finite loss at step {metrics['step']}: {metrics}")
    return metrics


def load_pairs(manifest: DatasetManifest, split: str = "train"):
    """Materialize a split as ([-1,1] SF tensor, RF tensor, records)."""
    records = sorted(manifest.split(split), key=lambda r: r.record_id)
    if not records:
        raise ValueError(f"manifest has no records in split {split!r}")
    sfs, rfs = [], []
    for r in records:
        sf = load_image(manifest.root / r.sf_path)
        rf = load_image(manifest.root / r.rf_path)
        sfs.append(to_net_range(sf).transpose(2, 0, 1))
        rfs.append(to_net_range(rf).transpose(2, 0, 1))
    sf_t = torch.from_numpy(np.stack(sfs)).to(torch.float32)
    rf_t = torch.from_numpy(np.stack(rfs)).to(torch.float32)
    return sf_t, rf_t, records


@dataclass
class TrainResult:
    checkpoint_path: Path
    metrics: list
    csv_path: Path


def train(manifest: DatasetManifest, config: TrainConfig, out_dir, resume_from=None) -> TrainResult:
    """Run the epoch loop over the manifest's train split.

    Shuffling, schedules and updates are fully deterministic for a fixed seed
    (reproducible mode pins torch to one thread). Checkpoints are written per
    cadence and at the end; metrics land in metrics.csv, one row per step.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sf_all, rf_all, _ = load_pairs(manifest, "train")
    n = sf_all.shape[0]

    state = init_state(config)
    start_epoch = 0
    if resume_from is not None:
        ckpt = Checkpoint.load(resume_from)
        if ckpt.header["config_hash"] != config.hash():
            raise CheckpointError("checkpoint config hash does not match the supplied config")
        start_epoch = restore_state(state, ckpt)

    old_threads = torch.get_num_threads()
    if config.deterministic:
        torch.set_num_threads(1)
    rows = []
    try:
        for epoch in range(start_epoch, config.epochs):
            state.epoch = epoch
            order = state.shuffle_rng.permutation(n)
            for lo in range(0, n, config.batch_size):
                idx = torch.from_numpy(order[lo:lo + config.batch_size].copy())
                try:
                    rows.append(train_step(state, sf_all[idx], rf_all[idx]))
                except TrainingDiverged:
                    _dump_divergence(out_dir, state, rows)
                    raise
            done = epoch + 1
            if config.checkpoint_every and done % config.checkpoint_every == 0 and done < config.epochs:
                save_checkpoint(out_dir / f"epoch_{done:04d}.ckpt", state, epochs_done=done)
    finally:
        torch.set_num_threads(old_threads)

    final_path = out_dir / "checkpoint.ckpt"
    save_checkpoint(final_path, state, epochs_done=config.epochs)
    csv_path = out_dir / "metrics.csv"
    write_metrics_csv(csv_path, rows)
    return TrainResult(checkpoint_path=final_path, metrics=rows, csv_path=csv_path)


def write_metrics_csv(path, rows) -> None:
    lines = [",".join(METRIC_FIELDS)]
    for row in rows:
        lines.append(",".join(repr(row[k]) if isinstance(row[k], float) else str(row[k]) for k in METRIC_FIELDS))
    Path(path).write_text("\n".join(lines) + "\n")


def _dump_divergence(out_dir: Path, state: TrainState, rows) -> None:
    dump = {
        "last_metrics": rows[-5:],
        "epoch": state.epoch,
        "step": state.step,
        "srn_param_norm": float(sum(p.detach().norm() ** 2 for p in state.srn.parameters()) ** 0.5),
        "dn_param_norm": float(sum(p.detach().norm() ** 2 for p in state.dn.parameters()) ** 0.5),
    }
    (out_dir / "diverged.json").write_text(json.dumps(dump, indent=2))
    log.error("training diverged; diagnostics in %s", out_dir / "diverged.json")


# ---------------------------------------------------------------------------
# Checkpoint container

_DTYPES = {"float32": torch.float32, "float64": torch.float64, "int64": torch.int64}


@dataclass
class Checkpoint:
    header: dict
    tensors: dict

    @property
    def config(self) -> TrainConfig:
        return TrainConfig.from_dict(self.header["config"])

    @property
    def epoch(self) -> int:
        return self.header["epoch"]

    def save(self, path) -> None:
        names = sorted(self.tensors)
        entries = []
        payload = bytearray()
        for name in names:
            t = self.tensors[name].detach().contiguous()
            data = t.numpy().tobytes()
            entries.append(
                {
                    "name": name,
                    "dtype": str(t.dtype).removeprefix("torch."),
                    "shape": list(t.shape),
                    "offset": len(payload),
                    "nbytes": len(data),
                }
            )
            payload.extend(data)
        header = dict(self.header)
        header["tensors"] = entries
        blob = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(len(blob).to_bytes(8, "little"))
            fh.write(blob)
            fh.write(bytes(payload))

    @staticmethod
    def load(path) -> "Checkpoint":
        raw = Path(path).read_bytes()
        if raw[:8] != _MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        hlen = int.from_bytes(raw[8:16], "little")
        header = json.loads(raw[16:16 + hlen].decode())
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
        base = 16 + hlen
        tensors = {}
        for e in header.pop("tensors"):
            buf = raw[base + e["offset"]: base + e["offset"] + e["nbytes"]]
            arr = np.frombuffer(buf, dtype=e["dtype"]).copy().reshape(e["shape"])
            tensors[e["name"]] = torch.from_numpy(arr).to(_DTYPES[e["dtype"]])
        return Checkpoint(header=header, tensors=tensors)


def _opt_to_entries(tag: str, opt: torch.optim.RMSprop):
    sd = opt.state_dict()
    tensors = {}
    meta = {"param_groups": sd["param_groups"], "scalar_state": {}}
    for idx, st in sd["state"].items():
        for key, val in st.items():
            if isinstance(val, torch.Tensor):
                tensors[f"opt_{tag}/{idx}/{key}"] = val
            else:
                meta["scalar_state"].setdefault(str(idx), {})[key] = val
    return tensors, meta


def _opt_from_entries(tag: str, meta: dict, tensors: dict) -> dict:
    state = {}
    prefix = f"opt_{tag}/"
    for name, t in tensors.items():
        if not name.startswith(prefix):
            continue
        _, idx, key = name.split("/")
        state.setdefault(int(idx), {})[key] = t
    for idx, scalars in meta["scalar_state"].items():
        state.setdefault(int(idx), {}).update(scalars)
    return {"state": state, "param_groups": meta["param_groups"]}


def save_checkpoint(path, state: TrainState, epochs_done: int) -> Path:
    tensors = {}
    for tag, net in (("srn", state.srn), ("dn", state.dn)):
        for name, t in net.state_dict().items():
            tensors[f"{tag}/{name}"] = t
    opt_s_t, opt_s_meta = _opt_to_entries("srn", state.opt_srn)
    opt_d_t, opt_d_meta = _opt_to_entries("dn", state.opt_dn)
    tensors.update(opt_s_t)
    tensors.update(opt_d_t)

    locnets = {
        name: vars(m.spec) | {"convs": list(map(list, m.spec.convs)), "fc_sizes": list(m.spec.fc_sizes)}
        for name, m in state.srn.named_modules()
        if isinstance(m, LocalizationNet)
    }
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": state.config.to_dict(),
        "config_hash": state.config.hash(),
        "epoch": epochs_done,
        "step": state.step,
        "lambda_n": state.config.loss_weights.lambda_at(max(epochs_done - 1, 0)),
        "eta_n": state.config.loss_weights.eta_at(max(epochs_done - 1, 0)),
        "opt_srn": opt_s_meta,
        "opt_dn": opt_d_meta,
        "rng": {"numpy_shuffle": _jsonable(state.shuffle_rng.bit_generator.state)},
        "locnet_specs": locnets,
    }
    ckpt = Checkpoint(header=header, tensors=tensors)
    ckpt.save(path)
    return Path(path)


def restore_state(state: TrainState, ckpt: Checkpoint) -> int:
    """Load checkpoint contents into a freshly initialized state; returns epoch."""
    for tag, net in (("srn", state.srn), ("dn", state.dn)):
        sd = {name[len(tag) + 1:]: t for name, t in ckpt.tensors.items() if name.startswith(tag + "/")}
        net.load_state_dict(sd)
    state.opt_srn.load_state_dict(_opt_from_entries("srn", ckpt.header["opt_srn"], ckpt.tensors))
    state.opt_dn.load_state_dict(_opt_from_entries("dn", ckpt.header["opt_dn"], ckpt.tensors))
    state.step = ckpt.header["step"]
    state.shuffle_rng = np.random.default_rng()
    state.shuffle_rng.bit_generator.state = ckpt.header["rng"]["numpy_shuffle"]
    return ckpt.header["epoch"]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def load_generator(checkpoint) -> tuple:
    """(SRN in eval mode, TrainConfig) from a checkpoint path or object."""
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else Checkpoint.load(checkpoint)
    config = ckpt.config
    srn = SRN(config.srn_config())
    sd = {name[4:]: t for name, t in ckpt.tensors.items() if name.startswith("srn/")}
    srn.load_state_dict(sd)
    srn.eval()
    return srn, config


def recover(checkpoint, portraits, batch_size: int = 16) -> list:
    """Run inference on stylized portraits; returns [0, 1] arrays.

    Portraits whose size differs from the checkpoint's image size are centre
    crop/resized on ingest. Only the generator runs; the discriminator is a
    training-time component.
    """
    srn, config = load_generator(checkpoint)
    size = config.image_size
    prepared = []
    for img in portraits:
        img = np.asarray(img, dtype=np.float64)
        if img.shape[:2] != (size, size):
            img = center_crop_resize(img, size)
        prepared.append(to_net_range(img).transpose(2, 0, 1))
    out = []
    with torch.no_grad():
        for lo in range(0, len(prepared), batch_size):
            batch = torch.from_numpy(np.stack(prepared[lo:lo + batch_size])).to(torch.float32)
            rec = srn(batch).numpy()
            out.extend(from_net_range(r.transpose(1, 2, 0)) for r in rec)
    return out
