"""Trained model bundle and the ``DFRT`` checkpoint format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..denoiser import DenoiserParams, init_denoiser
from ..encoders import EncoderParams, init_encoder
from ..exceptions import FormatError, HeaderError
from ..numerics import SeededRng, Tensor
from ..schedule import NoiseSchedule, make_schedule
from ..serialization import encode_record, read_file, write_file
from .config import RunConfig

MAGIC = b"DFRT"
VERSION = 1


@dataclass
class Checkpoint:
    encoder: EncoderParams
    denoiser: DenoiserParams
    schedule: NoiseSchedule
    config: RunConfig
    d_in: int
    rng_state: dict = field(default_factory=dict)
    loss_curve: list[dict] = field(default_factory=list)

    def parameters(self) -> dict[str, Tensor]:
        out = {f"encoder.{k}": v for k, v in self.encoder.tensors.items()}
        out.update({f"denoiser.{k}": v for k, v in self.denoiser.tensors.items()})
        return out


def init_checkpoint(config: RunConfig, d_in: int, rng: SeededRng) -> Checkpoint:
    tc = config.train.validate()
    enc = init_encoder(rng.child("encoder"), d_in, tc.dim, depth=tc.encoder_depth,
                       tau_frame=tc.tau_frame, tau_contrast=tc.tau_contrast,
                       positional=tc.positional)
    den = init_denoiser(rng.child("denoiser"), tc.dim, tc.steps, hidden=tc.hidden or None,
                        scaled_attention=tc.scaled_attention)
    sched = make_schedule(tc.schedule, tc.steps, tc.signal_scale)
    return Checkpoint(enc, den, sched, config, d_in)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    header = {
        "config": ckpt.config.to_ini(),
        "d_in": ckpt.d_in,
        "schedule": ckpt.schedule.to_dict(),
        "rng_state": ckpt.rng_state,
        "loss_curve": ckpt.loss_curve,
    }
    records = b"".join(encode_record(name, t.value, "<f8")
                       for name, t in ckpt.parameters().items())
    write_file(path, MAGIC, VERSION, json.dumps(header, sort_keys=True), records)


def load_checkpoint(path) -> Checkpoint:
    text, reader = read_file(path, MAGIC, VERSION)
    try:
        header = json.loads(text)
        config = RunConfig.from_ini(header["config"])
        d_in = int(header["d_in"])
    except (ValueError, KeyError, TypeError) as exc:
        raise HeaderError(f"{path}: malformed checkpoint header") from exc
    tensors = {}
    while not reader.exhausted:
        name, arr = reader.record("<f8")
        tensors[name] = arr
    ckpt = init_checkpoint(config, d_in, SeededRng(0))
    params = ckpt.parameters()
    if set(params) != set(tensors):
        missing = sorted(set(params) ^ set(tensors))
        raise FormatError(f"{path}: parameter set does not match the config: {missing[:5]}")
    for name, p in params.items():
        if tensors[name].shape != p.shape:
            raise FormatError(f"{path}: {name} has shape {tensors[name].shape}, expected {p.shape}")
        p.value = np.array(tensors[name], dtype=np.float64)
    ckpt.rng_state = header.get("rng_state", {})
    ckpt.loss_curve = header.get("loss_curve", [])
    return ckpt
