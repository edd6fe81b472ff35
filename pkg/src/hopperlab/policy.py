"""Learned-policy runtime and the portable weights container.

File layout (little-endian):
    bytes 0-3   magic "HLPW"
    bytes 4-7   uint32 manifest length L
    bytes 8-..  manifest, UTF-8 JSON of length L
    remainder   raw float32 tensor data, row-major, at manifest offsets

The manifest carries the architecture metadata, one entry per tensor
(name, shape, byte offset) and a CRC32 of the data section which is verified
on load.  The trainer writes exactly this format; see docs/weights_format.md.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass

import numpy as np

MAGIC = b"HLPW"
FORMAT_VERSION = 1

DEFAULT_META = {
    "obs_dim": 17,
    "history_len": 5,
    "latent_dim": 16,
    "activation": "elu",
    "encoder_hidden": [128, 64],
    "decoder_hidden": [64],
    "actor_hidden": [256, 128, 64],
}

_ACTIVATIONS = {
    "elu": lambda x: np.where(x > 0.0, x, np.expm1(x)),
    "relu": lambda x: np.maximum(x, 0.0),
    "tanh": np.tanh,
}


class WeightShapeMismatchError(Exception):
    """Tensor shapes in the file disagree with the declared architecture."""


class NonFiniteOutputError(Exception):
    """Forward pass produced NaN or infinity."""


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def expected_shapes(meta: dict) -> dict:
    """All tensor shapes implied by the architecture metadata."""
    obs, hist, latent = meta["obs_dim"], meta["history_len"], meta["latent_dim"]
    shapes = {}
    width = obs * hist
    for i, h in enumerate(meta["encoder_hidden"]):
        shapes[f"enc.{i}.w"] = (h, width)
        shapes[f"enc.{i}.b"] = (h,)
        width = h
    for head, dim in (("head_mu", latent), ("head_logsigma", latent), ("head_vel", 3), ("head_contact", 1)):
        shapes[f"{head}.w"] = (dim, width)
        shapes[f"{head}.b"] = (dim,)
    dwidth = latent
    for i, h in enumerate(meta["decoder_hidden"]):
        shapes[f"dec.{i}.w"] = (h, dwidth)
        shapes[f"dec.{i}.b"] = (h,)
        dwidth = h
    shapes["dec.out.w"] = (obs, dwidth)
    shapes["dec.out.b"] = (obs,)
    awidth = obs + latent + 3
    for i, h in enumerate(meta["actor_hidden"]):
        shapes[f"actor.{i}.w"] = (h, awidth)
        shapes[f"actor.{i}.b"] = (h,)
        awidth = h
    shapes["actor.out.w"] = (3, awidth)
    shapes["actor.out.b"] = (3,)
    return shapes


@dataclass
class PolicyWeights:
    tensors: dict
    meta: dict

    def __post_init__(self):
        self.tensors = {k: np.ascontiguousarray(v, dtype=np.float32) for k, v in self.tensors.items()}
        self.validate()

    def validate(self):
        wanted = expected_shapes(self.meta)
        for name, shape in wanted.items():
            if name not in self.tensors:
                raise WeightShapeMismatchError(f"missing tensor {name}")
            got = self.tensors[name].shape
            if tuple(got) != tuple(shape):
                raise WeightShapeMismatchError(f"{name}: expected {shape}, found {got}")

    def save(self, path: str):
        names = sorted(self.tensors)
        blobs, entries, offset = [], [], 0
        for name in names:
            raw = self.tensors[name].astype("<f4").tobytes(order="C")
            entries.append({"name": name, "shape": list(self.tensors[name].shape), "offset": offset})
            blobs.append(raw)
            offset += len(raw)
        data = b"".join(blobs)
        manifest = {
            "format_version": FORMAT_VERSION,
            "dtype": "float32",
            "byte_order": "little",
            "data_size": len(data),
            "checksum_crc32": zlib.crc32(data) & 0xFFFFFFFF,
            "meta": self.meta,
            "tensors": entries,
        }
        payload = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(len(payload).to_bytes(4, "little"))
            fh.write(payload)
            fh.write(data)

    @classmethod
    def load(cls, path: str) -> "PolicyWeights":
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:4] != MAGIC:
            raise ValueError("not a policy weights file")
        length = int.from_bytes(blob[4:8], "little")
        manifest = json.loads(blob[8 : 8 + length].decode())
        if manifest.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported weights format version {manifest.get('format_version')}")
        data = blob[8 + length :]
        if len(data) != manifest["data_size"]:
            raise ValueError("weights file truncated")
        if (zlib.crc32(data) & 0xFFFFFFFF) != manifest["checksum_crc32"]:
            raise ValueError("weights file checksum mismatch")
        tensors = {}
        for entry in manifest["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            start = entry["offset"]
            arr = np.frombuffer(data, dtype="<f4", count=count, offset=start).reshape(shape)
            tensors[entry["name"]] = arr.copy()
        return cls(tensors, manifest["meta"])


def init_policy_weights(rng: np.random.Generator, meta: dict | None = None, scale: float = None) -> PolicyWeights:
    """Orthogonal-ish random initialization; usable as an untrained policy."""
    meta = dict(DEFAULT_META if meta is None else meta)
    tensors = {}
    for name, shape in expected_shapes(meta).items():
        if name.endswith(".b"):
            tensors[name] = np.zeros(shape, dtype=np.float32)
        else:
            fan_in = shape[1]
            sd = (scale if scale is not None else 1.0) / np.sqrt(fan_in)
            tensors[name] = rng.normal(0.0, sd, shape).astype(np.float32)
    return PolicyWeights(tensors, meta)


class PolicyRuntime:
    """Deterministic inference: encoder mean latent + state estimate into the actor."""

    def __init__(self, weights: PolicyWeights):
        self.weights = weights
        self.meta = weights.meta
        act = self.meta.get("activation", "elu")
        if act not in _ACTIVATIONS:
            raise ValueError(f"unsupported activation {act!r}")
        self._act = _ACTIVATIONS[act]
        self._t = weights.tensors

    def _chain(self, prefix: str, n_hidden: int, x: np.ndarray, final_linear: bool = True) -> np.ndarray:
        for i in range(n_hidden):
            x = self._act(self._t[f"{prefix}.{i}.w"] @ x + self._t[f"{prefix}.{i}.b"])
        if final_linear:
            x = self._t[f"{prefix}.out.w"] @ x + self._t[f"{prefix}.out.b"]
        return x

    def encode(self, history: np.ndarray):
        """history: (H, obs_dim), newest observation first; returns (mu, vhat, chat_logit, trunk)."""
        meta = self.meta
        h = np.asarray(history, dtype=np.float32)
        if h.shape != (meta["history_len"], meta["obs_dim"]):
            raise WeightShapeMismatchError(f"history shape {h.shape} does not match the encoder input")
        x = h.reshape(-1)
        x = self._chain("enc", len(meta["encoder_hidden"]), x, final_linear=False)
        mu = self._t["head_mu.w"] @ x + self._t["head_mu.b"]
        vhat = self._t["head_vel.w"] @ x + self._t["head_vel.b"]
        c_logit = self._t["head_contact.w"] @ x + self._t["head_contact.b"]
        return mu, vhat, c_logit, x

    def decode(self, mu: np.ndarray) -> np.ndarray:
        return self._chain("dec", len(self.meta["decoder_hidden"]), np.asarray(mu, dtype=np.float32))

    def forward(self, history: np.ndarray, obs: np.ndarray):
        """Returns (action, vhat, chat, mu); pure function of (weights, inputs)."""
        obs = np.asarray(obs, dtype=np.float32)
        if obs.shape != (self.meta["obs_dim"],):
            raise WeightShapeMismatchError(f"observation shape {obs.shape}")
        mu, vhat, c_logit, _ = self.encode(history)
        actor_in = np.concatenate([obs, mu, vhat])
        action = self._chain("actor", len(self.meta["actor_hidden"]), actor_in)
        chat = float(_sigmoid(c_logit)[0])
        for value in (action, vhat, mu):
            if not np.all(np.isfinite(value)):
                raise NonFiniteOutputError("policy produced non-finite values")
        return action.astype(np.float64), vhat.astype(np.float64), chat, mu.astype(np.float64)
