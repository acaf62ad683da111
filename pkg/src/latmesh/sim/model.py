"""Deterministic per-link delay models."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from fractions import Fraction

from ..errors import UnknownLink


@dataclass(frozen=True)
class NoJitter:
    kind = "none"


@dataclass(frozen=True)
class UniformJitter:
    low_us: float
    high_us: float
    kind = "uniform"

    def __post_init__(self):
        if not 0 <= self.low_us <= self.high_us:
            raise ValueError("uniform jitter needs 0 <= low_us <= high_us")


@dataclass(frozen=True)
class SpikeJitter:
    """Adds ``magnitude_us`` while ``t mod period_s < width_s``."""

    period_s: float
    magnitude_us: float
    width_s: float
    kind = "spike"

    def __post_init__(self):
        if self.period_s <= 0 or self.width_s < 0 or self.magnitude_us < 0:
            raise ValueError("spike needs period_s > 0, width_s >= 0, magnitude_us >= 0")


@dataclass(frozen=True)
class LinkSpec:
    base_delay_us: float = 0
    jitter: object = NoJitter()

    def __post_init__(self):
        if self.base_delay_us < 0:
            raise ValueError("base_delay_us must be >= 0")


@dataclass(frozen=True)
class LinkModel:
    """One-way delay per ordered (src, dst) link.

    Links not listed fall back to ``default``; with no default they raise
    UnknownLink.
    """

    links: dict = field(default_factory=dict)
    seed: int = 0
    default: LinkSpec | None = None

    def link(self, src, dst):
        spec = self.links.get((src, dst), self.default)
        if spec is None:
            raise UnknownLink(f"no delay model for link {src}->{dst}")
        return spec

    @classmethod
    def zero(cls, seed=0):
        return cls({}, seed, LinkSpec(0))

    @classmethod
    def symmetric(cls, one_way_us, seed=0, default_us=0, jitter=NoJitter()):
        """Model from ``{(a, b): delay}``; each entry applies in both directions."""
        links = {}
        for (a, b), delay in one_way_us.items():
            links[(a, b)] = links[(b, a)] = LinkSpec(delay, jitter)
        return cls(links, seed, LinkSpec(default_us))


def _unit(seed, src, dst, index):
    digest = hashlib.blake2b(struct.pack(">QIIQ", seed, src, dst, index), digest_size=8).digest()
    return int.from_bytes(digest, "big") / 2**64


def sample_delay(model, link, sequence_index, rate_hz=1.0):
    """One-way delay in whole microseconds for message ``sequence_index`` on ``link``.

    Pure function of (model, link, index): spike windows are placed on the
    timeline ``t = sequence_index / rate_hz`` seconds, and uniform jitter
    draws from a hash of (seed, link, index).
    """
    src, dst = link
    spec = model.link(src, dst)
    jitter = spec.jitter
    extra = 0.0
    if isinstance(jitter, UniformJitter):
        u = _unit(model.seed & (2**64 - 1), src, dst, sequence_index)
        extra = jitter.low_us + (jitter.high_us - jitter.low_us) * u
    elif isinstance(jitter, SpikeJitter):
        t = Fraction(sequence_index) / Fraction(repr(float(rate_hz)))
        phase = t % Fraction(repr(float(jitter.period_s)))
        if phase < Fraction(repr(float(jitter.width_s))):
            extra = jitter.magnitude_us
    return int(round(spec.base_delay_us + extra))


def _jitter_from_dict(doc):
    if doc is None:
        return NoJitter()
    kind = doc.get("kind", "none")
    if kind == "none":
        return NoJitter()
    if kind == "uniform":
        return UniformJitter(doc["low_us"], doc["high_us"])
    if kind == "spike":
        return SpikeJitter(doc["period_s"], doc["magnitude_us"], doc["width_s"])
    raise ValueError(f"unknown jitter kind {kind!r}")


def _jitter_to_dict(jitter):
    if isinstance(jitter, UniformJitter):
        return {"kind": "uniform", "low_us": jitter.low_us, "high_us": jitter.high_us}
    if isinstance(jitter, SpikeJitter):
        return {"kind": "spike", "period_s": jitter.period_s, "magnitude_us": jitter.magnitude_us,
                "width_s": jitter.width_s}
    return {"kind": "none"}


def model_from_dict(doc):
    """Build a LinkModel from its JSON form.

    ``{"seed": 7, "default": {"base_delay_us": 0},
    "links": [{"src": 1, "dst": 2, "base_delay_us": 1000,
    "jitter": {"kind": "uniform", "low_us": 0, "high_us": 50},
    "symmetric": true}]}``
    """
    links = {}
    for raw in doc.get("links", []):
        spec = LinkSpec(raw.get("base_delay_us", 0), _jitter_from_dict(raw.get("jitter")))
        links[(raw["src"], raw["dst"])] = spec
        if raw.get("symmetric", False):
            links[(raw["dst"], raw["src"])] = spec
    default = doc.get("default")
    if default is not None:
        default = LinkSpec(default.get("base_delay_us", 0), _jitter_from_dict(default.get("jitter")))
    return LinkModel(links, int(doc.get("seed", 0)), default)


def model_to_dict(model):
    doc = {
        "seed": model.seed,
        "links": [
            {"src": s, "dst": d, "base_delay_us": spec.base_delay_us, "jitter": _jitter_to_dict(spec.jitter)}
            for (s, d), spec in sorted(model.links.items())
        ],
    }
    if model.default is not None:
        doc["default"] = {"base_delay_us": model.default.base_delay_us,
                          "jitter": _jitter_to_dict(model.default.jitter)}
    return doc


def load_model(path):
    with open(path, encoding="utf-8") as f:
        return model_from_dict(json.load(f))
