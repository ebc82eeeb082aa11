"""Deterministic synthetic bundles with plantable attention sinks.

Random numbers come from one splitmix64 stream seeded with ``SynthConfig.seed``
(output ``i`` is ``mix(seed + i * 0x9E3779B97F4A7C15)``).  A draw ``z`` maps
to ``u = (z >> 11) * 2**-53`` in [0, 1); ``uniform(lo, hi) = lo + (hi - lo) * u``.
All generated tensors are rounded to float32 before use.  Draw order:

1. activations, row-major ``N * C`` draws of ``uniform(-a, a)`` with
   ``a = act_scale * sqrt(3 / C)`` so a plain token has norm ~``act_scale``;
   informative patches get ``+ informative_boost * act_scale / C`` on every
   channel and each planted sink sets ``acts[p, c] = magnitude * act_scale``;
2. per head: ``key_proj`` (``C * d`` draws of ``uniform(0, 1)``) then
   ``query_proj`` (``C * d`` draws of ``uniform(-1, 1) * query_mix / sqrt(C)``);
   the CLS query is the constant ``2 / d`` so every channel's key readout is
   positive and sinks win the CLS competition;
3. per text row: system rows draw ``C`` values ``uniform(-1, 1)``; query
   rows draw one weight ``uniform(0.5, 1.5)`` per favoured patch and sum the
   weighted "content" rows (activations with the sink channels zeroed);
4. per decoder layer (ascending): ``M * (N + 1 + M)`` draws of
   ``uniform(-layer_noise, layer_noise)`` added to the text logits.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .attn import REGISTER_ID, AttentionMap, ValidationError, cosine_similarity, text_id
from .bundle import LinearEncoder, SampleBundle
from .register import RegisterNeuronSet, construct_register
from .stage1 import score_cls
from .stage2 import absorption_neff

_TO_UNIT = 2.0 ** -53
_LAYOUT_SALT = 0x5EED_1A70_0C0F_FEE5


class SplitMix64:
    def __init__(self, seed):
        self.state = np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)

    def raw(self, n):
        out, self.state = kernels.splitmix64_block(self.state, n)
        return out

    def uniform(self, n, lo=0.0, hi=1.0):
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * _TO_UNIT
        return lo + (hi - lo) * u

    def below(self, n):
        """One integer in [0, n)."""
        return min(int(self.uniform(1)[0] * n), n - 1)

    def sample_distinct(self, population, k):
        """k distinct items by partial Fisher-Yates, returned sorted."""
        pool = list(population)
        if k > len(pool):
            raise ValidationError(f"cannot draw {k} distinct items from {len(pool)}")
        for i in range(k):
            j = i + self.below(len(pool) - i)
            pool[i], pool[j] = pool[j], pool[i]
        return sorted(pool[:k])


def _f32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


@dataclass(frozen=True)
class SynthConfig:
    n_patches: int = 576
    n_channels: int = 64
    hidden_dim: int = 32
    n_text: int = 8
    n_heads: int = 1
    seed: int = 0
    sinks: tuple = ()
    informative_patches: tuple = ()
    query_id: int = 0
    query_subsets: tuple = ()
    layers: tuple = (11,)
    n_system: int = 0
    act_scale: float = 1.0
    informative_boost: float = 1.5
    cls_temperature: float = 0.5
    query_mix: float = 0.5
    text_temperature: float = 12.0
    register_text_logit: float = 3.0
    layer_noise: float = 0.5
    sample_id: str = ""

    def __post_init__(self):
        sinks = tuple(tuple((int(p), int(c), float(m))) for p, c, m in self.sinks)
        object.__setattr__(self, "sinks", sinks)
        object.__setattr__(self, "informative_patches", tuple(sorted(int(i) for i in self.informative_patches)))
        object.__setattr__(self, "query_subsets", tuple(tuple(int(i) for i in s) for s in self.query_subsets))
        object.__setattr__(self, "layers", tuple(sorted(int(l) for l in self.layers)))
        for name in ("n_patches", "n_channels", "hidden_dim", "n_text", "n_heads"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.hidden_dim % self.n_heads:
            raise ValidationError("hidden_dim must be divisible by n_heads")
        if not 0 <= self.n_system <= self.n_text:
            raise ValidationError("n_system must be in [0, n_text]")
        for p, c, m in sinks:
            if not 0 <= p < self.n_patches:
                raise ValidationError(f"sink patch index {p} out of range")
            if not 0 <= c < self.n_channels:
                raise ValidationError(f"sink channel index {c} out of range")
            if not m > 0:
                raise ValidationError(f"sink magnitude must be positive, got {m}")
        for i in self.informative_patches + tuple(i for s in self.query_subsets for i in s):
            if not 0 <= i < self.n_patches:
                raise ValidationError(f"patch index {i} out of range")
        if any(l < 0 for l in self.layers) or not self.layers:
            raise ValidationError("layers must be a non-empty list of non-negative ints")
        if not self.act_scale > 0:
            raise ValidationError("act_scale must be positive")

    @property
    def sink_channels(self):
        return tuple(sorted({c for _, c, _ in self.sinks}))

    @property
    def favoured_patches(self):
        if self.query_subsets:
            return self.query_subsets[self.query_id % len(self.query_subsets)]
        groups = 2
        return self.informative_patches[self.query_id % groups :: groups]

    def to_dict(self):
        d = asdict(self)
        d["sinks"] = [list(s) for s in self.sinks]
        d["informative_patches"] = list(self.informative_patches)
        d["query_subsets"] = [list(s) for s in self.query_subsets]
        d["layers"] = list(self.layers)
        return d

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown SynthConfig fields: {sorted(unknown)}")
        d = dict(d)
        for key in ("sinks", "informative_patches", "query_subsets", "layers"):
            if key in d:
                d[key] = tuple(tuple(x) if isinstance(x, list) else x for x in d[key])
        return cls(**d)


def _masked_softmax(logits, allowed):
    x = np.where(allowed, logits, -np.inf)
    x = x - x.max(axis=1, keepdims=True)
    e = np.where(allowed, np.exp(x), 0.0)
    return e / e.sum(axis=1, keepdims=True)


def generate_sample(cfg: SynthConfig) -> SampleBundle:
    rng = SplitMix64(cfg.seed)
    n, c, m = cfg.n_patches, cfg.n_channels, cfg.n_text
    a = cfg.act_scale * math.sqrt(3.0 / c)

    acts = rng.uniform(n * c, -a, a).reshape(n, c)
    if cfg.informative_patches:
        acts[list(cfg.informative_patches)] += cfg.informative_boost * cfg.act_scale / c
    for p, ch, mag in cfg.sinks:
        acts[p, ch] = mag * cfg.act_scale
    acts = _f32(acts)

    d = cfg.hidden_dim // cfg.n_heads
    key_proj = np.empty((cfg.n_heads, c, d))
    query_proj = np.empty((cfg.n_heads, c, d))
    for h in range(cfg.n_heads):
        key_proj[h] = rng.uniform(c * d, 0.0, 1.0).reshape(c, d)
        query_proj[h] = rng.uniform(c * d, -1.0, 1.0).reshape(c, d) * (cfg.query_mix / math.sqrt(c))
    cls_query = np.full((cfg.n_heads, d), 2.0 / d)
    encoder = LinearEncoder(_f32(key_proj), _f32(query_proj), _f32(cls_query), cfg.cls_temperature)

    content = construct_register(acts, RegisterNeuronSet.from_channels(cfg.sink_channels)).patch_activations
    favoured = list(cfg.favoured_patches)
    text_vecs = np.empty((m, c))
    for j in range(m):
        if j < cfg.n_system or not favoured:
            text_vecs[j] = rng.uniform(c, -1.0, 1.0)
        else:
            w = rng.uniform(len(favoured), 0.5, 1.5)
            text_vecs[j] = w @ content[favoured]
    norms = np.linalg.norm(text_vecs, axis=1, keepdims=True)
    text_vecs = text_vecs / np.where(norms > 0, norms, 1.0)
    relevance = cfg.text_temperature * (text_vecs @ content.T) / cfg.act_scale

    n_cols = n + 1 + m
    allowed = np.ones((m, n_cols), dtype=bool)
    allowed[:, n + 1 :] = np.tril(np.ones((m, m), dtype=bool))
    row_ids = tuple(text_id(j) for j in range(m))
    col_ids = tuple(range(n)) + (REGISTER_ID,) + row_ids
    text_attn = {}
    for layer in cfg.layers:
        noise = rng.uniform(m * n_cols, -cfg.layer_noise, cfg.layer_noise).reshape(m, n_cols)
        logits = noise
        logits[:, :n] += relevance
        logits[:, n] += cfg.register_text_logit
        w = _f32(_masked_softmax(logits, allowed))
        text_attn[layer] = AttentionMap(row_ids, col_ids, w[None])

    tags = tuple("system" if j < cfg.n_system else "query" for j in range(m))
    return SampleBundle(
        sample_id=cfg.sample_id or f"synth-{cfg.seed:016x}",
        activations=acts,
        text_attn=text_attn,
        text_tags=tags,
        encoder=encoder,
        register_channels=cfg.sink_channels,
        metadata={"generator": "regprune.synth", "config": cfg.to_dict()},
    )


@dataclass(frozen=True)
class CorpusConfig:
    """Recipe for a corpus of related samples.

    Sink channels are shared across samples (register neurons are a property
    of the model); sink positions, informative regions and the query vary.
    """

    count: int = 100
    seed: int = 0
    sink_channels: tuple = (7,)
    sinks_per_sample: tuple = (3, 8)
    sink_magnitude: tuple = (7.0, 10.0)
    n_informative: tuple = (24, 160)
    n_queries: int = 2
    template: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "sink_channels", tuple(int(c) for c in self.sink_channels))
        if self.count < 1:
            raise ValidationError("count must be >= 1")
        SynthConfig(**self.template)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d.setdefault("template", {})
        for key in ("sinks_per_sample", "sink_magnitude", "n_informative", "sink_channels"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def sample_config(self, index):
        seeds = SplitMix64(self.seed).raw(index + 1)
        seed = int(seeds[index])
        rng = SplitMix64(seed ^ _LAYOUT_SALT)
        base = SynthConfig(**self.template)
        n = base.n_patches
        lo, hi = self.sinks_per_sample
        n_sinks = lo + rng.below(hi - lo + 1) if self.sink_channels else 0
        sink_patches = rng.sample_distinct(range(n), n_sinks)
        sinks = []
        for p in sink_patches:
            ch = self.sink_channels[rng.below(len(self.sink_channels))]
            mag = float(rng.uniform(1, *self.sink_magnitude)[0])
            sinks.append((p, ch, mag))
        lo, hi = self.n_informative
        n_inf = lo + rng.below(hi - lo + 1)
        rest = [p for p in range(n) if p not in set(sink_patches)]
        informative = rng.sample_distinct(rest, min(n_inf, len(rest)))
        query_id = rng.below(self.n_queries)
        params = {**self.template, "seed": seed, "sinks": tuple(sinks), "informative_patches": tuple(informative),
                  "query_id": query_id, "sample_id": f"sample_{index:05d}"}
        return SynthConfig(**params)


def generate_corpus(cfg: CorpusConfig, count=None):
    count = cfg.count if count is None else count
    return [generate_sample(cfg.sample_config(i)) for i in range(count)]


def sink_absorption_report(sample, neurons, mode="cls"):
    """n_eff of the evaluator row over visual tokens before vs after register construction."""
    views = sample.cls_views(neurons) if mode == "cls" else sample.mutual_views(neurons)
    return absorption_neff(views, mode)


def masking_stability_experiment(sample, neurons, fraction=0.5):
    """Cosine similarity of the register row before vs after masking patches.

    Patches are ranked by post-register CLS score (ties by ascending index);
    the top and the bottom ``ceil(fraction * N)`` are masked in turn and the
    register is rebuilt from the surviving patches.
    """
    if not 0 < fraction < 1:
        raise ValidationError(f"fraction must be in (0, 1), got {fraction!r}")
    n = sample.n_visual
    n_mask = math.ceil(fraction * n)
    if n_mask >= n:
        raise ValidationError(f"masking {n_mask} of {n} patches leaves none")
    scores, _ = score_cls(sample.cls_views(neurons).post)
    ids = np.asarray(scores.token_ids)
    s = scores.scores
    top = ids[np.lexsort((ids, -s))][:n_mask]
    bottom = ids[np.lexsort((ids, s))][:n_mask]
    acts = sample.activations
    ref = construct_register(acts, neurons).register_row

    def after_masking(masked):
        keep = np.setdiff1d(np.arange(n), masked)
        return construct_register(acts[keep], neurons).register_row

    return cosine_similarity(ref, after_masking(top)), cosine_similarity(ref, after_masking(bottom))
