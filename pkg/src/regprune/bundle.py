"""Per-sample input bundles and their on-disk layout.

A bundle directory holds ``manifest.json`` plus one ``.atnb`` tensor per role:

* ``activations``            (N, C) encoder MLP activations
* ``encoder_attn_pre``       (H, N, N) mutual attention over visual tokens
* ``encoder_attn_post``      (H, N+1, N+1) mutual attention over V + register
* ``cls_row_pre``            (H, 1, N) CLS row before the register exists
* ``cls_row``                (H, 1, N+1) CLS row after register construction
* ``text_attn.layer<l>``     (H, M, |cols|) text rows over V + register + text
* ``encoder.key_proj`` / ``encoder.query_proj`` / ``encoder.cls_query``
  optional linear-encoder weights; when present the encoder maps are
  recomputed for whatever register neuron set the caller supplies.

Stored post-register maps correspond to ``register_channels`` in the manifest.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attn import CLS_ID, REGISTER_ID, AttentionMap, ValidationError, softmax_rows
from .register import RegisterNeuronSet, as_activation_matrix, construct_register
from .tensorio import read_tensor, write_tensor

MANIFEST = "manifest.json"
FORMAT_NAME = "regprune-bundle"
FORMAT_VERSION = 1


class BundleError(ValueError):
    """Malformed or inconsistent bundle."""


def _f32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


@dataclass(frozen=True, eq=False)
class LinearEncoder:
    """Single-layer attention whose keys and queries are linear in the activations.

    For head ``h``: ``key = x @ key_proj[h]``, CLS query ``cls_query[h]`` and
    token query ``cls_query[h] + x @ query_proj[h]``; logits are scaled by
    ``temperature`` before the softmax.
    """

    key_proj: np.ndarray
    query_proj: np.ndarray
    cls_query: np.ndarray
    temperature: float = 1.0

    def __post_init__(self):
        kp = np.asarray(self.key_proj, dtype=np.float64)
        qp = np.asarray(self.query_proj, dtype=np.float64)
        cq = np.asarray(self.cls_query, dtype=np.float64)
        if kp.ndim != 3 or qp.shape != kp.shape or cq.shape != (kp.shape[0], kp.shape[2]):
            raise ValidationError(
                f"inconsistent encoder shapes: key {kp.shape}, query {qp.shape}, cls {cq.shape}"
            )
        object.__setattr__(self, "key_proj", kp)
        object.__setattr__(self, "query_proj", qp)
        object.__setattr__(self, "cls_query", cq)

    @property
    def n_heads(self):
        return self.key_proj.shape[0]

    @property
    def n_channels(self):
        return self.key_proj.shape[1]

    def _tokens(self, patches, register_row):
        x = np.asarray(patches, dtype=np.float64)
        ids = tuple(range(x.shape[0]))
        if register_row is not None:
            x = np.vstack([x, np.asarray(register_row, dtype=np.float64)[None, :]])
            ids = ids + (REGISTER_ID,)
        return x, ids

    def cls_row(self, patches, register_row=None, ids=None):
        x, default_ids = self._tokens(patches, register_row)
        ids = default_ids if ids is None else ids
        rows = []
        for h in range(self.n_heads):
            logits = (x @ self.key_proj[h]) @ self.cls_query[h]
            rows.append(softmax_rows(logits[None, :], self.temperature).weights)
        return AttentionMap((CLS_ID,), ids, np.stack(rows))

    def mutual(self, patches, register_row=None, ids=None):
        x, default_ids = self._tokens(patches, register_row)
        ids = default_ids if ids is None else ids
        heads = []
        for h in range(self.n_heads):
            keys = x @ self.key_proj[h]
            queries = self.cls_query[h][None, :] + x @ self.query_proj[h]
            heads.append(softmax_rows(queries @ keys.T, self.temperature).weights)
        return AttentionMap(ids, ids, np.stack(heads))


@dataclass(frozen=True)
class EncoderViews:
    """Encoder attention before and after register construction."""

    pre: AttentionMap
    post: AttentionMap


@dataclass(eq=False)
class SampleBundle:
    sample_id: str
    activations: np.ndarray
    text_attn: dict
    text_tags: tuple = ()
    encoder: LinearEncoder = None
    stored: dict = field(default_factory=dict)
    register_channels: tuple = ()
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.activations = as_activation_matrix(self.activations)
        self.text_attn = {int(k): v for k, v in self.text_attn.items()}
        self.register_channels = tuple(sorted(int(c) for c in self.register_channels))
        if self.encoder is not None and self.encoder.n_channels != self.activations.shape[1]:
            raise BundleError("encoder channel count does not match activations")
        if self.text_attn:
            n_rows = {len(m.row_ids) for m in self.text_attn.values()}
            if len(n_rows) != 1:
                raise BundleError("text attention layers disagree on the number of text rows")
            if self.text_tags and len(self.text_tags) != n_rows.pop():
                raise BundleError("text_tags length does not match text rows")
        self._cache = {}

    @property
    def n_visual(self):
        return self.activations.shape[0]

    @property
    def visual_ids(self):
        return tuple(range(self.n_visual))

    @property
    def layers(self):
        return tuple(sorted(self.text_attn))

    def text_map(self, layer):
        m = self.text_attn[layer]
        if callable(m):
            m = m()
            self.text_attn[layer] = m
        return m

    def _stored(self, role):
        m = self.stored.get(role)
        if m is None:
            raise BundleError(f"bundle {self.sample_id} has no stored '{role}' map and no encoder weights")
        if callable(m):
            m = m()
            self.stored[role] = m
        return m

    def _check_stored_channels(self, neurons):
        wanted = tuple(sorted(neurons.channel_ids))
        if wanted != self.register_channels:
            raise BundleError(
                f"bundle {self.sample_id} stores post-register maps for channels "
                f"{list(self.register_channels)} but {list(wanted)} were requested, "
                "and it carries no encoder weights to recompute them"
            )

    def register(self, neurons):
        return construct_register(self.activations, neurons)

    def cls_views(self, neurons: RegisterNeuronSet):
        key = ("cls", neurons.channel_ids)
        if key not in self._cache:
            if self.encoder is not None:
                aug = self.register(neurons)
                views = EncoderViews(
                    self.encoder.cls_row(self.activations),
                    self.encoder.cls_row(aug.patch_activations, aug.register_row),
                )
            else:
                self._check_stored_channels(neurons)
                views = EncoderViews(self._stored("cls_row_pre"), self._stored("cls_row"))
            self._cache = {k: v for k, v in self._cache.items() if k[0] != "cls"}
            self._cache[key] = views
        return self._cache[key]

    def mutual_views(self, neurons: RegisterNeuronSet):
        key = ("mutual", neurons.channel_ids)
        if key not in self._cache:
            if self.encoder is not None:
                aug = self.register(neurons)
                views = EncoderViews(
                    self.encoder.mutual(self.activations),
                    self.encoder.mutual(aug.patch_activations, aug.register_row),
                )
            else:
                self._check_stored_channels(neurons)
                views = EncoderViews(self._stored("encoder_attn_pre"), self._stored("encoder_attn_post"))
            self._cache = {k: v for k, v in self._cache.items() if k[0] != "mutual"}
            self._cache[key] = views
        return self._cache[key]

    def text_attention(self, layer, visual_ids, rows="all"):
        """Text attention over ``visual_ids`` + register + text, renormalised.

        ``rows`` selects ``"all"`` text rows or only those tagged ``"query"``.
        """
        layer = int(layer)
        if layer not in self.text_attn:
            raise BundleError(
                f"bundle {self.sample_id} has no text attention for layer {layer}; "
                f"available layers: {list(self.layers)}"
            )
        m = self.text_map(layer)
        keep = set(int(v) for v in visual_ids)
        keep.add(REGISTER_ID)
        keep.update(c for c in m.col_ids if c <= CLS_ID)
        m = m.restrict_cols(keep)
        if rows == "query":
            if not self.text_tags:
                raise BundleError(f"bundle {self.sample_id} has no text row tags")
            tagged = [r for r, t in zip(m.row_ids, self.text_tags) if t == "query"]
            if not tagged:
                raise BundleError(f"bundle {self.sample_id} has no rows tagged 'query'")
            m = m.restrict_rows(tagged)
        elif rows != "all":
            raise ValidationError(f"rows must be 'all' or 'query', got {rows!r}")
        return m


# -- on-disk format ---------------------------------------------------------------


def _map_to_tensor(m):
    w = m.weights
    return w[None] if w.ndim == 2 else w


@dataclass(frozen=True)
class _LazyMap:
    """An attention map on disk, read on first call."""

    path: Path
    row_ids: tuple
    col_ids: tuple

    def __call__(self):
        return AttentionMap(self.row_ids, self.col_ids, read_tensor(self.path).astype(np.float64))


def _materialized(m):
    return m() if callable(m) else m


def write_bundle(bundle: SampleBundle, directory, neurons=None):
    """Write ``bundle`` under ``directory``.

    Stored encoder maps are materialised for ``neurons`` (default: the
    bundle's ``register_channels``).
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if neurons is None:
        neurons = RegisterNeuronSet.from_channels(bundle.register_channels)
    channels = sorted(neurons.channel_ids)
    tensors = {"activations": bundle.activations}
    if bundle.encoder is not None:
        cls_v = bundle.cls_views(neurons)
        mut_v = bundle.mutual_views(neurons)
        maps = {
            "cls_row_pre": cls_v.pre,
            "cls_row": cls_v.post,
            "encoder_attn_pre": mut_v.pre,
            "encoder_attn_post": mut_v.post,
        }
        tensors["encoder.key_proj"] = bundle.encoder.key_proj
        tensors["encoder.query_proj"] = bundle.encoder.query_proj
        tensors["encoder.cls_query"] = bundle.encoder.cls_query
    else:
        if tuple(channels) != bundle.register_channels:
            raise BundleError("cannot re-target stored maps without encoder weights")
        maps = {role: _materialized(m) for role, m in bundle.stored.items()}
    map_ids = {}
    for role, m in maps.items():
        tensors[role] = _map_to_tensor(m)
        map_ids[role] = {"rows": list(m.row_ids), "cols": list(m.col_ids)}
    text_ids = {}
    for layer in bundle.layers:
        m = bundle.text_map(layer)
        role = f"text_attn.layer{layer}"
        tensors[role] = _map_to_tensor(m)
        text_ids[role] = {"rows": list(m.row_ids), "cols": list(m.col_ids)}
    files = {}
    for role, arr in tensors.items():
        fname = f"{role}.atnb"
        write_tensor(arr, directory / fname)
        files[role] = fname
    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "sample_id": bundle.sample_id,
        "tensors": files,
        "visual_ids": list(bundle.visual_ids),
        "register_id": REGISTER_ID,
        "register_channels": channels,
        "layers": list(bundle.layers),
        "text_tags": list(bundle.text_tags),
        "map_ids": {**map_ids, **text_ids},
        "encoder": None if bundle.encoder is None else {"temperature": bundle.encoder.temperature},
        "provenance": bundle.metadata,
    }
    (directory / MANIFEST).write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return directory


def read_bundle(directory):
    directory = Path(directory)
    mpath = directory / MANIFEST
    if not mpath.is_file():
        raise BundleError(f"{mpath}: manifest not found")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise BundleError(f"{mpath}: invalid JSON ({exc})") from None
    if manifest.get("format") != FORMAT_NAME or manifest.get("version") != FORMAT_VERSION:
        raise BundleError(f"{mpath}: not a {FORMAT_NAME} v{FORMAT_VERSION} manifest")
    try:
        files = manifest["tensors"]
        map_ids = manifest.get("map_ids", {})

        def path_of(role):
            p = directory / files[role]
            if not p.is_file():
                raise BundleError(f"{p}: tensor file for role '{role}' missing")
            return p

        acts = read_tensor(path_of("activations")).astype(np.float64)
        if acts.ndim != 2 or len(manifest["visual_ids"]) != acts.shape[0]:
            raise BundleError(f"{directory}: visual_ids do not match activations shape {acts.shape}")
        if list(manifest["visual_ids"]) != list(range(acts.shape[0])):
            raise BundleError(f"{directory}: visual ids must be 0..N-1")
        encoder = None
        if manifest.get("encoder") is not None:
            encoder = LinearEncoder(
                read_tensor(path_of("encoder.key_proj")).astype(np.float64),
                read_tensor(path_of("encoder.query_proj")).astype(np.float64),
                read_tensor(path_of("encoder.cls_query")).astype(np.float64),
                float(manifest["encoder"]["temperature"]),
            )
        stored = {}
        for role in ("cls_row_pre", "cls_row", "encoder_attn_pre", "encoder_attn_post"):
            if role in files:
                ids = map_ids[role]
                stored[role] = _LazyMap(path_of(role), tuple(ids["rows"]), tuple(ids["cols"]))
        text = {}
        for layer in manifest["layers"]:
            role = f"text_attn.layer{layer}"
            ids = map_ids[role]
            text[int(layer)] = _LazyMap(path_of(role), tuple(ids["rows"]), tuple(ids["cols"]))
    except KeyError as exc:
        raise BundleError(f"{mpath}: missing manifest field {exc}") from None
    return SampleBundle(
        sample_id=manifest["sample_id"],
        activations=acts,
        text_attn=text,
        text_tags=tuple(manifest.get("text_tags", ())),
        encoder=encoder,
        stored=stored,
        register_channels=tuple(manifest.get("register_channels", ())),
        metadata=manifest.get("provenance", {}),
    )


def iter_bundle_dirs(path):
    """A bundle directory itself, or its immediate bundle subdirectories in name order."""
    path = Path(path)
    if not path.is_dir():
        raise BundleError(f"{path}: not a directory")
    if (path / MANIFEST).is_file():
        return [path]
    dirs = sorted(p for p in path.iterdir() if (p / MANIFEST).is_file())
    if not dirs:
        raise BundleError(f"{path}: no bundles found")
    return dirs


def read_corpus(path):
    return [read_bundle(d) for d in iter_bundle_dirs(path)]
