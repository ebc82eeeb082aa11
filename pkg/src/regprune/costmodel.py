"""Analytic KV-cache and prefill-length model."""

from dataclasses import asdict, dataclass

from .attn import ValidationError

MIB = 2**20


@dataclass(frozen=True)
class ModelShape:
    n_layers: int
    n_heads: int
    head_dim: int
    bytes_per_element: int = 2

    def __post_init__(self):
        for name in ("n_layers", "n_heads", "head_dim", "bytes_per_element"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValidationError(f"{name} must be a positive integer, got {v!r}")

    @property
    def bytes_per_token(self):
        # keys and values for every layer and head
        return 2 * self.n_layers * self.n_heads * self.head_dim * self.bytes_per_element


LLAVA_7B = ModelShape(32, 32, 128, 2)


def kv_bytes(shape: ModelShape, seq_len):
    if int(seq_len) != seq_len or seq_len < 0:
        raise ValidationError(f"seq_len must be a non-negative integer, got {seq_len!r}")
    return shape.bytes_per_token * int(seq_len)


def fit_text_length(pair_a, pair_b):
    """Solve ``mem = c * (K + M)`` through two (visual_tokens, memory) points.

    Returns ``(M, c)`` with ``c`` in the memory unit of the inputs per token.
    ``M`` absorbs every non-visual token in the sequence.
    """
    (k_a, mem_a), (k_b, mem_b) = pair_a, pair_b
    if k_a == k_b:
        raise ValidationError("the two points need distinct visual token counts")
    if mem_a <= 0 or mem_b <= 0:
        raise ValidationError("memories must be positive")
    c = (mem_a - mem_b) / (k_a - k_b)
    if c <= 0:
        raise ValidationError("memory must grow with the number of visual tokens")
    return mem_a / c - k_a, c


def speedup_estimate(n_visual, k_bar, text_len):
    """Prefill-length ratio ``(N + M) / (K + M)``."""
    if min(n_visual, k_bar, text_len) < 0:
        raise ValidationError("all arguments must be non-negative")
    denom = k_bar + text_len
    if denom <= 0:
        raise ValidationError("k_bar + text_len must be positive")
    return (n_visual + text_len) / denom


@dataclass(frozen=True)
class CostReport:
    kv_bytes_original: int
    kv_bytes_pruned: int
    prefill_len_original: float
    prefill_len_pruned: float
    kv_ratio: float
    prefill_ratio: float

    def to_dict(self):
        return asdict(self)


def cost_report(shape: ModelShape, n_visual, k_bar, text_len):
    """KV bytes and prefill lengths for the full and the pruned visual prefix.

    ``k_bar`` may be fractional (a corpus average); the byte count rounds
    the pruned sequence length to the nearest token.
    """
    orig_len = n_visual + text_len
    pruned_len = k_bar + text_len
    orig = kv_bytes(shape, int(round(orig_len)))
    pruned = kv_bytes(shape, int(round(pruned_len)))
    return CostReport(
        kv_bytes_original=orig,
        kv_bytes_pruned=pruned,
        prefill_len_original=float(orig_len),
        prefill_len_pruned=float(pruned_len),
        kv_ratio=orig / pruned if pruned else float("inf"),
        prefill_ratio=speedup_estimate(n_visual, k_bar, text_len),
    )
