"""Algorithmic-task generators with exact big-integer / sort oracles.

Encodings are this package's convention: numbers are little-endian bit
strings over {BIT0, BIT1} with a SEP between operands, answers are
left-aligned at position 0 and zero-extended across the masked region,
and everything is padded with PAD (id 0) to the smallest admissible
power-of-two bucket.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .autodiff import ValidationError

PAD = 0
BIT0 = 1
BIT1 = 2
SEP = 3
ARITHMETIC_VOCAB = 4
SORT_ALPHABET = 12  # value symbols 1..A on top of PAD

TRAIN_BUCKETS = (8, 16, 32, 64)
EVAL_LENGTHS = (128, 256, 512, 1024, 2048, 4096)
TASKS = ("addition", "multiplication", "sorting")


@dataclass
class TaskExample:
    """One padded instance: token ids in, token ids out, 0/1 loss weights."""

    input_tokens: np.ndarray
    target_tokens: np.ndarray
    loss_mask: np.ndarray
    bucket: int


def stream_rng(seed, name, *extra):
    """Named, independent generator stream derived from one 64-bit seed."""
    key = (zlib.crc32(name.encode()),) + tuple(int(e) for e in extra)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=key))


def bucket_for_length(length, buckets=None):
    """Smallest admissible power of two >= length."""
    if buckets is None:
        buckets = TRAIN_BUCKETS
    for b in buckets:
        if length <= b:
            return b
    raise ValidationError(f"length {length} exceeds the largest bucket {buckets[-1]}")


def _bits_le(value, width=None):
    """Little-endian bit tokens of a nonnegative integer (0 encodes as one bit)."""
    bits = []
    v = int(value)
    while v:
        bits.append(BIT1 if v & 1 else BIT0)
        v >>= 1
    if not bits:
        bits.append(BIT0)
    if width is not None:
        bits.extend([BIT0] * (width - len(bits)))
    return bits


def decode_bits_le(tokens):
    """Inverse of _bits_le over a BIT0/BIT1 token run."""
    value = 0
    for i, t in enumerate(tokens):
        if t == BIT1:
            value |= 1 << i
        elif t != BIT0:
            raise ValidationError(f"non-bit token {t} in number field")
    return value


def _random_operand(rng, max_bits):
    """Uniform bit-length in 1..max_bits, then uniform bits at that length."""
    length = int(rng.integers(1, max_bits + 1))
    bits = rng.integers(0, 2, size=length)
    bits[-1] = 1 if length > 1 else bits[-1]  # keep the drawn length meaningful
    value = 0
    for i, b in enumerate(bits):
        value |= int(b) << i
    return value, length


def gen_addition(max_len, rng):
    """Two random binary numbers and their exact sum.

    Input [bits(a), SEP, bits(b)]; the target is the sum's little-endian
    bits zero-extended to the bucket, mask covering the whole padded
    output region.
    """
    if max_len < 8:
        raise ValidationError("max_len must be >= 8")
    max_bits = (max_len - 1) // 2
    a, la = _random_operand(rng, max_bits)
    b, lb = _random_operand(rng, max_bits)
    raw = _bits_le(a, la) + [SEP] + _bits_le(b, lb)
    return _arith_example(raw, a + b)


def gen_multiplication(max_len, rng):
    """As addition, with the exact product as the target."""
    if max_len < 8:
        raise ValidationError("max_len must be >= 8")
    max_bits = (max_len - 1) // 2
    a, la = _random_operand(rng, max_bits)
    b, lb = _random_operand(rng, max_bits)
    raw = _bits_le(a, la) + [SEP] + _bits_le(b, lb)
    return _arith_example(raw, a * b)


def _arith_example(raw_input, answer):
    bucket = bucket_for_length(len(raw_input), _all_buckets())
    inputs = np.full(bucket, PAD, dtype=np.int64)
    inputs[: len(raw_input)] = raw_input
    target = np.array(_bits_le(answer, bucket), dtype=np.int64)
    mask = np.ones(bucket, dtype=np.int64)
    return TaskExample(inputs, target, mask, bucket)


def gen_sorting(max_len, rng, alphabet=SORT_ALPHABET):
    """Random symbol sequence and its ascending sort; mask covers the sequence."""
    if max_len < 1:
        raise ValidationError("max_len must be >= 1")
    length = int(rng.integers(1, max_len + 1))
    values = rng.integers(1, alphabet + 1, size=length)
    bucket = bucket_for_length(length, _all_buckets())
    inputs = np.full(bucket, PAD, dtype=np.int64)
    inputs[:length] = values
    target = np.full(bucket, PAD, dtype=np.int64)
    target[:length] = np.sort(values)
    mask = np.zeros(bucket, dtype=np.int64)
    mask[:length] = 1
    return TaskExample(inputs, target, mask, bucket)


def _all_buckets():
    return tuple(1 << k for k in range(3, 25))


GENERATORS = {
    "addition": gen_addition,
    "multiplication": gen_multiplication,
    "sorting": gen_sorting,
}


def gen_example(task, max_len, rng, alphabet=SORT_ALPHABET):
    if task not in GENERATORS:
        raise ValidationError(f"unknown task {task!r}")
    if task == "sorting":
        return gen_sorting(max_len, rng, alphabet)
    return GENERATORS[task](max_len, rng)


def gen_for_bucket(task, bucket, rng, alphabet=SORT_ALPHABET):
    """Draw until the example's natural bucket is exactly `bucket`.

    This is what "train each example on the smallest instance it fits"
    means operationally: a bucket-b batch holds only examples whose raw
    length lands in (b/2, b].
    """
    while True:
        ex = gen_example(task, bucket, rng, alphabet)
        if ex.bucket == bucket:
            return ex


def pad_to_bucket(example, randomize_offset=False, rng=None, bucket=None):
    """Pad an example's arrays to the smallest admissible power-of-two bucket.

    The three arrays (any equal raw length) are placed as one unit, at
    offset 0 by default or at a uniform random offset with
    randomize_offset; the mask shifts identically with the content.
    """
    raw_len = len(example.input_tokens)
    target_bucket = bucket if bucket is not None else bucket_for_length(raw_len, _all_buckets())
    if raw_len > target_bucket:
        raise ValidationError(f"content of length {raw_len} does not fit bucket {target_bucket}")
    offset = 0
    if randomize_offset:
        if rng is None:
            raise ValidationError("randomize_offset needs an rng")
        offset = int(rng.integers(0, target_bucket - raw_len + 1))
    inputs = np.full(target_bucket, PAD, dtype=np.int64)
    target = np.full(target_bucket, PAD, dtype=np.int64)
    mask = np.zeros(target_bucket, dtype=np.int64)
    inputs[offset : offset + raw_len] = example.input_tokens
    target[offset : offset + raw_len] = example.target_tokens
    mask[offset : offset + raw_len] = example.loss_mask
    return TaskExample(inputs, target, mask, target_bucket)


def curriculum_schedule(step, total_steps, seed, buckets=TRAIN_BUCKETS):
    """Bucket to sample at `step`: all mass on the shortest bucket at step 0,
    linear ramp to uniform over the first 25% of the run.

    Pure function of (step, seed), so the schedule is reproducible from
    any point.
    """
    buckets = tuple(buckets)
    ramp = max(1, int(0.25 * total_steps))
    alpha = min(1.0, step / ramp)
    p = np.full(len(buckets), alpha / len(buckets))
    p[0] += 1.0 - alpha
    rng = stream_rng(seed, "curriculum", step)
    return int(rng.choice(buckets, p=p))


def batch_for_bucket(task, bucket, batch_size, rng, alphabet=SORT_ALPHABET):
    """Stack bucket-matched examples into [batch, bucket] arrays."""
    examples = [gen_for_bucket(task, bucket, rng, alphabet) for _ in range(batch_size)]
    inputs = np.stack([e.input_tokens for e in examples])
    targets = np.stack([e.target_tokens for e in examples])
    masks = np.stack([e.loss_mask for e in examples])
    return inputs, targets, masks


# --- Oracles (independent of the generators' encode path) ----------------

def oracle_check(task, example):
    """Recompute the target from the decoded input; True iff it matches."""
    if task == "sorting":
        length = int(example.loss_mask.sum())
        values = example.input_tokens[:length]
        expected = np.sort(values)
        return bool(np.array_equal(example.target_tokens[:length], expected))
    tokens = example.input_tokens
    sep = np.nonzero(tokens == SEP)[0]
    if sep.size != 1:
        return False
    s = int(sep[0])
    nonpad = np.nonzero(tokens != PAD)[0]
    end = int(nonpad[-1]) + 1
    a = decode_bits_le(tokens[:s])
    b = decode_bits_le(tokens[s + 1 : end])
    answer = a + b if task == "addition" else a * b
    expected = np.array(_bits_le(answer, example.bucket), dtype=np.int64)
    return bool(np.array_equal(example.target_tokens, expected))


# --- Fixture dump format: one example per line, tab-separated fields -----

def dump_examples(examples, path):
    """bucket TAB input tokens TAB target tokens TAB mask (space-separated)."""
    with open(path, "w") as fh:
        for e in examples:
            fields = [
                str(e.bucket),
                " ".join(map(str, e.input_tokens)),
                " ".join(map(str, e.target_tokens)),
                " ".join(map(str, e.loss_mask)),
            ]
            fh.write("\t".join(fields) + "\n")


def load_examples(path):
    out = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            bucket, inp, tgt, msk = line.rstrip("\n").split("\t")
            out.append(
                TaskExample(
                    np.array(inp.split(), dtype=np.int64),
                    np.array(tgt.split(), dtype=np.int64),
                    np.array(msk.split(), dtype=np.int64),
                    int(bucket),
                )
            )
    return out
