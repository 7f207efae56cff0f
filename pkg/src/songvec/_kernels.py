"""Numba inner loops for SGNS training.

The RNG is an explicit splitmix64 state carried in a 1-element uint64 array so
that training is bit-deterministic at workers=1 and resumable across chunk
calls. Parameter matrices are updated without synchronization (hogwild-style
benign races) when several worker threads share them.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_SM64_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM64_M1 = np.uint64(0xBF58476D1CE4E5B9)
_SM64_M2 = np.uint64(0x94D049BB133111EB)
_U64_INV = 1.0 / 18446744073709551616.0  # 2**-64


@njit(inline="always")
def _next_u64(state):
    state[0] = state[0] + _SM64_GAMMA
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * _SM64_M1
    z = (z ^ (z >> np.uint64(27))) * _SM64_M2
    return z ^ (z >> np.uint64(31))


@njit(inline="always")
def _next_float(state):
    return _next_u64(state) * _U64_INV


@njit(inline="always")
def _sample_negative(state, cum):
    u = _next_float(state) * cum[-1]
    return np.searchsorted(cum, u, side="right")


@njit(cache=True, nogil=True, fastmath=True)
def train_chunk(
    tokens,
    offsets,
    seq_ids,
    w_in,
    w_out,
    cum,
    window,
    n_neg,
    lr0,
    lr_floor_frac,
    schedule,
    pair_counts,
    worker,
    rng_state,
):
    """Run SGNS updates over a chunk of sequences; returns (loss_sum, n_pairs).

    tokens/offsets encode all training sequences; seq_ids selects this chunk.
    pair_counts is a shared per-worker counter used for the linear learning
    rate decay across all workers.
    """
    d = w_in.shape[1]
    loss_sum = 0.0
    n_pairs = 0
    for si in range(seq_ids.shape[0]):
        s = seq_ids[si]
        start = offsets[s]
        end = offsets[s + 1]
        n = end - start
        # learning rate from global progress, refreshed once per sequence
        done = np.int64(0)
        for t in range(pair_counts.shape[0]):
            done += pair_counts[t]
        frac = 1.0 - done / schedule
        if frac < lr_floor_frac:
            frac = lr_floor_frac
        lr = np.float32(lr0 * frac)
        seq_pairs = np.int64(0)
        for c in range(n):
            w = 1 + np.int64(_next_u64(rng_state) % np.uint64(window))
            lo = c - w
            if lo < 0:
                lo = 0
            hi = c + w
            if hi > n - 1:
                hi = n - 1
            center = tokens[start + c]
            for j in range(lo, hi + 1):
                if j == c:
                    continue
                context = tokens[start + j]
                # one gradient step on the pair loss with n_neg negatives
                work = np.zeros(d, dtype=np.float32)
                for k in range(n_neg + 1):
                    if k == 0:
                        target = context
                        label = np.float32(1.0)
                    else:
                        target = _sample_negative(rng_state, cum)
                        for _ in range(8):
                            if target != context:
                                break
                            target = _sample_negative(rng_state, cum)
                        label = np.float32(0.0)
                    f = np.float32(0.0)
                    for m in range(d):
                        f += w_in[center, m] * w_out[target, m]
                    # stable softplus for the loss; exact sigmoid for the step
                    ff = float(f)
                    if label > 0.5:
                        x = -ff
                    else:
                        x = ff
                    if x > 0.0:
                        loss_sum += x + np.log1p(np.exp(-x))
                    else:
                        loss_sum += np.log1p(np.exp(x))
                    if ff > 30.0:
                        sig = np.float32(1.0)
                    elif ff < -30.0:
                        sig = np.float32(0.0)
                    else:
                        sig = np.float32(1.0 / (1.0 + np.exp(-ff)))
                    g = (label - sig) * lr
                    for m in range(d):
                        work[m] += g * w_out[target, m]
                    for m in range(d):
                        w_out[target, m] += g * w_in[center, m]
                for m in range(d):
                    w_in[center, m] += work[m]
                seq_pairs += 1
        pair_counts[worker] += seq_pairs
        n_pairs += seq_pairs
    return loss_sum, n_pairs
