"""Compiled inner loops for playing out first-meeting schedules.

Random game outcomes are drawn from a pool of pre-generated 53-bit integers
with rejection, giving an exactly uniform integer in ``[0, s)`` without
floating point.  A pool that runs dry reports ``EXHAUSTED`` and the caller
retries with a larger pool.
"""

import numpy as np
from numba import njit

OK = 0
EXHAUSTED = 1

# checker codes
CHECK_OK = 0
CHECK_CONSERVATION = 1
CHECK_BANKRUPTCY = 2
CHECK_ANTICLIQUE = 3
CHECK_REPLAY = 4

WORD_SPAN = 1 << 53


@njit(nogil=True, cache=True)
def _bounded(words, pos, s):
    limit = WORD_SPAN - (WORD_SPAN % s)
    while pos < words.size:
        u = words[pos]
        pos += 1
        if u < limit:
            return u % s, pos
    return -1, pos


@njit(nogil=True, cache=True)
def play(ei, ej, times, order, x, rank, use_rank, words, out_t, out_w, out_l, out_a):
    """Scan events ``order[0], order[1], ...``; mutate fortunes ``x`` in place.

    Direct rule (``use_rank`` false): the pair's lower-index agent ``a`` wins
    iff a uniform integer in ``[0, x[a] + x[b])`` is below ``x[a]``.
    Ranked rule: the agent with smaller ``rank`` wins.
    Returns ``(number of effective games, status)``.
    """
    count = 0
    pos = 0
    for q in range(order.size):
        k = order[q]
        a = ei[k]
        b = ej[k]
        xa = x[a]
        xb = x[b]
        if xa == 0 or xb == 0:
            continue
        if use_rank:
            a_wins = rank[a] < rank[b]
        else:
            v, pos = _bounded(words, pos, xa + xb)
            if v < 0:
                return count, EXHAUSTED
            a_wins = v < xa
        if a_wins:
            w = a
            l = b
        else:
            w = b
            l = a
        out_t[count] = times[k]
        out_w[count] = w
        out_l[count] = l
        out_a[count] = x[l]
        x[w] += x[l]
        x[l] = 0
        count += 1
    return count, OK


@njit(nogil=True, cache=True)
def play_batch(ei, ej, times, order, x0, ranks, use_rank, words,
               traj_t, traj_w, traj_l, traj_a, counts, final, status):
    for r in range(times.shape[0]):
        x = x0.copy()
        c, s = play(ei, ej, times[r], order[r], x, ranks[r], use_rank, words[r],
                    traj_t[r], traj_w[r], traj_l[r], traj_a[r])
        counts[r] = c
        status[r] = s
        final[r, :] = x


@njit(nogil=True, cache=True)
def check_batch(ei, ej, x0, traj_w, traj_l, traj_a, counts, final):
    """Replay each trajectory independently of the playing loop and audit it."""
    R = counts.size
    codes = np.zeros(R, dtype=np.int64)
    total = x0.sum()
    for r in range(R):
        x = x0.copy()
        code = CHECK_OK
        for q in range(counts[r]):
            w = traj_w[r, q]
            l = traj_l[r, q]
            if w == l or x[w] <= 0 or x[l] <= 0 or traj_a[r, q] != x[l]:
                code = CHECK_BANKRUPTCY
                break
            x[w] += x[l]
            x[l] = 0
        if code == CHECK_OK and x.sum() != total:
            code = CHECK_CONSERVATION
        if code == CHECK_OK and final[r].sum() != total:
            code = CHECK_CONSERVATION
        if code == CHECK_OK:
            for k in range(x.size):
                if x[k] != final[r, k]:
                    code = CHECK_REPLAY
                    break
        if code == CHECK_OK:
            for k in range(ei.size):
                if final[r, ei[k]] > 0 and final[r, ej[k]] > 0:
                    code = CHECK_ANTICLIQUE
                    break
        codes[r] = code
    return codes


@njit(nogil=True, cache=True)
def fortunes_at_batch(x0, traj_t, traj_w, traj_l, counts, t):
    R = counts.size
    out = np.empty((R, x0.size), dtype=np.int64)
    for r in range(R):
        x = x0.copy()
        for q in range(counts[r]):
            if traj_t[r, q] > t:
                break
            w = traj_w[r, q]
            l = traj_l[r, q]
            x[w] += x[l]
            x[l] = 0
        out[r, :] = x
    return out


@njit(nogil=True, cache=True)
def agent_at_batch(x0, traj_t, traj_w, traj_l, counts, t, agent):
    """Fortune of one agent at time ``t`` in every replicate."""
    R = counts.size
    out = np.empty(R, dtype=np.int64)
    for r in range(R):
        x = x0.copy()
        for q in range(counts[r]):
            if traj_t[r, q] > t:
                break
            w = traj_w[r, q]
            l = traj_l[r, q]
            x[w] += x[l]
            x[l] = 0
        out[r] = x[agent]
    return out
