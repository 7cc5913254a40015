"""Slow, obviously-correct reference implementations used as test oracles."""

from xidlens.records import ErrorRecord


def rec(t, node="n1", gpu="0000:07:00", xid=48, msg="dbe", pattern=None, category="memory"):
    return ErrorRecord(t, node, gpu, xid, pattern or f"xid{xid}", msg, category)


def brute_coalesce(events, delta_t):
    """Enumerate every maximal chain of each group's events, O(n^2) per group.

    A run i..j of consecutive group events is a chain when every message
    equals the first one and every adjacent gap is at most delta_t. Every
    chain is tested for maximality, i.e. that it cannot grow on either side.
    Returns (start, last, occurrences, first input index) tuples.
    """
    groups = {}
    for idx, e in enumerate(events):
        groups.setdefault((e.node_id, e.gpu_id, e.pattern_id), []).append(idx)

    def joins(seq, a, b):
        # event b may follow event a inside a chain that starts at or before a
        ea, eb = events[seq[a]], events[seq[b]]
        return ea.message == eb.message and eb.timestamp - ea.timestamp <= delta_t

    out = []
    for seq in groups.values():
        n = len(seq)
        for i in range(n):
            left_open = i > 0 and joins(seq, i - 1, i)
            for j in range(i, n):
                if j > i and not joins(seq, j - 1, j):
                    break
                right_open = j + 1 < n and joins(seq, j, j + 1)
                if not left_open and not right_open:
                    out.append((events[seq[i]].timestamp, events[seq[j]].timestamp, j - i + 1, seq[i]))
    out.sort(key=lambda x: (x[0], x[3]))
    return out


def brute_successors(items, delta_t, same_gpu):
    """First later item (by list position) in scope within delta_t, or None."""
    out = []
    for i, (node, gpu, t) in enumerate(items):
        hit = None
        for j in range(i + 1, len(items)):
            n2, g2, t2 = items[j]
            if n2 == node and (g2 == gpu) == same_gpu and 0 <= t2 - t <= delta_t:
                hit = j
                break
        out.append(hit)
    return out
