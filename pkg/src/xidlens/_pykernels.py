"""Pure-Python inner loops. ``_kernels.pyx`` mirrors these line for line.

All inputs are 1-D numpy arrays already ordered by the caller; outputs are
numpy arrays or plain tuples so both backends are interchangeable.
"""

import heapq

import numpy as np


def coalesce_chains(group, msg, t, delta_t):
    """Chain id (index of the chain's first event) for each event.

    Events must be ordered by group, then time. Within a group a chain absorbs
    the next event only if its message equals the chain's first message and it
    lies within ``delta_t`` of the latest absorbed event.
    """
    group = group.tolist()
    msg = msg.tolist()
    t = t.tolist()
    n = len(t)
    chain = [0] * n
    i = 0
    while i < n:
        first = i
        latest = t[i]
        chain[i] = first
        while i + 1 < n and group[i + 1] == group[first]:
            if msg[i + 1] == msg[first] and t[i + 1] - latest <= delta_t:
                latest = t[i + 1]
                i += 1
                chain[i] = first
            else:
                break
        i += 1
    return np.asarray(chain, dtype=np.int64)


def first_successor(part, gpu, t, delta_t, same_gpu):
    """Index of the first later event in the same partition within ``delta_t``.

    With ``same_gpu`` the successor must be on the same GPU, otherwise on a
    different one. -1 marks a terminal event.
    """
    part = part.tolist()
    gpu = gpu.tolist()
    t = t.tolist()
    n = len(t)
    succ = [-1] * n
    for i in range(n):
        j = i + 1
        while j < n and part[j] == part[i] and t[j] - t[i] <= delta_t:
            if (gpu[j] == gpu[i]) == same_gpu:
                succ[i] = j
                break
            j += 1
    return np.asarray(succ, dtype=np.int64)


def sim_tick(cells, durations, n_ticks, job_nodes, spares):
    """Discrete-time gang-job simulation.

    ``cells`` holds sorted flattened ``tick * job_nodes + slot`` failure
    candidates; a candidate only counts if the slot is occupied. A failed node
    is away for ``durations[c]`` ticks and then joins the spare pool.
    Returns ``(up_ticks, failures)``.
    """
    cells = cells.tolist()
    durations = durations.tolist()
    m = len(cells)
    occupied = [True] * job_nodes
    empty = []
    pool = spares
    returns = [0] * (n_ticks + 1)
    c = 0
    up = 0
    failures = 0
    for tick in range(n_ticks):
        pool += returns[tick]
        while empty and pool:
            occupied[empty.pop()] = True
            pool -= 1
        limit = (tick + 1) * job_nodes
        while c < m and cells[c] < limit:
            slot = cells[c] - tick * job_nodes
            if occupied[slot]:
                failures += 1
                back = tick + durations[c]
                if back < n_ticks:
                    returns[back] += 1
                if pool:
                    pool -= 1
                else:
                    occupied[slot] = False
                    empty.append(slot)
            c += 1
        if not empty:
            up += 1
    return up, failures


def sim_event(times, slots, durations, horizon, job_nodes, spares):
    """Continuous-time gang-job simulation; returns ``(uptime, failures)``.

    ``times`` are sorted failure candidates on ``[0, horizon)`` for the given
    ``slots``; swaps onto spare nodes are instantaneous.
    """
    times = times.tolist()
    slots = slots.tolist()
    durations = durations.tolist()
    occupied = [True] * job_nodes
    empty = []
    pool = spares
    heap = []
    failures = 0
    downtime = 0.0
    down_since = -1.0

    def release(until):
        nonlocal pool, downtime, down_since
        while heap and heap[0] <= until:
            back = heapq.heappop(heap)
            pool += 1
            if empty:
                occupied[empty.pop()] = True
                pool -= 1
                if not empty:
                    downtime += back - down_since
                    down_since = -1.0

    for c in range(len(times)):
        tc = times[c]
        if tc >= horizon:
            break
        release(tc)
        slot = slots[c]
        if occupied[slot]:
            failures += 1
            heapq.heappush(heap, tc + durations[c])
            if pool:
                pool -= 1
            else:
                if not empty:
                    down_since = tc
                occupied[slot] = False
                empty.append(slot)
    release(horizon)
    if empty:
        downtime += horizon - down_since
    return horizon - downtime, failures
