# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops; semantics identical to ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free

cnp.import_array()

ctypedef cnp.int64_t i64


def coalesce_chains(const i64[:] group, const i64[:] msg, const i64[:] t, double delta_t):
    cdef Py_ssize_t n = t.shape[0]
    out = np.empty(n, dtype=np.int64)
    cdef i64[:] chain = out
    cdef Py_ssize_t i = 0, first
    cdef i64 latest
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
    return out


def first_successor(const i64[:] part, const i64[:] gpu, const i64[:] t, double delta_t, bint same_gpu):
    cdef Py_ssize_t n = t.shape[0]
    out = np.full(n, -1, dtype=np.int64)
    cdef i64[:] succ = out
    cdef Py_ssize_t i, j
    for i in range(n):
        j = i + 1
        while j < n and part[j] == part[i] and t[j] - t[i] <= delta_t:
            if (gpu[j] == gpu[i]) == same_gpu:
                succ[i] = j
                break
            j += 1
    return out


def sim_tick(const i64[:] cells, const i64[:] durations, i64 n_ticks, i64 job_nodes, i64 spares):
    cdef Py_ssize_t m = cells.shape[0]
    cdef char *occupied = <char *> malloc(job_nodes * sizeof(char))
    cdef i64 *empty = <i64 *> malloc(job_nodes * sizeof(i64))
    cdef i64 *returns = <i64 *> malloc((n_ticks + 1) * sizeof(i64))
    if occupied == NULL or empty == NULL or returns == NULL:
        free(occupied); free(empty); free(returns)
        raise MemoryError()
    cdef i64 n_empty = 0, pool = spares, up = 0, failures = 0
    cdef i64 tick, slot, back, limit
    cdef Py_ssize_t c = 0, k
    try:
        for k in range(job_nodes):
            occupied[k] = 1
        for k in range(n_ticks + 1):
            returns[k] = 0
        for tick in range(n_ticks):
            pool += returns[tick]
            while n_empty > 0 and pool > 0:
                n_empty -= 1
                occupied[empty[n_empty]] = 1
                pool -= 1
            limit = (tick + 1) * job_nodes
            while c < m and cells[c] < limit:
                slot = cells[c] - tick * job_nodes
                if occupied[slot]:
                    failures += 1
                    back = tick + durations[c]
                    if back < n_ticks:
                        returns[back] += 1
                    if pool > 0:
                        pool -= 1
                    else:
                        occupied[slot] = 0
                        empty[n_empty] = slot
                        n_empty += 1
                c += 1
            if n_empty == 0:
                up += 1
    finally:
        free(occupied); free(empty); free(returns)
    return up, failures


cdef inline void _heap_push(double *heap, Py_ssize_t *size, double value) noexcept nogil:
    cdef Py_ssize_t i = size[0], parent
    size[0] += 1
    while i > 0:
        parent = (i - 1) >> 1
        if heap[parent] <= value:
            break
        heap[i] = heap[parent]
        i = parent
    heap[i] = value


cdef inline double _heap_pop(double *heap, Py_ssize_t *size) noexcept nogil:
    cdef double top = heap[0]
    cdef double last
    cdef Py_ssize_t i = 0, child, n
    size[0] -= 1
    n = size[0]
    if n == 0:
        return top
    last = heap[n]
    while True:
        child = 2 * i + 1
        if child >= n:
            break
        if child + 1 < n and heap[child + 1] < heap[child]:
            child += 1
        if last <= heap[child]:
            break
        heap[i] = heap[child]
        i = child
    heap[i] = last
    return top


def sim_event(const double[:] times, const i64[:] slots, const double[:] durations,
              double horizon, i64 job_nodes, i64 spares):
    cdef Py_ssize_t m = times.shape[0]
    cdef char *occupied = <char *> malloc(job_nodes * sizeof(char))
    cdef i64 *empty = <i64 *> malloc(job_nodes * sizeof(i64))
    cdef double *heap = <double *> malloc((m + 1) * sizeof(double))
    if occupied == NULL or empty == NULL or heap == NULL:
        free(occupied); free(empty); free(heap)
        raise MemoryError()
    cdef Py_ssize_t hsize = 0, c, k
    cdef i64 n_empty = 0, pool = spares, failures = 0, slot
    cdef double downtime = 0.0, down_since = -1.0, tc, back, until
    try:
        for k in range(job_nodes):
            occupied[k] = 1
        for c in range(m + 1):
            if c < m:
                tc = times[c]
                until = tc if tc < horizon else horizon
            else:
                until = horizon
            while hsize > 0 and heap[0] <= until:
                back = _heap_pop(heap, &hsize)
                pool += 1
                if n_empty > 0:
                    n_empty -= 1
                    occupied[empty[n_empty]] = 1
                    pool -= 1
                    if n_empty == 0:
                        downtime += back - down_since
                        down_since = -1.0
            if c == m or tc >= horizon:
                break
            slot = slots[c]
            if occupied[slot]:
                failures += 1
                _heap_push(heap, &hsize, tc + durations[c])
                if pool > 0:
                    pool -= 1
                else:
                    if n_empty == 0:
                        down_since = tc
                    occupied[slot] = 0
                    empty[n_empty] = slot
                    n_empty += 1
        if n_empty > 0:
            downtime += horizon - down_since
    finally:
        free(occupied); free(empty); free(heap)
    return horizon - downtime, failures
