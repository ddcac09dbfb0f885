# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled MAP kernels (grid Dijkstra, top-k selection).

Mirror of ``imle._pykernels``; outputs must match it bit for bit.
"""
import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free, qsort
from libc.math cimport INFINITY

cnp.import_array()

cdef int[8] DR = [-1, -1, -1, 0, 0, 1, 1, 1]
cdef int[8] DC = [-1, 0, 1, -1, 1, -1, 0, 1]


cdef struct Keyed:
    double value
    Py_ssize_t index


cdef int _cmp_desc(const void* a, const void* b) noexcept nogil:
    cdef Keyed* x = <Keyed*>a
    cdef Keyed* y = <Keyed*>b
    if x.value > y.value:
        return -1
    if x.value < y.value:
        return 1
    if x.index < y.index:
        return -1
    if x.index > y.index:
        return 1
    return 0


# Above this length numpy's stable argsort beats qsort with a comparator.
cdef Py_ssize_t SMALL_TOPK = 64


def topk_mask(theta, Py_ssize_t k):
    cdef double[::1] t = np.ascontiguousarray(theta, dtype=np.float64)
    cdef Py_ssize_t m = t.shape[0]
    if m > SMALL_TOPK:
        out = np.zeros(m, dtype=np.uint8)
        out[np.argsort(-np.asarray(t), kind="stable")[:k]] = 1
        return out
    cdef Py_ssize_t i
    out = np.zeros(m, dtype=np.uint8)
    cdef cnp.uint8_t[::1] o = out
    cdef Keyed* buf = <Keyed*>malloc(m * sizeof(Keyed))
    if buf == NULL:
        raise MemoryError()
    try:
        for i in range(m):
            buf[i].value = t[i]
            buf[i].index = i
        qsort(buf, m, sizeof(Keyed), _cmp_desc)
        for i in range(k):
            o[buf[i].index] = 1
    finally:
        free(buf)
    return out


# Binary min-heap keyed on (dist, seq); seq is unique so pops are total-ordered.
cdef struct Entry:
    double dist
    long seq
    Py_ssize_t node


cdef inline bint _less(Entry a, Entry b) noexcept nogil:
    return a.dist < b.dist or (a.dist == b.dist and a.seq < b.seq)


cdef void _push(Entry* heap, Py_ssize_t* size, Entry e) noexcept nogil:
    cdef Py_ssize_t i = size[0]
    cdef Py_ssize_t parent
    size[0] += 1
    while i > 0:
        parent = (i - 1) >> 1
        if _less(e, heap[parent]):
            heap[i] = heap[parent]
            i = parent
        else:
            break
    heap[i] = e


cdef Entry _pop(Entry* heap, Py_ssize_t* size) noexcept nogil:
    cdef Entry top = heap[0]
    cdef Entry last
    cdef Py_ssize_t i = 0, child
    size[0] -= 1
    if size[0] > 0:
        last = heap[size[0]]
        while True:
            child = 2 * i + 1
            if child >= size[0]:
                break
            if child + 1 < size[0] and _less(heap[child + 1], heap[child]):
                child += 1
            if _less(heap[child], last):
                heap[i] = heap[child]
                i = child
            else:
                break
        heap[i] = last
    return top


def dijkstra_grid(costs):
    cdef double[:, ::1] c = np.ascontiguousarray(costs, dtype=np.float64)
    cdef Py_ssize_t rows = c.shape[0], cols = c.shape[1]
    cdef Py_ssize_t n = rows * cols, target = n - 1
    cdef Py_ssize_t u, v, r, cc, rr, ccc, j, size = 0
    cdef long counter = 1
    cdef double nd, du
    cdef Entry e
    dist_arr = np.full(n, INFINITY, dtype=np.float64)
    pred_arr = np.full(n, -1, dtype=np.intp)
    done_arr = np.zeros(n, dtype=np.uint8)
    cdef double[::1] dist = dist_arr
    cdef Py_ssize_t[::1] pred = pred_arr
    cdef cnp.uint8_t[::1] done = done_arr
    # Each node is pushed at most once per strict improvement; 8 per node bounds it.
    cdef Entry* heap = <Entry*>malloc((8 * n + 1) * sizeof(Entry))
    if heap == NULL:
        raise MemoryError()
    try:
        with nogil:
            dist[0] = c[0, 0]
            e.dist = c[0, 0]
            e.seq = 0
            e.node = 0
            _push(heap, &size, e)
            while size > 0:
                e = _pop(heap, &size)
                u = e.node
                du = e.dist
                if done[u]:
                    continue
                done[u] = 1
                if u == target:
                    break
                r = u // cols
                cc = u - r * cols
                for j in range(8):
                    rr = r + DR[j]
                    ccc = cc + DC[j]
                    if rr < 0 or rr >= rows or ccc < 0 or ccc >= cols:
                        continue
                    v = rr * cols + ccc
                    if done[v]:
                        continue
                    nd = du + c[rr, ccc]
                    if nd < dist[v]:
                        dist[v] = nd
                        pred[v] = u
                        e.dist = nd
                        e.seq = counter
                        e.node = v
                        counter += 1
                        _push(heap, &size, e)
    finally:
        free(heap)
    mask = np.zeros(n, dtype=np.uint8)
    v = target
    while v != -1:
        mask[v] = 1
        v = pred[v]
    return mask.reshape(rows, cols)
