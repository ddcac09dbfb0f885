"""Pure-Python MAP kernels.

Used when the compiled extension is unavailable.  Results are identical to
``imle._kernels`` for every finite input, including tie-breaking.
"""
import heapq

import numpy as np

# Fixed expansion order; part of the tie-breaking contract.
NEIGHBORS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


def topk_mask(theta, k):
    theta = np.asarray(theta, dtype=np.float64)
    order = np.argsort(-theta, kind="stable")
    mask = np.zeros(theta.shape[0], dtype=np.uint8)
    mask[order[:k]] = 1
    return mask


def dijkstra_grid(costs):
    """Minimum vertex-cost path from (0, 0) to (R-1, C-1), 8-connected.

    ``costs`` must be nonnegative.  The heap key is (distance, push counter),
    so equal distances pop in insertion order.
    """
    costs = np.ascontiguousarray(costs, dtype=np.float64)
    rows, cols = costs.shape
    n = rows * cols
    flat = costs.ravel().tolist()
    dist = [float("inf")] * n
    pred = [-1] * n
    done = [False] * n
    target = n - 1
    dist[0] = flat[0]
    heap = [(flat[0], 0, 0)]
    counter = 1
    while heap:
        d, _, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        if u == target:
            break
        r, c = divmod(u, cols)
        for dr, dc in NEIGHBORS:
            rr = r + dr
            cc = c + dc
            if rr < 0 or rr >= rows or cc < 0 or cc >= cols:
                continue
            v = rr * cols + cc
            if done[v]:
                continue
            nd = d + flat[v]
            if nd < dist[v]:
                dist[v] = nd
                pred[v] = u
                heapq.heappush(heap, (nd, counter, v))
                counter += 1
    mask = np.zeros(n, dtype=np.uint8)
    v = target
    while v != -1:
        mask[v] = 1
        v = pred[v]
    return mask.reshape(rows, cols)
