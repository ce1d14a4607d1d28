# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled episode kernel.

Mirrors the policy objects in ``cachebandit.policies`` operation for
operation so both backends produce identical traces for the same streams.
The arm statistics arrays of the policy object are updated in place.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport ceil, log, pow, sqrt
from libc.stdint cimport int32_t, int64_t, uint8_t

from .policies import EpsilonGreedy, FixedPolicy, IndexPolicy, MyopicPolicy, SwitchingSchedule
from .spo import CacheContent

cnp.import_array()

cdef enum:
    K_FIXED = 0
    K_INDEX = 1
    K_EPS = 2
    K_MYOPIC = 3

cdef enum:
    S_EVERY = 0
    S_CONSTANT = 1
    S_SQRT = 2


cdef inline bint _before(double[:] v, int64_t a, int64_t b) noexcept nogil:
    # a comes before b: larger value first, lower index on ties
    return v[a] > v[b] or (v[a] == v[b] and a < b)


cdef void _sift_down(int64_t[:] heap, int64_t n, int64_t i, double[:] v) noexcept nogil:
    cdef int64_t child, tmp
    while True:
        child = 2 * i + 1
        if child >= n:
            return
        if child + 1 < n and _before(v, heap[child + 1], heap[child]):
            child += 1
        if _before(v, heap[child], heap[i]):
            tmp = heap[i]
            heap[i] = heap[child]
            heap[child] = tmp
            i = child
        else:
            return


cdef class EpisodeKernel:
    cdef public object policy
    cdef object rng
    cdef public int64_t t
    cdef int kind
    cdef int64_t F, capacity, U, used
    cdef int64_t[:] sizes
    cdef double[:] theta_hat
    cdef int64_t[:] plays
    cdef uint8_t[:] in_cache
    cdef uint8_t[:] next_cache
    cdef uint8_t[:] target
    cdef int64_t[:] last_hit
    cdef double[:] values
    cdef int64_t[:] heap
    cdef double[:, :] best
    # index policies
    cdef int sched_kind
    cdef int64_t sched_n, sched_b, L
    cdef double gamma
    cdef bint modified, exact, skip_blockers
    cdef double scale, mean_users
    # epsilon / myopic
    cdef double epsilon
    cdef int64_t delta
    name = "compiled"

    def __init__(self, policy, rng):
        self.policy = policy
        self.rng = rng
        cat = policy.catalog
        self.F = cat.num_files
        self.capacity = cat.capacity
        self.U = cat.max_users
        self.sizes = np.ascontiguousarray(cat.size_array, dtype=np.int64)
        self.theta_hat = policy.stats.theta_hat
        self.plays = policy.stats.plays
        self.in_cache = policy.cache.mask(self.F).astype(np.uint8)
        self.next_cache = np.zeros(self.F, dtype=np.uint8)
        self.used = policy.cache.used
        self.values = np.zeros(self.F, dtype=np.float64)
        self.heap = np.zeros(self.F, dtype=np.int64)
        self.last_hit = np.zeros(self.F, dtype=np.int64)
        self.t = policy.t
        spec = policy.spec
        self.exact = spec.solver == "exact"
        self.skip_blockers = spec.skip_blockers
        if self.exact:
            self.best = np.zeros((self.F + 1, self.capacity + 1), dtype=np.float64)
        if isinstance(policy, IndexPolicy):
            self.kind = K_INDEX
            sched = policy.schedule
            self.sched_kind = {"every": S_EVERY, "constant": S_CONSTANT, "sqrt": S_SQRT}[sched.kind]
            self.sched_n = sched.n
            self.sched_b = sched.b
            self.L = sched.L
            self.gamma = sched.gamma
            self.modified = policy.modified
            if self.modified:
                self.scale = pow(<double>self.F, -<double>policy.rho)
                self.mean_users = policy.mean_users
        elif isinstance(policy, EpsilonGreedy):
            self.kind = K_EPS
            self.epsilon = spec.epsilon
            self.delta = policy.delta
        elif isinstance(policy, MyopicPolicy):
            self.kind = K_MYOPIC
            self.delta = policy.delta
            self.last_hit = policy.last_hit
        elif isinstance(policy, FixedPolicy):
            self.kind = K_FIXED
            self.target = policy.target.mask(self.F).astype(np.uint8)
        else:
            raise TypeError(f"no compiled kernel for {type(policy).__name__}")

    # -- solvers ------------------------------------------------------------

    cdef void _greedy(self) noexcept:
        cdef int64_t F = self.F, n = self.F, i, f, used = 0
        cdef double[:] v = self.values
        cdef int64_t[:] heap = self.heap
        for i in range(F):
            heap[i] = i
            self.next_cache[i] = 0
        i = F // 2 - 1
        while i >= 0:
            _sift_down(heap, n, i, v)
            i -= 1
        while n > 0:
            f = heap[0]
            n -= 1
            heap[0] = heap[n]
            _sift_down(heap, n, 0, v)
            if used + self.sizes[f] > self.capacity:
                if self.skip_blockers:
                    continue
                break
            self.next_cache[f] = 1
            used += self.sizes[f]

    cdef void _exact(self) noexcept:
        cdef int64_t F = self.F, M = self.capacity, i, c, s
        cdef double[:, :] best = self.best
        cdef double take, skip
        for c in range(M + 1):
            best[F, c] = 0.0
        i = F - 1
        while i >= 0:
            s = self.sizes[i]
            for c in range(M + 1):
                skip = best[i + 1, c]
                if s <= c:
                    take = best[i + 1, c - s] + self.values[i]
                    best[i, c] = take if take > skip else skip
                else:
                    best[i, c] = skip
            i -= 1
        c = M
        for i in range(F):
            self.next_cache[i] = 0
            s = self.sizes[i]
            if s <= c and best[i + 1, c - s] + self.values[i] >= best[i + 1, c]:
                self.next_cache[i] = 1
                c -= s

    cdef void _solve(self) noexcept:
        cdef int64_t f
        if self.exact:
            # values become S_f * theta_f for the DP
            for f in range(self.F):
                self.values[f] = <double>self.sizes[f] * self.values[f]
            self._exact()
        else:
            self._greedy()

    cdef void _random_fill(self, object perm_obj, int64_t used, bint exclude_current):
        cdef int64_t[:] perm = np.asarray(perm_obj, dtype=np.int64)
        cdef int64_t k, f
        for k in range(self.F):
            f = perm[k]
            if exclude_current and self.in_cache[f]:
                continue
            if used + self.sizes[f] > self.capacity:
                break
            self.next_cache[f] = 1
            used += self.sizes[f]

    # -- decisions ----------------------------------------------------------

    cdef bint _decide(self, int64_t t):
        cdef int64_t f, used
        cdef double numer, denom
        if self.kind == K_FIXED:
            if t != 1:
                return False
            for f in range(self.F):
                self.next_cache[f] = self.target[f]
            return True
        if self.kind == K_INDEX:
            if t <= self.F:
                for f in range(self.F):
                    self.next_cache[f] = 0
                self.next_cache[t - 1] = 1
                return True
            if t != self.sched_n:
                return False
            if self.sched_kind == S_EVERY:
                self.sched_n += 1
            elif self.sched_kind == S_CONSTANT:
                self.sched_n += self.L
            else:
                self.sched_n += <int64_t>ceil(self.gamma * sqrt(<double>self.sched_n))
            self.sched_b += 1
            if self.modified:
                numer = 3.0 * log(self.mean_users * <double>t)
                for f in range(self.F):
                    denom = 2.0 * self.mean_users * <double>self.plays[f]
                    self.values[f] = self.theta_hat[f] + self.scale * sqrt(numer / denom)
            else:
                numer = 3.0 * log(<double>t)
                for f in range(self.F):
                    self.values[f] = self.theta_hat[f] + sqrt(numer / (2.0 * <double>self.plays[f]))
            self._solve()
            return True
        if self.kind == K_EPS:
            if t != 1:
                if (t - 1) % self.delta:
                    return False
                if not (self.rng.random() < self.epsilon):
                    for f in range(self.F):
                        self.values[f] = self.theta_hat[f]
                    self._solve()
                    return True
            for f in range(self.F):
                self.next_cache[f] = 0
            self._random_fill(self.rng.permutation(self.F), 0, False)
            return True
        # myopic
        if t == 1:
            for f in range(self.F):
                self.next_cache[f] = 0
            self._random_fill(self.rng.permutation(self.F), 0, False)
            return True
        if (t - 1) % self.delta:
            return False
        used = 0
        for f in range(self.F):
            if self.in_cache[f] and self.last_hit[f] >= t - self.delta:
                self.next_cache[f] = 1
                used += self.sizes[f]
            else:
                self.next_cache[f] = 0
        self._random_fill(self.rng.permutation(self.F), used, True)
        return True

    # -- episode ------------------------------------------------------------

    def run_block(self, counts_obj, users_obj):
        cdef int32_t[:, :] counts = np.ascontiguousarray(counts_obj, dtype=np.int32)
        cdef int64_t B = counts.shape[0], F = self.F, i, f, c, T
        out_mask_arr = np.zeros((B, F), dtype=np.uint8)
        reward_arr = np.zeros(B, dtype=np.int64)
        cost_arr = np.zeros(B, dtype=np.int64)
        requested_arr = np.zeros(B, dtype=np.int64)
        used_arr = np.zeros(B, dtype=np.int64)
        switched_arr = np.zeros(B, dtype=np.int64)
        cdef uint8_t[:, :] out_mask = out_mask_arr
        cdef int64_t[:] reward = reward_arr, cost = cost_arr, requested = requested_arr
        cdef int64_t[:] used_out = used_arr, switched = switched_arr
        cdef int64_t r, q, k, n_sw, used
        cdef double sample, denomU = <double>self.U
        cdef bint changed
        for i in range(B):
            self.t += 1
            changed = self._decide(self.t)
            k = 0
            n_sw = 0
            if changed:
                used = 0
                for f in range(F):
                    if self.next_cache[f]:
                        used += self.sizes[f]
                        if not self.in_cache[f]:
                            k += self.sizes[f]
                            n_sw += 1
                    self.in_cache[f] = self.next_cache[f]
                self.used = used
            cost[i] = k
            switched[i] = n_sw
            used_out[i] = self.used
            r = 0
            q = 0
            for f in range(F):
                c = counts[i, f]
                q += c * self.sizes[f]
                out_mask[i, f] = self.in_cache[f]
                if self.in_cache[f]:
                    r += c * self.sizes[f]
                    if self.U > 0:
                        sample = <double>c / denomU
                    else:
                        sample = 0.0
                    T = self.plays[f]
                    self.theta_hat[f] = (self.theta_hat[f] * <double>T + sample) / <double>(T + 1)
                    self.plays[f] = T + 1
                    if c > 0:
                        self.last_hit[f] = self.t
            reward[i] = r
            requested[i] = q
        self._sync()
        return {
            "membership": out_mask_arr,
            "reward": reward_arr,
            "cost": cost_arr,
            "requested": requested_arr,
            "used": used_arr,
            "switched": switched_arr,
        }

    cdef void _sync(self):
        pol = self.policy
        pol.t = self.t
        mask = np.asarray(self.in_cache, dtype=bool)
        pol.cache = CacheContent(tuple(np.flatnonzero(mask).tolist()), int(self.used))
        if self.kind == K_INDEX:
            old = pol.schedule
            pol.schedule = SwitchingSchedule(kind=old.kind, n=self.sched_n, b=self.sched_b, L=old.L, gamma=old.gamma)
