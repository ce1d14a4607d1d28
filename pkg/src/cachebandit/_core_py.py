"""Pure-Python episode kernel, used when the compiled one is unavailable.

It drives the policy objects from :mod:`cachebandit.policies` period by
period, so it doubles as the reference the compiled kernel is tested against.
"""
import numpy as np


class EpisodeKernel:
    name = "python"

    def __init__(self, policy, rng):
        self.policy = policy
        self.rng = rng
        self.catalog = policy.catalog
        self.sizes = policy.catalog.size_array
        self.t = policy.t
        self.mask = policy.cache.mask(policy.catalog.num_files)

    def run_block(self, counts, users):
        B, F = counts.shape
        U = self.catalog.max_users
        sizes = self.sizes
        out_mask = np.zeros((B, F), dtype=np.uint8)
        reward = np.zeros(B, dtype=np.int64)
        cost = np.zeros(B, dtype=np.int64)
        used = np.zeros(B, dtype=np.int64)
        switched = np.zeros(B, dtype=np.int64)
        requested = counts.astype(np.int64) @ sizes
        policy = self.policy
        prev = self.mask
        for i in range(B):
            self.t += 1
            cache = policy.choose_cache(self.t, self.rng)
            mask = cache.mask(F)
            new = mask & ~prev
            cost[i] = sizes[new].sum()
            switched[i] = new.sum()
            files = list(cache.files)
            reward[i] = int(counts[i, files].astype(np.int64) @ sizes[files]) if files else 0
            used[i] = cache.used
            out_mask[i] = mask
            policy.observe_counts(counts[i], U)
            prev = mask
        self.mask = prev
        return {
            "membership": out_mask,
            "reward": reward,
            "cost": cost,
            "requested": requested,
            "used": used,
            "switched": switched,
        }
