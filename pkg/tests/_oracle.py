"""Exhaustive small-instance oracle, independent of the production solver.

Works directly on a scenario set: paths sharing an identical price history up
to a date form one information node, decisions are per (date, node, volume),
and the optimum is found by exhaustive recursion over the control lattice.
Volumes are tracked in integer units of the control step, so the recursion is
exact.  Deltas come from central differences of the re-enumerated value under
bumped initial curves, an envelope-theorem route entirely separate from the
tangent-process ledgers.
"""

from functools import lru_cache

import numpy as np


class TreeOracle:
    def __init__(self, spots, fx, exercise_days, q_max, q_min_total, q_max_total,
                 control_step, index_fn):
        """``spots``: (paths, dates, commodities); ``fx``: (paths, dates) or None.

        ``index_fn(spots, fx, path, t)`` must return the strike index at an
        exercise day, implemented independently of the package.
        """
        self.spots = np.asarray(spots, dtype=float)
        self.fx = None if fx is None else np.asarray(fx, dtype=float)
        self.ex_days = sorted(int(d) for d in exercise_days)
        self.q_max = q_max
        self.dq = control_step
        self.q_min_u = self._units(q_min_total)
        self.q_max_u = self._units(q_max_total)
        self.qd_u = self._units(q_max)
        self.index_fn = index_fn
        n_paths, n_dates, _ = self.spots.shape
        self.nodes = []
        for t in range(n_dates):
            seen, ids = {}, []
            for p in range(n_paths):
                key = (self.spots[p, :t + 1].tobytes(),
                       b"" if self.fx is None else self.fx[p, :t + 1].tobytes())
                ids.append(seen.setdefault(key, len(seen)))
            self.nodes.append(np.asarray(ids))
        self.n_paths = n_paths
        self.t_end = self.ex_days[-1]

    def _units(self, q) -> int:
        u = round(q / self.dq)
        assert abs(u * self.dq - q) < 1e-9, "volumes must sit on the control lattice"
        return u

    def _members(self, t, node):
        return np.flatnonzero(self.nodes[t] == node)

    def payoff(self, t, node) -> float:
        mem = self._members(t, node)
        vals = [self.spots[p, t, 0] - self.index_fn(self.spots, self.fx, p, t)
                for p in mem]
        assert np.ptp(vals) < 1e-12, "payoff must be node-measurable"
        return float(vals[0])

    def value(self) -> float:
        ex = set(self.ex_days)
        rest_after = {t: len([d for d in self.ex_days if d > t]) for t in ex}

        @lru_cache(maxsize=None)
        def v(t, node, taken_u):
            if t > self.t_end:
                return 0.0
            if t not in ex:
                return _child_mean(t, node, taken_u)
            q_lo = max(0, self.q_min_u - taken_u - self.qd_u * rest_after[t])
            q_hi = min(self.qd_u, self.q_max_u - taken_u)
            assert q_lo <= q_hi, "infeasible state reached"
            pay = self.payoff(t, node)
            best = -np.inf
            for qu in range(q_lo, q_hi + 1):
                total = qu * self.dq * pay + _child_mean(t, node, taken_u + qu)
                if total > best:
                    best = total
            return best

        def _child_mean(t, node, taken_u):
            if t + 1 > self.t_end:
                return 0.0
            mem = self._members(t, node)
            kids = {}
            for p in mem:
                kids[self.nodes[t + 1][p]] = kids.get(self.nodes[t + 1][p], 0) + 1
            return sum(n * v(t + 1, k, taken_u) for k, n in kids.items()) / len(mem)

        root = int(self.nodes[0][0])
        assert (self.nodes[0] == root).all(), "paths must share the initial date"
        return v(0, root, 0)


def envelope_delta(build, bump_key, size, rel_bump=1e-6):
    """Central-difference derivative of the oracle value.

    ``build(key, eps)`` must return a fresh TreeOracle with the named input
    bumped multiplicatively by (1 + eps); the derivative is with respect to
    the unbumped input's level, i.e. d(value)/d(input).
    """
    up = build(bump_key, rel_bump).value()
    dn = build(bump_key, -rel_bump).value()
    return (up - dn) / (2.0 * rel_bump * size)
