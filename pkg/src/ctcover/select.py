"""View selection: circular baseline, greedy, exact branch-and-bound and a brute-force oracle.

All solvers maximize the number of sphere samples covered by the union of
``k`` chosen rows of a :class:`~ctcover.completeness.CoverageMatrix`, restricted
to candidates whose absorption is at most ``alpha``. Ties are always broken
toward the lowest candidate index.
"""

from __future__ import annotations

import hashlib
import heapq
import itertools
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .completeness import CoverageMatrix, coverage_of
from .errors import InfeasibleProblem, InstanceTooLarge, InvalidArgument, InvariantViolation
from .geometry import ViewCandidate

OPTIMAL = "optimal"
EARLY_STOPPED = "early_stopped"
HEURISTIC = "heuristic"

BRUTE_FORCE_LIMIT = 10 ** 7


@dataclass(frozen=True, eq=False)
class SelectionProblem:
    matrix: CoverageMatrix
    absorption: np.ndarray
    alpha: float
    k: int
    feasible: tuple = field(init=False)

    def __post_init__(self):
        absorption = np.asarray(self.absorption, dtype=float)
        if absorption.shape != (self.matrix.n_candidates,):
            raise InvalidArgument(
                f"absorption has {absorption.size} entries for {self.matrix.n_candidates} candidates")
        if self.k < 1:
            raise InvalidArgument("k must be >= 1")
        object.__setattr__(self, "absorption", absorption)
        feasible = tuple(int(i) for i in np.flatnonzero(absorption <= self.alpha))
        object.__setattr__(self, "feasible", feasible)
        if self.k > len(feasible):
            raise InfeasibleProblem(self.k, len(feasible))

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.matrix.words, dtype="<u8").tobytes())
        h.update(repr((self.matrix.n_candidates, self.matrix.n_samples, self.matrix.voi_offsets)).encode())
        h.update(np.ascontiguousarray(self.absorption, dtype="<f8").tobytes())
        h.update(repr((float(self.alpha), int(self.k))).encode())
        return h.hexdigest()


def assemble_problem(matrix: CoverageMatrix, absorption, alpha: float, k: int) -> SelectionProblem:
    """Bundle the inputs; candidates with ``absorption > alpha`` become unselectable."""
    return SelectionProblem(matrix, absorption, float(alpha), int(k))


@dataclass(frozen=True)
class SolverLimits:
    """Termination policy for branch-and-bound.

    The search stops early when the optimality gap has not shrunk by at least
    ``min_improvement`` during the last ``stall_window_s`` seconds. ``None``
    disables a limit.
    """

    stall_window_s: Optional[float] = 20.0
    min_improvement: float = 1e-8
    max_time_s: Optional[float] = None
    max_nodes: Optional[int] = None

    def __post_init__(self):
        for name in ("stall_window_s", "max_time_s", "max_nodes"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise InvalidArgument(f"{name} must be positive when set")
        if not self.min_improvement > 0:
            raise InvalidArgument("min_improvement must be positive")

    @classmethod
    def unlimited(cls) -> "SolverLimits":
        return cls(stall_window_s=None, max_time_s=None, max_nodes=None)


@dataclass
class Solution:
    solver: str
    selected: tuple
    covered_count: int
    n_samples: int
    upper_bound: int
    gap: float
    status: str
    wall_time_s: float = 0.0
    nodes: int = 0
    limits: Optional[dict] = None
    problem_digest: str = ""

    @property
    def fraction(self) -> float:
        return self.covered_count / self.n_samples if self.n_samples else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["selected"] = list(self.selected)
        d["fraction"] = self.fraction
        return d


def optimality_gap(covered: int, bound: int) -> float:
    """Relative distance ``(bound - covered) / bound`` between bound and incumbent."""
    if covered < 0 or covered > bound:
        raise InvariantViolation(f"incumbent {covered} exceeds bound {bound}")
    if bound == 0:
        return 0.0
    return (bound - covered) / bound


def _trivial_bound(counts: np.ndarray, k: int, n_samples: int) -> int:
    top = np.sort(counts)[::-1][:k]
    return int(min(n_samples, int(top.sum())))


def _gains(words: np.ndarray, covered: np.ndarray) -> np.ndarray:
    return np.bitwise_count(words & ~covered).sum(axis=1, dtype=np.int64)


def greedy_select(problem: SelectionProblem) -> Solution:
    """Repeatedly add the feasible view with the largest marginal coverage gain."""
    t0 = time.perf_counter()
    m = problem.matrix
    feas = np.asarray(problem.feasible, dtype=np.int64)
    words = m.words[feas]
    covered = np.zeros(words.shape[1], dtype=np.uint64)
    used = np.zeros(len(feas), dtype=bool)
    chosen = []
    for _ in range(problem.k):
        g = _gains(words, covered)
        g[used] = -1
        j = int(np.argmax(g))
        used[j] = True
        chosen.append(int(feas[j]))
        covered |= words[j]
    count = int(np.bitwise_count(covered).sum())
    ub = max(count, _trivial_bound(m.row_counts()[feas], problem.k, m.n_samples))
    return Solution("greedy", tuple(sorted(chosen)), count, m.n_samples, ub,
                    optimality_gap(count, ub), HEURISTIC, time.perf_counter() - t0,
                    problem_digest=problem.digest())


def circular_select(candidates: Sequence[ViewCandidate], matrix: CoverageMatrix, k: int,
                    circle_id: int) -> Solution:
    """Equidistant views along one generator circle; absorption is ignored.

    ``candidates[i]`` must correspond to row ``i`` of ``matrix``; the returned
    selection holds row indices.
    """
    t0 = time.perf_counter()
    if len(candidates) != matrix.n_candidates:
        raise InvalidArgument("candidates and matrix rows are not aligned")
    circle = [i for i, c in enumerate(candidates) if c.circle_id == circle_id]
    if not circle:
        raise InvalidArgument(f"unknown circle {circle_id!r}")
    n = len(circle)
    if not 1 <= k <= n:
        raise InvalidArgument(f"circle {circle_id} has {n} views, cannot pick k={k}")
    taken = []
    used = set()
    for j in range(k):
        p = int(math.floor(j * n / k + 0.5)) % n
        while p in used:
            p = (p + 1) % n
        used.add(p)
        taken.append(circle[p])
    count, _ = coverage_of(taken, matrix)
    ub = max(count, _trivial_bound(matrix.row_counts(), k, matrix.n_samples))
    h = hashlib.sha256(np.ascontiguousarray(matrix.words, dtype="<u8").tobytes())
    h.update(repr((matrix.n_candidates, matrix.n_samples, matrix.voi_offsets, int(k), circle_id)).encode())
    return Solution("circular", tuple(sorted(taken)), count, matrix.n_samples, ub,
                    optimality_gap(count, ub), HEURISTIC, time.perf_counter() - t0,
                    problem_digest=h.hexdigest())


def brute_force_select(problem: SelectionProblem) -> Solution:
    """Exhaustive enumeration of all size-k feasible subsets (test oracle)."""
    t0 = time.perf_counter()
    feas = list(problem.feasible)
    k = problem.k
    if math.comb(len(feas), k) > BRUTE_FORCE_LIMIT:
        raise InstanceTooLarge(f"C({len(feas)}, {k}) subsets exceed {BRUTE_FORCE_LIMIT}")
    rows = problem.matrix.row_ints()
    frows = [rows[i] for i in feas]
    n = len(feas)
    best = [-1, None]
    stack_pick = []

    # lexicographic DFS with prefix unions; only strict improvements replace the best
    def rec(start, depth, acc):
        if depth == k:
            c = acc.bit_count()
            if c > best[0]:
                best[0] = c
                best[1] = tuple(stack_pick)
            return
        for j in range(start, n - (k - depth) + 1):
            stack_pick.append(feas[j])
            rec(j + 1, depth + 1, acc | frows[j])
            stack_pick.pop()

    rec(0, 0, 0)
    count = best[0]
    return Solution("oracle", tuple(sorted(best[1])), count, problem.matrix.n_samples, count, 0.0,
                    OPTIMAL, time.perf_counter() - t0, problem_digest=problem.digest())


@dataclass
class NodeInfo:
    """Snapshot passed to the ``on_node`` hook of :func:`bnb_select`."""

    chosen: tuple  # candidate indices fixed to 1
    available: tuple  # candidate indices still free
    covered_count: int
    bound: int


def _node_bound(covered_count, uncovered, gains, r):
    avail = gains[gains >= 0]
    if avail.size < r:
        return None
    if r == 0:
        return covered_count
    top = np.partition(avail, avail.size - r)[avail.size - r:] if r < avail.size else avail
    return covered_count + int(min(uncovered, int(top.sum())))


def bnb_select(problem: SelectionProblem, limits: Optional[SolverLimits] = None,
               on_node: Optional[Callable[[NodeInfo], None]] = None) -> Solution:
    """Best-first branch-and-bound for budgeted maximum coverage.

    Each node fixes some candidates in (``chosen``) and some out. Its bound is
    ``covered + min(uncovered, sum of the r largest residual gains)`` with ``r``
    the remaining budget, valid because a union is never larger than the sum of
    its parts. Nodes are expanded in order of decreasing bound (deeper first on
    ties), branching on the free candidate with the largest residual gain. The
    greedy solution seeds the incumbent.
    """
    limits = limits if limits is not None else SolverLimits()
    t0 = time.perf_counter()
    m = problem.matrix
    n_s = m.n_samples
    k = problem.k
    feas = np.asarray(problem.feasible, dtype=np.int64)
    words = m.words[feas]
    nw = words.shape[1]

    greedy = greedy_select(problem)
    inc_value = greedy.covered_count
    inc_sel = tuple(greedy.selected)

    def report(chosen, gains, cov_count, bound):
        if on_node is not None:
            on_node(NodeInfo(tuple(int(feas[i]) for i in chosen),
                             tuple(int(feas[i]) for i in np.flatnonzero(gains >= 0)),
                             int(cov_count), int(bound)))

    def finish(status, upper, nodes):
        upper = max(int(upper), inc_value)
        gap = 0.0 if status == OPTIMAL else optimality_gap(inc_value, upper)
        if status == OPTIMAL:
            upper = inc_value
        return Solution("ip", tuple(sorted(inc_sel)), inc_value, n_s, upper, gap, status,
                        time.perf_counter() - t0, nodes, asdict(limits), problem.digest())

    covered0 = np.zeros(nw, dtype=np.uint64)
    gains0 = _gains(words, covered0)
    root_bound = _node_bound(0, n_s, gains0, k)
    report((), gains0, 0, root_bound)
    if root_bound <= inc_value:
        return finish(OPTIMAL, inc_value, 1)

    counter = itertools.count()
    # heap entries: (-bound, -depth, seq, covered_count, covered_words, gains, chosen)
    heap = [(-root_bound, 0, next(counter), 0, covered0, gains0, ())]
    nodes = 0
    best_gap = optimality_gap(inc_value, root_bound)
    last_progress = t0

    def complete_with_lowest(chosen, gains):
        free = np.flatnonzero(gains >= 0)[: k - len(chosen)]
        return tuple(chosen) + tuple(int(i) for i in free)

    while heap:
        neg_bound, neg_depth, _, cov_count, covered, gains, chosen = heapq.heappop(heap)
        bound = -neg_bound
        if bound <= inc_value:
            heap.clear()
            break
        nodes += 1
        r = k - len(chosen)

        b = int(np.argmax(gains))
        g_b = int(gains[b])

        # include b
        cov_in = covered | words[b]
        cnt_in = cov_count + g_b
        chosen_in = chosen + (b,)
        gains_in = _gains(words, cov_in)
        gains_in[gains < 0] = -1
        gains_in[b] = -1
        if r - 1 == 0:
            report(chosen_in, gains_in, cnt_in, cnt_in)
            if cnt_in > inc_value:
                inc_value, inc_sel = cnt_in, tuple(int(feas[i]) for i in chosen_in)
        else:
            bnd = _node_bound(cnt_in, n_s - cnt_in, gains_in, r - 1)
            if bnd is not None:
                report(chosen_in, gains_in, cnt_in, bnd)
                if bnd == cnt_in:
                    # nothing left to gain: any completion attains the bound
                    if cnt_in > inc_value:
                        inc_value = cnt_in
                        inc_sel = tuple(int(feas[i]) for i in complete_with_lowest(chosen_in, gains_in))
                elif bnd > inc_value:
                    heapq.heappush(heap, (-bnd, neg_depth - 1, next(counter), cnt_in, cov_in,
                                          gains_in, chosen_in))

        # exclude b
        gains_out = gains.copy()
        gains_out[b] = -1
        bnd = _node_bound(cov_count, n_s - cov_count, gains_out, r)
        if bnd is not None:
            report(chosen, gains_out, cov_count, bnd)
            if bnd > inc_value:
                heapq.heappush(heap, (-bnd, neg_depth, next(counter), cov_count, covered,
                                      gains_out, chosen))

        if heap and -heap[0][0] <= inc_value:
            # the top node dominates every other open node
            heap.clear()
        if not heap:
            break

        now = time.perf_counter()
        upper = max(inc_value, -heap[0][0])
        gap = optimality_gap(inc_value, upper)
        if best_gap - gap >= limits.min_improvement:
            best_gap = gap
            last_progress = now
        if limits.stall_window_s is not None and now - last_progress >= limits.stall_window_s:
            return finish(EARLY_STOPPED, upper, nodes)
        if limits.max_time_s is not None and now - t0 >= limits.max_time_s:
            return finish(EARLY_STOPPED, upper, nodes)
        if limits.max_nodes is not None and nodes >= limits.max_nodes:
            return finish(EARLY_STOPPED, upper, nodes)

    return finish(OPTIMAL, inc_value, nodes)


SOLVERS = ("circular", "greedy", "ip", "oracle")
