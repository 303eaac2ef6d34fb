//! Primal network simplex for uncapacitated min-cost flow.
//!
//! The tree bookkeeping (thread / reverse thread / successor counts) follows
//! the classic LEMON implementation, restricted to arcs without upper bounds:
//! arcs are either in the spanning tree or at zero flow. The initial basis
//! hangs every node off an artificial root; strongly feasible trees keep the
//! method from cycling on degenerate pivots.

const NONE: usize = usize::MAX;
const STATE_TREE: i8 = 0;
const STATE_LOWER: i8 = 1;
const DIR_UP: f64 = 1.0;
const DIR_DOWN: f64 = -1.0;

/// Min-cost flow problem on a directed graph with node supplies.
pub(crate) struct NetworkSimplex {
    node_num: usize,
    arc_num: usize,
    source: Vec<usize>,
    target: Vec<usize>,
    cost: Vec<f64>,
    flow: Vec<f64>,
    state: Vec<i8>,
    pi: Vec<f64>,

    parent: Vec<usize>,
    pred: Vec<usize>,
    thread: Vec<usize>,
    rev_thread: Vec<usize>,
    succ_num: Vec<usize>,
    last_succ: Vec<usize>,
    pred_dir: Vec<f64>,
    dirty_revs: Vec<usize>,

    block_size: usize,
    next_arc: usize,
    tolerance: f64,

    in_arc: usize,
    join: usize,
    u_in: usize,
    v_in: usize,
    u_out: usize,
    delta: f64,
    pub pivots: usize,
}

pub(crate) enum Outcome {
    Optimal,
    Infeasible(f64),
    Unbounded,
    IterationLimit,
}

impl NetworkSimplex {
    /// `arcs` are `(source, target, cost)`; `supply` must sum to zero.
    pub fn new(supply: &[f64], arcs: impl Iterator<Item = (usize, usize, f64)>) -> Self {
        let node_num = supply.len();
        let mut source = Vec::new();
        let mut target = Vec::new();
        let mut cost = Vec::new();
        for (s, t, c) in arcs {
            source.push(s);
            target.push(t);
            cost.push(c);
        }
        let arc_num = source.len();
        let all = arc_num + node_num;
        let root = node_num;

        let max_cost = cost.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
        let art_cost = (max_cost + 1.0) * node_num as f64;

        source.resize(all, 0);
        target.resize(all, 0);
        cost.resize(all, 0.0);
        let mut flow = vec![0.0; all];
        let mut state = vec![STATE_LOWER; all];
        let mut pi = vec![0.0; node_num + 1];
        let mut parent = vec![NONE; node_num + 1];
        let mut pred = vec![NONE; node_num + 1];
        let mut thread = vec![0; node_num + 1];
        let mut rev_thread = vec![0; node_num + 1];
        let mut succ_num = vec![1; node_num + 1];
        let mut last_succ = vec![0; node_num + 1];
        let mut pred_dir = vec![DIR_UP; node_num + 1];

        thread[root] = 0;
        rev_thread[0] = root;
        succ_num[root] = node_num + 1;
        last_succ[root] = root - 1;
        for u in 0..node_num {
            let e = arc_num + u;
            parent[u] = root;
            pred[u] = e;
            thread[u] = u + 1;
            rev_thread[u + 1] = u;
            last_succ[u] = u;
            state[e] = STATE_TREE;
            if supply[u] >= 0.0 {
                pred_dir[u] = DIR_UP;
                source[e] = u;
                target[e] = root;
                flow[e] = supply[u];
            } else {
                pred_dir[u] = DIR_DOWN;
                pi[u] = art_cost;
                source[e] = root;
                target[e] = u;
                flow[e] = -supply[u];
                cost[e] = art_cost;
            }
        }

        let block_size = ((arc_num as f64).sqrt().ceil() as usize).max(10);
        Self {
            node_num,
            arc_num,
            source,
            target,
            cost,
            flow,
            state,
            pi,
            parent,
            pred,
            thread,
            rev_thread,
            succ_num,
            last_succ,
            pred_dir,
            dirty_revs: Vec::new(),
            block_size,
            next_arc: 0,
            // reduced costs are differences of potentials of size ~art_cost
            tolerance: 1e-13 * art_cost.max(1.0),
            in_arc: 0,
            join: 0,
            u_in: 0,
            v_in: 0,
            u_out: 0,
            delta: 0.0,
            pivots: 0,
        }
    }

    pub fn flow(&self, arc: usize) -> f64 {
        self.flow[arc]
    }

    /// Node potentials; `cost + pi[source] − pi[target] ≥ 0` at optimality.
    pub fn potential(&self, node: usize) -> f64 {
        self.pi[node]
    }

    pub fn run(&mut self, max_pivots: usize) -> Outcome {
        while self.find_entering_arc() {
            if self.pivots >= max_pivots {
                return Outcome::IterationLimit;
            }
            self.pivots += 1;
            self.find_join_node();
            if !self.find_leaving_arc() {
                return Outcome::Unbounded;
            }
            self.change_flow();
            self.update_tree_structure();
            self.update_potential();
        }
        let residue = (self.arc_num..self.arc_num + self.node_num)
            .map(|e| self.flow[e])
            .fold(0.0, f64::max);
        if residue > 1e-9 {
            Outcome::Infeasible(residue)
        } else {
            Outcome::Optimal
        }
    }

    #[inline]
    fn reduced(&self, e: usize) -> f64 {
        self.state[e] as f64 * (self.cost[e] + self.pi[self.source[e]] - self.pi[self.target[e]])
    }

    // Block search: scan blocks of arcs cyclically, pivot on the most negative
    // reduced cost of the first block that has one.
    fn find_entering_arc(&mut self) -> bool {
        let mut min = -self.tolerance;
        let mut found = false;
        let mut cnt = self.block_size;
        let m = self.arc_num;
        let mut e = self.next_arc;
        for _ in 0..m {
            let c = self.reduced(e);
            if c < min {
                min = c;
                self.in_arc = e;
                found = true;
            }
            e += 1;
            if e == m {
                e = 0;
            }
            cnt -= 1;
            if cnt == 0 {
                if found {
                    self.next_arc = e;
                    return true;
                }
                cnt = self.block_size;
            }
        }
        if found {
            self.next_arc = e;
        }
        found
    }

    fn find_join_node(&mut self) {
        let mut u = self.source[self.in_arc];
        let mut v = self.target[self.in_arc];
        while u != v {
            if self.succ_num[u] < self.succ_num[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        self.join = u;
    }

    fn find_leaving_arc(&mut self) -> bool {
        // entering arcs are always at their lower bound here
        let first = self.source[self.in_arc];
        let second = self.target[self.in_arc];
        let mut delta = f64::INFINITY;
        let mut result = 0;
        let mut u = first;
        while u != self.join {
            if self.pred_dir[u] == DIR_UP {
                let d = self.flow[self.pred[u]];
                if d < delta {
                    delta = d;
                    self.u_out = u;
                    result = 1;
                }
            }
            u = self.parent[u];
        }
        let mut u = second;
        while u != self.join {
            if self.pred_dir[u] == DIR_DOWN {
                let d = self.flow[self.pred[u]];
                if d <= delta {
                    delta = d;
                    self.u_out = u;
                    result = 2;
                }
            }
            u = self.parent[u];
        }
        if result == 1 {
            self.u_in = first;
            self.v_in = second;
        } else {
            self.u_in = second;
            self.v_in = first;
        }
        self.delta = delta;
        result != 0
    }

    fn change_flow(&mut self) {
        let val = self.delta;
        let out_arc = self.pred[self.u_out];
        if val > 0.0 {
            self.flow[self.in_arc] += val;
            let mut u = self.source[self.in_arc];
            while u != self.join {
                let e = self.pred[u];
                self.flow[e] -= self.pred_dir[u] * val;
                u = self.parent[u];
            }
            let mut u = self.target[self.in_arc];
            while u != self.join {
                let e = self.pred[u];
                self.flow[e] += self.pred_dir[u] * val;
                u = self.parent[u];
            }
        }
        self.flow[out_arc] = 0.0;
        self.state[self.in_arc] = STATE_TREE;
        self.state[out_arc] = STATE_LOWER;
    }

    fn update_tree_structure(&mut self) {
        let u_in = self.u_in;
        let v_in = self.v_in;
        let u_out = self.u_out;
        let join = self.join;
        let in_arc = self.in_arc;

        let old_rev_thread = self.rev_thread[u_out];
        let old_succ_num = self.succ_num[u_out];
        let old_last_succ = self.last_succ[u_out];
        let v_out = self.parent[u_out];

        if u_in == u_out {
            self.parent[u_in] = v_in;
            self.pred[u_in] = in_arc;
            self.pred_dir[u_in] = if u_in == self.source[in_arc] { DIR_UP } else { DIR_DOWN };

            if self.thread[v_in] != u_out {
                let mut after = self.thread[old_last_succ];
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
                after = self.thread[v_in];
                self.thread[v_in] = u_out;
                self.rev_thread[u_out] = v_in;
                self.thread[old_last_succ] = after;
                self.rev_thread[after] = old_last_succ;
            }
        } else {
            let thread_continue = if old_rev_thread == v_in {
                self.thread[old_last_succ]
            } else {
                self.thread[v_in]
            };

            // walk the stem from u_in up to u_out, reversing it
            let mut stem = u_in;
            let mut par_stem = v_in;
            let mut last = self.last_succ[u_in];
            let mut after = self.thread[last];
            self.thread[v_in] = u_in;
            self.dirty_revs.clear();
            self.dirty_revs.push(v_in);
            while stem != u_out {
                let next_stem = self.parent[stem];
                self.thread[last] = next_stem;
                self.dirty_revs.push(last);

                let before = self.rev_thread[stem];
                self.thread[before] = after;
                self.rev_thread[after] = before;

                self.parent[stem] = par_stem;
                par_stem = stem;
                stem = next_stem;

                last = if self.last_succ[stem] == self.last_succ[par_stem] {
                    self.rev_thread[par_stem]
                } else {
                    self.last_succ[stem]
                };
                after = self.thread[last];
            }
            self.parent[u_out] = par_stem;
            self.thread[last] = thread_continue;
            self.rev_thread[thread_continue] = last;
            self.last_succ[u_out] = last;

            if old_rev_thread != v_in {
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
            }

            for i in 0..self.dirty_revs.len() {
                let u = self.dirty_revs[i];
                let t = self.thread[u];
                self.rev_thread[t] = u;
            }

            let mut tmp_sc = 0usize;
            let tmp_ls = self.last_succ[u_out];
            let mut u = u_out;
            while u != u_in {
                let p = self.parent[u];
                self.pred[u] = self.pred[p];
                self.pred_dir[u] = -self.pred_dir[p];
                tmp_sc = tmp_sc + self.succ_num[u] - self.succ_num[p];
                self.succ_num[u] = tmp_sc;
                self.last_succ[p] = tmp_ls;
                u = p;
            }
            self.pred[u_in] = in_arc;
            self.pred_dir[u_in] = if u_in == self.source[in_arc] { DIR_UP } else { DIR_DOWN };
            self.succ_num[u_in] = old_succ_num;
        }

        let up_limit_out = if self.last_succ[join] == v_in { join } else { NONE };
        let last_succ_out = self.last_succ[u_out];
        let mut u = v_in;
        while u != NONE && self.last_succ[u] == v_in {
            self.last_succ[u] = last_succ_out;
            u = self.parent[u];
        }

        if join != old_rev_thread && v_in != old_rev_thread {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = old_rev_thread;
                u = self.parent[u];
            }
        } else if last_succ_out != old_last_succ {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = last_succ_out;
                u = self.parent[u];
            }
        }

        let mut u = v_in;
        while u != join {
            self.succ_num[u] += old_succ_num;
            u = self.parent[u];
        }
        let mut u = v_out;
        while u != join {
            self.succ_num[u] -= old_succ_num;
            u = self.parent[u];
        }
    }

    fn update_potential(&mut self) {
        let sigma = self.pi[self.v_in] - self.pi[self.u_in] - self.pred_dir[self.u_in] * self.cost[self.in_arc];
        let end = self.thread[self.last_succ[self.u_in]];
        let mut u = self.u_in;
        while u != end {
            self.pi[u] += sigma;
            u = self.thread[u];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Brute force over all vertices is impractical; instead compare against a
    // tiny assignment problem solved by enumeration of permutations.
    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 1 {
            return vec![vec![0]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..n {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn assignment_matches_enumeration() {
        let n = 5;
        let cost = |i: usize, j: usize| (((i * 7 + j * 13) % 11) as f64 + 0.5 * i as f64).powi(2);
        let mut supply = vec![1.0; n];
        supply.extend(std::iter::repeat_n(-1.0, n));
        let arcs = (0..n).flat_map(|i| (0..n).map(move |j| (i, n + j, cost(i, j))));
        let mut ns = NetworkSimplex::new(&supply, arcs);
        assert!(matches!(ns.run(100_000), Outcome::Optimal));
        let total: f64 = (0..n * n).map(|e| ns.flow(e) * cost(e / n, e % n)).sum();
        let best = permutations(n)
            .into_iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| cost(i, j)).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        assert!((total - best).abs() < 1e-12, "{total} vs {best}");
        // reduced costs are non-negative on every arc
        for e in 0..n * n {
            let (s, t) = (e / n, n + e % n);
            assert!(cost(e / n, e % n) + ns.potential(s) - ns.potential(t) > -1e-9);
        }
    }
}
