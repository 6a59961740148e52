//! Un-regularized discrete optimal transport via the transportation
//! linear program.
//!
//! The solver is a network simplex on the dense bipartite transportation
//! graph: the basis is a spanning tree of `I + J` nodes, pricing is a full
//! Dantzig scan on small instances and a block search on large ones, and
//! degeneracy is handled by perturbing supply `i` by `(i+1)·δ` (all of it
//! parked on the last demand). The perturbation is carried symbolically —
//! every flow is a pair `(real, pert)` ordered lexicographically with `δ`
//! infinitesimal — so removing it afterwards is exact: the real parts are
//! already the unperturbed basic solution.
//!
//! Dual potentials come out of the final tree with `ψ_1 = 0` (potentials
//! are defined up to an additive constant).

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::measures::DiscreteMeasure;
use crate::ot::CostMatrix;

/// Optimality threshold on reduced costs, scaled by the cost magnitude.
const PRICING_TOLERANCE: f64 = 1e-11;

/// Pricing switches from a full Dantzig scan to block search above this
/// many arcs.
const BLOCK_SEARCH_CUTOFF: usize = 10_000;

/// An optimal transportation plan with its dual certificate.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    /// `I × J` nonnegative matrix with row sums `μ` and column sums `ν`.
    pub plan: Array2<f64>,
    /// `Σ_ij plan_ij · c_ij`, the un-regularized OT cost `W_0`.
    pub cost: f64,
    /// Row potentials `φ` (one per atom of the first measure).
    pub dual_phi: Array1<f64>,
    /// Column potentials `ψ`, anchored by `ψ_1 = 0`.
    pub dual_psi: Array1<f64>,
    /// Simplex pivots performed.
    pub pivots: usize,
}

/// Flow value under the symbolic supply perturbation: `re + pe·δ` with
/// `δ` infinitesimal, compared lexicographically.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Lex {
    re: f64,
    pe: i64,
}

impl Lex {
    fn add(self, o: Lex) -> Lex {
        Lex {
            re: self.re + o.re,
            pe: self.pe + o.pe,
        }
    }

    fn sub(self, o: Lex) -> Lex {
        Lex {
            re: self.re - o.re,
            pe: self.pe - o.pe,
        }
    }

    fn lt(self, o: Lex) -> bool {
        self.re < o.re || (self.re == o.re && self.pe < o.pe)
    }
}

#[derive(Debug, Clone, Copy)]
struct Arc {
    row: usize,
    col: usize,
    flow: Lex,
}

struct Simplex<'a> {
    cost: &'a Array2<f64>,
    rows: usize,
    cols: usize,
    arcs: Vec<Arc>,
    /// Node adjacency over basis arcs; nodes `0..rows` are sources,
    /// `rows..rows+cols` sinks.
    adj: Vec<Vec<u32>>,
    is_basic: Vec<bool>,
    u: Vec<f64>,
    v: Vec<f64>,
    pricing_cursor: usize,
    tolerance: f64,
}

impl<'a> Simplex<'a> {
    fn node_of_col(&self, j: usize) -> usize {
        self.rows + j
    }

    /// Northwest-corner initial basis on the perturbed quantities; always
    /// yields exactly `I + J − 1` basic cells forming a spanning tree.
    fn initial_basis(cost: &'a Array2<f64>, mu: &[f64], nu: &[f64], tolerance: f64) -> Self {
        let rows = mu.len();
        let cols = nu.len();
        let total_pert: i64 = (1..=rows as i64).sum();

        let mut arcs = Vec::with_capacity(rows + cols - 1);
        let mut adj = vec![Vec::new(); rows + cols];
        let mut is_basic = vec![false; rows * cols];

        let supply_at = |i: usize| Lex {
            re: mu[i],
            pe: (i + 1) as i64,
        };
        let demand_at = |j: usize| Lex {
            re: nu[j],
            pe: if j + 1 == cols { total_pert } else { 0 },
        };

        let (mut i, mut j) = (0, 0);
        let mut rem_s = supply_at(0);
        let mut rem_d = demand_at(0);
        loop {
            let take = if rem_s.lt(rem_d) { rem_s } else { rem_d };
            let slot = arcs.len() as u32;
            arcs.push(Arc {
                row: i,
                col: j,
                flow: take,
            });
            adj[i].push(slot);
            adj[rows + j].push(slot);
            is_basic[i * cols + j] = true;
            rem_s = rem_s.sub(take);
            rem_d = rem_d.sub(take);
            if i + 1 == rows && j + 1 == cols {
                break;
            }
            // Advance whichever side was exhausted; when the supply side
            // ties out but no rows remain, move along the columns.
            if !rem_d.lt(rem_s) && i + 1 < rows {
                i += 1;
                rem_s = supply_at(i);
            } else {
                j += 1;
                rem_d = demand_at(j);
            }
        }
        debug_assert_eq!(arcs.len(), rows + cols - 1);

        Self {
            cost,
            rows,
            cols,
            arcs,
            adj,
            is_basic,
            u: vec![0.0; rows],
            v: vec![0.0; cols],
            pricing_cursor: 0,
            tolerance,
        }
    }

    /// Recomputes both potential vectors from the basis tree, anchoring
    /// the first column potential at zero.
    fn recompute_duals(&mut self, stack: &mut Vec<usize>, seen: &mut [bool]) {
        seen.fill(false);
        stack.clear();
        let root = self.node_of_col(0);
        self.v[0] = 0.0;
        seen[root] = true;
        stack.push(root);
        while let Some(node) = stack.pop() {
            for &slot in &self.adj[node] {
                let arc = self.arcs[slot as usize];
                let (rn, cn) = (arc.row, self.rows + arc.col);
                let other = if rn == node { cn } else { rn };
                if seen[other] {
                    continue;
                }
                seen[other] = true;
                let c = self.cost[[arc.row, arc.col]];
                if other == rn {
                    self.u[arc.row] = c - self.v[arc.col];
                } else {
                    self.v[arc.col] = c - self.u[arc.row];
                }
                stack.push(other);
            }
        }
    }

    /// Most negative reduced cost over all arcs (Dantzig rule).
    fn price_full(&self) -> Option<(usize, usize)> {
        let mut best = -self.tolerance;
        let mut entering = None;
        for i in 0..self.rows {
            let ui = self.u[i];
            let row = self.cost.row(i);
            let base = i * self.cols;
            for j in 0..self.cols {
                if self.is_basic[base + j] {
                    continue;
                }
                let r = row[j] - ui - self.v[j];
                if r < best {
                    best = r;
                    entering = Some((i, j));
                }
            }
        }
        entering
    }

    /// Block-search pricing: scan fixed-size windows of the arc list from
    /// a rolling cursor and return the best candidate of the first window
    /// that contains one.
    fn price_block(&mut self) -> Option<(usize, usize)> {
        let total = self.rows * self.cols;
        let block = (total as f64).sqrt().ceil() as usize;
        let mut scanned = 0;
        while scanned < total {
            let mut best = -self.tolerance;
            let mut entering = None;
            let end = (self.pricing_cursor + block).min(self.pricing_cursor + total - scanned);
            for raw in self.pricing_cursor..end {
                let idx = raw % total;
                if self.is_basic[idx] {
                    continue;
                }
                let (i, j) = (idx / self.cols, idx % self.cols);
                let r = self.cost[[i, j]] - self.u[i] - self.v[j];
                if r < best {
                    best = r;
                    entering = Some((i, j));
                }
            }
            scanned += end - self.pricing_cursor;
            self.pricing_cursor = end % total;
            if entering.is_some() {
                return entering;
            }
        }
        None
    }

    /// Unique tree path from row node `er` to column node `ec`, returned
    /// as basis arc slots in order.
    fn tree_path(
        &self,
        er: usize,
        ec: usize,
        parent: &mut [u32],
        seen: &mut [bool],
        queue: &mut Vec<usize>,
    ) -> Vec<u32> {
        const NONE: u32 = u32::MAX;
        seen.fill(false);
        parent.fill(NONE);
        queue.clear();
        let target = self.node_of_col(ec);
        seen[er] = true;
        queue.push(er);
        let mut head = 0;
        'search: while head < queue.len() {
            let node = queue[head];
            head += 1;
            for &slot in &self.adj[node] {
                let arc = self.arcs[slot as usize];
                let (rn, cn) = (arc.row, self.rows + arc.col);
                let other = if rn == node { cn } else { rn };
                if seen[other] {
                    continue;
                }
                seen[other] = true;
                parent[other] = slot;
                if other == target {
                    break 'search;
                }
                queue.push(other);
            }
        }
        let mut path = Vec::new();
        let mut node = target;
        while node != er {
            let slot = parent[node];
            debug_assert_ne!(slot, u32::MAX, "basis must be a spanning tree");
            path.push(slot);
            let arc = self.arcs[slot as usize];
            let (rn, cn) = (arc.row, self.rows + arc.col);
            node = if rn == node { cn } else { rn };
        }
        path.reverse();
        path
    }

    /// One simplex pivot around the entering arc; returns false when the
    /// basis did not change (cannot happen with the lexicographic rule,
    /// kept as a safeguard).
    fn pivot(&mut self, er: usize, ec: usize, scratch: &mut PivotScratch) {
        let path = self.tree_path(er, ec, &mut scratch.parent, &mut scratch.seen, &mut scratch.queue);
        // Walking from the row end, path arcs alternate −, +, −, … and the
        // path has odd length, so minus arcs sit at even positions.
        let mut leaving: Option<(usize, Lex)> = None;
        for (pos, &slot) in path.iter().enumerate().step_by(2) {
            let flow = self.arcs[slot as usize].flow;
            let better = match leaving {
                None => true,
                Some((prev_slot, prev_flow)) => {
                    flow.lt(prev_flow)
                        || (flow == prev_flow && (slot as usize) < prev_slot)
                }
            };
            if better {
                leaving = Some((slot as usize, flow));
            }
            let _ = pos;
        }
        let (leaving_slot, t) = leaving.expect("cycle always has a minus arc");

        for (pos, &slot) in path.iter().enumerate() {
            let arc = &mut self.arcs[slot as usize];
            arc.flow = if pos % 2 == 0 {
                arc.flow.sub(t)
            } else {
                arc.flow.add(t)
            };
        }

        let old = self.arcs[leaving_slot];
        self.is_basic[old.row * self.cols + old.col] = false;
        self.is_basic[er * self.cols + ec] = true;
        let detach = |adj: &mut Vec<u32>, slot: u32| {
            let at = adj.iter().position(|&s| s == slot).expect("arc in adjacency");
            adj.swap_remove(at);
        };
        detach(&mut self.adj[old.row], leaving_slot as u32);
        detach(&mut self.adj[self.rows + old.col], leaving_slot as u32);
        self.arcs[leaving_slot] = Arc {
            row: er,
            col: ec,
            flow: t,
        };
        self.adj[er].push(leaving_slot as u32);
        self.adj[self.rows + ec].push(leaving_slot as u32);
    }

    /// Exact tree re-solve of the real flows from the true supplies; the
    /// final answer does not depend on float drift accumulated across
    /// pivots. Degenerate arcs may come out a hair negative and are
    /// clamped.
    fn resolve_real_flows(&mut self, mu: &[f64], nu: &[f64]) {
        let n = self.rows + self.cols;
        let mut remaining: Vec<f64> = mu.iter().copied().chain(nu.iter().copied()).collect();
        let mut degree: Vec<usize> = self.adj.iter().map(|l| l.len()).collect();
        let mut done_arc = vec![false; self.arcs.len()];
        let mut leaves: Vec<usize> = (0..n).filter(|&k| degree[k] == 1).collect();
        let mut solved = 0;
        while let Some(node) = leaves.pop() {
            let Some(&slot) = self.adj[node].iter().find(|&&s| !done_arc[s as usize]) else {
                continue;
            };
            let arc = &mut self.arcs[slot as usize];
            arc.flow.re = remaining[node].max(0.0);
            done_arc[slot as usize] = true;
            solved += 1;
            let (rn, cn) = (arc.row, self.rows + arc.col);
            let other = if rn == node { cn } else { rn };
            remaining[other] -= arc.flow.re;
            degree[other] -= 1;
            degree[node] -= 1;
            if degree[other] == 1 {
                leaves.push(other);
            }
        }
        debug_assert_eq!(solved, self.arcs.len());
    }
}

struct PivotScratch {
    parent: Vec<u32>,
    seen: Vec<bool>,
    queue: Vec<usize>,
}

/// Solves the transportation problem for an explicit cost matrix and
/// strictly positive weight vectors.
pub(crate) fn solve_with_cost(
    cost: &Array2<f64>,
    mu: &[f64],
    nu: &[f64],
) -> Result<TransportPlan> {
    let (rows, cols) = cost.dim();
    if mu.len() != rows || nu.len() != cols {
        return Err(Error::DimensionMismatch(mu.len(), rows));
    }
    if mu.iter().chain(nu.iter()).any(|&w| w <= 0.0 || !w.is_finite()) {
        return Err(Error::ZeroWeightAtom);
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("transportation costs"));
    }

    let scale = cost.iter().fold(1.0f64, |m, &c| m.max(c.abs()));
    let tolerance = PRICING_TOLERANCE * scale;
    let mut simplex = Simplex::initial_basis(cost, mu, nu, tolerance);
    let n = rows + cols;
    let mut scratch = PivotScratch {
        parent: vec![0; n],
        seen: vec![false; n],
        queue: Vec::with_capacity(n),
    };
    let mut dual_stack = Vec::with_capacity(n);
    let mut dual_seen = vec![false; n];

    let pivot_cap = 1000 + 10 * (rows * cols + n);
    let use_blocks = rows * cols > BLOCK_SEARCH_CUTOFF;
    let mut pivots = 0;
    loop {
        simplex.recompute_duals(&mut dual_stack, &mut dual_seen);
        let entering = if use_blocks {
            simplex.price_block()
        } else {
            simplex.price_full()
        };
        let Some((er, ec)) = entering else { break };
        simplex.pivot(er, ec, &mut scratch);
        pivots += 1;
        if pivots > pivot_cap {
            return Err(Error::PivotCapExceeded(pivot_cap));
        }
    }

    simplex.resolve_real_flows(mu, nu);
    simplex.recompute_duals(&mut dual_stack, &mut dual_seen);

    let mut plan = Array2::zeros((rows, cols));
    let mut total = 0.0;
    for arc in &simplex.arcs {
        plan[[arc.row, arc.col]] = arc.flow.re;
        total += arc.flow.re * cost[[arc.row, arc.col]];
    }
    Ok(TransportPlan {
        plan,
        cost: total,
        dual_phi: Array1::from_vec(simplex.u),
        dual_psi: Array1::from_vec(simplex.v),
        pivots,
    })
}

/// Optimal transportation plan between two measures under the squared
/// Euclidean cost. Weights must be strictly positive.
pub fn solve_exact(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<TransportPlan> {
    let cost = CostMatrix::squared_euclidean(a, b)?;
    let mu = a.weights().to_vec();
    let nu = b.weights().to_vec();
    solve_with_cost(cost.entries(), &mu, &nu)
}

/// The un-regularized OT cost `W_0(a, b)`.
pub fn w0(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<f64> {
    Ok(solve_exact(a, b)?.cost)
}
