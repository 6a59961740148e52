//! Entropic optimal transport on discrete measures.
//!
//! Everything runs in the log domain: the dual updates
//!
//! ```text
//! φ_i ← −λ log Σ_j exp(−(c_ij − ψ_j)/λ) ν_j
//! ψ_j ← −λ log Σ_i exp(−(c_ij − φ_i)/λ) μ_i
//! ```
//!
//! are evaluated with max-subtracted log-sum-exp, starting from `ψ = 0`.
//! There is no kernel-matrix exponentiation path: with `λ` as small as
//! `0.01` against squared-Euclidean costs the plain scaling form
//! underflows.
//!
//! The value reported after `ℓ` iterations is `Σ_i μ_i φ_i + Σ_j ν_j ψ_j`
//! read exactly at `(φ^(ℓ), ψ^(ℓ))`, i.e. right after the trailing `ψ`
//! update. Self-transport terms `W_λ(a, a)` use the symmetric fixed-point
//! iteration `ψ ← ½(ψ + ψ^{c,λ}_a)`, which converges much faster than
//! alternating updates; each symmetric update counts as one iteration
//! toward a bounded budget.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::measures::DiscreteMeasure;

/// Default tolerance on the L1 marginal residual in unbounded mode.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// Unbounded mode gives up when the best residual has not improved by
/// [`STALL_IMPROVEMENT`] over this many consecutive iterations.
const STALL_WINDOW: usize = 100;
const STALL_IMPROVEMENT: f64 = 1e-16;

/// Iteration policy for a Sinkhorn run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IterationBudget {
    /// Run exactly this many iterations and report the value there.
    Fixed(usize),
    /// Run until the marginal residual drops below the tolerance.
    Unbounded,
}

/// Parameters of a Sinkhorn run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    /// Entropic regularization strength, strictly positive.
    pub lambda: f64,
    pub budget: IterationBudget,
    /// Marginal-residual tolerance; only consulted in unbounded mode.
    pub tolerance: f64,
}

impl SinkhornConfig {
    /// Run until convergence at the default tolerance.
    pub fn converged(lambda: f64) -> Self {
        Self {
            lambda,
            budget: IterationBudget::Unbounded,
            tolerance: DEFAULT_TOLERANCE,
        }
    }

    /// Run exactly `iterations` iterations.
    pub fn bounded(lambda: f64, iterations: usize) -> Self {
        Self {
            lambda,
            budget: IterationBudget::Fixed(iterations),
            tolerance: DEFAULT_TOLERANCE,
        }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidLambda {
                expected: "> 0",
                got: self.lambda,
            });
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "sinkhorn tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if let IterationBudget::Fixed(0) = self.budget {
            return Err(Error::InvalidConfig(
                "bounded sinkhorn needs at least one iteration".into(),
            ));
        }
        Ok(())
    }
}

/// Pairwise cost matrix between the atoms of two measures.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    entries: Array2<f64>,
    max_entry: f64,
}

impl CostMatrix {
    /// Squared Euclidean costs `c_ij = ‖x_i − y_j‖²`.
    pub fn squared_euclidean(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<Self> {
        if a.dim() != b.dim() {
            return Err(Error::DimensionMismatch(a.dim(), b.dim()));
        }
        let entries = squared_euclidean_entries(a.points(), b.points());
        Ok(Self::from_entries(entries))
    }

    /// Inner-product costs `s_ij = −2⟨x_i, y_j⟩`, the expansion of the
    /// squared Euclidean cost with the squared norms removed.
    pub fn inner_product(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<Self> {
        if a.dim() != b.dim() {
            return Err(Error::DimensionMismatch(a.dim(), b.dim()));
        }
        let (i, j) = (a.num_atoms(), b.num_atoms());
        let mut entries = Array2::zeros((i, j));
        for (xi, mut row) in a.points().axis_iter(Axis(0)).zip(entries.axis_iter_mut(Axis(0))) {
            for (yj, e) in b.points().axis_iter(Axis(0)).zip(row.iter_mut()) {
                *e = -2.0 * xi.iter().zip(yj.iter()).map(|(x, y)| x * y).sum::<f64>();
            }
        }
        Ok(Self::from_entries(entries))
    }

    pub(crate) fn from_entries(entries: Array2<f64>) -> Self {
        let max_entry = entries.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self { entries, max_entry }
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    /// `‖c‖_∞ = max_ij c_ij`. For atoms inside `B(0, R)` this is at most
    /// `4R²`, but the stored per-instance value gives the tighter
    /// iteration-error bound `‖c‖²_∞ / (λℓ)`.
    pub fn max_entry(&self) -> f64 {
        self.max_entry
    }
}

pub(crate) fn squared_euclidean_entries(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
) -> Array2<f64> {
    let (i, j) = (x.nrows(), y.nrows());
    let mut entries = Array2::zeros((i, j));
    for (xi, mut row) in x.axis_iter(Axis(0)).zip(entries.axis_iter_mut(Axis(0))) {
        for (yj, e) in y.axis_iter(Axis(0)).zip(row.iter_mut()) {
            *e = xi
                .iter()
                .zip(yj.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
    }
    entries
}

/// Dual potentials and value of a (possibly truncated) Sinkhorn run.
#[derive(Debug, Clone)]
pub struct DualSolution {
    /// Potential on the first measure, one entry per atom.
    pub phi: Array1<f64>,
    /// Potential on the second measure.
    pub psi: Array1<f64>,
    /// `Σ_i μ_i φ_i + Σ_j ν_j ψ_j`, the regularized cost read at `(φ, ψ)`.
    pub cost: f64,
    /// Number of iterations actually performed.
    pub iterations: usize,
    /// L1 deviation of the implied plan's marginals from `(μ, ν)`.
    pub marginal_residual: f64,
    pub lambda: f64,
    /// Set when unbounded mode stopped on the stall guard instead of the
    /// tolerance; the potentials are the best float arithmetic can do.
    pub stalled: bool,
}

/// Sequential weighted sum; the cost field is defined by this exact
/// summation order.
fn weighted_sum(values: &Array1<f64>, weights: &Array1<f64>) -> f64 {
    values.iter().zip(weights.iter()).map(|(v, w)| v * w).sum()
}

fn validate_weights(w: &Array1<f64>) -> Result<Array1<f64>> {
    if w.iter().any(|x| *x <= 0.0 || !x.is_finite()) {
        return Err(Error::ZeroWeightAtom);
    }
    Ok(w.mapv(f64::ln))
}

/// One half-iteration: out_i = −λ·LSE_j[(ψ_j − c_ij)/λ + log w_j], row
/// oriented (sequential memory access).
fn row_update(
    cost: &Array2<f64>,
    psi: &Array1<f64>,
    log_w: &Array1<f64>,
    lambda: f64,
    out: &mut Array1<f64>,
) {
    let shifted: Vec<f64> = psi
        .iter()
        .zip(log_w.iter())
        .map(|(p, lw)| p / lambda + lw)
        .collect();
    for (row, o) in cost.axis_iter(Axis(0)).zip(out.iter_mut()) {
        let mut m = f64::NEG_INFINITY;
        for (c, s) in row.iter().zip(&shifted) {
            let v = s - c / lambda;
            if v > m {
                m = v;
            }
        }
        let mut sum = 0.0;
        for (c, s) in row.iter().zip(&shifted) {
            sum += (s - c / lambda - m).exp();
        }
        *o = -lambda * (m + sum.ln());
    }
}

/// One half-iteration over columns: out_j = −λ·LSE_i[(φ_i − c_ij)/λ + log w_i].
/// Two row-major passes (max, then sum) keep memory access sequential.
fn col_update(
    cost: &Array2<f64>,
    phi: &Array1<f64>,
    log_w: &Array1<f64>,
    lambda: f64,
    out: &mut Array1<f64>,
) {
    let shifted: Vec<f64> = phi
        .iter()
        .zip(log_w.iter())
        .map(|(p, lw)| p / lambda + lw)
        .collect();
    let j = cost.ncols();
    let mut maxes = vec![f64::NEG_INFINITY; j];
    for (row, s) in cost.axis_iter(Axis(0)).zip(&shifted) {
        for (c, m) in row.iter().zip(maxes.iter_mut()) {
            let v = s - c / lambda;
            if v > *m {
                *m = v;
            }
        }
    }
    let mut sums = vec![0.0; j];
    for (row, s) in cost.axis_iter(Axis(0)).zip(&shifted) {
        for ((c, m), acc) in row.iter().zip(&maxes).zip(sums.iter_mut()) {
            *acc += (s - c / lambda - *m).exp();
        }
    }
    for ((o, m), s) in out.iter_mut().zip(&maxes).zip(&sums) {
        *o = -lambda * (m + s.ln());
    }
}

/// Row-marginal L1 residual given the freshly recomputed c-transform
/// `phi_next` of the current `psi`: after a `ψ` update the column
/// marginals match by construction, so the row deviation is the whole
/// residual.
fn row_residual(phi: &Array1<f64>, phi_next: &Array1<f64>, mu: &Array1<f64>, lambda: f64) -> f64 {
    phi.iter()
        .zip(phi_next.iter())
        .zip(mu.iter())
        .map(|((p, pn), m)| (m * ((p - pn) / lambda).exp() - m).abs())
        .sum()
}

fn check_finite(v: &Array1<f64>) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("sinkhorn potentials"));
    }
    Ok(())
}

/// Log-domain Sinkhorn on an explicit cost matrix. `init_psi` warm-starts
/// the `ψ` potential; pass `None` for the defining `ψ⁰ = 0` start (bounded
/// budgets must, or the reported `ℓ`-iteration value loses its meaning).
pub(crate) fn sinkhorn_core(
    cost: &Array2<f64>,
    mu: &Array1<f64>,
    nu: &Array1<f64>,
    cfg: &SinkhornConfig,
    init_psi: Option<&Array1<f64>>,
) -> Result<DualSolution> {
    cfg.validate()?;
    let (i, j) = cost.dim();
    if mu.len() != i || nu.len() != j {
        return Err(Error::DimensionMismatch(mu.len(), i));
    }
    let log_mu = validate_weights(mu)?;
    let log_nu = validate_weights(nu)?;
    let lambda = cfg.lambda;

    let mut psi = match init_psi {
        Some(p) if p.len() == j => p.clone(),
        Some(p) => return Err(Error::DimensionMismatch(p.len(), j)),
        None => Array1::zeros(j),
    };
    let mut phi = Array1::zeros(i);
    let mut phi_next = Array1::zeros(i);

    let mut iterations = 0usize;
    let mut residual;
    let mut stalled = false;

    match cfg.budget {
        IterationBudget::Fixed(ell) => {
            for _ in 0..ell {
                row_update(cost, &psi, &log_nu, lambda, &mut phi);
                col_update(cost, &phi, &log_mu, lambda, &mut psi);
                iterations += 1;
                check_finite(&phi)?;
                check_finite(&psi)?;
            }
            row_update(cost, &psi, &log_nu, lambda, &mut phi_next);
            residual = row_residual(&phi, &phi_next, mu, lambda);
        }
        IterationBudget::Unbounded => {
            let mut best = f64::INFINITY;
            let mut since_improvement = 0usize;
            loop {
                row_update(cost, &psi, &log_nu, lambda, &mut phi);
                col_update(cost, &phi, &log_mu, lambda, &mut psi);
                iterations += 1;
                check_finite(&phi)?;
                check_finite(&psi)?;
                row_update(cost, &psi, &log_nu, lambda, &mut phi_next);
                residual = row_residual(&phi, &phi_next, mu, lambda);
                if residual <= cfg.tolerance {
                    break;
                }
                if best - residual >= STALL_IMPROVEMENT {
                    best = residual;
                    since_improvement = 0;
                } else {
                    since_improvement += 1;
                    if since_improvement >= STALL_WINDOW {
                        stalled = true;
                        break;
                    }
                }
            }
        }
    }

    let cost_value = weighted_sum(&phi, mu) + weighted_sum(&psi, nu);
    Ok(DualSolution {
        phi,
        psi,
        cost: cost_value,
        iterations,
        marginal_residual: residual,
        lambda,
        stalled,
    })
}

/// Symmetric fixed-point solver for the self term `W_λ(a, a)`:
/// `ψ ← ½(ψ + ψ^{c,λ}_a)`. Each averaged update counts as one iteration.
pub(crate) fn sinkhorn_symmetric_core(
    cost: &Array2<f64>,
    w: &Array1<f64>,
    cfg: &SinkhornConfig,
    init_psi: Option<&Array1<f64>>,
) -> Result<DualSolution> {
    cfg.validate()?;
    let n = w.len();
    if cost.dim() != (n, n) {
        return Err(Error::DimensionMismatch(cost.nrows(), n));
    }
    let log_w = validate_weights(w)?;
    let lambda = cfg.lambda;

    let mut psi = match init_psi {
        Some(p) if p.len() == n => p.clone(),
        Some(p) => return Err(Error::DimensionMismatch(p.len(), n)),
        None => Array1::zeros(n),
    };
    let mut transformed = Array1::zeros(n);

    let mut iterations = 0usize;
    let mut residual;
    let mut stalled = false;
    let mut best = f64::INFINITY;
    let mut since_improvement = 0usize;

    loop {
        row_update(cost, &psi, &log_w, lambda, &mut transformed);
        // Symmetric residual: both marginals deviate identically.
        residual = 2.0 * row_residual(&psi, &transformed, w, lambda);
        match cfg.budget {
            IterationBudget::Fixed(ell) => {
                if iterations == ell {
                    break;
                }
            }
            IterationBudget::Unbounded => {
                if iterations > 0 && residual <= cfg.tolerance {
                    break;
                }
                if best - residual >= STALL_IMPROVEMENT {
                    best = residual;
                    since_improvement = 0;
                } else if iterations > 0 {
                    since_improvement += 1;
                    if since_improvement >= STALL_WINDOW {
                        stalled = true;
                        break;
                    }
                }
            }
        }
        for (p, t) in psi.iter_mut().zip(transformed.iter()) {
            *p = 0.5 * (*p + *t);
        }
        iterations += 1;
        check_finite(&psi)?;
    }

    let cost_value = weighted_sum(&psi, w) + weighted_sum(&psi, w);
    Ok(DualSolution {
        phi: psi.clone(),
        psi,
        cost: cost_value,
        iterations,
        marginal_residual: residual,
        lambda,
        stalled,
    })
}

/// Regularized OT between two measures under the squared Euclidean cost.
///
/// Both measures must carry strictly positive weights; filter zero-weight
/// atoms with [`DiscreteMeasure::retain_positive`] first.
pub fn sinkhorn(
    a: &DiscreteMeasure,
    b: &DiscreteMeasure,
    cfg: &SinkhornConfig,
) -> Result<DualSolution> {
    let cost = CostMatrix::squared_euclidean(a, b)?;
    let mu = a.weights().to_owned();
    let nu = b.weights().to_owned();
    sinkhorn_core(cost.entries(), &mu, &nu, cfg, None)
}

/// Self term `W_λ(a, a)` via the symmetric fixed-point iteration.
pub fn sinkhorn_symmetric(a: &DiscreteMeasure, cfg: &SinkhornConfig) -> Result<DualSolution> {
    let cost = CostMatrix::squared_euclidean(a, a)?;
    let w = a.weights().to_owned();
    sinkhorn_symmetric_core(cost.entries(), &w, cfg, None)
}

/// Sinkhorn divergence `S_λ(a,b) = W_λ(a,b) − ½(W_λ(a,a) + W_λ(b,b))`
/// together with the three dual solutions behind it.
#[derive(Debug, Clone)]
pub struct SinkhornDivergence {
    pub value: f64,
    pub cross: DualSolution,
    pub self_a: DualSolution,
    pub self_b: DualSolution,
}

/// Debiased regularized OT. With a bounded budget every term runs the same
/// number of iterations, realizing the finite-`ℓ` divergence
/// `S_λ^(ℓ) = W_λ^(ℓ)(a,b) − ½(W_λ^(ℓ)(a,a) + W_λ^(ℓ)(b,b))`.
///
/// When `a` and `b` are the same measure the three terms coincide and the
/// divergence is zero by its own algebra; that case is detected exactly
/// (bitwise-equal atoms and weights) and computed with a single symmetric
/// solve.
pub fn sinkhorn_divergence(
    a: &DiscreteMeasure,
    b: &DiscreteMeasure,
    cfg: &SinkhornConfig,
) -> Result<SinkhornDivergence> {
    if a == b {
        let sym = sinkhorn_symmetric(a, cfg)?;
        return Ok(SinkhornDivergence {
            value: 0.0,
            cross: sym.clone(),
            self_a: sym.clone(),
            self_b: sym,
        });
    }
    let cross = sinkhorn(a, b, cfg)?;
    let self_a = sinkhorn_symmetric(a, cfg)?;
    let self_b = sinkhorn_symmetric(b, cfg)?;
    let value = cross.cost - 0.5 * (self_a.cost + self_b.cost);
    Ok(SinkhornDivergence {
        value,
        cross,
        self_a,
        self_b,
    })
}

/// The (soft or hard) c-transform of a potential `ψ` living on `b`,
/// evaluated at arbitrary query points:
///
/// * `λ > 0`: `ψ^{c,λ}(x) = −λ log Σ_j exp(−(‖x−y_j‖² − ψ_j)/λ) b_j`
/// * `λ = 0`: `ψ^c(x) = min_j { ‖x−y_j‖² − ψ_j }`
///
/// The formula extrapolates the potential to all of `R^d`, which is what
/// lets gradients re-enter classes whose atoms were filtered out.
pub fn c_transform(
    psi: &Array1<f64>,
    b: &DiscreteMeasure,
    query_points: ArrayView2<'_, f64>,
    lambda: f64,
) -> Result<Array1<f64>> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::InvalidLambda {
            expected: ">= 0",
            got: lambda,
        });
    }
    if psi.len() != b.num_atoms() {
        return Err(Error::DimensionMismatch(psi.len(), b.num_atoms()));
    }
    if query_points.ncols() != b.dim() {
        return Err(Error::DimensionMismatch(query_points.ncols(), b.dim()));
    }
    if psi.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("c-transform potential"));
    }
    let cost = squared_euclidean_entries(query_points, b.points());
    let mut out = Array1::zeros(query_points.nrows());
    if lambda > 0.0 {
        let nu = b.weights().to_owned();
        let log_nu = validate_weights(&nu)?;
        row_update(&cost, psi, &log_nu, lambda, &mut out);
    } else {
        for (row, o) in cost.axis_iter(Axis(0)).zip(out.iter_mut()) {
            *o = row
                .iter()
                .zip(psi.iter())
                .map(|(c, p)| c - p)
                .fold(f64::INFINITY, f64::min);
        }
    }
    Ok(out)
}

/// The s-transform of a potential `φ` on `μ` for the inner-product cost
/// `s(x,y) = −2⟨x,y⟩`:
///
/// * `λ > 0`: `φ^{s,λ}_μ(y) = −λ log ∫ exp((φ(x) + 2⟨x,y⟩)/λ) dμ(x)`
/// * `λ = 0`: `−max_x (φ(x) + 2⟨x,y⟩)` over the support of `μ`
///
/// Concave and `R`-Lipschitz on `B(0, R)` for any `λ ≥ 0`.
pub fn s_transform(
    phi: &Array1<f64>,
    mu: &DiscreteMeasure,
    query_points: ArrayView2<'_, f64>,
    lambda: f64,
) -> Result<Array1<f64>> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::InvalidLambda {
            expected: ">= 0",
            got: lambda,
        });
    }
    if phi.len() != mu.num_atoms() {
        return Err(Error::DimensionMismatch(phi.len(), mu.num_atoms()));
    }
    if query_points.ncols() != mu.dim() {
        return Err(Error::DimensionMismatch(query_points.ncols(), mu.dim()));
    }
    let mut out = Array1::zeros(query_points.nrows());
    for (y, o) in query_points.axis_iter(Axis(0)).zip(out.iter_mut()) {
        if lambda > 0.0 {
            let mut m = f64::NEG_INFINITY;
            let mut terms = Vec::with_capacity(mu.num_atoms());
            for ((x, p), w) in mu
                .points()
                .axis_iter(Axis(0))
                .zip(phi.iter())
                .zip(mu.weights().iter())
            {
                let dot: f64 = x.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
                let v = (p + 2.0 * dot) / lambda + w.ln();
                terms.push(v);
                if v > m {
                    m = v;
                }
            }
            let sum: f64 = terms.iter().map(|v| (v - m).exp()).sum();
            *o = -lambda * (m + sum.ln());
        } else {
            *o = -mu
                .points()
                .axis_iter(Axis(0))
                .zip(phi.iter())
                .map(|(x, p)| p + 2.0 * x.iter().zip(y.iter()).map(|(a, b)| a * b).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max);
        }
    }
    Ok(out)
}

/// Semi-dual objective `∫ ψ^{c,λ}_b dа + ∫ ψ db`. Equals `W_λ(a, b)` when
/// `ψ` is an optimal potential, and never exceeds it (weak duality).
pub fn semidual_value(
    psi: &Array1<f64>,
    a: &DiscreteMeasure,
    b: &DiscreteMeasure,
    lambda: f64,
) -> Result<f64> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidLambda {
            expected: "> 0",
            got: lambda,
        });
    }
    let transform = c_transform(psi, b, a.points(), lambda)?;
    let a_w = a.weights().to_owned();
    let b_w = b.weights().to_owned();
    Ok(weighted_sum(&transform, &a_w) + weighted_sum(psi, &b_w))
}

/// Checks the quadratic-expansion identity
/// `W_λ(a,b) = ∫‖x‖²da + ∫‖y‖²db + W_λ^s(a,b)` where `W_λ^s` is the
/// regularized cost for `s(x,y) = −2⟨x,y⟩`. Returns `(lhs, rhs)`, both
/// converged at the config tolerance.
pub fn s_cost_identity_check(
    a: &DiscreteMeasure,
    b: &DiscreteMeasure,
    lambda: f64,
    cfg: &SinkhornConfig,
) -> Result<(f64, f64)> {
    let cfg = SinkhornConfig {
        lambda,
        budget: IterationBudget::Unbounded,
        tolerance: cfg.tolerance,
    };
    let lhs = sinkhorn(a, b, &cfg)?.cost;
    let s_cost = CostMatrix::inner_product(a, b)?;
    let mu = a.weights().to_owned();
    let nu = b.weights().to_owned();
    let ws = sinkhorn_core(s_cost.entries(), &mu, &nu, &cfg, None)?.cost;
    let rhs = a.second_moment() + b.second_moment() + ws;
    Ok((lhs, rhs))
}

/// Checks the rescaling identity `W_λ(a,b) = λ·W_1(T_λ#a, T_λ#b)` with
/// `T_λ : x ↦ λ^{−1/2} x`. Returns `(lhs, rhs)`, both converged.
pub fn rescaling_check(
    a: &DiscreteMeasure,
    b: &DiscreteMeasure,
    lambda: f64,
    cfg: &SinkhornConfig,
) -> Result<(f64, f64)> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidLambda {
            expected: "> 0",
            got: lambda,
        });
    }
    let cfg_lambda = SinkhornConfig {
        lambda,
        budget: IterationBudget::Unbounded,
        tolerance: cfg.tolerance,
    };
    let lhs = sinkhorn(a, b, &cfg_lambda)?.cost;
    let scale = lambda.powf(-0.5);
    let ta = a.scale_points(scale);
    let tb = b.scale_points(scale);
    let cfg_unit = SinkhornConfig {
        lambda: 1.0,
        budget: IterationBudget::Unbounded,
        tolerance: cfg.tolerance,
    };
    let rhs = lambda * sinkhorn(&ta, &tb, &cfg_unit)?.cost;
    Ok((lhs, rhs))
}

/// The transport plan implied by dual potentials:
/// `π_ij = exp((φ_i + ψ_j − c_ij)/λ) μ_i ν_j`.
pub fn implied_plan(
    cost: &Array2<f64>,
    mu: &Array1<f64>,
    nu: &Array1<f64>,
    solution: &DualSolution,
) -> Array2<f64> {
    let (i, j) = cost.dim();
    let mut plan = Array2::zeros((i, j));
    for ii in 0..i {
        for jj in 0..j {
            plan[[ii, jj]] = ((solution.phi[ii] + solution.psi[jj] - cost[[ii, jj]])
                / solution.lambda)
                .exp()
                * mu[ii]
                * nu[jj];
        }
    }
    plan
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::SeededRng;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn random_measure(rng: &mut SeededRng, n: usize, d: usize, radius: f64) -> DiscreteMeasure {
        let mut pts = Array2::zeros((n, d));
        for mut row in pts.axis_iter_mut(Axis(0)) {
            loop {
                for x in row.iter_mut() {
                    *x = radius * (2.0 * rng.uniform() - 1.0);
                }
                if row.iter().map(|x| x * x).sum::<f64>() <= radius * radius {
                    break;
                }
            }
        }
        DiscreteMeasure::uniform(pts).unwrap()
    }

    /// Independent oracle: Sinkhorn in plan space, scaling the Gibbs
    /// kernel `K_ij = exp(−c_ij/λ)` with `u ← μ/(Kv)`, `v ← ν/(Kᵀu)`, and
    /// reading the primal value `⟨c,π⟩ + λ·KL(π | μ⊗ν)` at the fixed
    /// point. Only usable where `exp(−c/λ)` does not underflow.
    fn plan_space_value(
        a: &DiscreteMeasure,
        b: &DiscreteMeasure,
        lambda: f64,
        sweeps: usize,
    ) -> f64 {
        let c = CostMatrix::squared_euclidean(a, b).unwrap();
        let (i, j) = c.entries().dim();
        let k = c.entries().mapv(|x| (-x / lambda).exp());
        let mu = a.weights();
        let nu = b.weights();
        let mut u = Array1::<f64>::ones(i);
        let mut v = Array1::<f64>::ones(j);
        for _ in 0..sweeps {
            let kv = k.dot(&v);
            for (ui, (m, kvi)) in u.iter_mut().zip(mu.iter().zip(kv.iter())) {
                *ui = m / kvi;
            }
            let ktu = k.t().dot(&u);
            for (vj, (n, ktuj)) in v.iter_mut().zip(nu.iter().zip(ktu.iter())) {
                *vj = n / ktuj;
            }
        }
        let mut value = 0.0;
        for ii in 0..i {
            for jj in 0..j {
                let pij = u[ii] * k[[ii, jj]] * v[jj];
                if pij > 0.0 {
                    value += pij * c.entries()[[ii, jj]]
                        + lambda * pij * (pij / (mu[ii] * nu[jj])).ln();
                }
            }
        }
        value
    }

    #[test]
    fn cost_matrix_examples() {
        let z = DiscreteMeasure::dirac(&[0.0]).unwrap();
        let c = CostMatrix::squared_euclidean(&z, &z).unwrap();
        assert_eq!(c.entries()[[0, 0]], 0.0);

        let three = DiscreteMeasure::dirac(&[3.0]).unwrap();
        let c = CostMatrix::squared_euclidean(&z, &three).unwrap();
        assert_eq!(c.entries()[[0, 0]], 9.0);
        assert_eq!(c.max_entry(), 9.0);

        // Hand-computed 2x1 case.
        let a = DiscreteMeasure::uniform(array![[0.0, 0.0], [1.0, 1.0]]).unwrap();
        let b = DiscreteMeasure::dirac(&[1.0, 0.0]).unwrap();
        let c = CostMatrix::squared_euclidean(&a, &b).unwrap();
        assert_eq!(c.entries()[[0, 0]], 1.0);
        assert_eq!(c.entries()[[1, 0]], 1.0);
    }

    #[test]
    fn cost_matrix_symmetric_under_swap() {
        let mut rng = SeededRng::new(11);
        let a = random_measure(&mut rng, 4, 3, 1.0);
        let b = random_measure(&mut rng, 5, 3, 1.0);
        let cab = CostMatrix::squared_euclidean(&a, &b).unwrap();
        let cba = CostMatrix::squared_euclidean(&b, &a).unwrap();
        assert_eq!(cab.entries().t(), cba.entries().view());
        assert!(cab.entries().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn cost_matrix_rejects_dimension_mismatch() {
        let a = DiscreteMeasure::dirac(&[0.0]).unwrap();
        let b = DiscreteMeasure::dirac(&[0.0, 1.0]).unwrap();
        assert!(CostMatrix::squared_euclidean(&a, &b).is_err());
    }

    #[test]
    fn sinkhorn_single_atom_pair_is_exact() {
        let x = DiscreteMeasure::dirac(&[0.3, -0.7]).unwrap();
        for ell in [1, 3] {
            let sol = sinkhorn(&x, &x, &SinkhornConfig::bounded(0.7, ell)).unwrap();
            assert_eq!(sol.phi[0], 0.0);
            assert_eq!(sol.psi[0], 0.0);
            assert_eq!(sol.cost, 0.0);
            assert_eq!(sol.iterations, ell);
        }
    }

    #[test]
    fn sinkhorn_dirac_pair_costs_squared_distance() {
        let a = DiscreteMeasure::dirac(&[0.0, 0.0, 0.0]).unwrap();
        let b = DiscreteMeasure::dirac(&[1.0, 2.0, -2.0]).unwrap();
        for lambda in [0.05, 0.5, 3.0] {
            for ell in [1, 2, 7] {
                let sol = sinkhorn(&a, &b, &SinkhornConfig::bounded(lambda, ell)).unwrap();
                assert_abs_diff_eq!(sol.cost, 9.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn sinkhorn_matches_plan_space_oracle() {
        let mut rng = SeededRng::new(5);
        let a = random_measure(&mut rng, 3, 2, 1.0);
        let b = random_measure(&mut rng, 3, 2, 1.0);
        let lambda = 0.5;
        let sol = sinkhorn(&a, &b, &SinkhornConfig::converged(lambda).with_tolerance(1e-12))
            .unwrap();
        let oracle = plan_space_value(&a, &b, lambda, 4000);
        assert_abs_diff_eq!(sol.cost, oracle, epsilon = 1e-8);
    }

    #[test]
    fn sinkhorn_cost_is_stored_dual_pairing() {
        let mut rng = SeededRng::new(6);
        let a = random_measure(&mut rng, 4, 2, 1.0);
        let b = random_measure(&mut rng, 5, 2, 1.0);
        let sol = sinkhorn(&a, &b, &SinkhornConfig::bounded(0.3, 4)).unwrap();
        let recomputed: f64 = sol
            .phi
            .iter()
            .zip(a.weights().iter())
            .map(|(p, w)| p * w)
            .sum::<f64>()
            + sol
                .psi
                .iter()
                .zip(b.weights().iter())
                .map(|(p, w)| p * w)
                .sum::<f64>();
        assert_eq!(sol.cost, recomputed);
        assert!(sol.marginal_residual >= 0.0);
    }

    #[test]
    fn sinkhorn_rejects_bad_inputs() {
        let a = DiscreteMeasure::dirac(&[0.0]).unwrap();
        assert!(matches!(
            sinkhorn(&a, &a, &SinkhornConfig::converged(0.0)),
            Err(Error::InvalidLambda { .. })
        ));
        assert!(matches!(
            sinkhorn(&a, &a, &SinkhornConfig::converged(-1.0)),
            Err(Error::InvalidLambda { .. })
        ));
        let zero_weight = DiscreteMeasure::new(
            array![[0.0], [1.0]],
            array![1.0, 0.0],
        )
        .unwrap();
        assert!(matches!(
            sinkhorn(&zero_weight, &a, &SinkhornConfig::converged(0.5)),
            Err(Error::ZeroWeightAtom)
        ));
    }

    #[test]
    fn row_step_marginals_are_exact() {
        // After a φ update the implied plan's row sums equal μ by the
        // log-sum-exp identity; checked through the public c-transform.
        let mut rng = SeededRng::new(7);
        let a = random_measure(&mut rng, 5, 2, 1.0);
        let b = random_measure(&mut rng, 4, 2, 1.0);
        let lambda = 0.4;
        let psi: Array1<f64> = (0..4).map(|_| rng.uniform() - 0.5).collect();
        let phi = c_transform(&psi, &b, a.points(), lambda).unwrap();
        let c = CostMatrix::squared_euclidean(&a, &b).unwrap();
        for (i, (row, w)) in c
            .entries()
            .axis_iter(Axis(0))
            .zip(a.weights().iter())
            .enumerate()
        {
            let row_sum: f64 = row
                .iter()
                .zip(psi.iter())
                .zip(b.weights().iter())
                .map(|((cij, pj), nj)| ((phi[i] + pj - cij) / lambda).exp() * w * nj)
                .sum();
            assert_abs_diff_eq!(row_sum, *w, epsilon = 1e-10);
        }
    }

    #[test]
    fn residual_is_monotone_nonincreasing() {
        let mut rng = SeededRng::new(8);
        let a = random_measure(&mut rng, 6, 2, 1.0);
        let b = random_measure(&mut rng, 5, 2, 1.0);
        for lambda in [0.1, 0.5] {
            let mut last = f64::INFINITY;
            for ell in 1..=25 {
                let sol = sinkhorn(&a, &b, &SinkhornConfig::bounded(lambda, ell)).unwrap();
                assert!(
                    sol.marginal_residual <= last * (1.0 + 1e-12) + 1e-15,
                    "residual rose at ell={ell}: {} -> {}",
                    last,
                    sol.marginal_residual
                );
                last = sol.marginal_residual;
            }
        }
    }

    #[test]
    fn iteration_error_bound_holds() {
        let mut rng = SeededRng::new(9);
        let a = random_measure(&mut rng, 6, 2, 1.0);
        let b = random_measure(&mut rng, 6, 2, 1.0);
        let c = CostMatrix::squared_euclidean(&a, &b).unwrap();
        for lambda in [0.1, 0.5] {
            let converged = sinkhorn(&a, &b, &SinkhornConfig::converged(lambda)).unwrap();
            for ell in [1usize, 5, 20] {
                let truncated = sinkhorn(&a, &b, &SinkhornConfig::bounded(lambda, ell)).unwrap();
                let bound = c.max_entry() * c.max_entry() / (lambda * ell as f64);
                assert!(
                    (truncated.cost - converged.cost).abs() <= bound,
                    "|W^(ell) - W| = {} > {bound}",
                    (truncated.cost - converged.cost).abs()
                );
            }
        }
    }

    #[test]
    fn translation_invariance_exact_on_dyadic_data() {
        // Dyadic coordinates and a dyadic shift keep the cost matrix
        // bit-identical, so the whole run is bit-identical.
        let a = DiscreteMeasure::uniform(array![[0.25, -0.5], [0.75, 0.125]]).unwrap();
        let b = DiscreteMeasure::uniform(array![[0.5, 0.0], [-0.25, 1.0], [0.0, 0.5]]).unwrap();
        let t = [2.0, -4.0];
        let cfg = SinkhornConfig::converged(0.3);
        let plain = sinkhorn(&a, &b, &cfg).unwrap();
        let shifted = sinkhorn(&a.translate(&t).unwrap(), &b.translate(&t).unwrap(), &cfg).unwrap();
        assert_eq!(plain.cost, shifted.cost);
        assert_eq!(plain.iterations, shifted.iterations);
    }

    #[test]
    fn divergence_examples() {
        let mut rng = SeededRng::new(10);
        let a = random_measure(&mut rng, 4, 2, 1.0);
        let b = random_measure(&mut rng, 4, 2, 1.0);
        let cfg = SinkhornConfig::converged(0.2);

        // Identical inputs collapse to zero by the definition's algebra.
        let same = sinkhorn_divergence(&a, &a, &cfg).unwrap();
        assert_eq!(same.value, 0.0);

        // Dirac pair: both self terms vanish.
        let z = DiscreteMeasure::dirac(&[0.0, 0.0]).unwrap();
        let y = DiscreteMeasure::dirac(&[0.6, -0.8]).unwrap();
        let div = sinkhorn_divergence(&z, &y, &cfg).unwrap();
        assert_abs_diff_eq!(div.value, 1.0, epsilon = 1e-9);

        // Composition matches the three separate solves it is made of.
        let div = sinkhorn_divergence(&a, &b, &cfg).unwrap();
        let w_ab = sinkhorn(&a, &b, &cfg).unwrap().cost;
        let w_aa = sinkhorn_symmetric(&a, &cfg).unwrap().cost;
        let w_bb = sinkhorn_symmetric(&b, &cfg).unwrap().cost;
        assert_abs_diff_eq!(div.value, w_ab - 0.5 * (w_aa + w_bb), epsilon = 1e-10);
    }

    #[test]
    fn symmetric_solver_agrees_with_alternating_at_convergence() {
        let mut rng = SeededRng::new(12);
        let a = random_measure(&mut rng, 5, 2, 1.0);
        let cfg = SinkhornConfig::converged(0.3).with_tolerance(1e-11);
        let sym = sinkhorn_symmetric(&a, &cfg).unwrap();
        let alt = sinkhorn(&a, &a, &cfg).unwrap();
        assert_abs_diff_eq!(sym.cost, alt.cost, epsilon = 1e-8);
    }

    #[test]
    fn c_transform_examples() {
        // ψ ≡ 0 against a Dirac evaluates the squared distance, hard or soft.
        let b = DiscreteMeasure::dirac(&[1.0, 1.0]).unwrap();
        let psi = array![0.0];
        let q = array![[0.0, 0.0], [2.0, 1.0]];
        let hard = c_transform(&psi, &b, q.view(), 0.0).unwrap();
        assert_eq!(hard[0], 2.0);
        assert_eq!(hard[1], 1.0);
        let soft = c_transform(&psi, &b, q.view(), 0.7).unwrap();
        assert_abs_diff_eq!(soft[0], 2.0, epsilon = 1e-12);

        assert!(c_transform(&psi, &b, q.view(), -0.1).is_err());
    }

    #[test]
    fn c_transform_soft_approaches_hard_min() {
        let mut rng = SeededRng::new(13);
        let b = random_measure(&mut rng, 6, 2, 1.0);
        let psi: Array1<f64> = (0..6).map(|_| rng.uniform() - 0.5).collect();
        let queries = random_measure(&mut rng, 5, 2, 1.0);
        let hard = c_transform(&psi, &b, queries.points(), 0.0).unwrap();
        let soft = c_transform(&psi, &b, queries.points(), 1e-6).unwrap();
        for (h, s) in hard.iter().zip(soft.iter()) {
            assert_abs_diff_eq!(h, s, epsilon = 1e-4);
        }
    }

    #[test]
    fn c_transform_shifts_by_negated_constant() {
        let mut rng = SeededRng::new(14);
        let b = random_measure(&mut rng, 4, 2, 1.0);
        let psi: Array1<f64> = (0..4).map(|_| rng.uniform()).collect();
        let shifted = &psi + 0.37;
        let queries = random_measure(&mut rng, 3, 2, 1.0);
        let base = c_transform(&psi, &b, queries.points(), 0.5).unwrap();
        let moved = c_transform(&shifted, &b, queries.points(), 0.5).unwrap();
        for (u, v) in base.iter().zip(moved.iter()) {
            assert_abs_diff_eq!(*v, u - 0.37, epsilon = 1e-12);
        }
    }

    #[test]
    fn semidual_examples() {
        // ψ ≡ 0 on a single-atom pair reads the squared distance.
        let a = DiscreteMeasure::dirac(&[0.0]).unwrap();
        let b = DiscreteMeasure::dirac(&[2.0]).unwrap();
        let v = semidual_value(&array![0.0], &a, &b, 0.5).unwrap();
        assert_abs_diff_eq!(v, 4.0, epsilon = 1e-12);

        // At the Sinkhorn fixed point the semi-dual recovers the cost.
        let mut rng = SeededRng::new(15);
        let a = random_measure(&mut rng, 4, 2, 1.0);
        let b = random_measure(&mut rng, 5, 2, 1.0);
        let cfg = SinkhornConfig::converged(0.4).with_tolerance(1e-12);
        let sol = sinkhorn(&a, &b, &cfg).unwrap();
        let v = semidual_value(&sol.psi, &a, &b, 0.4).unwrap();
        assert_abs_diff_eq!(v, sol.cost, epsilon = 1e-9);

        // Weak duality: arbitrary ψ never beats the converged value.
        for trial in 0..10 {
            let psi: Array1<f64> = (0..5).map(|_| 2.0 * rng.uniform() - 1.0).collect();
            let v = semidual_value(&psi, &a, &b, 0.4).unwrap();
            assert!(
                v <= sol.cost + 1e-8,
                "weak duality violated on trial {trial}: {v} > {}",
                sol.cost
            );
        }
    }

    #[test]
    fn s_cost_identity_on_examples() {
        let a = DiscreteMeasure::dirac(&[0.0, 0.0]).unwrap();
        let b = DiscreteMeasure::dirac(&[0.6, 0.8]).unwrap();
        let cfg = SinkhornConfig::converged(0.5);
        let (lhs, rhs) = s_cost_identity_check(&a, &b, 0.5, &cfg).unwrap();
        assert_abs_diff_eq!(lhs, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(rhs, 1.0, epsilon = 1e-9);

        let mut rng = SeededRng::new(16);
        let a = random_measure(&mut rng, 5, 2, 1.0);
        let b = random_measure(&mut rng, 5, 2, 1.0);
        let (lhs, rhs) = s_cost_identity_check(&a, &b, 0.3, &cfg).unwrap();
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-6);

        let (lhs, rhs) = s_cost_identity_check(&a, &a, 0.3, &cfg).unwrap();
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-6);
    }

    #[test]
    fn rescaling_identity_on_examples() {
        let cfg = SinkhornConfig::converged(1.0);
        let a = DiscreteMeasure::dirac(&[0.0]).unwrap();
        let b = DiscreteMeasure::dirac(&[1.5]).unwrap();
        for lambda in [0.25, 1.0, 4.0] {
            let (lhs, rhs) = rescaling_check(&a, &b, lambda, &cfg).unwrap();
            assert_abs_diff_eq!(lhs, 2.25, epsilon = 1e-9);
            assert_abs_diff_eq!(rhs, 2.25, epsilon = 1e-9);
        }

        let mut rng = SeededRng::new(17);
        let a = random_measure(&mut rng, 4, 2, 1.0);
        let b = random_measure(&mut rng, 5, 2, 1.0);
        let (lhs, rhs) = rescaling_check(&a, &b, 0.25, &cfg).unwrap();
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-6);
    }

    #[test]
    fn s_transform_is_concave_and_lipschitz_in_1d() {
        let mut rng = SeededRng::new(18);
        for _ in 0..20 {
            let mu = random_measure(&mut rng, 5, 1, 1.0);
            let phi: Array1<f64> = (0..5).map(|_| rng.uniform() - 0.5).collect();
            for lambda in [0.0, 0.5] {
                let y1 = 2.0 * rng.uniform() - 1.0;
                let y2 = 2.0 * rng.uniform() - 1.0;
                let mid = 0.5 * (y1 + y2);
                let q = Array2::from_shape_vec((3, 1), vec![y1, y2, mid]).unwrap();
                let vals = s_transform(&phi, &mu, q.view(), lambda).unwrap();
                assert!(
                    vals[2] >= 0.5 * (vals[0] + vals[1]) - 1e-10,
                    "midpoint concavity failed at lambda={lambda}"
                );
                // Lipschitz in y with constant 2·max‖x‖ from the 2⟨x,y⟩ term.
                assert!((vals[0] - vals[1]).abs() <= 2.0 * (y1 - y2).abs() + 1e-10);
            }
        }
    }

    #[test]
    fn implied_plan_has_correct_marginals_at_convergence() {
        let mut rng = SeededRng::new(19);
        let a = random_measure(&mut rng, 4, 2, 1.0);
        let b = random_measure(&mut rng, 3, 2, 1.0);
        let cfg = SinkhornConfig::converged(0.5).with_tolerance(1e-12);
        let sol = sinkhorn(&a, &b, &cfg).unwrap();
        let c = CostMatrix::squared_euclidean(&a, &b).unwrap();
        let mu = a.weights().to_owned();
        let nu = b.weights().to_owned();
        let plan = implied_plan(c.entries(), &mu, &nu, &sol);
        for (i, w) in mu.iter().enumerate() {
            assert_abs_diff_eq!(plan.row(i).sum(), *w, epsilon = 1e-10);
        }
        for (j, w) in nu.iter().enumerate() {
            assert_abs_diff_eq!(plan.column(j).sum(), *w, epsilon = 1e-10);
        }
    }
}
