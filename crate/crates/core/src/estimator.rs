//! Class-proportion estimation: projected gradient descent over the
//! simplex minimizing `θ ↦ L(μ̂_θ, ν̂)`.
//!
//! The loss dispatches on [`LossKind`]: the exact cost `W_0` (network
//! simplex), the regularized cost `W_λ` or the Sinkhorn divergence `S_λ`,
//! each optionally truncated to a fixed iteration budget.
//!
//! ## Gradient
//!
//! Writing `μ_θ = Σ_k θ_k μ̂_k`, the envelope theorem applied to the dual
//! gives `∂L/∂θ_k = ⟨φ, μ̂_k⟩` where `φ` is the first dual potential of
//! the dispatched transport problem (the LP dual for `W_0`, hence a
//! subgradient there). For `S_λ` the self-term contributes through the
//! symmetric potential:
//! `∂S_λ/∂θ_k = ⟨φ^{θ,ν}, μ̂_k⟩ − ⟨φ^{θ,θ}_sym, μ̂_k⟩`.
//! Bounded budgets reuse the `ℓ`-iteration potentials as an inexact
//! oracle. Atoms dropped for `θ_k = 0` still receive a potential value
//! through the c-transform extension, so zeroed classes keep a finite
//! gradient and mass can re-enter them.

use std::borrow::Cow;

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::exact;
use crate::measures::{
    project_simplex, DiscreteMeasure, MixtureModel, SimplexVector, ZERO_WEIGHT_THRESHOLD,
};
use crate::ot::{
    self, c_transform, squared_euclidean_entries, DualSolution, IterationBudget, SinkhornConfig,
};

pub use crate::ot::DEFAULT_TOLERANCE;

/// Which transport loss drives the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    /// Exact un-regularized cost.
    W0,
    /// Entropy-regularized cost.
    Wlambda,
    /// Sinkhorn divergence.
    Slambda,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::W0 => "W0",
            LossKind::Wlambda => "Wlambda",
            LossKind::Slambda => "Slambda",
        })
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "w0" => Ok(LossKind::W0),
            "wlambda" => Ok(LossKind::Wlambda),
            "slambda" => Ok(LossKind::Slambda),
            other => Err(Error::InvalidConfig(format!(
                "unknown loss {other:?}; expected W0, Wlambda or Slambda"
            ))),
        }
    }
}

/// A fully specified loss: kind, regularization and iteration policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Required and strictly positive unless `kind` is `W0`.
    pub lambda: Option<f64>,
    /// Ignored for `W0`.
    pub budget: IterationBudget,
}

impl LossSpec {
    pub fn w0() -> Self {
        Self {
            kind: LossKind::W0,
            lambda: None,
            budget: IterationBudget::Unbounded,
        }
    }

    pub fn w_lambda(lambda: f64, budget: IterationBudget) -> Self {
        Self {
            kind: LossKind::Wlambda,
            lambda: Some(lambda),
            budget,
        }
    }

    pub fn s_lambda(lambda: f64, budget: IterationBudget) -> Self {
        Self {
            kind: LossKind::Slambda,
            lambda: Some(lambda),
            budget,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            LossKind::W0 => Ok(()),
            _ => match self.lambda {
                Some(l) if l > 0.0 && l.is_finite() => Ok(()),
                Some(l) => Err(Error::InvalidLambda {
                    expected: "> 0",
                    got: l,
                }),
                None => Err(Error::InvalidConfig(format!(
                    "loss {} requires a lambda",
                    self.kind
                ))),
            },
        }
    }

    fn sinkhorn_config(&self, tolerance: f64) -> SinkhornConfig {
        SinkhornConfig {
            lambda: self.lambda.unwrap_or(f64::NAN),
            budget: self.budget,
            tolerance,
        }
    }
}

/// Projected-gradient-descent parameters.
#[derive(Debug, Clone)]
pub struct DescentConfig {
    /// Initial step size; halved on backtracking.
    pub step_size: f64,
    pub max_outer_iterations: usize,
    /// Stop once the accepted step moves `θ` by less than this.
    pub theta_tolerance: f64,
    /// Backtracking shrink factor in `(0, 1)`.
    pub backtracking_factor: f64,
    pub max_halvings: usize,
    /// Starting point; `None` seeds at the simplex barycenter.
    pub seed_theta: Option<SimplexVector>,
    /// Marginal tolerance handed to unbounded Sinkhorn solves.
    pub sinkhorn_tolerance: f64,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            step_size: 0.05,
            max_outer_iterations: 500,
            theta_tolerance: 1e-6,
            backtracking_factor: 0.5,
            max_halvings: 8,
            seed_theta: None,
            sinkhorn_tolerance: DEFAULT_TOLERANCE,
        }
    }
}

impl DescentConfig {
    fn validate(&self, num_components: usize) -> Result<()> {
        if !(self.step_size > 0.0)
            || !(self.theta_tolerance > 0.0)
            || !(self.sinkhorn_tolerance > 0.0)
            || self.max_outer_iterations == 0
        {
            return Err(Error::InvalidConfig(
                "descent parameters must be positive".into(),
            ));
        }
        if !(self.backtracking_factor > 0.0 && self.backtracking_factor < 1.0) {
            return Err(Error::InvalidConfig(
                "backtracking factor must lie in (0, 1)".into(),
            ));
        }
        if let Some(seed) = &self.seed_theta {
            if seed.len() != num_components {
                return Err(Error::ComponentMismatch {
                    model: num_components,
                    theta: seed.len(),
                });
            }
        }
        Ok(())
    }
}

/// Outcome of a descent run.
#[derive(Debug, Clone)]
pub struct EstimateResult {
    pub theta_hat: SimplexVector,
    /// Accepted loss values, starting at the seed; non-increasing.
    pub loss_trace: Vec<f64>,
    /// Norm of the gradient projected on the simplex tangent space.
    pub gradient_norm_trace: Vec<f64>,
    /// True when the step-size criterion fired before the iteration cap.
    pub converged: bool,
    /// Sinkhorn iterations consumed across every solve of the run.
    pub total_sinkhorn_iterations: usize,
}

/// Loss gradient with diagnostics.
#[derive(Debug, Clone)]
pub struct Gradient {
    pub values: Array1<f64>,
    /// Set when zero-weight atoms were filtered before solving; their
    /// gradient entries come from the c-transform extension.
    pub zero_entry_warning: bool,
    pub sinkhorn_iterations: usize,
}

struct Evaluation {
    value: f64,
    gradient: Array1<f64>,
    sinkhorn_iterations: usize,
    filtered_atoms: bool,
}

/// Shared state for repeated evaluations at different `θ`: concatenated
/// atoms, precomputed cost matrices and warm-start potentials (fixed
/// points do not depend on the start, so warm starts are only used for
/// unbounded budgets).
struct LossEngine<'a> {
    model: &'a MixtureModel,
    target: &'a DiscreteMeasure,
    spec: LossSpec,
    tolerance: f64,
    atoms: Array2<f64>,
    base_weights: Vec<f64>,
    component_of_atom: Vec<usize>,
    cross_cost: Array2<f64>,
    sym_cost: Option<Array2<f64>>,
    /// `W(ν̂, ν̂)` does not depend on `θ`; solved once per engine.
    target_self: Option<DualSolution>,
    warm_cross_psi: Option<Array1<f64>>,
    warm_sym: Option<(Vec<usize>, Array1<f64>)>,
}

impl<'a> LossEngine<'a> {
    fn new(
        model: &'a MixtureModel,
        target: &'a DiscreteMeasure,
        spec: LossSpec,
        tolerance: f64,
    ) -> Result<Self> {
        spec.validate()?;
        if model.dim() != target.dim() {
            return Err(Error::DimensionMismatch(model.dim(), target.dim()));
        }
        let total = model.total_atoms();
        let mut base_weights = Vec::with_capacity(total);
        let mut component_of_atom = Vec::with_capacity(total);
        let mut atoms = Array2::zeros((total, model.dim()));
        let mut row = 0;
        for (k, comp) in model.components().iter().enumerate() {
            for (p, w) in comp.points().axis_iter(Axis(0)).zip(comp.weights().iter()) {
                atoms.row_mut(row).assign(&p);
                base_weights.push(*w);
                component_of_atom.push(k);
                row += 1;
            }
        }
        let cross_cost = squared_euclidean_entries(atoms.view(), target.points());
        let sym_cost = if spec.kind == LossKind::Slambda {
            Some(squared_euclidean_entries(atoms.view(), atoms.view()))
        } else {
            None
        };
        Ok(Self {
            model,
            target,
            spec,
            tolerance,
            atoms,
            base_weights,
            component_of_atom,
            cross_cost,
            sym_cost,
            target_self: None,
            warm_cross_psi: None,
            warm_sym: None,
        })
    }

    fn theta_weights(&self, theta: &SimplexVector) -> (Vec<usize>, Vec<usize>, Array1<f64>) {
        let weights: Vec<f64> = self
            .base_weights
            .iter()
            .zip(&self.component_of_atom)
            .map(|(w, &k)| theta[k] * w)
            .collect();
        let mut support = Vec::with_capacity(weights.len());
        let mut dropped = Vec::new();
        for (i, w) in weights.iter().enumerate() {
            if *w >= ZERO_WEIGHT_THRESHOLD {
                support.push(i);
            } else {
                dropped.push(i);
            }
        }
        let total: f64 = support.iter().map(|&i| weights[i]).sum();
        let mu: Array1<f64> = support.iter().map(|&i| weights[i] / total).collect();
        (support, dropped, mu)
    }

    fn submatrix<'m>(
        matrix: &'m Array2<f64>,
        support: &[usize],
        both_axes: bool,
    ) -> Cow<'m, Array2<f64>> {
        if support.len() == matrix.nrows() {
            Cow::Borrowed(matrix)
        } else if both_axes {
            Cow::Owned(matrix.select(Axis(0), support).select(Axis(1), support))
        } else {
            Cow::Owned(matrix.select(Axis(0), support))
        }
    }

    fn select_atoms(&self, indices: &[usize]) -> Array2<f64> {
        self.atoms.select(Axis(0), indices)
    }

    fn warm_start(&self, cached: &Option<Array1<f64>>, len: usize) -> Option<Array1<f64>> {
        if self.spec.budget != IterationBudget::Unbounded {
            return None;
        }
        cached.as_ref().filter(|p| p.len() == len).cloned()
    }

    /// Scatters the solved potential back to all atoms, filling dropped
    /// ones via the c-transform of `psi` against `second`.
    fn extend_potential(
        &self,
        support: &[usize],
        dropped: &[usize],
        phi: &Array1<f64>,
        psi: &Array1<f64>,
        second: &DiscreteMeasure,
        lambda: f64,
    ) -> Result<Array1<f64>> {
        let mut full = Array1::zeros(self.base_weights.len());
        for (slot, &atom) in support.iter().enumerate() {
            full[atom] = phi[slot];
        }
        if !dropped.is_empty() {
            let queries = self.select_atoms(dropped);
            let extended = c_transform(psi, second, queries.view(), lambda)?;
            for (&atom, v) in dropped.iter().zip(extended.iter()) {
                full[atom] = *v;
            }
        }
        Ok(full)
    }

    /// `(⟨φ, μ̂_1⟩, …, ⟨φ, μ̂_K⟩)` from a full-length potential.
    fn per_component_pairing(&self, phi_full: &Array1<f64>) -> Array1<f64> {
        let mut grad = Array1::zeros(self.model.num_components());
        for ((w, &k), phi) in self
            .base_weights
            .iter()
            .zip(&self.component_of_atom)
            .zip(phi_full.iter())
        {
            grad[k] += w * phi;
        }
        grad
    }

    fn evaluate(&mut self, theta: &SimplexVector) -> Result<Evaluation> {
        if theta.len() != self.model.num_components() {
            return Err(Error::ComponentMismatch {
                model: self.model.num_components(),
                theta: theta.len(),
            });
        }
        let (support, dropped, mu) = self.theta_weights(theta);
        let filtered_atoms = !dropped.is_empty();
        let nu = self.target.weights().to_owned();

        match self.spec.kind {
            LossKind::W0 => {
                let cost = Self::submatrix(&self.cross_cost, &support, false);
                let solution =
                    exact::solve_with_cost(&cost, mu.as_slice().unwrap(), &nu.to_vec())?;
                let phi_full = self.extend_potential(
                    &support,
                    &dropped,
                    &solution.dual_phi,
                    &solution.dual_psi,
                    self.target,
                    0.0,
                )?;
                Ok(Evaluation {
                    value: solution.cost,
                    gradient: self.per_component_pairing(&phi_full),
                    sinkhorn_iterations: 0,
                    filtered_atoms,
                })
            }
            LossKind::Wlambda => {
                let cfg = self.spec.sinkhorn_config(self.tolerance);
                let cost = Self::submatrix(&self.cross_cost, &support, false);
                let warm = self.warm_start(&self.warm_cross_psi, nu.len());
                let solution = ot::sinkhorn_core(&cost, &mu, &nu, &cfg, warm.as_ref())?;
                self.warm_cross_psi = Some(solution.psi.clone());
                let phi_full = self.extend_potential(
                    &support,
                    &dropped,
                    &solution.phi,
                    &solution.psi,
                    self.target,
                    cfg.lambda,
                )?;
                Ok(Evaluation {
                    value: solution.cost,
                    gradient: self.per_component_pairing(&phi_full),
                    sinkhorn_iterations: solution.iterations,
                    filtered_atoms,
                })
            }
            LossKind::Slambda => {
                let cfg = self.spec.sinkhorn_config(self.tolerance);
                let mut iterations = 0;

                if self.target_self.is_none() {
                    let target_cost =
                        squared_euclidean_entries(self.target.points(), self.target.points());
                    let sol = ot::sinkhorn_symmetric_core(&target_cost, &nu, &cfg, None)?;
                    iterations += sol.iterations;
                    self.target_self = Some(sol);
                }
                let target_self_cost = self.target_self.as_ref().unwrap().cost;

                let cost = Self::submatrix(&self.cross_cost, &support, false);
                let warm = self.warm_start(&self.warm_cross_psi, nu.len());
                let cross = ot::sinkhorn_core(&cost, &mu, &nu, &cfg, warm.as_ref())?;
                self.warm_cross_psi = Some(cross.psi.clone());
                iterations += cross.iterations;

                let sym_cost_full = self.sym_cost.as_ref().expect("built for Slambda");
                let sym_cost = Self::submatrix(sym_cost_full, &support, true);
                let warm_sym = match (&self.warm_sym, self.spec.budget) {
                    (Some((sup, psi)), IterationBudget::Unbounded) if *sup == support => {
                        Some(psi.clone())
                    }
                    _ => None,
                };
                let sym = ot::sinkhorn_symmetric_core(&sym_cost, &mu, &cfg, warm_sym.as_ref())?;
                self.warm_sym = Some((support.clone(), sym.psi.clone()));
                iterations += sym.iterations;

                let value = cross.cost - 0.5 * (sym.cost + target_self_cost);

                let phi_cross = self.extend_potential(
                    &support,
                    &dropped,
                    &cross.phi,
                    &cross.psi,
                    self.target,
                    cfg.lambda,
                )?;
                // The symmetric potential extends against the filtered
                // mixture itself.
                let phi_sym = if dropped.is_empty() {
                    self.extend_potential(&support, &dropped, &sym.phi, &sym.psi, self.target, cfg.lambda)?
                } else {
                    let filtered =
                        DiscreteMeasure::new(self.select_atoms(&support), mu.clone())?;
                    self.extend_potential(
                        &support,
                        &dropped,
                        &sym.phi,
                        &sym.psi,
                        &filtered,
                        cfg.lambda,
                    )?
                };
                let gradient =
                    self.per_component_pairing(&phi_cross) - self.per_component_pairing(&phi_sym);
                Ok(Evaluation {
                    value,
                    gradient,
                    sinkhorn_iterations: iterations,
                    filtered_atoms,
                })
            }
        }
    }
}

/// Norm of the gradient restricted to the simplex tangent space
/// (constant shifts of the potential drop out here).
fn tangent_norm(gradient: &Array1<f64>) -> f64 {
    let mean = gradient.sum() / gradient.len() as f64;
    gradient
        .iter()
        .map(|g| (g - mean) * (g - mean))
        .sum::<f64>()
        .sqrt()
}

/// Evaluates `L(μ̂_θ, ν̂)` for the dispatched loss.
pub fn loss(
    model: &MixtureModel,
    theta: &SimplexVector,
    target: &DiscreteMeasure,
    spec: &LossSpec,
) -> Result<f64> {
    let mut engine = LossEngine::new(model, target, *spec, DEFAULT_TOLERANCE)?;
    Ok(engine.evaluate(theta)?.value)
}

/// The envelope gradient `(⟨φ, μ̂_1⟩, …, ⟨φ, μ̂_K⟩)` of the loss at `θ`.
pub fn gradient(
    model: &MixtureModel,
    theta: &SimplexVector,
    target: &DiscreteMeasure,
    spec: &LossSpec,
) -> Result<Gradient> {
    let mut engine = LossEngine::new(model, target, *spec, DEFAULT_TOLERANCE)?;
    let eval = engine.evaluate(theta)?;
    Ok(Gradient {
        values: eval.gradient,
        zero_entry_warning: eval.filtered_atoms,
        sinkhorn_iterations: eval.sinkhorn_iterations,
    })
}

/// Runs projected gradient descent and returns the best-seen `θ`.
pub fn estimate(
    model: &MixtureModel,
    target: &DiscreteMeasure,
    spec: &LossSpec,
    cfg: &DescentConfig,
) -> Result<EstimateResult> {
    let k = model.num_components();
    cfg.validate(k)?;
    let mut engine = LossEngine::new(model, target, *spec, cfg.sinkhorn_tolerance)?;

    let mut theta = match &cfg.seed_theta {
        Some(seed) => seed.clone(),
        None => SimplexVector::uniform(k)?,
    };
    let mut eval = engine.evaluate(&theta)?;
    let mut total_iterations = eval.sinkhorn_iterations;
    let mut loss_trace = vec![eval.value];
    let mut gradient_norm_trace = vec![tangent_norm(&eval.gradient)];
    let mut best = (theta.clone(), eval.value);
    let mut converged = false;

    for _ in 0..cfg.max_outer_iterations {
        let mut eta = cfg.step_size;
        let mut accepted: Option<(SimplexVector, Evaluation)> = None;
        for _ in 0..=cfg.max_halvings {
            let shifted: Vec<f64> = theta
                .as_slice()
                .iter()
                .zip(eval.gradient.iter())
                .map(|(t, g)| t - eta * g)
                .collect();
            let candidate = project_simplex(&shifted)?;
            let candidate_eval = engine.evaluate(&candidate)?;
            total_iterations += candidate_eval.sinkhorn_iterations;
            if candidate_eval.value <= eval.value {
                accepted = Some((candidate, candidate_eval));
                break;
            }
            eta *= cfg.backtracking_factor;
        }
        let Some((next_theta, next_eval)) = accepted else {
            // No halving produced a non-increasing step: stationary.
            converged = true;
            break;
        };
        let step: f64 = next_theta
            .as_slice()
            .iter()
            .zip(theta.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        theta = next_theta;
        eval = next_eval;
        loss_trace.push(eval.value);
        gradient_norm_trace.push(tangent_norm(&eval.gradient));
        if eval.value < best.1 {
            best = (theta.clone(), eval.value);
        }
        if step <= cfg.theta_tolerance {
            converged = true;
            break;
        }
    }

    Ok(EstimateResult {
        theta_hat: best.0,
        loss_trace,
        gradient_norm_trace,
        converged,
        total_sinkhorn_iterations: total_iterations,
    })
}
