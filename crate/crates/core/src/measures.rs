//! Discrete probability measures, labelled samples, mixtures and simplex
//! geometry.
//!
//! All types are immutable after construction and safe to share across
//! threads. Weight vectors are validated to sum to one within `1e-12` and
//! then renormalized exactly, so downstream float accumulation across
//! components cannot drift the total mass.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Tolerance on `|Σ weights − 1|` accepted at construction time.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

/// Atoms with weight below this threshold are dropped before Sinkhorn.
pub const ZERO_WEIGHT_THRESHOLD: f64 = 1e-15;

/// A weighted point cloud in `R^d`: `n` atoms with nonnegative weights
/// summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    points: Array2<f64>,
    weights: Array1<f64>,
}

impl DiscreteMeasure {
    /// Builds a measure from an `n × d` matrix of atom coordinates and a
    /// length-`n` weight vector.
    ///
    /// Weights must be nonnegative and sum to one within
    /// [`WEIGHT_SUM_TOLERANCE`]; they are renormalized on construction.
    pub fn new(points: Array2<f64>, weights: Array1<f64>) -> Result<Self> {
        let (n, d) = points.dim();
        if n == 0 || d == 0 {
            return Err(Error::InvalidWeights(format!(
                "measure needs n >= 1 atoms and d >= 1 coordinates, got {n} x {d}"
            )));
        }
        if weights.len() != n {
            return Err(Error::InvalidWeights(format!(
                "{} weights for {} atoms",
                weights.len(),
                n
            )));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("measure coordinates"));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidWeights(format!("weight {w} is not in [0, 1]")));
        }
        let total: f64 = weights.sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::InvalidWeights(format!(
                "weights sum to {total}, expected 1 within {WEIGHT_SUM_TOLERANCE:e}"
            )));
        }
        Ok(Self {
            points,
            weights: weights / total,
        })
    }

    /// Uniform measure on the given atoms.
    pub fn uniform(points: Array2<f64>) -> Result<Self> {
        let n = points.nrows();
        if n == 0 {
            return Err(Error::InvalidWeights("no atoms".into()));
        }
        let w = Array1::from_elem(n, 1.0 / n as f64);
        Self::new(points, w)
    }

    /// Point mass at a single location.
    pub fn dirac(point: &[f64]) -> Result<Self> {
        let d = point.len();
        let points = Array2::from_shape_vec((1, d), point.to_vec())
            .map_err(|e| Error::InvalidWeights(e.to_string()))?;
        Self::uniform(points)
    }

    pub fn num_atoms(&self) -> usize {
        self.points.nrows()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn weights(&self) -> ArrayView1<'_, f64> {
        self.weights.view()
    }

    /// `∫ ‖x‖² dμ(x)`, the weighted second moment about the origin.
    pub fn second_moment(&self) -> f64 {
        self.points
            .axis_iter(Axis(0))
            .zip(self.weights.iter())
            .map(|(row, w)| w * row.iter().map(|x| x * x).sum::<f64>())
            .sum()
    }

    /// Push-forward under coordinate-wise scaling `x ↦ s·x`.
    pub fn scale_points(&self, s: f64) -> Self {
        Self {
            points: &self.points * s,
            weights: self.weights.clone(),
        }
    }

    /// Push-forward under translation `x ↦ x + t`.
    pub fn translate(&self, t: &[f64]) -> Result<Self> {
        if t.len() != self.dim() {
            return Err(Error::DimensionMismatch(t.len(), self.dim()));
        }
        let mut points = self.points.clone();
        for mut row in points.axis_iter_mut(Axis(0)) {
            for (x, ti) in row.iter_mut().zip(t) {
                *x += ti;
            }
        }
        Ok(Self {
            points,
            weights: self.weights.clone(),
        })
    }

    /// Drops atoms with weight `< threshold` and renormalizes.
    ///
    /// Returns the filtered measure together with the indices of the kept
    /// atoms in the original measure, so callers can scatter per-atom
    /// quantities (dual potentials) back to the full index space.
    pub fn retain_positive(&self, threshold: f64) -> Result<(Self, Vec<usize>)> {
        let kept: Vec<usize> = self
            .weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w >= threshold)
            .map(|(i, _)| i)
            .collect();
        if kept.is_empty() {
            return Err(Error::InvalidWeights(
                "all atoms fell below the weight threshold".into(),
            ));
        }
        if kept.len() == self.num_atoms() {
            return Ok((self.clone(), kept));
        }
        let points = self.points.select(Axis(0), &kept);
        let weights: Array1<f64> = kept.iter().map(|&i| self.weights[i]).collect();
        let total = weights.sum();
        Ok((
            Self {
                points,
                weights: weights / total,
            },
            kept,
        ))
    }
}

/// Source data: `m` points in `R^d` with class labels in `1..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    points: Array2<f64>,
    labels: Vec<usize>,
}

impl LabeledSample {
    /// Builds a labelled sample. Labels are 1-based class ids; every class
    /// in `1..=max(label)` must occur at least once.
    pub fn new(points: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        let m = points.nrows();
        if m == 0 || points.ncols() == 0 {
            return Err(Error::InvalidWeights(
                "labelled sample needs at least one point and one coordinate".into(),
            ));
        }
        if labels.len() != m {
            return Err(Error::InvalidWeights(format!(
                "{} labels for {} points",
                labels.len(),
                m
            )));
        }
        let k = *labels.iter().max().unwrap();
        if labels.iter().any(|&l| l == 0) {
            return Err(Error::Parse {
                path: "labels".into(),
                msg: "class ids are 1-based; found 0".into(),
            });
        }
        let mut counts = vec![0usize; k];
        for &l in &labels {
            counts[l - 1] += 1;
        }
        if let Some(missing) = counts.iter().position(|&c| c == 0) {
            return Err(Error::EmptyClass(missing + 1));
        }
        Ok(Self { points, labels })
    }

    pub fn num_points(&self) -> usize {
        self.points.nrows()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn num_classes(&self) -> usize {
        *self.labels.iter().max().unwrap()
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// Element of the probability simplex `Σ_K`: nonnegative entries summing
/// to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexVector(Array1<f64>);

impl SimplexVector {
    pub fn new(theta: Array1<f64>) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::InvalidWeights("empty proportion vector".into()));
        }
        if let Some(t) = theta.iter().find(|t| !t.is_finite() || **t < 0.0) {
            return Err(Error::InvalidWeights(format!(
                "proportion {t} is not a finite nonnegative number"
            )));
        }
        let total = theta.sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::InvalidWeights(format!(
                "proportions sum to {total}, expected 1 within {WEIGHT_SUM_TOLERANCE:e}"
            )));
        }
        Ok(Self(theta / total))
    }

    pub fn from_slice(theta: &[f64]) -> Result<Self> {
        Self::new(Array1::from_vec(theta.to_vec()))
    }

    /// Barycenter of `Σ_K`: all entries `1/K`.
    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidWeights("empty proportion vector".into()));
        }
        Ok(Self(Array1::from_elem(k, 1.0 / k as f64)))
    }

    /// Unit mass on class `k` (0-based).
    pub fn one_hot(k: usize, len: usize) -> Result<Self> {
        if k >= len {
            return Err(Error::InvalidWeights(format!(
                "one-hot index {k} out of range for length {len}"
            )));
        }
        let mut v = Array1::zeros(len);
        v[k] = 1.0;
        Ok(Self(v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice().expect("simplex storage is contiguous")
    }

    /// `‖self − other‖²`, the squared Euclidean distance used as the
    /// estimation error metric.
    pub fn squared_distance(&self, other: &SimplexVector) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

impl std::ops::Index<usize> for SimplexVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// `K` discrete measures sharing an ambient dimension; the components of a
/// mixture whose proportions are to be estimated.
#[derive(Debug, Clone)]
pub struct MixtureModel {
    components: Vec<DiscreteMeasure>,
}

impl MixtureModel {
    pub fn new(components: Vec<DiscreteMeasure>) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(Error::InvalidWeights("mixture needs at least one component".into()));
        };
        let d = first.dim();
        for c in &components {
            if c.dim() != d {
                return Err(Error::DimensionMismatch(c.dim(), d));
            }
        }
        Ok(Self { components })
    }

    /// Splits a labelled sample into its empirical class components: component
    /// `k` holds exactly the points labelled `k`, each with weight `1/m_k`.
    pub fn from_labeled(sample: &LabeledSample) -> Result<Self> {
        let k = sample.num_classes();
        let mut components = Vec::with_capacity(k);
        for class in 1..=k {
            let idx: Vec<usize> = sample
                .labels()
                .iter()
                .enumerate()
                .filter(|(_, l)| **l == class)
                .map(|(i, _)| i)
                .collect();
            if idx.is_empty() {
                return Err(Error::EmptyClass(class));
            }
            let points = sample.points().select(Axis(0), &idx);
            components.push(DiscreteMeasure::uniform(points)?);
        }
        Self::new(components)
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn components(&self) -> &[DiscreteMeasure] {
        &self.components
    }

    pub fn total_atoms(&self) -> usize {
        self.components.iter().map(|c| c.num_atoms()).sum()
    }

    /// Start index of each component's atoms in the concatenated measure
    /// produced by [`MixtureModel::reweight`].
    pub fn atom_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.components.len());
        let mut acc = 0;
        for c in &self.components {
            offsets.push(acc);
            acc += c.num_atoms();
        }
        offsets
    }

    /// The re-weighted mixture `μ_θ = Σ_k θ_k μ_k` as a single measure.
    ///
    /// Atoms are concatenated in component order; atom `i` of component `k`
    /// carries weight `θ_k · w_{k,i}`. Zero-weight atoms (from `θ_k = 0`)
    /// are kept so that atom indices are stable across different `θ`;
    /// Sinkhorn callers filter them with
    /// [`DiscreteMeasure::retain_positive`].
    pub fn reweight(&self, theta: &SimplexVector) -> Result<DiscreteMeasure> {
        if theta.len() != self.num_components() {
            return Err(Error::ComponentMismatch {
                model: self.num_components(),
                theta: theta.len(),
            });
        }
        let d = self.dim();
        let total = self.total_atoms();
        let mut points = Array2::zeros((total, d));
        let mut weights = Array1::zeros(total);
        let mut row = 0;
        for (k, comp) in self.components.iter().enumerate() {
            let t = theta[k];
            for (p, w) in comp.points().axis_iter(Axis(0)).zip(comp.weights().iter()) {
                points.row_mut(row).assign(&p);
                weights[row] = t * w;
                row += 1;
            }
        }
        DiscreteMeasure::new(points, weights)
    }
}

/// Euclidean projection of an arbitrary vector onto the simplex `Σ_K`.
///
/// Sort-and-threshold rule: with entries sorted in decreasing order
/// `u_1 ≥ … ≥ u_K`, find the largest `ρ` with
/// `u_ρ + (1 − Σ_{r≤ρ} u_r)/ρ > 0` and clip each entry at
/// `max(v_i + τ, 0)` where `τ = (1 − Σ_{r≤ρ} u_r)/ρ`.
pub fn project_simplex(v: &[f64]) -> Result<SimplexVector> {
    if v.is_empty() {
        return Err(Error::InvalidWeights("cannot project an empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("simplex projection input"));
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut acc = 0.0;
    let mut tau = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        acc += u;
        let candidate = (1.0 - acc) / (j + 1) as f64;
        if u + candidate > 0.0 {
            tau = candidate;
        } else {
            break;
        }
    }
    let projected: Array1<f64> = v.iter().map(|&x| (x + tau).max(0.0)).collect();
    // Clipping leaves the sum within one ulp of 1; constructor renormalizes.
    SimplexVector::new(projected)
}
