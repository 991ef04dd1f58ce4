//! Analytic two-parameter Bayesian classifier, used to verify that the
//! parameter-space and predictive-space formulations of epistemic
//! uncertainty agree.
//!
//! The model classifies points on the real line into two classes. Class 1
//! lives to the left of a decision boundary at `theta1`; the likelihood
//! ramps linearly from 1 to 0 across `[theta1 - theta2, theta1 + theta2]`.
//! The prior is uniform: `theta1` on `[-1, 1]`, `theta2` on `[1/2, 2]`.
//!
//! Posteriors are discretized on a midpoint-rule grid over the parameter
//! box. On such a shared grid the two epistemic forms,
//!
//! * parameter form: `H(posterior) - E_c[H(posterior after seeing (x, c))]`
//! * predictive form: `H(predictive) - E_theta[H(likelihood)]`
//!
//! are algebraically identical, so their difference measures only float
//! rounding. Both are still computed by their own literal route.

use crate::error::{Error, Result};
use crate::uq::ProbabilityVector;

pub const THETA1_MIN: f64 = -1.0;
pub const THETA1_MAX: f64 = 1.0;
pub const THETA2_MIN: f64 = 0.5;
pub const THETA2_MAX: f64 = 2.0;

/// Default quadrature resolution per parameter axis.
pub const DEFAULT_GRID: usize = 400;

/// Density floor before `ln` so empty cells contribute exactly zero.
const DENSITY_FLOOR: f64 = 1e-300;

/// The two classes of the toy problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyClass {
    Class1,
    Class2,
}

impl ToyClass {
    pub const BOTH: [ToyClass; 2] = [ToyClass::Class1, ToyClass::Class2];

    pub fn index(self) -> usize {
        match self {
            ToyClass::Class1 => 0,
            ToyClass::Class2 => 1,
        }
    }
}

/// One point of the parameter box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyParams {
    /// Decision-boundary center (`theta1`).
    pub center: f64,
    /// Transition half-width (`theta2`), positive.
    pub half_width: f64,
}

/// `p(class | x, params)`: 1 for class 1 well left of the boundary, 0 well
/// right, a linear ramp in between. The two class probabilities sum to one
/// exactly.
pub fn toy_likelihood(class: ToyClass, x: f64, p: &ToyParams) -> f64 {
    debug_assert!(p.half_width > 0.0, "half_width must be positive");
    let d = x - p.center;
    let p1 = if d <= -p.half_width {
        1.0
    } else if d >= p.half_width {
        0.0
    } else {
        (p.center + p.half_width - x) / (2.0 * p.half_width)
    };
    match class {
        ToyClass::Class1 => p1,
        ToyClass::Class2 => 1.0 - p1,
    }
}

/// `t ln t` with the exact zero limit.
#[inline]
fn xlnx(t: f64) -> f64 {
    if t > 0.0 {
        t * t.max(DENSITY_FLOOR).ln()
    } else {
        0.0
    }
}

/// Entropy of a Bernoulli distribution given one of its probabilities.
fn binary_entropy(p1: f64, p2: f64) -> f64 {
    -(xlnx(p1) + xlnx(p2))
}

/// Discretized density over the parameter box with midpoint quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPosteriorGrid {
    n1: usize,
    n2: usize,
    theta1: Vec<f64>,
    theta2: Vec<f64>,
    /// Normalized density, row-major `[i1 * n2 + i2]`; `sum(d * w) == 1`.
    density: Vec<f64>,
    cell_weight: f64,
    observations: Vec<(f64, ToyClass)>,
}

impl ToyPosteriorGrid {
    /// The prior as a grid: uniform density over the box.
    pub fn prior(n1: usize, n2: usize) -> Self {
        assert!(n1 >= 2 && n2 >= 2, "grid needs at least 2 cells per axis");
        let w1 = (THETA1_MAX - THETA1_MIN) / n1 as f64;
        let w2 = (THETA2_MAX - THETA2_MIN) / n2 as f64;
        let theta1 = (0..n1)
            .map(|i| THETA1_MIN + (i as f64 + 0.5) * w1)
            .collect();
        let theta2 = (0..n2)
            .map(|i| THETA2_MIN + (i as f64 + 0.5) * w2)
            .collect();
        let mut grid = Self {
            n1,
            n2,
            theta1,
            theta2,
            density: vec![1.0; n1 * n2],
            cell_weight: w1 * w2,
            observations: Vec::new(),
        };
        grid.normalize().expect("uniform density cannot be degenerate");
        grid
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }

    pub fn observations(&self) -> &[(f64, ToyClass)] {
        &self.observations
    }

    pub fn cell_weight(&self) -> f64 {
        self.cell_weight
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    fn params_at(&self, i1: usize, i2: usize) -> ToyParams {
        ToyParams {
            center: self.theta1[i1],
            half_width: self.theta2[i2],
        }
    }

    /// Iterates `(params, density)` over all cells.
    pub fn cells(&self) -> impl Iterator<Item = (ToyParams, f64)> + '_ {
        (0..self.n1).flat_map(move |i1| {
            (0..self.n2).map(move |i2| (self.params_at(i1, i2), self.density[i1 * self.n2 + i2]))
        })
    }

    fn normalize(&mut self) -> Result<()> {
        let total: f64 = self.density.iter().sum::<f64>() * self.cell_weight;
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::DegeneratePosterior);
        }
        for d in &mut self.density {
            *d /= total;
        }
        Ok(())
    }

    /// Quadrature mass: should be 1 within 1e-9 after any update.
    pub fn total_mass(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.cell_weight
    }

    /// A new grid conditioned on one more observation.
    pub fn updated_with(&self, x: f64, class: ToyClass) -> Result<Self> {
        let mut out = self.clone();
        for i1 in 0..self.n1 {
            for i2 in 0..self.n2 {
                let like = toy_likelihood(class, x, &self.params_at(i1, i2));
                out.density[i1 * self.n2 + i2] *= like;
            }
        }
        out.normalize()?;
        out.observations.push((x, class));
        Ok(out)
    }

    /// Differential entropy `-sum(d ln d) * w` of the grid density.
    pub fn differential_entropy(&self) -> f64 {
        let mut acc = 0.0;
        for &d in &self.density {
            acc += xlnx(d);
        }
        -acc * self.cell_weight
    }
}

/// Posterior over the parameter box given independent observations; the
/// empty list returns the prior grid.
pub fn toy_posterior(observations: &[(f64, ToyClass)], n1: usize, n2: usize) -> Result<ToyPosteriorGrid> {
    let mut grid = ToyPosteriorGrid::prior(n1, n2);
    for &(x, class) in observations {
        grid = grid.updated_with(x, class)?;
    }
    Ok(grid)
}

/// Class distribution at `x` under the grid density (the prior predictive
/// when the grid is the prior).
pub fn posterior_predictive_toy(grid: &ToyPosteriorGrid, x: f64) -> ProbabilityVector {
    let [p1, p2] = predictive_pair(grid, x);
    ProbabilityVector::new(vec![p1, p2])
        .expect("quadrature of a normalized grid stays on the simplex")
}

fn predictive_pair(grid: &ToyPosteriorGrid, x: f64) -> [f64; 2] {
    let mut p1 = 0.0;
    let mut p2 = 0.0;
    for (params, d) in grid.cells() {
        let l1 = toy_likelihood(ToyClass::Class1, x, &params);
        p1 += d * l1;
        p2 += d * (1.0 - l1);
    }
    [p1 * grid.cell_weight(), p2 * grid.cell_weight()]
}

/// Prior predictive distribution at `x`.
pub fn prior_predictive(x: f64, n1: usize, n2: usize) -> ProbabilityVector {
    posterior_predictive_toy(&ToyPosteriorGrid::prior(n1, n2), x)
}

/// Epistemic uncertainty at `x` via the parameter posterior: the expected
/// entropy decrease of the grid when the label at `x` is observed.
///
/// An outcome with zero predictive probability contributes zero by its
/// weighting and is skipped rather than propagated as a degenerate update.
pub fn epistemic_parameter_form(grid: &ToyPosteriorGrid, x: f64) -> Result<f64> {
    let pp = predictive_pair(grid, x);
    let h_now = grid.differential_entropy();
    let mut expected_after = 0.0;
    for class in ToyClass::BOTH {
        let p_c = pp[class.index()];
        if p_c <= 0.0 {
            continue;
        }
        let updated = grid.updated_with(x, class)?;
        expected_after += p_c * updated.differential_entropy();
    }
    Ok(h_now - expected_after)
}

/// Epistemic uncertainty at `x` via the predictive distribution: predictive
/// entropy minus the expected likelihood entropy over the grid.
pub fn epistemic_predictive_form(grid: &ToyPosteriorGrid, x: f64) -> f64 {
    let pp = predictive_pair(grid, x);
    let h_pred = binary_entropy(pp[0], pp[1]);
    let mut e_lik = 0.0;
    for (params, d) in grid.cells() {
        let l1 = toy_likelihood(ToyClass::Class1, x, &params);
        e_lik += d * binary_entropy(l1, 1.0 - l1);
    }
    h_pred - e_lik * grid.cell_weight()
}

/// Evenly spaced evaluation points, default 200 on `[-4, 8]`.
pub fn x_grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    assert!(n >= 2);
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

pub fn default_x_grid() -> Vec<f64> {
    x_grid(200, -4.0, 8.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityRow {
    pub x: f64,
    pub i_param: f64,
    pub i_pred: f64,
}

/// Result of evaluating both epistemic forms over an x grid.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityReport {
    pub rows: Vec<IdentityRow>,
    pub max_abs_diff: f64,
    pub pass: bool,
}

/// Evaluates both epistemic forms on `xs` for the posterior given
/// `observations` and compares them pointwise.
pub fn verify_identity(
    observations: &[(f64, ToyClass)],
    xs: &[f64],
    grid_resolution: usize,
    tol: f64,
) -> Result<IdentityReport> {
    assert!(tol >= 0.0, "tolerance must be nonnegative");
    let grid = toy_posterior(observations, grid_resolution, grid_resolution)?;
    let mut rows = Vec::with_capacity(xs.len());
    let mut max_abs_diff = 0.0f64;
    for &x in xs {
        let i_param = epistemic_parameter_form(&grid, x)?;
        let i_pred = epistemic_predictive_form(&grid, x);
        max_abs_diff = max_abs_diff.max((i_param - i_pred).abs());
        rows.push(IdentityRow { x, i_param, i_pred });
    }
    Ok(IdentityReport {
        rows,
        max_abs_diff,
        pass: max_abs_diff <= tol,
    })
}

/// Counts strict local maxima of a sampled curve, treating differences
/// within `plateau_tol` as flat. Endpoints never count.
pub fn count_local_maxima(values: &[f64], plateau_tol: f64) -> usize {
    #[derive(PartialEq, Clone, Copy)]
    enum Dir {
        None,
        Up,
        Down,
    }
    let mut dir = Dir::None;
    let mut maxima = 0;
    for pair in values.windows(2) {
        let delta = pair[1] - pair[0];
        if delta > plateau_tol {
            dir = Dir::Up;
        } else if delta < -plateau_tol {
            if dir == Dir::Up {
                maxima += 1;
            }
            dir = Dir::Down;
        }
    }
    maxima
}
