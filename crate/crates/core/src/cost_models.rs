//! Running and terminal cost families `φ(l, a)` over an exogenous value
//! `l ∈ ℝ^k` and a profile point `a = (a^1, ..., a^N) ∈ ℝ^{Nd}`.
//!
//! Every family exposes its value and the exact gradient in the owning
//! player's block `a^i`. [`check_structure`] samples the structural
//! conditions the equilibrium theory relies on: strict convexity in the own
//! block, decreasing differences between own and opponents' blocks, and
//! submodularity in the own block.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("gradient unavailable for cost family `{0}`")]
    GradientUnavailable(String),
}

/// Evaluation point handed to cost evaluators.
#[derive(Debug, Clone, Copy)]
pub struct CostPoint<'a> {
    pub player: usize,
    pub dim: usize,
    pub l: &'a [f64],
    pub a: &'a [f64],
}

impl CostPoint<'_> {
    pub fn players(&self) -> usize {
        self.a.len() / self.dim
    }

    pub fn own(&self) -> &[f64] {
        &self.a[self.player * self.dim..(self.player + 1) * self.dim]
    }
}

pub type ValueFn = Arc<dyn Fn(&CostPoint<'_>) -> f64 + Send + Sync>;
pub type GradFn = Arc<dyn Fn(&CostPoint<'_>, &mut [f64]) + Send + Sync>;

/// Affine target `offset + slope · l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineTarget {
    pub offset: f64,
    #[serde(default)]
    pub slope: Vec<f64>,
}

impl AffineTarget {
    pub fn constant(offset: f64) -> Self {
        Self { offset, slope: Vec::new() }
    }

    pub fn eval(&self, l: &[f64]) -> f64 {
        self.offset + self.slope.iter().zip(l).map(|(s, x)| s * x).sum::<f64>()
    }
}

/// `λ · |a^i − κ Σ_{j≠i} a^j − target(l)·1|²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticTracking {
    pub weight: f64,
    pub interaction: f64,
    pub target: AffineTarget,
}

impl QuadraticTracking {
    pub fn new(weight: f64, interaction: f64, target: AffineTarget) -> Self {
        Self { weight, interaction, target }
    }

    fn residual(&self, p: &CostPoint<'_>, coord: usize) -> f64 {
        let n = p.players();
        let others: f64 = (0..n).filter(|&j| j != p.player).map(|j| p.a[j * p.dim + coord]).sum();
        p.a[p.player * p.dim + coord] - self.interaction * others - self.target.eval(p.l)
    }
}

/// User-supplied family; only reachable through the library API.
#[derive(Clone)]
pub struct CustomCost {
    pub name: String,
    pub value: ValueFn,
    pub gradient: Option<GradFn>,
}

impl fmt::Debug for CustomCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomCost").field("name", &self.name).field("gradient", &self.gradient.is_some()).finish()
    }
}

#[derive(Debug, Clone)]
pub enum CostFamily {
    QuadraticTracking(QuadraticTracking),
    /// `e^{−a^i}(2 − e^{−a^j})` for two players with scalar controls.
    ExponentialCounterexample,
    Custom(CustomCost),
    /// Identically zero.
    Zero,
}

impl CostFamily {
    pub fn quadratic(weight: f64, interaction: f64, target: f64) -> Self {
        Self::QuadraticTracking(QuadraticTracking::new(weight, interaction, AffineTarget::constant(target)))
    }

    pub fn custom(
        name: impl Into<String>,
        value: impl Fn(&CostPoint<'_>) -> f64 + Send + Sync + 'static,
        gradient: Option<GradFn>,
    ) -> Self {
        Self::Custom(CustomCost { name: name.into(), value: Arc::new(value), gradient })
    }

    pub fn name(&self) -> &str {
        match self {
            Self::QuadraticTracking(_) => "quadratic_tracking",
            Self::ExponentialCounterexample => "exponential_counterexample",
            Self::Custom(c) => &c.name,
            Self::Zero => "zero",
        }
    }

    fn check(&self, p: &CostPoint<'_>) -> Result<(), CostError> {
        if p.dim == 0 || !p.a.len().is_multiple_of(p.dim) {
            return Err(CostError::Dimension(format!(
                "profile of length {} is not a multiple of d = {}",
                p.a.len(),
                p.dim
            )));
        }
        if p.player >= p.players() {
            return Err(CostError::Dimension(format!("player {} out of range for {} players", p.player, p.players())));
        }
        match self {
            Self::ExponentialCounterexample if p.players() != 2 || p.dim != 1 => {
                Err(CostError::Dimension("the exponential family needs N = 2, d = 1".into()))
            }
            Self::QuadraticTracking(q) if q.target.slope.len() > p.l.len() => Err(CostError::Dimension(format!(
                "target slope has {} entries but l has {}",
                q.target.slope.len(),
                p.l.len()
            ))),
            _ => Ok(()),
        }
    }

    pub fn eval(&self, player: usize, dim: usize, l: &[f64], a: &[f64]) -> Result<f64, CostError> {
        let p = CostPoint { player, dim, l, a };
        self.check(&p)?;
        Ok(self.eval_unchecked(&p))
    }

    pub(crate) fn eval_unchecked(&self, p: &CostPoint<'_>) -> f64 {
        match self {
            Self::QuadraticTracking(q) => q.weight * (0..p.dim).map(|c| q.residual(p, c).powi(2)).sum::<f64>(),
            Self::ExponentialCounterexample => {
                let own = p.a[p.player];
                let other = p.a[1 - p.player];
                (-own).exp() * (2.0 - (-other).exp())
            }
            Self::Custom(c) => (c.value)(p),
            Self::Zero => 0.0,
        }
    }

    pub fn grad_own(&self, player: usize, dim: usize, l: &[f64], a: &[f64]) -> Result<Vec<f64>, CostError> {
        let p = CostPoint { player, dim, l, a };
        self.check(&p)?;
        if let Self::Custom(c) = self {
            if c.gradient.is_none() {
                return Err(CostError::GradientUnavailable(c.name.clone()));
            }
        }
        let mut out = vec![0.0; dim];
        self.grad_unchecked(&p, &mut out);
        Ok(out)
    }

    pub fn has_gradient(&self) -> bool {
        !matches!(self, Self::Custom(CustomCost { gradient: None, .. }))
    }

    /// Writes `∇_i φ` into `out`; callers must have checked [`has_gradient`](Self::has_gradient).
    pub(crate) fn grad_unchecked(&self, p: &CostPoint<'_>, out: &mut [f64]) {
        match self {
            Self::QuadraticTracking(q) => {
                for (c, o) in out.iter_mut().enumerate() {
                    *o = 2.0 * q.weight * q.residual(p, c);
                }
            }
            Self::ExponentialCounterexample => {
                let own = p.a[p.player];
                let other = p.a[1 - p.player];
                out[0] = -(-own).exp() * (2.0 - (-other).exp());
            }
            Self::Custom(c) => (c.gradient.as_ref().expect("checked by caller"))(p, out),
            Self::Zero => out.iter_mut().for_each(|o| *o = 0.0),
        }
    }
}

/// Rectangle `Π [lo, hi]` over `(l, a)` used by the structure checks.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBox {
    pub l: Vec<(f64, f64)>,
    pub a: Vec<(f64, f64)>,
}

impl SampleBox {
    pub fn uniform(k: usize, l_range: (f64, f64), nd: usize, a_range: (f64, f64)) -> Self {
        Self { l: vec![l_range; k], a: vec![a_range; nd] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructureCheck {
    pub samples: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for StructureCheck {
    fn default() -> Self {
        Self { samples: 1000, tol: 1e-8, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructureReport {
    pub family: String,
    pub player: usize,
    pub convexity_violation: f64,
    pub decreasing_differences_violation: f64,
    pub submodularity_violation: f64,
    pub min_value: f64,
    pub tol: f64,
    pub warnings: Vec<String>,
}

impl StructureReport {
    pub fn convexity_ok(&self) -> bool {
        self.convexity_violation <= self.tol
    }

    pub fn decreasing_differences_ok(&self) -> bool {
        self.decreasing_differences_violation <= self.tol
    }

    pub fn submodularity_ok(&self) -> bool {
        self.submodularity_violation <= self.tol
    }

    pub fn passed(&self) -> bool {
        self.convexity_ok() && self.decreasing_differences_ok() && self.submodularity_ok()
    }

    /// Names of the failed conditions.
    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.convexity_ok() {
            out.push("convexity");
        }
        if !self.decreasing_differences_ok() {
            out.push("decreasing differences");
        }
        if !self.submodularity_ok() {
            out.push("submodularity");
        }
        out
    }
}

fn sample_in(rng: &mut ChaCha8Rng, bounds: &[(f64, f64)]) -> Vec<f64> {
    bounds.iter().map(|&(lo, hi)| if hi > lo { rng.gen_range(lo..=hi) } else { lo }).collect()
}

/// Sampled worst-case violations of midpoint convexity in `a^i`, decreasing
/// differences over ordered pairs `a ≤ ā`, and the four-point submodularity
/// inequality in `a^i`.
pub fn check_structure(
    family: &CostFamily,
    player: usize,
    dim: usize,
    region: &SampleBox,
    check: &StructureCheck,
) -> Result<StructureReport, CostError> {
    let mut rng = ChaCha8Rng::seed_from_u64(check.seed);
    let own = player * dim..(player + 1) * dim;
    let eval = |l: &[f64], a: &[f64]| family.eval(player, dim, l, a);

    let mut convexity: f64 = 0.0;
    let mut dd: f64 = 0.0;
    let mut submod: f64 = 0.0;
    let mut min_value = f64::INFINITY;
    for _ in 0..check.samples {
        let l = sample_in(&mut rng, &region.l);
        let a = sample_in(&mut rng, &region.a);
        let b = sample_in(&mut rng, &region.a);

        // midpoint convexity along the own block, opponents fixed at a
        let mut x = a.clone();
        let mut y = a.clone();
        let mut mid = a.clone();
        for c in own.clone() {
            x[c] = a[c];
            y[c] = b[c];
            mid[c] = 0.5 * (a[c] + b[c]);
        }
        let (fx, fy, fm) = (eval(&l, &x)?, eval(&l, &y)?, eval(&l, &mid)?);
        min_value = min_value.min(fx).min(fy);
        convexity = convexity.max(fm - 0.5 * (fx + fy));

        // decreasing differences: lo ≤ hi componentwise
        let lo: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p.min(*q)).collect();
        let hi: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p.max(*q)).collect();
        let mix = |own_src: &[f64], rest_src: &[f64]| {
            let mut v = rest_src.to_vec();
            v[own.clone()].copy_from_slice(&own_src[own.clone()]);
            v
        };
        let gain_low = eval(&l, &mix(&hi, &lo))? - eval(&l, &lo)?;
        let gain_high = eval(&l, &hi)? - eval(&l, &mix(&lo, &hi))?;
        dd = dd.max(gain_high - gain_low);

        // submodularity in the own block: φ(x) + φ(y) ≥ φ(x∧y) + φ(x∨y)
        let meet = mix(&lo, &a);
        let join = mix(&hi, &a);
        let lhs = fx + fy;
        let rhs = eval(&l, &meet)? + eval(&l, &join)?;
        submod = submod.max(rhs - lhs);
    }
    let mut warnings = Vec::new();
    if min_value < 0.0 {
        warnings.push(format!(
            "family `{}` takes negative values (min sampled {min_value:.3e}); costs are expected to be nonnegative",
            family.name()
        ));
    }
    Ok(StructureReport {
        family: family.name().to_string(),
        player,
        convexity_violation: convexity.max(0.0),
        decreasing_differences_violation: dd.max(0.0),
        submodularity_violation: submod.max(0.0),
        min_value,
        tol: check.tol,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoercivityReport {
    pub family: String,
    pub player: usize,
    /// Smallest sampled `(φ(a + R·1_own) − φ(a)) / R`.
    pub min_growth: f64,
    pub radius: f64,
}

impl CoercivityReport {
    pub fn coercive(&self) -> bool {
        self.min_growth > 0.0
    }
}

/// Sampled growth of `family` as the own control moves up by `radius` in
/// every coordinate. Controls only increase, so this is the direction a
/// non-coercive cost rewards. A heuristic: positive growth on the samples
/// does not prove coercivity.
pub fn check_coercivity(
    family: &CostFamily,
    player: usize,
    dim: usize,
    region: &SampleBox,
    check: &StructureCheck,
    radius: f64,
) -> Result<CoercivityReport, CostError> {
    let mut rng = ChaCha8Rng::seed_from_u64(check.seed ^ 0x9e37_79b9);
    let own = player * dim..(player + 1) * dim;
    let mut growth = f64::INFINITY;
    for _ in 0..check.samples {
        let l = sample_in(&mut rng, &region.l);
        let a = sample_in(&mut rng, &region.a);
        let mut far = a.clone();
        far[own.clone()].iter_mut().for_each(|v| *v += radius);
        let g = (family.eval(player, dim, &l, &far)? - family.eval(player, dim, &l, &a)?) / radius;
        growth = growth.min(g);
    }
    Ok(CoercivityReport { family: family.name().to_string(), player, min_growth: growth, radius })
}
