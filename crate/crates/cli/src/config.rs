//! TOML run configuration.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;

use mfgame::best_reply::{AdmissibleSet, SolverOptions};
use mfgame::cost_models::{AffineTarget, CostFamily, QuadraticTracking, SampleBox, StructureCheck};
use mfgame::functional::GameSpec;
use mfgame::scenario_tree::{AdaptedProcess, ScenarioTree};
use mfgame::sdg_adapters::{Dynamics, SdgPlayer, SdgSpec};
use mfgame::sweep::SweepOptions;
use mfgame::topkis::TopkisOptions;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub tree: TreeSection,
    pub players: PlayersSection,
    #[serde(default)]
    pub processes: ProcessesSection,
    #[serde(default)]
    pub admissible: AdmissibleSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub checks: ChecksSection,
    pub sdg: Option<SdgSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeKind {
    Binary,
    Chain,
    Product,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeSection {
    #[serde(default = "default_tree_kind")]
    pub kind: TreeKind,
    pub depth: usize,
    pub dt: f64,
    #[serde(default = "half")]
    pub up_prob: f64,
    #[serde(default = "one")]
    pub factors: usize,
    pub seed: u64,
}

fn default_tree_kind() -> TreeKind {
    TreeKind::Binary
}
fn half() -> f64 {
    0.5
}
fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Zero,
    Quadratic,
    Exponential,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub family: Family,
    #[serde(default = "unit")]
    pub weight: f64,
    #[serde(default)]
    pub interaction: f64,
    #[serde(default)]
    pub target: f64,
    #[serde(default)]
    pub target_slope: Vec<f64>,
}

fn unit() -> f64 {
    1.0
}

impl CostSection {
    pub fn family(&self) -> CostFamily {
        match self.family {
            Family::Zero => CostFamily::Zero,
            Family::Exponential => CostFamily::ExponentialCounterexample,
            Family::Quadratic => CostFamily::QuadraticTracking(QuadraticTracking::new(
                self.weight,
                self.interaction,
                AffineTarget { offset: self.target, slope: self.target_slope.clone() },
            )),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlayerOverride {
    pub player: usize,
    pub running: Option<CostSection>,
    pub terminal: Option<CostSection>,
    pub price: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlayersSection {
    pub count: usize,
    #[serde(default = "one")]
    pub dim: usize,
    pub running: CostSection,
    pub terminal: CostSection,
    #[serde(default)]
    pub overrides: Vec<PlayerOverride>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriceSection {
    /// `f ≡ value`.
    Constant { value: f64 },
    /// `f_t = value · exp((μ − σ²/2) t + σ W_t)`.
    Gbm {
        value: f64,
        mu: f64,
        sigma: f64,
        #[serde(default)]
        factor: usize,
    },
}

impl Default for PriceSection {
    fn default() -> Self {
        Self::Constant { value: 1.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
#[derive(Default)]
pub enum ExogenousSection {
    #[default]
    Zero,
    Constant {
        value: f64,
    },
    /// `L_t = l0 + drift · t + vol · W_t`.
    DriftedBrownian {
        #[serde(default)]
        l0: f64,
        drift: f64,
        vol: f64,
        #[serde(default)]
        factor: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoercivityMode {
    /// No price requirement beyond `f ≥ 0`.
    #[default]
    Costs,
    /// Require `f ≥ price_floor > 0` everywhere.
    Price,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessesSection {
    #[serde(default)]
    pub price: PriceSection,
    #[serde(default)]
    pub exogenous: ExogenousSection,
    #[serde(default)]
    pub coercivity: CoercivityMode,
    pub price_floor: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Monotone,
    Fuel,
    Lipschitz,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmissibleSection {
    #[serde(default)]
    pub mode: Mode,
    pub cap: Option<f64>,
    pub n: Option<f64>,
    pub n_schedule: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub grad_tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub outer_tol: Option<f64>,
    pub max_outer: Option<usize>,
    pub momentum: Option<bool>,
    pub divergence_cap: Option<f64>,
    pub inner_tol_start: Option<f64>,
    pub warm_start: Option<bool>,
    pub certify_budget: Option<f64>,
    pub payoff_tol: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub directory: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { directory: default_dir(), formats: default_formats() }
    }
}

fn default_dir() -> String {
    "mfgame-out".into()
}
fn default_formats() -> Vec<String> {
    vec!["csv".into(), "json".into()]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChecksSection {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_check_tol")]
    pub tol: f64,
    #[serde(default = "default_l_range")]
    pub l_range: [f64; 2],
    #[serde(default = "default_a_range")]
    pub a_range: [f64; 2],
}

impl Default for ChecksSection {
    fn default() -> Self {
        Self {
            samples: default_samples(),
            tol: default_check_tol(),
            l_range: default_l_range(),
            a_range: default_a_range(),
        }
    }
}

fn default_samples() -> usize {
    1000
}
fn default_check_tol() -> f64 {
    1e-8
}
fn default_l_range() -> [f64; 2] {
    [-2.0, 2.0]
}
fn default_a_range() -> [f64; 2] {
    [0.0, 4.0]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdgPlayerSection {
    pub dynamics: Dynamics,
    pub x0: f64,
    #[serde(default)]
    pub noise_factor: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdgSection {
    pub players: Vec<SdgPlayerSection>,
}

pub fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse(&text).with_context(|| format!("in {}", path.display()))
}

pub fn parse(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| anyhow!("{e}"))?;
    cfg.check()?;
    Ok(cfg)
}

impl RunConfig {
    fn check(&self) -> Result<()> {
        if self.players.count < 1 {
            bail!("players.count must be at least 1");
        }
        for o in &self.players.overrides {
            if o.player >= self.players.count {
                bail!("override for player {} but only {} players", o.player, self.players.count);
            }
        }
        let a = &self.admissible;
        match a.mode {
            Mode::Fuel if a.cap.is_none() => bail!("admissible.mode = \"fuel\" needs admissible.cap"),
            Mode::Lipschitz if a.n.is_none() && a.n_schedule.is_none() => {
                bail!("admissible.mode = \"lipschitz\" needs admissible.n or admissible.n_schedule")
            }
            _ => {}
        }
        if let Some(s) = &a.n_schedule {
            mfgame::sweep::validate_schedule(s).map_err(|e| anyhow!("admissible.n_schedule: {e}"))?;
        }
        if let Some(sdg) = &self.sdg {
            if sdg.players.len() != self.players.count {
                bail!("sdg.players has {} entries for {} players", sdg.players.len(), self.players.count);
            }
            if self.players.dim != 1 {
                bail!("sdg games need players.dim = 1");
            }
        }
        self.build_tree()?;
        Ok(())
    }

    pub fn build_tree(&self) -> Result<ScenarioTree> {
        let t = &self.tree;
        let tree = match t.kind {
            TreeKind::Binary => ScenarioTree::binary(t.depth, t.dt, t.up_prob),
            TreeKind::Chain => ScenarioTree::chain(t.depth, t.dt),
            TreeKind::Product => ScenarioTree::product(t.depth, t.dt, t.factors, t.up_prob),
        };
        tree.map_err(|e| anyhow!("tree: {e}"))
    }

    fn player_costs(&self) -> (Vec<CostFamily>, Vec<CostFamily>) {
        let n = self.players.count;
        let mut running = vec![self.players.running.family(); n];
        let mut terminal = vec![self.players.terminal.family(); n];
        for o in &self.players.overrides {
            if let Some(c) = &o.running {
                running[o.player] = c.family();
            }
            if let Some(c) = &o.terminal {
                terminal[o.player] = c.family();
            }
        }
        (running, terminal)
    }

    fn price(&self, tree: &ScenarioTree) -> Result<AdaptedProcess> {
        let n = self.players.count;
        let d = self.players.dim;
        let base = match &self.processes.price {
            PriceSection::Constant { value } => AdaptedProcess::constant(tree, &[*value]),
            PriceSection::Gbm { value, mu, sigma, factor } => {
                if *factor >= tree.factors() {
                    bail!("processes.price.factor {factor} but the tree has {} factors", tree.factors());
                }
                let e = mfgame::sdg_adapters::gbm_exponential(*mu, *sigma, tree, *factor);
                AdaptedProcess::from_fn(tree, 1, |id, v| v[0] = value * e.get(id, 0))
            }
        };
        let mut scale = vec![1.0; n];
        let mut fixed: Vec<Option<f64>> = vec![None; n];
        for o in &self.players.overrides {
            if let Some(p) = o.price {
                fixed[o.player] = Some(p);
                scale[o.player] = 0.0;
            }
        }
        Ok(AdaptedProcess::from_fn(tree, n * d, |id, v| {
            for i in 0..n {
                for c in 0..d {
                    v[i * d + c] = fixed[i].unwrap_or(0.0) + scale[i] * base.get(id, 0);
                }
            }
        }))
    }

    fn exogenous(&self, tree: &ScenarioTree) -> Result<AdaptedProcess> {
        Ok(match &self.processes.exogenous {
            ExogenousSection::Zero => AdaptedProcess::zeros(tree, 1),
            ExogenousSection::Constant { value } => AdaptedProcess::constant(tree, &[*value]),
            ExogenousSection::DriftedBrownian { l0, drift, vol, factor } => {
                if *factor >= tree.factors() {
                    bail!("processes.exogenous.factor {factor} but the tree has {} factors", tree.factors());
                }
                let w = tree.brownian(*factor);
                AdaptedProcess::from_fn(tree, 1, |id, v| {
                    v[0] = l0 + drift * tree.time_of(id) + vol * w.get(id, 0);
                })
            }
        })
    }

    pub fn build_game(&self) -> Result<GameSpec> {
        let tree = self.build_tree()?;
        let (running, terminal) = self.player_costs();
        let price = self.price(&tree)?;
        let l = self.exogenous(&tree)?;
        let mut game =
            GameSpec::new(tree, self.players.dim, running, terminal, price, l).map_err(|e| anyhow!("game: {e}"))?;
        game.fuel_cap = self.admissible.cap;
        game.lipschitz_n = self.admissible.n;
        Ok(game)
    }

    /// Raw state game for the `sdg` subcommand.
    pub fn build_sdg(&self) -> Result<(ScenarioTree, SdgSpec)> {
        let section = self.sdg.as_ref().ok_or_else(|| anyhow!("config has no [sdg] section"))?;
        let tree = self.build_tree()?;
        let (running, terminal) = self.player_costs();
        let players = section
            .players
            .iter()
            .zip(running.into_iter().zip(terminal))
            .map(|(p, (running, terminal))| SdgPlayer {
                dynamics: p.dynamics,
                x0: p.x0,
                running,
                terminal,
                noise_factor: p.noise_factor,
            })
            .collect();
        let spec = SdgSpec { players, price: self.price(&tree)?, exogenous: self.exogenous(&tree)? };
        Ok((tree, spec))
    }

    pub fn admissible_set(&self) -> AdmissibleSet {
        match self.admissible.mode {
            Mode::Monotone => AdmissibleSet::monotone(),
            Mode::Fuel => AdmissibleSet::fuel(self.admissible.cap.unwrap_or(0.0)),
            Mode::Lipschitz => AdmissibleSet::lipschitz(
                self.admissible
                    .n
                    .or_else(|| self.admissible.n_schedule.as_ref().and_then(|s| s.last().copied()))
                    .unwrap_or(1.0),
            ),
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        let s = &self.solver;
        let d = SolverOptions::default();
        SolverOptions {
            max_iters: s.max_iters.unwrap_or(d.max_iters),
            grad_tol: s.grad_tol.unwrap_or(d.grad_tol),
            momentum: s.momentum.unwrap_or(d.momentum),
            divergence_cap: s.divergence_cap.unwrap_or(d.divergence_cap),
            ..d
        }
    }

    pub fn topkis_options(&self) -> TopkisOptions {
        let s = &self.solver;
        let d = TopkisOptions::default();
        TopkisOptions {
            outer_tol: s.outer_tol.unwrap_or(d.outer_tol),
            max_outer: s.max_outer.unwrap_or(d.max_outer),
            inner: self.solver_options(),
            inner_tol_start: s.inner_tol_start,
        }
    }

    pub fn sweep_options(&self) -> SweepOptions {
        let s = &self.solver;
        let d = SweepOptions::default();
        SweepOptions {
            topkis: self.topkis_options(),
            warm_start: s.warm_start.unwrap_or(d.warm_start),
            certify_budget: s.certify_budget.unwrap_or(d.certify_budget),
            payoff_tol: s.payoff_tol.unwrap_or(d.payoff_tol),
            ..d
        }
    }

    pub fn certify_budget(&self) -> f64 {
        self.solver.certify_budget.unwrap_or(1e-6)
    }

    pub fn structure_check(&self) -> StructureCheck {
        StructureCheck { samples: self.checks.samples, tol: self.checks.tol, seed: self.tree.seed }
    }

    pub fn sample_box(&self, l_dims: usize, l_range: [f64; 2]) -> SampleBox {
        let a = self.checks.a_range;
        SampleBox::uniform(l_dims, (l_range[0], l_range[1]), self.players.count * self.players.dim, (a[0], a[1]))
    }
}
