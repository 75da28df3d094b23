//! Model files, result bundles, and the commands behind the CLI.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cascade::{
    calibrate_lambda, check_cascade_optimality_detailed, evaluate, evaluate_exact, solve, CascadeOptimality, Policy,
    RiskReport, StageSpec, SystemSpec,
};
use crate::duty_cycle::{dc_risk, dominance_check, energy_equivalent_rho, Dominance, DutyCycleSpec};
use crate::error::{Error, Result};
use crate::fixture;
use crate::graph::{graph_activation_probabilities, solve_graph, DetectionGraph, GraphPolicy, NodeActivation};
use crate::model::{BeliefGrid, FeatureModel, UncertaintyParams};
use crate::robust::{least_favorable, BeliefInterval};
use crate::sim::{simulate_duty_cycle, simulate_graph, simulate_with_generators, Mode, SimReport, StreamConfig};

pub const FORMAT_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Probability arrays may be off by this much and are renormalized.
const PMF_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub p0: Vec<f64>,
    pub p1: Vec<f64>,
    pub on_cost: f64,
    #[serde(default)]
    pub off_cost: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub carry_on_cost: f64,
    #[serde(default, skip_serializing_if = "UncertaintyParams::is_zero")]
    pub uncertainty: UncertaintyParams,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

/// Real duty-cycler costs used by `compare`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DutyCycleCosts {
    pub on_cost: f64,
    pub off_cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Sweep {
    pub fn points(&self) -> Vec<f64> {
        if self.n <= 1 {
            return vec![self.lo];
        }
        (0..self.n)
            .map(|k| {
                let t = k as f64 / (self.n - 1) as f64;
                self.lo * (1.0 - t) + self.hi * t
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || !(0.0..=1.0).contains(&self.lo) || !(0.0..=1.0).contains(&self.hi) || self.lo > self.hi {
            return Err(Error::Input(format!(
                "invalid sweep {}:{}:{}",
                self.lo, self.hi, self.n
            )));
        }
        Ok(())
    }
}

impl std::str::FromStr for Sweep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::Input(format!("sweep must look like lo:hi:n, got {s:?}"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let sweep = Sweep {
            lo: parts[0].trim().parse().map_err(|_| bad())?,
            hi: parts[1].trim().parse().map_err(|_| bad())?,
            n: parts[2].trim().parse().map_err(|_| bad())?,
        };
        sweep.validate()?;
        Ok(sweep)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandEntry {
    pub stage: usize,
    pub lower: f64,
    pub upper: f64,
    pub residual_null: f64,
    pub residual_target: f64,
}

/// On-disk description of a cascade (`stages`) or a detection graph
/// (`nodes` + `edges`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub version: u32,
    pub miss_cost: f64,
    pub fa_cost: f64,
    pub prior: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<f64>,
    #[serde(default = "default_grid")]
    pub grid_size: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stages: Vec<StageEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nodes: Vec<StageEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edges: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duty_cycle: Option<DutyCycleCosts>,
    /// Intermediate stage (0-based) removed for the truncated comparison.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncate_stage: Option<usize>,
    /// Present on files written by `robustify`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bands: Option<Vec<BandEntry>>,
}

fn default_grid() -> usize {
    BeliefGrid::DEFAULT_SIZE
}

pub enum Design {
    Cascade(SystemSpec),
    Graph(DetectionGraph),
}

fn pmf(label: &str, which: &str, p: &[f64]) -> Result<Vec<f64>> {
    if p.len() < 2 {
        return Err(Error::Schema(format!("{label}: {which} needs at least two entries")));
    }
    if p.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(Error::Schema(format!(
            "{label}: {which} has negative or non-finite entries"
        )));
    }
    let sum: f64 = p.iter().sum();
    let dev = (sum - 1.0).abs();
    if dev > PMF_TOLERANCE {
        return Err(Error::Schema(format!("{label}: {which} sums to {sum}, not 1")));
    }
    if dev <= 1e-9 {
        return Ok(p.to_vec());
    }
    log::warn!("{label}: {which} sums to {sum}; renormalizing");
    Ok(p.iter().map(|x| x / sum).collect())
}

impl StageEntry {
    fn to_stage(&self, label: &str) -> Result<StageSpec> {
        if self.p0.len() != self.p1.len() {
            return Err(Error::Schema(format!("{label}: p0 and p1 lengths differ")));
        }
        let model = FeatureModel::new(pmf(label, "p0", &self.p0)?, pmf(label, "p1", &self.p1)?)
            .map_err(|e| Error::Schema(format!("{label}: {e}")))?;
        self.uncertainty
            .validate()
            .map_err(|e| Error::Schema(format!("{label}: {e}")))?;
        Ok(StageSpec {
            model,
            on_cost: self.on_cost,
            off_cost: self.off_cost,
            uncertainty: self.uncertainty,
            carry_on_cost: self.carry_on_cost,
        })
    }

    fn from_stage(st: &StageSpec, name: Option<String>) -> Self {
        Self {
            name,
            p0: st.model.p0().to_vec(),
            p1: st.model.p1().to_vec(),
            on_cost: st.on_cost,
            off_cost: st.off_cost,
            carry_on_cost: st.carry_on_cost,
            uncertainty: st.uncertainty,
        }
    }

    fn label(&self, kind: &str, i: usize) -> String {
        match &self.name {
            Some(n) => format!("{kind} {} ({n})", i + 1),
            None => format!("{kind} {}", i + 1),
        }
    }
}

impl ModelFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        file.validate()?;
        Ok(file)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model file serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                self.version
            )));
        }
        if self.stages.is_empty() == self.nodes.is_empty() {
            return Err(Error::Schema("exactly one of `stages` or `nodes` must be given".into()));
        }
        if !self.stages.is_empty() && !self.edges.is_empty() {
            return Err(Error::Schema("`edges` only apply to `nodes`".into()));
        }
        if self.lambda.is_some() && self.budget.is_some() {
            return Err(Error::Schema("give either `lambda` or `budget`, not both".into()));
        }
        if self.grid_size < 2 {
            return Err(Error::Schema("grid_size must be at least 2".into()));
        }
        if let Some(s) = &self.sweep {
            s.validate().map_err(|e| Error::Schema(e.to_string()))?;
        }
        self.design().map(|_| ())
    }

    pub fn grid(&self) -> Result<BeliefGrid> {
        BeliefGrid::new(self.grid_size)
    }

    pub fn design(&self) -> Result<Design> {
        let schema = |e: Error| match e {
            Error::Input(m) => Error::Schema(m),
            other => other,
        };
        if !self.stages.is_empty() {
            let stages = self
                .stages
                .iter()
                .enumerate()
                .map(|(i, s)| s.to_stage(&s.label("stage", i)))
                .collect::<Result<Vec<_>>>()?;
            let spec = SystemSpec::new(
                stages,
                self.miss_cost,
                self.fa_cost,
                self.prior,
                self.lambda.unwrap_or(0.0),
            )
            .map_err(schema)?;
            if let Some(t) = self.truncate_stage {
                spec.drop_stage(t).map_err(schema)?;
            }
            Ok(Design::Cascade(spec))
        } else {
            if self.budget.is_some() {
                return Err(Error::Schema("energy budgets are only supported for cascades".into()));
            }
            let nodes = self
                .nodes
                .iter()
                .enumerate()
                .map(|(i, s)| s.to_stage(&s.label("node", i)))
                .collect::<Result<Vec<_>>>()?;
            Ok(Design::Graph(
                DetectionGraph::new(nodes, self.edges.clone()).map_err(schema)?,
            ))
        }
    }

    pub fn cascade(&self) -> Result<SystemSpec> {
        match self.design()? {
            Design::Cascade(s) => Ok(s),
            Design::Graph(_) => Err(Error::Schema("this command needs a cascade (`stages`)".into())),
        }
    }

    /// Hash of the file contents together with command options.
    pub fn config_hash(&self, options: &str) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("model file serializes"));
        h.update([0u8]);
        h.update(options.as_bytes());
        hex::encode(h.finalize())
    }
}

/// The bundled three-stage fixture as a model file.
pub fn fixture_file() -> ModelFile {
    let spec = fixture::warbler_like().expect("fixture is valid");
    let names = ["prefilter", "spectral", "classifier"];
    ModelFile {
        version: FORMAT_VERSION,
        miss_cost: spec.miss_cost,
        fa_cost: spec.fa_cost,
        prior: spec.prior,
        sweep: Some(Sweep {
            lo: 0.05,
            hi: 0.15,
            n: 11,
        }),
        lambda: Some(spec.lambda),
        budget: None,
        grid_size: BeliefGrid::DEFAULT_SIZE,
        stages: spec
            .stages
            .iter()
            .zip(names)
            .map(|(s, n)| StageEntry::from_stage(s, Some(n.into())))
            .collect(),
        nodes: Vec::new(),
        edges: Vec::new(),
        duty_cycle: Some(DutyCycleCosts {
            on_cost: fixture::DC_ON,
            off_cost: fixture::DC_OFF,
        }),
        truncate_stage: Some(1),
        bands: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub tool_version: String,
    pub config_hash: String,
}

impl Meta {
    pub fn new(file: &ModelFile, options: &str) -> Self {
        Self {
            tool_version: TOOL_VERSION.to_string(),
            config_hash: file.config_hash(options),
        }
    }
}

/// Least-favorable models for every robustified stage (or non-terminal node),
/// as a loadable model file carrying its band report.
pub fn cmd_robustify(file: &ModelFile) -> Result<ModelFile> {
    let entries = if file.stages.is_empty() {
        &file.nodes
    } else {
        &file.stages
    };
    let exact: Vec<bool> = match file.design()? {
        Design::Cascade(s) => (0..s.len()).map(|i| i + 1 == s.len()).collect(),
        Design::Graph(g) => {
            let topo = g.topology()?;
            topo.neighbors.iter().map(|n| n.is_empty()).collect()
        }
    };
    let mut out = file.clone();
    let mut bands = Vec::new();
    let mut robust = Vec::with_capacity(entries.len());
    for (i, e) in entries.iter().enumerate() {
        let st = e.to_stage(&e.label("stage", i))?;
        let u = if exact[i] {
            UncertaintyParams::default()
        } else {
            st.uncertainty
        };
        let lf = least_favorable(&st.model, &u)?;
        bands.push(BandEntry {
            stage: i,
            lower: lf.band.lower,
            upper: lf.band.upper,
            residual_null: lf.residual_null,
            residual_target: lf.residual_target,
        });
        let mut r = StageEntry::from_stage(&StageSpec { model: lf.model, ..st }, e.name.clone());
        r.uncertainty = UncertaintyParams::default();
        robust.push(r);
    }
    if file.stages.is_empty() {
        out.nodes = robust;
    } else {
        out.stages = robust;
    }
    out.bands = Some(bands);
    Ok(out)
}

/// Robustified design with the nominal models kept for data generation.
pub fn robust_cascade(file: &ModelFile) -> Result<(SystemSpec, Vec<FeatureModel>)> {
    let rs = file.cascade()?.robustified()?;
    Ok((rs.spec, rs.nominal))
}

pub fn robust_graph(file: &ModelFile) -> Result<DetectionGraph> {
    let robust = cmd_robustify(file)?;
    match robust.design()? {
        Design::Graph(g) => Ok(g),
        Design::Cascade(_) => Err(Error::Schema("expected a graph (`nodes`)".into())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Drive {
    File,
    Lambda(f64),
    Budget(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageActivation {
    pub stage: usize,
    pub beliefs: Vec<f64>,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeSummary {
    pub lambda: f64,
    pub thresholds: Vec<f64>,
    #[serde(with = "crate::serde_ext::vec_f64_inf")]
    pub decision_thresholds: Vec<f64>,
    pub bounds: Vec<BeliefInterval>,
    pub risk: RiskReport,
    pub exact_risk: RiskReport,
    pub optimality: CascadeOptimality,
    pub dominance: Dominance,
    /// Activation probability per stage over its admissible incoming beliefs.
    pub activation: Vec<StageActivation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub lambda: f64,
    pub post_order: Vec<usize>,
    #[serde(with = "crate::serde_ext::vec_f64_inf")]
    pub thresholds: Vec<f64>,
    pub root_value: f64,
    pub activation: Vec<NodeActivation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizeOutput {
    Cascade {
        meta: Meta,
        summary: Box<CascadeSummary>,
        policy: Box<Policy>,
    },
    Graph {
        meta: Meta,
        summary: Box<GraphSummary>,
        policy: Box<GraphPolicy>,
    },
}

/// Saved policy for `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyFile {
    Cascade {
        version: u32,
        meta: Meta,
        policy: Policy,
    },
    Graph {
        version: u32,
        meta: Meta,
        policy: GraphPolicy,
    },
}

impl OptimizeOutput {
    pub fn policy_file(&self) -> PolicyFile {
        match self {
            OptimizeOutput::Cascade { meta, policy, .. } => PolicyFile::Cascade {
                version: FORMAT_VERSION,
                meta: meta.clone(),
                policy: (**policy).clone(),
            },
            OptimizeOutput::Graph { meta, policy, .. } => PolicyFile::Graph {
                version: FORMAT_VERSION,
                meta: meta.clone(),
                policy: (**policy).clone(),
            },
        }
    }
}

fn resolve_drive(file: &ModelFile, drive: Drive) -> Drive {
    match drive {
        Drive::File => match (file.lambda, file.budget) {
            (_, Some(b)) => Drive::Budget(b),
            (Some(l), None) => Drive::Lambda(l),
            (None, None) => Drive::Lambda(0.0),
        },
        d => d,
    }
}

/// Solves a robustified cascade at its prior, calibrating λ when budget-driven.
pub fn solve_cascade(spec: &SystemSpec, drive: Drive, grid: BeliefGrid) -> Result<(SystemSpec, Policy)> {
    match drive {
        Drive::Budget(e) => {
            let (lambda, policy) = calibrate_lambda(spec, e, grid)?;
            Ok((spec.with_lambda(lambda), policy))
        }
        Drive::Lambda(l) => {
            let s = spec.with_lambda(l);
            let p = solve(&s, grid)?;
            Ok((s, p))
        }
        Drive::File => unreachable!("resolved before solving"),
    }
}

pub fn cascade_summary(spec: &SystemSpec, policy: &Policy) -> Result<CascadeSummary> {
    let risk = evaluate(spec, policy)?;
    let exact_risk = evaluate_exact(spec, policy)?;
    let grid = policy.grid();
    let activation = spec
        .stages
        .iter()
        .enumerate()
        .map(|(s, st)| {
            let iv = if s == 0 {
                BeliefInterval::point(spec.prior)
            } else {
                policy.bounds[s - 1]
            };
            let mut beliefs = vec![iv.lo];
            beliefs.extend(grid.points().filter(|&b| b > iv.lo && b < iv.hi));
            if iv.hi > iv.lo {
                beliefs.push(iv.hi);
            }
            let tau = policy.decision_thresholds[s];
            let probabilities = beliefs
                .iter()
                .map(|&b| crate::adaptive::activation_probability(&st.model, tau, b))
                .collect();
            StageActivation {
                stage: s,
                beliefs,
                probabilities,
            }
        })
        .collect();
    Ok(CascadeSummary {
        lambda: policy.lambda,
        thresholds: policy.thresholds.clone(),
        decision_thresholds: policy.decision_thresholds.clone(),
        bounds: policy.bounds.clone(),
        risk,
        exact_risk,
        optimality: check_cascade_optimality_detailed(spec, policy)?,
        dominance: dominance_check(spec, policy, &risk)?,
        activation,
    })
}

pub fn cmd_optimize(file: &ModelFile, drive: Drive, grid_size: Option<usize>) -> Result<OptimizeOutput> {
    let grid = BeliefGrid::new(grid_size.unwrap_or(file.grid_size))?;
    let drive = resolve_drive(file, drive);
    let meta = Meta::new(file, &format!("optimize {drive:?} {}", grid.size()));
    match file.design()? {
        Design::Cascade(_) => {
            let (robust, _) = robust_cascade(file)?;
            let (spec, policy) = solve_cascade(&robust, drive, grid)?;
            let summary = cascade_summary(&spec, &policy)?;
            Ok(OptimizeOutput::Cascade {
                meta,
                summary: Box::new(summary),
                policy: Box::new(policy),
            })
        }
        Design::Graph(_) => {
            let lambda = match drive {
                Drive::Lambda(l) => l,
                _ => return Err(Error::Schema("energy budgets are only supported for cascades".into())),
            };
            let g = robust_graph(file)?;
            let policy = solve_graph(&g, file.miss_cost, file.fa_cost, lambda, file.prior, grid)?;
            let summary = GraphSummary {
                lambda,
                post_order: g.post_order()?,
                thresholds: policy.nodes.iter().map(|n| n.threshold).collect(),
                root_value: policy.root_value,
                activation: graph_activation_probabilities(&g, &policy)?,
            };
            Ok(OptimizeOutput::Graph {
                meta,
                summary: Box::new(summary),
                policy: Box::new(policy),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityOutput {
    pub meta: Meta,
    pub lambda: f64,
    pub optimality: CascadeOptimality,
}

pub fn cmd_check_optimality(file: &ModelFile, drive: Drive, grid_size: Option<usize>) -> Result<OptimalityOutput> {
    let grid = BeliefGrid::new(grid_size.unwrap_or(file.grid_size))?;
    let drive = resolve_drive(file, drive);
    let meta = Meta::new(file, &format!("check-optimality {drive:?} {}", grid.size()));
    let (robust, _) = robust_cascade(file)?;
    let (spec, policy) = solve_cascade(&robust, drive, grid)?;
    Ok(OptimalityOutput {
        meta,
        lambda: spec.lambda,
        optimality: check_cascade_optimality_detailed(&spec, &policy)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateOutput {
    pub meta: Meta,
    pub config: StreamConfig,
    pub report: SimReport,
}

/// Runs a saved policy on data drawn from the file's nominal models.
pub fn cmd_simulate(file: &ModelFile, policy: &PolicyFile, cfg: StreamConfig) -> Result<SimulateOutput> {
    let meta = Meta::new(file, &format!("simulate {}", serde_json::to_string(&cfg)?));
    let report = match (file.design()?, policy) {
        (Design::Cascade(_), PolicyFile::Cascade { policy, .. }) => {
            let (robust, nominal) = robust_cascade(file)?;
            let spec = robust.with_lambda(policy.lambda);
            simulate_with_generators(&spec, policy, &nominal, &cfg)?
        }
        (Design::Graph(_), PolicyFile::Graph { policy, .. }) => {
            if !matches!(cfg.mode, Mode::Belief) {
                return Err(Error::Input("adaptive mode is only available for cascades".into()));
            }
            let g = robust_graph(file)?;
            simulate_graph(&g, policy, &cfg)?
        }
        _ => {
            return Err(Error::PolicyMismatch(
                "policy kind does not match the model file".into(),
            ))
        }
    };
    Ok(SimulateOutput {
        meta,
        config: cfg,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub pi0: f64,
    pub gp_risk: f64,
    pub dc_ideal_risk: f64,
    pub dc_real_risk: f64,
    pub gp_energy: f64,
    pub dc_energy: f64,
    pub gp_fa: f64,
    pub dc_fa: f64,
    pub gp_miss: f64,
    pub dc_miss: f64,
    pub dominance_eq13: bool,
    pub dominance_eq14: bool,
    pub lambda: f64,
    pub gp_risk_exact: f64,
    pub gp_risk_sim: f64,
    pub gp_risk_sim_se: f64,
    pub gp_energy_sim: f64,
    pub gp_energy_sim_se: f64,
    pub dc_real_risk_se: f64,
    pub dc_energy_se: f64,
    pub rho_ideal: f64,
    pub rho_real: f64,
    pub gp_truncated_risk: f64,
}

const COLUMNS: [&str; 23] = [
    "pi0",
    "gp_risk",
    "dc_ideal_risk",
    "dc_real_risk",
    "gp_energy",
    "dc_energy",
    "gp_fa",
    "dc_fa",
    "gp_miss",
    "dc_miss",
    "dominance_eq13",
    "dominance_eq14",
    "lambda",
    "gp_risk_exact",
    "gp_risk_sim",
    "gp_risk_sim_se",
    "gp_energy_sim",
    "gp_energy_sim_se",
    "dc_real_risk_se",
    "dc_energy_se",
    "rho_ideal",
    "rho_real",
    "gp_truncated_risk",
];

impl CompareRow {
    fn fields(&self) -> Vec<String> {
        let f = |x: f64| format!("{x:.16e}");
        let mut out: Vec<String> = [
            self.pi0,
            self.gp_risk,
            self.dc_ideal_risk,
            self.dc_real_risk,
            self.gp_energy,
            self.dc_energy,
            self.gp_fa,
            self.dc_fa,
            self.gp_miss,
            self.dc_miss,
        ]
        .iter()
        .map(|&x| f(x))
        .collect();
        out.push(self.dominance_eq13.to_string());
        out.push(self.dominance_eq14.to_string());
        out.extend(
            [
                self.lambda,
                self.gp_risk_exact,
                self.gp_risk_sim,
                self.gp_risk_sim_se,
                self.gp_energy_sim,
                self.gp_energy_sim_se,
                self.dc_real_risk_se,
                self.dc_energy_se,
                self.rho_ideal,
                self.rho_real,
                self.gp_truncated_risk,
            ]
            .iter()
            .map(|&x| if x.is_nan() { "nan".to_string() } else { f(x) }),
        );
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareOutput {
    pub meta: Meta,
    pub rows: Vec<CompareRow>,
}

impl CompareOutput {
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "# tool_version={} config_hash={}\n{}\n",
            self.meta.tool_version,
            self.meta.config_hash,
            COLUMNS.join(",")
        );
        for r in &self.rows {
            s.push_str(&r.fields().join(","));
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareOptions {
    pub sweep: Option<Sweep>,
    pub n_frames: u64,
    pub seed: u64,
    pub grid_size: Option<usize>,
    pub drive: Drive,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            sweep: None,
            n_frames: 1_000_000,
            seed: 0,
            grid_size: None,
            drive: Drive::File,
        }
    }
}

/// Guided processing against the ideal and real duty-cyclers over a prior sweep.
pub fn cmd_compare(file: &ModelFile, opts: &CompareOptions) -> Result<CompareOutput> {
    let sweep = opts.sweep.or(file.sweep).unwrap_or(Sweep {
        lo: 0.05,
        hi: 0.15,
        n: 11,
    });
    sweep.validate()?;
    if opts.n_frames == 0 {
        return Err(Error::Input("n_frames must be at least 1".into()));
    }
    let grid = BeliefGrid::new(opts.grid_size.unwrap_or(file.grid_size))?;
    let drive = resolve_drive(file, opts.drive);
    let meta = Meta::new(
        file,
        &format!(
            "compare {:?} {} {} {} {drive:?}",
            sweep,
            opts.n_frames,
            opts.seed,
            grid.size()
        ),
    );
    let (robust, nominal) = robust_cascade(file)?;
    let last = robust.stages.last().expect("nonempty cascade");
    let real = file.duty_cycle.unwrap_or(DutyCycleCosts {
        on_cost: last.on_cost,
        off_cost: last.off_cost,
    });
    let truncate = file.truncate_stage;
    let rows = sweep
        .points()
        .into_par_iter()
        .enumerate()
        .map(|(k, pi0)| -> Result<CompareRow> {
            let (spec, policy) = solve_cascade(&robust.with_prior(pi0), drive, grid)?;
            let risk = evaluate(&spec, &policy)?;
            let exact = evaluate_exact(&spec, &policy)?;
            let dom = dominance_check(&spec, &policy, &risk)?;
            let lambda = spec.lambda;

            let cfg = StreamConfig::new(opts.n_frames, stream_seed(opts.seed, k, 0));
            let gp_sim = simulate_with_generators(&spec, &policy, &nominal, &cfg)?;

            let ideal_rho = energy_equivalent_rho(exact.energy, last.on_cost, last.off_cost);
            let ideal = dc_risk(&DutyCycleSpec::ideal(&spec, ideal_rho.rho), lambda);
            let real_rho = energy_equivalent_rho(exact.energy, real.on_cost, real.off_cost);
            if real_rho.clamped {
                log::warn!("pi0={pi0}: cascade energy outside the duty-cycler's range");
            }
            let dc = DutyCycleSpec::with_costs(&spec, real_rho.rho, real.on_cost, real.off_cost);
            let dc_cfg = StreamConfig::new(opts.n_frames, stream_seed(opts.seed, k, 1));
            let dc_sim = simulate_duty_cycle(&dc, lambda, &dc_cfg)?;

            let truncated = match truncate {
                Some(t) => solve(&spec.drop_stage(t)?, grid)?.root_value,
                None => f64::NAN,
            };
            Ok(CompareRow {
                pi0,
                gp_risk: risk.total,
                dc_ideal_risk: ideal.total,
                dc_real_risk: dc_sim.risk,
                gp_energy: exact.energy,
                dc_energy: dc_sim.energy,
                gp_fa: exact.final_fa / spec.fa_cost,
                dc_fa: dc_sim.fa_rate,
                gp_miss: (exact.inter_miss + exact.final_miss) / spec.miss_cost,
                dc_miss: dc_sim.miss_rate,
                dominance_eq13: dom.eq13,
                dominance_eq14: dom.eq14,
                lambda,
                gp_risk_exact: exact.total,
                gp_risk_sim: gp_sim.risk,
                gp_risk_sim_se: gp_sim.risk_se,
                gp_energy_sim: gp_sim.energy,
                gp_energy_sim_se: gp_sim.energy_se,
                dc_real_risk_se: dc_sim.risk_se,
                dc_energy_se: dc_sim.energy_se,
                rho_ideal: ideal_rho.rho,
                rho_real: real_rho.rho,
                gp_truncated_risk: truncated,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CompareOutput { meta, rows })
}

/// Distinct seed per sweep point and stream role.
fn stream_seed(seed: u64, point: usize, role: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((point as u64).to_le_bytes());
    h.update(role.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelFile {
        ModelFile::from_json(
            r#"{
                "version": 1, "miss_cost": 3, "fa_cost": 1, "prior": 0.2, "lambda": 0.01, "grid_size": 201,
                "stages": [
                    {"p0": [0.5, 0.3, 0.2], "p1": [0.1, 0.3, 0.6], "on_cost": 1.0,
                     "uncertainty": {"eps0": 0.05, "eps1": 0.05, "nu0": 0.0, "nu1": 0.0}},
                    {"p0": [0.7, 0.2, 0.1], "p1": [0.1, 0.2, 0.7], "on_cost": 10.0, "off_cost": 1.0}
                ]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let f = small();
        assert_eq!(ModelFile::from_json(&f.to_json()).unwrap(), f);
        let fx = fixture_file();
        assert_eq!(ModelFile::from_json(&fx.to_json()).unwrap(), fx);
    }

    #[test]
    fn malformed_pmf_names_the_stage() {
        let text = small().to_json().replace("0.7,", "0.2,");
        match ModelFile::from_json(&text) {
            Err(Error::Schema(m)) => assert!(m.contains("stage 2"), "{m}"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn small_drift_is_renormalized() {
        let mut f = small();
        f.stages[0].p0 = vec![0.5, 0.3, 0.2 + 5e-7];
        let s = f.cascade().unwrap();
        assert!((s.stages[0].model.p0().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_ambiguous_files() {
        let mut f = small();
        f.budget = Some(5.0);
        assert!(matches!(f.validate(), Err(Error::Schema(_))));
        let mut f = small();
        f.version = 7;
        assert!(matches!(f.validate(), Err(Error::Schema(_))));
        assert!(ModelFile::from_json(r#"{"version": 1}"#).is_err());
    }

    #[test]
    fn robustify_without_uncertainty_is_identity() {
        let mut f = small();
        f.stages[0].uncertainty = UncertaintyParams::default();
        let r = cmd_robustify(&f).unwrap();
        assert_eq!(r.stages[0].p0, f.stages[0].p0);
        let bands = r.bands.unwrap();
        assert!((bands[0].lower - 0.2).abs() < 1e-15);
        assert!((bands[0].upper - 3.0).abs() < 1e-15);
    }

    #[test]
    fn sweep_points_are_exact_at_the_ends() {
        let s: Sweep = "0.05:0.15:11".parse().unwrap();
        let p = s.points();
        assert_eq!(p.len(), 11);
        assert_eq!((p[0], p[10]), (0.05, 0.15));
        assert!("0.1:0.05:3".parse::<Sweep>().is_err());
        assert!("0.1:0.2".parse::<Sweep>().is_err());
    }

    #[test]
    fn hash_depends_on_options() {
        let f = small();
        assert_ne!(f.config_hash("a"), f.config_hash("b"));
        assert_eq!(f.config_hash("a"), f.config_hash("a"));
    }
}
