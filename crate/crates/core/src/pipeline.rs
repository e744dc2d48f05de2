//! End-to-end learning: planning, data access, per-node inversion, fits,
//! holdout validation and extrapolation.
//!
//! The learner talks to the process only through [`ExactAccess`] (oracle
//! mode) or [`ShadowAccess`] (sampled mode); the ground-truth ansatz stays on
//! the simulation side.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::derivative::{plan_derivatives, DerivativePlan, PlanInputs, C_INT_SEEDS};
use crate::error::{Error, Result};
use crate::lattice::GraphSpec;
use crate::model::{AnsatzSpec, CoeffIndex, LindbladAnsatz};
use crate::pauli::{Axis, PauliString};
use crate::probes::{build_probes, pauli_neighbors, ProbeSpec};
use crate::rev::{channel_from_stats, default_eps_sdp, oracle_channels_with, rev, LocalChannelEstimate, RegionBasis, RevOptions, RevOutput};
use crate::schedule::{calibrate_c_int, chebyshev_nodes, extrapolation_factor, node_count, robust_fit, FitMode, LsFitter, PolySchedule, C_NODE};
use crate::shadows::{mom_groups, sample_budget_with, task_rng, ChannelTable, ShadowBatch, ShadowStats, C_SHADOW};
use crate::sim::{calibrate_lr, lr_radius, truncation_sweep, LrModel, PauliGenerator, Rk45Options};
use crate::solver::{assemble, solve, C_PERT};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Largest system on which the Lieb-Robinson calibration sweep runs.
pub const LR_CALIBRATION_LIMIT: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Oracle,
    Sampled,
}

/// How rev regions are sized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrChoice {
    /// Fit a bound to truncation sweeps of the skeleton (Hamiltonian
    /// terms at their bound, rates zero), inflated by `safety`.
    Calibrate { safety: f64 },
    Model { model: LrModel },
    Radius { r: usize },
}

impl Default for LrChoice {
    fn default() -> Self {
        LrChoice::Calibrate { safety: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Constants {
    pub c_shadow: f64,
    pub c_node: f64,
    pub c_pert: f64,
    pub c_poly: f64,
    pub lr: LrChoice,
}

impl Default for Constants {
    fn default() -> Self {
        Constants { c_shadow: C_SHADOW, c_node: C_NODE, c_pert: C_PERT, c_poly: 1.0, lr: LrChoice::default() }
    }
}

/// Structure the learner assumes: Hamiltonian terms, degree and bounds.
/// All `3n` single-site dissipators are always included.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonSpec {
    pub graph: GraphSpec,
    pub k: usize,
    #[serde(rename = "T")]
    pub t_max: f64,
    pub m: usize,
    pub h_bound: f64,
    pub tau: f64,
    pub hamiltonian: Vec<PauliString>,
}

impl SkeletonSpec {
    /// Hamiltonian terms at `h_bound`, rates zero.
    pub fn ansatz(&self) -> Result<LindbladAnsatz> {
        let mut a = LindbladAnsatz::new(self.graph.build()?, self.k, self.t_max, self.tau);
        for p in &self.hamiltonian {
            a.add_term(CoeffIndex::Hamiltonian(p.clone()), PolySchedule::constant(self.t_max, self.h_bound))?;
        }
        for site in 0..a.n() {
            for axis in Axis::ALL {
                a.add_term(CoeffIndex::Dissipative { site, axis }, PolySchedule::zero(self.t_max))?;
            }
        }
        Ok(a)
    }
}

fn default_region_cap() -> usize {
    crate::rev::REGION_CAP
}
fn default_degree_cap() -> usize {
    400
}
fn default_ode_tol() -> f64 {
    1e-11
}
fn default_fit_mode() -> FitMode {
    FitMode::LeastSquares
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnConfig {
    /// Ground truth driving the simulator; absent when learning from a snapshot file.
    #[serde(default)]
    pub truth: Option<AnsatzSpec>,
    #[serde(default)]
    pub snapshots: Option<String>,
    pub skeleton: SkeletonSpec,
    pub eps: f64,
    pub delta: f64,
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_region_cap")]
    pub region_cap: usize,
    /// Shrink oversized regions to the cap instead of failing.
    #[serde(default)]
    pub clamp_regions: bool,
    #[serde(default)]
    pub constants: Constants,
    #[serde(default = "default_fit_mode")]
    pub fit_mode: FitMode,
    #[serde(default = "default_degree_cap")]
    pub degree_cap: usize,
    #[serde(default = "default_ode_tol")]
    pub ode_tol: f64,
    #[serde(default)]
    pub eps_sdp: Option<f64>,
}

impl LearnConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let c: LearnConfig = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 1.0) || !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Invalid(format!("eps = {} and delta = {} must lie in (0, 1)", self.eps, self.delta)));
        }
        if let Some(t) = &self.truth {
            let skel: BTreeSet<CoeffIndex> = self.skeleton.ansatz()?.indices().into_iter().collect();
            for term in &t.terms {
                if !skel.contains(&term.index) {
                    return Err(Error::Invalid(format!("truth term {} is missing from the skeleton", term.index)));
                }
            }
        }
        Ok(())
    }

    pub fn truth_ansatz(&self) -> Result<Option<LindbladAnsatz>> {
        self.truth.as_ref().map(LindbladAnsatz::from_spec).transpose()
    }
}

// ---------------------------------------------------------------------------
// Planning

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegionRule {
    Model { model: LrModel },
    Radius { r: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "T")]
    pub t_max: f64,
    pub index: Vec<CoeffIndex>,
    pub probes: Vec<ProbeSpec>,
    pub s: usize,
    pub eps_sdp: f64,
    pub region_rule: RegionRule,
    pub primary: Vec<f64>,
    pub c_int_final: f64,
    /// Rev region per node and probe.
    pub regions: Vec<Vec<Vec<usize>>>,
    pub clamped_regions: usize,
    pub x_norm: f64,
    pub gen_norm: f64,
    pub derivative: DerivativePlan,
    pub k1k2: u128,
    pub groups: usize,
    /// Snapshots per queried time.
    pub budget_per_time: u128,
    pub total_samples: u128,
    pub t_min: f64,
    pub t_tot: f64,
}

impl Plan {
    /// Primary nodes followed by auxiliary nodes.
    pub fn all_times(&self) -> Vec<f64> {
        self.primary.iter().chain(&self.derivative.aux_nodes).copied().collect()
    }

    pub fn max_region(&self) -> usize {
        self.regions.iter().flatten().map(Vec::len).max().unwrap_or(0)
    }
}

fn region_rule(cfg: &LearnConfig, skel: &LindbladAnsatz) -> Result<RegionRule> {
    let n = skel.n();
    Ok(match &cfg.constants.lr {
        LrChoice::Radius { r } => RegionRule::Radius { r: *r },
        LrChoice::Model { model } => RegionRule::Model { model: *model },
        LrChoice::Calibrate { .. } if n == 1 => RegionRule::Radius { r: 0 },
        LrChoice::Calibrate { safety } => {
            if n > LR_CALIBRATION_LIMIT {
                return Err(Error::Infeasible(format!(
                    "calibration sweep needs n <= {LR_CALIBRATION_LIMIT}; configure an explicit model"
                )));
            }
            let centre = (0..n)
                .min_by_key(|&v| (0..n).map(|u| skel.graph.dist(v, u)).max().unwrap_or(0))
                .unwrap_or(0);
            let o = PauliString::single(n, centre, Axis::Z);
            let t = cfg.skeleton.t_max;
            let samples = truncation_sweep(skel, &o, &[0, 1, 2, 3], &[t / 4.0, t / 2.0, t], cfg.ode_tol)?;
            RegionRule::Model { model: LrModel::Calibrated(calibrate_lr(&samples, *safety)) }
        }
    })
}

fn region_for(skel: &LindbladAnsatz, rule: &RegionRule, supp: &[usize], t: f64, eps: f64, cap: usize, clamp: bool) -> Result<(Vec<usize>, bool)> {
    let n = skel.n();
    let base: BTreeSet<usize> = supp.iter().copied().collect();
    let r = match rule {
        RegionRule::Radius { r } => *r,
        RegionRule::Model { model } => lr_radius(model, eps, t, 0, n).0,
    };
    let region = skel.graph.enlarge(&base, r)?;
    if region.len() <= cap {
        return Ok((region.into_iter().collect(), false));
    }
    if !clamp {
        return Err(Error::RegionCap { size: region.len(), cap });
    }
    // nearest sites first, ties by index
    let mut sites: Vec<usize> = (0..n).collect();
    sites.sort_by_key(|&v| (skel.graph.dist_to_set(v, &base), v));
    let mut out: Vec<usize> = sites.into_iter().take(cap.max(base.len())).collect();
    out.sort_unstable();
    Ok((out, true))
}

/// Classical preprocessing: probes, nodes, regions, precision chain and budgets.
pub fn preprocess(cfg: &LearnConfig) -> Result<Plan> {
    cfg.validate()?;
    let sk = &cfg.skeleton;
    let skel = sk.ansatz()?;
    let n = skel.n();
    let (probes, s) = build_probes(&skel)?;
    let eps_sdp = cfg.eps_sdp.unwrap_or_else(|| default_eps_sdp(s));
    let rule = region_rule(cfg, &skel)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let xi1 = node_count(sk.m, cfg.delta, cfg.constants.c_node);
    let primary = chebyshev_nodes(sk.t_max, xi1, &mut rng);
    let c_int_final = calibrate_c_int(&LsFitter::new(&primary, sk.m, sk.t_max)?, C_INT_SEEDS, &mut rng);

    let mut clamped = 0;
    let mut regions = Vec::with_capacity(xi1);
    for &t in &primary {
        let mut row = Vec::with_capacity(probes.len());
        for p in &probes {
            let (r, c) = region_for(&skel, &rule, &p.q.support(), t, eps_sdp, cfg.region_cap, cfg.clamp_regions)?;
            clamped += c as usize;
            row.push(r);
        }
        regions.push(row);
    }
    let distinct: BTreeSet<&Vec<usize>> = regions.iter().flatten().collect();
    let gen_norm = distinct
        .iter()
        .map(|r| {
            skel.terms()
                .iter()
                .filter(|(i, _)| i.support().iter().any(|v| r.contains(v)))
                .map(|(i, _)| if i.is_hamiltonian() { sk.h_bound } else { sk.tau })
                .sum::<f64>()
        })
        .fold(0.0, f64::max);
    let x_norm = sk.h_bound.max(sk.tau);
    let max_region = distinct.iter().map(|r| r.len()).max().unwrap_or(0);

    let derivative = plan_derivatives(&PlanInputs {
        m: sk.m,
        t_max: sk.t_max,
        eps: cfg.eps,
        delta: cfg.delta,
        s,
        x_norm,
        gen_norm,
        region_size: max_region,
        c_int_final,
        c_node: cfg.constants.c_node,
        degree_cap: cfg.degree_cap,
        seed: cfg.seed.wrapping_add(0x9e37_79b9),
    })?;

    let times = xi1 + derivative.aux_nodes.len();
    let pairs: u128 = distinct.iter().map(|r| 1u128 << (4 * r.len())).sum();
    let k1k2 = pairs * times as u128;
    let groups = mom_groups(cfg.delta / k1k2 as f64);
    let budget = sample_budget_with(cfg.constants.c_shadow, 2 * max_region, k1k2.min(usize::MAX as u128) as usize, derivative.eps_1, cfg.delta)
        .max(groups as u128);
    let all: Vec<f64> = primary.iter().chain(&derivative.aux_nodes).copied().collect();
    let t_min = all.iter().copied().fold(f64::INFINITY, f64::min);
    let t_sum: f64 = all.iter().sum();
    Ok(Plan {
        n,
        m: sk.m,
        t_max: sk.t_max,
        index: skel.indices(),
        probes,
        s,
        eps_sdp,
        region_rule: rule,
        primary,
        c_int_final,
        regions,
        clamped_regions: clamped,
        x_norm,
        gen_norm,
        derivative,
        k1k2,
        groups,
        budget_per_time: budget,
        total_samples: budget * times as u128,
        t_min,
        t_tot: budget as f64 * t_sum,
    })
}

// ---------------------------------------------------------------------------
// Process access

/// Exact expectation values of the unknown process.
pub trait ExactAccess: Sync {
    fn n(&self) -> usize;
    fn region_channels(&self, basis: &RegionBasis, times: &[f64]) -> Result<Vec<LocalChannelEstimate>>;
    /// Entries `picks` of the Pauli vector of `T(0,t)(O)` at each of the ascending `times`.
    fn evolve(&self, o: &[(usize, f64)], times: &[f64], picks: &[usize]) -> Result<Vec<Vec<f64>>>;
}

/// Shadow statistics at the plan's time indices.
pub trait ShadowAccess {
    fn n(&self) -> usize;
    fn stats(&mut self, time_index: usize) -> Result<ShadowStats>;
}

pub struct ExactOracle {
    gen: PauliGenerator,
    tol: f64,
}

impl ExactOracle {
    pub fn new(truth: &LindbladAnsatz, tol: f64) -> Result<Self> {
        Ok(ExactOracle { gen: PauliGenerator::new(truth)?, tol })
    }
}

impl ExactAccess for ExactOracle {
    fn n(&self) -> usize {
        self.gen.n()
    }

    fn region_channels(&self, basis: &RegionBasis, times: &[f64]) -> Result<Vec<LocalChannelEstimate>> {
        oracle_channels_with(&self.gen, basis, times, self.tol)
    }

    fn evolve(&self, o: &[(usize, f64)], times: &[f64], picks: &[usize]) -> Result<Vec<Vec<f64>>> {
        let mut v = vec![0.0; self.gen.dim()];
        for &(i, c) in o {
            v[i] += c;
        }
        self.gen.evolve_entries(v, 0.0, times, picks, &Rk45Options::with_tol(self.tol))
    }
}

/// Group statistics drawn from the exact transfer tables at the planned budget.
pub struct SimulatedShadows {
    table: ChannelTable,
    budget: u128,
    groups: usize,
    seed: u64,
}

impl SimulatedShadows {
    pub fn new(truth: &LindbladAnsatz, times: &[f64], budget: u128, groups: usize, seed: u64) -> Result<Self> {
        Ok(SimulatedShadows { table: ChannelTable::from_ansatz(truth, times)?, budget, groups, seed })
    }
}

impl ShadowAccess for SimulatedShadows {
    fn n(&self) -> usize {
        self.table.n()
    }

    fn stats(&mut self, time_index: usize) -> Result<ShadowStats> {
        let mut rng = task_rng(self.seed, time_index as u64);
        ShadowStats::simulate(&self.table, time_index, self.budget, self.groups, &mut rng)
    }
}

/// Statistics from recorded snapshots.
pub struct RecordedShadows {
    batch: ShadowBatch,
    groups: usize,
}

impl RecordedShadows {
    pub fn new(batch: ShadowBatch, plan: &Plan) -> Result<Self> {
        let times = plan.all_times();
        let h = &batch.header;
        if h.n != plan.n || h.times.len() != times.len() || h.times.iter().zip(&times).any(|(a, b)| (a - b).abs() > 1e-12 * (1.0 + b.abs())) {
            return Err(Error::Invalid("snapshot times do not match the plan".into()));
        }
        Ok(RecordedShadows { batch, groups: plan.groups })
    }
}

impl ShadowAccess for RecordedShadows {
    fn n(&self) -> usize {
        self.batch.header.n
    }

    fn stats(&mut self, time_index: usize) -> Result<ShadowStats> {
        let snaps = self.batch.at(time_index);
        if snaps.is_empty() {
            return Err(Error::EmptyBatch(time_index));
        }
        ShadowStats::from_snapshots(self.batch.header.n, snaps, self.groups.min(snaps.len()))
    }
}

// ---------------------------------------------------------------------------
// Results

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveredSchedule {
    pub index: CoeffIndex,
    pub chebyshev: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub t: f64,
    pub theta: Vec<f64>,
    pub dominance_margin: f64,
    pub sparsity: usize,
    pub max_objective: f64,
    pub unconverged: usize,
    pub max_derivative_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoeffError {
    pub index: CoeffIndex,
    pub sup_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnResult {
    pub version: String,
    pub seed: u64,
    pub mode: Mode,
    pub constants: Constants,
    #[serde(rename = "T")]
    pub t_max: f64,
    pub m: usize,
    pub s: usize,
    pub eps_sdp: f64,
    pub fit_degree: usize,
    pub aux_count: usize,
    pub eps_1: f64,
    pub budget_per_time: String,
    pub total_samples: String,
    pub t_min: f64,
    pub t_tot: f64,
    pub schedules: Vec<RecoveredSchedule>,
    pub nodes: Vec<NodeReport>,
    #[serde(default)]
    pub errors: Option<Vec<CoeffError>>,
}

impl LearnResult {
    pub fn schedule(&self, idx: &CoeffIndex) -> Option<PolySchedule> {
        self.schedules.iter().find(|s| &s.index == idx).map(|s| PolySchedule::from_chebyshev(self.t_max, s.chebyshev.clone()))
    }

    pub fn max_error(&self) -> Option<f64> {
        self.errors.as_ref().map(|e| e.iter().map(|c| c.sup_error).fold(0.0, f64::max))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }
}

// ---------------------------------------------------------------------------
// Learner

struct NodeData {
    terms: Vec<Vec<(usize, f64)>>,
    overlaps: Vec<HashMap<usize, f64>>,
    objectives: Vec<f64>,
    unconverged: usize,
}

fn needed_paulis(probes: &[ProbeSpec], beta: usize) -> Result<Vec<usize>> {
    let mut out = BTreeSet::new();
    for c in probes {
        for (p, _) in pauli_neighbors(&c.map, &probes[beta].q_bar)? {
            out.insert(p.index() as usize);
        }
    }
    Ok(out.into_iter().collect())
}

fn run_rev(est: &LocalChannelEstimate, q: &PauliString, opts: &RevOptions) -> Result<(RevOutput, bool)> {
    match rev(est, q, opts) {
        Ok(o) => Ok((o, true)),
        Err(Error::NotConverged { objective, gap, best }) => Ok((
            RevOutput { region: est.region().to_vec(), coeffs: best, objective, lower_bound: objective - gap, iterations: opts.max_iter },
            false,
        )),
        Err(e) => Err(e),
    }
}

fn invert_node(plan: &Plan, i: usize, channels: &BTreeMap<Vec<usize>, LocalChannelEstimate>) -> Result<(Vec<Vec<(usize, f64)>>, Vec<f64>, usize)> {
    let opts = RevOptions::new(plan.eps_sdp);
    let outs: Vec<(Vec<(usize, f64)>, f64, bool)> = plan
        .probes
        .par_iter()
        .enumerate()
        .map(|(b, p)| {
            let est = &channels[&plan.regions[i][b]];
            let (o, ok) = run_rev(est, &p.q, &opts).map_err(|e| e.context(format!("node {i}, probe {}", p.index)))?;
            Ok((o.indexed_terms(&est.basis), o.objective, ok))
        })
        .collect::<Result<_>>()?;
    let unconverged = outs.iter().filter(|o| !o.2).count();
    let objectives = outs.iter().map(|o| o.1).collect();
    Ok((outs.into_iter().map(|o| o.0).collect(), objectives, unconverged))
}

fn finish(plan: &Plan, cfg: &LearnConfig, nodes: Vec<NodeData>, f: Vec<Vec<Vec<f64>>>) -> Result<(Vec<RecoveredSchedule>, Vec<NodeReport>)> {
    let d = &plan.derivative;
    let fitter = d.fitter(plan.t_max)?;
    let mut reports = Vec::with_capacity(nodes.len());
    let mut thetas = Vec::with_capacity(nodes.len());
    for (i, node) in nodes.iter().enumerate() {
        let t = plan.primary[i];
        let mut derivs = Vec::with_capacity(plan.probes.len());
        let mut worst = 0.0f64;
        for vals in &f[i] {
            let fit = match cfg.fit_mode {
                FitMode::LeastSquares => fitter.fit(vals)?,
                FitMode::L1Robust => robust_fit(&d.aux_nodes, vals, d.fit_degree, FitMode::L1Robust, plan.t_max)?,
            };
            let resid = d.aux_nodes.iter().zip(vals).map(|(&x, &y)| (fit.eval(x) - y).abs()).fold(0.0, f64::max);
            worst = worst.max(d.c_der * d.c_int * (d.eps_f + d.model_error).max(resid) + d.model_error_der);
            derivs.push(fit.derivative().eval(t));
        }
        let sys = assemble(t, &plan.probes, |b, p| node.overlaps[b].get(&(p.index() as usize)).copied(), &derivs)
            .map_err(|e| e.context(format!("node {i}")))?;
        let theta = solve(&sys).map_err(|e| e.context(format!("node {i}")))?;
        reports.push(NodeReport {
            t,
            theta: theta.iter().copied().collect(),
            dominance_margin: sys.dominance_margin,
            sparsity: sys.sparsity_s,
            max_objective: node.objectives.iter().copied().fold(0.0, f64::max),
            unconverged: node.unconverged,
            max_derivative_bound: worst,
        });
        thetas.push(theta);
    }
    let schedules = plan
        .index
        .iter()
        .enumerate()
        .map(|(a, idx)| {
            let vals: Vec<f64> = thetas.iter().map(|th| th[a]).collect();
            let p = robust_fit(&plan.primary, &vals, plan.m, cfg.fit_mode, plan.t_max)?;
            Ok(RecoveredSchedule { index: idx.clone(), chebyshev: p.chebyshev_coeffs().to_vec() })
        })
        .collect::<Result<_>>()?;
    Ok((schedules, reports))
}

/// Oracle-mode learner.
pub fn learn_exact(plan: &Plan, cfg: &LearnConfig, access: &dyn ExactAccess) -> Result<(Vec<RecoveredSchedule>, Vec<NodeReport>)> {
    let distinct: BTreeSet<Vec<usize>> = plan.regions.iter().flatten().cloned().collect();
    let mut per_node: Vec<BTreeMap<Vec<usize>, LocalChannelEstimate>> = vec![BTreeMap::new(); plan.primary.len()];
    // primary nodes are sorted, so one evolution per region covers every node
    for r in distinct {
        let basis = RegionBasis::new(plan.n, r.clone(), cfg.region_cap.max(r.len()))?;
        for (i, est) in access.region_channels(&basis, &plan.primary)?.into_iter().enumerate() {
            per_node[i].insert(r.clone(), est);
        }
    }
    let aux = &plan.derivative.aux_nodes;
    let q_bar: Vec<usize> = plan.probes.iter().map(|p| p.q_bar.index() as usize).collect();
    let needed: Vec<Vec<usize>> = (0..plan.probes.len()).map(|b| needed_paulis(&plan.probes, b)).collect::<Result<_>>()?;
    let mut nodes = Vec::with_capacity(plan.primary.len());
    let mut f = Vec::with_capacity(plan.primary.len());
    for (i, &t) in plan.primary.iter().enumerate() {
        let (terms, objectives, unconverged) = invert_node(plan, i, &per_node[i])?;
        per_node[i].clear();
        // outputs: every aux time plus t_i, ascending
        let mut outs: Vec<f64> = aux.clone();
        outs.push(t);
        let mut order: Vec<usize> = (0..outs.len()).collect();
        order.sort_by(|&a, &b| outs[a].total_cmp(&outs[b]));
        let sorted: Vec<f64> = order.iter().map(|&k| outs[k]).collect();
        let per_probe: Vec<(HashMap<usize, f64>, Vec<f64>)> = terms
            .par_iter()
            .enumerate()
            .map(|(b, o)| {
                // q_bar first, then the overlaps needed at t_i
                let picks: Vec<usize> = std::iter::once(q_bar[b]).chain(needed[b].iter().copied()).collect();
                let ev = access.evolve(o, &sorted, &picks)?;
                let mut vals = vec![0.0; aux.len()];
                let mut at_t = None;
                for (k, &src) in order.iter().enumerate() {
                    if src < aux.len() {
                        vals[src] = ev[k][0];
                    } else {
                        at_t = Some(&ev[k]);
                    }
                }
                let v = at_t.expect("t_i is among the outputs");
                Ok((needed[b].iter().zip(&v[1..]).map(|(&p, &c)| (p, c)).collect(), vals))
            })
            .collect::<Result<_>>()?;
        let (overlaps, vals): (Vec<_>, Vec<_>) = per_probe.into_iter().unzip();
        nodes.push(NodeData { terms, overlaps, objectives, unconverged });
        f.push(vals);
    }
    finish(plan, cfg, nodes, f)
}

/// Sampled-mode learner; auxiliary statistics are streamed one time at a time.
pub fn learn_sampled(plan: &Plan, cfg: &LearnConfig, access: &mut dyn ShadowAccess) -> Result<(Vec<RecoveredSchedule>, Vec<NodeReport>)> {
    let xi1 = plan.primary.len();
    let needed: Vec<Vec<usize>> = (0..plan.probes.len()).map(|b| needed_paulis(&plan.probes, b)).collect::<Result<_>>()?;
    let mut nodes = Vec::with_capacity(xi1);
    for (i, &t) in plan.primary.iter().enumerate() {
        let stats = access.stats(i).map_err(|e| e.context(format!("node {i}")))?;
        let mut channels = BTreeMap::new();
        for r in &plan.regions[i] {
            if !channels.contains_key(r) {
                let basis = RegionBasis::new(plan.n, r.clone(), cfg.region_cap.max(r.len()))?;
                channels.insert(r.clone(), channel_from_stats(&stats, t, &basis, plan.derivative.eps_1)?);
            }
        }
        let (terms, objectives, unconverged) = invert_node(plan, i, &channels)?;
        let overlaps = terms
            .iter()
            .zip(&needed)
            .map(|(o, ps)| ps.iter().map(|&p| (p, stats.combination(p, o))).collect())
            .collect();
        nodes.push(NodeData { terms, overlaps, objectives, unconverged });
    }
    let aux = plan.derivative.aux_nodes.len();
    let mut f = vec![vec![vec![0.0; aux]; plan.probes.len()]; xi1];
    for a in 0..aux {
        let stats = access.stats(xi1 + a).map_err(|e| e.context(format!("auxiliary time {a}")))?;
        for (i, node) in nodes.iter().enumerate() {
            for (b, p) in plan.probes.iter().enumerate() {
                f[i][b][a] = stats.combination(p.q_bar.index() as usize, &node.terms[b]);
            }
        }
    }
    finish(plan, cfg, nodes, f)
}

fn sup_errors(schedules: &[RecoveredSchedule], truth: &LindbladAnsatz, t_max: f64) -> Vec<CoeffError> {
    schedules
        .iter()
        .map(|s| {
            let got = PolySchedule::from_chebyshev(t_max, s.chebyshev.clone());
            let want = truth.schedule(&s.index).cloned().unwrap_or_else(|| PolySchedule::zero(t_max));
            CoeffError { index: s.index.clone(), sup_error: got.sup_distance(&want) }
        })
        .collect()
}

/// Plans, acquires (or loads) data and learns every skeleton coefficient.
pub fn learn(cfg: &LearnConfig, snapshots: Option<ShadowBatch>) -> Result<LearnResult> {
    let plan = preprocess(cfg)?;
    learn_with_plan(cfg, &plan, snapshots)
}

pub fn learn_with_plan(cfg: &LearnConfig, plan: &Plan, snapshots: Option<ShadowBatch>) -> Result<LearnResult> {
    let truth = cfg.truth_ansatz()?;
    let (schedules, nodes) = match (cfg.mode, snapshots) {
        (Mode::Sampled, Some(batch)) => learn_sampled(plan, cfg, &mut RecordedShadows::new(batch, plan)?)?,
        (Mode::Sampled, None) => {
            let t = truth.as_ref().ok_or_else(|| Error::Invalid("sampled mode needs a truth ansatz or a snapshot file".into()))?;
            let mut src = SimulatedShadows::new(t, &plan.all_times(), plan.budget_per_time, plan.groups, cfg.seed)?;
            learn_sampled(plan, cfg, &mut src)?
        }
        (Mode::Oracle, _) => {
            let t = truth.as_ref().ok_or_else(|| Error::Invalid("oracle mode needs a truth ansatz".into()))?;
            learn_exact(plan, cfg, &ExactOracle::new(t, cfg.ode_tol)?)?
        }
    };
    let errors = truth.as_ref().map(|t| sup_errors(&schedules, t, plan.t_max));
    Ok(LearnResult {
        version: VERSION.to_string(),
        seed: cfg.seed,
        mode: cfg.mode,
        constants: cfg.constants.clone(),
        t_max: plan.t_max,
        m: plan.m,
        s: plan.s,
        eps_sdp: plan.eps_sdp,
        fit_degree: plan.derivative.fit_degree,
        aux_count: plan.derivative.aux_nodes.len(),
        eps_1: plan.derivative.eps_1,
        budget_per_time: plan.budget_per_time.to_string(),
        total_samples: plan.total_samples.to_string(),
        t_min: plan.t_min,
        t_tot: plan.t_tot,
        schedules,
        nodes,
        errors,
    })
}

// ---------------------------------------------------------------------------
// Validation and extrapolation

/// `⌈T² ln(2/δ) / (2 ε²)⌉`.
pub fn holdout_count(t_max: f64, eps_inf: f64, delta: f64) -> usize {
    (t_max * t_max * (2.0 / delta).ln() / (2.0 * eps_inf * eps_inf)).ceil() as usize
}

/// `C_poly (m+1)² / T`, bounding `‖p‖_∞ / ‖p‖_{L1[0,T]}` for degree-`m` polynomials.
pub fn nikolskii_factor(m: usize, t_max: f64, c_poly: f64) -> f64 {
    c_poly * ((m + 1) * (m + 1)) as f64 / t_max
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoldoutEntry {
    pub index: CoeffIndex,
    pub l1_hat: f64,
    pub certified_linf: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub holdout: usize,
    pub beta: f64,
    pub eps_inf: f64,
    pub entries: Vec<HoldoutEntry>,
    pub pass: bool,
}

/// `(L̂1, certificate)` for a residual sampled at `M` uniform times.
pub fn certify_residual<F: Fn(f64) -> f64, R: Rng + ?Sized>(
    residual: F,
    m: usize,
    t_max: f64,
    eps_inf: f64,
    delta: f64,
    c_poly: f64,
    rng: &mut R,
) -> (f64, f64) {
    let count = holdout_count(t_max, eps_inf, delta);
    let mean = (0..count).map(|_| residual(rng.gen_range(0.0..t_max)).abs()).sum::<f64>() / count as f64;
    let l1 = t_max * mean;
    let slack = t_max * ((2.0 / delta).ln() / (2.0 * count as f64)).sqrt();
    (l1, nikolskii_factor(m, t_max, c_poly) * (l1 + slack))
}

/// Holdout certificate for every coefficient against fresh evaluations of `truth`.
///
/// A coefficient passes when its mean holdout deviation `L̂1 / T` is at most
/// `eps_inf`; its certified sup-norm is then at most `2 β T eps_inf`.
pub fn validate_holdout(result: &LearnResult, truth: &dyn Fn(&CoeffIndex, f64) -> f64, eps_inf: f64, delta: f64, seed: u64) -> ValidationReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries: Vec<HoldoutEntry> = result
        .schedules
        .iter()
        .map(|s| {
            let p = PolySchedule::from_chebyshev(result.t_max, s.chebyshev.clone());
            let (l1, cert) = certify_residual(|t| p.eval(t) - truth(&s.index, t), result.m, result.t_max, eps_inf, delta, result.constants.c_poly, &mut rng);
            HoldoutEntry { index: s.index.clone(), l1_hat: l1, certified_linf: cert, pass: l1 <= eps_inf * result.t_max }
        })
        .collect();
    ValidationReport {
        holdout: holdout_count(result.t_max, eps_inf, delta),
        beta: nikolskii_factor(result.m, result.t_max, result.constants.c_poly),
        eps_inf,
        pass: entries.iter().all(|e| e.pass),
        entries,
    }
}

/// `ε_α · |T_m(2 T_f / T - 1)|` per coefficient.
pub fn extrapolate_guarantee(result: &LearnResult, eps: &[f64], t_f: f64) -> Result<Vec<(CoeffIndex, f64)>> {
    if t_f < result.t_max {
        return Err(Error::Invalid(format!("T_f = {t_f} is below T = {}", result.t_max)));
    }
    if eps.len() != result.schedules.len() {
        return Err(Error::Dimension { expected: result.schedules.len(), got: eps.len() });
    }
    let f = extrapolation_factor(result.m, result.t_max, t_f);
    Ok(result.schedules.iter().zip(eps).map(|(s, e)| (s.index.clone(), e * f)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TermSpec;
    use crate::schedule::{Basis, ScheduleSpec};

    fn p(s: &str) -> PauliString {
        s.parse().unwrap()
    }

    pub(crate) fn single_qubit(ham: &str, truth: Vec<(CoeffIndex, Vec<f64>)>, mode: Mode, eps: f64) -> LearnConfig {
        LearnConfig {
            truth: Some(AnsatzSpec {
                graph: GraphSpec::Path { n: 1 },
                k: 1,
                t_max: 1.0,
                tau: 1.0,
                terms: truth
                    .into_iter()
                    .map(|(index, coeffs)| TermSpec { index, schedule: ScheduleSpec::Poly { basis: Basis::Monomial, coeffs } })
                    .collect(),
            }),
            snapshots: None,
            skeleton: SkeletonSpec { graph: GraphSpec::Path { n: 1 }, k: 1, t_max: 1.0, m: 1, h_bound: 1.0, tau: 1.0, hamiltonian: vec![p(ham)] },
            eps,
            delta: 0.05,
            mode,
            seed: 1,
            region_cap: 6,
            clamp_regions: false,
            constants: Constants::default(),
            fit_mode: FitMode::LeastSquares,
            degree_cap: 400,
            ode_tol: 1e-12,
            eps_sdp: None,
        }
    }

    #[test]
    fn holdout_arithmetic() {
        assert_eq!(holdout_count(1.0, 0.1, 0.05), 185);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (l1, cert) = certify_residual(|_| 0.0, 1, 1.0, 0.1, 0.05, 1.0, &mut rng);
        assert_eq!(l1, 0.0);
        assert!((cert - 4.0 * ((40f64).ln() / 370.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn single_qubit_plan_shape() {
        let cfg = single_qubit("Z", vec![(CoeffIndex::Hamiltonian(p("Z")), vec![0.5, 0.3])], Mode::Oracle, 1e-3);
        let plan = preprocess(&cfg).unwrap();
        assert!(plan.primary.len() >= 2);
        assert_eq!(plan.probes.len(), 4);
        assert_eq!(plan.probes.iter().filter(|p| p.index.is_hamiltonian()).count(), 1);
    }

    #[test]
    fn flagship_single_qubit() {
        let cfg = single_qubit("Z", vec![(CoeffIndex::Hamiltonian(p("Z")), vec![0.5, 0.3])], Mode::Oracle, 1e-3);
        let res = learn(&cfg, None).unwrap();
        let err = res.max_error().unwrap();
        assert!(err <= 1e-5, "{err} {:?}", res.errors);
    }
}
