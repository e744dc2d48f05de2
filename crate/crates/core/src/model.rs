//! The time-dependent generator ansatz
//!
//! `S(t)(O) = Σ_α i h_α(t) ½[P_α, O] + Σ_{j,P} ℓ_{j,P}(t) ½(P_j O P_j - O)`
//!
//! in the Heisenberg picture. The Hamiltonian part carries the factor ½ of
//! the half-commutator: a term `h_α P_α` rotates at rate `h_α`, not `2 h_α`.

use std::fmt;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dense::{pauli_conjugate, pauli_left, pauli_right, CMatrix, DenseOperator};
use crate::error::{Error, Result};
use crate::lattice::{GraphSpec, InteractionGraph};
use crate::pauli::{Axis, Phase, PauliString, PhasedPauli};
use crate::schedule::{PolySchedule, ScheduleSpec};

/// Identifies one unknown coefficient function.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoeffIndex {
    Hamiltonian(PauliString),
    Dissipative { site: usize, axis: Axis },
}

impl CoeffIndex {
    pub fn is_hamiltonian(&self) -> bool {
        matches!(self, CoeffIndex::Hamiltonian(_))
    }

    pub fn support(&self) -> Vec<usize> {
        match self {
            CoeffIndex::Hamiltonian(p) => p.support(),
            CoeffIndex::Dissipative { site, .. } => vec![*site],
        }
    }
}

impl fmt::Display for CoeffIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoeffIndex::Hamiltonian(p) => write!(f, "h[{p}]"),
            CoeffIndex::Dissipative { site, axis } => write!(f, "l[{site},{axis}]"),
        }
    }
}

/// Symbolic action of a unit-coefficient term map on a Pauli string.
///
/// Hamiltonian `α`: `½[P_α, P]`. Dissipative `(j, A)`: `ℒ_{j,A}(P)`, which is
/// `-P` when `P` carries a non-identity axis other than `A` on site `j`.
pub fn term_on_pauli(idx: &CoeffIndex, p: &PauliString) -> Result<Option<PhasedPauli>> {
    match idx {
        CoeffIndex::Hamiltonian(a) => a.commutator_half(p),
        CoeffIndex::Dissipative { site, axis } => {
            check_site(*site, p.n())?;
            Ok(match p.axis(*site) {
                Some(b) if b != *axis => Some(PhasedPauli::new(Phase::MINUS_ONE, p.clone())),
                _ => None,
            })
        }
    }
}

/// Symbolic action of the axis projector `𝓛̃_{j,A}` on a Pauli string.
pub fn tilde_on_pauli(site: usize, axis: Axis, p: &PauliString) -> Result<Option<PhasedPauli>> {
    check_site(site, p.n())?;
    Ok((p.axis(site) == Some(axis)).then(|| PhasedPauli::new(Phase::ONE, p.clone())))
}

fn check_site(site: usize, n: usize) -> Result<()> {
    if site >= n {
        return Err(Error::UnknownVertex(site));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Per-site basis change between physical rates and axis-projector rates.
///
/// `Γ = ½[[1,-1,-1],[-1,1,-1],[-1,-1,1]]`, `Γ⁻¹ = [[0,-1,-1],[-1,0,-1],[-1,-1,0]]`.
pub fn gamma_rotation(v: [f64; 3], dir: Direction) -> [f64; 3] {
    let s = v[0] + v[1] + v[2];
    match dir {
        Direction::Forward => [v[0] - 0.5 * s, v[1] - 0.5 * s, v[2] - 0.5 * s],
        Direction::Inverse => [v[0] - s, v[1] - s, v[2] - s],
    }
}

/// Config block for one term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermSpec {
    pub index: CoeffIndex,
    pub schedule: ScheduleSpec,
}

/// Config block for an ansatz.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnsatzSpec {
    pub graph: GraphSpec,
    pub k: usize,
    #[serde(rename = "T")]
    pub t_max: f64,
    pub tau: f64,
    pub terms: Vec<TermSpec>,
}

/// Geometrically local generator with polynomial schedules.
#[derive(Clone, Debug)]
pub struct LindbladAnsatz {
    pub graph: InteractionGraph,
    graph_spec: Option<GraphSpec>,
    pub k: usize,
    pub t_max: f64,
    pub tau: f64,
    terms: Vec<(CoeffIndex, PolySchedule)>,
}

/// Outcome of [`LindbladAnsatz::validate`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl LindbladAnsatz {
    pub fn new(graph: InteractionGraph, k: usize, t_max: f64, tau: f64) -> Self {
        LindbladAnsatz { graph, graph_spec: None, k, t_max, tau, terms: Vec::new() }
    }

    pub fn from_spec(spec: &AnsatzSpec) -> Result<Self> {
        let mut a = LindbladAnsatz::new(spec.graph.build()?, spec.k, spec.t_max, spec.tau);
        a.graph_spec = Some(spec.graph.clone());
        for t in &spec.terms {
            a.add_term(t.index.clone(), t.schedule.to_poly(spec.t_max)?)?;
        }
        Ok(a)
    }

    /// Config form, with schedules written as Chebyshev coefficients.
    pub fn to_spec(&self) -> AnsatzSpec {
        let graph = self.graph_spec.clone().unwrap_or_else(|| GraphSpec::Edges {
            n: self.n(),
            edges: self.graph.edges(),
        });
        AnsatzSpec {
            graph,
            k: self.k,
            t_max: self.t_max,
            tau: self.tau,
            terms: self
                .terms
                .iter()
                .map(|(i, s)| TermSpec {
                    index: i.clone(),
                    schedule: ScheduleSpec::Poly {
                        basis: crate::schedule::Basis::Chebyshev,
                        coeffs: s.chebyshev_coeffs().to_vec(),
                    },
                })
                .collect(),
        }
    }

    pub fn with_graph_spec(mut self, spec: GraphSpec) -> Self {
        self.graph_spec = Some(spec);
        self
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn add_term(&mut self, idx: CoeffIndex, s: PolySchedule) -> Result<()> {
        match &idx {
            CoeffIndex::Hamiltonian(p) => {
                if p.n() != self.n() {
                    return Err(Error::Dimension { expected: self.n(), got: p.n() });
                }
                if p.is_identity() {
                    return Err(Error::Invalid("identity Hamiltonian term".into()));
                }
            }
            CoeffIndex::Dissipative { site, .. } => check_site(*site, self.n())?,
        }
        if self.index_of(&idx).is_some() {
            return Err(Error::Invalid(format!("duplicate term {idx}")));
        }
        if (s.t_max() - self.t_max).abs() > 1e-12 * self.t_max {
            return Err(Error::Invalid(format!("schedule interval {} differs from T = {}", s.t_max(), self.t_max)));
        }
        self.terms.push((idx, s));
        Ok(())
    }

    /// Builder-style [`add_term`](Self::add_term) that panics on error.
    pub fn with_term(mut self, idx: CoeffIndex, s: PolySchedule) -> Self {
        self.add_term(idx, s).expect("valid term");
        self
    }

    pub fn terms(&self) -> &[(CoeffIndex, PolySchedule)] {
        &self.terms
    }

    pub fn index_of(&self, idx: &CoeffIndex) -> Option<usize> {
        self.terms.iter().position(|(i, _)| i == idx)
    }

    pub fn schedule(&self, idx: &CoeffIndex) -> Option<&PolySchedule> {
        self.terms.iter().find(|(i, _)| i == idx).map(|(_, s)| s)
    }

    pub fn coefficient(&self, idx: &CoeffIndex, t: f64) -> f64 {
        self.schedule(idx).map(|s| s.eval(t)).unwrap_or(0.0)
    }

    /// Coefficient indices only.
    pub fn indices(&self) -> Vec<CoeffIndex> {
        self.terms.iter().map(|(i, _)| i.clone()).collect()
    }

    /// Same structure with every schedule replaced.
    pub fn map_schedules<F: Fn(&CoeffIndex, &PolySchedule) -> PolySchedule>(&self, f: F) -> Self {
        let mut out = self.clone();
        for (i, s) in out.terms.iter_mut() {
            *s = f(i, s);
        }
        out
    }

    /// Sub-ansatz keeping Hamiltonian terms inside `region` and dissipators on its sites.
    pub fn truncated(&self, region: &std::collections::BTreeSet<usize>) -> Self {
        let mut out = self.clone();
        out.terms.retain(|(i, _)| i.support().iter().all(|v| region.contains(v)));
        out
    }

    /// Short stable fingerprint of the structure and schedules.
    pub fn fingerprint(&self) -> u64 {
        let text = serde_json::to_string(&self.to_spec()).expect("serializable");
        fnv1a(text.as_bytes())
    }

    /// `sup_t Σ |h_α(t)| + Σ |ℓ(t)|`, an upper bound on `‖S(t)‖_{∞→∞}`.
    pub fn generator_norm_bound(&self) -> f64 {
        self.terms.iter().map(|(_, s)| s.sup_norm()).sum()
    }

    fn check_dim(&self, o: &DenseOperator) -> Result<()> {
        if o.n() != self.n() {
            return Err(Error::Dimension { expected: self.n(), got: o.n() });
        }
        Ok(())
    }

    /// `S(t)(O)`.
    pub fn apply_generator(&self, t: f64, o: &DenseOperator) -> Result<DenseOperator> {
        self.check_dim(o)?;
        let m = generator_action(&self.terms_at(t), o.matrix(), false);
        DenseOperator::new(self.n(), m)
    }

    /// Trace dual `S(t)*` with `tr[S(t)(O) ρ] = tr[O S(t)*(ρ)]`.
    pub fn apply_adjoint_generator(&self, t: f64, rho: &DenseOperator) -> Result<DenseOperator> {
        self.check_dim(rho)?;
        let m = generator_action(&self.terms_at(t), rho.matrix(), true);
        DenseOperator::new(self.n(), m)
    }

    /// Numerical coefficients of all terms at time `t`.
    pub fn terms_at(&self, t: f64) -> Vec<(CoeffIndex, f64)> {
        self.terms.iter().map(|(i, s)| (i.clone(), s.eval(t))).collect()
    }

    /// Unit-coefficient map of one term: `½[P_α, O]` or `ℒ_{j,A}(O)`.
    pub fn apply_term(&self, idx: &CoeffIndex, o: &DenseOperator) -> Result<DenseOperator> {
        self.check_dim(o)?;
        apply_term(idx, o)
    }

    /// Validates locality, norm caps and nonnegative dissipation.
    pub fn validate(&self) -> ValidationReport {
        let mut r = ValidationReport::default();
        let grid: Vec<f64> = (0..=400).map(|i| self.t_max * i as f64 / 400.0).collect();
        for (idx, s) in &self.terms {
            match idx {
                CoeffIndex::Hamiltonian(p) => {
                    match self.graph.geometric_diameter(p) {
                        Ok(d) if d > self.k => {
                            r.violations.push(format!("{idx}: geometric diameter {d} exceeds k = {}", self.k))
                        }
                        Err(e) => r.violations.push(format!("{idx}: {e}")),
                        _ => {}
                    }
                    let sup = s.sup_norm();
                    if sup > 1.0 + 1e-12 {
                        r.violations.push(format!("{idx}: sup-norm {sup} exceeds 1"));
                    }
                }
                CoeffIndex::Dissipative { .. } => {
                    let lo = grid.iter().map(|&t| s.eval(t)).fold(f64::INFINITY, f64::min);
                    let hi = s.sup_norm();
                    if lo < -1e-12 {
                        r.violations.push(format!("{idx}: negative rate {lo}"));
                    }
                    if hi > self.tau + 1e-12 {
                        r.violations.push(format!("{idx}: rate {hi} exceeds tau = {}", self.tau));
                    }
                }
            }
        }
        r
    }

    /// Random ansatz with the given term set and degree-`m` schedules.
    ///
    /// Hamiltonian schedules have sup-norm at most `h_max`; rates lie in `[0, tau]`.
    #[allow(clippy::too_many_arguments)]
    pub fn random<R: Rng + ?Sized>(
        graph: InteractionGraph,
        k: usize,
        t_max: f64,
        tau: f64,
        indices: &[CoeffIndex],
        m: usize,
        h_max: f64,
        rng: &mut R,
    ) -> Self {
        let mut a = LindbladAnsatz::new(graph, k, t_max, tau);
        for idx in indices {
            let s = random_schedule(t_max, m, rng);
            let s = match idx {
                CoeffIndex::Hamiltonian(_) => s.scale(h_max),
                // map [-1, 1] into [0, tau]
                CoeffIndex::Dissipative { .. } => s.add(&PolySchedule::constant(t_max, 1.0)).scale(0.5 * tau),
            };
            a.add_term(idx.clone(), s).expect("valid random term");
        }
        a
    }
}

/// Random degree-`m` polynomial with sup-norm at most 1 on `[0, T]`.
pub fn random_schedule<R: Rng + ?Sized>(t_max: f64, m: usize, rng: &mut R) -> PolySchedule {
    let c: Vec<f64> = (0..=m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let p = PolySchedule::from_chebyshev(t_max, c);
    let s = p.sup_norm();
    let u: f64 = rng.gen_range(0.2..1.0);
    if s > 0.0 {
        p.scale(u / s)
    } else {
        p
    }
}

/// Two-body terms `A_u B_v` on every edge `(u, v)` of `graph`.
pub fn edge_terms(graph: &InteractionGraph, a: Axis, b: Axis) -> Vec<CoeffIndex> {
    graph
        .edges()
        .into_iter()
        .map(|(u, v)| CoeffIndex::Hamiltonian(PauliString::from_sites(graph.n(), &[(u, a), (v, b)])))
        .collect()
}

/// Single-site Hamiltonian terms `A_j` on every vertex.
pub fn field_terms(n: usize, a: Axis) -> Vec<CoeffIndex> {
    (0..n).map(|j| CoeffIndex::Hamiltonian(PauliString::single(n, j, a))).collect()
}

/// All `3n` single-site dissipators.
pub fn dissipator_terms(n: usize) -> Vec<CoeffIndex> {
    (0..n)
        .flat_map(|site| Axis::ALL.into_iter().map(move |axis| CoeffIndex::Dissipative { site, axis }))
        .collect()
}

fn generator_action(terms: &[(CoeffIndex, f64)], m: &CMatrix, adjoint: bool) -> CMatrix {
    let d = m.nrows();
    let mut out = CMatrix::zeros(d, d);
    for (idx, c) in terms {
        if *c == 0.0 {
            continue;
        }
        match idx {
            CoeffIndex::Hamiltonian(p) => {
                // i h ½(P O - O P); the trace dual flips the sign
                let s = if adjoint { -0.5 * c } else { 0.5 * c };
                let f = Complex64::new(0.0, s);
                out += (pauli_left(p, m) - pauli_right(m, p)) * f;
            }
            CoeffIndex::Dissipative { site, axis } => {
                let p = PauliString::single(m_n(d), *site, *axis);
                let f = Complex64::new(0.5 * c, 0.0);
                out += (pauli_conjugate(&p, m) - m) * f;
            }
        }
    }
    out
}

fn m_n(d: usize) -> usize {
    d.trailing_zeros() as usize
}

/// Unit-coefficient term map on a dense operator.
pub fn apply_term(idx: &CoeffIndex, o: &DenseOperator) -> Result<DenseOperator> {
    let m = o.matrix();
    let out = match idx {
        CoeffIndex::Hamiltonian(p) => {
            if p.n() != o.n() {
                return Err(Error::Dimension { expected: o.n(), got: p.n() });
            }
            (pauli_left(p, m) - pauli_right(m, p)) * Complex64::new(0.5, 0.0)
        }
        CoeffIndex::Dissipative { site, axis } => {
            check_site(*site, o.n())?;
            let p = PauliString::single(o.n(), *site, *axis);
            (pauli_conjugate(&p, m) - m) * Complex64::new(0.5, 0.0)
        }
    };
    DenseOperator::new(o.n(), out)
}

/// `𝓛̃_{j,A} = ½(-ℒ_{j,A1} - ℒ_{j,A2} + ℒ_{j,A})` on a dense operator.
pub fn tilde_dissipator(site: usize, axis: Axis, o: &DenseOperator) -> Result<DenseOperator> {
    check_site(site, o.n())?;
    let [a1, a2] = axis.others();
    let l = |a: Axis| apply_term(&CoeffIndex::Dissipative { site, axis: a }, o).map(DenseOperator::into_matrix);
    let m = (l(axis)? - l(a1)? - l(a2)?) * Complex64::new(0.5, 0.0);
    DenseOperator::new(o.n(), m)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
