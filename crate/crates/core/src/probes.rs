//! Stable probe pairs for the coefficient linear system.
//!
//! Every coefficient gets an inversion target `Q` and a measurement Pauli
//! `Q_bar`. Hamiltonian terms use a single-site `Q` anticommuting with `P_α`
//! and `Q_bar ∝ ½[P_α, Q]`; the dissipator on `(j, A)` uses `Q = Q_bar = A_j`
//! with the axis projector `𝓛̃_{j,A}` as its term map. All checks are exact
//! Pauli algebra.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::DimParams;
use crate::model::{tilde_on_pauli, CoeffIndex, LindbladAnsatz};
use crate::pauli::{Axis, Phase, PauliString, PhasedPauli};

/// Term map acting in the linear system: `½[P_α, ·]` or `𝓛̃_{j,A}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermMap {
    Commutator(PauliString),
    Tilde { site: usize, axis: Axis },
}

impl TermMap {
    pub fn of(idx: &CoeffIndex) -> TermMap {
        match idx {
            CoeffIndex::Hamiltonian(p) => TermMap::Commutator(p.clone()),
            CoeffIndex::Dissipative { site, axis } => TermMap::Tilde { site: *site, axis: *axis },
        }
    }

    pub fn apply(&self, p: &PauliString) -> Result<Option<PhasedPauli>> {
        match self {
            TermMap::Commutator(a) => a.commutator_half(p),
            TermMap::Tilde { site, axis } => tilde_on_pauli(*site, *axis, p),
        }
    }
}

impl fmt::Display for TermMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TermMap::Commutator(p) => write!(f, "P[{p}]"),
            TermMap::Tilde { site, axis } => write!(f, "Lt[{site},{axis}]"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub index: CoeffIndex,
    /// Inversion target.
    pub q: PauliString,
    /// Measurement Pauli.
    pub q_bar: PauliString,
    pub map: TermMap,
    /// `2^{-n} tr[Q · K(Q_bar)]`.
    pub phi: Phase,
}

impl ProbeSpec {
    /// Phase `d` with `K(Q) = d · Q_bar`, the leading diagonal entry of the system.
    pub fn diagonal(&self) -> Result<Phase> {
        match self.map.apply(&self.q)? {
            Some(pp) if pp.pauli == self.q_bar => Ok(pp.phase),
            _ => Err(Error::Invalid(format!("probe {} has a vanishing diagonal", self.index))),
        }
    }

    pub fn dump_line(&self) -> String {
        format!("{} {} {} {}", self.index, self.q, self.q_bar, phase_text(self.phi))
    }
}

fn phase_text(p: Phase) -> &'static str {
    match p.exponent() {
        0 => "+1",
        1 => "+i",
        2 => "-1",
        _ => "-i",
    }
}

/// `2^{-n} tr[A · K(B)]` as a phase, or `None` when it vanishes.
pub fn symbolic_overlap(a: &PauliString, map: &TermMap, b: &PauliString) -> Result<Option<Phase>> {
    Ok(match map.apply(b)? {
        Some(pp) if pp.pauli == *a => Some(pp.phase),
        _ => None,
    })
}

/// Probes for every coefficient of the ansatz, plus the measured sparsity `s`.
pub fn build_probes(a: &LindbladAnsatz) -> Result<(Vec<ProbeSpec>, usize)> {
    let mut specs = Vec::with_capacity(a.terms().len());
    for (idx, _) in a.terms() {
        let map = TermMap::of(idx);
        let (q, q_bar) = match idx {
            CoeffIndex::Hamiltonian(p) => {
                let j = *p.support().first().ok_or_else(|| Error::Invalid("identity term".into()))?;
                let own = p.axis(j);
                let axis = Axis::ALL
                    .into_iter()
                    .find(|&ax| Some(ax) != own)
                    .expect("a single-site Pauli anticommuting with a non-identity site always exists");
                let q = PauliString::single(p.n(), j, axis);
                let image = p.commutator_half(&q)?.expect("anticommuting pair");
                (q, image.pauli)
            }
            CoeffIndex::Dissipative { site, axis } => {
                let q = PauliString::single(a.n(), *site, *axis);
                (q.clone(), q)
            }
        };
        let phi = symbolic_overlap(&q, &map, &q_bar)?.ok_or_else(|| Error::Invalid(format!("probe {idx} has zero phase")))?;
        specs.push(ProbeSpec { index: idx.clone(), q, q_bar, map, phi });
    }
    let report = verify_stability(&specs, a)?;
    Ok((specs, report.s()))
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub ok: bool,
    pub s_row: usize,
    pub s_col: usize,
    pub violations: Vec<String>,
}

impl StabilityReport {
    pub fn s(&self) -> usize {
        self.s_row.max(self.s_col)
    }
}

/// Exhaustive symbolic check of the probe conditions and sparsity counts.
///
/// Row `β` counts the term maps that can produce `Q_bar_β` from some Pauli;
/// column `β'` counts the probes whose measurement Pauli `K_β'` can reach.
pub fn verify_stability(specs: &[ProbeSpec], a: &LindbladAnsatz) -> Result<StabilityReport> {
    let mut r = StabilityReport { ok: true, ..Default::default() };
    let mut col = vec![0usize; specs.len()];
    for (bi, b) in specs.iter().enumerate() {
        let mut row = 0usize;
        for (ci, c) in specs.iter().enumerate() {
            let ov = symbolic_overlap(&b.q, &c.map, &b.q_bar)?;
            if bi == ci {
                match ov {
                    Some(p) if p == b.phi => {}
                    Some(p) => r.violations.push(format!("{}: phase {} differs from recorded {}", b.index, phase_text(p), phase_text(b.phi))),
                    None => r.violations.push(format!("{}: diagonal overlap vanishes", b.index)),
                }
            } else if ov.is_some() {
                r.violations.push(format!("{}: overlaps with term {}", b.index, c.index));
            }
            if !pauli_neighbors(&c.map, &b.q_bar)?.is_empty() {
                row += 1;
                col[ci] += 1;
            }
        }
        r.s_row = r.s_row.max(row);
    }
    r.s_col = col.into_iter().max().unwrap_or(0);
    if specs.len() != a.terms().len() {
        r.violations.push(format!("{} probes for {} coefficients", specs.len(), a.terms().len()));
    }
    r.ok = r.violations.is_empty();
    Ok(r)
}

/// All `(P, φ)` with `K(P) = φ · Q_bar`.
pub fn pauli_neighbors(map: &TermMap, q_bar: &PauliString) -> Result<Vec<(PauliString, Phase)>> {
    let cand = match map {
        TermMap::Commutator(a) => {
            if !a.anticommutes(q_bar)? {
                return Ok(Vec::new());
            }
            a.multiply(q_bar)?.pauli
        }
        TermMap::Tilde { .. } => q_bar.clone(),
    };
    Ok(match map.apply(&cand)? {
        Some(pp) if pp.pauli == *q_bar => vec![(cand, pp.phase)],
        _ => Vec::new(),
    })
}

/// Sparsity ceiling `C1 k^D (4^{C1 k^D} + 3)` for `k`-local terms.
///
/// A measurement Pauli lives inside a ball of `C1 k^D` sites; each term that
/// reaches it overlaps one of those sites and fits in the radius-`k` ball
/// around it, which holds at most `4^{C1 k^D}` Pauli strings, and each site
/// carries three dissipators.
pub fn stability_bound(k: usize, dim: DimParams) -> f64 {
    let ball = dim.c1 * (k.max(1) as f64).powi(dim.d as i32);
    ball * (4f64.powf(ball) + 3.0)
}

pub fn probe_table(specs: &[ProbeSpec]) -> String {
    specs.iter().map(|s| s.dump_line() + "\n").collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::InteractionGraph;
    use crate::model::{dissipator_terms, edge_terms, field_terms};
    use crate::schedule::PolySchedule;

    fn p(s: &str) -> PauliString {
        s.parse().unwrap()
    }

    fn ansatz(n: usize, idx: &[CoeffIndex]) -> LindbladAnsatz {
        let mut a = LindbladAnsatz::new(InteractionGraph::path(n), 2, 1.0, 1.0);
        for i in idx {
            a.add_term(i.clone(), PolySchedule::constant(1.0, 0.1)).unwrap();
        }
        a
    }

    #[test]
    fn z_probe() {
        let (specs, s) = build_probes(&ansatz(1, &[CoeffIndex::Hamiltonian(p("Z"))])).unwrap();
        assert_eq!(s, 1);
        assert_eq!((specs[0].q.to_string(), specs[0].q_bar.to_string()), ("X".into(), "Y".into()));
        assert_eq!(specs[0].phi, Phase::MINUS_I);
        assert_eq!(specs[0].diagonal().unwrap(), Phase::I);
    }

    #[test]
    fn zz_probe() {
        let (specs, _) = build_probes(&ansatz(2, &[CoeffIndex::Hamiltonian(p("ZZ"))])).unwrap();
        assert_eq!(specs[0].q, p("XI"));
        assert_eq!(specs[0].q_bar, p("YZ"));
    }

    #[test]
    fn neighbors() {
        let n = pauli_neighbors(&TermMap::Commutator(p("Z")), &p("Y")).unwrap();
        assert_eq!(n, vec![(p("X"), Phase::I)]);
        assert!(pauli_neighbors(&TermMap::Commutator(p("Z")), &p("Z")).unwrap().is_empty());
        let n = pauli_neighbors(&TermMap::Tilde { site: 0, axis: Axis::X }, &p("X")).unwrap();
        assert_eq!(n, vec![(p("X"), Phase::ONE)]);
    }

    #[test]
    fn chain_is_stable() {
        let g = InteractionGraph::path(5);
        let mut idx = edge_terms(&g, Axis::Z, Axis::Z);
        idx.extend(field_terms(5, Axis::X));
        idx.extend(field_terms(5, Axis::Z));
        idx.extend(dissipator_terms(5));
        let a = ansatz(5, &idx);
        let (specs, s) = build_probes(&a).unwrap();
        let r = verify_stability(&specs, &a).unwrap();
        assert!(r.ok, "{:?}", r.violations);
        assert!((s as f64) <= stability_bound(2, g.dim));
    }

    #[test]
    fn corrupted_probe_flagged() {
        let a = ansatz(2, &[CoeffIndex::Hamiltonian(p("ZZ")), CoeffIndex::Hamiltonian(p("XI"))]);
        let (mut specs, _) = build_probes(&a).unwrap();
        specs[0].q_bar = p("ZZ");
        let r = verify_stability(&specs, &a).unwrap();
        assert!(!r.ok);
        assert!(r.violations[0].contains("diagonal"));
    }
}
