//! Fixtures shared by the kernel benchmarks.

use lindlearn::model::{dissipator_terms, edge_terms, field_terms};
use lindlearn::rev::{oracle_channels, LocalChannelEstimate, RegionBasis};
use lindlearn::{Axis, CoeffIndex, InteractionGraph, LindbladAnsatz, PolySchedule};

/// ZZ + X chain with linear schedules and weak dephasing on every site.
pub fn chain(n: usize) -> LindbladAnsatz {
    let g = InteractionGraph::path(n);
    let mut a = LindbladAnsatz::new(g.clone(), 2, 1.0, 1.0);
    for idx in edge_terms(&g, Axis::Z, Axis::Z) {
        a.add_term(idx, PolySchedule::from_monomial(1.0, &[0.4, -0.1])).unwrap();
    }
    for idx in field_terms(n, Axis::X) {
        a.add_term(idx, PolySchedule::from_monomial(1.0, &[0.3, 0.1])).unwrap();
    }
    for idx in dissipator_terms(n) {
        let rate = match idx {
            CoeffIndex::Dissipative { axis: Axis::Z, .. } => 0.05,
            _ => 0.0,
        };
        a.add_term(idx, PolySchedule::constant(1.0, rate)).unwrap();
    }
    a
}

/// Exact PTM of `chain(n)` on the first `r` sites at time `t`.
pub fn region_estimate(n: usize, r: usize, t: f64) -> (RegionBasis, LocalChannelEstimate) {
    let basis = RegionBasis::new(n, (0..r).collect(), r).unwrap();
    let est = oracle_channels(&chain(n), &basis, &[t], 1e-11).unwrap().remove(0);
    (basis, est)
}
