//! Per-time linear system for the coefficient values.
//!
//! Row `β` is the probe, column `β'` the term map. With `X = T(0,t_i)(O_β)`,
//! `f'_β(t_i) = Σ_{β'} θ̃_{β'} Σ_{(P,φ)} w φ c_P` where `c_P = 2^{-n} tr[X P]`,
//! `(P, φ)` runs over [`pauli_neighbors`] of `Q_bar_β`, `w = i` for
//! commutator columns and `w = 1` for axis projectors. Dissipative unknowns
//! are rotated back to physical rates per site.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{gamma_rotation, CoeffIndex, Direction};
use crate::pauli::{Phase, PauliString};
use crate::probes::{pauli_neighbors, ProbeSpec, TermMap};

/// Implemented constant of the perturbation bound, valid for `ζ ≤ 1/(10s)`.
pub const C_PERT: f64 = 7.5;

#[derive(Clone, Debug, PartialEq)]
pub struct TimeSystem {
    pub t: f64,
    /// Row/column order.
    pub index: Vec<CoeffIndex>,
    pub a_tilde: DMatrix<f64>,
    pub b_tilde: DVector<f64>,
    pub a_hat: DMatrix<f64>,
    pub b_hat: DVector<f64>,
    pub dominance_margin: f64,
    pub sparsity_s: usize,
}

impl TimeSystem {
    /// Text dump: index map, sparse triplets of `Â`, `b̂`, margin and `s`.
    pub fn dump(&self) -> String {
        let mut out = format!("t={} margin={:.6e} s={}\n", self.t, self.dominance_margin, self.sparsity_s);
        for (i, idx) in self.index.iter().enumerate() {
            out += &format!("index {i} {idx}\n");
        }
        for i in 0..self.a_hat.nrows() {
            for j in 0..self.a_hat.ncols() {
                let v = self.a_hat[(i, j)];
                if v != 0.0 {
                    out += &format!("A {i} {j} {v:.15e}\n");
                }
            }
        }
        for (i, v) in self.b_hat.iter().enumerate() {
            out += &format!("b {i} {v:.15e}\n");
        }
        out
    }
}

fn weight(map: &TermMap, phi: Phase) -> f64 {
    let w = match map {
        TermMap::Commutator(_) => Phase::I.mul(phi),
        TermMap::Tilde { .. } => phi,
    };
    debug_assert!(w.is_real());
    w.to_complex().re
}

/// Dense `Γ` over `index`: identity on Hamiltonian entries, the per-site
/// forward rate rotation on each dissipative triple.
pub fn gamma_matrix(index: &[CoeffIndex], dir: Direction) -> Result<DMatrix<f64>> {
    let m = index.len();
    let mut g = DMatrix::<f64>::identity(m, m);
    let mut sites: BTreeMap<usize, [Option<usize>; 3]> = BTreeMap::new();
    for (k, idx) in index.iter().enumerate() {
        if let CoeffIndex::Dissipative { site, axis } = idx {
            sites.entry(*site).or_default()[axis.index()] = Some(k);
        }
    }
    for (site, slots) in sites {
        let slots: Vec<usize> = slots
            .iter()
            .map(|s| s.ok_or_else(|| Error::Invalid(format!("site {site} needs all three dissipators"))))
            .collect::<Result<_>>()?;
        for (c, &kc) in slots.iter().enumerate() {
            let mut e = [0.0; 3];
            e[c] = 1.0;
            let col = gamma_rotation(e, dir);
            for (r, &kr) in slots.iter().enumerate() {
                g[(kr, kc)] = col[r];
            }
        }
    }
    Ok(g)
}

/// Builds `Â θ = b̂` at `t`.
///
/// `overlap(β, P)` returns `2^{-n} tr[T(0,t)(O_β) P]`; `derivs[β]` is the
/// estimated `f'_β(t)`. Rows are sign-normalized so the symbolic diagonal
/// is positive.
pub fn assemble<F>(t: f64, probes: &[ProbeSpec], mut overlap: F, derivs: &[f64]) -> Result<TimeSystem>
where
    F: FnMut(usize, &PauliString) -> Option<f64>,
{
    let m = probes.len();
    if derivs.len() != m {
        return Err(Error::Dimension { expected: m, got: derivs.len() });
    }
    let mut a = DMatrix::<f64>::zeros(m, m);
    let mut b = DVector::<f64>::zeros(m);
    let mut s_col = vec![0usize; m];
    let mut s_row = 0;
    for (bi, pb) in probes.iter().enumerate() {
        let sign = weight(&pb.map, pb.diagonal()?).signum();
        let mut row = 0;
        for (ci, pc) in probes.iter().enumerate() {
            let nb = pauli_neighbors(&pc.map, &pb.q_bar)?;
            if nb.is_empty() {
                continue;
            }
            row += 1;
            s_col[ci] += 1;
            let mut v = 0.0;
            for (p, phi) in nb {
                let c = overlap(bi, &p).ok_or_else(|| Error::MissingEstimate(format!("probe {} at {p}", pb.index)))?;
                v += weight(&pc.map, phi) * c;
            }
            a[(bi, ci)] = sign * v;
        }
        s_row = s_row.max(row);
        b[bi] = sign * derivs[bi];
    }
    let index: Vec<CoeffIndex> = probes.iter().map(|p| p.index.clone()).collect();
    let g = gamma_matrix(&index, Direction::Forward)?;
    let gi = gamma_matrix(&index, Direction::Inverse)?;
    let a_hat = &g * &a * &gi;
    let b_hat = &g * &b;
    Ok(TimeSystem {
        t,
        index,
        dominance_margin: dominance_margin(&a_hat),
        a_tilde: a,
        b_tilde: b,
        a_hat,
        b_hat,
        sparsity_s: s_row.max(s_col.into_iter().max().unwrap_or(0)),
    })
}

/// `min_i (|A_ii| - max(row off-sum, column off-sum))`.
pub fn dominance_margin(a: &DMatrix<f64>) -> f64 {
    (0..a.nrows())
        .map(|i| {
            let row: f64 = (0..a.ncols()).filter(|&j| j != i).map(|j| a[(i, j)].abs()).sum();
            let col: f64 = (0..a.nrows()).filter(|&j| j != i).map(|j| a[(j, i)].abs()).sum();
            a[(i, i)].abs() - row.max(col)
        })
        .fold(f64::INFINITY, f64::min)
}

/// `|A_ii| ≥ diag_min` and `|A_ii| ≥ gap + off-sum` for rows and columns.
pub fn check_dominance(a: &DMatrix<f64>, diag_min: f64, gap: f64) -> bool {
    (0..a.nrows()).all(|i| a[(i, i)].abs() >= diag_min) && dominance_margin(a) >= gap
}

/// Partial-pivoting LU solve with a residual check.
pub fn solve(sys: &TimeSystem) -> Result<DVector<f64>> {
    solve_dense(&sys.a_hat, &sys.b_hat)
}

pub fn solve_dense(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() != b.len() {
        return Err(Error::Dimension { expected: a.nrows(), got: b.len() });
    }
    let x = a.clone().lu().solve(b).ok_or(Error::Singular(f64::INFINITY))?;
    let res = (a * &x - b).amax();
    let scale = b.amax().max(a.amax() * x.amax());
    if !(res <= 1e-10 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::Singular(res / scale.max(f64::MIN_POSITIVE)));
    }
    Ok(x)
}

/// Jacobi iteration, the cross-check for dominant systems.
pub fn jacobi(a: &DMatrix<f64>, b: &DVector<f64>, tol: f64, max_iter: usize) -> Result<DVector<f64>> {
    let n = b.len();
    let mut x = DVector::<f64>::zeros(n);
    for _ in 0..max_iter {
        let mut next = b.clone();
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                if j != i {
                    s += a[(i, j)] * x[j];
                }
            }
            next[i] = (b[i] - s) / a[(i, i)];
        }
        let delta = (&next - &x).amax();
        x = next;
        if delta <= tol {
            return Ok(x);
        }
    }
    Err(Error::Infeasible(format!("Jacobi did not reach {tol:e} in {max_iter} sweeps")))
}

/// Varah bounds `(‖A^{-1}‖_∞, ‖A^{-1}‖_1)`, `+∞` where dominance fails.
pub fn varah_bound(a: &DMatrix<f64>) -> (f64, f64) {
    let n = a.nrows();
    let mut row = f64::INFINITY;
    let mut col = f64::INFINITY;
    for i in 0..n {
        let r: f64 = (0..n).filter(|&j| j != i).map(|j| a[(i, j)].abs()).sum();
        let c: f64 = (0..n).filter(|&j| j != i).map(|j| a[(j, i)].abs()).sum();
        row = row.min(a[(i, i)].abs() - r);
        col = col.min(a[(i, i)].abs() - c);
    }
    let inv = |m: f64| if m > 0.0 { 1.0 / m } else { f64::INFINITY };
    (inv(row), inv(col))
}

/// `‖A‖_∞`, the maximum absolute row sum.
pub fn inf_norm(a: &DMatrix<f64>) -> f64 {
    a.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// `a (ζ_b + s ζ ‖x‖) / (1 - a s ζ)`, or `+∞` once `a s ζ ≥ 1`.
///
/// `a` bounds `‖A^{-1}‖_∞`, `ζ` the entries of `B` (at most `s` per row),
/// `ζ_b` the perturbation of `b` and `x_norm` the unperturbed solution.
pub fn perturbation_bound_general(a: f64, s: usize, zeta: f64, zeta_b: f64, x_norm: f64) -> f64 {
    let q = a * s as f64 * zeta;
    if q >= 1.0 {
        return f64::INFINITY;
    }
    a * (zeta_b + s as f64 * zeta * x_norm) / (1.0 - q)
}

/// Bound under the dominance thresholds `(0.75, 0.5)` with `‖b‖_∞ ≤ 1` and
/// `ζ_b = ζ`: `2(ζ + 2sζ) / (1 - 2sζ)`, at most [`C_PERT`]`·s·ζ` when
/// `ζ ≤ 1/(10s)`.
pub fn perturbation_bound(s: usize, zeta: f64) -> f64 {
    perturbation_bound_general(2.0, s, zeta, zeta, 2.0)
}

/// Whether `ζ` lies in the range where [`C_PERT`] applies.
pub fn perturbation_applies(s: usize, zeta: f64) -> bool {
    zeta * 10.0 * s.max(1) as f64 <= 1.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::InteractionGraph;
    use crate::model::LindbladAnsatz;
    use crate::pauli::Axis;
    use crate::probes::build_probes;
    use crate::schedule::PolySchedule;

    fn m(rows: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows.len(), rows[0].len(), &rows.concat())
    }

    #[test]
    fn two_by_two() {
        let a = m(&[&[1.0, 0.1], &[0.1, 1.0]]);
        let x = solve_dense(&a, &DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert!((x[0] - 100.0 / 99.0).abs() < 1e-14 && (x[1] + 10.0 / 99.0).abs() < 1e-14);
        let j = jacobi(&a, &DVector::from_vec(vec![1.0, 0.0]), 1e-14, 1000).unwrap();
        assert!((j - x).amax() < 1e-13);
    }

    #[test]
    fn varah() {
        let a = m(&[&[1.0, 0.2], &[0.1, 1.0]]);
        let (r, _) = varah_bound(&a);
        assert!((r - 1.25).abs() < 1e-14);
        assert!(inf_norm(&a.clone().try_inverse().unwrap()) <= r);
        assert_eq!(varah_bound(&DMatrix::identity(3, 3)), (1.0, 1.0));
        assert_eq!(varah_bound(&m(&[&[1.0, 2.0], &[0.0, 1.0]])).0, f64::INFINITY);
        assert!(check_dominance(&DMatrix::identity(4, 4), 0.75, 0.5));
    }

    #[test]
    fn pert_constant() {
        assert_eq!(perturbation_bound(3, 0.0), 0.0);
        for s in 1..=20 {
            let z = 1.0 / (10.0 * s as f64);
            assert!(perturbation_bound(s, z) <= C_PERT * s as f64 * z + 1e-15);
        }
    }

    #[test]
    fn gamma_round_trip() {
        let idx: Vec<CoeffIndex> = Axis::ALL.iter().map(|&axis| CoeffIndex::Dissipative { site: 0, axis }).collect();
        let g = gamma_matrix(&idx, Direction::Forward).unwrap();
        let gi = gamma_matrix(&idx, Direction::Inverse).unwrap();
        assert!((&g * &gi - DMatrix::identity(3, 3)).amax() < 1e-15);
        assert!(gamma_matrix(&idx[..2], Direction::Forward).is_err());
    }

    #[test]
    fn identity_dynamics_system() {
        let mut a = LindbladAnsatz::new(InteractionGraph::path(2), 2, 1.0, 1.0);
        for i in [CoeffIndex::Hamiltonian("ZZ".parse().unwrap()), CoeffIndex::Hamiltonian("XI".parse().unwrap())] {
            a.add_term(i, PolySchedule::constant(1.0, 0.0)).unwrap();
        }
        for site in 0..2 {
            for axis in Axis::ALL {
                a.add_term(CoeffIndex::Dissipative { site, axis }, PolySchedule::constant(1.0, 0.0)).unwrap();
            }
        }
        let (probes, _) = build_probes(&a).unwrap();
        // O_β = Q_β with no evolution
        let sys = assemble(0.3, &probes, |b, p| Some(if *p == probes[b].q { 1.0 } else { 0.0 }), &vec![0.0; probes.len()]).unwrap();
        assert!((&sys.a_tilde - DMatrix::identity(8, 8)).amax() < 1e-15);
        assert!((&sys.a_hat - DMatrix::identity(8, 8)).amax() < 1e-15);
        let err = assemble(0.3, &probes, |_, _| None, &vec![0.0; probes.len()]).unwrap_err();
        assert!(matches!(err, Error::MissingEstimate(_)));
    }
}
