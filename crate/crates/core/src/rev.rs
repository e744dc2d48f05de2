//! Localized channel inversion.
//!
//! Given a region PTM `ĉ(P_in -> P_out) ≈ 2^{-n} tr[T(0,t)(P_in) P_out]` and a
//! target Pauli `Q`, find `O = Σ o_R R` on the region with `‖O‖ ≤ 1` that
//! minimizes `‖T̂(O) - Q‖`. Coefficients are indexed locally by
//! `x | z << r` with bit `q` standing for `region[q]`.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dense::CMatrix;
use crate::error::{Error, Result};
use crate::model::LindbladAnsatz;
use crate::pauli::PauliString;
use crate::shadows::{ChannelTable, ShadowStats};
use crate::sim::{PauliGenerator, Rk45Options};

pub const REGION_CAP: usize = 6;
pub const MAX_ITER: usize = 5000;
/// Relative duality gap accepted once the optimum itself exceeds `eps_sdp / 10`.
pub const REL_GAP: f64 = 1e-3;

/// Region Paulis in local index order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionBasis {
    pub n: usize,
    pub sites: Vec<usize>,
}

impl RegionBasis {
    pub fn new(n: usize, mut sites: Vec<usize>, cap: usize) -> Result<Self> {
        sites.sort_unstable();
        sites.dedup();
        if sites.len() > cap {
            return Err(Error::RegionCap { size: sites.len(), cap });
        }
        if let Some(&v) = sites.iter().find(|&&v| v >= n) {
            return Err(Error::UnknownVertex(v));
        }
        Ok(RegionBasis { n, sites })
    }

    pub fn r(&self) -> usize {
        self.sites.len()
    }

    pub fn len(&self) -> usize {
        1 << (2 * self.r())
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn global(&self, local: usize) -> PauliString {
        let r = self.r();
        let lp = PauliString::from_index(r, local as u64);
        let mut p = PauliString::identity(self.n);
        for (q, &j) in self.sites.iter().enumerate() {
            p.set(j, lp.axis(q));
        }
        p
    }

    pub fn local(&self, p: &PauliString) -> Option<usize> {
        if p.support().iter().any(|j| self.sites.binary_search(j).is_err()) {
            return None;
        }
        let mut lp = PauliString::identity(self.r());
        for (q, &j) in self.sites.iter().enumerate() {
            lp.set(q, p.axis(j));
        }
        Some(lp.index() as usize)
    }

    /// Global `PauliString::index` of every local Pauli.
    pub fn global_indices(&self) -> Vec<usize> {
        (0..self.len()).map(|l| self.global(l).index() as usize).collect()
    }
}

#[derive(Clone, Debug)]
pub struct LocalChannelEstimate {
    pub basis: RegionBasis,
    pub t: f64,
    /// Rows are output Paulis, columns input Paulis.
    pub ptm: DMatrix<f64>,
    pub precision: f64,
    lu: OnceLock<Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>>,
}

impl LocalChannelEstimate {
    pub fn new(basis: RegionBasis, t: f64, ptm: DMatrix<f64>, precision: f64) -> Result<Self> {
        let d = basis.len();
        if ptm.nrows() != d || ptm.ncols() != d {
            return Err(Error::Dimension { expected: d, got: ptm.nrows() });
        }
        Ok(LocalChannelEstimate { basis, t, ptm, precision, lu: OnceLock::new() })
    }

    pub fn region(&self) -> &[usize] {
        &self.basis.sites
    }

    fn least_squares(&self, q: &DVector<f64>) -> Option<DVector<f64>> {
        self.lu
            .get_or_init(|| {
                let lu = self.ptm.clone().lu();
                lu.is_invertible().then_some(lu)
            })
            .as_ref()
            .and_then(|lu| lu.solve(q))
    }
}

/// Exact region PTMs of `a` at every time in `times` (ascending).
pub fn oracle_channels(a: &LindbladAnsatz, basis: &RegionBasis, times: &[f64], tol: f64) -> Result<Vec<LocalChannelEstimate>> {
    oracle_channels_with(&PauliGenerator::new(a)?, basis, times, tol)
}

pub fn oracle_channels_with(gen: &PauliGenerator, basis: &RegionBasis, times: &[f64], tol: f64) -> Result<Vec<LocalChannelEstimate>> {
    let opts = Rk45Options::with_tol(tol);
    let idx = basis.global_indices();
    let cols: Vec<Vec<Vec<f64>>> = idx
        .par_iter()
        .map(|&g| {
            let mut v = vec![0.0; gen.dim()];
            v[g] = 1.0;
            gen.evolve(v, 0.0, times, &opts)
        })
        .collect::<Result<_>>()?;
    let d = basis.len();
    Ok(times
        .iter()
        .enumerate()
        .map(|(ti, &t)| {
            let ptm = DMatrix::from_fn(d, d, |o, i| cols[i][ti][idx[o]]);
            LocalChannelEstimate::new(basis.clone(), t, ptm, 0.0).expect("square by construction")
        })
        .collect())
}

pub fn channel_from_table(table: &ChannelTable, ti: usize, basis: &RegionBasis) -> Result<LocalChannelEstimate> {
    let idx = basis.global_indices();
    let d = basis.len();
    let ptm = DMatrix::from_fn(d, d, |o, i| table.overlap_index(ti, idx[i], idx[o]));
    LocalChannelEstimate::new(basis.clone(), table.times()[ti], ptm, 0.0)
}

/// Median-of-means region PTM from shadow statistics.
pub fn channel_from_stats(stats: &ShadowStats, t: f64, basis: &RegionBasis, precision: f64) -> Result<LocalChannelEstimate> {
    if stats.n() != basis.n {
        return Err(Error::Dimension { expected: basis.n, got: stats.n() });
    }
    let idx = basis.global_indices();
    let d = basis.len();
    let ptm = DMatrix::from_fn(d, d, |o, i| stats.entry(idx[o], idx[i]));
    LocalChannelEstimate::new(basis.clone(), t, ptm, precision)
}

// ---------------------------------------------------------------------------
// Pauli <-> matrix transforms on r qubits

fn i_pow(k: u32) -> Complex64 {
    match k % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    }
}

fn wht(v: &mut [Complex64]) {
    let mut h = 1;
    while h < v.len() {
        for i in (0..v.len()).step_by(2 * h) {
            for j in i..i + h {
                let (a, b) = (v[j], v[j + h]);
                v[j] = a + b;
                v[j + h] = a - b;
            }
        }
        h *= 2;
    }
}

/// `Σ_P c_P P` as a `2^r × 2^r` matrix.
pub fn coeffs_to_matrix(c: &[f64], r: usize) -> CMatrix {
    let d = 1usize << r;
    let mut m = CMatrix::zeros(d, d);
    let mut f = vec![Complex64::new(0.0, 0.0); d];
    for x in 0..d {
        for (z, fz) in f.iter_mut().enumerate() {
            *fz = i_pow((x & z).count_ones()) * c[x | (z << r)];
        }
        wht(&mut f);
        for (j, v) in f.iter().enumerate() {
            m[(j ^ x, j)] = *v;
        }
    }
    m
}

/// Real parts of `2^{-r} tr[P M]` for every local Pauli.
pub fn matrix_to_coeffs(m: &CMatrix, r: usize) -> Vec<f64> {
    let d = 1usize << r;
    let mut c = vec![0.0; d * d];
    let mut h = vec![Complex64::new(0.0, 0.0); d];
    for x in 0..d {
        for (j, hj) in h.iter_mut().enumerate() {
            *hj = m[(j ^ x, j)];
        }
        wht(&mut h);
        for (z, v) in h.iter().enumerate() {
            c[x | (z << r)] = (i_pow((x & z).count_ones()).conj() * v).re / d as f64;
        }
    }
    c
}

fn hermitian_eigen(m: CMatrix) -> SymmetricEigen<Complex64, nalgebra::Dyn> {
    SymmetricEigen::new(m)
}

/// `‖Σ c_P P‖` over local coefficients.
pub fn spectral_norm(coeffs: &[f64], r: usize) -> Result<f64> {
    if r > REGION_CAP {
        return Err(Error::RegionCap { size: r, cap: REGION_CAP });
    }
    if coeffs.len() != 1 << (2 * r) {
        return Err(Error::Dimension { expected: 1 << (2 * r), got: coeffs.len() });
    }
    Ok(hermitian_eigen(coeffs_to_matrix(coeffs, r)).eigenvalues.iter().fold(0.0, |a, v| a.max(v.abs())))
}

/// Projection onto `‖O‖ ≤ 1` by eigenvalue clipping.
fn project(o: &[f64], r: usize) -> Vec<f64> {
    let e = hermitian_eigen(coeffs_to_matrix(o, r));
    if e.eigenvalues.iter().all(|v| v.abs() <= 1.0) {
        return o.to_vec();
    }
    let clipped = e.eigenvalues.map(|v| Complex64::new(v.clamp(-1.0, 1.0), 0.0));
    let m = &e.eigenvectors * CMatrix::from_diagonal(&clipped) * e.eigenvectors.adjoint();
    matrix_to_coeffs(&m, r)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RevOptions {
    pub eps_sdp: f64,
    pub max_iter: usize,
    /// Scale `a` of the fallback step `a / √k`.
    pub step: f64,
}

impl RevOptions {
    pub fn new(eps_sdp: f64) -> Self {
        RevOptions { eps_sdp, max_iter: MAX_ITER, step: 0.5 }
    }

    /// `1 / (60 s²)`.
    pub fn for_sparsity(s: usize) -> Self {
        Self::new(default_eps_sdp(s))
    }
}

pub fn default_eps_sdp(s: usize) -> f64 {
    1.0 / (60.0 * (s.max(1) as f64).powi(2))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RevOutput {
    pub region: Vec<usize>,
    /// Local coefficients.
    pub coeffs: Vec<f64>,
    pub objective: f64,
    pub lower_bound: f64,
    pub iterations: usize,
}

impl RevOutput {
    /// Nonzero terms as global Pauli strings.
    pub fn terms(&self, basis: &RegionBasis) -> Vec<(PauliString, f64)> {
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(l, &c)| (basis.global(l), c))
            .collect()
    }

    /// `(global index, coefficient)` pairs.
    pub fn indexed_terms(&self, basis: &RegionBasis) -> Vec<(usize, f64)> {
        self.terms(basis).into_iter().map(|(p, c)| (p.index() as usize, c)).collect()
    }

    pub fn dump(&self) -> String {
        let cs: Vec<String> = self.coeffs.iter().map(|c| format!("{c:.12e}")).collect();
        format!(
            "region={:?} objective={:.6e} lower_bound={:.6e} iterations={} coeffs={}",
            self.region,
            self.objective,
            self.lower_bound,
            self.iterations,
            cs.join(",")
        )
    }
}

struct Problem<'a> {
    est: &'a LocalChannelEstimate,
    r: usize,
    d: f64,
    q: usize,
}

struct Eval {
    f: f64,
    /// Normalized subgradient element of the spectral norm at the residual.
    w: CMatrix,
}

impl Problem<'_> {
    fn residual(&self, o: &[f64]) -> Vec<f64> {
        let mut res = (&self.est.ptm * DVector::from_column_slice(o)).data.as_vec().clone();
        res[self.q] -= 1.0;
        res
    }

    fn eval(&self, o: &[f64]) -> Eval {
        let e = hermitian_eigen(coeffs_to_matrix(&self.residual(o), self.r));
        let f = e.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let tol = 1e-9 * f.max(1e-12) + 1e-14;
        let dim = e.eigenvalues.len();
        let mut w = CMatrix::zeros(dim, dim);
        let mut cnt = 0.0;
        for (k, &lam) in e.eigenvalues.iter().enumerate() {
            if lam.abs() >= f - tol {
                let u = e.eigenvectors.column(k);
                w += (&u * u.adjoint()) * Complex64::new(lam.signum(), 0.0);
                cnt += 1.0;
            }
        }
        if cnt > 0.0 {
            w /= Complex64::new(cnt, 0.0);
        }
        Eval { f, w }
    }

    /// `tr[W P]` for every local Pauli.
    fn traces(&self, w: &CMatrix) -> Vec<f64> {
        matrix_to_coeffs(w, self.r).into_iter().map(|c| c * self.d).collect()
    }

    /// Dual value `-tr[WQ] - ‖Z‖_1` with `Z = 2^{-r} Σ_R (ptm^T w)_R R`,
    /// together with the subgradient `ptm^T w`.
    fn dual(&self, w: &CMatrix) -> (f64, DVector<f64>) {
        let tw = self.traces(w);
        let z = self.est.ptm.tr_mul(&DVector::from_column_slice(&tw));
        let zc: Vec<f64> = z.iter().map(|v| v / self.d).collect();
        let nuc: f64 = hermitian_eigen(coeffs_to_matrix(&zc, self.r)).eigenvalues.iter().map(|v| v.abs()).sum();
        (-tw[self.q] - nuc, z)
    }

    fn lower_bound(&self, w: &CMatrix) -> f64 {
        self.dual(w).0
    }
}

/// Minimizes `‖T̂(O) - Q‖` over `‖O‖ ≤ 1` supported on the estimate's region.
///
/// Warm starts from the projected linear inverse and from `O = Q`, then runs
/// projected subgradient steps. Stops once the objective or the duality gap
/// drops below `eps_sdp / 10`, or the gap is within [`REL_GAP`] of the
/// objective; otherwise returns [`Error::NotConverged`] carrying the best iterate.
pub fn rev(est: &LocalChannelEstimate, q: &PauliString, opts: &RevOptions) -> Result<RevOutput> {
    let basis = &est.basis;
    let r = basis.r();
    if r > REGION_CAP {
        return Err(Error::RegionCap { size: r, cap: REGION_CAP });
    }
    let qi = basis.local(q).ok_or_else(|| Error::RegionSupport { region: basis.sites.clone(), support: q.support() })?;
    let prob = Problem { est, r, d: (1usize << r) as f64, q: qi };
    let dim = basis.len();
    let tol = opts.eps_sdp / 10.0;

    let mut unit = vec![0.0; dim];
    unit[qi] = 1.0;
    let mut starts = vec![unit.clone()];
    if let Some(x) = est.least_squares(&DVector::from_column_slice(&unit)) {
        starts.push(project(x.as_slice(), r));
    }
    let mut best: Option<(f64, Vec<f64>, Eval)> = None;
    for s in starts {
        let ev = prob.eval(&s);
        if best.as_ref().is_none_or(|b| ev.f < b.0) {
            best = Some((ev.f, s, ev));
        }
    }
    let (mut best_f, mut best_o, first) = best.expect("at least one start");
    let mut lb = prob.lower_bound(&first.w).max(0.0);
    let done = |f: f64, lb: f64| f <= tol || f - lb <= tol.max(REL_GAP * f);
    if done(best_f, lb) {
        return Ok(RevOutput { region: basis.sites.clone(), coeffs: best_o, objective: best_f, lower_bound: lb, iterations: 0 });
    }

    let mut o = best_o.clone();
    let mut ev = first;
    let mut w_avg = CMatrix::zeros(ev.w.nrows(), ev.w.ncols());
    let mut since = 0usize;
    for k in 1..=opts.max_iter {
        w_avg += &ev.w;
        if k % 10 == 0 {
            lb = lb.max(prob.lower_bound(&(&w_avg / Complex64::new(k as f64, 0.0))));
        }
        let (dual, g) = prob.dual(&ev.w);
        lb = lb.max(dual);
        if done(best_f, lb) {
            return Ok(RevOutput { region: basis.sites.clone(), coeffs: best_o, objective: best_f, lower_bound: lb, iterations: k });
        }
        let gn = g.norm_squared();
        if gn == 0.0 {
            break;
        }
        let step = if since < 50 {
            (ev.f - lb) / gn
        } else {
            opts.step * (best_f - lb).max(tol) / ((k - since + 1) as f64).sqrt() / gn.sqrt()
        };
        let moved: Vec<f64> = o.iter().zip(g.iter()).map(|(a, b)| a - step * b).collect();
        o = project(&moved, r);
        ev = prob.eval(&o);
        if ev.f < best_f - 1e-15 {
            best_f = ev.f;
            best_o.clone_from(&o);
            since = 0;
        } else {
            since += 1;
        }
    }
    if done(best_f, lb) {
        return Ok(RevOutput { region: basis.sites.clone(), coeffs: best_o, objective: best_f, lower_bound: lb, iterations: opts.max_iter });
    }
    Err(Error::NotConverged { objective: best_f, gap: best_f - lb, best: best_o })
}


#[cfg(test)]
mod grid {
    use super::*;
    use crate::lattice::InteractionGraph;
    use crate::model::CoeffIndex;
    use crate::pauli::Axis;
    use crate::schedule::PolySchedule;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn objective(ptm: &DMatrix<f64>, o: &[f64], q: usize) -> f64 {
        let mut r = ptm * DVector::from_column_slice(o);
        r[q] -= 1.0;
        r[0].abs() + (r[1] * r[1] + r[2] * r[2] + r[3] * r[3]).sqrt()
    }

    fn grid_min(ptm: &DMatrix<f64>, q: usize) -> f64 {
        let mut centre = [0.0; 4];
        let mut half = 1.0;
        let mut best = f64::INFINITY;
        for _ in 0..8 {
            let pts = 17;
            let mut arg = centre;
            for a in 0..pts {
                for b in 0..pts {
                    for c in 0..pts {
                        for e in 0..pts {
                            let g = |k: usize, i: usize| centre[k] + half * (2.0 * i as f64 / (pts - 1) as f64 - 1.0);
                            let o = [g(0, a), g(1, b), g(2, c), g(3, e)];
                            if o[0].abs() + (o[1] * o[1] + o[2] * o[2] + o[3] * o[3]).sqrt() > 1.0 {
                                continue;
                            }
                            let f = objective(ptm, &o, q);
                            if f < best {
                                best = f;
                                arg = o;
                            }
                        }
                    }
                }
            }
            centre = arg;
            half *= 0.35;
        }
        best
    }

    #[test]
    fn matches_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..20 {
            let mut a = LindbladAnsatz::new(InteractionGraph::path(1), 1, 2.0, 1.0);
            for ax in Axis::ALL {
                let mut p = PauliString::identity(1);
                p.set(0, Some(ax));
                a.add_term(CoeffIndex::Hamiltonian(p), PolySchedule::constant(2.0, rng.gen_range(-1.0..1.0))).unwrap();
                a.add_term(CoeffIndex::Dissipative { site: 0, axis: ax }, PolySchedule::constant(2.0, rng.gen_range(0.0..0.6))).unwrap();
            }
            let t = rng.gen_range(0.2..1.5);
            let basis = RegionBasis::new(1, vec![0], 6).unwrap();
            let est = &oracle_channels(&a, &basis, &[t], 1e-12).unwrap()[0];
            let q = 1 + rng.gen_range(0..3);
            let qp = basis.global(q);
            let out = rev(est, &qp, &RevOptions::new(1e-3));
            let (f, it) = match out {
                Ok(o) => (o.objective, o.iterations),
                Err(Error::NotConverged { objective, gap, .. }) => {
                    eprintln!("case {case}: not converged gap {gap:e}");
                    (objective, MAX_ITER)
                }
                Err(e) => panic!("{e}"),
            };
            let g = grid_min(&est.ptm, q);
            eprintln!("case {case}: rev {f:.6} grid {g:.6} iters {it}");
            assert!((f - g).abs() <= 1e-3, "case {case}: {f} vs {g}");
        }
    }
}
