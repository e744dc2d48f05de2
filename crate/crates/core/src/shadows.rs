//! Simulated process-shadow acquisition and median-of-means estimation of
//! Pauli transfer overlaps `2^{-n} tr[T(0,t)(P_in) P_out]`.
//!
//! One snapshot prepares a random product Pauli eigenstate `(b1, s1)`, evolves
//! it, and measures every qubit in a random Pauli basis `b2` with outcome
//! signs `s2`. The per-snapshot estimate of a pair is
//! `Π_{supp P_in} 3 [b2 = P_in] s2 · Π_{supp P_out} 3 [b1 = P_out] s1`.
//!
//! Internally sign vectors are bit masks (bit `j` set means `s_j = -1`) and a
//! basis is a base-3 code `Σ axis_j 3^j`.

use std::collections::HashMap;
use std::fmt::Write as _;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_xoshiro::Xoshiro256PlusPlus;
use rand_distr::{Binomial, Distribution, StandardNormal};
use rayon::prelude::*;

use crate::dense::{CMatrix, DenseOperator};
use crate::error::{Error, Result};
use crate::model::LindbladAnsatz;
use crate::pauli::{Axis, PauliString, DENSE_LIMIT};
use crate::sim::{evolve_state, pauli_vector, PauliGenerator, Rk45Options};

/// Default median-of-means constant in the sample budget.
pub const C_SHADOW: f64 = 34.0;

/// Largest system handled through a full transfer table.
pub const TABLE_LIMIT: usize = 5;

/// Group size above which simulated groups use the Gaussian limit of the
/// multinomial cell counts.
pub const GAUSSIAN_GROUP: u128 = 1_000_000_000;

const SIM_TOL: f64 = 1e-11;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShadowSnapshot {
    pub time_index: usize,
    pub b1: Vec<Axis>,
    pub s1: Vec<i8>,
    pub b2: Vec<Axis>,
    pub s2: Vec<i8>,
}

impl ShadowSnapshot {
    fn from_codes(time_index: usize, n: usize, b1: usize, s1: usize, b2: usize, s2: usize) -> Self {
        ShadowSnapshot {
            time_index,
            b1: decode_basis(b1, n),
            s1: decode_signs(s1, n),
            b2: decode_basis(b2, n),
            s2: decode_signs(s2, n),
        }
    }

    pub fn n(&self) -> usize {
        self.b1.len()
    }

    /// Single-snapshot estimate for the pair `(P_in, P_out)`.
    pub fn value(&self, p_in: &PauliString, p_out: &PauliString) -> f64 {
        let mut v = 1.0;
        for j in p_in.support() {
            if Some(self.b2[j]) != p_in.axis(j) {
                return 0.0;
            }
            v *= 3.0 * self.s2[j] as f64;
        }
        for j in p_out.support() {
            if Some(self.b1[j]) != p_out.axis(j) {
                return 0.0;
            }
            v *= 3.0 * self.s1[j] as f64;
        }
        v
    }

    fn codes(&self) -> (usize, usize, usize, usize) {
        (encode_basis(&self.b1), encode_signs(&self.s1), encode_basis(&self.b2), encode_signs(&self.s2))
    }
}

fn decode_basis(mut code: usize, n: usize) -> Vec<Axis> {
    (0..n)
        .map(|_| {
            let a = Axis::from_index(code % 3);
            code /= 3;
            a
        })
        .collect()
}

fn encode_basis(b: &[Axis]) -> usize {
    b.iter().rev().fold(0, |acc, a| acc * 3 + a.index())
}

fn decode_signs(mask: usize, n: usize) -> Vec<i8> {
    (0..n).map(|j| if (mask >> j) & 1 == 1 { -1 } else { 1 }).collect()
}

fn encode_signs(s: &[i8]) -> usize {
    s.iter().enumerate().fold(0, |acc, (j, &v)| if v < 0 { acc | (1 << j) } else { acc })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShadowHeader {
    pub n: usize,
    pub times: Vec<f64>,
    pub seed: u64,
    pub ansatz: u64,
}

/// Snapshots grouped by time index.
#[derive(Clone, Debug, PartialEq)]
pub struct ShadowBatch {
    pub header: ShadowHeader,
    by_time: Vec<Vec<ShadowSnapshot>>,
}

impl ShadowBatch {
    pub fn new(header: ShadowHeader) -> Self {
        let by_time = vec![Vec::new(); header.times.len()];
        ShadowBatch { header, by_time }
    }

    pub fn push(&mut self, s: ShadowSnapshot) -> Result<()> {
        let n = self.header.n;
        if s.b1.len() != n || s.s1.len() != n || s.b2.len() != n || s.s2.len() != n {
            return Err(Error::Dimension { expected: n, got: s.b1.len() });
        }
        if s.time_index >= self.by_time.len() {
            return Err(Error::Invalid(format!(
                "time index {} outside {} times",
                s.time_index,
                self.by_time.len()
            )));
        }
        self.by_time[s.time_index].push(s);
        Ok(())
    }

    pub fn at(&self, time_index: usize) -> &[ShadowSnapshot] {
        self.by_time.get(time_index).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.by_time.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn serialize(&self) -> String {
        let h = &self.header;
        let times: Vec<String> = h.times.iter().map(|t| format!("{t}")).collect();
        let mut out = format!("n={} times={} seed={} ansatz={:016x}\n", h.n, times.join(","), h.seed, h.ansatz);
        for snaps in &self.by_time {
            for s in snaps {
                let ax = |b: &[Axis]| b.iter().map(|a| a.as_char()).collect::<String>();
                let sg = |v: &[i8]| v.iter().map(|&x| if x < 0 { '-' } else { '+' }).collect::<String>();
                let _ = writeln!(out, "{} {} {} {} {}", s.time_index, ax(&s.b1), sg(&s.s1), ax(&s.b2), sg(&s.s2));
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<ShadowBatch> {
        let mut lines = text.lines();
        let head = lines.next().ok_or_else(|| Error::Parse("empty snapshot file".into()))?;
        let header = parse_header(head)?;
        let n = header.n;
        let mut batch = ShadowBatch::new(header);
        for (k, line) in lines.enumerate() {
            let rec = k + 1;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |what: &str| Error::Parse(format!("record {rec}: {what}"));
            let f: Vec<&str> = line.split(' ').collect();
            if f.len() != 5 {
                return Err(bad(&format!("expected 5 fields, found {}", f.len())));
            }
            let ti: usize = f[0].parse().map_err(|_| bad("bad time index"))?;
            let axes = |s: &str| -> Result<Vec<Axis>> {
                s.chars().map(|c| Axis::from_char(c).ok_or_else(|| bad("bad basis letter"))).collect()
            };
            let signs = |s: &str| -> Result<Vec<i8>> {
                s.chars()
                    .map(|c| match c {
                        '+' => Ok(1),
                        '-' => Ok(-1),
                        _ => Err(bad("bad sign")),
                    })
                    .collect()
            };
            let snap = ShadowSnapshot {
                time_index: ti,
                b1: axes(f[1])?,
                s1: signs(f[2])?,
                b2: axes(f[3])?,
                s2: signs(f[4])?,
            };
            for v in [snap.b1.len(), snap.s1.len(), snap.b2.len(), snap.s2.len()] {
                if v != n {
                    return Err(bad(&format!("length {v} does not match n = {n}")));
                }
            }
            batch.push(snap).map_err(|e| bad(&e.to_string()))?;
        }
        Ok(batch)
    }
}

fn parse_header(line: &str) -> Result<ShadowHeader> {
    let mut n = None;
    let mut times = None;
    let mut seed = None;
    let mut ansatz = None;
    let bad = |m: String| Error::Parse(format!("header: {m}"));
    for field in line.split(' ') {
        let (k, v) = field.split_once('=').ok_or_else(|| bad(format!("malformed field {field:?}")))?;
        match k {
            "n" => n = Some(v.parse::<usize>().map_err(|_| bad(format!("bad n {v:?}")))?),
            "times" => {
                let t: std::result::Result<Vec<f64>, _> =
                    if v.is_empty() { Ok(Vec::new()) } else { v.split(',').map(str::parse).collect() };
                times = Some(t.map_err(|_| bad(format!("bad times {v:?}")))?);
            }
            "seed" => seed = Some(v.parse::<u64>().map_err(|_| bad(format!("bad seed {v:?}")))?),
            "ansatz" => ansatz = Some(u64::from_str_radix(v, 16).map_err(|_| bad(format!("bad fingerprint {v:?}")))?),
            _ => return Err(bad(format!("unknown key {k:?}"))),
        }
    }
    Ok(ShadowHeader {
        n: n.ok_or_else(|| bad("missing n".into()))?,
        times: times.ok_or_else(|| bad("missing times".into()))?,
        seed: seed.ok_or_else(|| bad("missing seed".into()))?,
        ansatz: ansatz.ok_or_else(|| bad("missing ansatz".into()))?,
    })
}

// ---------------------------------------------------------------------------
// Exact transfer tables

/// Pauli transfer matrices `C(B -> A) = 2^{-n} tr[T(0,t)(P_B) P_A]` at a list of times.
///
/// Entry `[A * 4^n + B]` of each table, indices per [`PauliString::index`].
#[derive(Clone, Debug)]
pub struct ChannelTable {
    n: usize,
    times: Vec<f64>,
    ptm: Vec<Vec<f64>>,
}

impl ChannelTable {
    pub fn from_ansatz(a: &LindbladAnsatz, times: &[f64]) -> Result<Self> {
        let n = a.n();
        if n > TABLE_LIMIT {
            return Err(Error::DenseLimit { n, limit: TABLE_LIMIT });
        }
        check_times(a, times)?;
        let d = 1usize << (2 * n);
        let gen = PauliGenerator::new(a)?;
        let opts = Rk45Options::with_tol(SIM_TOL);
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by(|&i, &j| times[i].partial_cmp(&times[j]).unwrap());
        let sorted: Vec<f64> = order.iter().map(|&i| times[i]).collect();
        let cols: Vec<Vec<Vec<f64>>> = (0..d)
            .into_par_iter()
            .map(|b| gen.evolve(pauli_vector(&PauliString::from_index(n, b as u64)), 0.0, &sorted, &opts))
            .collect::<Result<_>>()?;
        let mut ptm = vec![vec![0.0; d * d]; times.len()];
        for (b, col) in cols.iter().enumerate() {
            for (k, &ti) in order.iter().enumerate() {
                for (aidx, &v) in col[k].iter().enumerate() {
                    ptm[ti][aidx * d + b] = v;
                }
            }
        }
        Ok(ChannelTable { n, times: times.to_vec(), ptm })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn table(&self, time_index: usize) -> &[f64] {
        &self.ptm[time_index]
    }

    /// `2^{-n} tr[T(0,t)(P_in) P_out]`.
    pub fn overlap(&self, time_index: usize, p_in: &PauliString, p_out: &PauliString) -> f64 {
        let d = 1usize << (2 * self.n);
        self.ptm[time_index][p_out.index() as usize * d + p_in.index() as usize]
    }

    /// Same as [`ChannelTable::overlap`] on basis indices.
    pub fn overlap_index(&self, time_index: usize, p_in: usize, p_out: usize) -> f64 {
        let d = 1usize << (2 * self.n);
        self.ptm[time_index][p_out * d + p_in]
    }

    /// `Prob(s2 | b1, s1, b2)` for all sign masks, row-major in `(s1, s2)`.
    fn block_probabilities(&self, time_index: usize, b1: usize, b2: usize) -> Vec<f64> {
        let n = self.n;
        let k = 1usize << n;
        let d = 1usize << (2 * n);
        let ia = subset_indices(n, b1);
        let ib = subset_indices(n, b2);
        let tab = &self.ptm[time_index];
        let mut c = vec![0.0; k * k];
        for a in 0..k {
            for b in 0..k {
                c[a * k + b] = tab[ia[a] * d + ib[b]];
            }
        }
        wht_2d(&mut c, k);
        let norm = 1.0 / k as f64;
        c.iter().map(|v| (v * norm).max(0.0)).collect()
    }
}

fn check_times(a: &LindbladAnsatz, times: &[f64]) -> Result<()> {
    for &t in times {
        if !(0.0..=a.t_max).contains(&t) {
            return Err(Error::Invalid(format!("time {t} outside [0, {}]", a.t_max)));
        }
    }
    Ok(())
}

/// Pauli indices of the `2^n` sub-strings of the product basis `code`.
fn subset_indices(n: usize, code: usize) -> Vec<usize> {
    let axes = decode_basis(code, n);
    let k = 1usize << n;
    let mut out = vec![0usize; k];
    for mask in 1..k {
        let j = mask.trailing_zeros() as usize;
        let (x, z) = axes[j].bits();
        let bit = ((x as usize) << j) | ((z as usize) << (n + j));
        out[mask] = out[mask & (mask - 1)] | bit;
    }
    out
}

/// In-place Walsh-Hadamard transform: `y[a] = Σ_s (-1)^{|a & s|} x[s]`.
fn wht(x: &mut [f64]) {
    wht_blocks(x, x.len());
}

/// Transforms every consecutive `len`-chunk of `x` (`len` a power of two).
fn wht_blocks(x: &mut [f64], len: usize) {
    let mut h = 1;
    while h < len {
        for pair in x.chunks_exact_mut(2 * h) {
            let (lo, hi) = pair.split_at_mut(h);
            for (u, v) in lo.iter_mut().zip(hi.iter_mut()) {
                let (a, b) = (*u, *v);
                *u = a + b;
                *v = a - b;
            }
        }
        h *= 2;
    }
}

/// 2D transform of a row-major `k × k` block: the flat transform over all index bits.
fn wht_2d(x: &mut [f64], k: usize) {
    wht_blocks(x, k * k);
}

// ---------------------------------------------------------------------------
// Acquisition

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AcquireOptions {
    /// Measure in the preparation basis (test hook).
    pub force_equal_bases: bool,
}

/// Simulates `count_per_time` snapshots at each time.
pub fn acquire(a: &LindbladAnsatz, times: &[f64], count_per_time: usize, seed: u64) -> Result<ShadowBatch> {
    acquire_with(a, times, count_per_time, seed, AcquireOptions::default())
}

pub fn acquire_with(
    a: &LindbladAnsatz,
    times: &[f64],
    count_per_time: usize,
    seed: u64,
    opts: AcquireOptions,
) -> Result<ShadowBatch> {
    let n = a.n();
    if n > DENSE_LIMIT {
        return Err(Error::DenseLimit { n, limit: DENSE_LIMIT });
    }
    check_times(a, times)?;
    let table = if n <= TABLE_LIMIT { Some(ChannelTable::from_ansatz(a, times)?) } else { None };
    let per_time: Vec<Vec<ShadowSnapshot>> = (0..times.len())
        .into_par_iter()
        .map(|ti| {
            let mut rng = task_rng(seed, ti as u64);
            let mut sampler = OutcomeSampler { a, table: table.as_ref(), ti, t: times[ti], cache: HashMap::new() };
            let mut v = Vec::with_capacity(count_per_time);
            for _ in 0..count_per_time {
                let b1 = rng.gen_range(0..3usize.pow(n as u32));
                let s1 = rng.gen_range(0..1usize << n);
                let b2 = if opts.force_equal_bases { b1 } else { rng.gen_range(0..3usize.pow(n as u32)) };
                let probs = sampler.probabilities(b1, s1, b2)?;
                let u: f64 = rng.gen();
                let s2 = draw(&probs, u);
                v.push(ShadowSnapshot::from_codes(ti, n, b1, s1, b2, s2));
            }
            Ok(v)
        })
        .collect::<Result<_>>()?;
    let mut batch = ShadowBatch::new(ShadowHeader { n, times: times.to_vec(), seed, ansatz: a.fingerprint() });
    batch.by_time = per_time;
    Ok(batch)
}

/// Independent deterministic stream `stream` of the seed.
pub fn task_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn draw(probs: &[f64], u: f64) -> usize {
    let total: f64 = probs.iter().sum();
    let mut acc = 0.0;
    let target = u * total;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if target < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

struct OutcomeSampler<'a> {
    a: &'a LindbladAnsatz,
    table: Option<&'a ChannelTable>,
    ti: usize,
    t: f64,
    cache: HashMap<(usize, usize), Vec<f64>>,
}

impl OutcomeSampler<'_> {
    /// Outcome distribution over `s2` masks.
    fn probabilities(&mut self, b1: usize, s1: usize, b2: usize) -> Result<Vec<f64>> {
        let k = 1usize << self.a.n();
        if let Some(tab) = self.table {
            let block = self.cache.entry((b1, b2)).or_insert_with(|| tab.block_probabilities(self.ti, b1, b2));
            return Ok(block[s1 * k..(s1 + 1) * k].to_vec());
        }
        // dense route: evolve the prepared state, then read Pauli expectations
        let key = (b1, s1);
        if !self.cache.contains_key(&key) {
            let rho = product_state(self.a.n(), b1, s1)?;
            let x = evolve_state(self.a, &rho, 0.0, self.t, SIM_TOL)?;
            self.cache.insert(key, x.into_matrix().iter().flat_map(|c| [c.re, c.im]).collect());
        }
        let flat = &self.cache[&key];
        let dim = k;
        let x = CMatrix::from_fn(dim, dim, |r, c| {
            let i = 2 * (c * dim + r);
            Complex64::new(flat[i], flat[i + 1])
        });
        let idx = subset_indices(self.a.n(), b2);
        let mut y: Vec<f64> = idx
            .iter()
            .map(|&i| {
                let p = DenseOperator::pauli(&PauliString::from_index(self.a.n(), i as u64)).expect("dense");
                let xo = DenseOperator::new(self.a.n(), x.clone()).expect("shape");
                p.normalized_overlap(&xo).re
            })
            .collect();
        wht(&mut y);
        Ok(y.into_iter().map(|v| v.max(0.0)).collect())
    }
}

/// `⊗_j (I + s_j σ_{b_j}) / 2`.
pub fn product_state(n: usize, b: usize, s: usize) -> Result<DenseOperator> {
    let mut coeffs = vec![0.0; 1 << (2 * n)];
    let scale = 1.0 / (1u64 << n) as f64;
    for (mask, &idx) in subset_indices(n, b).iter().enumerate() {
        let sign = if (mask & s).count_ones() % 2 == 1 { -1.0 } else { 1.0 };
        coeffs[idx] = sign * scale;
    }
    DenseOperator::from_pauli_coeffs(n, &coeffs)
}

// ---------------------------------------------------------------------------
// Estimation

/// `ceil(2 ln(2/δ))` median-of-means groups.
pub fn mom_groups(delta: f64) -> usize {
    ((2.0 * (2.0 / delta).ln()).ceil() as usize).max(1)
}

/// `ceil(c · 3^w · ln(K1K2/δ) / ε²)`.
pub fn sample_budget_with(c: f64, w: usize, k1k2: usize, eps: f64, delta: f64) -> u128 {
    let v = c * 3f64.powi(w as i32) * ((k1k2 as f64) / delta).ln().max(0.0) / (eps * eps);
    v.ceil().max(1.0) as u128
}

pub fn sample_budget(w: usize, k1k2: usize, eps: f64, delta: f64) -> u128 {
    sample_budget_with(C_SHADOW, w, k1k2, eps, delta)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Contiguous group boundaries for `len` items split into `groups`.
fn group_bounds(len: usize, groups: usize) -> Vec<(usize, usize)> {
    (0..groups).map(|g| (g * len / groups, (g + 1) * len / groups)).collect()
}

/// Median-of-means estimate of `2^{-n} tr[T(0,t)(P_in) P_out]`.
pub fn estimate_overlap(
    batch: &ShadowBatch,
    time_index: usize,
    p_in: &PauliString,
    p_out: &PauliString,
    batches_mom: usize,
) -> Result<f64> {
    let n = batch.header.n;
    for p in [p_in, p_out] {
        if p.n() != n {
            return Err(Error::Dimension { expected: n, got: p.n() });
        }
    }
    if p_in.is_identity() != p_out.is_identity() {
        return Err(Error::Invalid("exactly one of the pair is the identity".into()));
    }
    if batches_mom == 0 {
        return Err(Error::Invalid("need at least one median-of-means group".into()));
    }
    let snaps = batch.at(time_index);
    if snaps.is_empty() {
        return Err(Error::EmptyBatch(time_index));
    }
    if snaps.len() < batches_mom {
        return Err(Error::InsufficientSamples { have: snaps.len(), need: batches_mom });
    }
    let mut means: Vec<f64> = group_bounds(snaps.len(), batches_mom)
        .into_iter()
        .map(|(lo, hi)| snaps[lo..hi].iter().map(|s| s.value(p_in, p_out)).sum::<f64>() / (hi - lo) as f64)
        .collect();
    Ok(median(&mut means))
}

/// Exact overlap from the simulator.
pub fn exact_overlap(a: &LindbladAnsatz, t: f64, p_in: &PauliString, p_out: &PauliString) -> Result<f64> {
    let gen = PauliGenerator::new(a)?;
    let v = gen.evolve_to(pauli_vector(p_in), 0.0, t, &Rk45Options::with_tol(SIM_TOL))?;
    Ok(v[p_out.index() as usize])
}

/// Per-group empirical transfer tables at one time.
///
/// Group `g` holds the group mean of every pair estimate, laid out like
/// [`ChannelTable::table`].
#[derive(Clone, Debug)]
pub struct ShadowStats {
    n: usize,
    groups: Vec<Vec<f64>>,
}

impl ShadowStats {
    /// Tables built from explicit snapshots split into contiguous groups.
    pub fn from_snapshots(n: usize, snaps: &[ShadowSnapshot], groups: usize) -> Result<Self> {
        if n > TABLE_LIMIT {
            return Err(Error::DenseLimit { n, limit: TABLE_LIMIT });
        }
        if snaps.len() < groups.max(1) {
            return Err(Error::InsufficientSamples { have: snaps.len(), need: groups.max(1) });
        }
        let k = 1usize << n;
        let d = k * k;
        let w3 = weights3(n);
        let out = group_bounds(snaps.len(), groups.max(1))
            .into_iter()
            .map(|(lo, hi)| {
                let mut acc = vec![0.0; d * d];
                for s in &snaps[lo..hi] {
                    let (b1, s1, b2, s2) = s.codes();
                    let ia = subset_indices(n, b1);
                    let ib = subset_indices(n, b2);
                    for a in 0..k {
                        let va = w3[a] * parity(a & s1);
                        for b in 0..k {
                            acc[ia[a] * d + ib[b]] += va * w3[b] * parity(b & s2);
                        }
                    }
                }
                let inv = 1.0 / (hi - lo) as f64;
                acc.iter_mut().for_each(|v| *v *= inv);
                acc
            })
            .collect();
        Ok(ShadowStats { n, groups: out })
    }

    /// Noise-free tables (one group equal to the exact transfer table).
    pub fn exact(table: &ChannelTable, time_index: usize) -> Self {
        ShadowStats { n: table.n, groups: vec![table.table(time_index).to_vec()] }
    }

    /// Group tables distributed exactly as `total` snapshots split into
    /// `groups` contiguous groups, without materializing the snapshots.
    ///
    /// Cell counts `(b1, s1, b2, s2)` are drawn from their multinomial law;
    /// groups larger than [`GAUSSIAN_GROUP`] use its Gaussian limit.
    pub fn simulate<R: Rng + ?Sized>(
        table: &ChannelTable,
        time_index: usize,
        total: u128,
        groups: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let groups = groups.max(1);
        if total < groups as u128 {
            return Err(Error::InsufficientSamples { have: total as usize, need: groups });
        }
        let n = table.n;
        let k = 1usize << n;
        let nb = 3usize.pow(n as u32);
        let cell_scale = 1.0 / ((nb * nb) as f64 * k as f64);
        // cell probabilities block by block, block (b1, b2) at b1 * nb + b2
        let mut probs = Vec::with_capacity(nb * nb * k * k);
        for b1 in 0..nb {
            for b2 in 0..nb {
                probs.extend(table.block_probabilities(time_index, b1, b2).into_iter().map(|p| p * cell_scale));
            }
        }
        let mass: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= mass);
        let mapper = CellMap::new(n);
        let exact = table.table(time_index);
        let roots: Vec<f64> = probs.iter().map(|p| p.sqrt()).collect();
        let mut x = vec![0.0; probs.len()];
        let out = (0..groups)
            .map(|g| {
                let size = total / groups as u128 + if (g as u128) < total % groups as u128 { 1 } else { 0 };
                if size >= GAUSSIAN_GROUP {
                    let mut normals = Xoshiro256PlusPlus::seed_from_u64(rng.gen());
                    let mut w = 0.0;
                    for (xi, &r) in x.iter_mut().zip(&roots) {
                        *xi = if r > 0.0 { r * normals.sample::<f64, _>(StandardNormal) } else { 0.0 };
                        w += *xi;
                    }
                    let mut acc = mapper.apply(&mut x);
                    let s = 1.0 / (size as f64).sqrt();
                    for (v, c) in acc.iter_mut().zip(exact) {
                        *v = c + s * (*v - w * c);
                    }
                    acc
                } else {
                    let mut counts = multinomial(size as u64, &probs, rng);
                    let mut acc = mapper.apply(&mut counts);
                    let inv = 1.0 / size as f64;
                    acc.iter_mut().for_each(|v| *v *= inv);
                    acc
                }
            })
            .collect();
        Ok(ShadowStats { n, groups: out })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    /// Median over groups of the pair estimate.
    pub fn entry(&self, p_out: usize, p_in: usize) -> f64 {
        let d = 1usize << (2 * self.n);
        let mut v: Vec<f64> = self.groups.iter().map(|g| g[p_out * d + p_in]).collect();
        median(&mut v)
    }

    /// Median over groups of `Σ_R c_R · estimate(R -> P_out)`.
    pub fn combination(&self, p_out: usize, terms: &[(usize, f64)]) -> f64 {
        let d = 1usize << (2 * self.n);
        let mut v: Vec<f64> = self
            .groups
            .iter()
            .map(|g| terms.iter().map(|&(r, c)| c * g[p_out * d + r]).sum())
            .collect();
        median(&mut v)
    }
}

fn parity(x: usize) -> f64 {
    if x.count_ones() % 2 == 1 {
        -1.0
    } else {
        1.0
    }
}

fn weights3(n: usize) -> Vec<f64> {
    (0..1usize << n).map(|m| 3f64.powi(m.count_ones() as i32)).collect()
}

/// Linear map from cell vectors to summed pair estimates.
struct CellMap {
    n: usize,
    w3: Vec<f64>,
    idx: Vec<Vec<usize>>,
}

impl CellMap {
    fn new(n: usize) -> Self {
        let nb = 3usize.pow(n as u32);
        CellMap { n, w3: weights3(n), idx: (0..nb).map(|b| subset_indices(n, b)).collect() }
    }

    /// `Σ_cells x_c v_c(A, B)`; consumes `x` as scratch space.
    fn apply(&self, x: &mut [f64]) -> Vec<f64> {
        let k = 1usize << self.n;
        let d = k * k;
        let nb = self.idx.len();
        let mut acc = vec![0.0; d * d];
        wht_blocks(x, d);
        let w: Vec<f64> = (0..d).map(|c| self.w3[c / k] * self.w3[c % k]).collect();
        for b1 in 0..nb {
            let ia = &self.idx[b1];
            for b2 in 0..nb {
                let off = (b1 * nb + b2) * d;
                let block = &x[off..off + d];
                let ib = &self.idx[b2];
                for a in 0..k {
                    let row = &mut acc[ia[a] * d..ia[a] * d + d];
                    let (bw, bx) = (&w[a * k..a * k + k], &block[a * k..a * k + k]);
                    for b in 0..k {
                        row[ib[b]] += bw[b] * bx[b];
                    }
                }
            }
        }
        acc
    }
}

/// Multinomial counts by sequential conditional binomials.
fn multinomial<R: Rng + ?Sized>(total: u64, probs: &[f64], rng: &mut R) -> Vec<f64> {
    let mut out = vec![0.0; probs.len()];
    let mut left = total;
    let mut mass = 1.0f64;
    for (o, &p) in out.iter_mut().zip(probs) {
        if left == 0 {
            break;
        }
        if p <= 0.0 {
            continue;
        }
        let q = (p / mass).clamp(0.0, 1.0);
        let c = if q >= 1.0 { left } else { Binomial::new(left, q).expect("valid binomial").sample(rng) };
        *o = c as f64;
        left -= c;
        mass -= p;
        if mass <= 0.0 {
            mass = f64::MIN_POSITIVE;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::InteractionGraph;
    use crate::model::CoeffIndex;
    use crate::schedule::PolySchedule;

    fn idle(n: usize) -> LindbladAnsatz {
        LindbladAnsatz::new(InteractionGraph::path(n), 1, 1.0, 1.0)
    }

    fn p(s: &str) -> PauliString {
        s.parse().unwrap()
    }

    #[test]
    fn budget_values() {
        assert_eq!(sample_budget(3, 100, 0.1, 0.01), 845_510);
        let a = sample_budget(2, 10, 0.1, 0.05);
        let b = sample_budget(2, 10, 0.2, 0.05);
        assert!((a as f64 / b as f64 - 4.0).abs() < 1e-3);
        assert_eq!(mom_groups(0.05), 8);
    }

    #[test]
    fn same_basis_repeats_signs() {
        let batch =
            acquire_with(&idle(2), &[0.0], 200, 3, AcquireOptions { force_equal_bases: true }).unwrap();
        for s in batch.at(0) {
            assert_eq!(s.s1, s.s2);
        }
    }

    #[test]
    fn identity_estimates() {
        let batch = acquire(&idle(1), &[0.5], 4000, 9).unwrap();
        assert_eq!(estimate_overlap(&batch, 0, &p("I"), &p("I"), 5).unwrap(), 1.0);
        assert!(estimate_overlap(&batch, 0, &p("Z"), &p("X"), 1).is_ok());
        assert!(matches!(estimate_overlap(&batch, 3, &p("Z"), &p("Z"), 1), Err(Error::EmptyBatch(3))));
    }

    #[test]
    fn stats_match_direct_estimates() {
        let a = idle(2).with_term(CoeffIndex::Hamiltonian(p("XX")), PolySchedule::constant(1.0, 0.7));
        let batch = acquire(&a, &[0.3], 2000, 5).unwrap();
        let stats = ShadowStats::from_snapshots(2, batch.at(0), 4).unwrap();
        for (pi, po) in [("ZI", "ZI"), ("ZI", "YX"), ("XY", "XY"), ("IZ", "ZY")] {
            let direct = estimate_overlap(&batch, 0, &p(pi), &p(po), 4).unwrap();
            let via = stats.entry(p(po).index() as usize, p(pi).index() as usize);
            assert!((direct - via).abs() < 1e-12, "{pi} {po}: {direct} vs {via}");
        }
    }

    #[test]
    fn simulated_groups_are_centred() {
        let a = idle(2)
            .with_term(CoeffIndex::Hamiltonian(p("ZX")), PolySchedule::constant(1.0, 0.6))
            .with_term(CoeffIndex::Dissipative { site: 1, axis: Axis::Y }, PolySchedule::constant(1.0, 0.2));
        let table = ChannelTable::from_ansatz(&a, &[0.4]).unwrap();
        let mut rng = task_rng(1, 0);
        for total in [200_000u128, 40_000_000_000] {
            let st = ShadowStats::simulate(&table, 0, total, 5, &mut rng).unwrap();
            let tol = 50.0 / (total as f64 / 5.0).sqrt();
            for (pi, po) in [("ZI", "ZI"), ("IZ", "XY"), ("XX", "XX")] {
                let e = st.entry(p(po).index() as usize, p(pi).index() as usize);
                let c = table.overlap(0, &p(pi), &p(po));
                assert!((e - c).abs() < tol, "{pi} {po} {e} {c}");
            }
        }
    }

    #[test]
    fn text_round_trip() {
        let a = idle(3).with_term(CoeffIndex::Hamiltonian(p("ZZI")), PolySchedule::constant(1.0, 0.5));
        let batch = acquire(&a, &[0.1, 0.25], 30, 11).unwrap();
        let text = batch.serialize();
        let back = ShadowBatch::parse(&text).unwrap();
        assert_eq!(back, batch);
        assert_eq!(back.serialize(), text);
        let cut = &text[..text.len() - 4];
        let err = ShadowBatch::parse(cut).unwrap_err();
        assert!(err.to_string().contains("record 60"), "{err}");
        let head = text.lines().next().unwrap();
        assert!(ShadowBatch::parse(head).unwrap().is_empty());
    }
}
