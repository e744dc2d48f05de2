//! Symplectic Pauli strings with exact phase bookkeeping.
//!
//! A string is stored as two bit vectors `x`, `z` packed 64 qubits per word.
//! The operator represented by `(x, z)` is the Hermitian tensor product whose
//! factor on qubit `j` is `I, X, Z, Y` for `(x_j, z_j) = (0,0), (1,0), (0,1), (1,1)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default qubit limit for dense matrices.
pub const DENSE_LIMIT: usize = 12;

/// A fourth root of unity `i^k`, stored as the exponent `k mod 4`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Phase(u8);

impl Phase {
    pub const ONE: Phase = Phase(0);
    pub const I: Phase = Phase(1);
    pub const MINUS_ONE: Phase = Phase(2);
    pub const MINUS_I: Phase = Phase(3);

    pub fn from_exponent(k: i64) -> Phase {
        Phase(k.rem_euclid(4) as u8)
    }

    pub fn exponent(self) -> u8 {
        self.0
    }

    pub fn mul(self, other: Phase) -> Phase {
        Phase((self.0 + other.0) % 4)
    }

    pub fn conj(self) -> Phase {
        Phase((4 - self.0) % 4)
    }

    pub fn is_real(self) -> bool {
        self.0 % 2 == 0
    }

    pub fn to_complex(self) -> Complex64 {
        match self.0 {
            0 => Complex64::new(1.0, 0.0),
            1 => Complex64::new(0.0, 1.0),
            2 => Complex64::new(-1.0, 0.0),
            _ => Complex64::new(0.0, -1.0),
        }
    }

    fn prefix(self) -> &'static str {
        match self.0 {
            0 => "+",
            1 => "+i",
            2 => "-",
            _ => "-i",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.prefix())
    }
}

/// Single-qubit Pauli axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn bits(self) -> (bool, bool) {
        match self {
            Axis::X => (true, false),
            Axis::Y => (true, true),
            Axis::Z => (false, true),
        }
    }

    pub fn from_bits(x: bool, z: bool) -> Option<Axis> {
        match (x, z) {
            (false, false) => None,
            (true, false) => Some(Axis::X),
            (true, true) => Some(Axis::Y),
            (false, true) => Some(Axis::Z),
        }
    }

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn from_index(i: usize) -> Axis {
        Axis::ALL[i]
    }

    pub fn as_char(self) -> char {
        match self {
            Axis::X => 'X',
            Axis::Y => 'Y',
            Axis::Z => 'Z',
        }
    }

    pub fn from_char(c: char) -> Option<Axis> {
        match c {
            'X' => Some(Axis::X),
            'Y' => Some(Axis::Y),
            'Z' => Some(Axis::Z),
            _ => None,
        }
    }

    /// The two other axes, in X < Y < Z order.
    pub fn others(self) -> [Axis; 2] {
        match self {
            Axis::X => [Axis::Y, Axis::Z],
            Axis::Y => [Axis::X, Axis::Z],
            Axis::Z => [Axis::X, Axis::Y],
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

fn words(n: usize) -> usize {
    n.div_ceil(64).max(1)
}

/// An n-qubit Pauli string without phase.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PauliString {
    n: usize,
    x: Vec<u64>,
    z: Vec<u64>,
}

impl PauliString {
    pub fn identity(n: usize) -> Self {
        PauliString {
            n,
            x: vec![0; words(n)],
            z: vec![0; words(n)],
        }
    }

    /// Single-site Pauli `axis` on qubit `site`.
    pub fn single(n: usize, site: usize, axis: Axis) -> Self {
        let mut p = PauliString::identity(n);
        p.set(site, Some(axis));
        p
    }

    pub fn from_sites(n: usize, sites: &[(usize, Axis)]) -> Self {
        let mut p = PauliString::identity(n);
        for &(j, a) in sites {
            p.set(j, Some(a));
        }
        p
    }

    /// Builds a string from bit vectors given as booleans.
    pub fn from_bits(x: &[bool], z: &[bool]) -> Result<Self> {
        if x.len() != z.len() {
            return Err(Error::Dimension {
                expected: x.len(),
                got: z.len(),
            });
        }
        let mut p = PauliString::identity(x.len());
        for j in 0..x.len() {
            p.set(j, Axis::from_bits(x[j], z[j]));
        }
        Ok(p)
    }

    /// Decodes a basis index `x | z << n` (requires `2n <= 64`).
    pub fn from_index(n: usize, idx: u64) -> Self {
        assert!(2 * n <= 64, "index form needs 2n <= 64");
        let mask = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
        let mut p = PauliString::identity(n);
        p.x[0] = idx & mask;
        p.z[0] = if n == 0 { 0 } else { (idx >> n) & mask };
        p
    }

    /// Basis index `x | z << n`, the layout used by Pauli-basis vectors.
    pub fn index(&self) -> u64 {
        assert!(2 * self.n <= 64, "index form needs 2n <= 64");
        self.x[0] | (self.z[0] << self.n)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn x_words(&self) -> &[u64] {
        &self.x
    }

    pub fn z_words(&self) -> &[u64] {
        &self.z
    }

    pub fn x_bit(&self, j: usize) -> bool {
        (self.x[j / 64] >> (j % 64)) & 1 == 1
    }

    pub fn z_bit(&self, j: usize) -> bool {
        (self.z[j / 64] >> (j % 64)) & 1 == 1
    }

    pub fn axis(&self, j: usize) -> Option<Axis> {
        Axis::from_bits(self.x_bit(j), self.z_bit(j))
    }

    pub fn set(&mut self, j: usize, axis: Option<Axis>) {
        assert!(j < self.n, "qubit {j} out of range for {} qubits", self.n);
        let (xb, zb) = axis.map(Axis::bits).unwrap_or((false, false));
        let w = j / 64;
        let m = 1u64 << (j % 64);
        if xb {
            self.x[w] |= m
        } else {
            self.x[w] &= !m
        }
        if zb {
            self.z[w] |= m
        } else {
            self.z[w] &= !m
        }
    }

    pub fn with(&self, j: usize, axis: Option<Axis>) -> Self {
        let mut p = self.clone();
        p.set(j, axis);
        p
    }

    pub fn is_identity(&self) -> bool {
        self.x.iter().chain(self.z.iter()).all(|&w| w == 0)
    }

    pub fn weight(&self) -> usize {
        self.x
            .iter()
            .zip(&self.z)
            .map(|(a, b)| (a | b).count_ones() as usize)
            .sum()
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.n)
            .filter(|&j| self.x_bit(j) || self.z_bit(j))
            .collect()
    }

    fn check(&self, q: &PauliString) -> Result<()> {
        if self.n != q.n {
            return Err(Error::Dimension {
                expected: self.n,
                got: q.n,
            });
        }
        Ok(())
    }

    /// True when the two strings anticommute.
    pub fn anticommutes(&self, q: &PauliString) -> Result<bool> {
        self.check(q)?;
        let mut c = 0u32;
        for w in 0..self.x.len() {
            c += (self.x[w] & q.z[w]).count_ones() + (self.z[w] & q.x[w]).count_ones();
        }
        Ok(c % 2 == 1)
    }

    /// Product `self · q` with its exact phase.
    pub fn multiply(&self, q: &PauliString) -> Result<PhasedPauli> {
        self.check(q)?;
        let mut e: i64 = 0;
        let mut out = PauliString::identity(self.n);
        for w in 0..self.x.len() {
            e += product_phase_word(self.x[w], self.z[w], q.x[w], q.z[w]);
            out.x[w] = self.x[w] ^ q.x[w];
            out.z[w] = self.z[w] ^ q.z[w];
        }
        Ok(PhasedPauli {
            phase: Phase::from_exponent(e),
            pauli: out,
        })
    }

    /// `½[self, q]`: zero when the strings commute, the product otherwise.
    pub fn commutator_half(&self, q: &PauliString) -> Result<Option<PhasedPauli>> {
        if self.anticommutes(q)? {
            self.multiply(q).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn to_dense(&self) -> Result<DMatrix<Complex64>> {
        PhasedPauli::new(Phase::ONE, self.clone()).to_dense()
    }
}

/// Exponent `k` with `P(x1,z1) P(x2,z2) = i^k P(x1^x2, z1^z2)` for one packed word.
pub fn product_phase_word(x1: u64, z1: u64, x2: u64, z2: u64) -> i64 {
    let y1 = x1 & z1;
    let xo = x1 & !z1;
    let zo = !x1 & z1;
    let plus = (y1 & z2 & !x2) | (xo & z2 & x2) | (zo & x2 & !z2);
    let minus = (y1 & x2 & !z2) | (xo & z2 & !x2) | (zo & x2 & z2);
    plus.count_ones() as i64 - minus.count_ones() as i64
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for j in 0..self.n {
            let c = self.axis(j).map(Axis::as_char).unwrap_or('I');
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl FromStr for PauliString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let pp: PhasedPauli = s.parse()?;
        if pp.phase != Phase::ONE {
            return Err(Error::Parse(format!("unexpected phase in {s:?}")));
        }
        Ok(pp.pauli)
    }
}

impl Serialize for PauliString {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PauliString {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A Pauli string times a fourth root of unity.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PhasedPauli {
    pub phase: Phase,
    pub pauli: PauliString,
}

impl PhasedPauli {
    pub fn new(phase: Phase, pauli: PauliString) -> Self {
        PhasedPauli { phase, pauli }
    }

    pub fn multiply(&self, q: &PhasedPauli) -> Result<PhasedPauli> {
        let mut r = self.pauli.multiply(&q.pauli)?;
        r.phase = r.phase.mul(self.phase).mul(q.phase);
        Ok(r)
    }

    /// Dense `2^n x 2^n` matrix; qubit 0 is the most significant tensor factor.
    pub fn to_dense(&self) -> Result<DMatrix<Complex64>> {
        self.to_dense_with_limit(DENSE_LIMIT)
    }

    pub fn to_dense_with_limit(&self, limit: usize) -> Result<DMatrix<Complex64>> {
        let n = self.pauli.n;
        if n > limit {
            return Err(Error::DenseLimit { n, limit });
        }
        let d = 1usize << n;
        let mut m = DMatrix::zeros(d, d);
        let (xm, zm, y) = basis_masks(&self.pauli);
        let base = self.phase.to_complex() * Phase::from_exponent(y as i64).to_complex();
        for col in 0..d {
            let row = col ^ xm;
            let sign = if (col & zm).count_ones() % 2 == 1 {
                -1.0
            } else {
                1.0
            };
            m[(row, col)] = base * sign;
        }
        Ok(m)
    }
}

/// Row-index masks of a string in the computational basis: `(x mask, z mask, #Y)`.
///
/// Qubit `j` maps to bit `n-1-j` of the basis index. The operator acts as
/// `P|c> = i^{#Y} (-1)^{popcount(c & z)} |c ^ x>`.
pub fn basis_masks(p: &PauliString) -> (usize, usize, u32) {
    let n = p.n;
    let mut xm = 0usize;
    let mut zm = 0usize;
    let mut y = 0u32;
    for j in 0..n {
        let b = 1usize << (n - 1 - j);
        let (xb, zb) = (p.x_bit(j), p.z_bit(j));
        if xb {
            xm |= b;
        }
        if zb {
            zm |= b;
        }
        if xb && zb {
            y += 1;
        }
    }
    (xm, zm, y)
}

impl fmt::Display for PhasedPauli {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.phase, self.pauli)
    }
}

impl FromStr for PhasedPauli {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (phase, body) = if let Some(r) = s.strip_prefix("+i") {
            (Phase::I, r)
        } else if let Some(r) = s.strip_prefix("-i") {
            (Phase::MINUS_I, r)
        } else if let Some(r) = s.strip_prefix('+') {
            (Phase::ONE, r)
        } else if let Some(r) = s.strip_prefix('-') {
            (Phase::MINUS_ONE, r)
        } else {
            (Phase::ONE, s)
        };
        let mut p = PauliString::identity(body.chars().count());
        for (j, c) in body.chars().enumerate() {
            match c {
                'I' => {}
                _ => match Axis::from_char(c) {
                    Some(a) => p.set(j, Some(a)),
                    None => return Err(Error::Parse(format!("bad Pauli character {c:?} in {s:?}"))),
                },
            }
        }
        Ok(PhasedPauli::new(phase, p))
    }
}

/// Enumerates all `4^k` strings supported inside `sites` (identity first).
pub fn paulis_on(n: usize, sites: &[usize]) -> Vec<PauliString> {
    let k = sites.len();
    let mut out = Vec::with_capacity(1 << (2 * k));
    for code in 0..(1usize << (2 * k)) {
        let mut p = PauliString::identity(n);
        for (i, &j) in sites.iter().enumerate() {
            let a = (code >> (2 * i)) & 3;
            if a > 0 {
                p.set(j, Some(Axis::from_index(a - 1)));
            }
        }
        out.push(p);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pp(s: &str) -> PhasedPauli {
        s.parse().unwrap()
    }

    fn ps(s: &str) -> PauliString {
        s.parse().unwrap()
    }

    #[test]
    fn x_times_z() {
        assert_eq!(ps("X").multiply(&ps("Z")).unwrap(), pp("-iY"));
    }

    #[test]
    fn half_commutator_examples() {
        assert_eq!(ps("Z").commutator_half(&ps("X")).unwrap(), Some(pp("+iY")));
        assert_eq!(ps("Z").commutator_half(&ps("Z")).unwrap(), None);
        assert_eq!(ps("XI").commutator_half(&ps("IZ")).unwrap(), None);
    }

    #[test]
    fn weights_and_support() {
        assert_eq!(ps("XIZ").weight(), 2);
        assert_eq!(ps("XIZ").support(), vec![0, 2]);
        assert_eq!(ps("III").weight(), 0);
        assert!(ps("III").support().is_empty());
        assert_eq!(ps("YYY").weight(), 3);
    }

    #[test]
    fn dense_z_and_xx() {
        let z = ps("Z").to_dense().unwrap();
        assert_eq!(z[(0, 0)], Complex64::new(1.0, 0.0));
        assert_eq!(z[(1, 1)], Complex64::new(-1.0, 0.0));
        let xx = ps("XX").to_dense().unwrap();
        assert_eq!(&xx * &xx, DMatrix::identity(4, 4));
    }

    #[test]
    fn dense_limit_enforced() {
        let p = PauliString::identity(13);
        assert!(matches!(p.to_dense(), Err(Error::DenseLimit { .. })));
    }

    #[test]
    fn length_mismatch() {
        assert!(ps("X").multiply(&ps("XX")).is_err());
        assert!(ps("X").commutator_half(&ps("XX")).is_err());
    }

    #[test]
    fn text_round_trip() {
        for s in ["+iXYZI", "-iZ", "-XX", "+IIY", "+"] {
            assert_eq!(pp(s).to_string(), s);
        }
        assert_eq!(pp("XZ").to_string(), "+XZ");
        assert!("XQ".parse::<PhasedPauli>().is_err());
    }

    #[test]
    fn wide_strings() {
        let n = 130;
        let a = PauliString::single(n, 127, Axis::X);
        let b = PauliString::single(n, 127, Axis::Z);
        let r = a.multiply(&b).unwrap();
        assert_eq!(r.phase, Phase::MINUS_I);
        assert_eq!(r.pauli.axis(127), Some(Axis::Y));
        assert_eq!(r.pauli.weight(), 1);
        assert!(!a.anticommutes(&PauliString::single(n, 3, Axis::Z)).unwrap());
    }

    #[test]
    fn index_round_trip() {
        for idx in 0..64u64 {
            assert_eq!(PauliString::from_index(3, idx).index(), idx);
        }
    }
}
