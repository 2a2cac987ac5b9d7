//! Walsh systems, the fast Walsh–Hadamard transform, prefix-sum extrema and
//! Walsh expansions of discrete threshold signs.
//!
//! Indexing convention: `ψ_j(s) = (-1)^{popcount(j & s)}`, i.e. bit `b` of
//! `j` pairs with bit `b` of `s` (least-significant bit first). Other
//! Hadamard orderings (sequency, Paley) are permutations of this one.
//!
//! Transform outputs are unnormalized inner products `Σ_s A(s) ψ_j(s)`; any
//! `1/n` factor is applied by the caller.

use std::ops::{Add, Sub};

use num_rational::Ratio;

use crate::error::{Error, Result};

pub fn is_power_of_two(n: usize) -> bool {
    n != 0 && n & (n - 1) == 0
}

fn check_len(n: usize) -> Result<()> {
    if is_power_of_two(n) {
        Ok(())
    } else {
        Err(Error::NotPowerOfTwo(n))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SystemKind {
    Walsh,
}

/// A ±1-valued orthogonal system of power-of-two length.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OrthoSystem {
    length: usize,
    kind: SystemKind,
}

impl OrthoSystem {
    pub fn walsh(length: usize) -> Result<Self> {
        check_len(length)?;
        Ok(OrthoSystem { length, kind: SystemKind::Walsh })
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn kind(&self) -> SystemKind {
        self.kind
    }

    #[inline]
    pub fn sign(&self, j: usize, s: usize) -> i8 {
        debug_assert!(j < self.length && s < self.length);
        match self.kind {
            SystemKind::Walsh => walsh_sign_unchecked(j, s),
        }
    }

    /// Coefficients `⟨A, ψ_j⟩` for all `j`.
    pub fn transform<T>(&self, values: &mut [T]) -> Result<()>
    where
        T: Copy + Add<Output = T> + Sub<Output = T>,
    {
        if values.len() != self.length {
            return Err(Error::LengthMismatch { expected: self.length, got: values.len() });
        }
        match self.kind {
            SystemKind::Walsh => fwht_in_place(values),
        }
    }
}

#[inline]
pub(crate) fn walsh_sign_unchecked(j: usize, s: usize) -> i8 {
    if (j & s).count_ones() & 1 == 0 {
        1
    } else {
        -1
    }
}

/// `ψ_j(s)` for the length-`n` Walsh system.
pub fn walsh_sign(j: usize, s: usize, n: usize) -> Result<i8> {
    check_len(n)?;
    if j >= n {
        return Err(Error::IndexOutOfRange { index: j, len: n });
    }
    if s >= n {
        return Err(Error::IndexOutOfRange { index: s, len: n });
    }
    Ok(walsh_sign_unchecked(j, s))
}

/// Number of trailing zero bits of `j` (`j ≥ 1`).
pub fn trailing_zeros(j: usize) -> u32 {
    j.trailing_zeros()
}

/// Largest absolute prefix sum of `ψ_j` over `r ∈ {0..n}`, together with
/// `tz(j)`. The prefix bound says the maximum never exceeds `2^tz(j)`.
pub fn prefix_extremum(j: usize, n: usize) -> Result<(u32, u64)> {
    check_len(n)?;
    if j == 0 {
        return Err(Error::InvalidParameter("prefix extremum is only defined for j >= 1".into()));
    }
    if j >= n {
        return Err(Error::IndexOutOfRange { index: j, len: n });
    }
    let mut sum: i64 = 0;
    let mut max_abs: u64 = 0;
    for s in 0..n {
        sum += walsh_sign_unchecked(j, s) as i64;
        max_abs = max_abs.max(sum.unsigned_abs());
    }
    Ok((trailing_zeros(j), max_abs))
}

/// In-place fast Walsh–Hadamard transform (natural/LSB ordering).
///
/// Works for any ring-like scalar; integer inputs give exact outputs.
pub fn fwht_in_place<T>(values: &mut [T]) -> Result<()>
where
    T: Copy + Add<Output = T> + Sub<Output = T>,
{
    let n = values.len();
    check_len(n)?;
    let mut h = 1;
    while h < n {
        for chunk in values.chunks_exact_mut(2 * h) {
            let (lo, hi) = chunk.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        h *= 2;
    }
    Ok(())
}

/// Transform of a real vector, returned as a new vector.
pub fn fwht(values: &[f64]) -> Result<Vec<f64>> {
    let mut out = values.to_vec();
    fwht_in_place(&mut out)?;
    Ok(out)
}

/// Walsh coefficients of the threshold sign `f_r(u) = +1 (u < r), -1 (u ≥ r)`.
///
/// Coefficients are `α_ℓ(r) = (1/m) Σ_u f_r(u) ψ_ℓ(u)`, stored exactly as
/// integer numerators over `m`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ThresholdExpansion {
    m: usize,
    r: usize,
    numerators: Vec<i64>,
}

impl ThresholdExpansion {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn coefficient(&self, l: usize) -> Ratio<i64> {
        Ratio::new(self.numerators[l], self.m as i64)
    }

    pub fn coefficients(&self) -> Vec<Ratio<i64>> {
        (0..self.m).map(|l| self.coefficient(l)).collect()
    }

    pub fn coefficients_f64(&self) -> Vec<f64> {
        self.numerators.iter().map(|&c| c as f64 / self.m as f64).collect()
    }

    /// Integer numerators over `m`.
    pub fn numerators(&self) -> &[i64] {
        &self.numerators
    }

    /// `f_r(u)` as recovered from the expansion, times `m`.
    pub fn reconstruct_scaled(&self) -> Vec<i64> {
        let mut v = self.numerators.clone();
        fwht_in_place(&mut v).expect("power-of-two length");
        v
    }

    /// Whether `Σ_ℓ α_ℓ ψ_ℓ(u)` equals `f_r(u)` for every `u`, exactly.
    pub fn reconstructs_exactly(&self) -> bool {
        let m = self.m as i64;
        self.reconstruct_scaled()
            .iter()
            .enumerate()
            .all(|(u, &val)| val == if u < self.r { m } else { -m })
    }
}

pub fn threshold_expansion(m: usize, r: usize) -> Result<ThresholdExpansion> {
    check_len(m)?;
    if r > m {
        return Err(Error::InvalidParameter(format!("threshold rank {r} exceeds m = {m}")));
    }
    let mut numerators: Vec<i64> = (0..m).map(|u| if u < r { 1 } else { -1 }).collect();
    fwht_in_place(&mut numerators)?;
    Ok(ThresholdExpansion { m, r, numerators })
}

/// `Σ_ℓ max_r |α_ℓ(r)|` over all ranks `r ∈ {0..m}`, exactly.
pub fn threshold_l1_mass(m: usize) -> Result<Ratio<i64>> {
    check_len(m)?;
    let mut max_abs = vec![0i64; m];
    for r in 0..=m {
        let e = threshold_expansion(m, r)?;
        for (slot, &c) in max_abs.iter_mut().zip(e.numerators()) {
            *slot = (*slot).max(c.abs());
        }
    }
    Ok(Ratio::new(max_abs.iter().sum(), m as i64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_transform(values: &[f64]) -> Vec<f64> {
        let n = values.len();
        (0..n)
            .map(|j| {
                (0..n)
                    .map(|s| {
                        let bits = (0..usize::BITS).filter(|b| (j >> b) & 1 == 1 && (s >> b) & 1 == 1).count();
                        if bits % 2 == 0 { values[s] } else { -values[s] }
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn walsh_sign_examples() {
        assert_eq!(walsh_sign(0, 5, 8).unwrap(), 1);
        assert_eq!(walsh_sign(1, 1, 4).unwrap(), -1);
        assert_eq!(walsh_sign(3, 3, 4).unwrap(), 1);
    }

    #[test]
    fn walsh_sign_errors() {
        assert!(matches!(walsh_sign(4, 0, 4), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(walsh_sign(0, 9, 8), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(walsh_sign(0, 0, 6), Err(Error::NotPowerOfTwo(6))));
    }

    #[test]
    fn prefix_extremum_examples() {
        assert_eq!(prefix_extremum(1, 8).unwrap(), (0, 1));
        assert_eq!(prefix_extremum(2, 4).unwrap(), (1, 2));
        assert_eq!(prefix_extremum(4, 8).unwrap(), (2, 4));
        assert!(prefix_extremum(0, 8).is_err());
    }

    #[test]
    fn fwht_examples() {
        assert_eq!(fwht(&[1.0, 0.0, 0.0, 0.0]).unwrap(), vec![1.0; 4]);
        let psi2: Vec<f64> = (0..4).map(|s| walsh_sign(2, s, 4).unwrap() as f64).collect();
        assert_eq!(fwht(&psi2).unwrap(), vec![0.0, 0.0, 4.0, 0.0]);
        assert!(matches!(fwht(&[1.0; 3]), Err(Error::NotPowerOfTwo(3))));
    }

    #[test]
    fn threshold_examples() {
        let one = Ratio::from_integer(1);
        let zero = Ratio::from_integer(0);
        assert_eq!(threshold_expansion(4, 0).unwrap().coefficients(), vec![-one, zero, zero, zero]);
        assert_eq!(threshold_expansion(4, 4).unwrap().coefficients(), vec![one, zero, zero, zero]);
        assert_eq!(threshold_expansion(4, 2).unwrap().coefficients(), vec![zero, zero, one, zero]);
        assert!(threshold_expansion(4, 5).is_err());
        assert!(threshold_expansion(6, 2).is_err());
    }

    #[test]
    fn threshold_mass_bound_small() {
        for logm in 0..=8 {
            let m = 1usize << logm;
            let mass = threshold_l1_mass(m).unwrap();
            assert!(mass <= Ratio::from_integer(1 + logm as i64), "m={m} mass={mass}");
        }
    }

    #[test]
    fn system_transform_checks_length() {
        let sys = OrthoSystem::walsh(8).unwrap();
        let mut v = vec![0i64; 4];
        assert!(sys.transform(&mut v).is_err());
        assert!(OrthoSystem::walsh(12).is_err());
    }

    proptest! {
        #[test]
        fn fwht_matches_brute_force(logn in 0u32..=8, seed in any::<u64>()) {
            let n = 1usize << logn;
            let mut state = seed;
            let values: Vec<f64> = (0..n).map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            }).collect();
            let fast = fwht(&values).unwrap();
            let slow = brute_transform(&values);
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }

        #[test]
        fn fwht_is_self_inverse_up_to_n(values in prop::collection::vec(-1000i64..1000, 16)) {
            let mut v = values.clone();
            fwht_in_place(&mut v).unwrap();
            fwht_in_place(&mut v).unwrap();
            prop_assert_eq!(v, values.iter().map(|x| x * 16).collect::<Vec<_>>());
        }
    }
}
