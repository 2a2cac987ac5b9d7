//! Group functions and the families used by the hard instances.
//!
//! Every group in this crate takes integer values: binary groups return 0 or
//! 1 and signed differences return -1, 0 or 1. Evaluation is pure, so
//! families are shared freely across replicates.

use std::fmt;

use crate::environments::Context;
use crate::error::{Error, Result};
use crate::orthogonal::{is_power_of_two, walsh_sign_unchecked};
use crate::rational::RationalValue;

/// Which of the three prediction-dependent threshold groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Threshold {
    /// `1[v ≥ x + η]`
    Overshoot,
    /// `1[v ≤ x − η]`
    Undershoot,
    /// `1[|v − x| < η]`
    Honest,
}

impl Threshold {
    pub fn label(&self) -> &'static str {
        match self {
            Threshold::Overshoot => "g1",
            Threshold::Undershoot => "g2",
            Threshold::Honest => "g3",
        }
    }
}

/// Time partition for the blockwise Hadamard groups.
///
/// `block_len` is the largest power of two with `blocks * block_len ≤ T`;
/// block `a` (1-based) covers times `(a-1)L+1 ..= aL`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BlockLayout {
    horizon: usize,
    blocks: usize,
    block_len: usize,
}

impl BlockLayout {
    pub fn new(horizon: usize, blocks: usize) -> Result<Self> {
        if blocks == 0 {
            return Err(Error::InvalidParameter("block count K must be at least 1".into()));
        }
        if 2 * blocks > horizon {
            return Err(Error::InvalidParameter(format!(
                "K = {blocks} too large for T = {horizon}: blocks of length >= 2 need K <= T/2"
            )));
        }
        let mut block_len = 1usize;
        while blocks * block_len * 2 <= horizon {
            block_len *= 2;
        }
        Ok(BlockLayout { horizon, blocks, block_len })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    /// `T' = K L`.
    pub fn covered(&self) -> usize {
        self.blocks * self.block_len
    }

    /// Block index `a` (1-based) and local offset `s ∈ 0..L` of time `t` (1-based).
    #[inline]
    pub fn locate(&self, t: u64) -> Option<(usize, usize)> {
        if t == 0 || t as usize > self.covered() {
            return None;
        }
        let z = t as usize - 1;
        Some((z / self.block_len + 1, z % self.block_len))
    }
}

/// `K = max{2, ⌈log2(T+1)⌉}`.
pub fn default_block_count(horizon: usize) -> usize {
    let bits = usize::BITS - horizon.leading_zeros();
    // ⌈log2(T+1)⌉ = bit length of T
    (bits as usize).max(2)
}

/// `K = ⌈(log2(T+1))^{10}⌉`; exceeds `T` at every practical horizon.
pub fn asymptotic_block_count(horizon: usize) -> usize {
    let l = ((horizon + 1) as f64).log2();
    l.powi(10).ceil() as usize
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum GroupFunction {
    /// `g_all ≡ 1`.
    Constant,
    PredThreshold { which: Threshold, eta: RationalValue },
    /// `(1 ± w_ℓ)/2` with `w_ℓ(x) = ψ_ℓ(idx(x) − 1)` on the length-`m` Walsh system.
    WalshHalf { m: usize, ell: usize, positive: bool },
    /// `1[t ∈ J_a] (1 ± ψ_j(s))/2` with `s` the offset of `t` inside block `a`.
    BlockHadamardHalf { layout: BlockLayout, a: usize, j: usize, positive: bool },
    /// Coordinate `x_r` of a bit context; `r = 0` is the constant group.
    Bit { r: u8 },
    /// `1[lo ≤ x < hi]` on the context mean.
    ContextInterval { lo: RationalValue, hi: RationalValue },
    /// `plus − minus`, valued in `[−1, 1]`.
    SignedDiff(Box<GroupFunction>, Box<GroupFunction>),
}

/// Index of `x` on the `m`-point grid `1/4 + (i-1)/(2(m-1))`, with every
/// off-grid value mapped to 1.
pub fn grid_index(x: RationalValue, m: usize) -> usize {
    let scaled = (x - RationalValue::new(1, 4).expect("const"))
        * RationalValue::from_integer(2 * (m as i64 - 1));
    if scaled.denom() == 1 && scaled.numer() >= 0 && (scaled.numer() as usize) < m {
        scaled.numer() as usize + 1
    } else {
        1
    }
}

impl GroupFunction {
    pub fn threshold(which: Threshold, eta: RationalValue) -> Result<Self> {
        if eta.numer() <= 0 {
            return Err(Error::InvalidParameter(format!("threshold width eta = {eta} must be positive")));
        }
        Ok(GroupFunction::PredThreshold { which, eta })
    }

    /// Canonical id, stable across runs.
    pub fn id(&self) -> String {
        match self {
            GroupFunction::Constant => "all".to_string(),
            GroupFunction::PredThreshold { which, eta } => format!("{}@eta={eta}", which.label()),
            GroupFunction::WalshHalf { ell, positive, .. } => {
                format!("wal{}/{ell}", if *positive { '+' } else { '-' })
            }
            GroupFunction::BlockHadamardHalf { a, j, positive, .. } => {
                format!("had{}/{a}/{j}", if *positive { '+' } else { '-' })
            }
            GroupFunction::Bit { r } => format!("bit/{r}"),
            GroupFunction::ContextInterval { lo, hi } => format!("ctx[{lo},{hi})"),
            GroupFunction::SignedDiff(p, m) => format!("diff({},{})", p.id(), m.id()),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            GroupFunction::Constant => "constant",
            GroupFunction::PredThreshold { .. } => "pred_threshold",
            GroupFunction::WalshHalf { .. } => "walsh_half",
            GroupFunction::BlockHadamardHalf { .. } => "block_hadamard_half",
            GroupFunction::Bit { .. } => "bit",
            GroupFunction::ContextInterval { .. } => "context_interval",
            GroupFunction::SignedDiff(..) => "signed_diff",
        }
    }

    /// Free-form `key=value;...` parameter string for manifests.
    pub fn params(&self) -> String {
        match self {
            GroupFunction::Constant => String::new(),
            GroupFunction::PredThreshold { which, eta } => format!("which={};eta={eta}", which.label()),
            GroupFunction::WalshHalf { m, ell, positive } => format!("m={m};ell={ell};sign={}", sign_str(*positive)),
            GroupFunction::BlockHadamardHalf { layout, a, j, positive } => format!(
                "T={};K={};L={};a={a};j={j};sign={}",
                layout.horizon,
                layout.blocks,
                layout.block_len,
                sign_str(*positive)
            ),
            GroupFunction::Bit { r } => format!("r={r}"),
            GroupFunction::ContextInterval { lo, hi } => format!("lo={lo};hi={hi}"),
            GroupFunction::SignedDiff(p, m) => format!("plus={};minus={}", p.id(), m.id()),
        }
    }

    pub fn is_binary(&self) -> bool {
        !matches!(self, GroupFunction::SignedDiff(..))
    }

    pub fn is_prediction_independent(&self) -> bool {
        match self {
            GroupFunction::PredThreshold { .. } => false,
            GroupFunction::SignedDiff(p, m) => p.is_prediction_independent() && m.is_prediction_independent(),
            _ => true,
        }
    }

    /// `g(context, v)`.
    #[inline]
    pub fn eval(&self, ctx: &Context, v: RationalValue) -> i8 {
        match self {
            GroupFunction::Constant => 1,
            GroupFunction::PredThreshold { which, eta } => {
                let Some(x) = ctx.mean() else { return 0 };
                let hit = match which {
                    Threshold::Overshoot => v >= x + *eta,
                    Threshold::Undershoot => v <= x - *eta,
                    Threshold::Honest => (v - x).abs() < *eta,
                };
                hit as i8
            }
            GroupFunction::WalshHalf { m, ell, positive } => {
                let idx = ctx.mean().map_or(1, |x| grid_index(x, *m));
                half(walsh_sign_unchecked(*ell, idx - 1), *positive)
            }
            GroupFunction::BlockHadamardHalf { layout, a, j, positive } => {
                match ctx.time().and_then(|t| layout.locate(t)) {
                    Some((block, s)) if block == *a => half(walsh_sign_unchecked(*j, s), *positive),
                    _ => 0,
                }
            }
            GroupFunction::Bit { r: 0 } => 1,
            GroupFunction::Bit { r } => ctx.bits().is_some_and(|b| *r <= b.k() && b.bit(*r)) as i8,
            GroupFunction::ContextInterval { lo, hi } => {
                ctx.mean().is_some_and(|x| *lo <= x && x < *hi) as i8
            }
            GroupFunction::SignedDiff(p, m) => p.eval(ctx, v) - m.eval(ctx, v),
        }
    }
}

#[inline]
fn half(sign: i8, positive: bool) -> i8 {
    if (sign == 1) == positive {
        1
    } else {
        0
    }
}

fn sign_str(positive: bool) -> &'static str {
    if positive {
        "+"
    } else {
        "-"
    }
}

impl fmt::Display for GroupFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

/// Pointwise difference `plus − minus`.
pub fn signed_diff(plus: GroupFunction, minus: GroupFunction) -> Result<GroupFunction> {
    if !plus.is_binary() || !minus.is_binary() {
        return Err(Error::InvalidParameter("signed difference needs [0,1]-valued inputs".into()));
    }
    Ok(GroupFunction::SignedDiff(Box::new(plus), Box::new(minus)))
}

/// An immutable family of group functions.
///
/// `walsh_m` and `layout` record whether the family contains the full Walsh
/// or block-Hadamard subfamilies, which calibration evaluates in bulk with a
/// transform instead of group by group.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupFamily {
    members: Vec<GroupFunction>,
    walsh_m: Option<usize>,
    layout: Option<BlockLayout>,
}

impl GroupFamily {
    pub fn from_members(members: Vec<GroupFunction>) -> Self {
        GroupFamily { members, walsh_m: None, layout: None }
    }

    pub fn members(&self) -> &[GroupFunction] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn walsh_m(&self) -> Option<usize> {
        self.walsh_m
    }

    pub fn layout(&self) -> Option<BlockLayout> {
        self.layout
    }

    pub fn ids(&self) -> Vec<String> {
        self.members.iter().map(GroupFunction::id).collect()
    }

    pub fn all_prediction_independent_binary(&self) -> bool {
        self.members.iter().all(|g| g.is_binary() && g.is_prediction_independent())
    }

    /// Concatenate two families.
    pub fn union(mut self, other: GroupFamily) -> Result<Self> {
        if self.walsh_m.is_some() && other.walsh_m.is_some() || self.layout.is_some() && other.layout.is_some() {
            return Err(Error::InvalidParameter("cannot merge two Walsh or two block subfamilies".into()));
        }
        self.members.extend(other.members);
        self.walsh_m = self.walsh_m.or(other.walsh_m);
        self.layout = self.layout.or(other.layout);
        Ok(self)
    }
}

/// `{g1, g2, g3}` at width `eta`.
pub fn threshold_family(eta: RationalValue) -> Result<GroupFamily> {
    Ok(GroupFamily::from_members(vec![
        GroupFunction::threshold(Threshold::Overshoot, eta)?,
        GroupFunction::threshold(Threshold::Undershoot, eta)?,
        GroupFunction::threshold(Threshold::Honest, eta)?,
    ]))
}

/// `{g1, g2, g3}` with the neighbourhood-disjointness check `η ≤ 1/(2m)`.
pub fn threshold_family_checked(eta: RationalValue, m: usize) -> Result<GroupFamily> {
    let limit = RationalValue::new(1, 2 * m as i64)?;
    if eta > limit {
        return Err(Error::InvalidParameter(format!(
            "eta = {eta} exceeds 1/(2m) = {limit}; context neighbourhoods would overlap"
        )));
    }
    threshold_family(eta)
}

/// Default threshold width `η = δ √(m/T)` with `δ = min{1/2, √(T/m)/(2m)}`,
/// floored onto the dyadic grid `2^-24` so that predictions stay exact.
pub fn default_eta(horizon: usize, m: usize, delta: Option<f64>) -> Result<RationalValue> {
    if horizon == 0 || m == 0 {
        return Err(Error::InvalidParameter("eta needs T >= 1 and m >= 1".into()));
    }
    let (t, mf) = (horizon as f64, m as f64);
    let delta = delta.unwrap_or_else(|| 0.5f64.min((t / mf).sqrt() / (2.0 * mf)));
    let eta_real = delta * (mf / t).sqrt();
    let mut eta = RationalValue::floor_from_f64(eta_real, 1 << 24);
    // floating point may land a hair above 1/(2m) when δ is at its cap
    let cap = RationalValue::new(1, 2 * m as i64)?;
    if delta <= 0.5 && eta > cap {
        eta = cap;
    }
    if eta.numer() <= 0 {
        return Err(Error::InvalidParameter(format!("eta underflows for T = {horizon}, m = {m}")));
    }
    Ok(eta)
}

/// `{g_all} ∪ {g^{Wal,±}_ℓ : ℓ = 1..m−1}`.
pub fn build_walsh_family(m: usize) -> Result<GroupFamily> {
    if m < 2 || !is_power_of_two(m) {
        return Err(Error::InvalidParameter(format!("Walsh family needs a power of two m >= 2, got {m}")));
    }
    let mut members = Vec::with_capacity(2 * (m - 1) + 1);
    members.push(GroupFunction::Constant);
    for ell in 1..m {
        members.push(GroupFunction::WalshHalf { m, ell, positive: true });
        members.push(GroupFunction::WalshHalf { m, ell, positive: false });
    }
    Ok(GroupFamily { members, walsh_m: Some(m), layout: None })
}

/// All `2 K L` blockwise Hadamard half-groups.
pub fn build_block_hadamard_family(horizon: usize, blocks: usize) -> Result<(BlockLayout, GroupFamily)> {
    let layout = BlockLayout::new(horizon, blocks)?;
    let mut members = Vec::with_capacity(2 * layout.covered());
    for a in 1..=layout.blocks {
        for j in 0..layout.block_len {
            members.push(GroupFunction::BlockHadamardHalf { layout, a, j, positive: true });
            members.push(GroupFunction::BlockHadamardHalf { layout, a, j, positive: false });
        }
    }
    Ok((layout, GroupFamily { members, walsh_m: None, layout: Some(layout) }))
}

/// Constant, Walsh and block-Hadamard groups together.
pub fn build_prediction_independent_family(horizon: usize, m: usize, blocks: usize) -> Result<GroupFamily> {
    let (_, block) = build_block_hadamard_family(horizon, blocks)?;
    build_walsh_family(m)?.union(block)
}

/// `{g_0, …, g_k}` with `g_0 ≡ 1` and `g_r(x) = x_r`.
pub fn build_bit_family(k: u8) -> Result<GroupFamily> {
    if k == 0 {
        return Err(Error::InvalidParameter("bit family needs k >= 1".into()));
    }
    Ok(GroupFamily::from_members((0..=k).map(|r| GroupFunction::Bit { r }).collect()))
}

/// Disjoint context intervals `[c_i, c_{i+1})` from ascending cut points.
pub fn context_interval_family(cuts: &[RationalValue]) -> Result<GroupFamily> {
    if cuts.len() < 2 || cuts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("interval cuts must be strictly increasing, at least two".into()));
    }
    Ok(GroupFamily::from_members(
        cuts.windows(2).map(|w| GroupFunction::ContextInterval { lo: w[0], hi: w[1] }).collect(),
    ))
}
