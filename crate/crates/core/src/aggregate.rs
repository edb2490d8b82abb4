//! Aggregate operators over multisets of rationals.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::NumericDomain;
use crate::value::{format_rational, int, rat, Rational};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AggOp {
    Sum,
    /// Counts embeddings; behaves as `SUM` over the constant 1.
    Count,
    Max,
    Min,
    Avg,
    Product,
    CountDistinct,
}

impl AggOp {
    pub const ALL: [AggOp; 7] = [
        AggOp::Sum,
        AggOp::Count,
        AggOp::Max,
        AggOp::Min,
        AggOp::Avg,
        AggOp::Product,
        AggOp::CountDistinct,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AggOp::Sum => "SUM",
            AggOp::Count => "COUNT",
            AggOp::Max => "MAX",
            AggOp::Min => "MIN",
            AggOp::Avg => "AVG",
            AggOp::Product => "PRODUCT",
            AggOp::CountDistinct => "COUNT_DISTINCT",
        }
    }

    /// The conventional value on the empty multiset, when there is one.
    /// `MAX`, `MIN` and `AVG` have none.
    pub fn empty_value(self) -> Option<Rational> {
        match self {
            AggOp::Sum | AggOp::Count | AggOp::CountDistinct => Some(Rational::zero()),
            AggOp::Product => Some(Rational::one()),
            AggOp::Max | AggOp::Min | AggOp::Avg => None,
        }
    }

    /// Plain `COUNT` is not associative; `COUNT(*)` queries are evaluated as
    /// `SUM` over ones, see [`AggOp::as_sum_of_ones`].
    pub fn is_associative(self) -> bool {
        matches!(self, AggOp::Sum | AggOp::Max | AggOp::Min | AggOp::Product)
    }

    /// The operator actually folded over the aggregated terms.
    pub fn as_sum_of_ones(self) -> AggOp {
        match self {
            AggOp::Count => AggOp::Sum,
            other => other,
        }
    }

    /// Monotonicity depends on the numeric domain: `SUM` stops being
    /// monotone once a single negative number is allowed. `COUNT` only ever
    /// adds ones, so it stays monotone.
    pub fn is_monotone(self, domain: NumericDomain) -> bool {
        match self {
            AggOp::Count | AggOp::Max => true,
            AggOp::Sum => domain == NumericDomain::NonNegative,
            AggOp::Min | AggOp::Avg | AggOp::Product | AggOp::CountDistinct => false,
        }
    }

    /// Applies the operator to a multiset.
    pub fn apply(self, values: &[Rational]) -> AggValue {
        if values.is_empty() {
            return AggValue::Empty(self);
        }
        let v = match self {
            AggOp::Sum => values.iter().sum(),
            AggOp::Count => int(values.len() as i64),
            AggOp::Max => values.iter().max().cloned().expect("non-empty"),
            AggOp::Min => values.iter().min().cloned().expect("non-empty"),
            AggOp::Avg => values.iter().sum::<Rational>() / int(values.len() as i64),
            AggOp::Product => values.iter().product(),
            AggOp::CountDistinct => int(values.iter().collect::<BTreeSet<_>>().len() as i64),
        };
        AggValue::Value(v)
    }

    /// The dual operator: negates results on non-empty multisets.
    pub fn apply_dual(self, values: &[Rational]) -> AggValue {
        match self.apply(values) {
            AggValue::Value(v) => AggValue::Value(-v),
            empty => empty,
        }
    }

    /// A descending chain `(s, t)`: `agg({s, i·t})` strictly decreases in `i`.
    pub fn descending_chain(self, domain: NumericDomain) -> Option<DescendingChain> {
        match (self, domain) {
            (AggOp::Avg, _) => Some(DescendingChain {
                s: int(1),
                t: int(0),
                bound: Some(ChainBound::Offset(2)),
            }),
            (AggOp::Product, _) => Some(DescendingChain {
                s: rat(1, 2),
                t: rat(1, 2),
                bound: Some(ChainBound::PowerOfTwo),
            }),
            (AggOp::Sum, NumericDomain::Unconstrained) => Some(DescendingChain {
                s: int(0),
                t: int(-1),
                bound: Some(ChainBound::Offset(1)),
            }),
            _ => None,
        }
    }
}

impl fmt::Display for AggOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AggOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AggOp::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| Error::Query(format!("unknown aggregate `{s}`")))
    }
}

/// Result of applying an operator: a rational, or the operator's value on
/// the empty multiset kept as a tagged marker.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AggValue {
    Value(Rational),
    Empty(AggOp),
}

impl AggValue {
    /// The rational value, substituting the conventional empty value.
    pub fn to_rational(&self) -> Result<Rational> {
        match self {
            AggValue::Value(v) => Ok(v.clone()),
            AggValue::Empty(op) => op.empty_value().ok_or(Error::UndefinedEmpty(*op)),
        }
    }

    pub fn value(&self) -> Option<&Rational> {
        match self {
            AggValue::Value(v) => Some(v),
            AggValue::Empty(_) => None,
        }
    }
}

impl fmt::Display for AggValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AggValue::Value(v) => f.write_str(&format_rational(v)),
            AggValue::Empty(op) => write!(f, "{op}(∅)"),
        }
    }
}

/// How the chain's `m_i` grows with `i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChainBound {
    /// `m_i = i + k`
    Offset(i64),
    /// `m_i = 2^(i+1)`
    PowerOfTwo,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DescendingChain {
    pub s: Rational,
    pub t: Rational,
    /// Present when the chain is bounded.
    pub bound: Option<ChainBound>,
}

impl DescendingChain {
    pub fn m(&self, i: usize) -> Option<Rational> {
        self.bound.map(|b| match b {
            ChainBound::Offset(k) => int(i as i64 + k),
            ChainBound::PowerOfTwo => int(1i64 << (i + 1).min(62)),
        })
    }

    /// The multiset `{s, i·t}`.
    pub fn multiset(&self, i: usize) -> Vec<Rational> {
        std::iter::once(self.s.clone())
            .chain(std::iter::repeat(self.t.clone()).take(i))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[i64]) -> Vec<Rational> {
        xs.iter().map(|&x| int(x)).collect()
    }

    #[test]
    fn basic_operators() {
        let xs = v(&[5, 6, 7, 8, 5]);
        assert_eq!(AggOp::Sum.apply(&xs), AggValue::Value(int(31)));
        assert_eq!(AggOp::Count.apply(&xs), AggValue::Value(int(5)));
        assert_eq!(AggOp::Max.apply(&xs), AggValue::Value(int(8)));
        assert_eq!(AggOp::Min.apply(&xs), AggValue::Value(int(5)));
        assert_eq!(AggOp::Avg.apply(&xs), AggValue::Value(rat(31, 5)));
        assert_eq!(AggOp::Product.apply(&xs), AggValue::Value(int(8400)));
        assert_eq!(AggOp::CountDistinct.apply(&xs), AggValue::Value(int(4)));
    }

    #[test]
    fn empty_multiset() {
        assert_eq!(AggOp::Sum.apply(&[]).to_rational().unwrap(), int(0));
        assert_eq!(AggOp::Product.apply(&[]).to_rational().unwrap(), int(1));
        assert!(matches!(
            AggOp::Max.apply(&[]).to_rational(),
            Err(Error::UndefinedEmpty(AggOp::Max))
        ));
        assert_eq!(AggOp::Min.apply_dual(&[]), AggValue::Empty(AggOp::Min));
    }

    #[test]
    fn count_is_not_associative_as_plain_count() {
        // COUNT({5,6,7,8}) = 4 but COUNT({COUNT({5,6,7}), 8}) = 2
        let whole = AggOp::Count.apply(&v(&[5, 6, 7, 8]));
        let inner = AggOp::Count.apply(&v(&[5, 6, 7])).to_rational().unwrap();
        let nested = AggOp::Count.apply(&[inner, int(8)]);
        assert_ne!(whole, nested);
    }

    #[test]
    fn property_flags() {
        use NumericDomain::*;
        for op in [AggOp::Sum, AggOp::Count, AggOp::Max] {
            assert!(op.is_monotone(NonNegative) && op.as_sum_of_ones().is_associative());
        }
        assert!(!AggOp::Count.is_associative());
        assert!(AggOp::Min.is_associative() && !AggOp::Min.is_monotone(NonNegative));
        assert!(!AggOp::Avg.is_associative() && !AggOp::Avg.is_monotone(NonNegative));
        assert!(!AggOp::CountDistinct.is_associative());
        assert!(AggOp::Product.is_associative() && !AggOp::Product.is_monotone(NonNegative));
        assert!(!AggOp::Sum.is_monotone(Unconstrained));
        assert!(AggOp::Count.is_monotone(Unconstrained));
    }

    #[test]
    fn descending_chains_descend() {
        for (op, dom) in [
            (AggOp::Avg, NumericDomain::NonNegative),
            (AggOp::Product, NumericDomain::NonNegative),
            (AggOp::Sum, NumericDomain::Unconstrained),
        ] {
            let chain = op.descending_chain(dom).unwrap();
            for i in 0..8 {
                let a = op.apply(&chain.multiset(i)).to_rational().unwrap();
                let b = op.apply(&chain.multiset(i + 1)).to_rational().unwrap();
                assert!(a > b, "{op} at {i}");
            }
        }
        assert!(AggOp::Sum.descending_chain(NumericDomain::NonNegative).is_none());
    }

    #[test]
    fn chain_bounds_hold() {
        // agg({s, k'·t}) < agg({j·m_i, s, k·t}) for j > 0, k' <= k <= i
        for (op, dom) in [
            (AggOp::Avg, NumericDomain::NonNegative),
            (AggOp::Product, NumericDomain::NonNegative),
            (AggOp::Sum, NumericDomain::Unconstrained),
        ] {
            let chain = op.descending_chain(dom).unwrap();
            for i in 0..5 {
                let m = chain.m(i).unwrap();
                for j in 1..4 {
                    for k in 0..=i {
                        for kp in 0..=k {
                            let lhs = op.apply(&chain.multiset(kp)).to_rational().unwrap();
                            let mut bag = chain.multiset(k);
                            bag.extend(std::iter::repeat(m.clone()).take(j));
                            let rhs = op.apply(&bag).to_rational().unwrap();
                            assert!(lhs < rhs, "{op} i={i} j={j} k={k} k'={kp}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn dual_chains_for_lub() {
        // dual AVG over {0, i·1}, dual SUM over {1, i·1}, dual PRODUCT over {2, i·2}
        let cases = [(AggOp::Avg, 0, 1), (AggOp::Sum, 1, 1), (AggOp::Product, 2, 2)];
        for (op, s, t) in cases {
            let bag = |i: usize| {
                let mut b = v(&[s]);
                b.extend(std::iter::repeat(int(t)).take(i));
                b
            };
            for i in 0..6 {
                let a = op.apply_dual(&bag(i)).to_rational().unwrap();
                let b = op.apply_dual(&bag(i + 1)).to_rational().unwrap();
                assert!(a > b, "dual {op} at {i}");
            }
        }
    }

    #[test]
    fn names_round_trip() {
        for op in AggOp::ALL {
            assert_eq!(op.name().parse::<AggOp>().unwrap(), op);
        }
        assert!("MEDIAN".parse::<AggOp>().is_err());
    }
}
