//! Financial system data model and feasibility checks for payment vectors.

use std::ops::Deref;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Allowed deviation of a row sum of `pi` from 1 on input.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Default tolerance for the limited liability and absolute priority checks.
pub const DEFAULT_FEASIBILITY_TOL: f64 = 1e-9;

/// Node labels carried by these errors are 1-based.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("row {node} of pi sums to {sum}, expected 1")]
    RowSum { node: usize, sum: f64 },
    #[error("negative entry {value} in {field} at {location}")]
    NegativeEntry {
        field: &'static str,
        location: String,
        value: f64,
    },
    #[error("nominal obligation of node {node} is {value}, must be strictly positive")]
    NonPositiveObligation { node: usize, value: f64 },
    #[error("non-finite value in {field} at {location}")]
    NonFinite {
        field: &'static str,
        location: String,
    },
    #[error("payment {value} of node {node} lies outside [0, {bound}]")]
    PaymentOutOfBounds { node: usize, value: f64, bound: f64 },
    #[error("malformed instance: {0}")]
    Parse(String),
}

/// Unvalidated instance data, exactly as it appears in the JSON instance format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSystem {
    pub n: usize,
    pub pi: Vec<Vec<f64>>,
    pub p_bar: Vec<f64>,
    pub e: Vec<f64>,
}

/// A validated financial system `(I, pi, p_bar, e)`.
///
/// `pi` is stored row-major. Every row sums to exactly `1.0` when summed
/// left to right, every entry is nonnegative, `p_bar` is strictly positive
/// and `e` is nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct FinancialSystem {
    n: usize,
    pi: Vec<f64>,
    p_bar: Vec<f64>,
    e: Vec<f64>,
}

impl FinancialSystem {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn pi(&self, i: usize, j: usize) -> f64 {
        self.pi[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.pi[i * self.n..(i + 1) * self.n]
    }

    pub fn p_bar(&self) -> &[f64] {
        &self.p_bar
    }

    pub fn e(&self) -> &[f64] {
        &self.e
    }

    /// Nodes `j` with `pi(i, j) > 0`, ascending.
    pub fn successors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.row(i)
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(j, _)| j)
    }

    pub fn to_raw(&self) -> RawSystem {
        RawSystem {
            n: self.n,
            pi: (0..self.n).map(|i| self.row(i).to_vec()).collect(),
            p_bar: self.p_bar.clone(),
            e: self.e.clone(),
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self, ModelError> {
        let raw: RawSystem =
            serde_json::from_str(s).map_err(|e| ModelError::Parse(e.to_string()))?;
        validate_system(&raw)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_raw()).expect("instance serializes")
    }

    /// Same liability network with `p_bar` and `e` replaced.
    pub fn with_vectors(&self, p_bar: Vec<f64>, e: Vec<f64>) -> Result<Self, ModelError> {
        let mut raw = self.to_raw();
        raw.p_bar = p_bar;
        raw.e = e;
        validate_system(&raw)
    }
}

/// Validates raw instance data and renormalizes the rows of `pi`.
///
/// Rows within [`ROW_SUM_TOL`] of 1 are divided by their sum; any rounding
/// left over is folded into the largest entry of the row so that the row sums
/// to exactly `1.0`. Zero entries stay zero, so the liability graph is
/// unchanged. Validating an already validated system is a no-op.
pub fn validate_system(raw: &RawSystem) -> Result<FinancialSystem, ModelError> {
    let n = raw.n;
    if n == 0 {
        return Err(ModelError::Dimension("n must be positive".into()));
    }
    if raw.pi.len() != n {
        return Err(ModelError::Dimension(format!(
            "pi has {} rows, expected {n}",
            raw.pi.len()
        )));
    }
    if let Some((i, row)) = raw.pi.iter().enumerate().find(|(_, r)| r.len() != n) {
        return Err(ModelError::Dimension(format!(
            "row {} of pi has {} entries, expected {n}",
            i + 1,
            row.len()
        )));
    }
    if raw.p_bar.len() != n {
        return Err(ModelError::Dimension(format!(
            "p_bar has {} entries, expected {n}",
            raw.p_bar.len()
        )));
    }
    if raw.e.len() != n {
        return Err(ModelError::Dimension(format!(
            "e has {} entries, expected {n}",
            raw.e.len()
        )));
    }

    for (i, row) in raw.pi.iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            let location = || format!("({}, {})", i + 1, j + 1);
            if !x.is_finite() {
                return Err(ModelError::NonFinite {
                    field: "pi",
                    location: location(),
                });
            }
            if x < 0.0 {
                return Err(ModelError::NegativeEntry {
                    field: "pi",
                    location: location(),
                    value: x,
                });
            }
        }
    }
    for (i, &x) in raw.p_bar.iter().enumerate() {
        if !x.is_finite() {
            return Err(ModelError::NonFinite {
                field: "p_bar",
                location: (i + 1).to_string(),
            });
        }
        if x <= 0.0 {
            return Err(ModelError::NonPositiveObligation {
                node: i + 1,
                value: x,
            });
        }
    }
    for (i, &x) in raw.e.iter().enumerate() {
        if !x.is_finite() {
            return Err(ModelError::NonFinite {
                field: "e",
                location: (i + 1).to_string(),
            });
        }
        if x < 0.0 {
            return Err(ModelError::NegativeEntry {
                field: "e",
                location: (i + 1).to_string(),
                value: x,
            });
        }
    }

    let mut pi = Vec::with_capacity(n * n);
    for (i, row) in raw.pi.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(ModelError::RowSum { node: i + 1, sum });
        }
        let mut row = row.clone();
        normalize_row(&mut row);
        pi.extend(row);
    }

    Ok(FinancialSystem {
        n,
        pi,
        p_bar: raw.p_bar.clone(),
        e: raw.e.clone(),
    })
}

fn normalize_row(row: &mut [f64]) {
    let sum: f64 = row.iter().sum();
    if sum == 1.0 {
        return;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
    let largest = row
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .expect("rows are nonempty");
    for _ in 0..4 {
        let sum: f64 = row.iter().sum();
        if sum == 1.0 {
            return;
        }
        row[largest] += 1.0 - sum;
    }
    // The running sum can jump over 1.0 when a single entry moves. Walk the
    // positive entries one ulp at a time, last first, since the final addition
    // gives the finest control.
    let positive: Vec<usize> = (0..row.len()).filter(|&k| row[k] > 0.0).collect();
    for &k in positive.iter().rev() {
        let saved = row[k];
        for _ in 0..64 {
            let sum: f64 = row.iter().sum();
            if sum == 1.0 {
                return;
            }
            let next = if sum < 1.0 {
                row[k].next_up()
            } else {
                row[k].next_down()
            };
            if next <= 0.0 {
                break;
            }
            row[k] = next;
        }
        row[k] = saved;
    }
}

/// A payment vector, treated as a row vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PaymentVector(Vec<f64>);

impl PaymentVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    /// Checks membership in the order interval `[0, p_bar]`.
    pub fn within(sys: &FinancialSystem, values: Vec<f64>) -> Result<Self, ModelError> {
        if values.len() != sys.n() {
            return Err(ModelError::Dimension(format!(
                "payment vector has {} entries, expected {}",
                values.len(),
                sys.n()
            )));
        }
        for (i, (&v, &bound)) in values.iter().zip(sys.p_bar()).enumerate() {
            if !(0.0..=bound).contains(&v) {
                return Err(ModelError::PaymentOutOfBounds {
                    node: i + 1,
                    value: v,
                    bound,
                });
            }
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn sup_distance(&self, other: &[f64]) -> f64 {
        sup_distance(&self.0, other)
    }
}

impl From<Vec<f64>> for PaymentVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Deref for PaymentVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

pub fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `p * pi + e`: what each node receives from the others plus its own cash.
///
/// Every caller that compares payments against inflows goes through this
/// function, so the clearing operator and the feasibility checks agree bit for
/// bit.
pub fn inflow(sys: &FinancialSystem, p: &[f64]) -> Vec<f64> {
    let n = sys.n();
    let mut acc = vec![0.0; n];
    for (i, &pi_val) in p.iter().enumerate() {
        if pi_val == 0.0 {
            continue;
        }
        for (a, &w) in acc.iter_mut().zip(sys.row(i)) {
            *a += pi_val * w;
        }
    }
    for (a, &cash) in acc.iter_mut().zip(sys.e()) {
        *a += cash;
    }
    acc
}

/// Per-node outcome of the limited liability check.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitedLiability {
    pub holds: Vec<bool>,
    /// `p(j) - (p * pi + e)(j)`; nonpositive where the node can afford its payment.
    pub residual: Vec<f64>,
}

impl LimitedLiability {
    pub fn all(&self) -> bool {
        self.holds.iter().all(|&h| h)
    }

    /// Largest positive residual, 0 when nothing is violated.
    pub fn max_violation(&self) -> f64 {
        self.residual.iter().fold(0.0, |m, &r| m.max(r))
    }
}

/// `p(j) <= (p * pi + e)(j) + tol` at every node.
pub fn check_limited_liability(sys: &FinancialSystem, p: &[f64], tol: f64) -> LimitedLiability {
    let x = inflow(sys, p);
    let residual: Vec<f64> = p.iter().zip(&x).map(|(pj, xj)| pj - xj).collect();
    let holds = residual.iter().map(|&r| r <= tol).collect();
    LimitedLiability { holds, residual }
}

/// Per-node outcome of the absolute priority check.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsolutePriority {
    pub holds: Vec<bool>,
    /// Distance to the nearer of the two admissible values: the node's inflow
    /// or its full obligation.
    pub residual: Vec<f64>,
}

impl AbsolutePriority {
    pub fn all(&self) -> bool {
        self.holds.iter().all(|&h| h)
    }

    pub fn max_residual(&self) -> f64 {
        self.residual.iter().fold(0.0, |m, &r| m.max(r))
    }
}

/// Each node either pays everything it receives (`p = p * pi + e`) or pays its
/// obligation in full (`p = p_bar`), up to `tol`.
pub fn check_absolute_priority(sys: &FinancialSystem, p: &[f64], tol: f64) -> AbsolutePriority {
    let x = inflow(sys, p);
    let residual: Vec<f64> = p
        .iter()
        .zip(&x)
        .zip(sys.p_bar())
        .map(|((pj, xj), bar)| (pj - xj).abs().min((pj - bar).abs()))
        .collect();
    let holds = residual.iter().map(|&r| r <= tol).collect();
    AbsolutePriority { holds, residual }
}

/// Whether `p` satisfies both clearing conditions at tolerance `tol`.
pub fn is_clearing(sys: &FinancialSystem, p: &[f64], tol: f64) -> bool {
    check_limited_liability(sys, p, tol).all() && check_absolute_priority(sys, p, tol).all()
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use proptest::prelude::*;

    fn raw(pi: Vec<Vec<f64>>, p_bar: Vec<f64>, e: Vec<f64>) -> RawSystem {
        RawSystem {
            n: pi.len(),
            pi,
            p_bar,
            e,
        }
    }

    #[test]
    fn cash_fed_cycle_is_valid() {
        let sys = cash_fed_cycle();
        assert_eq!(sys.n(), 3);
        assert_eq!(sys.successors(0).collect::<Vec<_>>(), vec![1]);
        assert_eq!(sys.successors(2).collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn row_sum_error_reports_first_bad_row() {
        let err = validate_system(&raw(
            vec![vec![0.5, 0.4], vec![0.0, 1.0]],
            vec![1.0, 1.0],
            vec![0.0, 0.0],
        ))
        .unwrap_err();
        match err {
            ModelError::RowSum { node, sum } => {
                assert_eq!(node, 1);
                assert!((sum - 0.9).abs() < 1e-15);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_obligation_rejected() {
        let err = validate_system(&raw(
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            vec![1.0, 0.0],
            vec![0.0, 0.0],
        ))
        .unwrap_err();
        assert_eq!(
            err,
            ModelError::NonPositiveObligation {
                node: 2,
                value: 0.0
            }
        );
    }

    #[test]
    fn tiny_negative_noise_rejected() {
        let err = validate_system(&raw(
            vec![vec![-1e-18, 1.0], vec![1.0, 0.0]],
            vec![1.0, 1.0],
            vec![0.0, 0.0],
        ))
        .unwrap_err();
        assert!(matches!(err, ModelError::NegativeEntry { field: "pi", .. }));

        let err = validate_system(&raw(
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            vec![1.0, 1.0],
            vec![0.0, -0.5],
        ))
        .unwrap_err();
        assert!(matches!(err, ModelError::NegativeEntry { field: "e", .. }));
    }

    #[test]
    fn shape_errors() {
        assert!(matches!(
            validate_system(&raw(vec![vec![1.0]], vec![1.0, 1.0], vec![0.0])),
            Err(ModelError::Dimension(_))
        ));
        assert!(matches!(
            validate_system(&RawSystem {
                n: 2,
                pi: vec![vec![1.0, 0.0], vec![1.0]],
                p_bar: vec![1.0, 1.0],
                e: vec![0.0, 0.0]
            }),
            Err(ModelError::Dimension(_))
        ));
        assert!(matches!(
            validate_system(&RawSystem {
                n: 0,
                pi: vec![],
                p_bar: vec![],
                e: vec![]
            }),
            Err(ModelError::Dimension(_))
        ));
    }

    #[test]
    fn non_finite_rejected() {
        assert!(matches!(
            validate_system(&raw(vec![vec![f64::NAN]], vec![1.0], vec![0.0])),
            Err(ModelError::NonFinite { field: "pi", .. })
        ));
        assert!(matches!(
            validate_system(&raw(vec![vec![1.0]], vec![f64::INFINITY], vec![0.0])),
            Err(ModelError::NonFinite { field: "p_bar", .. })
        ));
    }

    #[test]
    fn rows_renormalized_to_exact_unit_sums() {
        let sys = validate_system(&raw(
            vec![
                vec![0.1, 0.2, 0.7 + 5e-10],
                vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
                vec![0.0, 0.0, 1.0],
            ],
            vec![1.0; 3],
            vec![0.0; 3],
        ))
        .unwrap();
        for i in 0..3 {
            assert_eq!(sys.row(i).iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn json_round_trip() {
        let sys = cash_fed_cycle();
        let back = FinancialSystem::from_json_str(&sys.to_json_string()).unwrap();
        assert_eq!(back, sys);
        assert!(matches!(
            FinancialSystem::from_json_str("{\"n\": 1}"),
            Err(ModelError::Parse(_))
        ));
    }

    #[test]
    fn payment_vector_bounds() {
        let sys = cash_fed_cycle();
        assert!(PaymentVector::within(&sys, vec![0.0, 1.0, 0.5]).is_ok());
        assert!(matches!(
            PaymentVector::within(&sys, vec![0.0, 1.5, 0.5]),
            Err(ModelError::PaymentOutOfBounds { node: 2, .. })
        ));
        assert!(PaymentVector::within(&sys, vec![-0.1, 0.0, 0.0]).is_err());
        assert!(PaymentVector::within(&sys, vec![0.0]).is_err());
    }

    #[test]
    fn limited_liability_examples() {
        let sys = cash_fed_cycle();
        let ll = check_limited_liability(&sys, &[1.0, 1.0, 1.0], 1e-9);
        assert!(ll.all());
        // node 2 receives 1 from node 1 and 1 from node 3
        assert_eq!(ll.residual, vec![0.0, -1.0, 0.0]);

        assert!(check_limited_liability(&sys, &[0.0; 3], 0.0).all());

        let broke = sys.with_vectors(vec![1.0; 3], vec![0.0; 3]).unwrap();
        let ll = check_limited_liability(&broke, &[1.0, 1.0, 1.0], 1e-9);
        assert_eq!(ll.holds, vec![false, true, true]);
        assert_eq!(ll.max_violation(), 1.0);
    }

    #[test]
    fn absolute_priority_examples() {
        let sys = cash_fed_cycle();
        assert!(check_absolute_priority(&sys, &[1.0, 1.0, 1.0], 0.0).all());

        let cashless = sys.with_vectors(vec![1.0; 3], vec![0.0; 3]).unwrap();
        assert!(check_absolute_priority(&cashless, &[0.0; 3], 0.0).all());

        let ap = check_absolute_priority(&sys, &[0.5, 1.0, 1.0], 1e-9);
        assert_eq!(ap.holds, vec![false, true, true]);
        assert_eq!(ap.residual[0], 0.5);
    }

    fn arb_system() -> impl Strategy<Value = FinancialSystem> {
        (1usize..=6)
            .prop_flat_map(|n| {
                (
                    prop::collection::vec(
                        prop::collection::vec(prop_oneof![Just(0.0), 0.01f64..1.0], n),
                        n,
                    ),
                    prop::collection::vec(0.1f64..10.0, n),
                    prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..5.0], n),
                )
            })
            .prop_map(|(mut pi, p_bar, e)| {
                for (i, row) in pi.iter_mut().enumerate() {
                    if row.iter().all(|&w| w == 0.0) {
                        row[i] = 1.0;
                    }
                    let s: f64 = row.iter().sum();
                    for w in row.iter_mut() {
                        *w /= s;
                    }
                }
                validate_system(&RawSystem {
                    n: pi.len(),
                    pi,
                    p_bar,
                    e,
                })
                .unwrap()
            })
    }

    proptest! {
        #[test]
        fn validation_is_idempotent(sys in arb_system()) {
            let again = validate_system(&sys.to_raw()).unwrap();
            prop_assert_eq!(again, sys);
        }

        #[test]
        fn clearing_iff_fixed_point(sys in arb_system(), fracs in prop::collection::vec(prop_oneof![Just(0.0), Just(1.0), 0.0f64..1.0], 6)) {
            let p: Vec<f64> = sys.p_bar().iter().zip(&fracs).map(|(b, f)| b * f).collect();
            let x = inflow(&sys, &p);
            let phi: Vec<f64> = x.iter().zip(sys.p_bar()).map(|(a, b)| a.min(*b)).collect();
            prop_assert_eq!(is_clearing(&sys, &p, 0.0), phi == p);
        }

        #[test]
        fn zero_payments_always_affordable(sys in arb_system()) {
            prop_assert!(check_limited_liability(&sys, &vec![0.0; sys.n()], 0.0).all());
        }
    }
}
