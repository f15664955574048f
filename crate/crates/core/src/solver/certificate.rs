//! Positivity certificate for systems in which every node is cash accessible.
//!
//! With `delta = min({p_bar(i)} ∪ {e(i) : e(i) > 0}) / n^2` and `e_hat` the
//! 0/1 indicator of `e > 0`, the iterates from zero satisfy
//! `Phi^m 0 >= delta (e_hat + e_hat pi + ... + e_hat pi^(m-1))` for every
//! `m <= n`. If every node is reachable from a cash node within `n - 1`
//! steps, the right-hand side at `m = n` is strictly positive, so `Phi^n 0`
//! is too.

use crate::model::FinancialSystem;

use super::apply_phi;

#[derive(Debug, Clone, PartialEq)]
pub struct PositivityCertificate {
    pub delta: f64,
    pub e_hat: Vec<u8>,
    /// `chain_ok[m - 1]` records the lower bound at step `m`, for `m = 1..=n`.
    pub chain_ok: Vec<bool>,
    /// `Phi^n 0`.
    pub phi_n_zero: Vec<f64>,
    pub strictly_positive_at_n: bool,
}

impl PositivityCertificate {
    pub fn chain_holds(&self) -> bool {
        self.chain_ok.iter().all(|&ok| ok)
    }
}

pub fn positivity_certificate(sys: &FinancialSystem) -> PositivityCertificate {
    let n = sys.n();
    let smallest = sys
        .p_bar()
        .iter()
        .chain(sys.e().iter().filter(|&&x| x > 0.0))
        .fold(f64::INFINITY, |m, &x| m.min(x));
    let delta = smallest / (n * n) as f64;
    let e_hat: Vec<u8> = sys.e().iter().map(|&x| u8::from(x > 0.0)).collect();

    // power = e_hat pi^(m-1), partial = e_hat + ... + e_hat pi^(m-1)
    let mut power: Vec<f64> = e_hat.iter().map(|&b| f64::from(b)).collect();
    let mut partial = power.clone();
    let mut iterate = vec![0.0; n];
    let mut chain_ok = Vec::with_capacity(n);
    for m in 1..=n {
        iterate = apply_phi(sys, &iterate).into_inner();
        chain_ok.push(
            iterate
                .iter()
                .zip(&partial)
                .all(|(&lhs, &s)| lhs >= delta * s),
        );
        if m < n {
            let mut next = vec![0.0; n];
            for (i, &w) in power.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                for (o, &x) in next.iter_mut().zip(sys.row(i)) {
                    *o += w * x;
                }
            }
            power = next;
            for (s, &x) in partial.iter_mut().zip(&power) {
                *s += x;
            }
        }
    }
    let strictly_positive_at_n = iterate.iter().all(|&x| x > 0.0);
    PositivityCertificate {
        delta,
        e_hat,
        chain_ok,
        phi_n_zero: iterate,
        strictly_positive_at_n,
    }
}
