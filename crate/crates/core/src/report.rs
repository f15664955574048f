//! JSON and text renderings of analysis, solve, certificate and oracle results.
//!
//! Node labels are 1-based here, unlike the library API.

use std::fmt::Write as _;

use serde_json::{json, Map, Value};

use crate::graph::{is_regular, partition_pan, reachability, NodePartition};
use crate::model::FinancialSystem;
use crate::oracle::FixedPointSet;
use crate::solver::{PositivityCertificate, SolveReport};

pub fn labels(nodes: &[usize]) -> Vec<usize> {
    nodes.iter().map(|&i| i + 1).collect()
}

fn label_set(nodes: &[usize]) -> String {
    let inner: Vec<String> = nodes.iter().map(|i| (i + 1).to_string()).collect();
    format!("{{{}}}", inner.join(", "))
}

pub fn partition_json(part: &NodePartition) -> Value {
    json!({
        "P": labels(&part.p_set),
        "A": labels(&part.a_set),
        "N": labels(&part.n_set),
    })
}

/// `{ regular, witness, P, A, N, orbits }`.
pub fn analysis_json(sys: &FinancialSystem) -> Value {
    let reach = reachability(sys);
    let regularity = is_regular(sys);
    let part = partition_pan(sys);
    let orbits: Map<String, Value> = (0..sys.n())
        .map(|i| ((i + 1).to_string(), json!(labels(&reach.orbit(i)))))
        .collect();
    json!({
        "regular": regularity.regular,
        "witness": regularity.witness.map(|w| w + 1),
        "P": labels(&part.p_set),
        "A": labels(&part.a_set),
        "N": labels(&part.n_set),
        "orbits": orbits,
    })
}

pub fn analysis_text(sys: &FinancialSystem) -> String {
    let reach = reachability(sys);
    let regularity = is_regular(sys);
    let part = partition_pan(sys);
    let mut s = String::new();
    match regularity.witness {
        None => writeln!(s, "regular: yes").unwrap(),
        Some(w) => writeln!(
            s,
            "regular: no (risk orbit of node {} holds no cash)",
            w + 1
        )
        .unwrap(),
    }
    writeln!(s, "P (cash accessible): {}", label_set(&part.p_set)).unwrap();
    writeln!(s, "A (drain into P):    {}", label_set(&part.a_set)).unwrap();
    writeln!(s, "N (never reach P):   {}", label_set(&part.n_set)).unwrap();
    writeln!(s, "risk orbits:").unwrap();
    for i in 0..sys.n() {
        writeln!(s, "  {}: {}", i + 1, label_set(&reach.orbit(i))).unwrap();
    }
    s
}

pub fn solve_report_json(report: &SolveReport) -> Value {
    json!({
        "p_star": report.p_star.as_slice(),
        "method": report.method.as_str(),
        "iterations": report.iterations,
        "residual_ll": report.residual_ll,
        "residual_ap": report.residual_ap,
        "bracket_gap": report.bracket_gap,
        "partition": partition_json(&report.partition),
    })
}

pub fn solve_report_text(sys: &FinancialSystem, report: &SolveReport) -> String {
    let mut s = String::new();
    writeln!(s, "method: {}", report.method).unwrap();
    writeln!(s, "iterations: {}", report.iterations).unwrap();
    writeln!(
        s,
        "{:>6}  {:>24}  {:>24}  status",
        "node", "payment", "obligation"
    )
    .unwrap();
    for (i, (&p, &bar)) in report.p_star.iter().zip(sys.p_bar()).enumerate() {
        let status = if p == bar {
            "pays in full"
        } else if p == 0.0 {
            "pays nothing"
        } else {
            "defaults"
        };
        writeln!(s, "{:>6}  {:>24}  {:>24}  {status}", i + 1, p, bar).unwrap();
    }
    writeln!(s, "limited liability residual: {:e}", report.residual_ll).unwrap();
    writeln!(s, "absolute priority residual: {:e}", report.residual_ap).unwrap();
    if let Some(gap) = report.bracket_gap {
        writeln!(s, "bracket gap: {gap:e}").unwrap();
    }
    let part = &report.partition;
    writeln!(
        s,
        "partition: P = {}, A = {}, N = {}",
        label_set(&part.p_set),
        label_set(&part.a_set),
        label_set(&part.n_set)
    )
    .unwrap();
    s
}

pub fn certificate_json(cert: &PositivityCertificate, all_cash_accessible: bool) -> Value {
    json!({
        "delta": cert.delta,
        "e_hat": cert.e_hat,
        "chain_ok": cert.chain_ok,
        "phi_n_zero": cert.phi_n_zero,
        "strictly_positive_at_n": cert.strictly_positive_at_n,
        "all_cash_accessible": all_cash_accessible,
    })
}

pub fn certificate_text(cert: &PositivityCertificate, all_cash_accessible: bool) -> String {
    let mut s = String::new();
    writeln!(s, "delta: {}", cert.delta).unwrap();
    writeln!(
        s,
        "cash nodes: {}",
        label_set(
            &cert
                .e_hat
                .iter()
                .enumerate()
                .filter(|(_, &b)| b == 1)
                .map(|(i, _)| i)
                .collect::<Vec<_>>()
        )
    )
    .unwrap();
    for (m, ok) in cert.chain_ok.iter().enumerate() {
        writeln!(
            s,
            "lower bound at step {}: {}",
            m + 1,
            if *ok { "holds" } else { "fails" }
        )
        .unwrap();
    }
    writeln!(
        s,
        "strictly positive after n steps: {}",
        if cert.strictly_positive_at_n {
            "yes"
        } else {
            "no"
        }
    )
    .unwrap();
    writeln!(
        s,
        "every node cash accessible: {}",
        if all_cash_accessible { "yes" } else { "no" }
    )
    .unwrap();
    s
}

pub fn fixed_point_set_json(set: &FixedPointSet) -> Value {
    json!({
        "points": set.points,
        "is_singleton": set.is_singleton,
        "continuum_detected": set.continuum_detected,
        "families": set.families.iter().map(|f| json!({
            "base": f.base,
            "direction": f.direction,
            "t_min": f.t_min,
            "t_max": f.t_max,
        })).collect::<Vec<_>>(),
        "singular_candidates": set
            .singular_candidates
            .iter()
            .map(|c| labels(c))
            .collect::<Vec<_>>(),
    })
}
