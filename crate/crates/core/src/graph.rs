//! Accessibility on the liability network and the P/A/N node partition.
//!
//! An edge `i -> j` exists iff `pi(i, j) > 0`. Node `j` is accessible from `i`
//! if `j == i` or there is a directed path from `i` to `j`. All node sets are
//! returned sorted ascending, 0-based.

use std::collections::VecDeque;

use thiserror::Error;

use crate::model::{validate_system, FinancialSystem, ModelError, RawSystem, ROW_SUM_TOL};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("node index {index} out of range for a system of {n} nodes")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("node set is not absorbing: restricted row of node {node} sums to {sum}")]
    NotAbsorbing { node: usize, sum: f64 },
    #[error("node set is empty")]
    EmptySet,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Reflexive transitive closure of the liability graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReachabilityMatrix {
    n: usize,
    reach: Vec<bool>,
}

impl ReachabilityMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Whether `j` is accessible from `i`.
    pub fn reaches(&self, i: usize, j: usize) -> bool {
        self.reach[i * self.n + j]
    }

    /// All nodes accessible from `i`.
    pub fn orbit(&self, i: usize) -> Vec<usize> {
        (0..self.n).filter(|&j| self.reaches(i, j)).collect()
    }

    /// Nodes accessible from at least one node of `sources`.
    pub fn accessible_from(&self, sources: &[usize]) -> Vec<usize> {
        (0..self.n)
            .filter(|&j| sources.iter().any(|&i| self.reaches(i, j)))
            .collect()
    }
}

/// Breadth-first search from every node.
pub fn reachability(sys: &FinancialSystem) -> ReachabilityMatrix {
    let n = sys.n();
    let mut reach = vec![false; n * n];
    let mut queue = VecDeque::new();
    for src in 0..n {
        let seen = &mut reach[src * n..(src + 1) * n];
        seen[src] = true;
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            for v in sys.successors(u) {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
    }
    ReachabilityMatrix { n, reach }
}

/// The set of nodes accessible from `i`.
pub fn risk_orbit(sys: &FinancialSystem, i: usize) -> Result<Vec<usize>, GraphError> {
    if i >= sys.n() {
        return Err(GraphError::IndexOutOfRange {
            index: i,
            n: sys.n(),
        });
    }
    Ok(reachability(sys).orbit(i))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Regularity {
    pub regular: bool,
    /// Smallest node whose risk orbit holds no cash, when the system is not regular.
    pub witness: Option<usize>,
}

/// A system is regular when every risk orbit contains a node with `e > 0`.
pub fn is_regular(sys: &FinancialSystem) -> Regularity {
    let reach = reachability(sys);
    let witness =
        (0..sys.n()).find(|&i| !(0..sys.n()).any(|j| reach.reaches(i, j) && sys.e()[j] > 0.0));
    Regularity {
        regular: witness.is_none(),
        witness,
    }
}

fn cash_nodes(sys: &FinancialSystem) -> Vec<usize> {
    (0..sys.n()).filter(|&i| sys.e()[i] > 0.0).collect()
}

/// Nodes accessible from some node holding cash.
pub fn cash_accessible_set(sys: &FinancialSystem) -> Vec<usize> {
    reachability(sys).accessible_from(&cash_nodes(sys))
}

/// Disjoint split of the nodes used by the decomposition solver.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NodePartition {
    /// Cash accessible nodes.
    pub p_set: Vec<usize>,
    /// Nodes outside P from which P is accessible.
    pub a_set: Vec<usize>,
    /// Nodes outside P from which P is not accessible.
    pub n_set: Vec<usize>,
}

impl NodePartition {
    pub fn len(&self) -> usize {
        self.p_set.len() + self.a_set.len() + self.n_set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn partition_pan(sys: &FinancialSystem) -> NodePartition {
    let reach = reachability(sys);
    let p_set = reach.accessible_from(&cash_nodes(sys));
    let mut in_p = vec![false; sys.n()];
    for &i in &p_set {
        in_p[i] = true;
    }
    let (a_set, n_set): (Vec<usize>, Vec<usize>) = (0..sys.n())
        .filter(|&i| !in_p[i])
        .partition(|&i| p_set.iter().any(|&j| reach.reaches(i, j)));
    NodePartition {
        p_set,
        a_set,
        n_set,
    }
}

fn membership(n: usize, set: &[usize]) -> Result<Vec<bool>, GraphError> {
    let mut member = vec![false; n];
    for &i in set {
        if i >= n {
            return Err(GraphError::IndexOutOfRange { index: i, n });
        }
        member[i] = true;
    }
    Ok(member)
}

/// True iff no node outside `set` is accessible from `set`.
///
/// A path leaving the set has a first edge leaving it, so checking direct
/// edges suffices.
pub fn is_absorbing(sys: &FinancialSystem, set: &[usize]) -> Result<bool, GraphError> {
    let member = membership(sys.n(), set)?;
    Ok(set.iter().all(|&i| sys.successors(i).all(|j| member[j])))
}

/// A financial system restricted to an absorbing node set.
#[derive(Debug, Clone, PartialEq)]
pub struct Subsystem {
    pub system: FinancialSystem,
    /// `nodes[k]` is the parent label of subsystem node `k`.
    pub nodes: Vec<usize>,
}

impl Subsystem {
    /// Embeds subsystem values into a parent-sized vector, zero elsewhere.
    pub fn scatter(&self, values: &[f64], parent_n: usize) -> Vec<f64> {
        let mut out = vec![0.0; parent_n];
        for (&node, &v) in self.nodes.iter().zip(values) {
            out[node] = v;
        }
        out
    }

    pub fn gather(&self, parent: &[f64]) -> Vec<f64> {
        self.nodes.iter().map(|&i| parent[i]).collect()
    }
}

/// `(J, pi|J, p_bar|J, e|J)` for a nonempty absorbing set `J`.
pub fn restrict(sys: &FinancialSystem, set: &[usize]) -> Result<Subsystem, GraphError> {
    if set.is_empty() {
        return Err(GraphError::EmptySet);
    }
    let member = membership(sys.n(), set)?;
    let nodes: Vec<usize> = (0..sys.n()).filter(|&i| member[i]).collect();

    let pi: Vec<Vec<f64>> = nodes
        .iter()
        .map(|&i| nodes.iter().map(|&j| sys.pi(i, j)).collect())
        .collect();
    for (row, &node) in pi.iter().zip(&nodes) {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(GraphError::NotAbsorbing { node, sum });
        }
    }
    let raw = RawSystem {
        n: nodes.len(),
        pi,
        p_bar: nodes.iter().map(|&i| sys.p_bar()[i]).collect(),
        e: nodes.iter().map(|&i| sys.e()[i]).collect(),
    };
    Ok(Subsystem {
        system: validate_system(&raw)?,
        nodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::*;
    use proptest::prelude::*;

    fn identity(n: usize) -> FinancialSystem {
        let pi = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        system(pi, vec![1.0; n], vec![1.0; n])
    }

    /// `reach(i, j)` iff `sum_{k<n} pi^k (i, j) > 0`, by dense matrix powers.
    fn reach_by_powers(sys: &FinancialSystem) -> Vec<bool> {
        let n = sys.n();
        let mut power: Vec<f64> = (0..n * n)
            .map(|k| if k / n == k % n { 1.0 } else { 0.0 })
            .collect();
        let mut total = power.clone();
        for _ in 1..n {
            let mut next = vec![0.0; n * n];
            for i in 0..n {
                for k in 0..n {
                    for j in 0..n {
                        next[i * n + j] += power[i * n + k] * sys.pi(k, j);
                    }
                }
            }
            power = next;
            for (t, p) in total.iter_mut().zip(&power) {
                *t += p;
            }
        }
        total.into_iter().map(|x| x > 0.0).collect()
    }

    #[test]
    fn cash_fed_cycle_reachability() {
        let reach = reachability(&cash_fed_cycle());
        assert_eq!(reach.orbit(0), vec![0, 1, 2]);
        assert_eq!(reach.orbit(1), vec![1, 2]);
        assert_eq!(reach.orbit(2), vec![1, 2]);
    }

    #[test]
    fn identity_reaches_only_itself() {
        let reach = reachability(&identity(4));
        for i in 0..4 {
            assert_eq!(reach.orbit(i), vec![i]);
            assert_eq!(risk_orbit(&identity(4), i).unwrap(), vec![i]);
        }
    }

    #[test]
    fn two_cycle_reaches_everything() {
        let reach = reachability(&two_cycle(vec![1.0, 1.0], vec![0.0, 0.0]));
        assert!((0..2).all(|i| (0..2).all(|j| reach.reaches(i, j))));
    }

    #[test]
    fn risk_orbits() {
        assert_eq!(risk_orbit(&cash_fed_cycle(), 1).unwrap(), vec![1, 2]);
        assert_eq!(risk_orbit(&cash_fed_cycle(), 0).unwrap(), vec![0, 1, 2]);
        assert_eq!(
            risk_orbit(&cash_fed_cycle(), 3),
            Err(GraphError::IndexOutOfRange { index: 3, n: 3 })
        );
    }

    #[test]
    fn regularity() {
        assert_eq!(
            is_regular(&cash_fed_cycle()),
            Regularity {
                regular: false,
                witness: Some(1)
            }
        );
        assert!(is_regular(&identity(3)).regular);
        let r = is_regular(&two_cycle(vec![1.0, 1.0], vec![1.0, 0.0]));
        assert!(r.regular);
        assert_eq!(r.witness, None);
    }

    #[test]
    fn cash_accessibility() {
        assert_eq!(cash_accessible_set(&cash_fed_cycle()), vec![0, 1, 2]);
        assert_eq!(
            cash_accessible_set(&isolated_cycle(vec![2.0, 1.0, 1.0])),
            vec![0]
        );
        let cashless = cash_fed_cycle()
            .with_vectors(vec![1.0; 3], vec![0.0; 3])
            .unwrap();
        assert!(cash_accessible_set(&cashless).is_empty());
    }

    #[test]
    fn partitions() {
        assert_eq!(
            partition_pan(&cash_fed_cycle()),
            NodePartition {
                p_set: vec![0, 1, 2],
                a_set: vec![],
                n_set: vec![]
            }
        );
        assert_eq!(
            partition_pan(&isolated_cycle(vec![2.0, 1.0, 1.0])),
            NodePartition {
                p_set: vec![0],
                a_set: vec![],
                n_set: vec![1, 2]
            }
        );
        assert_eq!(
            partition_pan(&feeder_chain(vec![1.0, 1.0, 0.5])),
            NodePartition {
                p_set: vec![2],
                a_set: vec![0, 1],
                n_set: vec![]
            }
        );
    }

    #[test]
    fn absorbing_sets() {
        assert!(!is_absorbing(&cash_fed_cycle(), &[1]).unwrap());
        assert!(is_absorbing(&cash_fed_cycle(), &[1, 2]).unwrap());
        assert!(is_absorbing(&cash_fed_cycle(), &[]).unwrap());
        assert!(is_absorbing(&cash_fed_cycle(), &[5]).is_err());
    }

    #[test]
    fn restriction() {
        let sys = feeder_chain(vec![1.0, 1.0, 0.5]);
        let sub = restrict(&sys, &[2]).unwrap();
        assert_eq!(sub.nodes, vec![2]);
        assert_eq!(sub.system.n(), 1);
        assert_eq!(sub.system.row(0), &[1.0]);
        assert_eq!(sub.system.p_bar(), &[0.5]);
        assert_eq!(sub.system.e(), &[1.0]);
        assert_eq!(sub.scatter(&[0.5], 3), vec![0.0, 0.0, 0.5]);

        let whole = restrict(&cash_fed_cycle(), &[0, 1, 2]).unwrap();
        assert_eq!(whole.system, cash_fed_cycle());

        assert!(matches!(
            restrict(&cash_fed_cycle(), &[1]),
            Err(GraphError::NotAbsorbing { node: 1, .. })
        ));
        assert_eq!(restrict(&cash_fed_cycle(), &[]), Err(GraphError::EmptySet));
    }

    fn arb_system() -> impl Strategy<Value = FinancialSystem> {
        (1usize..=8)
            .prop_flat_map(|n| {
                (
                    prop::collection::vec(
                        prop::collection::vec(prop_oneof![3 => Just(0.0), 1 => 0.01f64..1.0], n),
                        n,
                    ),
                    prop::collection::vec(prop_oneof![Just(0.0), 0.1f64..2.0], n),
                )
            })
            .prop_map(|(mut pi, e)| {
                let n = pi.len();
                for (i, row) in pi.iter_mut().enumerate() {
                    if row.iter().all(|&w| w == 0.0) {
                        row[i] = 1.0;
                    }
                    let s: f64 = row.iter().sum();
                    row.iter_mut().for_each(|w| *w /= s);
                }
                system(pi, vec![1.0; n], e)
            })
    }

    proptest! {
        #[test]
        fn bfs_matches_matrix_powers(sys in arb_system()) {
            let reach = reachability(&sys);
            let oracle = reach_by_powers(&sys);
            let n = sys.n();
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(reach.reaches(i, j), oracle[i * n + j]);
                }
            }
        }

        #[test]
        fn reachability_is_reflexive_and_transitive(sys in arb_system()) {
            let r = reachability(&sys);
            let n = sys.n();
            for i in 0..n {
                prop_assert!(r.reaches(i, i));
                for j in 0..n {
                    for k in 0..n {
                        if r.reaches(i, j) && r.reaches(j, k) {
                            prop_assert!(r.reaches(i, k));
                        }
                    }
                }
            }
        }

        #[test]
        fn partition_invariants(sys in arb_system()) {
            let part = partition_pan(&sys);
            let mut all: Vec<usize> = part.p_set.iter().chain(&part.a_set).chain(&part.n_set).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..sys.n()).collect::<Vec<_>>());
            prop_assert!(is_absorbing(&sys, &part.p_set).unwrap());
            prop_assert!(is_absorbing(&sys, &part.n_set).unwrap());
            if !part.a_set.is_empty() {
                prop_assert!(!is_absorbing(&sys, &part.a_set).unwrap());
            }
            if part.p_set.len() == sys.n() {
                prop_assert!(part.a_set.is_empty() && part.n_set.is_empty());
            }
            if sys.e().iter().all(|&x| x == 0.0) {
                prop_assert!(part.p_set.is_empty() && part.a_set.is_empty());
            }
        }

        #[test]
        fn restriction_of_absorbing_sets_is_exact(sys in arb_system()) {
            let part = partition_pan(&sys);
            for set in [&part.p_set, &part.n_set] {
                if set.is_empty() {
                    continue;
                }
                let sub = restrict(&sys, set).unwrap();
                for (k, &i) in sub.nodes.iter().enumerate() {
                    for (l, &j) in sub.nodes.iter().enumerate() {
                        prop_assert_eq!(sub.system.pi(k, l), sys.pi(i, j));
                    }
                }
            }
        }
    }
}
