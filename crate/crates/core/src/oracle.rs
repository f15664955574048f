//! Brute-force fixed point finders for small systems.
//!
//! Neither oracle uses the node partition or the bracketed solver. They exist
//! to check [`crate::solver::solve_clearing`] from the outside.
//!
//! `oracle_default_sets` relies on the fact that at a fixed point every node
//! either pays its obligation in full or pays exactly its inflow. For each
//! guess `F` of the full-payment set it solves the resulting linear system.
//! A singular system means a cashless closed block among the defaulting
//! nodes; its null space is spanned by that block's stationary distribution
//! and yields a one-parameter family of fixed points.

use thiserror::Error;

use crate::model::{
    check_absolute_priority, check_limited_liability, sup_distance, FinancialSystem,
};
use crate::solver::apply_phi;

pub const DEFAULT_SET_MAX_NODES: usize = 12;
pub const GRID_MAX_NODES: usize = 4;
pub const GRID_MAX_STEPS: usize = 50;
pub const DEDUP_TOL: f64 = 1e-8;

const PIVOT_TOL: f64 = 1e-12;
const CONSTRAINT_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("{oracle} oracle supports at most {limit} (got {got})")]
    SizeLimit {
        oracle: &'static str,
        limit: usize,
        got: usize,
    },
}

/// A segment `base + t * direction`, `t` in `[t_min, t_max]`, of fixed points.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointFamily {
    pub base: Vec<f64>,
    pub direction: Vec<f64>,
    pub t_min: f64,
    pub t_max: f64,
}

impl FixedPointFamily {
    pub fn at(&self, t: f64) -> Vec<f64> {
        self.base
            .iter()
            .zip(&self.direction)
            .map(|(b, d)| b + t * d)
            .collect()
    }

    /// Parameter `t` with `at(t)` within `tol` of `point`, if any.
    pub fn locate(&self, point: &[f64], tol: f64) -> Option<f64> {
        let (k, &d) = self
            .direction
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))?;
        if d == 0.0 {
            return None;
        }
        let t = (point[k] - self.base[k]) / d;
        if t < self.t_min - tol || t > self.t_max + tol {
            return None;
        }
        let t = t.clamp(self.t_min, self.t_max);
        (sup_distance(&self.at(t), point) <= tol).then_some(t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointSet {
    /// Distinct fixed points found, sorted lexicographically.
    pub points: Vec<Vec<f64>>,
    pub is_singleton: bool,
    pub continuum_detected: bool,
    pub families: Vec<FixedPointFamily>,
    /// Full-payment sets whose linear system was singular, as sorted node lists.
    pub singular_candidates: Vec<Vec<usize>>,
}

impl FixedPointSet {
    fn assemble(
        sys: &FinancialSystem,
        mut points: Vec<Vec<f64>>,
        families: Vec<FixedPointFamily>,
        singular_candidates: Vec<Vec<usize>>,
    ) -> Self {
        points.sort_by(|a, b| {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut unique: Vec<Vec<f64>> = Vec::new();
        for p in points {
            if !unique.iter().any(|q| sup_distance(q, &p) <= DEDUP_TOL) {
                unique.push(p);
            }
        }
        let segment_found = families.iter().any(|f| f.t_max - f.t_min > DEDUP_TOL);
        let continuum_detected = segment_found || has_fixed_midpoint(sys, &unique);
        FixedPointSet {
            is_singleton: unique.len() == 1 && !continuum_detected,
            continuum_detected,
            points: unique,
            families,
            singular_candidates,
        }
    }

    /// Whether `point` is one of the listed points or lies on a family.
    pub fn contains(&self, point: &[f64], tol: f64) -> bool {
        self.points.iter().any(|q| sup_distance(q, point) <= tol)
            || self.families.iter().any(|f| f.locate(point, tol).is_some())
    }
}

/// Two distinct fixed points whose midpoint is also fixed.
fn has_fixed_midpoint(sys: &FinancialSystem, points: &[Vec<f64>]) -> bool {
    points.iter().enumerate().any(|(a, p)| {
        points[a + 1..].iter().any(|q| {
            let mid: Vec<f64> = p.iter().zip(q).map(|(x, y)| (x + y) / 2.0).collect();
            apply_phi(sys, &mid).sup_distance(&mid) <= DEDUP_TOL
        })
    })
}

fn is_verified(sys: &FinancialSystem, p: &[f64], tol: f64) -> bool {
    p.iter()
        .zip(sys.p_bar())
        .all(|(&x, &bar)| x >= -tol && x <= bar + tol)
        && check_limited_liability(sys, p, tol).all()
        && check_absolute_priority(sys, p, tol).all()
        && apply_phi(sys, p).sup_distance(p) <= tol
}

/// Reduced row echelon form of an augmented system, solved in place.
struct Echelon {
    /// Pivot column of each nonzero row.
    pivots: Vec<usize>,
    consistent: bool,
    rows: Vec<Vec<f64>>,
    cols: usize,
}

fn row_reduce(mut rows: Vec<Vec<f64>>, cols: usize) -> Echelon {
    let scale = rows
        .iter()
        .flat_map(|r| r[..cols].iter())
        .fold(1.0f64, |m, x| m.max(x.abs()));
    let tol = PIVOT_TOL * scale;
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        if r == rows.len() {
            break;
        }
        let (best, size) = (r..rows.len())
            .map(|i| (i, rows[i][c].abs()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("rows remain");
        if size <= tol {
            for row in rows.iter_mut().skip(r) {
                row[c] = 0.0;
            }
            continue;
        }
        rows.swap(r, best);
        let lead = rows[r][c];
        for x in rows[r].iter_mut() {
            *x /= lead;
        }
        for i in 0..rows.len() {
            if i != r {
                let f = rows[i][c];
                if f != 0.0 {
                    for k in 0..=cols {
                        rows[i][k] -= f * rows[r][k];
                    }
                }
            }
        }
        pivots.push(c);
        r += 1;
    }
    let consistent = rows[r..]
        .iter()
        .all(|row| row[cols].abs() <= tol.max(1e-10));
    Echelon {
        pivots,
        consistent,
        rows,
        cols,
    }
}

impl Echelon {
    /// Solution with every free variable set to zero.
    fn particular(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.cols];
        for (r, &c) in self.pivots.iter().enumerate() {
            x[c] = self.rows[r][self.cols];
        }
        x
    }

    fn null_basis(&self) -> Vec<Vec<f64>> {
        (0..self.cols)
            .filter(|c| !self.pivots.contains(c))
            .map(|free| {
                let mut v = vec![0.0; self.cols];
                v[free] = 1.0;
                for (r, &c) in self.pivots.iter().enumerate() {
                    v[c] = -self.rows[r][free];
                }
                v
            })
            .collect()
    }
}

/// Range of `t` keeping `lo <= a + t b <= hi`, intersected with `range`.
fn clip(range: (f64, f64), a: f64, b: f64, lo: f64, hi: f64) -> (f64, f64) {
    let (mut t0, mut t1) = range;
    if b.abs() <= PIVOT_TOL {
        if a < lo - CONSTRAINT_SLACK || a > hi + CONSTRAINT_SLACK {
            return (1.0, 0.0);
        }
        return range;
    }
    let (x, y) = ((lo - a) / b, (hi - a) / b);
    let (x, y) = if b > 0.0 { (x, y) } else { (y, x) };
    t0 = t0.max(x);
    t1 = t1.min(y);
    (t0, t1)
}

/// Enumerates all `2^n` full-payment sets.
pub fn oracle_default_sets(sys: &FinancialSystem, tol: f64) -> Result<FixedPointSet, OracleError> {
    let n = sys.n();
    if n > DEFAULT_SET_MAX_NODES {
        return Err(OracleError::SizeLimit {
            oracle: "default-set",
            limit: DEFAULT_SET_MAX_NODES,
            got: n,
        });
    }
    let mut points = Vec::new();
    let mut families = Vec::new();
    let mut singular = Vec::new();

    for mask in 0u32..(1 << n) {
        let full: Vec<bool> = (0..n).map(|j| mask & (1 << j) != 0).collect();
        let defaulting: Vec<usize> = (0..n).filter(|&j| !full[j]).collect();
        let d = defaulting.len();

        // p(j) - sum_{i in D} p(i) pi(i, j) = e(j) + sum_{i in F} p_bar(i) pi(i, j), j in D
        let rows: Vec<Vec<f64>> = defaulting
            .iter()
            .map(|&j| {
                let mut row: Vec<f64> = defaulting
                    .iter()
                    .map(|&i| if i == j { 1.0 } else { 0.0 } - sys.pi(i, j))
                    .collect();
                let rhs = sys.e()[j]
                    + (0..n)
                        .filter(|&i| full[i])
                        .map(|i| sys.p_bar()[i] * sys.pi(i, j))
                        .sum::<f64>();
                row.push(rhs);
                row
            })
            .collect();

        let embed = |x: &[f64]| -> Vec<f64> {
            let mut p: Vec<f64> = sys.p_bar().to_vec();
            for (&j, &v) in defaulting.iter().zip(x) {
                p[j] = v;
            }
            p
        };

        if d == 0 {
            let p = sys.p_bar().to_vec();
            if is_verified(sys, &p, tol) {
                points.push(p);
            }
            continue;
        }

        let ech = row_reduce(rows, d);
        if !ech.consistent {
            continue;
        }
        let x0 = ech.particular();
        let basis = ech.null_basis();
        if basis.is_empty() {
            let p = embed(&x0);
            if is_verified(sys, &p, tol) {
                points.push(
                    p.iter()
                        .zip(sys.p_bar())
                        .map(|(x, b)| x.clamp(0.0, *b))
                        .collect(),
                );
            }
            continue;
        }

        singular.push(defaulting.clone());
        let base = embed(&x0);
        let mut feasible = true;
        let mut low_corner = base.clone();
        let mut high_corner = base.clone();
        let mut local = Vec::with_capacity(basis.len());
        for v in &basis {
            let mut direction = vec![0.0; n];
            for (&j, &x) in defaulting.iter().zip(v) {
                direction[j] = x;
            }
            // box constraints and limited liability, both affine in t
            let mut range = (f64::NEG_INFINITY, f64::INFINITY);
            for j in 0..n {
                range = clip(range, base[j], direction[j], 0.0, sys.p_bar()[j]);
            }
            let x_base = crate::model::inflow(sys, &base);
            let x_dir: Vec<f64> = (0..n)
                .map(|j| (0..n).map(|i| direction[i] * sys.pi(i, j)).sum())
                .collect();
            for j in 0..n {
                // base_j + t dir_j <= x_base_j + t x_dir_j
                range = clip(
                    range,
                    base[j] - x_base[j],
                    direction[j] - x_dir[j],
                    f64::NEG_INFINITY,
                    0.0,
                );
            }
            if range.0 > range.1 + tol {
                feasible = false;
                break;
            }
            let (t_min, t_max) = (range.0, range.1.max(range.0));
            for (corner, t) in [(&mut low_corner, t_min), (&mut high_corner, t_max)] {
                for (c, d) in corner.iter_mut().zip(&direction) {
                    *c += t * d;
                }
            }
            local.push(FixedPointFamily {
                base: base.clone(),
                direction,
                t_min,
                t_max,
            });
        }
        if !feasible {
            continue;
        }
        families.extend(local);
        for corner in [low_corner, high_corner] {
            if is_verified(sys, &corner, tol.max(DEDUP_TOL)) {
                points.push(corner);
            }
        }
    }

    // keep only families whose endpoints really are fixed points
    families.retain(|f| {
        is_verified(sys, &f.at(f.t_min), tol.max(DEDUP_TOL))
            && is_verified(sys, &f.at(f.t_max), tol.max(DEDUP_TOL))
    });
    for f in &families {
        points.push(f.at(f.t_min));
        points.push(f.at(f.t_max));
    }
    Ok(FixedPointSet::assemble(sys, points, families, singular))
}

/// Starts the operator from every point of a uniform grid over `[0, p_bar]`
/// and keeps the limits that verify as fixed points.
pub fn oracle_grid_fixed_points(
    sys: &FinancialSystem,
    grid_steps: usize,
    tol: f64,
) -> Result<FixedPointSet, OracleError> {
    let n = sys.n();
    if n > GRID_MAX_NODES {
        return Err(OracleError::SizeLimit {
            oracle: "grid",
            limit: GRID_MAX_NODES,
            got: n,
        });
    }
    if grid_steps > GRID_MAX_STEPS {
        return Err(OracleError::SizeLimit {
            oracle: "grid steps",
            limit: GRID_MAX_STEPS,
            got: grid_steps,
        });
    }
    let steps = grid_steps.max(1);
    let max_iter = 200 * n + 200;
    let mut points: Vec<Vec<f64>> = Vec::new();
    let mut index = vec![0usize; n];
    loop {
        let mut p: Vec<f64> = index
            .iter()
            .zip(sys.p_bar())
            .map(|(&k, &bar)| bar * k as f64 / steps as f64)
            .collect();
        for _ in 0..max_iter {
            let next = apply_phi(sys, &p).into_inner();
            let step = sup_distance(&next, &p);
            p = next;
            if step <= tol / 10.0 {
                break;
            }
        }
        if is_verified(sys, &p, tol) && !points.iter().any(|q| sup_distance(q, &p) <= DEDUP_TOL) {
            points.push(p);
        }

        // odometer over the grid
        let mut k = 0;
        while k < n && index[k] == steps {
            index[k] = 0;
            k += 1;
        }
        if k == n {
            break;
        }
        index[k] += 1;
    }
    Ok(FixedPointSet::assemble(sys, points, Vec::new(), Vec::new()))
}
