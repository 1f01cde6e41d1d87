//! Exact energy mover's distance between two particle clouds.
//!
//! The distance is the optimum of an unbalanced transport problem:
//! minimal `sum f_ij * theta_ij / R` over nonnegative flows moving the
//! smaller total `pt_rel` budget, plus the absolute total-`pt` difference.
//! The smaller-total side is augmented with a zero-cost virtual node and
//! the balanced problem is solved exactly by successive shortest paths
//! with node potentials (a primal-dual min-cost-flow method). Every
//! solve is certified: positive-flow arcs must have vanishing reduced
//! cost and the primal and dual objectives must agree, otherwise
//! [`EmdError::SolverFailure`] is raised.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{wrap_phi, CloudSample, ParticleCloud};

/// Tolerance on the optimality certificate (complementary slackness and
/// primal-dual gap).
const CERTIFICATE_TOL: f64 = 1e-7;

/// Supplies below this fraction of the total budget are treated as
/// exhausted, so accumulated round-off cannot stall the solver.
const DUST_REL: f64 = 1e-15;

#[derive(Debug, Error)]
pub enum EmdError {
    #[error("cloud has no unmasked particles")]
    EmptyCloud,
    #[error("optimality certificate failed (residual {residual:.3e})")]
    SolverFailure { residual: f64 },
    #[error("emd failed for pair ({row}, {col}): {source}")]
    Pair { row: usize, col: usize, source: Box<EmdError> },
}

/// Transport configuration: the angular normalization radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmdConfig {
    pub radius: f64,
}

impl Default for EmdConfig {
    fn default() -> Self {
        Self { radius: 0.8 }
    }
}

/// The solution certificate: a nonnegative flow matrix over the genuine
/// particles of the two clouds (in slot order) plus the objective value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    flow: Vec<f64>,
    n_rows: usize,
    n_cols: usize,
    pub objective: f64,
    pub created_total: f64,
    pub destroyed_total: f64,
}

impl TransportPlan {
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// Flow from source particle `i` to target particle `j`, both indexed
    /// over genuine slots in slot order.
    pub fn flow(&self, i: usize, j: usize) -> f64 {
        self.flow[i * self.n_cols + j]
    }

    pub fn flows(&self) -> &[f64] {
        &self.flow
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.flow[i * self.n_cols..(i + 1) * self.n_cols].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> f64 {
        (0..self.n_rows).map(|i| self.flow(i, j)).sum()
    }

    pub fn total_flow(&self) -> f64 {
        self.flow.iter().sum()
    }
}

fn theta(a: (f64, f64, f64), b: (f64, f64, f64)) -> f64 {
    let d_eta = a.1 - b.1;
    let d_phi = wrap_phi(a.2 - b.2);
    (d_eta * d_eta + d_phi * d_phi).sqrt()
}

/// Exact energy mover's distance and its transport plan.
///
/// Symmetric within solver round-off, nonnegative, and exactly invariant
/// under slot permutations of either cloud.
pub fn emd(
    a: &ParticleCloud,
    b: &ParticleCloud,
    cfg: &EmdConfig,
) -> Result<(f64, TransportPlan), EmdError> {
    assert!(cfg.radius > 0.0, "emd radius must be positive");
    let parts_a = a.canonical_unmasked();
    let parts_b = b.canonical_unmasked();
    if parts_a.is_empty() || parts_b.is_empty() {
        return Err(EmdError::EmptyCloud);
    }

    // Slot-order positions of the genuine particles, so the returned plan
    // is indexed the way callers see the clouds.
    let order_a = canonical_to_slot_order(a);
    let order_b = canonical_to_slot_order(b);

    let total_a: f64 = parts_a.iter().map(|p| p.0).sum();
    let total_b: f64 = parts_b.iter().map(|p| p.0).sum();
    let imbalance = (total_a - total_b).abs();
    let created = (total_b - total_a).max(0.0);
    let destroyed = (total_a - total_b).max(0.0);

    let n_rows = parts_a.len();
    let n_cols = parts_b.len();
    let mut plan = TransportPlan {
        flow: vec![0.0; n_rows * n_cols],
        n_rows,
        n_cols,
        objective: imbalance,
        created_total: created,
        destroyed_total: destroyed,
    };

    if total_a <= 0.0 || total_b <= 0.0 {
        // No transportable budget on one side: pure creation/destruction.
        return Ok((imbalance, plan));
    }

    // Solver indices over particles with positive pt only.
    let src: Vec<usize> = (0..n_rows).filter(|&i| parts_a[i].0 > 0.0).collect();
    let snk: Vec<usize> = (0..n_cols).filter(|&j| parts_b[j].0 > 0.0).collect();
    let mut supply: Vec<f64> = src.iter().map(|&i| parts_a[i].0).collect();
    let mut demand: Vec<f64> = snk.iter().map(|&j| parts_b[j].0).collect();

    // Balance with a zero-cost virtual node on the smaller-total side.
    let has_virtual_snk = total_a > total_b;
    let has_virtual_src = total_b > total_a;
    if has_virtual_snk {
        demand.push(total_a - total_b);
    }
    if has_virtual_src {
        supply.push(total_b - total_a);
    }

    let ns = supply.len();
    let nt = demand.len();
    let mut cost = vec![0.0; ns * nt];
    for (si, &i) in src.iter().enumerate() {
        for (sj, &j) in snk.iter().enumerate() {
            cost[si * nt + sj] = theta(parts_a[i], parts_b[j]) / cfg.radius;
        }
    }
    // Virtual rows/columns keep cost zero.

    let solution = solve_transport(&supply, &demand, &cost, ns, nt)?;

    let mut transport_cost = 0.0;
    for (si, &i) in src.iter().enumerate() {
        for (sj, &j) in snk.iter().enumerate() {
            let f = solution.flow[si * nt + sj];
            if f != 0.0 {
                transport_cost += f * cost[si * nt + sj];
                plan.flow[order_a[i] * n_cols + order_b[j]] = f;
            }
        }
    }

    let distance = transport_cost + imbalance;
    plan.objective = distance;
    Ok((distance, plan))
}

/// Map canonical-order index -> slot-order index over genuine particles.
fn canonical_to_slot_order(cloud: &ParticleCloud) -> Vec<usize> {
    let keys: Vec<(f64, f64, f64)> =
        cloud.unmasked().map(|p| (p.pt_rel, p.eta_rel, p.phi_rel)).collect();
    let mut slots: Vec<usize> = (0..keys.len()).collect();
    slots.sort_by(|&x, &y| {
        keys[x]
            .0
            .total_cmp(&keys[y].0)
            .then(keys[x].1.total_cmp(&keys[y].1))
            .then(keys[x].2.total_cmp(&keys[y].2))
    });
    slots
}

/// Pairwise distances; row `i`, column `j` holds `emd(xs[i], ys[j])`.
pub fn emd_matrix(
    xs: &CloudSample,
    ys: &CloudSample,
    cfg: &EmdConfig,
) -> Result<Vec<Vec<f64>>, EmdError> {
    xs.clouds()
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            ys.clouds()
                .iter()
                .enumerate()
                .map(|(j, y)| {
                    emd(x, y, cfg).map(|(d, _)| d).map_err(|e| EmdError::Pair {
                        row: i,
                        col: j,
                        source: Box::new(e),
                    })
                })
                .collect::<Result<Vec<f64>, EmdError>>()
        })
        .collect()
}

struct TransportSolution {
    flow: Vec<f64>,
}

#[derive(Clone, Copy)]
enum Parent {
    None,
    /// Sink reached from this source.
    Src(usize),
    /// Source reached back from this sink along a positive-flow arc.
    Snk(usize),
}

/// Successive shortest paths with potentials on a dense bipartite
/// transportation problem. Supplies and demands must be positive and
/// balanced up to round-off.
fn solve_transport(
    supply: &[f64],
    demand: &[f64],
    cost: &[f64],
    ns: usize,
    nt: usize,
) -> Result<TransportSolution, EmdError> {
    let total: f64 = supply.iter().sum();
    let dust = DUST_REL * total.max(1e-300);

    let mut rem_s = supply.to_vec();
    let mut rem_d = demand.to_vec();
    let mut flow = vec![0.0f64; ns * nt];
    let mut pi_s = vec![0.0f64; ns];
    let mut pi_t = vec![0.0f64; nt];

    let n_nodes = ns + nt;
    let mut dist = vec![f64::INFINITY; n_nodes];
    let mut parent = vec![Parent::None; n_nodes];
    let mut visited = vec![false; n_nodes];

    let max_iterations = 8 * n_nodes + 32;
    let mut iterations = 0usize;

    loop {
        let any_supply = rem_s.iter().any(|&s| s > dust);
        let any_demand = rem_d.iter().any(|&d| d > dust);
        if !any_supply || !any_demand {
            break;
        }
        iterations += 1;
        if iterations > max_iterations {
            return Err(EmdError::SolverFailure { residual: f64::INFINITY });
        }

        // Dijkstra on reduced costs from every source with remaining supply.
        for v in 0..n_nodes {
            dist[v] = f64::INFINITY;
            parent[v] = Parent::None;
            visited[v] = false;
        }
        for i in 0..ns {
            if rem_s[i] > dust {
                dist[i] = 0.0;
            }
        }
        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for v in 0..n_nodes {
                if !visited[v] && dist[v] < best {
                    best = dist[v];
                    u = v;
                }
            }
            if u == usize::MAX {
                break;
            }
            visited[u] = true;
            if u < ns {
                let i = u;
                let base = dist[u];
                for j in 0..nt {
                    let rc = (cost[i * nt + j] + pi_s[i] - pi_t[j]).max(0.0);
                    let nd = base + rc;
                    if nd < dist[ns + j] {
                        dist[ns + j] = nd;
                        parent[ns + j] = Parent::Src(i);
                    }
                }
            } else {
                let j = u - ns;
                let base = dist[u];
                for i in 0..ns {
                    if flow[i * nt + j] > 0.0 {
                        let rc = (pi_t[j] - pi_s[i] - cost[i * nt + j]).max(0.0);
                        let nd = base + rc;
                        if nd < dist[i] {
                            dist[i] = nd;
                            parent[i] = Parent::Snk(j);
                        }
                    }
                }
            }
        }

        // Cheapest sink that still needs mass.
        let mut target = usize::MAX;
        let mut target_dist = f64::INFINITY;
        for j in 0..nt {
            if rem_d[j] > dust && dist[ns + j] < target_dist {
                target_dist = dist[ns + j];
                target = j;
            }
        }
        if target == usize::MAX {
            return Err(EmdError::SolverFailure { residual: f64::INFINITY });
        }

        // Capped potential update keeps reduced costs nonnegative.
        for i in 0..ns {
            pi_s[i] += dist[i].min(target_dist);
        }
        for j in 0..nt {
            pi_t[j] += dist[ns + j].min(target_dist);
        }

        // Walk the augmenting path back to a source and find the bottleneck.
        let mut path: Vec<(usize, usize, bool)> = Vec::new(); // (i, j, forward)
        let mut bottleneck = rem_d[target];
        let mut node = ns + target;
        let start_src = loop {
            match parent[node] {
                Parent::Src(i) => {
                    let j = node - ns;
                    path.push((i, j, true));
                    node = i;
                    if matches!(parent[node], Parent::None) {
                        break i;
                    }
                }
                Parent::Snk(j) => {
                    let i = node;
                    bottleneck = bottleneck.min(flow[i * nt + j]);
                    path.push((i, j, false));
                    node = ns + j;
                }
                Parent::None => {
                    return Err(EmdError::SolverFailure { residual: f64::INFINITY });
                }
            }
        };
        bottleneck = bottleneck.min(rem_s[start_src]);
        if bottleneck <= 0.0 {
            return Err(EmdError::SolverFailure { residual: f64::INFINITY });
        }

        for &(i, j, forward) in &path {
            if forward {
                flow[i * nt + j] += bottleneck;
            } else {
                let f = flow[i * nt + j] - bottleneck;
                flow[i * nt + j] = if f < 0.0 { 0.0 } else { f };
            }
        }
        rem_s[start_src] = zero_if_exhausted(rem_s[start_src] - bottleneck, dust);
        rem_d[target] = zero_if_exhausted(rem_d[target] - bottleneck, dust);
    }

    // Optimality certificate: complementary slackness plus strong duality.
    let mut residual = 0.0f64;
    let mut primal = 0.0f64;
    for i in 0..ns {
        for j in 0..nt {
            let reduced = cost[i * nt + j] + pi_s[i] - pi_t[j];
            if flow[i * nt + j] > 0.0 {
                residual = residual.max(reduced.abs());
                primal += flow[i * nt + j] * cost[i * nt + j];
            }
            if reduced < -CERTIFICATE_TOL {
                return Err(EmdError::SolverFailure { residual: -reduced });
            }
        }
    }
    if residual > CERTIFICATE_TOL {
        return Err(EmdError::SolverFailure { residual });
    }
    let dual: f64 = demand.iter().zip(&pi_t).map(|(d, p)| d * p).sum::<f64>()
        - supply.iter().zip(&pi_s).map(|(s, p)| s * p).sum::<f64>();
    let gap = (primal - dual).abs();
    if gap > CERTIFICATE_TOL * primal.abs().max(1.0) {
        return Err(EmdError::SolverFailure { residual: gap });
    }

    Ok(TransportSolution { flow })
}

fn zero_if_exhausted(value: f64, dust: f64) -> f64 {
    if value <= dust {
        0.0
    } else {
        value
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{JetClass, Particle, ParticleCloud};
    use approx::assert_relative_eq;

    fn cloud(parts: &[(f64, f64, f64)]) -> ParticleCloud {
        ParticleCloud::from_genuine(parts.iter().copied(), parts.len())
    }

    #[test]
    fn identical_clouds_have_zero_distance() {
        let a = cloud(&[(0.1, -0.2, 0.6), (-0.1, 0.2, 0.4)]);
        let (d, plan) = emd(&a, &a, &EmdConfig::default()).unwrap();
        assert!(d.abs() <= 1e-12);
        assert_relative_eq!(plan.total_flow(), 1.0, max_relative = 1e-9);
    }

    #[test]
    fn single_particle_pair_closed_form() {
        // Unit pt on both sides, angular separation 0.4, radius 0.8.
        let a = cloud(&[(0.0, 0.0, 1.0)]);
        let b = cloud(&[(0.4, 0.0, 1.0)]);
        let (d, plan) = emd(&a, &b, &EmdConfig { radius: 0.8 }).unwrap();
        assert_relative_eq!(d, 0.5, max_relative = 1e-12);
        assert_relative_eq!(plan.flow(0, 0), 1.0, max_relative = 1e-12);
        assert_eq!(plan.created_total, 0.0);
        assert_eq!(plan.destroyed_total, 0.0);
    }

    #[test]
    fn pure_pt_difference_term() {
        let a = cloud(&[(0.0, 0.0, 1.0)]);
        let b = cloud(&[(0.0, 0.0, 0.7)]);
        let (d, plan) = emd(&a, &b, &EmdConfig::default()).unwrap();
        assert_relative_eq!(d, 0.3, max_relative = 1e-12);
        assert_relative_eq!(plan.destroyed_total, 0.3, max_relative = 1e-12);
        assert_eq!(plan.created_total, 0.0);
        assert_relative_eq!(plan.total_flow(), 0.7, max_relative = 1e-9);
    }

    #[test]
    fn empty_cloud_is_rejected() {
        let a = cloud(&[(0.0, 0.0, 1.0)]);
        let empty = ParticleCloud::new(vec![Particle::padding()], 1);
        assert!(matches!(emd(&a, &empty, &EmdConfig::default()), Err(EmdError::EmptyCloud)));
        assert!(matches!(emd(&empty, &a, &EmdConfig::default()), Err(EmdError::EmptyCloud)));
    }

    #[test]
    fn distance_is_symmetric() {
        let a = cloud(&[(0.1, -0.3, 0.5), (0.0, 0.2, 0.3), (-0.2, 0.0, 0.4)]);
        let b = cloud(&[(0.05, 0.1, 0.6), (-0.15, -0.1, 0.2)]);
        let (dab, _) = emd(&a, &b, &EmdConfig::default()).unwrap();
        let (dba, _) = emd(&b, &a, &EmdConfig::default()).unwrap();
        assert!((dab - dba).abs() <= 1e-9);
    }

    #[test]
    fn distance_is_exactly_permutation_invariant() {
        let slots = vec![
            Particle::genuine(0.1, -0.3, 0.5),
            Particle::genuine(0.0, 0.2, 0.3),
            Particle::genuine(-0.2, 0.0, 0.4),
        ];
        let a = ParticleCloud::new(slots.clone(), 3);
        let a_perm = ParticleCloud::new(vec![slots[2], slots[0], slots[1]], 3);
        let b = cloud(&[(0.05, 0.1, 0.6), (-0.15, -0.1, 0.2)]);
        let (d1, _) = emd(&a, &b, &EmdConfig::default()).unwrap();
        let (d2, _) = emd(&a_perm, &b, &EmdConfig::default()).unwrap();
        assert_eq!(d1.to_bits(), d2.to_bits());
    }

    #[test]
    fn scaling_by_powers_of_two_is_exact() {
        let a = cloud(&[(0.1, -0.3, 0.5), (0.0, 0.2, 0.3)]);
        let b = cloud(&[(0.05, 0.1, 0.6), (-0.15, -0.1, 0.25)]);
        let (d, _) = emd(&a, &b, &EmdConfig::default()).unwrap();
        for lambda in [0.5f64, 2.0, 4.0] {
            let scale = |c: &ParticleCloud| {
                ParticleCloud::new(
                    c.particles()
                        .iter()
                        .map(|p| Particle { pt_rel: p.pt_rel * lambda, ..*p })
                        .collect(),
                    c.capacity(),
                )
            };
            let (ds, _) = emd(&scale(&a), &scale(&b), &EmdConfig::default()).unwrap();
            assert_eq!(ds.to_bits(), (lambda * d).to_bits());
        }
    }

    #[test]
    fn plan_satisfies_marginal_invariants() {
        let a = cloud(&[(0.1, -0.3, 0.5), (0.0, 0.2, 0.3), (-0.2, 0.0, 0.4)]);
        let b = cloud(&[(0.05, 0.1, 0.6), (-0.15, -0.1, 0.2)]);
        let (d, plan) = emd(&a, &b, &EmdConfig::default()).unwrap();
        let supplies: Vec<f64> = a.unmasked().map(|p| p.pt_rel).collect();
        let demands: Vec<f64> = b.unmasked().map(|p| p.pt_rel).collect();
        for (i, &s) in supplies.iter().enumerate() {
            assert!(plan.row_sum(i) <= s + 1e-9);
        }
        for (j, &t) in demands.iter().enumerate() {
            assert!(plan.col_sum(j) <= t + 1e-9);
        }
        let total_a: f64 = supplies.iter().sum();
        let total_b: f64 = demands.iter().sum();
        assert!((plan.total_flow() - total_a.min(total_b)).abs() <= 1e-9);
        assert!((plan.objective - d).abs() <= 1e-12);
    }

    #[test]
    fn zero_pt_particles_do_not_contribute() {
        let a = cloud(&[(0.1, -0.3, 0.5), (0.9, 0.9, 0.0)]);
        let b = cloud(&[(0.1, -0.3, 0.5)]);
        let (d, plan) = emd(&a, &b, &EmdConfig::default()).unwrap();
        assert!(d.abs() <= 1e-12);
        assert_eq!(plan.n_rows(), 2);
        assert_eq!(plan.row_sum(1), 0.0);
    }

    #[test]
    fn matrix_matches_elementwise_calls() {
        let cfg = EmdConfig::default();
        let clouds_x = vec![
            cloud(&[(0.1, -0.3, 0.5), (0.0, 0.2, 0.5)]),
            cloud(&[(0.0, 0.0, 1.0)]),
            cloud(&[(-0.2, 0.1, 0.4), (0.2, -0.1, 0.6)]),
        ];
        let clouds_y = clouds_x.clone();
        let pad = |mut cs: Vec<ParticleCloud>| {
            for c in &mut cs {
                let mut slots = c.particles().to_vec();
                slots.resize(2, Particle::padding());
                *c = ParticleCloud::new(slots, 2);
            }
            cs
        };
        let xs = CloudSample::new(pad(clouds_x), JetClass::Toy, None).unwrap();
        let ys = CloudSample::new(pad(clouds_y), JetClass::Toy, None).unwrap();
        let matrix = emd_matrix(&xs, &ys, &cfg).unwrap();
        for (i, row) in matrix.iter().enumerate() {
            assert!(row[i].abs() <= 1e-12);
            for (j, &entry) in row.iter().enumerate() {
                let (d, _) = emd(&xs.clouds()[i], &ys.clouds()[j], &cfg).unwrap();
                assert_eq!(entry.to_bits(), d.to_bits());
            }
        }
    }

    #[test]
    fn one_by_one_matrix_equals_pair_distance() {
        let xs = CloudSample::new(vec![cloud(&[(0.0, 0.0, 1.0)])], JetClass::Toy, None).unwrap();
        let ys = CloudSample::new(vec![cloud(&[(0.3, 0.0, 1.0)])], JetClass::Toy, None).unwrap();
        let matrix = emd_matrix(&xs, &ys, &EmdConfig::default()).unwrap();
        let (d, _) = emd(&xs.clouds()[0], &ys.clouds()[0], &EmdConfig::default()).unwrap();
        assert_eq!(matrix, vec![vec![d]]);
    }
}
