//! Shared test oracles, each an independent route to a quantity the
//! library computes, kept deliberately naive.
#![allow(dead_code)] // each test target compiles its own subset

use cloudjudge::kinematics::jet_mass;
use cloudjudge::model::{wrap_phi, Particle, ParticleCloud};
use cloudjudge::rng::{substream, u64_below, uniform_f64};
use rand_chacha::ChaCha20Rng;

/// Exact 1-D Wasserstein distance by integrating |F_x^{-1} - F_y^{-1}|
/// over the merged quantile partition.
pub fn w1_quantile_oracle(x: &[f64], y: &[f64]) -> f64 {
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len(), ys.len());
    let mut total = 0.0;
    let mut q = 0.0f64;
    let mut ix = 0usize;
    let mut iy = 0usize;
    while ix < n && iy < m {
        let qx = (ix + 1) as f64 / n as f64;
        let qy = (iy + 1) as f64 / m as f64;
        let q_next = qx.min(qy);
        total += (xs[ix] - ys[iy]).abs() * (q_next - q);
        // Advance on exact rational boundary comparisons.
        let advance_x = (ix + 1) * m <= (iy + 1) * n;
        let advance_y = (iy + 1) * n <= (ix + 1) * m;
        if advance_x {
            ix += 1;
        }
        if advance_y {
            iy += 1;
        }
        q = q_next;
    }
    total
}

/// Loopless multigraph counting with pairwise isomorphism rejection:
/// every candidate edge multiset is compared against the accepted
/// representatives by trying all vertex permutations. No canonical
/// labeling involved.
pub fn brute_force_multigraph_count(v: usize, e: usize, connected_only: bool) -> usize {
    let pairs: Vec<(usize, usize)> = (0..v).flat_map(|a| (a + 1..v).map(move |b| (a, b))).collect();
    let mut reps: Vec<Vec<(usize, usize)>> = Vec::new();
    let mut choice = vec![0usize; e];
    enumerate_multisets(&pairs, &mut choice, 0, &mut |edges| {
        if connected_only && !spans_connected(v, edges) {
            return;
        }
        if !reps.iter().any(|r| isomorphic(v, r, edges)) {
            reps.push(edges.to_vec());
        }
    });
    reps.len()
}

fn enumerate_multisets(
    pairs: &[(usize, usize)],
    choice: &mut Vec<usize>,
    level: usize,
    visit: &mut impl FnMut(&[(usize, usize)]),
) {
    if level == choice.len() {
        let edges: Vec<(usize, usize)> = choice.iter().map(|&i| pairs[i]).collect();
        visit(&edges);
        return;
    }
    let start = if level == 0 { 0 } else { choice[level - 1] };
    for i in start..pairs.len() {
        choice[level] = i;
        enumerate_multisets(pairs, choice, level + 1, visit);
    }
}

fn spans_connected(v: usize, edges: &[(usize, usize)]) -> bool {
    let mut parent: Vec<usize> = (0..v).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        parent[ra] = rb;
    }
    let root = find(&mut parent, 0);
    (1..v).all(|x| find(&mut parent, x) == root)
}

fn isomorphic(v: usize, a: &[(usize, usize)], b: &[(usize, usize)]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let normalize = |edges: &[(usize, usize)]| {
        let mut e: Vec<(usize, usize)> = edges.iter().map(|&(x, y)| (x.min(y), x.max(y))).collect();
        e.sort_unstable();
        e
    };
    let target = normalize(b);
    let mut perm: Vec<usize> = (0..v).collect();
    let mut found = false;
    permute_all(&mut perm, 0, &mut |p| {
        if found {
            return;
        }
        let mapped: Vec<(usize, usize)> = a.iter().map(|&(x, y)| (p[x], p[y])).collect();
        if normalize(&mapped) == target {
            found = true;
        }
    });
    found
}

fn permute_all(perm: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == perm.len() {
        visit(perm);
        return;
    }
    for i in k..perm.len() {
        perm.swap(k, i);
        permute_all(perm, k + 1, visit);
        perm.swap(k, i);
    }
}

/// Transportation-polytope oracle: enumerate every basic feasible
/// solution (spanning-tree basis of the balanced bipartite problem),
/// solve the tree flows, and take the best feasible objective.
pub fn emd_oracle(a: &ParticleCloud, b: &ParticleCloud, radius: f64) -> f64 {
    let pa: Vec<(f64, f64, f64)> =
        a.unmasked().filter(|p| p.pt_rel > 0.0).map(|p| (p.pt_rel, p.eta_rel, p.phi_rel)).collect();
    let pb: Vec<(f64, f64, f64)> =
        b.unmasked().filter(|p| p.pt_rel > 0.0).map(|p| (p.pt_rel, p.eta_rel, p.phi_rel)).collect();
    let total_a: f64 = pa.iter().map(|p| p.0).sum();
    let total_b: f64 = pb.iter().map(|p| p.0).sum();
    let imbalance = (total_a - total_b).abs();
    if total_a == 0.0 || total_b == 0.0 {
        return imbalance;
    }

    let mut supply: Vec<f64> = pa.iter().map(|p| p.0).collect();
    let mut demand: Vec<f64> = pb.iter().map(|p| p.0).collect();
    if total_a > total_b {
        demand.push(total_a - total_b);
    } else if total_b > total_a {
        supply.push(total_b - total_a);
    }
    let m = supply.len();
    let n = demand.len();
    let mut cost = vec![0.0f64; m * n];
    for (i, &(_, ea, fa)) in pa.iter().enumerate() {
        for (j, &(_, eb, fb)) in pb.iter().enumerate() {
            let de = ea - eb;
            let df = wrap_phi(fa - fb);
            cost[i * n + j] = (de * de + df * df).sqrt() / radius;
        }
    }

    let cells: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let basis_size = m + n - 1;
    let mut best = f64::INFINITY;
    let mut subset = vec![0usize; basis_size];
    choose(cells.len(), basis_size, &mut subset, 0, 0, &mut |chosen| {
        let edges: Vec<(usize, usize)> = chosen.iter().map(|&c| cells[c]).collect();
        if let Some(objective) = tree_objective(&edges, &supply, &demand, &cost, m, n) {
            if objective < best {
                best = objective;
            }
        }
    });
    assert!(best.is_finite(), "no feasible basis found");
    best + imbalance
}

fn choose(
    n: usize,
    k: usize,
    subset: &mut Vec<usize>,
    level: usize,
    start: usize,
    visit: &mut impl FnMut(&[usize]),
) {
    if level == k {
        visit(subset);
        return;
    }
    for i in start..n {
        if n - i < k - level {
            break;
        }
        subset[level] = i;
        choose(n, k, subset, level + 1, i + 1, visit);
    }
}

/// Solve the flows on a candidate basis by leaf elimination; `None` when
/// the cells do not form a spanning tree or the solution is infeasible.
fn tree_objective(
    edges: &[(usize, usize)],
    supply: &[f64],
    demand: &[f64],
    cost: &[f64],
    m: usize,
    n: usize,
) -> Option<f64> {
    let nodes = m + n;
    let mut degree = vec![0usize; nodes];
    for &(i, j) in edges {
        degree[i] += 1;
        degree[m + j] += 1;
    }
    let mut rem: Vec<f64> = supply.iter().copied().chain(demand.iter().copied()).collect();
    let mut used = vec![false; edges.len()];
    let mut flows = vec![0.0f64; edges.len()];
    for _ in 0..edges.len() {
        // A node with exactly one unused incident edge.
        let Some(leaf) = degree.iter().position(|&d| d == 1) else {
            return None; // cycle: not a tree
        };
        let (e_idx, &(i, j)) = edges
            .iter()
            .enumerate()
            .find(|(idx, &(i, j))| !used[*idx] && (i == leaf || m + j == leaf))?;
        let flow = rem[leaf];
        flows[e_idx] = flow;
        used[e_idx] = true;
        degree[leaf] -= 1;
        let other = if i == leaf { m + j } else { i };
        degree[other] -= 1;
        rem[other] -= flow;
        rem[leaf] = 0.0;
    }
    if rem.iter().any(|&r| r.abs() > 1e-9) {
        return None; // disconnected: flows do not balance
    }
    if flows.iter().any(|&f| f < -1e-12) {
        return None; // infeasible vertex
    }
    let objective =
        edges.iter().zip(&flows).map(|(&(i, j), &f)| f.max(0.0) * cost[i * n + j]).sum();
    Some(objective)
}

/// Random valid cloud with up to `max_particles` genuine particles.
pub fn random_cloud(rng: &mut ChaCha20Rng, max_particles: usize, capacity: usize) -> ParticleCloud {
    let n = 1 + u64_below(rng, max_particles as u64) as usize;
    let mut slots: Vec<Particle> = (0..n)
        .map(|_| {
            Particle::genuine(
                0.8 * (uniform_f64(rng) - 0.5),
                0.8 * (uniform_f64(rng) - 0.5),
                0.05 + uniform_f64(rng),
            )
        })
        .collect();
    slots.resize(capacity, Particle::padding());
    ParticleCloud::new(slots, capacity)
}

/// Scale the angular features of a cloud so its mass hits `target`, by
/// bisection. Requires a positive starting mass.
pub fn scale_cloud_to_mass(cloud: &ParticleCloud, target: f64) -> ParticleCloud {
    let scaled = |s: f64| -> ParticleCloud {
        ParticleCloud::new(
            cloud
                .particles()
                .iter()
                .map(|p| {
                    if p.is_genuine() {
                        Particle { eta_rel: p.eta_rel * s, phi_rel: p.phi_rel * s, ..*p }
                    } else {
                        *p
                    }
                })
                .collect(),
            cloud.capacity(),
        )
    };
    let m0 = jet_mass(cloud);
    assert!(m0 > 0.0, "cannot rescale a massless cloud");
    let mut lo = 0.0f64;
    let mut hi = (target / m0).max(1.0) * 2.0;
    while jet_mass(&scaled(hi)) < target {
        hi *= 2.0;
        assert!(hi < 1e6, "mass target unreachable by angular scaling");
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if jet_mass(&scaled(mid)) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    let result = scaled(0.5 * (lo + hi));
    let achieved = jet_mass(&result);
    assert!(
        (achieved - target).abs() <= 1e-10 * target.max(1e-6),
        "bisection missed the mass target: {achieved} vs {target}"
    );
    result
}

/// L2 unimodal-regression bootstrap test of unimodality at significance
/// `alpha`: the statistic is the squared distance between the histogram
/// and its best rise-then-fall fit (independent prefix/suffix isotonic
/// fits, which is exact for unimodal regression); the null resamples
/// from the fitted unimodal histogram. Returns true when unimodality is
/// rejected.
pub fn rejects_unimodality(values: &[f64], bins: usize, alpha: f64, seed: u64) -> bool {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert!(hi > lo, "degenerate sample");
    let width = (hi - lo) / bins as f64;
    let bin_of = |v: f64| (((v - lo) / width) as usize).min(bins - 1);
    let mut counts = vec![0.0f64; bins];
    for &v in values {
        counts[bin_of(v)] += 1.0;
    }

    let (observed, fit) = unimodal_l2(&counts);

    // Parametric bootstrap from the fitted unimodal histogram.
    let total: f64 = fit.iter().sum();
    let cdf: Vec<f64> = fit
        .iter()
        .scan(0.0, |acc, &c| {
            *acc += c / total;
            Some(*acc)
        })
        .collect();
    let n = values.len();
    let replicates = 199;
    let mut rng = substream(seed, &[0xD1]);
    let mut at_least = 0usize;
    for _ in 0..replicates {
        let mut counts_b = vec![0.0f64; bins];
        for _ in 0..n {
            let u = uniform_f64(&mut rng);
            let b = cdf.partition_point(|&c| c < u).min(bins - 1);
            counts_b[b] += 1.0;
        }
        let (stat_b, _) = unimodal_l2(&counts_b);
        if stat_b >= observed {
            at_least += 1;
        }
    }
    let p = (at_least + 1) as f64 / (replicates + 1) as f64;
    p < alpha
}

/// Best unimodal (rise then fall) L2 fit of a histogram: minimum over
/// split points of independent increasing/decreasing isotonic fits.
/// Returns (squared error, fitted heights).
fn unimodal_l2(counts: &[f64]) -> (f64, Vec<f64>) {
    let b = counts.len();
    let incr_prefix = pava_prefix_errors(counts);
    let reversed: Vec<f64> = counts.iter().rev().copied().collect();
    let decr_suffix_rev = pava_prefix_errors(&reversed);

    let mut best = f64::INFINITY;
    let mut best_split = 0usize; // prefix [0..split) increasing, [split..) decreasing
    for split in 0..=b {
        let left = if split == 0 { 0.0 } else { incr_prefix[split - 1] };
        let right = if split == b { 0.0 } else { decr_suffix_rev[b - split - 1] };
        if left + right < best {
            best = left + right;
            best_split = split;
        }
    }
    let mut fit = vec![0.0f64; b];
    if best_split > 0 {
        let f = pava_fit(&counts[..best_split]);
        fit[..best_split].copy_from_slice(&f);
    }
    if best_split < b {
        let rev: Vec<f64> = counts[best_split..].iter().rev().copied().collect();
        let f = pava_fit(&rev);
        for (k, v) in f.iter().rev().enumerate() {
            fit[best_split + k] = *v;
        }
    }
    // Guard against an all-zero fit (cannot happen for non-empty data).
    if fit.iter().sum::<f64>() <= 0.0 {
        fit.clone_from_slice(counts);
    }
    (best, fit)
}

/// Pool-adjacent-violators for nondecreasing fits, returning the
/// squared error of every prefix.
fn pava_prefix_errors(y: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, f64, f64)> = Vec::new(); // (weight, sum, sumsq)
    let mut errors = Vec::with_capacity(y.len());
    for &v in y {
        blocks.push((1.0, v, v * v));
        while blocks.len() >= 2 {
            let (w2, s2, q2) = blocks[blocks.len() - 1];
            let (w1, s1, q1) = blocks[blocks.len() - 2];
            if s1 / w1 <= s2 / w2 {
                break;
            }
            blocks.pop();
            blocks.pop();
            blocks.push((w1 + w2, s1 + s2, q1 + q2));
        }
        let err: f64 = blocks.iter().map(|&(w, s, q)| q - s * s / w).sum();
        errors.push(err.max(0.0));
    }
    errors
}

/// Nondecreasing isotonic fit values.
fn pava_fit(y: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, f64, usize)> = Vec::new(); // (weight, sum, count)
    for &v in y {
        blocks.push((1.0, v, 1));
        while blocks.len() >= 2 {
            let (w2, s2, c2) = blocks[blocks.len() - 1];
            let (w1, s1, c1) = blocks[blocks.len() - 2];
            if s1 / w1 <= s2 / w2 {
                break;
            }
            blocks.pop();
            blocks.pop();
            blocks.push((w1 + w2, s1 + s2, c1 + c2));
        }
    }
    let mut out = Vec::with_capacity(y.len());
    for &(w, s, c) in &blocks {
        for _ in 0..c {
            out.push(s / w);
        }
    }
    out
}
