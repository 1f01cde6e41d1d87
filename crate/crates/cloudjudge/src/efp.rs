//! Energy-flow polynomials: loopless multigraph enumeration and direct
//! evaluation of the correlators they index.
//!
//! A multigraph with `V` vertices and edge multiset `E` indexes the
//! observable
//!
//! ```text
//! EFP_G = sum over (i_1 .. i_V) of  prod_k z_{i_k} * prod_{(a,b) in E} theta_{i_a i_b}^beta
//! ```
//!
//! with `z_i = pt_rel_i` (optionally normalized so `sum z = 1`) and
//! `theta_ij = sqrt(d_eta^2 + d_phi^2)` using the wrapped angular
//! difference. Indices range over genuine particles only. At the scale
//! of interest (`V <= 4`, clouds of about 30 particles) the plain nested
//! sum is fast and trivially correct, so no contraction machinery is
//! used.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;
use thiserror::Error;

use crate::model::{wrap_phi, CloudSample, FeatureSeries, ParticleCloud};

/// Maximum number of isomorphism classes an enumeration may produce.
pub const DEFAULT_CLASS_BOUND: usize = 10_000;

#[derive(Debug, Error)]
pub enum EfpError {
    #[error("multigraph edge ({0}, {1}) is a self-loop")]
    SelfLoop(usize, usize),
    #[error("multigraph edge ({0}, {1}) references a vertex >= {2}")]
    VertexOutOfRange(usize, usize, usize),
    #[error("enumeration exceeded the class bound of {bound}")]
    ResourceLimit { bound: usize },
    #[error("multigraph text form is malformed: {0}")]
    ParseFailure(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// A loopless multigraph: a vertex count plus an edge multiset. Stored
/// with each edge as `(min, max)` and the list sorted, so equal values
/// mean equal labeled graphs.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Multigraph {
    n_vertices: usize,
    edges: Vec<(usize, usize)>,
}

impl Multigraph {
    pub fn new(n_vertices: usize, edges: Vec<(usize, usize)>) -> Result<Self, EfpError> {
        let mut normalized = Vec::with_capacity(edges.len());
        for (u, v) in edges {
            if u == v {
                return Err(EfpError::SelfLoop(u, v));
            }
            if u >= n_vertices || v >= n_vertices {
                return Err(EfpError::VertexOutOfRange(u, v, n_vertices));
            }
            normalized.push((u.min(v), u.max(v)));
        }
        normalized.sort_unstable();
        Ok(Self { n_vertices, edges: normalized })
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Edges as `(min, max)` pairs in sorted order, repeated by
    /// multiplicity.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// True when the graph is connected and spans all its vertices.
    /// The single vertex with no edges counts as connected.
    pub fn is_connected(&self) -> bool {
        if self.n_vertices == 0 {
            return false;
        }
        let mut seen = vec![false; self.n_vertices];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &(a, b) in &self.edges {
                let other = if a == u {
                    b
                } else if b == u {
                    a
                } else {
                    continue;
                };
                if !seen[other] {
                    seen[other] = true;
                    stack.push(other);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// The lexicographically smallest edge list over all vertex
    /// relabelings: equal canonical forms mean isomorphic graphs.
    pub fn canonical_form(&self) -> Vec<(usize, usize)> {
        let mut perm: Vec<usize> = (0..self.n_vertices).collect();
        let mut best: Option<Vec<(usize, usize)>> = None;
        permute(&mut perm, 0, &mut |p| {
            let mut relabeled: Vec<(usize, usize)> = self
                .edges
                .iter()
                .map(|&(u, v)| {
                    let (a, b) = (p[u], p[v]);
                    (a.min(b), a.max(b))
                })
                .collect();
            relabeled.sort_unstable();
            match &best {
                Some(b) if *b <= relabeled => {}
                _ => best = Some(relabeled),
            }
        });
        best.unwrap_or_default()
    }

    /// Relabel vertices into canonical form.
    pub fn canonicalize(&self) -> Multigraph {
        Multigraph { n_vertices: self.n_vertices, edges: self.canonical_form() }
    }
}

fn permute(perm: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == perm.len() {
        visit(perm);
        return;
    }
    for i in k..perm.len() {
        perm.swap(k, i);
        permute(perm, k + 1, visit);
        perm.swap(k, i);
    }
}

impl fmt::Display for Multigraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "V={}; E=[", self.n_vertices)?;
        for (i, (u, v)) in self.edges.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "({u},{v})")?;
        }
        write!(f, "]")
    }
}

impl FromStr for Multigraph {
    type Err = EfpError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |msg: &str| EfpError::ParseFailure(msg.to_string());
        let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let rest = s.strip_prefix("V=").ok_or_else(|| bad("expected 'V='"))?;
        let (v_str, rest) = rest.split_once(";E=[").ok_or_else(|| bad("expected '; E=['"))?;
        let n_vertices: usize = v_str.parse().map_err(|_| bad("vertex count is not a number"))?;
        let inner = rest.strip_suffix(']').ok_or_else(|| bad("expected closing ']'"))?;
        let mut edges = Vec::new();
        if !inner.is_empty() {
            for pair in inner.split("),(") {
                let pair = pair.trim_start_matches('(').trim_end_matches(')');
                let (u, v) = pair.split_once(',').ok_or_else(|| bad("edge is not a pair"))?;
                let u: usize = u.parse().map_err(|_| bad("edge vertex is not a number"))?;
                let v: usize = v.parse().map_err(|_| bad("edge vertex is not a number"))?;
                edges.push((u, v));
            }
        }
        Multigraph::new(n_vertices, edges)
    }
}

/// Measure configuration for the correlators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfpConfig {
    /// Exponent on the pairwise angular distances.
    pub beta: f64,
    /// Normalize the energy fractions so they sum to one per cloud.
    pub normalize_z: bool,
}

impl Default for EfpConfig {
    fn default() -> Self {
        Self { beta: 1.0, normalize_z: true }
    }
}

/// All loopless multigraphs with exactly `n_vertices` vertices and
/// `n_edges` edges, up to isomorphism, sorted lexicographically by
/// canonical edge list. With `connected_only`, only graphs that span all
/// vertices in one component are kept.
pub fn enumerate_multigraphs(
    n_vertices: usize,
    n_edges: usize,
    connected_only: bool,
) -> Result<Vec<Multigraph>, EfpError> {
    enumerate_multigraphs_bounded(n_vertices, n_edges, connected_only, DEFAULT_CLASS_BOUND)
}

/// [`enumerate_multigraphs`] with an explicit class bound.
pub fn enumerate_multigraphs_bounded(
    n_vertices: usize,
    n_edges: usize,
    connected_only: bool,
    bound: usize,
) -> Result<Vec<Multigraph>, EfpError> {
    assert!(n_vertices >= 1, "need at least one vertex");
    let pairs: Vec<(usize, usize)> =
        (0..n_vertices).flat_map(|u| (u + 1..n_vertices).map(move |v| (u, v))).collect();
    if n_edges > 0 && pairs.is_empty() {
        return Ok(Vec::new());
    }

    let mut classes: BTreeSet<Vec<(usize, usize)>> = BTreeSet::new();
    let mut choice = vec![0usize; n_edges];
    // Multisets of size n_edges over the distinct pairs, as non-decreasing
    // index sequences.
    let mut level = 0usize;
    loop {
        if level == n_edges {
            let edges: Vec<(usize, usize)> = choice.iter().map(|&i| pairs[i]).collect();
            let g = Multigraph { n_vertices, edges };
            if !connected_only || g.is_connected() {
                classes.insert(g.canonical_form());
                if classes.len() > bound {
                    return Err(EfpError::ResourceLimit { bound });
                }
            }
            if n_edges == 0 {
                break;
            }
            level -= 1;
            choice[level] += 1;
            continue;
        }
        if choice[level] >= pairs.len() {
            if level == 0 {
                break;
            }
            level -= 1;
            choice[level] += 1;
            continue;
        }
        if level + 1 < n_edges {
            choice[level + 1] = choice[level];
        }
        level += 1;
    }

    Ok(classes.into_iter().map(|edges| Multigraph { n_vertices, edges }).collect())
}

/// The five connected loopless multigraphs with four vertices and four
/// edges, the fixed set behind [`efp_set_features`].
pub fn default_graph_set() -> &'static [Multigraph] {
    static SET: OnceLock<Vec<Multigraph>> = OnceLock::new();
    SET.get_or_init(|| {
        enumerate_multigraphs(4, 4, true).expect("enumeration of the (4, 4) set cannot overflow")
    })
}

struct CloudTable {
    z: Vec<f64>,
    theta_beta: Vec<f64>,
    n: usize,
}

impl CloudTable {
    fn build(cloud: &ParticleCloud, cfg: &EfpConfig) -> Self {
        let parts = cloud.canonical_unmasked();
        let n = parts.len();
        let mut z: Vec<f64> = parts.iter().map(|p| p.0).collect();
        if cfg.normalize_z {
            let total: f64 = z.iter().sum();
            if total > 0.0 {
                for zi in &mut z {
                    *zi /= total;
                }
            }
        }
        let mut theta_beta = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d_eta = parts[i].1 - parts[j].1;
                let d_phi = wrap_phi(parts[i].2 - parts[j].2);
                let theta = (d_eta * d_eta + d_phi * d_phi).sqrt();
                let value = if cfg.beta == 1.0 {
                    theta
                } else if cfg.beta == 2.0 {
                    theta * theta
                } else {
                    theta.powf(cfg.beta)
                };
                theta_beta[i * n + j] = value;
                theta_beta[j * n + i] = value;
            }
        }
        Self { z, theta_beta, n }
    }

    fn evaluate(&self, g: &Multigraph) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        // Edge (u, v) with u < v contributes its factor once index v binds.
        let mut partners: Vec<Vec<usize>> = vec![Vec::new(); g.n_vertices()];
        for &(u, v) in g.edges() {
            partners[v].push(u);
        }
        let mut bound = vec![0usize; g.n_vertices()];
        let mut acc = 0.0;
        self.recurse(0, 1.0, &partners, &mut bound, &mut acc);
        acc
    }

    fn recurse(
        &self,
        vertex: usize,
        partial: f64,
        partners: &[Vec<usize>],
        bound: &mut [usize],
        acc: &mut f64,
    ) {
        let last = vertex + 1 == partners.len();
        for i in 0..self.n {
            let mut term = partial * self.z[i];
            for &u in &partners[vertex] {
                term *= self.theta_beta[bound[u] * self.n + i];
            }
            if last {
                *acc += term;
            } else if term != 0.0 {
                bound[vertex] = i;
                self.recurse(vertex + 1, term, partners, bound, acc);
            }
        }
    }
}

/// Evaluate one correlator on one cloud by direct nested summation over
/// genuine particles. Exactly invariant under slot permutations.
pub fn efp_value(cloud: &ParticleCloud, g: &Multigraph, cfg: &EfpConfig) -> f64 {
    CloudTable::build(cloud, cfg).evaluate(g)
}

/// Evaluate the fixed four-vertex four-edge set on every cloud of a
/// sample, returning one series per graph in canonical graph order.
pub fn efp_set_features(
    sample: &CloudSample,
    cfg: &EfpConfig,
) -> Result<Vec<FeatureSeries>, EfpError> {
    let graphs = default_graph_set();
    let rows: Vec<Vec<f64>> = sample
        .clouds()
        .par_iter()
        .map(|cloud| {
            let table = CloudTable::build(cloud, cfg);
            graphs.iter().map(|g| table.evaluate(g)).collect()
        })
        .collect();
    graphs
        .iter()
        .enumerate()
        .map(|(k, _)| {
            let values = rows.iter().map(|r| r[k]).collect();
            FeatureSeries::new(format!("efp_{k}"), values).map_err(EfpError::from)
        })
        .collect()
}
