//! Planted-partition random graphs and the spectra of their expected
//! adjacency.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::mix;
use crate::graph::{normalized_laplacian, BipartiteGraph, SparseSymmetricMatrix};

const MAX_ATTEMPTS: u64 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmSpec {
    /// Nodes per community. In the bipartite variant a community of size `s`
    /// has `⌈s/2⌉` users and `⌊s/2⌋` items.
    pub sizes: Vec<usize>,
    pub intra_p: f64,
    pub inter_p: f64,
    pub bipartite: bool,
    pub seed: u64,
}

impl SbmSpec {
    /// `k` communities sharing `n` nodes as evenly as possible.
    pub fn equal(k: usize, n: usize, intra_p: f64, inter_p: f64, bipartite: bool, seed: u64) -> Self {
        let sizes = (0..k).map(|c| n / k + usize::from(c < n % k)).collect();
        Self {
            sizes,
            intra_p,
            inter_p,
            bipartite,
            seed,
        }
    }

    pub fn communities(&self) -> usize {
        self.sizes.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    /// Same proportions at `n` nodes (largest-remainder rounding).
    pub fn resized(&self, n: usize) -> Self {
        let total = self.num_nodes().max(1) as f64;
        let exact: Vec<f64> = self.sizes.iter().map(|&s| s as f64 * n as f64 / total).collect();
        let mut sizes: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
        let mut order: Vec<usize> = (0..sizes.len()).collect();
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
        let short = n - sizes.iter().sum::<usize>();
        for &c in order.iter().take(short) {
            sizes[c] += 1;
        }
        Self { sizes, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() {
            return Err(Error::InvalidArgument("SBM needs at least one community".into()));
        }
        let min = if self.bipartite { 2 } else { 1 };
        if self.sizes.iter().any(|&s| s < min) {
            return Err(Error::InvalidArgument(format!("community sizes {:?} below {min}", self.sizes)));
        }
        if !(0.0 <= self.inter_p && self.inter_p < self.intra_p && self.intra_p <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 <= inter_p < intra_p <= 1, got inter {} intra {}",
                self.inter_p, self.intra_p
            )));
        }
        Ok(())
    }

    /// Node groups of the expected graph as (size, community, side); side is
    /// 0 for users and 1 for items, or always 0 in the general variant.
    fn groups(&self) -> Vec<(usize, usize, u8)> {
        if self.bipartite {
            let users = self.sizes.iter().enumerate().map(|(c, &s)| (s.div_ceil(2), c, 0));
            let items = self.sizes.iter().enumerate().map(|(c, &s)| (s / 2, c, 1));
            users.chain(items).collect()
        } else {
            self.sizes.iter().enumerate().map(|(c, &s)| (s, c, 0)).collect()
        }
    }

    fn prob(&self, a: usize, b: usize) -> f64 {
        if a == b {
            self.intra_p
        } else {
            self.inter_p
        }
    }

    /// Expected number of edges.
    pub fn expected_edges(&self) -> f64 {
        let groups = self.groups();
        let mut total = 0.0;
        for (a, &(na, ca, sa)) in groups.iter().enumerate() {
            for (b, &(nb, cb, sb)) in groups.iter().enumerate().skip(a) {
                let p = self.prob(ca, cb);
                total += if self.bipartite {
                    if sa == sb {
                        0.0
                    } else {
                        p * (na * nb) as f64
                    }
                } else if a == b {
                    p * (na * na.saturating_sub(1)) as f64 / 2.0
                } else {
                    p * (na * nb) as f64
                };
            }
        }
        total
    }
}

/// A sampled graph with its planted community of every node.
#[derive(Debug, Clone)]
pub struct SbmGraph {
    pub adjacency: SparseSymmetricMatrix,
    /// Community of each node; bipartite graphs list users first.
    pub labels: Vec<usize>,
    pub communities: usize,
    /// The user-item view, for bipartite samples.
    pub bipartite: Option<BipartiteGraph>,
}

impl SbmGraph {
    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.nnz() / 2
    }

    pub fn laplacian(&self) -> Result<SparseSymmetricMatrix> {
        normalized_laplacian(&self.adjacency)
    }

    /// Orthonormal basis of the planted community subspace: indicator
    /// vectors weighted by `D^{1/2}`, then Gram-Schmidt.
    pub fn community_basis(&self) -> DMatrix<f64> {
        let deg = self.adjacency.row_sums();
        let n = self.num_nodes();
        let mut basis = DMatrix::zeros(n, self.communities);
        for (v, &c) in self.labels.iter().enumerate() {
            basis[(v, c)] = deg[v].sqrt();
        }
        for c in 0..self.communities {
            for prev in 0..c {
                let proj = basis.column(prev).dot(&basis.column(c));
                let q = basis.column(prev).into_owned();
                basis.column_mut(c).axpy(-proj, &q, 1.0);
            }
            let norm = basis.column(c).norm();
            if norm > 0.0 {
                basis.column_mut(c).unscale_mut(norm);
            }
        }
        basis
    }

    /// Number of connected components.
    pub fn components(&self) -> usize {
        let n = self.num_nodes();
        let mut seen = vec![false; n];
        let mut count = 0;
        let mut stack = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(v) = stack.pop() {
                for (w, _) in self.adjacency.row(v) {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
        }
        count
    }
}

/// Samples every admissible pair independently. Samples with isolated nodes
/// or more components than the planted structure forces (one, or `k` when
/// `inter_p = 0`) are redrawn, up to 10 attempts.
pub fn generate_sbm(spec: &SbmSpec) -> Result<SbmGraph> {
    spec.validate()?;
    let k = spec.communities();
    let allowed = if spec.inter_p == 0.0 { k } else { 1 };
    let mut last = 0;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(spec.seed ^ mix(attempt)));
        let g = sample_once(spec, &mut rng)?;
        let isolated = g.adjacency.row_sums().iter().any(|&d| d == 0.0);
        last = g.components();
        if !isolated && last <= allowed {
            return Ok(g);
        }
    }
    Err(Error::Generation(format!(
        "SBM sample disconnected after {MAX_ATTEMPTS} attempts ({last} components)"
    )))
}

fn sample_once<R: Rng>(spec: &SbmSpec, rng: &mut R) -> Result<SbmGraph> {
    let k = spec.communities();
    if spec.bipartite {
        let user_labels: Vec<usize> = (0..k).flat_map(|c| std::iter::repeat_n(c, spec.sizes[c].div_ceil(2))).collect();
        let item_labels: Vec<usize> = (0..k).flat_map(|c| std::iter::repeat_n(c, spec.sizes[c] / 2)).collect();
        let mut edges = Vec::new();
        for (u, &cu) in user_labels.iter().enumerate() {
            for (i, &ci) in item_labels.iter().enumerate() {
                if rng.random::<f64>() < spec.prob(cu, ci) {
                    edges.push((u, i));
                }
            }
        }
        let m = user_labels.len();
        let trip = edges.iter().flat_map(|&(u, i)| [(u, m + i, 1.0), (m + i, u, 1.0)]).collect();
        let adjacency = SparseSymmetricMatrix::from_triplets(m + item_labels.len(), trip)?;
        let graph = BipartiteGraph::new(m, item_labels.len(), edges)?;
        let mut labels = user_labels;
        labels.extend(item_labels);
        Ok(SbmGraph {
            adjacency,
            labels,
            communities: k,
            bipartite: Some(graph),
        })
    } else {
        let labels: Vec<usize> = (0..k).flat_map(|c| std::iter::repeat_n(c, spec.sizes[c])).collect();
        let n = labels.len();
        let mut trip = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if rng.random::<f64>() < spec.prob(labels[a], labels[b]) {
                    trip.push((a, b, 1.0));
                    trip.push((b, a, 1.0));
                }
            }
        }
        Ok(SbmGraph {
            adjacency: SparseSymmetricMatrix::from_triplets(n, trip)?,
            labels,
            communities: k,
            bipartite: None,
        })
    }
}

/// All eigenvalues, ascending, of the normalized Laplacian of `E[A]` (no
/// self-loops). The expected adjacency is constant on blocks, so its
/// spectrum reduces to a small matrix over node groups plus, in the general
/// variant, a within-block shift caused by the zero diagonal.
pub fn expected_spectrum(spec: &SbmSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let groups: Vec<(usize, usize, u8)> = spec.groups().into_iter().filter(|g| g.0 > 0).collect();
    let g = groups.len();
    let p = |a: usize, b: usize| {
        let ((_, ca, sa), (_, cb, sb)) = (groups[a], groups[b]);
        if spec.bipartite && sa == sb {
            0.0
        } else {
            spec.prob(ca, cb)
        }
    };
    let self_loop = if spec.bipartite { 0.0 } else { spec.intra_p };
    let deg: Vec<f64> = (0..g)
        .map(|a| (0..g).map(|b| p(a, b) * groups[b].0 as f64).sum::<f64>() - self_loop)
        .collect();
    if let Some(a) = deg.iter().position(|&d| d <= 0.0) {
        return Err(Error::InvalidArgument(format!("expected degree of group {a} is zero")));
    }
    let mut reduced = DMatrix::zeros(g, g);
    for a in 0..g {
        for b in 0..g {
            let (na, nb) = (groups[a].0 as f64, groups[b].0 as f64);
            reduced[(a, b)] = (na * nb).sqrt() * p(a, b) / (deg[a] * deg[b]).sqrt();
        }
        reduced[(a, a)] -= self_loop / deg[a];
    }
    let mut values: Vec<f64> = jacobi_eigenvalues(reduced).into_iter().map(|mu| 1.0 - mu).collect();
    for a in 0..g {
        let shift = 1.0 + self_loop / deg[a];
        values.extend(std::iter::repeat_n(shift, groups[a].0 - 1));
    }
    values.sort_by(f64::total_cmp);
    Ok(values)
}

/// Eigenvalues of a small symmetric matrix by cyclic Jacobi rotations.
pub(crate) fn jacobi_eigenvalues(mut a: DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].powi(2))
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                let t = sign / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[(i, i)]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_matches_known() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0]);
        let mut ev = jacobi_eigenvalues(m);
        ev.sort_by(f64::total_cmp);
        let s = 2f64.sqrt();
        for (a, b) in ev.iter().zip([2.0 - s, 2.0, 2.0 + s]) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn resized_keeps_total() {
        let s = SbmSpec {
            sizes: vec![50, 30, 20],
            intra_p: 0.3,
            inter_p: 0.01,
            bipartite: true,
            seed: 0,
        };
        assert_eq!(s.resized(333).num_nodes(), 333);
        assert_eq!(s.resized(200).sizes, vec![100, 60, 40]);
    }

    #[test]
    fn validation() {
        assert!(SbmSpec::equal(2, 10, 0.1, 0.1, true, 0).validate().is_err());
        assert!(SbmSpec::equal(2, 10, 0.5, -0.1, true, 0).validate().is_err());
        assert!(SbmSpec::equal(2, 10, 1.0, 0.0, false, 0).validate().is_ok());
    }
}
