use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{graph_laplacian, BipartiteGraph};
use crate::spectral::{lanczos_partial_eigs_with, LanczosOptions};

/// One client's users, the items they touch, and the induced subgraph in
/// local indices. `users` and `items` hold global ids in ascending order, so
/// the local index of a global id is its position.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientSubgraph {
    pub id: usize,
    pub users: Vec<usize>,
    pub items: Vec<usize>,
    pub graph: BipartiteGraph,
}

impl ClientSubgraph {
    /// Builds the subgraph from global edges whose users all belong to
    /// this client. Items are the ones these edges touch.
    pub fn from_global_edges(id: usize, mut users: Vec<usize>, edges: &[(usize, usize)]) -> Result<Self> {
        users.sort_unstable();
        users.dedup();
        let mut items: Vec<usize> = edges.iter().map(|&(_, i)| i).collect();
        items.sort_unstable();
        items.dedup();
        let mut local = Vec::with_capacity(edges.len());
        for &(u, i) in edges {
            let lu = users
                .binary_search(&u)
                .map_err(|_| Error::InvalidArgument(format!("edge of user {u} outside client {id}")))?;
            let li = items.binary_search(&i).expect("item collected above");
            local.push((lu, li));
        }
        let graph = BipartiteGraph::new(users.len(), items.len(), local)?;
        Ok(Self { id, users, items, graph })
    }

    pub fn local_user(&self, global: usize) -> Option<usize> {
        self.users.binary_search(&global).ok()
    }

    pub fn local_item(&self, global: usize) -> Option<usize> {
        self.items.binary_search(&global).ok()
    }

    pub fn global_edges(&self) -> Vec<(usize, usize)> {
        self.graph.edges().map(|(u, i)| (self.users[u], self.items[i])).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientPartition {
    pub num_clients: usize,
    /// Client of every global user.
    pub assignment: Vec<usize>,
    pub clients: Vec<ClientSubgraph>,
}

impl ClientPartition {
    /// Splits `g` by a user-to-client assignment.
    pub fn from_assignment(g: &BipartiteGraph, assignment: Vec<usize>, num_clients: usize) -> Result<Self> {
        if assignment.len() != g.num_users() {
            return Err(Error::DimensionMismatch {
                expected: g.num_users(),
                actual: assignment.len(),
            });
        }
        let mut users = vec![Vec::new(); num_clients];
        let mut edges = vec![Vec::new(); num_clients];
        for (u, &c) in assignment.iter().enumerate() {
            if c >= num_clients {
                return Err(Error::IndexOutOfRange { index: c, len: num_clients });
            }
            users[c].push(u);
            edges[c].extend(g.user_items(u).iter().map(|&i| (u, i)));
        }
        let clients = users
            .into_iter()
            .zip(edges)
            .enumerate()
            .map(|(c, (u, e))| ClientSubgraph::from_global_edges(c, u, &e))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            num_clients,
            assignment,
            clients,
        })
    }

    pub fn total_edges(&self) -> usize {
        self.clients.iter().map(|c| c.graph.num_edges()).sum()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct KMeansOptions {
    /// k-means++ initializations per attempt; the lowest inertia wins.
    pub restarts: usize,
    /// Fresh attempts when every restart ends with an empty cluster.
    pub attempts: usize,
    pub max_iter: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            restarts: 50,
            attempts: 10,
            max_iter: 300,
        }
    }
}

fn sq_dist(points: &DMatrix<f64>, r: usize, centers: &DMatrix<f64>, c: usize) -> f64 {
    (0..points.ncols()).map(|d| (points[(r, d)] - centers[(c, d)]).powi(2)).sum()
}

fn plus_plus<R: Rng>(points: &DMatrix<f64>, k: usize, rng: &mut R) -> DMatrix<f64> {
    let n = points.nrows();
    let mut centers = DMatrix::zeros(k, points.ncols());
    centers.set_row(0, &points.row(rng.random_range(0..n)));
    let mut best = vec![f64::INFINITY; n];
    for c in 1..k {
        for (r, b) in best.iter_mut().enumerate() {
            *b = b.min(sq_dist(points, r, &centers, c - 1));
        }
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (r, b) in best.iter().enumerate() {
                if t < *b {
                    pick = r;
                    break;
                }
                t -= b;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.set_row(c, &points.row(pick));
    }
    centers
}

/// Lloyd iterations; `None` if a cluster empties.
fn lloyd(points: &DMatrix<f64>, mut centers: DMatrix<f64>, max_iter: usize) -> Option<(Vec<usize>, f64)> {
    let (n, k) = (points.nrows(), centers.nrows());
    let mut labels = vec![usize::MAX; n];
    for _ in 0..max_iter {
        let mut changed = false;
        for (r, l) in labels.iter_mut().enumerate() {
            let c = (0..k)
                .min_by(|&a, &b| sq_dist(points, r, &centers, a).total_cmp(&sq_dist(points, r, &centers, b)))
                .unwrap();
            if *l != c {
                *l = c;
                changed = true;
            }
        }
        let mut sums = DMatrix::zeros(k, points.ncols());
        let mut counts = vec![0usize; k];
        for (r, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            let mut row = sums.row_mut(l);
            row += points.row(r);
        }
        if counts.contains(&0) {
            return None;
        }
        for c in 0..k {
            let mut row = sums.row_mut(c);
            row /= counts[c] as f64;
        }
        centers = sums;
        if !changed {
            break;
        }
    }
    let inertia = labels.iter().enumerate().map(|(r, &l)| sq_dist(points, r, &centers, l)).sum();
    Some((labels, inertia))
}

/// k-means on the rows of `points`. Labels are renumbered by first
/// occurrence so equal clusterings compare equal.
pub fn kmeans(points: &DMatrix<f64>, k: usize, seed: u64, opts: KMeansOptions) -> Result<Vec<usize>> {
    if k == 0 || k > points.nrows() {
        return Err(Error::Clustering(format!("cannot form {k} clusters from {} points", points.nrows())));
    }
    for attempt in 0..opts.attempts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt as u64 * 0x9e37_79b9));
        let mut best: Option<(Vec<usize>, f64)> = None;
        for _ in 0..opts.restarts.max(1) {
            let init = plus_plus(points, k, &mut rng);
            if let Some((labels, inertia)) = lloyd(points, init, opts.max_iter) {
                if best.as_ref().is_none_or(|b| inertia < b.1) {
                    best = Some((labels, inertia));
                }
            }
        }
        if let Some((labels, _)) = best {
            let mut map = vec![usize::MAX; k];
            let mut next = 0;
            return Ok(labels
                .into_iter()
                .map(|l| {
                    if map[l] == usize::MAX {
                        map[l] = next;
                        next += 1;
                    }
                    map[l]
                })
                .collect());
        }
    }
    Err(Error::Clustering(format!("every k-means run left an empty cluster after {} attempts", opts.attempts)))
}

/// Clusters users on the `c` lowest eigenvectors of the normalized
/// Laplacian, rescaled by `D^{-1/2}`, and gives each client its users'
/// edges.
pub fn spectral_partition(g: &BipartiteGraph, c: usize, seed: u64) -> Result<ClientPartition> {
    if c == 0 {
        return Err(Error::InvalidArgument("need at least one client".into()));
    }
    let l = graph_laplacian(g)?;
    if c == 1 {
        return ClientPartition::from_assignment(g, vec![0; g.num_users()], 1);
    }
    if c > g.num_users() {
        return Err(Error::InvalidArgument(format!("{c} clients but only {} users", g.num_users())));
    }
    let opts = LanczosOptions {
        max_iter: Some((40 * c + 400).min(g.num_nodes())),
        ..LanczosOptions::default()
    };
    let spec = lanczos_partial_eigs_with(&l, c, seed, opts)?;
    let p = spec.eigenvectors();
    let points = DMatrix::from_fn(g.num_users(), c, |u, k| p[(u, k)] / (g.user_degree(u) as f64).sqrt());
    let labels = kmeans(&points, c, seed, KMeansOptions::default())?;
    ClientPartition::from_assignment(g, labels, c)
}

/// Keeps a fraction `f ~ U[lo, hi]` of each client's edges. Every user keeps
/// at least one edge; items left without edges are dropped.
pub fn jitter_edges(partition: &ClientPartition, lo: f64, hi: f64, seed: u64) -> Result<ClientPartition> {
    if !(0.0 < lo && lo <= hi && hi <= 1.0) {
        return Err(Error::InvalidArgument(format!("jitter range [{lo}, {hi}] must satisfy 0 < lo <= hi <= 1")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clients = Vec::with_capacity(partition.clients.len());
    for sub in &partition.clients {
        let f = if lo == hi { lo } else { rng.random_range(lo..=hi) };
        let edges = sub.global_edges();
        let target = ((edges.len() as f64 * f).round() as usize).max(sub.users.len());
        let mut keep = vec![false; edges.len()];
        // one guaranteed edge per user
        let mut start = 0;
        for chunk in edges.chunk_by(|a, b| a.0 == b.0) {
            keep[start + rng.random_range(0..chunk.len())] = true;
            start += chunk.len();
        }
        let rest: Vec<usize> = (0..edges.len()).filter(|&k| !keep[k]).collect();
        let extra = target.saturating_sub(sub.users.len()).min(rest.len());
        for k in sample(&mut rng, rest.len(), extra) {
            keep[rest[k]] = true;
        }
        let kept: Vec<(usize, usize)> = edges.iter().zip(&keep).filter(|(_, k)| **k).map(|(e, _)| *e).collect();
        clients.push(ClientSubgraph::from_global_edges(sub.id, sub.users.clone(), &kept)?);
    }
    Ok(ClientPartition {
        num_clients: partition.num_clients,
        assignment: partition.assignment.clone(),
        clients,
    })
}
