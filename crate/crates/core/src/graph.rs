//! Bipartite interaction graphs and the sparse matrices derived from them.
//!
//! Node ordering follows the block layout `[users; items]`: user `u` is node
//! `u`, item `i` is node `num_users + i`.

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Unweighted user-item interaction graph, stored as deduplicated CSR in
/// both orientations.
#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteGraph {
    num_users: usize,
    num_items: usize,
    user_ptr: Vec<usize>,
    user_adj: Vec<usize>,
    item_ptr: Vec<usize>,
    item_adj: Vec<usize>,
}

impl BipartiteGraph {
    /// Builds a graph from an edge list. Duplicate edges collapse to one.
    pub fn new(
        num_users: usize,
        num_items: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut edges: Vec<(usize, usize)> = edges.into_iter().collect();
        for &(u, i) in &edges {
            if u >= num_users || i >= num_items {
                return Err(Error::InvalidGraph(format!(
                    "edge ({u}, {i}) outside {num_users} users x {num_items} items"
                )));
            }
        }
        edges.sort_unstable();
        edges.dedup();

        let mut user_ptr = vec![0usize; num_users + 1];
        for &(u, _) in &edges {
            user_ptr[u + 1] += 1;
        }
        for u in 0..num_users {
            user_ptr[u + 1] += user_ptr[u];
        }
        let user_adj: Vec<usize> = edges.iter().map(|&(_, i)| i).collect();

        let mut item_ptr = vec![0usize; num_items + 1];
        for &(_, i) in &edges {
            item_ptr[i + 1] += 1;
        }
        for i in 0..num_items {
            item_ptr[i + 1] += item_ptr[i];
        }
        let mut fill = item_ptr.clone();
        let mut item_adj = vec![0usize; edges.len()];
        // edges are sorted by user, so each item row comes out sorted too
        for &(u, i) in &edges {
            item_adj[fill[i]] = u;
            fill[i] += 1;
        }

        Ok(Self {
            num_users,
            num_items,
            user_ptr,
            user_adj,
            item_ptr,
            item_adj,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_nodes(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn num_edges(&self) -> usize {
        self.user_adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.user_adj.is_empty()
    }

    /// Items of user `u`, ascending.
    pub fn user_items(&self, u: usize) -> &[usize] {
        &self.user_adj[self.user_ptr[u]..self.user_ptr[u + 1]]
    }

    /// Users of item `i`, ascending.
    pub fn item_users(&self, i: usize) -> &[usize] {
        &self.item_adj[self.item_ptr[i]..self.item_ptr[i + 1]]
    }

    pub fn user_degree(&self, u: usize) -> usize {
        self.user_ptr[u + 1] - self.user_ptr[u]
    }

    pub fn item_degree(&self, i: usize) -> usize {
        self.item_ptr[i + 1] - self.item_ptr[i]
    }

    pub fn has_edge(&self, u: usize, i: usize) -> bool {
        self.user_items(u).binary_search(&i).is_ok()
    }

    /// All edges in (user, item) lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_users).flat_map(move |u| self.user_items(u).iter().map(move |&i| (u, i)))
    }

    pub fn average_degree(&self) -> f64 {
        if self.num_nodes() == 0 {
            return 0.0;
        }
        2.0 * self.num_edges() as f64 / self.num_nodes() as f64
    }

    /// Removes zero-degree users and items. Returns the compacted graph with
    /// the kept original indices of each side (`new -> old`).
    pub fn drop_isolated(&self) -> (BipartiteGraph, Vec<usize>, Vec<usize>) {
        let users: Vec<usize> = (0..self.num_users)
            .filter(|&u| self.user_degree(u) > 0)
            .collect();
        let items: Vec<usize> = (0..self.num_items)
            .filter(|&i| self.item_degree(i) > 0)
            .collect();
        let mut item_new = vec![usize::MAX; self.num_items];
        for (new, &old) in items.iter().enumerate() {
            item_new[old] = new;
        }
        let edges: Vec<(usize, usize)> = users
            .iter()
            .enumerate()
            .flat_map(|(nu, &u)| self.user_items(u).iter().map(move |&i| (nu, i)))
            .map(|(nu, i)| (nu, item_new[i]))
            .collect();
        let g = BipartiteGraph::new(users.len(), items.len(), edges)
            .expect("compacted indices are in range");
        (g, users, items)
    }

    /// Number of connected components over nodes with at least one edge.
    pub fn connected_components(&self) -> usize {
        let n = self.num_nodes();
        let mut seen = vec![false; n];
        let mut count = 0;
        let mut stack = Vec::new();
        for start in 0..n {
            if seen[start] || self.node_degree(start) == 0 {
                continue;
            }
            count += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(v) = stack.pop() {
                for w in self.node_neighbors(v) {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
        }
        count
    }

    fn node_degree(&self, v: usize) -> usize {
        if v < self.num_users {
            self.user_degree(v)
        } else {
            self.item_degree(v - self.num_users)
        }
    }

    fn node_neighbors(&self, v: usize) -> Vec<usize> {
        if v < self.num_users {
            self.user_items(v)
                .iter()
                .map(|&i| self.num_users + i)
                .collect()
        } else {
            self.item_users(v - self.num_users).to_vec()
        }
    }

    /// Stable content hash, used to key spectrum caches.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.num_users as u64).to_le_bytes());
        hasher.update((self.num_items as u64).to_le_bytes());
        for (u, i) in self.edges() {
            hasher.update((u as u64).to_le_bytes());
            hasher.update((i as u64).to_le_bytes());
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Symmetric sparse matrix in CSR layout with sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymmetricMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSymmetricMatrix {
    /// Builds from triplets; duplicates are summed. The caller supplies both
    /// (i, j) and (j, i) for off-diagonal entries; symmetry is verified.
    pub fn from_triplets(dim: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        triplets.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut col_idx: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut rows: Vec<usize> = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            if r >= dim || c >= dim {
                return Err(Error::IndexOutOfRange {
                    index: r.max(c),
                    len: dim,
                });
            }
            if let (Some(&lr), Some(&lc)) = (rows.last(), col_idx.last()) {
                if lr == r && lc == c {
                    *values.last_mut().unwrap() += v;
                    continue;
                }
            }
            rows.push(r);
            col_idx.push(c);
            values.push(v);
        }
        for &r in &rows {
            row_ptr[r + 1] += 1;
        }
        for r in 0..dim {
            row_ptr[r + 1] += row_ptr[r];
        }
        let m = Self {
            dim,
            row_ptr,
            col_idx,
            values,
        };
        if !m.is_symmetric() {
            return Err(Error::InvalidArgument("matrix is not symmetric".into()));
        }
        Ok(m)
    }

    /// Adjacency matrix of a general undirected graph with `n` nodes. Each
    /// undirected edge is listed once; self loops and duplicates are dropped.
    pub fn adjacency_from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut trip = Vec::with_capacity(edges.len() * 2);
        let mut seen: Vec<(usize, usize)> = edges
            .iter()
            .filter(|(a, b)| a != b)
            .map(|&(a, b)| (a.min(b), a.max(b)))
            .collect();
        seen.sort_unstable();
        seen.dedup();
        for (a, b) in seen {
            trip.push((a, b, 1.0));
            trip.push((b, a, 1.0));
        }
        Self::from_triplets(n, trip)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entries of row `r` as (column, value).
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[span.clone()].binary_search(&c) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    /// All stored entries as (row, col, value), row-major.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.dim).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.dim).map(|r| self.row(r).map(|(_, v)| v).sum()).collect()
    }

    pub fn is_symmetric(&self) -> bool {
        self.entries().all(|(r, c, v)| self.get(c, r) == v)
    }

    pub fn transpose(&self) -> SparseSymmetricMatrix {
        let trip = self.entries().map(|(r, c, v)| (c, r, v)).collect();
        Self::from_triplets(self.dim, trip).expect("transpose of a symmetric matrix")
    }

    /// `y = self * x`.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        for (r, out) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *out = acc;
        }
    }

    /// `self * m` for a dense matrix with `dim` rows.
    pub fn mul_dense(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, m.ncols());
        for c in 0..m.ncols() {
            let col = m.column(c);
            for r in 0..self.dim {
                let mut acc = 0.0;
                for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                    acc += self.values[k] * col[self.col_idx[k]];
                }
                out[(r, c)] = acc;
            }
        }
        out
    }

    /// `xᵀ · self · x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let mut y = vec![0.0; self.dim];
        self.mul_vec(x, &mut y);
        x.iter().zip(&y).map(|(a, b)| a * b).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.dim, self.dim);
        for (r, c, v) in self.entries() {
            d[(r, c)] = v;
        }
        d
    }
}

/// `A = [0 R; Rᵀ 0]` for the interaction matrix `R`.
pub fn build_adjacency(g: &BipartiteGraph) -> Result<SparseSymmetricMatrix> {
    if g.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let m = g.num_users();
    let mut trip = Vec::with_capacity(2 * g.num_edges());
    for (u, i) in g.edges() {
        trip.push((u, m + i, 1.0));
        trip.push((m + i, u, 1.0));
    }
    SparseSymmetricMatrix::from_triplets(g.num_nodes(), trip)
}

/// `L = I − D^{-1/2} A D^{-1/2}`.
pub fn normalized_laplacian(a: &SparseSymmetricMatrix) -> Result<SparseSymmetricMatrix> {
    let deg = a.row_sums();
    if let Some(v) = deg.iter().position(|&d| d <= 0.0) {
        return Err(Error::IsolatedNode(v));
    }
    let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut trip = Vec::with_capacity(a.nnz() + a.dim());
    for r in 0..a.dim() {
        trip.push((r, r, 1.0));
    }
    for (r, c, v) in a.entries() {
        trip.push((r, c, -v * inv_sqrt[r] * inv_sqrt[c]));
    }
    SparseSymmetricMatrix::from_triplets(a.dim(), trip)
}

/// Normalized Laplacian of a bipartite graph; the graph must have no
/// isolated nodes.
pub fn graph_laplacian(g: &BipartiteGraph) -> Result<SparseSymmetricMatrix> {
    normalized_laplacian(&build_adjacency(g)?)
}

/// Degree-based popularity, normalized by the largest degree on each side.
#[derive(Debug, Clone, PartialEq)]
pub struct PopularityScores {
    pub user_pop: Vec<f64>,
    pub item_pop: Vec<f64>,
    pub max_user_degree: usize,
    pub max_item_degree: usize,
}

pub fn compute_popularity(g: &BipartiteGraph) -> Result<PopularityScores> {
    if g.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let user_deg: Vec<usize> = (0..g.num_users()).map(|u| g.user_degree(u)).collect();
    let item_deg: Vec<usize> = (0..g.num_items()).map(|i| g.item_degree(i)).collect();
    let max_user_degree = user_deg.iter().copied().max().unwrap_or(0);
    let max_item_degree = item_deg.iter().copied().max().unwrap_or(0);
    Ok(PopularityScores {
        user_pop: user_deg
            .iter()
            .map(|&d| d as f64 / max_user_degree as f64)
            .collect(),
        item_pop: item_deg
            .iter()
            .map(|&d| d as f64 / max_item_degree as f64)
            .collect(),
        max_user_degree,
        max_item_degree,
    })
}
