#![allow(dead_code)]

use std::sync::Arc;

use lowpass_fedrec::graph::BipartiteGraph;
use lowpass_fedrec::model::{sample_batch, Batch, ClientState, ForwardPass, ModelDims, Objective, RankingLoss};
use lowpass_fedrec::spectral::graph_spectrum;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random bipartite graph where every node has an edge and no user has
/// interacted with every item.
pub fn random_bipartite(users: usize, items: usize, density: f64, rng: &mut ChaCha8Rng) -> BipartiteGraph {
    let mut edges = Vec::new();
    for u in 0..users {
        edges.push((u, rng.random_range(0..items)));
    }
    for i in 0..items {
        edges.push((rng.random_range(0..users), i));
    }
    for u in 0..users {
        for i in 0..items {
            if rng.random::<f64>() < density {
                edges.push((u, i));
            }
        }
    }
    let g = BipartiteGraph::new(users, items, edges.clone()).unwrap();
    // keep one non-neighbour per user so negatives exist
    let full: Vec<usize> = (0..users).filter(|&u| g.user_degree(u) == items).collect();
    if full.is_empty() {
        return g;
    }
    let kept: Vec<(usize, usize)> = g
        .edges()
        .filter(|&(u, i)| !(full.contains(&u) && i == u % items && g.item_degree(i) > 1))
        .collect();
    let g2 = BipartiteGraph::new(users, items, kept).unwrap();
    if (0..users).all(|u| g2.user_degree(u) < items) && (0..items).all(|i| g2.item_degree(i) > 0) {
        g2
    } else {
        random_bipartite(users, items, density * 0.5, rng)
    }
}

/// A client with at most 10 users and 10 items, random kernels.
pub fn micro_client(seed: u64) -> ClientState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users = rng.random_range(3..=10);
    let items = rng.random_range(3..=10);
    let g = Arc::new(random_bipartite(users, items, 0.3, &mut rng));
    let phi = rng.random_range(2..g.num_nodes());
    let spec = Arc::new(graph_spectrum(&g, phi, seed).unwrap());
    let dims = ModelDims {
        embed_dim: 4,
        gcn_layers: 2,
    };
    let mut c = ClientState::new(0, g, spec, dims, &mut rng).unwrap();
    for k in c.params.layer_kernels.iter_mut() {
        k.iter_mut().for_each(|x| *x = rng.random_range(0.2..1.5));
    }
    c
}

pub fn micro_batch(c: &ClientState, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let edges: Vec<(usize, usize)> = c.graph().edges().take(8).collect();
    sample_batch(c.graph(), &edges, 3, &mut rng).unwrap()
}

#[derive(Clone, Copy, Debug)]
pub enum Which {
    Contrastive,
    Bias,
    Bpr,
}

fn objective<'a>(which: Which, margins: &'a [f64]) -> Objective<'a> {
    match which {
        Which::Contrastive => Objective {
            ranking: RankingLoss::Contrastive { margins },
            bias_weight: 0.0,
            tau: 0.5,
        },
        Which::Bias => Objective {
            ranking: RankingLoss::None,
            bias_weight: 1.0,
            tau: 0.5,
        },
        Which::Bpr => Objective {
            ranking: RankingLoss::Bpr,
            bias_weight: 0.0,
            tau: 1.0,
        },
    }
}

fn total(c: &ClientState, batch: &Batch, obj: &Objective) -> f64 {
    let l = ForwardPass::new(c, batch).unwrap().loss(obj).unwrap();
    l.total(obj.bias_weight)
}

/// Largest per-tensor relative error `‖g − g_fd‖ / max(‖g‖, ‖g_fd‖)` between
/// the analytic gradient and central differences with step 1e-5.
pub fn gradient_error(c: &mut ClientState, batch: &Batch, which: Which, margins: &[f64]) -> (f64, String) {
    let obj = objective(which, margins);
    let fp = ForwardPass::new(c, batch).unwrap();
    let (_, grad) = fp.loss_and_grad(c, &obj, 1.0).unwrap();
    let names = grad.tensor_names();
    let analytic: Vec<Vec<f64>> = grad.tensors().iter().map(|t| t.to_vec()).collect();
    let h = 1e-5;
    let mut worst = (0.0, String::new());
    for (t, a) in analytic.iter().enumerate() {
        let mut diff2 = 0.0;
        let mut an2 = 0.0;
        let mut fd2 = 0.0;
        for j in 0..a.len() {
            let orig = c.params.tensors()[t][j];
            c.params.tensors_mut()[t][j] = orig + h;
            let up = total(c, batch, &obj);
            c.params.tensors_mut()[t][j] = orig - h;
            let down = total(c, batch, &obj);
            c.params.tensors_mut()[t][j] = orig;
            let fd = (up - down) / (2.0 * h);
            diff2 += (fd - a[j]).powi(2);
            an2 += a[j] * a[j];
            fd2 += fd * fd;
        }
        let scale = an2.sqrt().max(fd2.sqrt());
        // tensors the loss does not touch have zero gradient on both sides
        let rel = if scale < 1e-9 { diff2.sqrt() } else { diff2.sqrt() / scale };
        if rel > worst.0 {
            worst = (rel, names[t].clone());
        }
    }
    worst
}

pub fn random_margins(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0.0..1.2)).collect()
}

/// Client with its own spectrum at cutoff `phi` and embedding width `d`.
pub fn client_from_graph(id: usize, g: BipartiteGraph, phi: usize, d: usize, seed: u64) -> ClientState {
    let g = Arc::new(g);
    let phi = lowpass_fedrec::spectral::effective_cutoff(g.num_nodes(), phi);
    let spec = Arc::new(graph_spectrum(&g, phi, seed).unwrap());
    let dims = ModelDims {
        embed_dim: d,
        gcn_layers: 2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(id as u64));
    ClientState::new(id, g, spec, dims, &mut rng).unwrap()
}

/// Path graph u0-i0-u1-i1-... with `n` users and `n` items.
pub fn chain_graph(n: usize) -> BipartiteGraph {
    let mut edges = Vec::new();
    for k in 0..n {
        edges.push((k, k));
        if k + 1 < n {
            edges.push((k + 1, k));
        }
    }
    BipartiteGraph::new(n, n, edges).unwrap()
}

/// Connected bipartite graph with `nodes` nodes: a random spanning tree that
/// alternates sides, plus about `extra · nodes` random edges.
pub fn random_connected(nodes: usize, extra: f64, rng: &mut ChaCha8Rng) -> BipartiteGraph {
    let users = (nodes / 2).max(1);
    let items = nodes - users;
    let mut edges = Vec::new();
    // node k < users is user k, otherwise item k - users; attach each node to
    // an earlier node of the other side in a shuffled order
    let mut order: Vec<usize> = (0..nodes).collect();
    order.swap(1, users);
    for k in 2..nodes {
        let j = rng.random_range(k..nodes);
        order.swap(k, j);
    }
    for k in 1..nodes {
        let x = order[k];
        let partners: Vec<usize> = order[..k].iter().copied().filter(|&y| (y < users) != (x < users)).collect();
        if partners.is_empty() {
            continue;
        }
        let y = partners[rng.random_range(0..partners.len())];
        let (u, i) = if x < users { (x, y - users) } else { (y, x - users) };
        edges.push((u, i));
    }
    for _ in 0..(extra * nodes as f64) as usize {
        edges.push((rng.random_range(0..users), rng.random_range(0..items)));
    }
    let g = BipartiteGraph::new(users, items, edges).unwrap();
    if g.connected_components() == 1 {
        g
    } else {
        random_connected(nodes, extra, rng)
    }
}
