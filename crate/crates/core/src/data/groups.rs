use std::fmt;

use serde::{Deserialize, Serialize};

use super::ClientPartition;

/// Structural group of a client subgraph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GroupLabel {
    LargeDense,
    MediumBalanced,
    SmallSparse,
}

impl GroupLabel {
    pub fn short(self) -> &'static str {
        match self {
            GroupLabel::LargeDense => "LD",
            GroupLabel::MediumBalanced => "MB",
            GroupLabel::SmallSparse => "SS",
        }
    }
}

impl fmt::Display for GroupLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

/// Node-count cutoffs: above `large_nodes` is LD, below `small_nodes` is SS,
/// anything else MB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupThresholds {
    pub large_nodes: f64,
    pub small_nodes: f64,
}

/// Users plus items of Amazon-Book, the dataset the absolute cutoffs were
/// chosen for.
pub const AMAZON_BOOK_NODES: f64 = 52_643.0 + 91_599.0;

impl GroupThresholds {
    /// The absolute cutoffs used for the 15-client Amazon-Book partition.
    pub const AMAZON_BOOK: GroupThresholds = GroupThresholds {
        large_nodes: 40_000.0,
        small_nodes: 8_000.0,
    };

    /// The Amazon-Book cutoffs scaled to a dataset with `total_nodes` nodes.
    pub fn scaled(total_nodes: usize) -> Self {
        let f = total_nodes as f64 / AMAZON_BOOK_NODES;
        Self {
            large_nodes: Self::AMAZON_BOOK.large_nodes * f,
            small_nodes: Self::AMAZON_BOOK.small_nodes * f,
        }
    }

    pub fn label(&self, nodes: usize) -> GroupLabel {
        let n = nodes as f64;
        if n > self.large_nodes {
            GroupLabel::LargeDense
        } else if n < self.small_nodes {
            GroupLabel::SmallSparse
        } else {
            GroupLabel::MediumBalanced
        }
    }
}

pub fn label_groups(partition: &ClientPartition, thresholds: &GroupThresholds) -> Vec<GroupLabel> {
    partition.clients.iter().map(|c| thresholds.label(c.graph.num_nodes())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PopularityGroup {
    Head,
    Mid,
    Tail,
}

impl fmt::Display for PopularityGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PopularityGroup::Head => "head",
            PopularityGroup::Mid => "mid",
            PopularityGroup::Tail => "tail",
        })
    }
}

/// Which side of the graph the popularity buckets are drawn on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupingSide {
    Items,
    Users,
}

/// Orders entities by descending count (ties by index) and cuts the
/// cumulative interaction mass into Head 1/6, Mid 2/6, Tail 3/6. An entity
/// belongs to the bucket in which its share of the mass starts.
pub fn popularity_groups(counts: &[usize]) -> Vec<PopularityGroup> {
    let total: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut out = vec![PopularityGroup::Tail; counts.len()];
    let mut before = 0usize;
    for k in order {
        out[k] = if 6 * before < total {
            PopularityGroup::Head
        } else if 2 * before < total {
            PopularityGroup::Mid
        } else {
            PopularityGroup::Tail
        };
        before += counts[k];
    }
    out
}

pub fn item_popularity_groups(train: &[(usize, usize)], num_items: usize) -> Vec<PopularityGroup> {
    let mut counts = vec![0usize; num_items];
    for &(_, i) in train {
        counts[i] += 1;
    }
    popularity_groups(&counts)
}

pub fn user_popularity_groups(train: &[(usize, usize)], num_users: usize) -> Vec<PopularityGroup> {
    let mut counts = vec![0usize; num_users];
    for &(u, _) in train {
        counts[u] += 1;
    }
    popularity_groups(&counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use PopularityGroup::*;

    #[test]
    fn uniform_popularity_is_contiguous() {
        assert_eq!(popularity_groups(&[1; 6]), vec![Head, Mid, Mid, Tail, Tail, Tail]);
    }

    #[test]
    fn dominant_item_is_head() {
        let train: Vec<(usize, usize)> = (0..10).map(|u| (u, 3)).chain([(0, 0), (1, 1), (2, 2)]).collect();
        let g = item_popularity_groups(&train, 5);
        assert_eq!(g[3], Head);
        assert_eq!(g[4], Tail);
    }

    #[test]
    fn labels() {
        let t = GroupThresholds::AMAZON_BOOK;
        assert_eq!(t.label(45_000), GroupLabel::LargeDense);
        assert_eq!(t.label(12_000), GroupLabel::MediumBalanced);
        assert_eq!(t.label(5_000), GroupLabel::SmallSparse);
        let s = GroupThresholds::scaled(AMAZON_BOOK_NODES as usize);
        assert!((s.large_nodes - 40_000.0).abs() < 1e-9);
    }
}
