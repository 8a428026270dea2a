//! Interaction files, holdout splits, client partitions and group labels.

mod groups;
mod manifest;
mod partition;
mod synthetic;

pub use groups::{
    item_popularity_groups, label_groups, popularity_groups, user_popularity_groups, GroupLabel, AMAZON_BOOK_NODES, GroupThresholds,
    GroupingSide, PopularityGroup,
};
pub use manifest::{read_manifest, write_manifest};
pub use partition::{jitter_edges, kmeans, spectral_partition, ClientPartition, ClientSubgraph, KMeansOptions};
pub use synthetic::{synthetic_interactions, SyntheticConfig};

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::BipartiteGraph;

/// Field separator of an interaction file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Delimiter {
    #[serde(rename = "whitespace")]
    Whitespace,
    /// `::`, as in the MovieLens `ratings.dat` files.
    #[serde(rename = "::")]
    DoubleColon,
}

impl fmt::Display for Delimiter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Delimiter::Whitespace => "whitespace",
            Delimiter::DoubleColon => "::",
        })
    }
}

impl FromStr for Delimiter {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "whitespace" | "ws" | " " | "\\t" | "tab" => Ok(Delimiter::Whitespace),
            "::" | "colons" => Ok(Delimiter::DoubleColon),
            other => Err(format!("unknown delimiter `{other}` (expected whitespace or ::)")),
        }
    }
}

/// Deduplicated user-item interactions with dense indices in order of first
/// appearance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawInteractions {
    pub user_tokens: Vec<String>,
    pub item_tokens: Vec<String>,
    /// Sorted, unique `(user, item)` pairs.
    pub edges: Vec<(usize, usize)>,
}

impl RawInteractions {
    pub fn from_pairs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, S)>,
        S: AsRef<str>,
    {
        let mut users: HashMap<String, usize> = HashMap::new();
        let mut items: HashMap<String, usize> = HashMap::new();
        let mut user_tokens = Vec::new();
        let mut item_tokens = Vec::new();
        let mut edges = Vec::new();
        for (u, i) in pairs {
            let u = intern(u.as_ref(), &mut users, &mut user_tokens);
            let i = intern(i.as_ref(), &mut items, &mut item_tokens);
            edges.push((u, i));
        }
        edges.sort_unstable();
        edges.dedup();
        Self {
            user_tokens,
            item_tokens,
            edges,
        }
    }

    pub fn num_users(&self) -> usize {
        self.user_tokens.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_tokens.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn to_graph(&self) -> Result<BipartiteGraph> {
        BipartiteGraph::new(self.num_users(), self.num_items(), self.edges.clone())
    }
}

fn intern(token: &str, map: &mut HashMap<String, usize>, tokens: &mut Vec<String>) -> usize {
    if let Some(&k) = map.get(token) {
        return k;
    }
    let k = tokens.len();
    map.insert(token.to_owned(), k);
    tokens.push(token.to_owned());
    k
}

/// Reads `user item [anything...]` lines; blank lines and `#` comments are
/// skipped.
pub fn load_interactions(path: &Path, delimiter: Delimiter) -> Result<RawInteractions> {
    let file = std::fs::File::open(path)?;
    parse_interactions(std::io::BufReader::new(file), delimiter)
}

pub fn parse_interactions<R: BufRead>(reader: R, delimiter: Delimiter) -> Result<RawInteractions> {
    let mut pairs = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields: Box<dyn Iterator<Item = &str>> = match delimiter {
            Delimiter::Whitespace => Box::new(trimmed.split_whitespace()),
            Delimiter::DoubleColon => Box::new(trimmed.split("::").map(str::trim)),
        };
        match (fields.next(), fields.next()) {
            (Some(u), Some(i)) if !u.is_empty() && !i.is_empty() => pairs.push((u.to_owned(), i.to_owned())),
            _ => {
                return Err(Error::Parse {
                    line: n + 1,
                    message: format!("expected at least two fields separated by {delimiter}"),
                })
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no interactions in input".into()));
    }
    Ok(RawInteractions::from_pairs(pairs))
}

/// Disjoint train/validation/test edge sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HoldoutSplit {
    pub train: Vec<(usize, usize)>,
    pub val: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
}

/// Per-user random split. Users with fewer than three interactions keep all
/// of them in train.
pub fn split_holdout(edges: &[(usize, usize)], ratios: [f64; 3], seed: u64) -> Result<HoldoutSplit> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split ratios {ratios:?} must be in [0,1] and sum to 1")));
    }
    let mut sorted = edges.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = HoldoutSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for chunk in sorted.chunk_by(|a, b| a.0 == b.0) {
        let n = chunk.len();
        if n < 3 {
            out.train.extend_from_slice(chunk);
            continue;
        }
        let mut user = chunk.to_vec();
        user.shuffle(&mut rng);
        let n_val = (n as f64 * ratios[1]).round() as usize;
        let n_test = (n as f64 * ratios[2]).round() as usize;
        let (n_val, n_test) = if n_val + n_test >= n { (n_val.min(n - 1), 0) } else { (n_val, n_test) };
        let n_train = n - n_val - n_test;
        out.train.extend_from_slice(&user[..n_train]);
        out.val.extend_from_slice(&user[n_train..n_train + n_val]);
        out.test.extend_from_slice(&user[n_train + n_val..]);
    }
    for set in [&mut out.train, &mut out.val, &mut out.test] {
        set.sort_unstable();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_examples() {
        let raw = parse_interactions("u1 i1\nu1 i2\nu2 i1\n".as_bytes(), Delimiter::Whitespace).unwrap();
        assert_eq!((raw.num_users(), raw.num_items(), raw.num_edges()), (2, 2, 3));
        let raw = parse_interactions("u1 i1\nu1 i1 5\n".as_bytes(), Delimiter::Whitespace).unwrap();
        assert_eq!(raw.num_edges(), 1);
        let raw = parse_interactions("1::10::5::978300760\n2::10::3::978300761\n".as_bytes(), Delimiter::DoubleColon).unwrap();
        assert_eq!((raw.num_users(), raw.num_items()), (2, 1));
        assert_eq!(raw.user_tokens, ["1", "2"]);
    }

    #[test]
    fn parse_errors() {
        match parse_interactions("u1 i1\nbroken\n".as_bytes(), Delimiter::Whitespace) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_interactions("\n# nothing\n".as_bytes(), Delimiter::Whitespace), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn split_sizes() {
        let edges: Vec<(usize, usize)> = (0..10).map(|i| (0, i)).chain([(1, 0), (1, 1)]).collect();
        let s = split_holdout(&edges, [0.8, 0.1, 0.1], 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (10, 1, 1));
        assert!(s.train.contains(&(1, 0)) && s.train.contains(&(1, 1)));
        assert_eq!(s, split_holdout(&edges, [0.8, 0.1, 0.1], 3).unwrap());
        assert!(split_holdout(&edges, [0.8, 0.1, 0.2], 3).is_err());
    }
}
