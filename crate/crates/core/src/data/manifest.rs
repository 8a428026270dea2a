//! Line-oriented partition manifest.
//!
//! ```text
//! lowpass-fedrec-partition 1
//! clients <C> users <M>
//! client <id> users <m> items <n> edges <e>
//! u <global user ids>
//! i <global item ids>
//! e <user>,<item> ...      (global ids)
//! ```
//! The last four lines repeat per client. `assignment` is implied by the
//! user lines.

use std::fmt::Write as _;
use std::path::Path;

use super::{ClientPartition, ClientSubgraph};
use crate::error::{Error, Result};

const HEADER: &str = "lowpass-fedrec-partition 1";

pub fn write_manifest(path: &Path, p: &ClientPartition) -> Result<()> {
    let mut s = String::new();
    writeln!(s, "{HEADER}").unwrap();
    writeln!(s, "clients {} users {}", p.num_clients, p.assignment.len()).unwrap();
    let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
    for c in &p.clients {
        writeln!(
            s,
            "client {} users {} items {} edges {}",
            c.id,
            c.users.len(),
            c.items.len(),
            c.graph.num_edges()
        )
        .unwrap();
        writeln!(s, "u {}", join(&c.users)).unwrap();
        writeln!(s, "i {}", join(&c.items)).unwrap();
        let edges: Vec<String> = c.global_edges().iter().map(|(u, i)| format!("{u},{i}")).collect();
        writeln!(s, "e {}", edges.join(" ")).unwrap();
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<ClientPartition> {
    let text = std::fs::read_to_string(path)?;
    let bad = |line: usize, m: &str| Error::Format {
        path: path.to_path_buf(),
        message: format!("line {line}: {m}"),
    };
    let lines: Vec<&str> = text.lines().collect();
    if lines.first() != Some(&HEADER) {
        return Err(bad(1, "missing manifest header"));
    }
    let head: Vec<&str> = lines.get(1).ok_or_else(|| bad(2, "missing counts"))?.split_whitespace().collect();
    let num = |tok: Option<&&str>, line: usize| -> Result<usize> {
        tok.and_then(|t| t.parse().ok()).ok_or_else(|| bad(line, "expected a count"))
    };
    let num_clients = num(head.get(1), 2)?;
    let num_users = num(head.get(3), 2)?;
    let mut assignment = vec![usize::MAX; num_users];
    let mut clients = Vec::with_capacity(num_clients);
    for c in 0..num_clients {
        let base = 2 + 4 * c;
        let get = |k: usize| lines.get(base + k).copied().ok_or_else(|| bad(base + k + 1, "truncated manifest"));
        let meta: Vec<&str> = get(0)?.split_whitespace().collect();
        let id = num(meta.get(1), base + 1)?;
        let ids = |line: &str, tag: &str, at: usize| -> Result<Vec<usize>> {
            let rest = line.strip_prefix(tag).ok_or_else(|| bad(at, &format!("expected `{}` line", tag.trim())))?;
            rest.split_whitespace()
                .map(|t| t.parse().map_err(|_| bad(at, "bad id")))
                .collect()
        };
        let users = ids(get(1)?, "u", base + 2)?;
        let items = ids(get(2)?, "i", base + 3)?;
        let edge_line = get(3)?.strip_prefix('e').ok_or_else(|| bad(base + 4, "expected `e` line"))?;
        let mut edges = Vec::new();
        for tok in edge_line.split_whitespace() {
            let (u, i) = tok.split_once(',').ok_or_else(|| bad(base + 4, "bad edge"))?;
            let u = u.parse().map_err(|_| bad(base + 4, "bad edge"))?;
            let i = i.parse().map_err(|_| bad(base + 4, "bad edge"))?;
            edges.push((u, i));
        }
        for &u in &users {
            *assignment.get_mut(u).ok_or_else(|| bad(base + 2, "user id out of range"))? = id;
        }
        let sub = ClientSubgraph::from_global_edges(id, users, &edges)?;
        if sub.items != items || num(meta.get(7), base + 1)? != edges.len() {
            return Err(bad(base + 1, "item list or edge count does not match the edges"));
        }
        clients.push(sub);
    }
    Ok(ClientPartition {
        num_clients,
        assignment,
        clients,
    })
}
