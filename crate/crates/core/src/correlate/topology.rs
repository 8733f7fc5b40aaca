//! Operator-supplied equipment map.
//!
//! File format, one entry per line (`#` comments and blank lines ignored):
//!
//! ```text
//! link iface=booth12-eth0 port=opt-03
//! link iface=booth12-eth0 booth=booth12
//! ```

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("topology line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate link {iface} <-> {other}")]
    DuplicateLink { iface: String, other: String },
    #[error("interface {iface} already mapped to port {existing}, cannot map to {requested}")]
    PortConflict { iface: String, existing: String, requested: String },
    #[error("reading topology: {0}")]
    Io(String),
}

/// Interface ↔ optical port and interface ↔ booth associations.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyMap {
    iface_port: BTreeMap<String, String>,
    iface_booths: BTreeMap<String, BTreeSet<String>>,
    /// Undirected adjacency over every id mentioned in a link.
    adjacency: BTreeMap<String, BTreeSet<String>>,
}

impl TopologyMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(path: &Path) -> Result<Self, TopologyError> {
        let text = std::fs::read_to_string(path).map_err(|e| TopologyError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, TopologyError> {
        let mut topo = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| TopologyError::Parse { line: line_no, message };
            let mut tokens = line.split_whitespace();
            if tokens.next() != Some("link") {
                return Err(err("expected `link`".into()));
            }
            let mut iface = None;
            let mut port = None;
            let mut booth = None;
            for tok in tokens {
                let (k, v) = tok.split_once('=').ok_or_else(|| err(format!("expected key=value, got `{tok}`")))?;
                if v.is_empty() {
                    return Err(err(format!("empty value for `{k}`")));
                }
                let slot = match k {
                    "iface" => &mut iface,
                    "port" => &mut port,
                    "booth" => &mut booth,
                    _ => return Err(err(format!("unknown key `{k}`"))),
                };
                if slot.replace(v.to_string()).is_some() {
                    return Err(err(format!("duplicate key `{k}`")));
                }
            }
            let iface = iface.ok_or_else(|| err("missing iface=".into()))?;
            match (port, booth) {
                (Some(p), None) => topo.add_port_link(&iface, &p)?,
                (None, Some(b)) => topo.add_booth_link(&iface, &b)?,
                _ => return Err(err("expected exactly one of port= or booth=".into())),
            }
        }
        Ok(topo)
    }

    pub fn add_port_link(&mut self, iface: &str, port: &str) -> Result<(), TopologyError> {
        match self.iface_port.get(iface) {
            Some(p) if p == port => {
                return Err(TopologyError::DuplicateLink { iface: iface.into(), other: port.into() })
            }
            Some(p) => {
                return Err(TopologyError::PortConflict {
                    iface: iface.into(),
                    existing: p.clone(),
                    requested: port.into(),
                })
            }
            None => {}
        }
        self.iface_port.insert(iface.into(), port.into());
        self.connect(iface, port);
        Ok(())
    }

    pub fn add_booth_link(&mut self, iface: &str, booth: &str) -> Result<(), TopologyError> {
        if !self.iface_booths.entry(iface.into()).or_default().insert(booth.into()) {
            return Err(TopologyError::DuplicateLink { iface: iface.into(), other: booth.into() });
        }
        self.connect(iface, booth);
        Ok(())
    }

    fn connect(&mut self, a: &str, b: &str) {
        self.adjacency.entry(a.into()).or_default().insert(b.into());
        self.adjacency.entry(b.into()).or_default().insert(a.into());
    }

    pub fn port_of(&self, iface: &str) -> Option<&str> {
        self.iface_port.get(iface).map(String::as_str)
    }

    pub fn link_count(&self) -> usize {
        self.iface_port.len() + self.iface_booths.values().map(BTreeSet::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.adjacency.contains_key(id)
    }

    /// Every id that appears in some link.
    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.adjacency.keys().map(String::as_str)
    }

    pub fn neighbors(&self, id: &str) -> impl Iterator<Item = &str> {
        self.adjacency.get(id).into_iter().flatten().map(String::as_str)
    }

    /// Interfaces attached to a booth.
    pub fn booth_members(&self, booth: &str) -> Vec<&str> {
        self.iface_booths
            .iter()
            .filter(|(_, bs)| bs.contains(booth))
            .map(|(i, _)| i.as_str())
            .collect()
    }

    /// Two entities are linked when equal, adjacent, or sharing a neighbor.
    pub fn linked(&self, a: &str, b: &str) -> bool {
        if a == b {
            return true;
        }
        let (Some(na), Some(nb)) = (self.adjacency.get(a), self.adjacency.get(b)) else {
            return false;
        };
        na.contains(b) || na.intersection(nb).next().is_some()
    }

    /// Ids reachable from `seeds` within `depth` hops, seeds included.
    pub fn expand<'a>(&self, seeds: impl IntoIterator<Item = &'a str>, depth: usize) -> BTreeSet<String> {
        let mut seen: BTreeSet<String> = seeds.into_iter().map(str::to_string).collect();
        let mut frontier: Vec<String> = seen.iter().cloned().collect();
        for _ in 0..depth {
            let mut next = Vec::new();
            for id in &frontier {
                for n in self.neighbors(id) {
                    if seen.insert(n.to_string()) {
                        next.push(n.to_string());
                    }
                }
            }
            frontier = next;
        }
        seen
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (iface, port) in &self.iface_port {
            let _ = writeln!(out, "link iface={iface} port={port}");
        }
        for (iface, booths) in &self.iface_booths {
            for b in booths {
                let _ = writeln!(out, "link iface={iface} booth={b}");
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# hall A
link iface=booth12-eth0 port=opt-03
link iface=booth12-eth1 port=opt-03
link iface=booth12-eth0 booth=booth12
link iface=booth12-eth1 booth=booth12
link iface=booth13-eth0 booth=booth13
";

    #[test]
    fn parses_and_links() {
        let t = TopologyMap::parse(SAMPLE).unwrap();
        assert_eq!(t.link_count(), 5);
        assert_eq!(t.port_of("booth12-eth0"), Some("opt-03"));
        assert!(t.linked("opt-03", "booth12-eth0"));
        assert!(t.linked("booth12-eth0", "booth12-eth1"));
        assert!(t.linked("booth12-eth0", "booth12-eth0"));
        assert!(!t.linked("opt-03", "booth13-eth0"));
        assert!(t.linked("opt-03", "booth12"));
        assert!(!t.linked("x", "y"));
        assert_eq!(t.booth_members("booth12"), vec!["booth12-eth0", "booth12-eth1"]);
    }

    #[test]
    fn text_round_trip() {
        let t = TopologyMap::parse(SAMPLE).unwrap();
        assert_eq!(TopologyMap::parse(&t.to_text()).unwrap(), t);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(matches!(TopologyMap::parse("edge iface=a port=b"), Err(TopologyError::Parse { line: 1, .. })));
        assert!(TopologyMap::parse("link iface=a").is_err());
        assert!(TopologyMap::parse("link iface=a port=b booth=c").is_err());
        assert!(TopologyMap::parse("link iface=a color=b").is_err());
        assert!(TopologyMap::parse("link iface= port=b").is_err());
        assert!(matches!(
            TopologyMap::parse("link iface=a port=b\nlink iface=a port=b"),
            Err(TopologyError::DuplicateLink { .. })
        ));
        assert!(matches!(
            TopologyMap::parse("link iface=a port=b\nlink iface=a port=c"),
            Err(TopologyError::PortConflict { .. })
        ));
    }

    #[test]
    fn expand_hops() {
        let t = TopologyMap::parse(SAMPLE).unwrap();
        let one = t.expand(["booth12"], 1);
        assert_eq!(one.len(), 3);
        let two = t.expand(["booth12"], 2);
        assert!(two.contains("opt-03"));
    }
}
