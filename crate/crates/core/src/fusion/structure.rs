use std::fmt;

use crate::error::{Error, Result};

/// The named message-passing layouts between scales.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StructureKind {
    BottomUp,
    TopDown,
    Skip,
    AllToOne,
}

impl StructureKind {
    pub const ALL: [StructureKind; 4] =
        [StructureKind::BottomUp, StructureKind::TopDown, StructureKind::Skip, StructureKind::AllToOne];

    pub fn name(&self) -> &'static str {
        match self {
            StructureKind::BottomUp => "bottom_up",
            StructureKind::TopDown => "top_down",
            StructureKind::Skip => "skip",
            StructureKind::AllToOne => "all_to_one",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Structure(format!("unknown passing structure `{s}`")))
    }
}

impl fmt::Display for StructureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Directed scale edges plus the update schedule derived from them.
///
/// Scales are zero-based here (scale 0 is the coarsest). Edges run in list
/// order; the schedule is a topological order that keeps scales in the order
/// they first appear in the edge list, with scales no edge touches first.
/// The prediction is read from the target of the last edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PassingStructure {
    kind: Option<StructureKind>,
    scales: usize,
    edges: Vec<(usize, usize)>,
    sources: Vec<Vec<usize>>,
    order: Vec<usize>,
    prediction: usize,
}

/// Edge list of a named structure over `scales` scales.
pub fn build_passing_structure(kind: StructureKind, scales: usize) -> Result<PassingStructure> {
    if scales == 0 {
        return Err(Error::Structure("need at least one scale".into()));
    }
    let l = scales;
    let edges: Vec<(usize, usize)> = match kind {
        StructureKind::BottomUp => (0..l - 1).map(|i| (i, i + 1)).collect(),
        StructureKind::TopDown => (1..l).rev().map(|i| (i, i - 1)).collect(),
        StructureKind::AllToOne => (0..l - 1).map(|i| (i, l - 1)).collect(),
        StructureKind::Skip => {
            let mut e: Vec<(usize, usize)> = (0..l.saturating_sub(2)).map(|i| (i, i + 2)).collect();
            if l > 1 {
                e.push((l - 2, l - 1));
            }
            e
        }
    };
    PassingStructure::build(Some(kind), scales, edges)
}

impl PassingStructure {
    /// An explicit edge list (zero-based scales).
    pub fn from_edges(scales: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        Self::build(None, scales, edges)
    }

    fn build(kind: Option<StructureKind>, scales: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        if scales == 0 {
            return Err(Error::Structure("need at least one scale".into()));
        }
        if scales > 1 && edges.is_empty() {
            return Err(Error::Structure(format!("{scales} scales but no edges")));
        }
        let mut sources = vec![Vec::new(); scales];
        for (k, &(s, t)) in edges.iter().enumerate() {
            if s >= scales || t >= scales {
                return Err(Error::Structure(format!("edge {}>{} outside 1..{scales}", s + 1, t + 1)));
            }
            if s == t {
                return Err(Error::Structure(format!("edge {}>{} is a self loop", s + 1, t + 1)));
            }
            if edges[..k].contains(&(s, t)) {
                return Err(Error::Structure(format!("edge {}>{} listed twice", s + 1, t + 1)));
            }
            sources[t].push(s);
        }

        let mut appearance: Vec<usize> = (0..scales).filter(|l| !edges.iter().any(|e| e.0 == *l || e.1 == *l)).collect();
        for &(s, t) in &edges {
            for l in [s, t] {
                if !appearance.contains(&l) {
                    appearance.push(l);
                }
            }
        }
        let mut order = Vec::with_capacity(scales);
        while order.len() < scales {
            let next = appearance
                .iter()
                .copied()
                .find(|l| !order.contains(l) && sources[*l].iter().all(|s| order.contains(s)))
                .ok_or_else(|| Error::Structure("scale edges contain a cycle".into()))?;
            order.push(next);
        }
        let prediction = edges.last().map_or(0, |e| e.1);
        Ok(Self { kind, scales, edges, sources, order, prediction })
    }

    pub fn kind(&self) -> Option<StructureKind> {
        self.kind
    }

    pub fn scales(&self) -> usize {
        self.scales
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Source scales feeding `l`, in edge order.
    pub fn sources(&self, l: usize) -> &[usize] {
        &self.sources[l]
    }

    /// Scales in update order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn prediction_scale(&self) -> usize {
        self.prediction
    }

    /// `1>2,2>3` style listing with one-based scales.
    pub fn edge_list(&self) -> String {
        format_edges(&self.edges)
    }
}

pub fn format_edges(edges: &[(usize, usize)]) -> String {
    edges.iter().map(|(s, t)| format!("{}>{}", s + 1, t + 1)).collect::<Vec<_>>().join(",")
}

/// Parses `1>2,2>3` into zero-based pairs.
pub fn parse_edges(text: &str) -> Result<Vec<(usize, usize)>> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|item| {
            let bad = || Error::Structure(format!("bad edge `{}`, expected `source>target`", item.trim()));
            let (s, t) = item.split_once('>').ok_or_else(bad)?;
            let s: usize = s.trim().parse().map_err(|_| bad())?;
            let t: usize = t.trim().parse().map_err(|_| bad())?;
            if s == 0 || t == 0 {
                return Err(Error::Structure("scales are numbered from 1".into()));
            }
            Ok((s - 1, t - 1))
        })
        .collect()
}
