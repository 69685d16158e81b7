//! Lattices: DAGs of phone arcs with LM scores and frame-to-state alignments,
//! their forward-backward statistics, MPE correctness statistics and the
//! text file format.

mod accuracy;
mod fb;
mod text;

pub use accuracy::{approx_phone_accuracy, TimedPhone};
pub use fb::{
    arc_acoustic_score, forward_backward, log_softmax_rows, mpe_occupancy, mpe_stats,
    state_occupancy, FbResult, MpeArcStats,
};
pub use text::{parse_lattice, parse_lattices, serialize_lattice};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub time: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub start: usize,
    pub end: usize,
    pub phone: String,
    pub lm_logprob: f64,
    /// State id of every frame the arc spans.
    pub alignment: Vec<usize>,
    /// Raw phone accuracy; when absent it is computed from the reference.
    pub correctness: Option<f64>,
}

/// Position of a validation problem, mapped to line numbers by the parser.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Issue {
    Node(usize, String),
    Arc(usize, String),
    Cycle(usize),
    Global(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub utt_id: String,
    nodes: Vec<Node>,
    arcs: Vec<Arc>,
    start: usize,
    end: usize,
    /// Node ids in topological order.
    order: Vec<usize>,
    incoming: Vec<Vec<usize>>,
    outgoing: Vec<Vec<usize>>,
}

impl Lattice {
    /// Builds a lattice, checking every structural invariant.
    pub fn new(utt_id: impl Into<String>, nodes: Vec<Node>, arcs: Vec<Arc>) -> Result<Self> {
        let utt_id = utt_id.into();
        Self::build(utt_id.clone(), nodes, arcs).map_err(|issue| Error::InvalidLattice {
            utt: utt_id,
            msg: match issue {
                Issue::Node(i, m) => format!("node {i}: {m}"),
                Issue::Arc(i, m) => format!("arc {i}: {m}"),
                Issue::Cycle(i) => format!("arc {i}: lattice contains a cycle"),
                Issue::Global(m) => m,
            },
        })
    }

    pub(crate) fn build(
        utt_id: String,
        mut nodes: Vec<Node>,
        arcs: Vec<Arc>,
    ) -> std::result::Result<Self, Issue> {
        if nodes.is_empty() {
            return Err(Issue::Global("lattice has no nodes".into()));
        }
        if arcs.is_empty() {
            return Err(Issue::Global("lattice has no arcs".into()));
        }
        let n = nodes.len();
        let mut seen = vec![false; n];
        for (i, node) in nodes.iter().enumerate() {
            if node.id >= n {
                return Err(Issue::Node(i, format!("id {} outside 0..{n}", node.id)));
            }
            if std::mem::replace(&mut seen[node.id], true) {
                return Err(Issue::Node(i, format!("duplicate id {}", node.id)));
            }
        }
        nodes.sort_by_key(|nd| nd.id);

        let mut incoming = vec![Vec::new(); n];
        let mut outgoing = vec![Vec::new(); n];
        for (i, arc) in arcs.iter().enumerate() {
            if arc.start >= n || arc.end >= n {
                return Err(Issue::Arc(i, "dangling node id".into()));
            }
            if arc.start == arc.end {
                return Err(Issue::Cycle(i));
            }
            if arc.alignment.is_empty() {
                return Err(Issue::Arc(i, "empty alignment".into()));
            }
            if !arc.lm_logprob.is_finite() || arc.correctness.is_some_and(|c| !c.is_finite()) {
                return Err(Issue::Arc(i, "non-finite score".into()));
            }
            outgoing[arc.start].push(i);
            incoming[arc.end].push(i);
        }

        // Kahn's algorithm; leftover arcs lie on a cycle.
        let mut indeg: Vec<usize> = incoming.iter().map(Vec::len).collect();
        let mut order = Vec::with_capacity(n);
        let mut ready: Vec<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
        ready.reverse();
        while let Some(v) = ready.pop() {
            order.push(v);
            for &a in outgoing[v].iter().rev() {
                let e = arcs[a].end;
                indeg[e] -= 1;
                if indeg[e] == 0 {
                    ready.push(e);
                }
            }
        }
        if order.len() < n {
            let a = (0..arcs.len())
                .find(|&a| indeg[arcs[a].end] > 0 && indeg[arcs[a].start] > 0)
                .unwrap_or(0);
            return Err(Issue::Cycle(a));
        }

        for (i, arc) in arcs.iter().enumerate() {
            let (ts, te) = (nodes[arc.start].time, nodes[arc.end].time);
            if te <= ts {
                return Err(Issue::Arc(
                    i,
                    format!("end node time {te} does not follow start node time {ts}"),
                ));
            }
            if arc.alignment.len() != te - ts {
                return Err(Issue::Arc(
                    i,
                    format!(
                        "alignment length {} differs from span {}",
                        arc.alignment.len(),
                        te - ts
                    ),
                ));
            }
        }

        let sources: Vec<usize> = (0..n).filter(|&v| incoming[v].is_empty()).collect();
        let sinks: Vec<usize> = (0..n).filter(|&v| outgoing[v].is_empty()).collect();
        if sources.len() != 1 {
            return Err(Issue::Global(format!(
                "expected one start node, found {}",
                sources.len()
            )));
        }
        if sinks.len() != 1 {
            return Err(Issue::Global(format!(
                "expected one end node, found {}",
                sinks.len()
            )));
        }
        let (start, end) = (sources[0], sinks[0]);
        if nodes[start].time != 0 {
            return Err(Issue::Node(start, "start node must be at frame 0".into()));
        }
        // With a unique source and sink in a DAG every node is reachable from
        // the start and reaches the end.

        // Stable time order is also a topological order.
        order.sort_by_key(|&v| (nodes[v].time, v));

        Ok(Self {
            utt_id,
            nodes,
            arcs,
            start,
            end,
            order,
            incoming,
            outgoing,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn start_node(&self) -> usize {
        self.start
    }

    pub fn end_node(&self) -> usize {
        self.end
    }

    /// Number of frames covered: the end node's time.
    pub fn num_frames(&self) -> usize {
        self.nodes[self.end].time
    }

    pub fn arc_start_frame(&self, arc: usize) -> usize {
        self.nodes[self.arcs[arc].start].time
    }

    pub fn arc_end_frame(&self, arc: usize) -> usize {
        self.nodes[self.arcs[arc].end].time
    }

    pub(crate) fn topo_order(&self) -> &[usize] {
        &self.order
    }

    pub(crate) fn incoming(&self, node: usize) -> &[usize] {
        &self.incoming[node]
    }

    pub(crate) fn outgoing(&self, node: usize) -> &[usize] {
        &self.outgoing[node]
    }

    /// Fails if any aligned state id is outside `0..num_states`.
    pub fn check_states(&self, num_states: usize) -> Result<()> {
        for (i, arc) in self.arcs.iter().enumerate() {
            if let Some(&s) = arc.alignment.iter().find(|&&s| s >= num_states) {
                return Err(Error::InvalidLattice {
                    utt: self.utt_id.clone(),
                    msg: format!("arc {i}: state {s} out of range for {num_states} output units"),
                });
            }
        }
        Ok(())
    }

    /// Per-arc correctness: the file value where present, otherwise the
    /// approximate phone accuracy against `reference`.
    pub fn arc_correctness(&self, reference: &[TimedPhone]) -> Result<Vec<f64>> {
        self.arcs
            .iter()
            .enumerate()
            .map(|(i, arc)| match arc.correctness {
                Some(c) => Ok(c),
                None => approx_phone_accuracy(
                    &arc.phone,
                    self.arc_start_frame(i),
                    self.arc_end_frame(i),
                    reference,
                ),
            })
            .collect()
    }

    /// Same lattice with arcs in canonical `(start, end, phone)` order.
    pub fn canonical(&self) -> Self {
        let mut arcs = self.arcs.clone();
        sort_arcs(&mut arcs);
        Self::build(self.utt_id.clone(), self.nodes.clone(), arcs).expect("already validated")
    }
}

pub(crate) fn sort_arcs(arcs: &mut [Arc]) {
    arcs.sort_by(|a, b| {
        (a.start, a.end, &a.phone, &a.alignment)
            .cmp(&(b.start, b.end, &b.phone, &b.alignment))
            .then(a.lm_logprob.total_cmp(&b.lm_logprob))
    });
}

/// Numerator (reference-constrained) and denominator (competitor) lattices of
/// one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct NumDenPair {
    pub num: Lattice,
    pub den: Lattice,
}

impl NumDenPair {
    pub fn new(num: Lattice, den: Lattice) -> Result<Self> {
        if num.utt_id != den.utt_id {
            return Err(Error::InvalidLattice {
                utt: num.utt_id.clone(),
                msg: format!(
                    "numerator/denominator utterance ids differ (`{}`)",
                    den.utt_id
                ),
            });
        }
        if num.num_frames() != den.num_frames() {
            return Err(Error::InvalidLattice {
                utt: num.utt_id.clone(),
                msg: format!(
                    "numerator covers {} frames, denominator {}",
                    num.num_frames(),
                    den.num_frames()
                ),
            });
        }
        Ok(Self { num, den })
    }

    pub fn utt_id(&self) -> &str {
        &self.num.utt_id
    }

    pub fn num_frames(&self) -> usize {
        self.num.num_frames()
    }
}
