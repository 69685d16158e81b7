//! Lattice text format, one record per utterance:
//!
//! ```text
//! # comment
//! LATTICE <utt-id> <num-nodes> <num-arcs>
//! N <id> <frame-time>
//! A <start> <end> <phone> <lm-logprob> <s1,s2,...> [<correctness>]
//! ```

use super::{sort_arcs, Arc, Issue, Lattice, Node};
use crate::error::{Error, Result};

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn num<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| perr(line, format!("bad {what} `{tok}`")))
}

struct Record {
    utt: String,
    header_line: usize,
    nodes: Vec<(usize, Node)>,
    arcs: Vec<(usize, Arc)>,
    want_nodes: usize,
    want_arcs: usize,
}

impl Record {
    fn finish(self) -> Result<Lattice> {
        if self.nodes.len() != self.want_nodes || self.arcs.len() != self.want_arcs {
            return Err(perr(
                self.header_line,
                format!(
                    "header declares {} nodes and {} arcs, found {} and {}",
                    self.want_nodes,
                    self.want_arcs,
                    self.nodes.len(),
                    self.arcs.len()
                ),
            ));
        }
        let node_lines: Vec<usize> = self.nodes.iter().map(|(l, _)| *l).collect();
        let arc_lines: Vec<usize> = self.arcs.iter().map(|(l, _)| *l).collect();
        let nodes = self.nodes.into_iter().map(|(_, n)| n).collect();
        let arcs = self.arcs.into_iter().map(|(_, a)| a).collect();
        Lattice::build(self.utt.clone(), nodes, arcs).map_err(|issue| match issue {
            Issue::Node(i, m) => perr(node_lines[i], m),
            Issue::Arc(i, m) => perr(arc_lines[i], m),
            Issue::Cycle(i) => perr(arc_lines[i], "lattice contains a cycle"),
            Issue::Global(m) => perr(self.header_line, format!("lattice {}: {m}", self.utt)),
        })
    }
}

/// Parses every lattice record in `text`.
pub fn parse_lattices(text: &str) -> Result<Vec<Lattice>> {
    let mut out = Vec::new();
    let mut cur: Option<Record> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let toks: Vec<&str> = body.split_whitespace().collect();
        match toks[0] {
            "LATTICE" => {
                if toks.len() != 4 {
                    return Err(perr(
                        line,
                        "expected `LATTICE <utt-id> <num-nodes> <num-arcs>`",
                    ));
                }
                if let Some(rec) = cur.take() {
                    out.push(rec.finish()?);
                }
                cur = Some(Record {
                    utt: toks[1].to_string(),
                    header_line: line,
                    nodes: Vec::new(),
                    arcs: Vec::new(),
                    want_nodes: num(toks[2], line, "node count")?,
                    want_arcs: num(toks[3], line, "arc count")?,
                });
            }
            "N" => {
                let rec = cur
                    .as_mut()
                    .ok_or_else(|| perr(line, "node line before LATTICE header"))?;
                if toks.len() != 3 {
                    return Err(perr(line, "expected `N <id> <frame-time>`"));
                }
                let node = Node {
                    id: num(toks[1], line, "node id")?,
                    time: num(toks[2], line, "frame time")?,
                };
                rec.nodes.push((line, node));
            }
            "A" => {
                let rec = cur
                    .as_mut()
                    .ok_or_else(|| perr(line, "arc line before LATTICE header"))?;
                if toks.len() != 6 && toks.len() != 7 {
                    return Err(perr(
                        line,
                        "expected `A <start> <end> <phone> <lm-logprob> <alignment> [<correctness>]`",
                    ));
                }
                let alignment = toks[5]
                    .split(',')
                    .map(|s| num::<usize>(s, line, "state id"))
                    .collect::<Result<Vec<_>>>()?;
                let correctness = match toks.get(6) {
                    Some(t) => Some(num::<f64>(t, line, "correctness")?),
                    None => None,
                };
                let node_ref = |t: &str| -> Result<usize> {
                    let id: usize = num(t, line, "node id")?;
                    if id >= rec.want_nodes {
                        return Err(perr(line, format!("dangling node id {id}")));
                    }
                    Ok(id)
                };
                let arc = Arc {
                    start: node_ref(toks[1])?,
                    end: node_ref(toks[2])?,
                    phone: toks[3].to_string(),
                    lm_logprob: num(toks[4], line, "lm log-probability")?,
                    alignment,
                    correctness,
                };
                rec.arcs.push((line, arc));
            }
            other => return Err(perr(line, format!("unknown record type `{other}`"))),
        }
    }
    if let Some(rec) = cur.take() {
        out.push(rec.finish()?);
    }
    Ok(out)
}

/// Parses exactly one lattice record.
pub fn parse_lattice(text: &str) -> Result<Lattice> {
    let mut lats = parse_lattices(text)?;
    match lats.len() {
        1 => Ok(lats.pop().expect("one lattice")),
        0 => Err(Error::Empty("lattice file")),
        n => Err(perr(0, format!("expected one lattice record, found {n}"))),
    }
}

/// Deterministic text form: nodes by id, arcs by `(start, end, phone)`.
pub fn serialize_lattice(lat: &Lattice) -> String {
    let mut s = format!(
        "LATTICE {} {} {}\n",
        lat.utt_id,
        lat.nodes().len(),
        lat.arcs().len()
    );
    for n in lat.nodes() {
        s.push_str(&format!("N {} {}\n", n.id, n.time));
    }
    let mut arcs = lat.arcs().to_vec();
    sort_arcs(&mut arcs);
    for a in &arcs {
        let align: Vec<String> = a.alignment.iter().map(usize::to_string).collect();
        s.push_str(&format!(
            "A {} {} {} {} {}",
            a.start,
            a.end,
            a.phone,
            a.lm_logprob,
            align.join(",")
        ));
        if let Some(c) = a.correctness {
            s.push_str(&format!(" {c}"));
        }
        s.push('\n');
    }
    s
}
