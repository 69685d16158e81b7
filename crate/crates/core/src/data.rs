//! Utterances and on-disk datasets.
//!
//! A dataset directory holds `task.json` plus, for each split, the utterance
//! records `<split>.json` and the lattices `<split>.num.lat` /
//! `<split>.den.lat` in the lattice text format.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::lattice::{parse_lattices, serialize_lattice, NumDenPair, TimedPhone};
use crate::param::FrameMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub features: FrameMatrix,
    pub reference: Vec<TimedPhone>,
    /// Reference state of every frame (CE targets).
    pub states: Vec<usize>,
    pub lattices: NumDenPair,
}

impl Utterance {
    pub fn new(
        id: impl Into<String>,
        features: FrameMatrix,
        reference: Vec<TimedPhone>,
        states: Vec<usize>,
        lattices: NumDenPair,
    ) -> Result<Self> {
        let id = id.into();
        let t = features.rows();
        check_dim("state labels", t, states.len())?;
        check_dim("lattice frames", t, lattices.num_frames())?;
        if lattices.utt_id() != id {
            return Err(Error::InvalidLattice {
                utt: id,
                msg: format!("lattice belongs to `{}`", lattices.utt_id()),
            });
        }
        if reference.is_empty() {
            return Err(Error::Empty("reference transcription"));
        }
        Ok(Self {
            id,
            features,
            reference,
            states,
            lattices,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.features.rows()
    }
}

/// Task-level metadata shared by all splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInfo {
    pub input_dim: usize,
    pub num_states: usize,
    pub phones: Vec<String>,
    pub states_per_phone: usize,
    /// Training-set state frequencies, for prior estimation.
    pub state_counts: Vec<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub info: TaskInfo,
    pub train: Vec<Utterance>,
    pub valid: Vec<Utterance>,
}

impl Dataset {
    pub fn split(&self, name: &str) -> Result<&[Utterance]> {
        match name {
            "train" => Ok(&self.train),
            "valid" => Ok(&self.valid),
            other => Err(Error::Config(format!(
                "unknown split `{other}` (train, valid)"
            ))),
        }
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(dir.join("task.json"), &to_json(&self.info)?)?;
        for (name, utts) in [("train", &self.train), ("valid", &self.valid)] {
            write_split(dir, name, utts)?;
        }
        Ok(())
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let info: TaskInfo = from_json(&read_file(dir.join("task.json"))?, "task.json")?;
        Ok(Self {
            train: read_split(dir, "train")?,
            valid: read_split(dir, "valid")?,
            info,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct UttRecord {
    id: String,
    features: FrameMatrix,
    reference: Vec<TimedPhone>,
    states: Vec<usize>,
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| Error::Config(format!("serialisation failed: {e}")))
}

fn from_json<T: serde::de::DeserializeOwned>(s: &str, what: &str) -> Result<T> {
    serde_json::from_str(s).map_err(|e| Error::Parse {
        line: e.line(),
        msg: format!("{what}: {e}"),
    })
}

fn write_file(path: impl AsRef<Path>, text: &str) -> Result<()> {
    fs::write(path.as_ref(), text).map_err(|e| Error::io(path.as_ref(), e))
}

fn read_file(path: impl AsRef<Path>) -> Result<String> {
    fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))
}

pub fn write_split(dir: &Path, name: &str, utts: &[Utterance]) -> Result<()> {
    let mut records = String::new();
    let mut num = String::new();
    let mut den = String::new();
    for u in utts {
        let rec = UttRecord {
            id: u.id.clone(),
            features: u.features.clone(),
            reference: u.reference.clone(),
            states: u.states.clone(),
        };
        records.push_str(&to_json(&rec)?);
        records.push('\n');
        num.push_str(&serialize_lattice(&u.lattices.num));
        den.push_str(&serialize_lattice(&u.lattices.den));
    }
    write_file(dir.join(format!("{name}.json")), &records)?;
    write_file(dir.join(format!("{name}.num.lat")), &num)?;
    write_file(dir.join(format!("{name}.den.lat")), &den)
}

/// Reads one split; utterance records are JSON lines.
pub fn read_split(dir: &Path, name: &str) -> Result<Vec<Utterance>> {
    let records = read_file(dir.join(format!("{name}.json")))?;
    let mut nums: HashMap<String, _> =
        parse_lattices(&read_file(dir.join(format!("{name}.num.lat")))?)?
            .into_iter()
            .map(|l| (l.utt_id.clone(), l))
            .collect();
    let mut dens: HashMap<String, _> =
        parse_lattices(&read_file(dir.join(format!("{name}.den.lat")))?)?
            .into_iter()
            .map(|l| (l.utt_id.clone(), l))
            .collect();
    let mut out = Vec::new();
    for line in records.lines().filter(|l| !l.trim().is_empty()) {
        let rec: UttRecord = from_json(line, name)?;
        let missing = |kind: &str| Error::InvalidLattice {
            utt: rec.id.clone(),
            msg: format!("no {kind} lattice"),
        };
        let num = nums.remove(&rec.id).ok_or_else(|| missing("numerator"))?;
        let den = dens.remove(&rec.id).ok_or_else(|| missing("denominator"))?;
        out.push(Utterance::new(
            rec.id,
            rec.features,
            rec.reference,
            rec.states,
            NumDenPair::new(num, den)?,
        )?);
    }
    Ok(out)
}
