//! Synthetic phone-recognition task.
//!
//! Phones come in confusable pairs whose state emitters sit close together in
//! feature space. Each utterance is a random phone string; every phone spans
//! `states_per_phone` states with 1-3 frames each. The numerator lattice is
//! the reference path. The denominator lattice is a sausage over the
//! reference segmentation: each segment carries the reference arc plus, with
//! probability `confusability`, up to `alternatives` competitor phones
//! (the confusable partner first) re-using the reference state durations.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TaskInfo, Utterance};
use crate::error::{Error, Result};
use crate::lattice::{Arc, Lattice, Node, NumDenPair, TimedPhone};
use crate::param::FrameMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    pub train_utts: usize,
    pub valid_utts: usize,
    /// Number of phones; rounded up to an even number of confusable pairs.
    pub phones: usize,
    pub states_per_phone: usize,
    pub input_dim: usize,
    pub avg_frames: usize,
    /// Probability that a segment gets competitor arcs; 0 makes the
    /// denominator equal to the numerator.
    pub confusability: f64,
    pub alternatives: usize,
    /// Std. dev. of the per-frame emission noise.
    pub noise: f64,
    /// Distance between the means of paired states, relative to the spread
    /// of unrelated means.
    pub pair_separation: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            train_utts: 200,
            valid_utts: 40,
            phones: 8,
            states_per_phone: 3,
            input_dim: 10,
            avg_frames: 40,
            confusability: 0.8,
            alternatives: 2,
            noise: 1.0,
            pair_separation: 0.35,
        }
    }
}

impl GenConfig {
    pub fn num_states(&self) -> usize {
        self.num_phones() * self.states_per_phone
    }

    fn num_phones(&self) -> usize {
        self.phones.div_ceil(2) * 2
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.phones < 2 {
            return bad("phones must be at least 2");
        }
        if self.states_per_phone == 0 || self.input_dim == 0 {
            return bad("states_per_phone and input_dim must be positive");
        }
        if self.train_utts == 0 {
            return bad("train_utts must be positive");
        }
        if self.avg_frames < 2 * self.states_per_phone {
            return bad("avg_frames must cover at least one phone");
        }
        if !(0.0..=1.0).contains(&self.confusability) {
            return bad("confusability must lie in [0, 1]");
        }
        if !(self.noise > 0.0 && self.pair_separation >= 0.0) {
            return bad("noise must be positive and pair_separation non-negative");
        }
        Ok(())
    }
}

fn phone_name(p: usize) -> String {
    format!("p{p:02}")
}

struct Emitters {
    means: Vec<Vec<f64>>,
    lm: Vec<f64>,
}

fn emitters(cfg: &GenConfig, rng: &mut ChaCha8Rng) -> Emitters {
    let p = cfg.num_phones();
    let s = cfg.states_per_phone;
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let mut means = vec![Vec::new(); p * s];
    for pair in 0..p / 2 {
        for st in 0..s {
            let base: Vec<f64> = (0..cfg.input_dim).map(|_| 2.0 * std.sample(rng)).collect();
            let offset: Vec<f64> = (0..cfg.input_dim)
                .map(|_| cfg.pair_separation * std.sample(rng))
                .collect();
            let a = (2 * pair) * s + st;
            let b = (2 * pair + 1) * s + st;
            means[a] = base.iter().zip(&offset).map(|(m, o)| m + o).collect();
            means[b] = base.iter().zip(&offset).map(|(m, o)| m - o).collect();
        }
    }
    let raw: Vec<f64> = (0..p).map(|_| rng.random_range(0.5..1.5)).collect();
    let z: f64 = raw.iter().sum();
    Emitters {
        means,
        lm: raw.iter().map(|w| (w / z).ln()).collect(),
    }
}

fn utterance(
    id: String,
    cfg: &GenConfig,
    em: &Emitters,
    rng: &mut ChaCha8Rng,
) -> Result<Utterance> {
    let p = cfg.num_phones();
    let s = cfg.states_per_phone;
    let noise = Normal::new(0.0, cfg.noise).expect("positive noise");
    let target = rng.random_range(cfg.avg_frames * 3 / 4..=cfg.avg_frames * 5 / 4);

    // Phone string with per-state durations.
    let mut segments: Vec<(usize, Vec<usize>)> = Vec::new();
    let mut frames = 0;
    while frames < target || segments.is_empty() {
        let phone = rng.random_range(0..p);
        let durs: Vec<usize> = (0..s).map(|_| rng.random_range(1..=3)).collect();
        frames += durs.iter().sum::<usize>();
        segments.push((phone, durs));
    }

    let mut states = Vec::with_capacity(frames);
    let mut reference = Vec::new();
    let mut nodes = vec![Node { id: 0, time: 0 }];
    let mut num_arcs = Vec::new();
    let mut den_arcs = Vec::new();
    for (i, (phone, durs)) in segments.iter().enumerate() {
        let start = states.len();
        let align_for = |ph: usize| -> Vec<usize> {
            durs.iter()
                .enumerate()
                .flat_map(|(st, &d)| std::iter::repeat_n(ph * s + st, d))
                .collect()
        };
        let align = align_for(*phone);
        states.extend_from_slice(&align);
        let end = states.len();
        nodes.push(Node {
            id: i + 1,
            time: end,
        });
        reference.push(TimedPhone::new(phone_name(*phone), start, end));
        let arc = |ph: usize| Arc {
            start: i,
            end: i + 1,
            phone: phone_name(ph),
            lm_logprob: em.lm[ph],
            alignment: align_for(ph),
            correctness: None,
        };
        num_arcs.push(arc(*phone));
        den_arcs.push(arc(*phone));
        if cfg.alternatives > 0 && rng.random_bool(cfg.confusability) {
            let partner = *phone ^ 1;
            let mut others: Vec<usize> = (0..p).filter(|&q| q != *phone && q != partner).collect();
            others.shuffle(rng);
            for alt in std::iter::once(partner)
                .chain(others)
                .take(cfg.alternatives)
            {
                den_arcs.push(arc(alt));
            }
        }
    }

    let mut feats = FrameMatrix::zeros(frames, cfg.input_dim);
    for (t, &k) in states.iter().enumerate() {
        for (x, m) in feats.row_mut(t).iter_mut().zip(&em.means[k]) {
            *x = m + noise.sample(rng);
        }
    }
    let num = Lattice::new(id.clone(), nodes.clone(), num_arcs)?;
    let den = Lattice::new(id.clone(), nodes, den_arcs)?;
    Utterance::new(id, feats, reference, states, NumDenPair::new(num, den)?)
}

/// Generates the train and validation splits; deterministic in `cfg.seed`.
pub fn generate(cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let em = emitters(cfg, &mut rng);
    let train = (0..cfg.train_utts)
        .map(|i| utterance(format!("train-{i:04}"), cfg, &em, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let valid = (0..cfg.valid_utts)
        .map(|i| utterance(format!("valid-{i:04}"), cfg, &em, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let mut state_counts = vec![0; cfg.num_states()];
    for u in &train {
        for &k in &u.states {
            state_counts[k] += 1;
        }
    }
    Ok(Dataset {
        info: TaskInfo {
            input_dim: cfg.input_dim,
            num_states: cfg.num_states(),
            phones: (0..cfg.num_phones()).map(phone_name).collect(),
            states_per_phone: cfg.states_per_phone,
            state_counts,
            seed: cfg.seed,
        },
        train,
        valid,
    })
}
