use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reference phone occupying frames `start..end`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimedPhone {
    pub phone: String,
    pub start: usize,
    pub end: usize,
}

impl TimedPhone {
    pub fn new(phone: impl Into<String>, start: usize, end: usize) -> Self {
        Self {
            phone: phone.into(),
            start,
            end,
        }
    }
}

/// Approximate accuracy of a hypothesised phone spanning `start..end`.
///
/// For every reference phone `z`, `e` is the fraction of `z`'s duration the
/// arc overlaps; the score is `-1 + 2e` for a matching label and `-1 + e`
/// otherwise, and the arc takes the best score over the reference. This is
/// the overlap rule of the MPE literature.
pub fn approx_phone_accuracy(
    phone: &str,
    start: usize,
    end: usize,
    reference: &[TimedPhone],
) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Empty("reference transcription"));
    }
    let best = reference
        .iter()
        .map(|z| {
            let overlap = end.min(z.end).saturating_sub(start.max(z.start));
            let dur = z.end.saturating_sub(z.start).max(1);
            let e = overlap as f64 / dur as f64;
            if z.phone == phone {
                -1.0 + 2.0 * e
            } else {
                -1.0 + e
            }
        })
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(best)
}
