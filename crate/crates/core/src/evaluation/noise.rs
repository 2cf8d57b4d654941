//! Character-level corruption for robustness experiments.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};

/// Corrupts `floor(rate · len)` distinct character positions of `text`.
///
/// Each chosen position is deleted or replaced, with equal probability, by
/// a character drawn from the text's own characters. Nothing is inserted.
pub fn inject_noise<R: Rng + ?Sized>(text: &str, rate: f64, rng: &mut R) -> Result<String> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::invalid(format!("noise rate {rate} is outside [0, 1]")));
    }
    let chars: Vec<char> = text.chars().collect();
    let m = (rate * chars.len() as f64).floor() as usize;
    if m == 0 {
        return Ok(text.to_string());
    }
    let mut positions = sample(rng, chars.len(), m).into_vec();
    positions.sort_unstable();
    let mut edit: Vec<Option<char>> = chars.iter().copied().map(Some).collect();
    for p in positions {
        edit[p] = if rng.gen_bool(0.5) {
            Some(chars[rng.gen_range(0..chars.len())])
        } else {
            None
        };
    }
    Ok(edit.into_iter().flatten().collect())
}
