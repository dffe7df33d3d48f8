//! Synthetic feature corpora with planted ground truth.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{DType, Tensor};
use crate::redundancy::sample_without_replacement;
use crate::rng;

/// A video of `n_events` contiguous events. Frames are patch maps drawn
/// around per-event Gaussian means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    #[serde(rename = "T")]
    pub t: usize,
    pub d: usize,
    pub n_events: usize,
    pub relevant_fraction: f64,
    pub noise_std: f64,
    pub seed: u64,
    /// Patches per frame; must be a square number.
    #[serde(default = "default_patches")]
    pub patches: usize,
    /// Rows of the text embedding.
    #[serde(default = "default_text_tokens")]
    pub text_tokens: usize,
}

fn default_patches() -> usize {
    16
}

fn default_text_tokens() -> usize {
    4
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let mut keys = Vec::new();
        if self.t == 0 {
            keys.push("T");
        }
        if self.d == 0 {
            keys.push("d");
        }
        if self.n_events == 0 || self.n_events > self.t {
            keys.push("n_events");
        }
        if !(self.relevant_fraction > 0.0 && self.relevant_fraction <= 1.0) {
            keys.push("relevant_fraction");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            keys.push("noise_std");
        }
        let side = (self.patches as f64).sqrt().round() as usize;
        if self.patches == 0 || side * side != self.patches {
            keys.push("patches");
        }
        if self.text_tokens == 0 {
            keys.push("text_tokens");
        }
        if keys.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation {
                keys: keys.into_iter().map(String::from).collect(),
                message: "need 1 <= n_events <= T, relevant_fraction in (0, 1], noise_std >= 0, square patches".into(),
            })
        }
    }

    pub fn n_relevant_events(&self) -> usize {
        ((self.relevant_fraction * self.n_events as f64).round() as usize).clamp(1, self.n_events)
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticVideo {
    /// `[T × patches × d]`.
    pub frames: Tensor,
    /// `[text_tokens × d]`.
    pub text: Tensor,
    /// 1 for frames belonging to a relevant event.
    pub truth: Vec<u8>,
    pub event_of_frame: Vec<usize>,
    pub relevant_events: Vec<usize>,
}

impl SyntheticVideo {
    pub fn truth_tensor(&self) -> Tensor {
        Tensor::from_parts(
            vec![self.truth.len()],
            self.truth.iter().map(|&b| b as f64).collect(),
            DType::F32,
        )
    }

    /// Mean text row, usable as the q‖a embedding for redundancy profiling.
    pub fn qa_embedding(&self) -> Result<Tensor> {
        Tensor::vector(crate::numerics::mean_rows(&self.text)?, self.text.dtype())
    }
}

fn normal<R: Rng>(r: &mut R) -> f64 {
    StandardNormal.sample(r)
}

/// Event boundaries: `t` frames split into `n` contiguous runs, the first
/// `t % n` one frame longer.
pub fn event_segments(t: usize, n: usize) -> Vec<usize> {
    let base = t / n;
    let extra = t % n;
    (0..n)
        .flat_map(|e| std::iter::repeat_n(e, base + usize::from(e < extra)))
        .collect()
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticVideo> {
    spec.validate()?;
    let (t, d, n_p) = (spec.t, spec.d, spec.patches);
    let mut r = rng::stream(spec.seed, rng::purpose::SYNTH, 0);
    let means: Vec<Vec<f64>> = (0..spec.n_events)
        .map(|_| (0..n_p * d).map(|_| normal(&mut r)).collect())
        .collect();
    let event_of_frame = event_segments(t, spec.n_events);
    let relevant_events =
        sample_without_replacement(spec.n_events, spec.n_relevant_events(), spec.seed ^ 0x5eed);

    let mut frames = Vec::with_capacity(t * n_p * d);
    let mut r = rng::stream(spec.seed, rng::purpose::SYNTH, 1);
    for &e in &event_of_frame {
        frames.extend(means[e].iter().map(|m| m + spec.noise_std * normal(&mut r)));
    }
    let truth = event_of_frame
        .iter()
        .map(|e| u8::from(relevant_events.contains(e)))
        .collect();

    // Text: patch-averaged mean of the relevant events, plus noise per row.
    let mut anchor = vec![0.0; d];
    for &e in &relevant_events {
        for p in 0..n_p {
            for (a, m) in anchor.iter_mut().zip(&means[e][p * d..(p + 1) * d]) {
                *a += m;
            }
        }
    }
    let scale = 1.0 / (relevant_events.len() * n_p) as f64;
    let mut r = rng::stream(spec.seed, rng::purpose::SYNTH, 2);
    let text: Vec<f64> = (0..spec.text_tokens)
        .flat_map(|_| {
            anchor
                .iter()
                .map(|a| a * scale + spec.noise_std * normal(&mut r))
                .collect::<Vec<_>>()
        })
        .collect();

    Ok(SyntheticVideo {
        frames: Tensor::new(vec![t, n_p, d], frames, DType::F32)?,
        text: Tensor::new(vec![spec.text_tokens, d], text, DType::F32)?,
        truth,
        event_of_frame,
        relevant_events,
    })
}

/// Frames `[T × d]` in which exactly `round(q·(T−1))` consecutive pairs are
/// duplicates and every other frame is a fresh Gaussian draw. Returns the
/// frames, a random q‖a embedding, and the planted fraction.
pub fn plant_repeated(t: usize, d: usize, q: f64, seed: u64) -> Result<(Tensor, Tensor, f64)> {
    if t < 2 || d == 0 || !(0.0..=1.0).contains(&q) {
        return Err(Error::validation("plant", "need T >= 2, d >= 1, q in [0, 1]"));
    }
    let pairs = t - 1;
    let n_dup = (q * pairs as f64).round() as usize;
    let dup = sample_without_replacement(pairs, n_dup, seed);
    let mut r = rng::stream(seed, rng::purpose::SYNTH, 10);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(t);
    rows.push((0..d).map(|_| normal(&mut r)).collect());
    for pair in 0..pairs {
        let next = if dup.binary_search(&pair).is_ok() {
            rows[pair].clone()
        } else {
            (0..d).map(|_| normal(&mut r)).collect()
        };
        rows.push(next);
    }
    let qa: Vec<f64> = (0..d).map(|_| normal(&mut r)).collect();
    Ok((
        Tensor::from_rows(&rows, DType::F32)?,
        Tensor::vector(qa, DType::F32)?,
        n_dup as f64 / pairs as f64,
    ))
}

/// Frames `[T × d]` of which exactly `round(q·T)` are random (irrelevant)
/// and the rest lie close to the q‖a direction.
pub fn plant_irrelevant(t: usize, d: usize, q: f64, seed: u64) -> Result<(Tensor, Tensor, f64)> {
    if t == 0 || d == 0 || !(0.0..=1.0).contains(&q) {
        return Err(Error::validation("plant", "need T >= 1, d >= 1, q in [0, 1]"));
    }
    let n_irr = (q * t as f64).round() as usize;
    let irrelevant = sample_without_replacement(t, n_irr, seed);
    let mut r = rng::stream(seed, rng::purpose::SYNTH, 11);
    let qa: Vec<f64> = (0..d).map(|_| normal(&mut r)).collect();
    let norm = qa.iter().map(|v| v * v).sum::<f64>().sqrt();
    let noise = 0.3 / (d as f64).sqrt();
    let rows: Vec<Vec<f64>> = (0..t)
        .map(|i| {
            if irrelevant.binary_search(&i).is_ok() {
                (0..d).map(|_| normal(&mut r)).collect()
            } else {
                qa.iter().map(|v| v / norm + noise * normal(&mut r)).collect()
            }
        })
        .collect();
    Ok((
        Tensor::from_rows(&rows, DType::F32)?,
        Tensor::vector(qa, DType::F32)?,
        n_irr as f64 / t as f64,
    ))
}
