//! Repeated-frame and answer-irrelevant redundancy ratios.
//!
//! Both ratios threshold min-max normalised cosine similarities. When all
//! similarities of a video are equal (range below [`DEGENERATE_RANGE`]) the
//! raw similarities are thresholded instead.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cosine, Tensor};
use crate::rng;
use crate::storage::read_tensor;

pub const DEGENERATE_RANGE: f64 = 1e-9;
pub const DEFAULT_SAMPLE: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub repeated: f64,
    pub irrelevant: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            repeated: 0.6,
            irrelevant: 0.4,
        }
    }
}

fn normalize_or_raw(sims: &[f64]) -> Vec<f64> {
    let min = sims.iter().copied().fold(f64::INFINITY, f64::min);
    let max = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max - min < DEGENERATE_RANGE {
        return sims.to_vec();
    }
    sims.iter().map(|s| (s - min) / (max - min)).collect()
}

/// Reduce `[T × N × d]` patch maps to `[T × d]` by averaging patches.
fn frame_vectors(frames: &Tensor) -> Result<Tensor> {
    match frames.rank() {
        2 => Ok(frames.clone()),
        3 => {
            let (t, n, d) = (frames.dims()[0], frames.dims()[1], frames.dims()[2]);
            let mut out = vec![0.0; t * d];
            for i in 0..t {
                let item = frames.outer(i);
                for p in 0..n {
                    for (o, &v) in out[i * d..(i + 1) * d].iter_mut().zip(&item[p * d..(p + 1) * d]) {
                        *o += v;
                    }
                }
            }
            for v in &mut out {
                *v /= n as f64;
            }
            Tensor::new(vec![t, d], out, frames.dtype())
        }
        _ => Err(Error::Dimension(format!(
            "frames must be [T × d] or [T × N × d], got {:?}",
            frames.dims()
        ))),
    }
}

fn cos_checked(a: &[f64], b: &[f64], what: &str) -> Result<f64> {
    cosine(a, b).ok_or_else(|| Error::validation("frames", format!("zero-norm {what}")))
}

/// Fraction of consecutive-frame similarities above `threshold` after
/// normalisation.
pub fn repeated_ratio(frames: &Tensor, threshold: f64) -> Result<f64> {
    let f = frame_vectors(frames)?;
    let t = f.dims()[0];
    if t < 2 {
        return Err(Error::validation("frames", format!("need at least 2 frames, got {t}")));
    }
    let sims = (0..t - 1)
        .map(|i| cos_checked(f.row(i), f.row(i + 1), &format!("frame near index {i}")))
        .collect::<Result<Vec<_>>>()?;
    let hits = normalize_or_raw(&sims).iter().filter(|&&s| s > threshold).count();
    Ok(hits as f64 / (t - 1) as f64)
}

/// Fraction of frames whose normalised similarity to the question/answer
/// embedding falls below `threshold`.
pub fn irrelevant_ratio(frames: &Tensor, qa: &Tensor, threshold: f64) -> Result<f64> {
    let f = frame_vectors(frames)?;
    let qa = qa_vector(qa)?;
    if qa.len() != f.dims()[1] {
        return Err(Error::Dimension(format!(
            "qa embedding has width {}, frames have {}",
            qa.len(),
            f.dims()[1]
        )));
    }
    let t = f.dims()[0];
    let sims = (0..t)
        .map(|i| cos_checked(f.row(i), &qa, &format!("frame {i} or qa embedding")))
        .collect::<Result<Vec<_>>>()?;
    let hits = normalize_or_raw(&sims).iter().filter(|&&s| s < threshold).count();
    Ok(hits as f64 / t as f64)
}

/// The q‖a embedding as a single vector; multi-row inputs are averaged.
fn qa_vector(qa: &Tensor) -> Result<Vec<f64>> {
    match qa.rank() {
        1 => Ok(qa.data().to_vec()),
        2 => crate::numerics::mean_rows(qa),
        _ => Err(Error::Dimension(format!("qa embedding dims {:?}", qa.dims()))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoRedundancy {
    pub video_id: String,
    pub r_d: f64,
    pub r_a: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RedundancyReport {
    pub r_d: f64,
    pub r_a: f64,
    pub n_videos: usize,
    pub per_video: Vec<VideoRedundancy>,
}

impl RedundancyReport {
    pub fn from_videos(per_video: Vec<VideoRedundancy>) -> Result<Self> {
        if per_video.is_empty() {
            return Err(Error::validation("corpus", "no videos to profile"));
        }
        let n = per_video.len() as f64;
        Ok(RedundancyReport {
            r_d: per_video.iter().map(|v| v.r_d).sum::<f64>() / n,
            r_a: per_video.iter().map(|v| v.r_a).sum::<f64>() / n,
            n_videos: per_video.len(),
            per_video,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("video_id,r_d,r_a\n");
        for v in &self.per_video {
            out.push_str(&format!("{},{},{}\n", v.video_id, v.r_d, v.r_a));
        }
        out
    }
}

pub fn profile_video(
    video_id: &str,
    frames: &Tensor,
    qa: &Tensor,
    thresholds: Thresholds,
) -> Result<VideoRedundancy> {
    Ok(VideoRedundancy {
        video_id: video_id.to_string(),
        r_d: repeated_ratio(frames, thresholds.repeated)?,
        r_a: irrelevant_ratio(frames, qa, thresholds.irrelevant)?,
    })
}

/// Video directories under `corpus_dir` holding both `frames.dft` and
/// `qa.dft`, sorted by name.
pub fn list_corpus(corpus_dir: impl AsRef<Path>) -> Result<Vec<(String, PathBuf)>> {
    let dir = corpus_dir.as_ref();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut videos = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.join("frames.dft").is_file() && path.join("qa.dft").is_file() {
            videos.push((entry.file_name().to_string_lossy().into_owned(), path));
        }
    }
    videos.sort();
    Ok(videos)
}

/// Sample `min(sample_n, available)` videos without replacement and average
/// their ratios.
pub fn profile_corpus(
    corpus_dir: impl AsRef<Path>,
    sample_n: usize,
    seed: u64,
    thresholds: Thresholds,
) -> Result<RedundancyReport> {
    let videos = list_corpus(corpus_dir.as_ref())?;
    if videos.is_empty() {
        return Err(Error::validation(
            "corpus",
            format!("no video directories with frames.dft and qa.dft under {}", corpus_dir.as_ref().display()),
        ));
    }
    let chosen = sample_without_replacement(videos.len(), sample_n, seed);
    let per_video = chosen
        .into_iter()
        .map(|i| {
            let (id, path) = &videos[i];
            let frames = read_tensor(path.join("frames.dft"))?;
            let qa = read_tensor(path.join("qa.dft"))?;
            profile_video(id, &frames, &qa, thresholds)
        })
        .collect::<Result<Vec<_>>>()?;
    RedundancyReport::from_videos(per_video)
}

/// Sorted distinct indices in `0..available`.
pub fn sample_without_replacement(available: usize, want: usize, seed: u64) -> Vec<usize> {
    let n = want.min(available);
    let mut r = rng::stream(seed, rng::purpose::SAMPLE_VIDEOS, 0);
    let mut picked = sample(&mut r, available, n).into_vec();
    picked.sort_unstable();
    picked
}
