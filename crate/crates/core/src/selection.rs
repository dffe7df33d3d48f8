//! Scoring and Top-K selection of event prototypes.
//!
//! Inference uses a hard Top-K on min-max normalised scores. Training replaces
//! it with a perturbed maximiser: the hard ordered Top-K is solved on
//! `s + σZ` for Gaussian `Z`, the one-hot solutions are averaged into a soft
//! `K × L` selection, and the Jacobian is estimated from the same samples as
//! `E[Y(s + σZ) ⊗ Z] / σ`.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dpc::EventPrototypeSet;
use crate::error::{Error, Result};
use crate::numerics::{matmul, max_norm_row, mean_rows, Activation, DType, Mlp, MlpCache, Tensor};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    #[default]
    Infer,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Mode::Train),
            "infer" => Ok(Mode::Infer),
            other => Err(Error::validation("mode", format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreVector {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbConfig {
    pub sigma: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl PerturbConfig {
    pub fn validate(&self) -> Result<()> {
        let mut keys = Vec::new();
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            keys.push("sigma".to_string());
        }
        if self.n_samples < 1 {
            keys.push("n_samples".to_string());
        }
        if keys.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation {
                keys,
                message: format!(
                    "need sigma > 0 and n_samples >= 1, got sigma={} n_samples={}",
                    self.sigma, self.n_samples
                ),
            })
        }
    }
}

/// Output of a selection step.
#[derive(Clone, Debug)]
pub struct SelectionResult {
    /// Selected prototype indices, highest score first.
    pub indices: Vec<usize>,
    /// `[K × L]`, row `k` one-hot at `indices[k]`.
    pub hard: Tensor,
    /// `[K × L]` perturbed selection, train mode only.
    pub soft: Option<Tensor>,
    /// `[K × rows × d]` filtered prototypes: the hard gather at inference,
    /// the soft mixture `P_soft · M` in train mode.
    pub filtered: Tensor,
    /// Per-frame mask, 1 where a selected prototype is centered.
    pub frame_mask: Vec<u8>,
    /// Frame index of each selected prototype, aligned with `indices`.
    pub selected_frames: Vec<usize>,
}

/// Scorer widths `2d → d/2 → d/4 → 1`.
pub fn scorer_shape(d: usize) -> Result<[usize; 4]> {
    if d < 4 {
        return Err(Error::validation("d", format!("scorer needs d >= 4, got {d}")));
    }
    Ok([2 * d, d / 2, d / 4, 1])
}

pub fn new_scorer(d: usize, seed: u64, dtype: DType) -> Result<Mlp> {
    let shape = scorer_shape(d)?;
    let mut r = rng::stream(seed, rng::purpose::SCORER_INIT, 0);
    Mlp::xavier(&shape, Activation::Relu, dtype, &mut r)
}

/// Per prototype: the row of largest L2 norm concatenated with the row mean,
/// giving the `[L × 2d]` scorer input.
pub fn scorer_features(prototypes: &Tensor) -> Result<Tensor> {
    prototypes.expect_rank(3)?;
    let (l, rows, d) = (prototypes.dims()[0], prototypes.dims()[1], prototypes.dims()[2]);
    let mut data = Vec::with_capacity(l * 2 * d);
    for i in 0..l {
        let m = Tensor::from_parts(vec![rows, d], prototypes.outer(i).to_vec(), prototypes.dtype());
        let top = max_norm_row(&m)?;
        data.extend_from_slice(m.row(top));
        data.extend(mean_rows(&m)?);
    }
    Ok(Tensor::from_parts(vec![l, 2 * d], data, prototypes.dtype()))
}

/// Map to `[0, 1]`; a constant vector maps to all `0.5`.
pub fn min_max_normalize(raw: &[f64]) -> Vec<f64> {
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range.is_nan() || range <= 0.0 {
        return vec![0.5; raw.len()];
    }
    raw.iter().map(|v| (v - min) / range).collect()
}

/// Raw scores and the scorer cache needed to backpropagate into it.
pub fn scorer_forward(prototypes: &Tensor, scorer: &Mlp) -> Result<(Vec<f64>, MlpCache)> {
    let feats = scorer_features(prototypes)?;
    if scorer.in_dim() != feats.dims()[1] || scorer.out_dim() != 1 {
        return Err(Error::Contract(format!(
            "scorer maps {} -> {}, prototypes need {} -> 1",
            scorer.in_dim(),
            scorer.out_dim(),
            feats.dims()[1]
        )));
    }
    let (y, cache) = scorer.forward(&feats)?;
    Ok((y.into_data(), cache))
}

pub fn score_prototypes(prototypes: &Tensor, scorer: &Mlp) -> Result<ScoreVector> {
    let (raw, _) = scorer_forward(prototypes, scorer)?;
    let normalized = min_max_normalize(&raw);
    Ok(ScoreVector { raw, normalized })
}

/// Indices of the `k` largest values, descending, ties to the lower index.
pub fn topk_indices(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k > scores.len() {
        return Err(Error::Validation {
            keys: vec!["K".into(), "L".into()],
            message: format!("K={k} exceeds the {} available prototypes", scores.len()),
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}

fn one_hot_rows(indices: &[usize], l: usize) -> Tensor {
    let mut data = vec![0.0; indices.len() * l];
    for (k, &i) in indices.iter().enumerate() {
        data[k * l + i] = 1.0;
    }
    Tensor::from_parts(vec![indices.len().max(1), l], data, DType::F64)
}

fn frame_mask(centers: &[usize], indices: &[usize], n_frames: usize) -> Result<(Vec<u8>, Vec<usize>)> {
    let mut mask = vec![0u8; n_frames];
    let mut frames = Vec::with_capacity(indices.len());
    for &i in indices {
        let f = centers[i];
        if f >= n_frames {
            return Err(Error::Dimension(format!(
                "center frame {f} outside a {n_frames}-frame video"
            )));
        }
        mask[f] = 1;
        frames.push(f);
    }
    Ok((mask, frames))
}

/// Hard Top-K over normalized scores.
pub fn hard_topk(
    set: &EventPrototypeSet,
    scores: &ScoreVector,
    k: usize,
    n_frames: usize,
) -> Result<SelectionResult> {
    if k == 0 {
        return Err(Error::validation("K", "K must be at least 1"));
    }
    let l = set.len();
    if scores.normalized.len() != l {
        return Err(Error::Dimension(format!(
            "{} scores for {l} prototypes",
            scores.normalized.len()
        )));
    }
    let indices = topk_indices(&scores.normalized, k)?;
    let (mask, frames) = frame_mask(&set.center_indices, &indices, n_frames)?;
    Ok(SelectionResult {
        hard: one_hot_rows(&indices, l),
        soft: None,
        filtered: set.prototypes.gather_outer(&indices)?,
        frame_mask: mask,
        selected_frames: frames,
        indices,
    })
}

/// Samples behind a perturbed selection, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct PerturbCache {
    scores: Vec<f64>,
    sigma: f64,
    k: usize,
    /// `n × L` standard-normal draws.
    noise: Vec<f64>,
    /// `n × K` ordered Top-K picks per sample.
    picks: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct PerturbedTopK {
    /// `[K × L]` averaged one-hot selections.
    pub soft: Tensor,
    pub cache: PerturbCache,
}

/// Monte Carlo perturbed Top-K on raw scores `s`.
pub fn perturbed_topk_forward(scores: &[f64], k: usize, cfg: &PerturbConfig) -> Result<PerturbedTopK> {
    cfg.validate()?;
    let l = scores.len();
    if k == 0 || k > l {
        return Err(Error::Validation {
            keys: vec!["K".into()],
            message: format!("K={k} must lie in 1..={l}"),
        });
    }
    let sigma = cfg.sigma;
    let samples: Vec<(Vec<f64>, Vec<usize>)> = (0..cfg.n_samples)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(cfg.seed, rng::purpose::PERTURB, i as u64);
            let z: Vec<f64> = (0..l).map(|_| StandardNormal.sample(&mut r)).collect();
            let perturbed: Vec<f64> = scores.iter().zip(&z).map(|(s, z)| s + sigma * z).collect();
            let picks = topk_indices(&perturbed, k).expect("k <= l checked above");
            (z, picks)
        })
        .collect();

    let n = cfg.n_samples;
    let mut noise = Vec::with_capacity(n * l);
    let mut picks = Vec::with_capacity(n * k);
    let mut counts = vec![0u64; k * l];
    for (z, p) in samples {
        for (row, &j) in p.iter().enumerate() {
            counts[row * l + j] += 1;
        }
        noise.extend(z);
        picks.extend(p);
    }
    let soft = counts.iter().map(|&c| c as f64 / n as f64).collect();
    Ok(PerturbedTopK {
        soft: Tensor::from_parts(vec![k, l], soft, DType::F64),
        cache: PerturbCache {
            scores: scores.to_vec(),
            sigma,
            k,
            noise,
            picks,
        },
    })
}

impl PerturbCache {
    pub fn n_samples(&self) -> usize {
        self.picks.len() / self.k
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn l(&self) -> usize {
        self.scores.len()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// `∂ℓ/∂s[j] = (1/(nσ)) Σᵢ ⟨∂ℓ/∂P_soft, Yᵢ⟩ Zᵢ[j]`.
    pub fn backward(&self, d_soft: &Tensor) -> Result<Vec<f64>> {
        let (k, l) = (self.k, self.l());
        if d_soft.dims() != [k, l] {
            return Err(Error::Contract(format!(
                "gradient {:?} does not match the cached [{k}, {l}] selection",
                d_soft.dims()
            )));
        }
        let g = d_soft.data();
        let n = self.n_samples();
        let mut out = vec![0.0; l];
        for i in 0..n {
            let picks = &self.picks[i * k..(i + 1) * k];
            let inner: f64 = picks.iter().enumerate().map(|(row, &j)| g[row * l + j]).sum();
            if inner == 0.0 {
                continue;
            }
            for (o, z) in out.iter_mut().zip(&self.noise[i * l..(i + 1) * l]) {
                *o += inner * z;
            }
        }
        let scale = 1.0 / (n as f64 * self.sigma);
        for o in &mut out {
            *o *= scale;
        }
        Ok(out)
    }

    /// The cached estimate re-evaluated at scores `s` by likelihood-ratio
    /// reweighting of the frozen samples:
    /// `P̂(s) = (1/n) Σᵢ wᵢ(s) Yᵢ`, `wᵢ = exp(Zᵢ·Δ/σ − |Δ|²/2σ²)`, `Δ = s − s₀`.
    ///
    /// Equals the forward estimate at `s₀` and is smooth in `s`, with gradient
    /// at `s₀` equal to [`PerturbCache::backward`]. Finite differences of this
    /// function are the common-random-number check of the Jacobian.
    pub fn reweighted(&self, scores: &[f64]) -> Result<Tensor> {
        let (k, l) = (self.k, self.l());
        if scores.len() != l {
            return Err(Error::Dimension(format!("{} scores, expected {l}", scores.len())));
        }
        let delta: Vec<f64> = scores.iter().zip(&self.scores).map(|(a, b)| a - b).collect();
        let delta_sq: f64 = delta.iter().map(|d| d * d).sum();
        let sigma = self.sigma;
        let n = self.n_samples();
        // Accumulate `wᵢ − 1` on top of the plain counts: the corrections are
        // O(|Δ|), which keeps rounding small for finite differences.
        let mut counts = vec![0.0; k * l];
        let mut correction = vec![0.0; k * l];
        for i in 0..n {
            let z = &self.noise[i * l..(i + 1) * l];
            let zd: f64 = z.iter().zip(&delta).map(|(a, b)| a * b).sum();
            let w1 = (zd / sigma - delta_sq / (2.0 * sigma * sigma)).exp_m1();
            for (row, &j) in self.picks[i * k..(i + 1) * k].iter().enumerate() {
                counts[row * l + j] += 1.0;
                correction[row * l + j] += w1;
            }
        }
        let out: Vec<f64> = counts
            .iter()
            .zip(&correction)
            .map(|(c, w)| c / n as f64 + w / n as f64)
            .collect();
        Ok(Tensor::from_parts(vec![k, l], out, DType::F64))
    }
}

/// `[K × L] · [L × rows × d]` → `[K × rows × d]`.
pub fn mix_prototypes(weights: &Tensor, prototypes: &Tensor) -> Result<Tensor> {
    prototypes.expect_rank(3)?;
    let (l, rows, d) = (prototypes.dims()[0], prototypes.dims()[1], prototypes.dims()[2]);
    let flat = prototypes.reshape(&[l, rows * d])?;
    let mixed = matmul(weights, &flat)?;
    mixed.reshape(&[weights.dims()[0], rows, d])
}

/// Score, then select: hard Top-K at inference, perturbed soft selection in
/// train mode (indices and frame mask still come from the unperturbed scores).
pub fn dpe_select(
    set: &EventPrototypeSet,
    scorer: &Mlp,
    k: usize,
    cfg: &PerturbConfig,
    mode: Mode,
    n_frames: usize,
    straight_through: bool,
) -> Result<(ScoreVector, SelectionResult)> {
    let scores = score_prototypes(&set.prototypes, scorer)?;
    let mut result = hard_topk(set, &scores, k, n_frames)?;
    if mode == Mode::Train {
        let perturbed = perturbed_topk_forward(&scores.raw, k, cfg)?;
        if !straight_through {
            result.filtered =
                mix_prototypes(&perturbed.soft, &set.prototypes)?.to_dtype(set.prototypes.dtype());
        }
        result.soft = Some(perturbed.soft);
    }
    Ok((scores, result))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dpc::DensityProfile;

    fn toy_set(centers: Vec<usize>, d: usize) -> EventPrototypeSet {
        let l = centers.len();
        let data = (0..l * 2 * d).map(|i| (i as f64 * 0.37).sin()).collect();
        EventPrototypeSet {
            prototypes: Tensor::new(vec![l, 2, d], data, DType::F64).unwrap(),
            center_indices: centers,
            assignment: vec![],
            scores_raw: vec![0.0; l],
            profile: DensityProfile {
                rho: vec![],
                delta: vec![],
                importance: vec![],
            },
        }
    }

    #[test]
    fn min_max_cases() {
        assert_eq!(min_max_normalize(&[2.0, 4.0, 3.0]), vec![0.0, 1.0, 0.5]);
        assert_eq!(min_max_normalize(&[1.5, 1.5]), vec![0.5, 0.5]);
    }

    #[test]
    fn zero_scorer_gives_half_everywhere() {
        let set = toy_set(vec![0, 1, 2], 8);
        let scorer = Mlp::zeros(&scorer_shape(8).unwrap(), Activation::Relu, DType::F64).unwrap();
        let s = score_prototypes(&set.prototypes, &scorer).unwrap();
        assert_eq!(s.raw, vec![0.0; 3]);
        assert_eq!(s.normalized, vec![0.5; 3]);
    }

    #[test]
    fn feature_layout() {
        let m = Tensor::new(vec![1, 2, 2], vec![3.0, 4.0, 1.0, 0.0], DType::F64).unwrap();
        assert_eq!(scorer_features(&m).unwrap().data(), &[3.0, 4.0, 2.0, 2.0]);
    }

    #[test]
    fn scorer_shape_mismatch_is_contract_error() {
        let set = toy_set(vec![0, 1], 8);
        let scorer = Mlp::zeros(&[10, 1], Activation::Relu, DType::F64).unwrap();
        assert!(matches!(
            score_prototypes(&set.prototypes, &scorer),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn hard_topk_examples() {
        let set = toy_set(vec![0, 3, 7], 4);
        let s = ScoreVector {
            raw: vec![0.9, 0.1, 0.5],
            normalized: vec![0.9, 0.1, 0.5],
        };
        let r = hard_topk(&set, &s, 2, 10).unwrap();
        assert_eq!(r.indices, vec![0, 2]);
        let ones: Vec<usize> = (0..10).filter(|&t| r.frame_mask[t] == 1).collect();
        assert_eq!(ones, vec![0, 7]);
        assert_eq!(r.hard.data(), &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(r.filtered.outer(1), set.prototypes.outer(2));

        let flat = ScoreVector {
            raw: vec![0.5; 3],
            normalized: vec![0.5; 3],
        };
        assert_eq!(hard_topk(&set, &flat, 2, 10).unwrap().indices, vec![0, 1]);

        let r = hard_topk(&set, &s, 3, 10).unwrap();
        assert_eq!(r.indices, vec![0, 2, 1]);
        assert_eq!(r.frame_mask.iter().map(|&b| b as usize).sum::<usize>(), 3);

        assert!(matches!(hard_topk(&set, &s, 4, 10), Err(Error::Validation { .. })));
    }

    #[test]
    fn perturbed_config_validation() {
        let bad = PerturbConfig {
            sigma: 0.0,
            n_samples: 0,
            seed: 0,
        };
        match perturbed_topk_forward(&[1.0, 0.0], 1, &bad) {
            Err(Error::Validation { keys, .. }) => assert_eq!(keys, vec!["sigma", "n_samples"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn small_sigma_recovers_hard_selection() {
        let cfg = PerturbConfig {
            sigma: 1e-3,
            n_samples: 2000,
            seed: 5,
        };
        let out = perturbed_topk_forward(&[0.9, 0.1, 0.5], 2, &cfg).unwrap();
        assert_eq!(out.soft.data(), &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn zero_upstream_gradient() {
        let cfg = PerturbConfig {
            sigma: 0.5,
            n_samples: 100,
            seed: 1,
        };
        let out = perturbed_topk_forward(&[0.3, 0.2, 0.1], 2, &cfg).unwrap();
        let g = out.cache.backward(&Tensor::zeros(&[2, 3], DType::F64)).unwrap();
        assert_eq!(g, vec![0.0; 3]);
        assert!(matches!(
            out.cache.backward(&Tensor::zeros(&[3, 3], DType::F64)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn reweighting_is_identity_at_reference_scores() {
        let cfg = PerturbConfig {
            sigma: 0.3,
            n_samples: 500,
            seed: 9,
        };
        let s = [0.4, -0.1, 0.2, 0.0];
        let out = perturbed_topk_forward(&s, 2, &cfg).unwrap();
        let again = out.cache.reweighted(&s).unwrap();
        for (a, b) in again.data().iter().zip(out.soft.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn train_mode_with_tiny_sigma_matches_gather() {
        let set = toy_set(vec![2, 0, 1, 4], 8);
        let mut r = rng::stream(3, rng::purpose::FIXTURE, 0);
        let scorer = Mlp::xavier(&scorer_shape(8).unwrap(), Activation::Relu, DType::F64, &mut r).unwrap();
        let cfg = PerturbConfig {
            sigma: 1e-6,
            n_samples: 200,
            seed: 0,
        };
        let (sv, infer) = dpe_select(&set, &scorer, 2, &cfg, Mode::Infer, 5, false).unwrap();
        let mut sorted = sv.raw.clone();
        sorted.sort_by(f64::total_cmp);
        assert!(sorted.windows(2).all(|w| w[1] - w[0] > 1e-4), "{:?}", sv.raw);
        let (_, train) = dpe_select(&set, &scorer, 2, &cfg, Mode::Train, 5, false).unwrap();
        assert!(infer.soft.is_none());
        assert_eq!(train.indices, infer.indices);
        assert_eq!(train.frame_mask, infer.frame_mask);
        for (a, b) in train.filtered.data().iter().zip(infer.filtered.data()) {
            assert!((a - b).abs() < 1e-3);
        }
        let (_, st) = dpe_select(&set, &scorer, 2, &cfg, Mode::Train, 5, true).unwrap();
        assert_eq!(st.filtered, infer.filtered);
        assert!(st.soft.is_some());
    }
}
