//! Desk-scale training of the prototype scorer through the perturbed
//! selector, and the end-to-end gradient check.
//!
//! The objective is a prototype-matching surrogate:
//! `ℓ = ‖ mean_k (P_soft · M)[k] − target ‖²`, with `M` the flattened event
//! prototypes. Gradients go `ℓ → P_soft → s → scorer`.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dpc::{cluster, ClusterInput, EventPrototypeSet};
use crate::error::{Error, Result};
use crate::numerics::{finite_diff_check, matmul, DType, GradReport, Mlp, MlpGrads, Tensor};
use crate::pipeline::pool_frames;
use crate::rng;
use crate::selection::{
    hard_topk, min_max_normalize, new_scorer, perturbed_topk_forward, scorer_forward, PerturbConfig,
    ScoreVector,
};
use crate::storage::RunConfig;
use crate::synth::{generate_synthetic, SyntheticSpec};

/// A fixed set of prototypes `[L × rows × d]`, a target and `K`.
#[derive(Clone, Debug)]
pub struct SelectorProblem {
    pub prototypes: Tensor,
    pub target: Vec<f64>,
    pub k: usize,
    flat: Tensor,
}

/// Loss and scorer gradient for one Monte Carlo draw.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub loss: f64,
    pub raw_scores: Vec<f64>,
    pub grads: MlpGrads,
}

impl SelectorProblem {
    pub fn new(prototypes: Tensor, target: Vec<f64>, k: usize) -> Result<Self> {
        prototypes.expect_rank(3)?;
        let l = prototypes.dims()[0];
        let width = prototypes.dims()[1] * prototypes.dims()[2];
        if target.len() != width {
            return Err(Error::Dimension(format!(
                "target has {} entries, prototypes flatten to {width}",
                target.len()
            )));
        }
        if k == 0 || k > l {
            return Err(Error::validation("K", format!("K={k} must lie in 1..={l}")));
        }
        let flat = prototypes.reshape(&[l, width])?.to_dtype(DType::F64);
        Ok(SelectorProblem { prototypes, target, k, flat })
    }

    /// `ℓ` and `∂ℓ/∂P_soft` for a `[K × L]` selection.
    pub fn loss_from_soft(&self, soft: &Tensor) -> Result<(f64, Tensor)> {
        let (k, l) = (self.k, self.flat.dims()[0]);
        if soft.dims() != [k, l] {
            return Err(Error::Dimension(format!("selection {:?}, expected [{k}, {l}]", soft.dims())));
        }
        let h = matmul(soft, &self.flat)?;
        let width = self.target.len();
        let mut diff = vec![0.0; width];
        for row in 0..k {
            for (acc, v) in diff.iter_mut().zip(h.row(row)) {
                *acc += v / k as f64;
            }
        }
        for (acc, t) in diff.iter_mut().zip(&self.target) {
            *acc -= t;
        }
        let loss = diff.iter().map(|v| v * v).sum();
        // Every row of P_soft feeds the mean with weight 1/K.
        let per_proto: Vec<f64> = (0..l)
            .map(|j| 2.0 / k as f64 * self.flat.row(j).iter().zip(&diff).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let grad = (0..k).flat_map(|_| per_proto.iter().copied()).collect();
        Ok((loss, Tensor::new(vec![k, l], grad, DType::F64)?))
    }

    /// Forward through scorer and perturbed Top-K, then backpropagate.
    pub fn step(&self, scorer: &Mlp, perturb: &PerturbConfig) -> Result<StepOutcome> {
        let (raw, cache) = scorer_forward(&self.prototypes, scorer)?;
        let pt = perturbed_topk_forward(&raw, self.k, perturb)?;
        let (loss, d_soft) = self.loss_from_soft(&pt.soft)?;
        let ds = pt.cache.backward(&d_soft)?;
        let dy = Tensor::new(vec![ds.len(), 1], ds, DType::F64)?;
        let (_, grads) = scorer.backward(&cache, &dy)?;
        Ok(StepOutcome { loss, raw_scores: raw, grads })
    }
}

/// Sizes for the end-to-end gradient check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckSetup {
    pub l: usize,
    pub k: usize,
    pub d: usize,
    /// Rows per prototype.
    pub rows: usize,
    pub sigma: f64,
    pub n_samples: usize,
    pub h: f64,
    pub seed: u64,
}

impl Default for GradcheckSetup {
    fn default() -> Self {
        GradcheckSetup {
            l: 8,
            k: 3,
            d: 16,
            rows: 4,
            sigma: 0.1,
            n_samples: 50_000,
            h: 1e-5,
            seed: 0,
        }
    }
}

impl GradcheckSetup {
    pub fn from_config(cfg: &RunConfig) -> Self {
        GradcheckSetup {
            l: cfg.l,
            k: cfg.k,
            d: cfg.d,
            sigma: cfg.sigma,
            n_samples: cfg.n_samples,
            seed: cfg.seed,
            ..GradcheckSetup::default()
        }
    }
}

/// Keeps finite-difference steps from crossing a ReLU kink.
const KINK_MARGIN: f64 = 1e-3;

fn gaussian(seed: u64, index: u64, n: usize) -> Vec<f64> {
    let mut r = rng::stream(seed, rng::purpose::FIXTURE, index);
    (0..n).map(|_| StandardNormal.sample(&mut r)).collect()
}

/// Seeded 64-bit fixture whose scorer pre-activations clear the ReLU kink.
pub fn gradcheck_fixture(setup: &GradcheckSetup) -> Result<(SelectorProblem, Mlp)> {
    let (l, rows, d) = (setup.l, setup.rows, setup.d);
    for attempt in 0..256u64 {
        let protos = Tensor::new(vec![l, rows, d], gaussian(setup.seed, 2 * attempt, l * rows * d), DType::F64)?;
        let scorer = new_scorer(d, setup.seed.wrapping_add(attempt), DType::F64)?;
        let feats = crate::selection::scorer_features(&protos)?;
        if scorer.min_hidden_preactivation(&feats)? > KINK_MARGIN {
            let target = gaussian(setup.seed, 2 * attempt + 1, rows * d);
            return Ok((SelectorProblem::new(protos, target, setup.k)?, scorer));
        }
    }
    Err(Error::Evaluation("no fixture clears the ReLU kink margin".into()))
}

/// Compare the analytic scorer gradient against central differences of the
/// same Monte Carlo estimate with frozen noise (common random numbers).
pub fn gradcheck(setup: &GradcheckSetup) -> Result<GradReport> {
    if setup.h.is_nan() || setup.h <= 0.0 {
        return Err(Error::validation("h", "step must be positive"));
    }
    let (problem, scorer) = gradcheck_fixture(setup)?;
    let perturb = PerturbConfig {
        sigma: setup.sigma,
        n_samples: setup.n_samples,
        seed: setup.seed,
    };
    let (raw, cache) = scorer_forward(&problem.prototypes, &scorer)?;
    let pt = perturbed_topk_forward(&raw, problem.k, &perturb)?;
    let (_, d_soft) = problem.loss_from_soft(&pt.soft)?;
    let ds = pt.cache.backward(&d_soft)?;
    let dy = Tensor::new(vec![ds.len(), 1], ds, DType::F64)?;
    let analytic = scorer.backward(&cache, &dy)?.1.flatten();

    let theta = scorer.params_flat();
    let mut probe = scorer.clone();
    let mut failure = None;
    let objective = |p: &[f64]| -> f64 {
        let mut eval = || -> Result<f64> {
            probe.set_params_flat(p)?;
            let (s, _) = scorer_forward(&problem.prototypes, &probe)?;
            let soft = pt.cache.reweighted(&s)?;
            Ok(problem.loss_from_soft(&soft)?.0)
        };
        eval().unwrap_or_else(|e| {
            failure.get_or_insert(e);
            f64::NAN
        })
    };
    let report = finite_diff_check(objective, &theta, &analytic, setup.h);
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(report?.with_names(&scorer.param_names("scorer")))
}

#[derive(Clone, Debug, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub recall: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainCurve {
    pub steps: Vec<StepRecord>,
    pub initial_recall: f64,
    pub final_recall: f64,
    /// `K / L`: expected recall of a uniformly random selection when about
    /// `K` of the `L` prototypes are relevant.
    pub chance: f64,
    pub selected_frames: Vec<usize>,
}

impl TrainCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss,recall\n");
        for r in &self.steps {
            out.push_str(&format!("{},{},{}\n", r.step, r.loss, r.recall));
        }
        out
    }

    /// Trailing moving average of the loss over `window` steps.
    pub fn moving_average(&self, window: usize) -> Vec<f64> {
        let losses: Vec<f64> = self.steps.iter().map(|s| s.loss).collect();
        losses
            .windows(window.max(1))
            .map(|w| w.iter().sum::<f64>() / w.len() as f64)
            .collect()
    }
}

fn recall(set: &EventPrototypeSet, scorer: &Mlp, k: usize, truth: &[u8]) -> Result<(f64, Vec<usize>)> {
    let (raw, _) = scorer_forward(&set.prototypes, scorer)?;
    let scores = ScoreVector {
        normalized: min_max_normalize(&raw),
        raw,
    };
    let sel = hard_topk(set, &scores, k, truth.len())?;
    let hits = sel.selected_frames.iter().filter(|&&f| truth[f] == 1).count();
    Ok((hits as f64 / k as f64, sel.selected_frames))
}

/// Train the scorer on one synthetic video by plain gradient descent.
/// The target is the mean pooled feature of the relevant frames. Recall is
/// the fraction of the hard Top-K centers that land on relevant frames,
/// recorded before each update.
pub fn train_demo(spec: &SyntheticSpec, cfg: &RunConfig, steps: usize, lr: f64) -> Result<TrainCurve> {
    cfg.validate()?;
    if steps == 0 {
        return Err(Error::validation("steps", "at least one step is required"));
    }
    if !lr.is_finite() || lr < 0.0 {
        return Err(Error::validation("lr", format!("learning rate must be finite and >= 0, got {lr}")));
    }
    if spec.d != cfg.d {
        return Err(Error::validation("d", format!("spec has d={}, config d={}", spec.d, cfg.d)));
    }
    let video = generate_synthetic(spec)?;
    let pooled = pool_frames(&video.frames, cfg)?.to_dtype(cfg.precision);
    let t = spec.t;
    let l = cfg.l.min(t);
    let k = cfg.k.min(l);

    let width = cfg.p * cfg.d;
    let mut target = vec![0.0; width];
    let relevant: Vec<usize> = (0..t).filter(|&i| video.truth[i] == 1).collect();
    for &f in &relevant {
        for (acc, v) in target.iter_mut().zip(pooled.outer(f)) {
            *acc += v / relevant.len() as f64;
        }
    }
    let set = cluster(&ClusterInput::with_policy(pooled, cfg.c)?, l)?;
    let problem = SelectorProblem::new(set.prototypes.clone(), target, k)?;
    let mut scorer = new_scorer(cfg.d, cfg.seed, cfg.precision)?;

    let mut records = Vec::with_capacity(steps);
    for step in 0..steps {
        let (rec, _) = recall(&set, &scorer, k, &video.truth)?;
        let perturb = PerturbConfig {
            sigma: cfg.sigma,
            n_samples: cfg.n_samples,
            seed: cfg.seed ^ ((step as u64 + 1) << 32),
        };
        let out = problem.step(&scorer, &perturb)?;
        if !out.loss.is_finite() {
            return Err(Error::Training {
                step,
                message: format!("loss is {}", out.loss),
            });
        }
        scorer.apply_gradients(&out.grads, lr)?;
        if scorer.params_flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::Training {
                step,
                message: "scorer parameters became non-finite".into(),
            });
        }
        records.push(StepRecord { step, loss: out.loss, recall: rec });
    }
    let (final_recall, selected_frames) = recall(&set, &scorer, k, &video.truth)?;
    Ok(TrainCurve {
        initial_recall: records[0].recall,
        final_recall,
        chance: k as f64 / l as f64,
        steps: records,
        selected_frames,
    })
}
