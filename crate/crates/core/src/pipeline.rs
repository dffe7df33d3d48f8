//! End-to-end compression: pool, cluster in time, score and select, then
//! encode every frame on the fine or coarse path.

use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::dpc::{cluster, ClusterInput};
use crate::encoding::{budget_report, encode_video, BudgetReport, EncoderParams, SpatialConfig, TextEmbedding, TokenSequence};
use crate::error::{Error, Result};
use crate::numerics::{block_pool, matmul_nt, Mlp, Tensor};
use crate::rng;
use crate::selection::{dpe_select, new_scorer, Mode, PerturbConfig};
use crate::storage::RunConfig;

/// Everything learnable in the compressor.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub scorer: Mlp,
    pub encoder: EncoderParams,
}

impl ModelParams {
    /// Seeded initialisation at the config's width and precision.
    pub fn init(cfg: &RunConfig) -> Result<Self> {
        Ok(ModelParams {
            scorer: new_scorer(cfg.d, cfg.seed, cfg.precision)?,
            encoder: EncoderParams::init(cfg.d, cfg.d_prime, cfg.seed, cfg.precision)?,
        })
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Timing {
    pub pool_ms: f64,
    pub cluster_ms: f64,
    pub select_ms: f64,
    pub encode_ms: f64,
    pub total_ms: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CompressReport {
    pub mode: Mode,
    pub n_frames: usize,
    /// Effective `L` and `K` after clamping to the video length.
    pub l: usize,
    pub k: usize,
    /// Selected prototype indices `p`, best first.
    pub indices: Vec<usize>,
    /// Frame index of each selected prototype's center, in the order of `p`.
    pub selected_frames: Vec<usize>,
    pub frame_mask: Vec<u8>,
    pub center_indices: Vec<usize>,
    pub scores_raw: Vec<f64>,
    pub scores_normalized: Vec<f64>,
    pub budget: BudgetReport,
    pub timing: Timing,
    pub config: RunConfig,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Patch maps `[T × N × d]` → pooled `[T × P × d]`.
pub fn pool_frames(frames: &Tensor, cfg: &RunConfig) -> Result<Tensor> {
    frames.expect_rank(3)?;
    let n = frames.dims()[1];
    let grid = (n as f64).sqrt().round() as usize;
    if grid * grid != n {
        return Err(Error::validation("N", format!("{n} patches do not form a square grid")));
    }
    if cfg.pool_block == 0 || !grid.is_multiple_of(cfg.pool_block) {
        return Err(Error::validation(
            "pool_block",
            format!("grid {grid} is not divisible by pool_block {}", cfg.pool_block),
        ));
    }
    let cells = (grid / cfg.pool_block).pow(2);
    if cells != cfg.p {
        return Err(Error::validation(
            "P",
            format!("{n} patches pooled by {} give {cells} cells, config has P={}", cfg.pool_block, cfg.p),
        ));
    }
    let pooled = (0..frames.dims()[0])
        .into_par_iter()
        .map(|t| block_pool(&frames.slice_outer(t), grid, cfg.pool_block))
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack(&pooled)
}

/// Bring text rows to width `d`. Matching widths pass through; otherwise a
/// fixed seeded Gaussian projection scaled by `1/√d_text` is applied.
pub fn project_text(text: &Tensor, d: usize, seed: u64) -> Result<TextEmbedding> {
    let text = TextEmbedding::new(text.clone())?;
    let width = text.dim();
    if width == d {
        return Ok(text);
    }
    let mut r = rng::stream(seed, rng::purpose::TEXT_PROJ, width as u64);
    let scale = 1.0 / (width as f64).sqrt();
    let w: Vec<f64> = (0..d * width)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r))
        .collect();
    let w = Tensor::new(vec![d, width], w, text.tokens().dtype())?;
    TextEmbedding::new(matmul_nt(text.tokens(), &w)?)
}

/// Compress one video's patch features under `cfg`.
///
/// `L` and `K` are clamped to the number of frames (`K ≤ L ≤ T`), so a
/// single-frame video yields one fine frame.
pub fn compress(
    frames: &Tensor,
    text: &Tensor,
    params: &ModelParams,
    cfg: &RunConfig,
    mode: Mode,
) -> Result<(TokenSequence, CompressReport)> {
    let start = Instant::now();
    cfg.validate()?;
    if frames.rank() != 3 {
        return Err(Error::validation(
            "frames",
            format!("frames must be [T x N x d], got {:?}", frames.dims()),
        ));
    }
    let (t, n, d) = (frames.dims()[0], frames.dims()[1], frames.dims()[2]);
    if t == 0 {
        return Err(Error::validation("T", "video has no frames"));
    }
    if d != cfg.d {
        return Err(Error::validation("d", format!("frames have width {d}, config has d={}", cfg.d)));
    }
    let text = project_text(text, d, cfg.seed)?;

    let pooled = pool_frames(frames, cfg)?;
    let pool_ms = ms(start);

    let tick = Instant::now();
    let l = cfg.l.min(t);
    let k = cfg.k.min(l);
    let set = cluster(&ClusterInput::with_policy(pooled, cfg.c)?, l)?;
    let cluster_ms = ms(tick);

    let tick = Instant::now();
    let perturb = PerturbConfig {
        sigma: cfg.sigma,
        n_samples: cfg.n_samples,
        seed: cfg.seed,
    };
    let (scores, sel) = dpe_select(&set, &params.scorer, k, &perturb, mode, t, cfg.straight_through)?;
    let select_ms = ms(tick);

    let tick = Instant::now();
    let mut events: Vec<Option<Tensor>> = vec![None; t];
    for (row, &f) in sel.selected_frames.iter().enumerate() {
        events[f] = Some(sel.filtered.slice_outer(row));
    }
    let spatial = SpatialConfig {
        layer_sizes: cfg.layer_sizes.clone(),
        neighbors: cfg.c,
    };
    let seq = encode_video(frames, &events, &text, &params.encoder, &spatial)?;
    let encode_ms = ms(tick);

    let report = CompressReport {
        mode,
        n_frames: t,
        l,
        k,
        indices: sel.indices,
        selected_frames: sel.selected_frames,
        frame_mask: sel.frame_mask,
        center_indices: set.center_indices,
        scores_raw: scores.raw,
        scores_normalized: scores.normalized,
        budget: budget_report(&seq, n),
        timing: Timing {
            pool_ms,
            cluster_ms,
            select_ms,
            encode_ms,
            total_ms: ms(start),
        },
        config: cfg.clone(),
    };
    Ok((seq, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::DType;
    use crate::storage::NeighborCount;

    fn small_cfg() -> RunConfig {
        RunConfig {
            d: 8,
            d_prime: 8,
            p: 4,
            l: 5,
            k: 2,
            c: NeighborCount::Auto,
            j: 2,
            layer_sizes: vec![4, 2],
            pool_block: 2,
            ..RunConfig::default()
        }
    }

    fn video(t: usize, n: usize, d: usize, seed: u64) -> Tensor {
        let mut r = rng::stream(seed, rng::purpose::FIXTURE, 0);
        let data = (0..t * n * d)
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r))
            .collect();
        Tensor::new(vec![t, n, d], data, DType::F32).unwrap()
    }

    #[test]
    fn budget_matches_selection() {
        let cfg = small_cfg();
        let params = ModelParams::init(&cfg).unwrap();
        let frames = video(9, 16, 8, 1);
        let text = video(1, 3, 8, 2).reshape(&[3, 8]).unwrap();
        let (seq, rep) = compress(&frames, &text, &params, &cfg, Mode::Infer).unwrap();
        assert_eq!(rep.selected_frames.len(), 2);
        let fine = 4 + 6 + 2;
        assert_eq!(seq.budget.total_tokens, 2 * fine + 7 * 2);
        for (&p, &f) in rep.indices.iter().zip(&rep.selected_frames) {
            assert_eq!(rep.center_indices[p], f);
            assert_eq!(rep.frame_mask[f], 1);
        }
    }

    #[test]
    fn single_frame_clamps_to_one_fine_frame() {
        let cfg = small_cfg();
        let params = ModelParams::init(&cfg).unwrap();
        let (seq, rep) = compress(&video(1, 16, 8, 3), &video(1, 1, 8, 4).reshape(&[1, 8]).unwrap(), &params, &cfg, Mode::Infer).unwrap();
        assert_eq!((rep.l, rep.k), (1, 1));
        assert_eq!(seq.budget.total_tokens, 12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = small_cfg();
        let params = ModelParams::init(&cfg).unwrap();
        let text = Tensor::zeros(&[1, 8], DType::F32);
        let err = compress(&video(3, 9, 8, 5), &text, &params, &cfg, Mode::Infer).unwrap_err();
        assert!(matches!(err, Error::Validation { .. }), "{err}");
        let empty = Tensor::zeros(&[0, 16, 8], DType::F32);
        assert!(compress(&empty, &text, &params, &cfg, Mode::Infer).is_err());
        let err = compress(&video(3, 16, 6, 5), &text, &params, &cfg, Mode::Infer).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn text_projection_is_fixed() {
        let text = video(1, 2, 5, 6).reshape(&[2, 5]).unwrap();
        let a = project_text(&text, 8, 1).unwrap();
        let b = project_text(&text, 8, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 8);
        assert_eq!(project_text(&text, 5, 1).unwrap().tokens(), &text);
    }

    #[test]
    fn train_mode_keeps_the_hard_selection() {
        let cfg = RunConfig { n_samples: 50, ..small_cfg() };
        let params = ModelParams::init(&cfg).unwrap();
        let frames = video(7, 16, 8, 7);
        let text = Tensor::filled(&[1, 8], 0.1, DType::F32);
        let (_, a) = compress(&frames, &text, &params, &cfg, Mode::Infer).unwrap();
        let (_, b) = compress(&frames, &text, &params, &cfg, Mode::Train).unwrap();
        assert_eq!(a.selected_frames, b.selected_frames);
        assert_eq!(a.budget.total_tokens, b.budget.total_tokens);
    }
}
