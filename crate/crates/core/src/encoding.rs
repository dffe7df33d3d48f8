//! Dual-resolution frame encoding.
//!
//! Selected frames take the fine ("cones") path: the frame's filtered event
//! prototype and its multi-grained spatial prototypes pass token-wise through
//! `F_fine` with no pooling. Every frame also gets the coarse ("rods") pair:
//! one text-guided token from attention of the text over the spatial
//! prototypes, and one global content token. Fine frames emit
//! `[fine ‖ coarse]`, the rest only the coarse pair.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dpc::spatial_multigrained;
use crate::error::{Error, Result};
use crate::numerics::{
    matmul, matmul_nt, mean_rows, softmax_rows, Activation, DType, Mlp, Tensor,
};
use crate::rng;
use crate::storage::{read_tensor, write_tensor, NeighborCount};

/// Text feature rows `[R × d]`, `R >= 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct TextEmbedding(Tensor);

impl TextEmbedding {
    pub fn new(tokens: Tensor) -> Result<Self> {
        if tokens.rank() == 1 {
            let d = tokens.dims()[0];
            return Ok(TextEmbedding(tokens.reshape(&[1, d])?));
        }
        tokens.expect_rank(2)?;
        Ok(TextEmbedding(tokens))
    }

    pub fn tokens(&self) -> &Tensor {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dims()[1]
    }
}

/// Trainable maps of the encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub fine: Mlp,
    pub coarse: Mlp,
    pub query: Mlp,
    pub key: Mlp,
}

impl EncoderParams {
    /// `F_fine`, `F_coarse`: two `d → d` layers, plus `d → d′` when `d′ ≠ d`.
    /// `f_q`, `f_k`: single linear `d → d` projections.
    pub fn init(d: usize, d_prime: usize, seed: u64, dtype: DType) -> Result<Self> {
        let mut widths = vec![d, d, d];
        if d_prime != d {
            widths.push(d_prime);
        }
        let mk = |purpose: u64, sizes: &[usize], act: Activation| {
            let mut r = rng::stream(seed, purpose, 0);
            Mlp::xavier(sizes, act, dtype, &mut r)
        };
        Ok(EncoderParams {
            fine: mk(rng::purpose::FINE_INIT, &widths, Activation::Relu)?,
            coarse: mk(rng::purpose::COARSE_INIT, &widths, Activation::Relu)?,
            query: mk(rng::purpose::QUERY_INIT, &[d, d], Activation::Identity)?,
            key: mk(rng::purpose::KEY_INIT, &[d, d], Activation::Identity)?,
        })
    }

    /// Identity maps everywhere, for tests that need to see through the encoder.
    pub fn identity(d: usize, dtype: DType) -> Result<Self> {
        Ok(EncoderParams {
            fine: Mlp::identity(d, 1, Activation::Relu, dtype)?,
            coarse: Mlp::identity(d, 1, Activation::Relu, dtype)?,
            query: Mlp::identity(d, 1, Activation::Identity, dtype)?,
            key: Mlp::identity(d, 1, Activation::Identity, dtype)?,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.fine.out_dim()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenKind {
    Fine,
    Coarse,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameEncoding {
    pub tokens: Tensor,
    pub kind: TokenKind,
    pub frame_index: usize,
}

impl FrameEncoding {
    pub fn n_tokens(&self) -> usize {
        self.tokens.dims()[0]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub n_fine_frames: usize,
    pub n_coarse_frames: usize,
    pub total_tokens: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence {
    pub per_frame: Vec<FrameEncoding>,
    pub budget: Budget,
}

impl TokenSequence {
    pub fn new(per_frame: Vec<FrameEncoding>) -> Self {
        let mut budget = Budget::default();
        for f in &per_frame {
            match f.kind {
                TokenKind::Fine => budget.n_fine_frames += 1,
                TokenKind::Coarse => budget.n_coarse_frames += 1,
            }
            budget.total_tokens += f.n_tokens();
        }
        TokenSequence { per_frame, budget }
    }

    /// All tokens concatenated in frame order.
    pub fn flatten(&self) -> Result<Tensor> {
        let refs: Vec<&Tensor> = self.per_frame.iter().map(|f| &f.tokens).collect();
        Tensor::concat_rows(&refs)
    }
}

/// `F_fine(h_t ‖ G_t)`: `P + I` rows in, `P + I` tokens out.
pub fn cones_encode(event: &Tensor, spatial: &Tensor, fine: &Mlp) -> Result<Tensor> {
    event.expect_rank(2)?;
    spatial.expect_rank(2)?;
    if event.dims()[1] != fine.in_dim() || spatial.dims()[1] != fine.in_dim() {
        return Err(Error::Contract(format!(
            "fine encoder expects width {}, got event {:?} and spatial {:?}",
            fine.in_dim(),
            event.dims(),
            spatial.dims()
        )));
    }
    let rows = Tensor::concat_rows(&[event, spatial])?;
    Ok(fine.forward(&rows)?.0)
}

/// Text-guided summary of the spatial prototypes: text rows attend over the
/// prototypes, `A = softmax(f_q(Q)·f_k(G)ᵀ / √d)`, and the attended rows
/// `A·G` are averaged over the text.
pub fn rods_attend(spatial: &Tensor, text: &TextEmbedding, query: &Mlp, key: &Mlp) -> Result<Vec<f64>> {
    spatial.expect_rank(2)?;
    let d = spatial.dims()[1];
    if text.dim() != d || query.in_dim() != d || key.in_dim() != d || query.out_dim() != key.out_dim() {
        return Err(Error::Contract(format!(
            "attention widths disagree: prototypes {d}, text {}, f_q {}->{}, f_k {}->{}",
            text.dim(),
            query.in_dim(),
            query.out_dim(),
            key.in_dim(),
            key.out_dim()
        )));
    }
    let q = query.forward(text.tokens())?.0;
    let k = key.forward(spatial)?.0;
    let mut logits = matmul_nt(&q, &k)?;
    let scale = 1.0 / (d as f64).sqrt();
    logits.map_in_place(|v| v * scale);
    let attn = softmax_rows(&logits)?;
    let attended = matmul(&attn, spatial)?;
    mean_rows(&attended)
}

/// The coarse pair `[F_coarse(E), F_coarse(mean G)]`.
pub fn rods_encode(
    spatial: &Tensor,
    text: &TextEmbedding,
    params: &EncoderParams,
) -> Result<Tensor> {
    let guided = rods_attend(spatial, text, &params.query, &params.key)?;
    let global = mean_rows(spatial)?;
    if params.coarse.in_dim() != global.len() {
        return Err(Error::Contract(format!(
            "coarse encoder expects width {}, prototypes have {}",
            params.coarse.in_dim(),
            global.len()
        )));
    }
    let pair = Tensor::from_rows(&[guided, global], spatial.dtype())?;
    Ok(params.coarse.forward(&pair)?.0)
}

/// Token-wise combination for one frame.
pub fn cooperative_combine(
    fine: Option<&Tensor>,
    coarse: &Tensor,
    mask: u8,
    frame_index: usize,
) -> Result<FrameEncoding> {
    if coarse.rank() != 2 || coarse.dims()[0] != 2 {
        return Err(Error::Contract(format!(
            "coarse encoding must have exactly 2 tokens, got {:?}",
            coarse.dims()
        )));
    }
    match (mask, fine) {
        (1, Some(f)) => Ok(FrameEncoding {
            tokens: Tensor::concat_rows(&[f, coarse])?,
            kind: TokenKind::Fine,
            frame_index,
        }),
        (0, None) => Ok(FrameEncoding {
            tokens: coarse.clone(),
            kind: TokenKind::Coarse,
            frame_index,
        }),
        (1, None) => Err(Error::Contract(format!(
            "frame {frame_index} is selected but has no fine tokens"
        ))),
        (0, Some(_)) => Err(Error::Contract(format!(
            "frame {frame_index} is not selected but fine tokens were supplied"
        ))),
        (b, _) => Err(Error::Contract(format!("mask value {b} is not 0 or 1"))),
    }
}

/// Spatial settings used while encoding.
#[derive(Clone, Debug)]
pub struct SpatialConfig {
    pub layer_sizes: Vec<usize>,
    pub neighbors: NeighborCount,
}

/// Encode a whole video. `events[t]` is the filtered event prototype
/// `[P × d]` for frames on the fine path and `None` elsewhere. Frames are
/// encoded in parallel; the output does not depend on the thread count.
pub fn encode_video(
    frames: &Tensor,
    events: &[Option<Tensor>],
    text: &TextEmbedding,
    params: &EncoderParams,
    spatial: &SpatialConfig,
) -> Result<TokenSequence> {
    frames.expect_rank(3)?;
    let t = frames.dims()[0];
    if events.len() != t {
        return Err(Error::Dimension(format!(
            "{} event slots for {t} frames",
            events.len()
        )));
    }
    let per_frame = (0..t)
        .into_par_iter()
        .map(|i| {
            let frame = frames.slice_outer(i);
            let g = spatial_multigrained(&frame, &spatial.layer_sizes, spatial.neighbors)?;
            let coarse = rods_encode(&g, text, params)?;
            let fine = events[i]
                .as_ref()
                .map(|h| cones_encode(h, &g, &params.fine))
                .transpose()?;
            let mask = u8::from(fine.is_some());
            cooperative_combine(fine.as_ref(), &coarse, mask, i)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TokenSequence::new(per_frame))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineComparison {
    pub tokens_per_frame: usize,
    pub total_tokens: usize,
    /// `(baseline − ours) / baseline`.
    pub reduction: f64,
    pub reduction_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub n_frames: usize,
    pub n_fine_frames: usize,
    pub n_coarse_frames: usize,
    pub total_tokens: usize,
    /// Token count per frame → number of frames.
    pub histogram: BTreeMap<usize, usize>,
    pub uniform_fine: BaselineComparison,
    pub uniform_coarse: BaselineComparison,
}

fn compare(total: usize, per_frame: usize, n_frames: usize) -> BaselineComparison {
    let base = per_frame * n_frames;
    let diff = base as f64 - total as f64;
    BaselineComparison {
        tokens_per_frame: per_frame,
        total_tokens: base,
        reduction: diff / base as f64,
        reduction_pct: 100.0 * diff / base as f64,
    }
}

/// Compare a sequence against encoding every frame with `fine_per_frame`
/// tokens (e.g. all `N` patches) or with the 2-token coarse pair.
pub fn budget_report(seq: &TokenSequence, fine_per_frame: usize) -> BudgetReport {
    let n = seq.per_frame.len();
    let mut histogram = BTreeMap::new();
    for f in &seq.per_frame {
        *histogram.entry(f.n_tokens()).or_insert(0) += 1;
    }
    BudgetReport {
        n_frames: n,
        n_fine_frames: seq.budget.n_fine_frames,
        n_coarse_frames: seq.budget.n_coarse_frames,
        total_tokens: seq.budget.total_tokens,
        histogram,
        uniform_fine: compare(seq.budget.total_tokens, fine_per_frame, n),
        uniform_coarse: compare(seq.budget.total_tokens, 2, n),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub frame_index: usize,
    pub kind: TokenKind,
    pub n_tok: usize,
    /// Offset of this frame's first token in the concatenated sequence.
    pub offset: usize,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenManifest {
    pub frames: Vec<ManifestEntry>,
    pub budget: Budget,
}

/// One `.dft` per frame plus `manifest.json`.
pub fn write_token_sequence(dir: impl AsRef<Path>, seq: &TokenSequence) -> Result<TokenManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut offset = 0;
    let mut frames = Vec::with_capacity(seq.per_frame.len());
    for f in &seq.per_frame {
        let file = format!("frame_{:05}.dft", f.frame_index);
        write_tensor(dir.join(&file), &f.tokens)?;
        frames.push(ManifestEntry {
            frame_index: f.frame_index,
            kind: f.kind,
            n_tok: f.n_tokens(),
            offset,
            file,
        });
        offset += f.n_tokens();
    }
    let manifest = TokenManifest {
        frames,
        budget: seq.budget,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_token_sequence(dir: impl AsRef<Path>) -> Result<TokenSequence> {
    let dir = dir.as_ref();
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: TokenManifest = serde_json::from_str(&text)?;
    let mut per_frame = Vec::with_capacity(manifest.frames.len());
    for e in manifest.frames {
        let tokens = read_tensor(dir.join(&e.file))?;
        if tokens.dims().first() != Some(&e.n_tok) {
            return Err(Error::Corruption {
                path: dir.join(&e.file),
                message: format!("manifest says {} tokens, file holds {:?}", e.n_tok, tokens.dims()),
            });
        }
        per_frame.push(FrameEncoding {
            tokens,
            kind: e.kind,
            frame_index: e.frame_index,
        });
    }
    Ok(TokenSequence::new(per_frame))
}
