//! Temporal self-attention over the frame axis.
//!
//! Video features `[1, C, N, H, W]` are rearranged to frame-major
//! `[H*W, N, C]`: one row per pixel, attention across that pixel's `N`
//! frames. Features are row vectors, so the query projection is `F · W_q`
//! with `W_q` stored input-major (`[C_in, C_out]`).
//!
//! Motion embeddings enter additively: `m_qk` is added to the features that
//! feed the query and key projections, `m_v` to the features that feed the
//! value projection. An embedding with spatial extent 1 broadcasts over all
//! pixel rows.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Real;

/// Single-head projection weights of one temporal attention module.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
}

impl AttentionWeights {
    pub fn new(wq: Tensor, wk: Tensor, wv: Tensor) -> Result<Self> {
        let c = wq.shape().first().copied().unwrap_or(0);
        for (name, w) in [("wq", &wq), ("wk", &wk), ("wv", &wv)] {
            if w.shape() != [c, c] {
                return Err(Error::invalid(format!(
                    "{name} must be square [{c}, {c}], got {:?}",
                    w.shape()
                )));
            }
        }
        Ok(AttentionWeights { wq, wk, wv })
    }

    pub fn channels(&self) -> usize {
        self.wq.shape()[0]
    }

    /// Scaling dimension `d_k`; equals the channel count for one head.
    pub fn key_dim(&self) -> usize {
        self.channels()
    }
}

/// Graph handles for one module's weights.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub key_dim: usize,
}

impl AttentionVars {
    pub fn constants(g: &mut Graph, w: &AttentionWeights) -> Self {
        AttentionVars {
            wq: g.constant(w.wq.clone()),
            wk: g.constant(w.wk.clone()),
            wv: g.constant(w.wv.clone()),
            key_dim: w.key_dim(),
        }
    }

    pub fn params(g: &mut Graph, w: &AttentionWeights) -> Self {
        AttentionVars {
            wq: g.param(w.wq.clone()),
            wk: g.param(w.wk.clone()),
            wv: g.param(w.wv.clone()),
            key_dim: w.key_dim(),
        }
    }
}

/// `[1, C, N, H, W]` to `[H*W, N, C]`.
pub fn to_frame_major(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 5 || s[0] != 1 {
        return Err(Error::invalid(format!(
            "to_frame_major expects [1, C, N, H, W], got {s:?}"
        )));
    }
    let (c, n, h, w) = (s[1], s[2], s[3], s[4]);
    Ok(x.reshape([c, n, h, w])?
        .permute(&[2, 3, 1, 0])?
        .into_reshaped(vec![h * w, n, c]))
}

/// `[H*W, N, C]` back to `[1, C, N, H, W]`.
pub fn from_frame_major(f: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let s = f.shape();
    if s.len() != 3 || s[0] != height * width {
        return Err(Error::invalid(format!(
            "from_frame_major expects [{}, N, C], got {s:?}",
            height * width
        )));
    }
    let (n, c) = (s[1], s[2]);
    Ok(f.reshape([height, width, n, c])?
        .permute(&[3, 2, 0, 1])?
        .into_reshaped(vec![1, c, n, height, width]))
}

pub(crate) fn to_frame_major_graph(g: &mut Graph, x: Var) -> Result<Var> {
    let s = g.value(x).shape().to_vec();
    if s.len() != 5 || s[0] != 1 {
        return Err(Error::invalid(format!(
            "to_frame_major expects [1, C, N, H, W], got {s:?}"
        )));
    }
    let (c, n, h, w) = (s[1], s[2], s[3], s[4]);
    let r = g.reshape(x, [c, n, h, w])?;
    let p = g.permute(r, &[2, 3, 1, 0])?;
    g.reshape(p, [h * w, n, c])
}

pub(crate) fn from_frame_major_graph(
    g: &mut Graph,
    f: Var,
    height: usize,
    width: usize,
) -> Result<Var> {
    let s = g.value(f).shape().to_vec();
    if s.len() != 3 || s[0] != height * width {
        return Err(Error::invalid(format!(
            "from_frame_major expects [{}, N, C], got {s:?}",
            height * width
        )));
    }
    let (n, c) = (s[1], s[2]);
    let r = g.reshape(f, [height, width, n, c])?;
    let p = g.permute(r, &[3, 2, 0, 1])?;
    g.reshape(p, [1, c, n, height, width])
}

fn check_features(f: &Tensor, channels: usize) -> Result<()> {
    let s = f.shape();
    if s.len() != 3 {
        return Err(Error::invalid(format!(
            "temporal attention expects [HW, N, C] features, got {s:?}"
        )));
    }
    if s[2] != channels {
        return Err(Error::shape(
            "temporal_attention channels",
            s,
            &[channels, channels],
        ));
    }
    Ok(())
}

/// Checks an embedding against `[HW, N, C]` features. Spatial extent may be
/// 1 (broadcast) or `HW`.
pub fn check_embedding(name: &str, m: &[usize], features: &[usize]) -> Result<()> {
    if m.len() != 3 {
        return Err(Error::invalid(format!(
            "{name} must be [S, N, C], got {m:?}"
        )));
    }
    if m[1] != features[1] {
        return Err(Error::invalid(format!(
            "{name} has {} frames but features have {}; embeddings were fitted to a different clip length",
            m[1], features[1]
        )));
    }
    if m[2] != features[2] || (m[0] != 1 && m[0] != features[0]) {
        return Err(Error::invalid(format!(
            "{name} shape {m:?} incompatible with features {features:?}"
        )));
    }
    Ok(())
}

/// Attention over frames, recorded on `g`. `m_qk` / `m_v` are optional
/// additive embeddings; the caller owns any residual connection.
pub fn temporal_attention_graph(
    g: &mut Graph,
    f: Var,
    w: &AttentionVars,
    m_qk: Option<Var>,
    m_v: Option<Var>,
) -> Result<Var> {
    let (scores, v) = attention_scores_graph(g, f, w, m_qk, m_v)?;
    let attn = g.softmax(scores, 2)?;
    g.matmul(attn, v)
}

fn attention_scores_graph(
    g: &mut Graph,
    f: Var,
    w: &AttentionVars,
    m_qk: Option<Var>,
    m_v: Option<Var>,
) -> Result<(Var, Var)> {
    let fs = g.value(f).shape().to_vec();
    let c = g.value(w.wq).shape()[0];
    check_features(g.value(f), c)?;
    let qk_in = match m_qk {
        Some(m) => {
            check_embedding("m_qk", g.value(m).shape(), &fs)?;
            g.add(f, m)?
        }
        None => f,
    };
    let v_in = match m_v {
        Some(m) => {
            check_embedding("m_v", g.value(m).shape(), &fs)?;
            g.add(f, m)?
        }
        None => f,
    };
    let q = g.matmul(qk_in, w.wq)?;
    let k = g.matmul(qk_in, w.wk)?;
    let v = g.matmul(v_in, w.wv)?;
    let kt = g.transpose_last(k)?;
    let raw = g.matmul(q, kt)?;
    let scores = g.scale(raw, 1.0 / (w.key_dim as Real).sqrt());
    Ok((scores, v))
}

/// Plain temporal attention, `[HW, N, C]` in and out.
pub fn temporal_attention(f: &Tensor, w: &AttentionWeights) -> Result<Tensor> {
    check_features(f, w.channels())?;
    let mut g = Graph::new();
    let fv = g.constant(f.clone());
    let wv = AttentionVars::constants(&mut g, w);
    let out = temporal_attention_graph(&mut g, fv, &wv, None, None)?;
    Ok(g.value(out).clone())
}

/// Temporal attention with motion embeddings added before the query/key
/// and value projections.
pub fn temporal_attention_injected(
    f: &Tensor,
    w: &AttentionWeights,
    m_qk: &Tensor,
    m_v: &Tensor,
) -> Result<Tensor> {
    check_features(f, w.channels())?;
    let mut g = Graph::new();
    let fv = g.constant(f.clone());
    let wv = AttentionVars::constants(&mut g, w);
    let qk = g.constant(m_qk.clone());
    let v = g.constant(m_v.clone());
    let out = temporal_attention_graph(&mut g, fv, &wv, Some(qk), Some(v))?;
    Ok(g.value(out).clone())
}

/// Attention probabilities `[HW, N, N]`; row `i` of pixel `p` holds the
/// weights frame `i` assigns to every frame.
pub fn attention_map(f: &Tensor, w: &AttentionWeights, m_qk: Option<&Tensor>) -> Result<Tensor> {
    check_features(f, w.channels())?;
    let mut g = Graph::new();
    let fv = g.constant(f.clone());
    let wv = AttentionVars::constants(&mut g, w);
    let qk = m_qk.map(|m| g.constant(m.clone()));
    let (scores, _) = attention_scores_graph(&mut g, fv, &wv, qk, None)?;
    g.value(scores).softmax(2)
}
