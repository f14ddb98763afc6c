//! The motion embedding set and its inference-time transforms.
//!
//! Each temporal attention module `i` owns a query/key embedding `m_qk` and
//! a value embedding `m_v`, both shaped `[S, N, C_i]` where the spatial
//! extent `S` is 1 ("one_d", broadcast over pixels) or `H_i * W_i`
//! ("two_d", one vector per pixel). The default pairs a one_d `m_qk` with a
//! two_d `m_v`.
//!
//! # MEMB0001 layout
//!
//! All integers little-endian.
//!
//! | bytes | field |
//! |-------|-------|
//! | 8     | magic `MEMB0001` |
//! | 4     | `L`, module count (u32) |
//! | 4     | `N`, frame count (u32) |
//! | 1     | qk spatial: 0 = one_d, 1 = two_d |
//! | 1     | v spatial: 0 = one_d, 1 = two_d |
//! | 1     | inference strategy: 0 = differential, 1 = normalize, 2 = vanilla |
//! | 1     | reserved, 0 |
//! | 20·L  | per module: `C`, `H`, `W`, `S_qk`, `S_v` (u32 each) |
//! | 4     | CRC-32 (IEEE) of all preceding bytes |
//! | 8·…   | f64 values, module order, `m_qk` then `m_v`, row-major `[S, N, C]` |

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::codec::{self, Reader, Writer};
use crate::denoiser::{DenoiserSpec, ModuleDescriptor};
use crate::error::{Error, FormatError, Result};
use crate::tensor::Tensor;
use crate::Real;

pub const MEMB_MAGIC: &[u8; 8] = b"MEMB0001";

/// Spatial layout of one embedding family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Spatial {
    /// One vector per frame, shared by every pixel.
    OneD,
    /// One vector per pixel and frame.
    TwoD,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum InferenceStrategy {
    /// Frame-to-frame differences of `m_v`, first frame kept.
    #[default]
    Differential,
    /// `m_v` minus its mean over frames.
    Normalize,
    /// `m_v` used as fitted.
    Vanilla,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EmbeddingShapeConfig {
    pub qk_spatial: Spatial,
    pub v_spatial: Spatial,
    pub inference_strategy: InferenceStrategy,
}

impl Default for EmbeddingShapeConfig {
    fn default() -> Self {
        EmbeddingShapeConfig {
            qk_spatial: Spatial::OneD,
            v_spatial: Spatial::TwoD,
            inference_strategy: InferenceStrategy::Differential,
        }
    }
}

impl EmbeddingShapeConfig {
    pub fn new(qk: Spatial, v: Spatial) -> Self {
        EmbeddingShapeConfig {
            qk_spatial: qk,
            v_spatial: v,
            ..Default::default()
        }
    }
}

impl Spatial {
    fn code(self) -> u8 {
        match self {
            Spatial::OneD => 0,
            Spatial::TwoD => 1,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Spatial::OneD),
            1 => Some(Spatial::TwoD),
            _ => None,
        }
    }

    pub fn extent(self, m: &ModuleDescriptor) -> usize {
        match self {
            Spatial::OneD => 1,
            Spatial::TwoD => m.height * m.width,
        }
    }
}

impl InferenceStrategy {
    fn code(self) -> u8 {
        match self {
            InferenceStrategy::Differential => 0,
            InferenceStrategy::Normalize => 1,
            InferenceStrategy::Vanilla => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(InferenceStrategy::Differential),
            1 => Some(InferenceStrategy::Normalize),
            2 => Some(InferenceStrategy::Vanilla),
            _ => None,
        }
    }
}

impl fmt::Display for Spatial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Spatial::OneD => "one_d",
            Spatial::TwoD => "two_d",
        })
    }
}

impl FromStr for Spatial {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "one_d" | "1d" => Ok(Spatial::OneD),
            "two_d" | "2d" => Ok(Spatial::TwoD),
            _ => Err(format!("expected one_d or two_d, got {s:?}")),
        }
    }
}

impl fmt::Display for InferenceStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InferenceStrategy::Differential => "differential",
            InferenceStrategy::Normalize => "normalize",
            InferenceStrategy::Vanilla => "vanilla",
        })
    }
}

impl FromStr for InferenceStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "differential" => Ok(InferenceStrategy::Differential),
            "normalize" => Ok(InferenceStrategy::Normalize),
            "vanilla" => Ok(InferenceStrategy::Vanilla),
            _ => Err(format!(
                "expected differential, normalize or vanilla, got {s:?}"
            )),
        }
    }
}

/// Learnable `{m_qk_i, m_v_i}` for every temporal module of a denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionEmbeddingSet {
    config: EmbeddingShapeConfig,
    frames: usize,
    modules: Vec<ModuleDescriptor>,
    qk: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl MotionEmbeddingSet {
    /// All-zero embeddings shaped for `spec`'s temporal modules.
    pub fn init_zero(
        spec: &DenoiserSpec,
        config: EmbeddingShapeConfig,
        n_frames: usize,
    ) -> Result<Self> {
        if n_frames == 0 || n_frames != spec.frames {
            return Err(Error::invalid(format!(
                "embedding frame count {n_frames} must equal the denoiser's {} frames",
                spec.frames
            )));
        }
        Ok(Self::zeros_for(spec.temporal_modules(), config, n_frames))
    }

    fn zeros_for(modules: Vec<ModuleDescriptor>, config: EmbeddingShapeConfig, n: usize) -> Self {
        let qk = modules
            .iter()
            .map(|m| Tensor::zeros([config.qk_spatial.extent(m), n, m.channels]))
            .collect();
        let v = modules
            .iter()
            .map(|m| Tensor::zeros([config.v_spatial.extent(m), n, m.channels]))
            .collect();
        MotionEmbeddingSet {
            config,
            frames: n,
            modules,
            qk,
            v,
        }
    }

    /// Assembles a set from explicit tensors, checking every shape.
    pub fn from_parts(
        config: EmbeddingShapeConfig,
        frames: usize,
        modules: Vec<ModuleDescriptor>,
        qk: Vec<Tensor>,
        v: Vec<Tensor>,
    ) -> Result<Self> {
        let set = MotionEmbeddingSet {
            config,
            frames,
            modules,
            qk,
            v,
        };
        set.check_shapes()?;
        Ok(set)
    }

    fn check_shapes(&self) -> Result<()> {
        if self.modules.is_empty() || self.frames == 0 {
            return Err(Error::invalid("embedding set needs modules and frames"));
        }
        if self.qk.len() != self.modules.len() || self.v.len() != self.modules.len() {
            return Err(Error::invalid("one m_qk and one m_v per module"));
        }
        for (i, m) in self.modules.iter().enumerate() {
            let want_qk = [self.config.qk_spatial.extent(m), self.frames, m.channels];
            let want_v = [self.config.v_spatial.extent(m), self.frames, m.channels];
            if self.qk[i].shape() != want_qk {
                return Err(Error::shape("m_qk", self.qk[i].shape(), &want_qk));
            }
            if self.v[i].shape() != want_v {
                return Err(Error::shape("m_v", self.v[i].shape(), &want_v));
            }
        }
        Ok(())
    }

    pub fn config(&self) -> EmbeddingShapeConfig {
        self.config
    }

    pub fn set_inference_strategy(&mut self, s: InferenceStrategy) {
        self.config.inference_strategy = s;
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn modules(&self) -> &[ModuleDescriptor] {
        &self.modules
    }

    pub fn num_modules(&self) -> usize {
        self.modules.len()
    }

    pub fn qk(&self, i: usize) -> &Tensor {
        &self.qk[i]
    }

    pub fn v(&self, i: usize) -> &Tensor {
        &self.v[i]
    }

    /// Mutable access in optimiser order: module 0 qk, module 0 v, module 1 qk, ...
    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.qk
            .iter_mut()
            .zip(self.v.iter_mut())
            .flat_map(|(a, b)| [a, b])
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.qk.iter().zip(self.v.iter()).flat_map(|(a, b)| [a, b])
    }

    pub fn param_count(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.tensors().all(|t| t.data().iter().all(|&v| v == 0.0))
    }

    pub fn bit_eq(&self, other: &MotionEmbeddingSet) -> bool {
        self.config == other.config
            && self.frames == other.frames
            && self.modules == other.modules
            && self
                .tensors()
                .zip(other.tensors())
                .all(|(a, b)| a.bit_eq(b))
    }

    /// Checks that this set binds to `spec`'s temporal modules.
    pub fn validate_for(&self, spec: &DenoiserSpec) -> Result<(), FormatError> {
        let want = spec.temporal_modules();
        if self.modules != want {
            return Err(FormatError::ShapeMismatch(format!(
                "embedding modules {:?} do not match denoiser modules {:?}",
                self.modules, want
            )));
        }
        if self.frames != spec.frames {
            return Err(FormatError::ShapeMismatch(format!(
                "embeddings cover {} frames, denoiser expects {}",
                self.frames, spec.frames
            )));
        }
        Ok(())
    }

    fn map_values(&self, f: impl Fn(&Tensor) -> Tensor) -> MotionEmbeddingSet {
        MotionEmbeddingSet {
            config: self.config,
            frames: self.frames,
            modules: self.modules.clone(),
            qk: self.qk.clone(),
            v: self.v.iter().map(f).collect(),
        }
    }

    /// Frame 1 of every `m_v` is kept; frame `j > 1` becomes
    /// `m_v[j] - m_v[j-1]`. `m_qk` is untouched.
    pub fn debias_differential(&self) -> MotionEmbeddingSet {
        self.map_values(frame_difference)
    }

    /// Removes the mean over frames from every `m_v` (per pixel row and
    /// channel). `m_qk` is untouched.
    pub fn debias_normalize(&self) -> MotionEmbeddingSet {
        self.map_values(|t| {
            let mean = t.mean_axes(&[1]).expect("rank 3");
            t.sub(&mean).expect("broadcast over frames")
        })
    }

    pub fn apply_inference_strategy(&self, strategy: InferenceStrategy) -> MotionEmbeddingSet {
        match strategy {
            InferenceStrategy::Differential => self.debias_differential(),
            InferenceStrategy::Normalize => self.debias_normalize(),
            InferenceStrategy::Vanilla => self.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MEMB_MAGIC);
        w.usize(self.modules.len());
        w.usize(self.frames);
        w.u8(self.config.qk_spatial.code());
        w.u8(self.config.v_spatial.code());
        w.u8(self.config.inference_strategy.code());
        w.u8(0);
        for m in &self.modules {
            w.usize(m.channels);
            w.usize(m.height);
            w.usize(m.width);
            w.usize(self.config.qk_spatial.extent(m));
            w.usize(self.config.v_spatial.extent(m));
        }
        w.header_checksum();
        for t in self.tensors() {
            w.f64s(t.data().iter().map(|&v| v as f64));
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::new(bytes, MEMB_MAGIC, "MEMB")?;
        let l = r.extent("module count")?;
        let n = r.extent("frame count")?;
        let qk_spatial = Spatial::from_code(r.u8()?).ok_or(FormatError::InvalidField {
            field: "qk spatial",
            detail: "not 0 or 1".into(),
        })?;
        let v_spatial = Spatial::from_code(r.u8()?).ok_or(FormatError::InvalidField {
            field: "v spatial",
            detail: "not 0 or 1".into(),
        })?;
        let strategy = InferenceStrategy::from_code(r.u8()?).ok_or(FormatError::InvalidField {
            field: "inference strategy",
            detail: "not 0, 1 or 2".into(),
        })?;
        if r.u8()? != 0 {
            return Err(FormatError::InvalidField {
                field: "reserved",
                detail: "must be 0".into(),
            });
        }
        let config = EmbeddingShapeConfig {
            qk_spatial,
            v_spatial,
            inference_strategy: strategy,
        };
        // Each descriptor is 20 bytes; bound L before allocating.
        if l > bytes.len() / 20 {
            return Err(FormatError::Truncated {
                needed: l.saturating_mul(20),
                available: bytes.len(),
            });
        }
        let mut modules = Vec::with_capacity(l);
        let mut extents = Vec::with_capacity(l);
        for _ in 0..l {
            let m = ModuleDescriptor {
                channels: r.extent("channels")?,
                height: r.extent("height")?,
                width: r.extent("width")?,
            };
            let s_qk = r.extent("qk extent")?;
            let s_v = r.extent("v extent")?;
            if s_qk != qk_spatial.extent(&m) || s_v != v_spatial.extent(&m) {
                return Err(FormatError::InvalidField {
                    field: "spatial extent",
                    detail: format!(
                        "module {m:?} stores S_qk={s_qk}, S_v={s_v}, config implies {} and {}",
                        qk_spatial.extent(&m),
                        v_spatial.extent(&m)
                    ),
                });
            }
            modules.push(m);
            extents.push((s_qk, s_v));
        }
        r.verify_header_checksum()?;
        let mut qk = Vec::with_capacity(l);
        let mut v = Vec::with_capacity(l);
        for (m, (s_qk, s_v)) in modules.iter().zip(extents) {
            for (s, dst) in [(s_qk, &mut qk), (s_v, &mut v)] {
                let count = s
                    .checked_mul(n)
                    .and_then(|x| x.checked_mul(m.channels))
                    .ok_or(FormatError::Truncated {
                        needed: usize::MAX,
                        available: bytes.len(),
                    })?;
                let data = r.f64s(count)?.into_iter().map(|x| x as Real).collect();
                dst.push(Tensor::new(vec![s, n, m.channels], data).map_err(|e| {
                    FormatError::InvalidField {
                        field: "payload",
                        detail: e.to_string(),
                    }
                })?);
            }
        }
        r.finish()?;
        Ok(MotionEmbeddingSet {
            config,
            frames: n,
            modules,
            qk,
            v,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        codec::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = codec::read_file(path)?;
        Ok(Self::from_bytes(&bytes)?)
    }
}

/// Differences along the frame axis of a `[S, N, C]` tensor, first frame kept.
pub fn frame_difference(t: &Tensor) -> Tensor {
    let (s, n, c) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let src = t.data();
    let mut out = src.to_vec();
    for row in 0..s {
        for j in 1..n {
            for k in 0..c {
                let i = (row * n + j) * c + k;
                out[i] = src[i] - src[i - c];
            }
        }
    }
    Tensor::new(t.shape().to_vec(), out).expect("same shape")
}
