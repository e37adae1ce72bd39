//! Model parameter container, deterministic initialization, and the A2MP v1
//! on-disk format: magic "A2MP", u8 version, eight u32 LE dims
//! (d_x, d_h, d_r, d_in, hidden, layers, frames, bands), then float32 LE
//! tensors in the canonical flat order — fusion (w_gate, w_x, optional
//! w_res), decoder layers 1..L (forward then backward: input weights,
//! recurrent weights, bias), then the input and output projections. The
//! positional table is recomputed on load, never stored.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::{Mat, Scalar};

use super::decoder::{positional_table, DecoderGrads, DecoderParams};
use super::fusion::FusionParams;
use super::lstm::{BiLstmLayer, LstmCell};
use super::ModelError;

const MAGIC: &[u8; 4] = b"A2MP";
const VERSION: u8 = 1;

/// All structural sizes of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    /// Joint image+text embedding dim (gate/projection input).
    pub d_x: usize,
    /// Fused output dim.
    pub d_h: usize,
    /// Residual text embedding dim.
    pub d_r: usize,
    /// Decoder per-step input dim.
    pub d_in: usize,
    /// LSTM hidden units per direction.
    pub hidden: usize,
    /// Bidirectional LSTM layer count.
    pub layers: usize,
    /// Output frame count T.
    pub frames: usize,
    /// Output band count F.
    pub bands: usize,
}

impl ModelDims {
    /// Defaults matching the pipeline's canonical configuration.
    pub fn default_full() -> Self {
        Self {
            d_x: 1024,
            d_h: 512,
            d_r: 512,
            d_in: 512,
            hidden: 512,
            layers: 4,
            frames: 896,
            bands: 80,
        }
    }

    pub fn uses_residual_projection(&self) -> bool {
        self.d_r != self.d_h
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("d_x", self.d_x),
            ("d_h", self.d_h),
            ("d_r", self.d_r),
            ("d_in", self.d_in),
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("frames", self.frames),
            ("bands", self.bands),
        ] {
            if v == 0 {
                return Err(ModelError::Shape(format!("dimension {name} must be >= 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub fusion: FusionParams<T>,
    pub decoder: DecoderParams<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn dims(&self) -> ModelDims {
        ModelDims {
            d_x: self.fusion.d_x(),
            d_h: self.fusion.d_h(),
            d_r: self.fusion.d_r(),
            d_in: self.decoder.d_in(),
            hidden: self.decoder.hidden(),
            layers: self.decoder.layers.len(),
            frames: self.decoder.frames(),
            bands: self.decoder.bands(),
        }
    }

    /// Deterministic initialization: weights uniform in (-k, k) with
    /// k = 1/sqrt(hidden); biases zero except LSTM forget gates at 1.0.
    pub fn init(dims: &ModelDims, seed: u64) -> Result<Self, ModelError> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 1.0 / (dims.hidden as f64).sqrt();
        let mut draw_mat = |rows: usize, cols: usize| -> Mat<T> {
            let data = (0..rows * cols)
                .map(|_| T::from_f64(rng.gen_range(-k..k)))
                .collect();
            Mat::from_vec(rows, cols, data)
        };

        let fusion = FusionParams {
            w_gate: draw_mat(dims.d_h, dims.d_x + dims.d_h),
            w_x: draw_mat(dims.d_h, dims.d_x),
            w_res: if dims.uses_residual_projection() {
                Some(draw_mat(dims.d_h, dims.d_r))
            } else {
                None
            },
        };

        let mut layers = Vec::with_capacity(dims.layers);
        for l in 0..dims.layers {
            let input_dim = if l == 0 { dims.d_in } else { 2 * dims.hidden };
            let mk_cell = |rng_mat: &mut dyn FnMut(usize, usize) -> Mat<T>| LstmCell {
                w_input: rng_mat(4 * dims.hidden, input_dim),
                w_rec: rng_mat(4 * dims.hidden, dims.hidden),
                bias: {
                    let mut b = vec![T::zero(); 4 * dims.hidden];
                    for j in dims.hidden..2 * dims.hidden {
                        b[j] = T::one(); // forget gate bias
                    }
                    b
                },
            };
            let fw = mk_cell(&mut draw_mat);
            let bw = mk_cell(&mut draw_mat);
            layers.push(BiLstmLayer { fw, bw });
        }

        let decoder = DecoderParams {
            layers,
            input_proj_w: draw_mat(dims.d_in, dims.d_h),
            input_proj_b: vec![T::zero(); dims.d_in],
            output_proj_w: draw_mat(dims.bands, 2 * dims.hidden),
            output_proj_b: vec![T::zero(); dims.bands],
            pos_table: positional_table(dims.frames, dims.d_in),
        };

        let params = Self { fusion, decoder };
        params.fusion.check()?;
        params.decoder.check()?;
        Ok(params)
    }

    /// Visit every learned tensor as a slice, in the canonical flat order.
    pub fn for_each_slice(&self, mut f: impl FnMut(&[T])) {
        f(self.fusion.w_gate.data());
        f(self.fusion.w_x.data());
        if let Some(w_res) = &self.fusion.w_res {
            f(w_res.data());
        }
        for layer in &self.decoder.layers {
            for cell in [&layer.fw, &layer.bw] {
                f(cell.w_input.data());
                f(cell.w_rec.data());
                f(&cell.bias);
            }
        }
        f(self.decoder.input_proj_w.data());
        f(&self.decoder.input_proj_b);
        f(self.decoder.output_proj_w.data());
        f(&self.decoder.output_proj_b);
    }

    /// Mutable twin of [`Self::for_each_slice`].
    pub fn for_each_slice_mut(&mut self, mut f: impl FnMut(&mut [T])) {
        f(self.fusion.w_gate.data_mut());
        f(self.fusion.w_x.data_mut());
        if let Some(w_res) = &mut self.fusion.w_res {
            f(w_res.data_mut());
        }
        for layer in &mut self.decoder.layers {
            for cell in [&mut layer.fw, &mut layer.bw] {
                f(cell.w_input.data_mut());
                f(cell.w_rec.data_mut());
                f(&mut cell.bias);
            }
        }
        f(self.decoder.input_proj_w.data_mut());
        f(&mut self.decoder.input_proj_b);
        f(self.decoder.output_proj_w.data_mut());
        f(&mut self.decoder.output_proj_b);
    }

    pub fn n_params(&self) -> usize {
        let mut n = 0;
        self.for_each_slice(|s| n += s.len());
        n
    }

    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.n_params());
        self.for_each_slice(|s| out.extend_from_slice(s));
        out
    }

    /// Rebuild parameters from a flat slice in the canonical order.
    pub fn from_flat(dims: &ModelDims, flat: &[T]) -> Result<Self, ModelError> {
        let mut zero = Self::init(dims, 0)?;
        let mut offset = 0usize;
        let mut short = false;
        zero.for_each_slice_mut(|s| {
            if offset + s.len() > flat.len() {
                short = true;
                return;
            }
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        });
        if short || offset != flat.len() {
            return Err(ModelError::Shape(format!(
                "flat parameter vector has {} values, model needs {}",
                flat.len(),
                zero.n_params()
            )));
        }
        Ok(zero)
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U + Copy) -> ModelParams<U> {
        let dims = self.dims();
        let flat: Vec<U> = self.flatten().into_iter().map(f).collect();
        ModelParams::from_flat(&dims, &flat).expect("shape-preserving map")
    }
}

/// Gradient container mirroring the learned tensors.
#[derive(Debug, Clone)]
pub struct ModelGrads<T> {
    pub w_gate: Mat<T>,
    pub w_x: Mat<T>,
    pub w_res: Option<Mat<T>>,
    pub decoder: DecoderGrads<T>,
}

impl<T: Scalar> ModelGrads<T> {
    pub fn zeros_like(params: &ModelParams<T>) -> Self {
        Self {
            w_gate: Mat::zeros(params.fusion.w_gate.rows(), params.fusion.w_gate.cols()),
            w_x: Mat::zeros(params.fusion.w_x.rows(), params.fusion.w_x.cols()),
            w_res: params
                .fusion
                .w_res
                .as_ref()
                .map(|m| Mat::zeros(m.rows(), m.cols())),
            decoder: DecoderGrads::zeros_like(&params.decoder),
        }
    }

    pub fn for_each_slice(&self, mut f: impl FnMut(&[T])) {
        f(self.w_gate.data());
        f(self.w_x.data());
        if let Some(w_res) = &self.w_res {
            f(w_res.data());
        }
        for layer in &self.decoder.layers {
            for cell in [&layer.fw, &layer.bw] {
                f(cell.w_input.data());
                f(cell.w_rec.data());
                f(&cell.bias);
            }
        }
        f(self.decoder.input_proj_w.data());
        f(&self.decoder.input_proj_b);
        f(self.decoder.output_proj_w.data());
        f(&self.decoder.output_proj_b);
    }

    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        self.for_each_slice(|s| out.extend_from_slice(s));
        out
    }

    pub fn add_assign(&mut self, other: &ModelGrads<T>) {
        self.w_gate.add_assign(&other.w_gate);
        self.w_x.add_assign(&other.w_x);
        if let (Some(a), Some(b)) = (&mut self.w_res, &other.w_res) {
            a.add_assign(b);
        }
        for (mine, theirs) in self.decoder.layers.iter_mut().zip(&other.decoder.layers) {
            for (m, t) in [
                (&mut mine.fw, &theirs.fw),
                (&mut mine.bw, &theirs.bw),
            ] {
                m.w_input.add_assign(&t.w_input);
                m.w_rec.add_assign(&t.w_rec);
                for (a, b) in m.bias.iter_mut().zip(&t.bias) {
                    *a += *b;
                }
            }
        }
        self.decoder
            .input_proj_w
            .add_assign(&other.decoder.input_proj_w);
        for (a, b) in self
            .decoder
            .input_proj_b
            .iter_mut()
            .zip(&other.decoder.input_proj_b)
        {
            *a += *b;
        }
        self.decoder
            .output_proj_w
            .add_assign(&other.decoder.output_proj_w);
        for (a, b) in self
            .decoder
            .output_proj_b
            .iter_mut()
            .zip(&other.decoder.output_proj_b)
        {
            *a += *b;
        }
    }

    pub fn scale(&mut self, s: T) {
        self.w_gate.scale(s);
        self.w_x.scale(s);
        if let Some(w_res) = &mut self.w_res {
            w_res.scale(s);
        }
        for layer in &mut self.decoder.layers {
            for cell in [&mut layer.fw, &mut layer.bw] {
                cell.w_input.scale(s);
                cell.w_rec.scale(s);
                for b in &mut cell.bias {
                    *b *= s;
                }
            }
        }
        self.decoder.input_proj_w.scale(s);
        for b in &mut self.decoder.input_proj_b {
            *b *= s;
        }
        self.decoder.output_proj_w.scale(s);
        for b in &mut self.decoder.output_proj_b {
            *b *= s;
        }
    }
}

/// Serialize to A2MP v1 bytes (tensors stored as float32 LE).
pub fn save_params<T: Scalar>(params: &ModelParams<T>) -> Vec<u8> {
    let dims = params.dims();
    let mut out = Vec::with_capacity(5 + 32 + params.n_params() * 4);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    for v in [
        dims.d_x, dims.d_h, dims.d_r, dims.d_in, dims.hidden, dims.layers, dims.frames, dims.bands,
    ] {
        out.write_u32::<LittleEndian>(v as u32).unwrap();
    }
    params.for_each_slice(|s| {
        for &v in s {
            out.write_f32::<LittleEndian>(v.to_f64() as f32).unwrap();
        }
    });
    out
}

fn read_header(r: &mut Cursor<&[u8]>) -> Result<ModelDims, ModelError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| ModelError::Format("stream shorter than magic".into()))?;
    if &magic != MAGIC {
        return Err(ModelError::Format("bad magic, expected A2MP".into()));
    }
    let version = r
        .read_u8()
        .map_err(|_| ModelError::Format("missing version byte".into()))?;
    if version != VERSION {
        return Err(ModelError::Format(format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 8];
    for (i, d) in dims.iter_mut().enumerate() {
        *d = r
            .read_u32::<LittleEndian>()
            .map_err(|_| ModelError::Format(format!("truncated header dim {i}")))?
            as usize;
    }
    Ok(ModelDims {
        d_x: dims[0],
        d_h: dims[1],
        d_r: dims[2],
        d_in: dims[3],
        hidden: dims[4],
        layers: dims[5],
        frames: dims[6],
        bands: dims[7],
    })
}

/// Deserialize A2MP v1 bytes.
pub fn load_params(bytes: &[u8]) -> Result<ModelParams<f32>, ModelError> {
    let mut r = Cursor::new(bytes);
    let dims = read_header(&mut r)?;
    dims.validate()?;

    let probe = ModelParams::<f32>::init(&dims, 0)?;
    let n = probe.n_params();
    let mut flat = vec![0.0f32; n];
    for (i, v) in flat.iter_mut().enumerate() {
        *v = r.read_f32::<LittleEndian>().map_err(|_| {
            ModelError::Format(format!(
                "truncated at tensor value {i} of {n} (byte offset {})",
                37 + i * 4
            ))
        })?;
    }
    if r.position() as usize != bytes.len() {
        return Err(ModelError::Format(format!(
            "{} trailing bytes after tensors",
            bytes.len() - r.position() as usize
        )));
    }
    ModelParams::from_flat(&dims, &flat)
}

/// Deserialize and verify the header matches `expected`.
pub fn load_params_expecting(
    bytes: &[u8],
    expected: &ModelDims,
) -> Result<ModelParams<f32>, ModelError> {
    let mut r = Cursor::new(bytes);
    let dims = read_header(&mut r)?;
    if dims != *expected {
        for (name, got, want) in [
            ("d_x", dims.d_x, expected.d_x),
            ("d_h", dims.d_h, expected.d_h),
            ("d_r", dims.d_r, expected.d_r),
            ("d_in", dims.d_in, expected.d_in),
            ("hidden", dims.hidden, expected.hidden),
            ("layers", dims.layers, expected.layers),
            ("frames", dims.frames, expected.frames),
            ("bands", dims.bands, expected.bands),
        ] {
            if got != want {
                return Err(ModelError::dim(&format!("header {name}"), want, got));
            }
        }
    }
    load_params(bytes)
}

pub fn save_params_file<T: Scalar>(
    params: &ModelParams<T>,
    path: impl AsRef<Path>,
) -> Result<(), ModelError> {
    let path = path.as_ref();
    std::fs::write(path, save_params(params)).map_err(|e| ModelError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn load_params_file(path: impl AsRef<Path>) -> Result<ModelParams<f32>, ModelError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| ModelError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    load_params(&bytes)
}
