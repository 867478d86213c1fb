//! DOAM model container: one format for all three word lengths.
//!
//! Layout (little-endian):
//!
//! ```text
//! "DOAM"  version u16  wl u8  reserved u8
//! input h u16, w u16, c u16   class_count u16   layer_count u16
//! wl=2 only: input quant params (scale f32, zero_point i32)
//! layer records (type u8 + fields + payload):
//!   1 conv2d   kh,kw,cin,cout u16  payload
//!   2 relu
//!   3 maxpool  ph,pw u16
//!   4 flatten
//!   5 dense    in,out u32          payload
//!   6 softmax
//! crc32 u32 over every preceding byte
//! ```
//!
//! Payloads: f64 weights+bias at word length 0, f32 at 1; at word length 2 a
//! weight scale f32, i8 weights, i32 biases, and an optional output
//! quant-param pair. Word lengths 0/1 serialize the float stack (ReLU and
//! softmax records included); word length 2 serializes the fused quantized
//! stack. Loading a word-length-1 file widens weights back to f64, so a
//! 0 -> save -> load cycle is lossless and a 1 -> load carries exactly the
//! f32-rounded values.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::model::{Layer, Model};
use crate::nn::tensor::Tensor;
use crate::quant::{QTensor, QuantLayer, QuantParams, QuantizedModel, WordLength};

const MAGIC: &[u8; 4] = b"DOAM";
const FORMAT_VERSION: u16 = 1;

const TAG_CONV: u8 = 1;
const TAG_RELU: u8 = 2;
const TAG_POOL: u8 = 3;
const TAG_FLATTEN: u8 = 4;
const TAG_DENSE: u8 = 5;
const TAG_SOFTMAX: u8 = 6;

/// A model loaded from a DOAM file.
#[derive(Debug, Clone)]
pub enum SavedModel {
    /// Word length 0 or 1; weights live in memory as f64 either way.
    Float { model: Model, word_length: WordLength },
    Quantized(QuantizedModel),
}

impl SavedModel {
    pub fn word_length(&self) -> WordLength {
        match self {
            SavedModel::Float { word_length, .. } => *word_length,
            SavedModel::Quantized(_) => WordLength::Int8,
        }
    }
}

// ── Writing ──────────────────────────────────────────────────────────

fn push_u16(buf: &mut Vec<u8>, v: u16) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_f32(buf: &mut Vec<u8>, v: f32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_i32(buf: &mut Vec<u8>, v: i32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_quant_params(buf: &mut Vec<u8>, qp: &QuantParams) {
    push_f32(buf, qp.scale);
    push_i32(buf, qp.zero_point);
}

fn push_float_payload(buf: &mut Vec<u8>, weight: &Tensor<f64>, bias: &Tensor<f64>, wl: WordLength) {
    match wl {
        WordLength::Dpfl => {
            for &v in weight.as_slice() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            for &v in bias.as_slice() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        WordLength::Spfl => {
            for &v in weight.as_slice() {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
            for &v in bias.as_slice() {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        WordLength::Int8 => unreachable!("float payload writer called for int8"),
    }
}

fn header(wl: WordLength, input_shape: [usize; 3], class_count: usize, layer_count: usize) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    push_u16(&mut buf, FORMAT_VERSION);
    buf.push(wl.tag());
    buf.push(0);
    push_u16(&mut buf, input_shape[0] as u16);
    push_u16(&mut buf, input_shape[1] as u16);
    push_u16(&mut buf, input_shape[2] as u16);
    push_u16(&mut buf, class_count as u16);
    push_u16(&mut buf, layer_count as u16);
    buf
}

fn finish(mut buf: Vec<u8>, path: &Path) -> Result<()> {
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&buf);
    push_u32(&mut buf, hasher.finalize());
    std::fs::write(path, buf)?;
    Ok(())
}

/// Serialize a float model at word length 0 (f64, lossless) or 1 (f32).
pub fn save_model(model: &Model, path: &Path, wl: WordLength) -> Result<()> {
    if wl == WordLength::Int8 {
        return Err(Error::argument(
            "int8 files are written from a QuantizedModel via save_quantized_model".to_string(),
        ));
    }
    model.validate()?;
    let mut buf = header(wl, model.input_shape, model.class_count, model.layers.len());
    for layer in &model.layers {
        match layer {
            Layer::Conv2d { weight, bias } => {
                buf.push(TAG_CONV);
                for &dim in weight.shape() {
                    push_u16(&mut buf, dim as u16);
                }
                push_float_payload(&mut buf, weight, bias, wl);
            }
            Layer::Relu => buf.push(TAG_RELU),
            Layer::MaxPool2d { pool_h, pool_w } => {
                buf.push(TAG_POOL);
                push_u16(&mut buf, *pool_h as u16);
                push_u16(&mut buf, *pool_w as u16);
            }
            Layer::Flatten => buf.push(TAG_FLATTEN),
            Layer::Dense { weight, bias } => {
                buf.push(TAG_DENSE);
                push_u32(&mut buf, weight.shape()[0] as u32);
                push_u32(&mut buf, weight.shape()[1] as u32);
                push_float_payload(&mut buf, weight, bias, wl);
            }
            Layer::Softmax => buf.push(TAG_SOFTMAX),
        }
    }
    finish(buf, path)
}

/// Serialize an INT8 model (word-length tag 2).
pub fn save_quantized_model(qmodel: &QuantizedModel, path: &Path) -> Result<()> {
    let mut buf = header(
        WordLength::Int8,
        qmodel.input_shape,
        qmodel.class_count,
        qmodel.layers.len(),
    );
    push_quant_params(&mut buf, &qmodel.input);
    for layer in &qmodel.layers {
        match layer {
            QuantLayer::Conv2d { weight, weight_scale, bias, out } => {
                buf.push(TAG_CONV);
                for &dim in &weight.shape {
                    push_u16(&mut buf, dim as u16);
                }
                push_f32(&mut buf, *weight_scale);
                buf.extend(weight.data.iter().map(|&v| v as u8));
                for &b in bias {
                    push_i32(&mut buf, b);
                }
                buf.push(1);
                push_quant_params(&mut buf, out);
            }
            QuantLayer::MaxPool2d { pool_h, pool_w } => {
                buf.push(TAG_POOL);
                push_u16(&mut buf, *pool_h as u16);
                push_u16(&mut buf, *pool_w as u16);
            }
            QuantLayer::Flatten => buf.push(TAG_FLATTEN),
            QuantLayer::Dense { weight, weight_scale, bias, out } => {
                buf.push(TAG_DENSE);
                push_u32(&mut buf, weight.shape[0] as u32);
                push_u32(&mut buf, weight.shape[1] as u32);
                push_f32(&mut buf, *weight_scale);
                buf.extend(weight.data.iter().map(|&v| v as u8));
                for &b in bias {
                    push_i32(&mut buf, b);
                }
                match out {
                    Some(qp) => {
                        buf.push(1);
                        push_quant_params(&mut buf, qp);
                    }
                    None => buf.push(0),
                }
            }
        }
    }
    finish(buf, path)
}

// ── Reading ──────────────────────────────────────────────────────────

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(self.pos as u64, format!("truncated while reading {what}")));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn i32(&mut self, what: &str) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64_vec(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(8 * count, what)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn f32_vec(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(4 * count, what)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect())
    }

    fn i8_vec(&mut self, count: usize, what: &str) -> Result<Vec<i8>> {
        Ok(self.take(count, what)?.iter().map(|&b| b as i8).collect())
    }

    fn i32_vec(&mut self, count: usize, what: &str) -> Result<Vec<i32>> {
        let raw = self.take(4 * count, what)?;
        Ok(raw.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn quant_params(&mut self, what: &str) -> Result<QuantParams> {
        Ok(QuantParams { scale: self.f32(what)?, zero_point: self.i32(what)? })
    }
}

fn float_payload(
    r: &mut ByteReader,
    weight_shape: Vec<usize>,
    bias_len: usize,
    wl: WordLength,
    what: &str,
) -> Result<(Tensor<f64>, Tensor<f64>)> {
    let w_count: usize = weight_shape.iter().product();
    let (w, b) = match wl {
        WordLength::Dpfl => (r.f64_vec(w_count, what)?, r.f64_vec(bias_len, what)?),
        WordLength::Spfl => (r.f32_vec(w_count, what)?, r.f32_vec(bias_len, what)?),
        WordLength::Int8 => unreachable!(),
    };
    Ok((Tensor::new(weight_shape, w)?, Tensor::new(vec![bias_len], b)?))
}

/// Read any DOAM file; the word-length tag selects the in-memory form.
pub fn load_model(path: &Path) -> Result<SavedModel> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 8 {
        return Err(Error::format(0, "file too short for a DOAM header".to_string()));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(body);
    if hasher.finalize() != u32::from_le_bytes(crc_bytes.try_into().unwrap()) {
        return Err(Error::format((bytes.len() - 4) as u64, "trailing checksum mismatch".to_string()));
    }

    let mut r = ByteReader { buf: body, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "bad magic, expected \"DOAM\"".to_string()));
    }
    let version = r.u16("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::format(4, format!("unsupported format version {version}")));
    }
    let wl_tag = r.u8("word length")?;
    let wl = WordLength::from_tag(wl_tag)
        .ok_or_else(|| Error::format(6, format!("unknown word-length tag {wl_tag}")))?;
    r.u8("reserved")?;
    let input_shape =
        [r.u16("input h")? as usize, r.u16("input w")? as usize, r.u16("input c")? as usize];
    let class_count = r.u16("class count")? as usize;
    let layer_count = r.u16("layer count")? as usize;

    match wl {
        WordLength::Dpfl | WordLength::Spfl => {
            let mut layers = Vec::with_capacity(layer_count);
            for i in 0..layer_count {
                let what = format!("layer {i}");
                let tag = r.u8(&what)?;
                layers.push(match tag {
                    TAG_CONV => {
                        let shape = vec![
                            r.u16(&what)? as usize,
                            r.u16(&what)? as usize,
                            r.u16(&what)? as usize,
                            r.u16(&what)? as usize,
                        ];
                        let bias_len = shape[3];
                        let (weight, bias) = float_payload(&mut r, shape, bias_len, wl, &what)?;
                        Layer::Conv2d { weight, bias }
                    }
                    TAG_RELU => Layer::Relu,
                    TAG_POOL => Layer::MaxPool2d {
                        pool_h: r.u16(&what)? as usize,
                        pool_w: r.u16(&what)? as usize,
                    },
                    TAG_FLATTEN => Layer::Flatten,
                    TAG_DENSE => {
                        let shape = vec![r.u32(&what)? as usize, r.u32(&what)? as usize];
                        let bias_len = shape[1];
                        let (weight, bias) = float_payload(&mut r, shape, bias_len, wl, &what)?;
                        Layer::Dense { weight, bias }
                    }
                    other => {
                        if other == TAG_SOFTMAX {
                            Layer::Softmax
                        } else {
                            return Err(Error::format(
                                (r.pos - 1) as u64,
                                format!("unknown layer tag {other}"),
                            ));
                        }
                    }
                });
            }
            let model = Model { input_shape, class_count, layers };
            model.validate().map_err(|e| Error::format(r.pos as u64, e.to_string()))?;
            Ok(SavedModel::Float { model, word_length: wl })
        }
        WordLength::Int8 => {
            let input = r.quant_params("input quant params")?;
            let mut layers = Vec::with_capacity(layer_count);
            for i in 0..layer_count {
                let what = format!("layer {i}");
                let tag = r.u8(&what)?;
                layers.push(match tag {
                    TAG_CONV => {
                        let shape = vec![
                            r.u16(&what)? as usize,
                            r.u16(&what)? as usize,
                            r.u16(&what)? as usize,
                            r.u16(&what)? as usize,
                        ];
                        let count: usize = shape.iter().product();
                        let weight_scale = r.f32(&what)?;
                        let data = r.i8_vec(count, &what)?;
                        let bias = r.i32_vec(shape[3], &what)?;
                        if r.u8(&what)? != 1 {
                            return Err(Error::format(
                                (r.pos - 1) as u64,
                                format!("conv layer {i} must carry output quant params"),
                            ));
                        }
                        let out = r.quant_params(&what)?;
                        QuantLayer::Conv2d {
                            weight: QTensor { shape, data },
                            weight_scale,
                            bias,
                            out,
                        }
                    }
                    TAG_POOL => QuantLayer::MaxPool2d {
                        pool_h: r.u16(&what)? as usize,
                        pool_w: r.u16(&what)? as usize,
                    },
                    TAG_FLATTEN => QuantLayer::Flatten,
                    TAG_DENSE => {
                        let shape = vec![r.u32(&what)? as usize, r.u32(&what)? as usize];
                        let count: usize = shape.iter().product();
                        let weight_scale = r.f32(&what)?;
                        let data = r.i8_vec(count, &what)?;
                        let bias = r.i32_vec(shape[1], &what)?;
                        let out = match r.u8(&what)? {
                            0 => None,
                            1 => Some(r.quant_params(&what)?),
                            other => {
                                return Err(Error::format(
                                    (r.pos - 1) as u64,
                                    format!("invalid out-params flag {other}"),
                                ))
                            }
                        };
                        QuantLayer::Dense { weight: QTensor { shape, data }, weight_scale, bias, out }
                    }
                    other => {
                        return Err(Error::format(
                            (r.pos - 1) as u64,
                            format!("unexpected layer tag {other} in an int8 file"),
                        ))
                    }
                });
            }
            Ok(SavedModel::Quantized(QuantizedModel { input_shape, class_count, input, layers }))
        }
    }
}

// ── Tests ────────────────────────────────────────────────────────────
