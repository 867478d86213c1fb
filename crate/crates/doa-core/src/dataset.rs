//! Labeled DoA classification datasets.
//!
//! A dataset is K classes of N observations each, all synthesized from one
//! seeded wideband grid at one SNR. Class `k` maps to a single arrival angle
//! (no intra-class jitter): `k * R` degrees over the full 360-degree range,
//! or `-A/2 + k * R` when a restricted range `A` is requested, which centers
//! the classes on the broadside span where the array response is
//! unambiguous. Sample data is rounded to f32 at generation time so the
//! on-disk container round-trips bit-exactly.
//!
//! Container layout (little-endian), file extension free-form:
//!
//! ```text
//! "DOAF"  u16 version   -- magic + format version
//! 32-byte header: L u16, K u16, R f32, A f32, d u32, N u32, snr f32, seed u64
//! K*N records: label u16, split u8, pad u8, 2*L*d f32 samples, crc32 u32
//! ```
//!
//! Samples are antenna-major, real/imag interleaved per sample. Each
//! record's CRC32 covers its bytes from the label through the last sample.
//! A `<file>.manifest` text sidecar mirrors the header as key=value lines.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;
use crate::seed::{stream_rng, Domain};
use crate::signal::{
    add_awgn, synthesize_observation, ArrayGeometry, NoiseSpec, Observation, SourceSpec,
    WidebandGrid,
};

/// Wideband grid defaults shared by every dataset.
pub const BAND_COUNT: usize = 14;
pub const BAND_WIDTH_HZ: f64 = 20.0e6;
pub const REFERENCE_CARRIER_HZ: f64 = 1.0e9;
/// Band carrying the active transmission. Band 1 is centered on the
/// reference carrier, the array's half-wavelength design point.
pub const OCCUPIED_BAND: usize = 1;

const MAGIC: &[u8; 4] = b"DOAF";
const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 32;

// ── Parameters and the dataset type ──────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetParams {
    pub antenna_count: usize,
    pub resolution_deg: f64,
    pub angle_range_deg: f64,
    /// Target SNR in dB; `f64::INFINITY` generates noiseless data.
    pub snr_db: f64,
    pub observations_per_class: usize,
    pub samples_per_observation: usize,
    pub master_seed: u64,
}

impl Default for DatasetParams {
    fn default() -> Self {
        Self {
            antenna_count: 2,
            resolution_deg: 45.0,
            angle_range_deg: 360.0,
            snr_db: 10.0,
            observations_per_class: 500,
            samples_per_observation: 128,
            master_seed: 0,
        }
    }
}

impl DatasetParams {
    /// Number of classes `K = A / R`; errors unless the ratio is an integer.
    pub fn class_count(&self) -> Result<usize> {
        if !(self.resolution_deg > 0.0) || !(self.angle_range_deg > 0.0) {
            return Err(Error::argument("resolution and angle range must be > 0".to_string()));
        }
        let k = self.angle_range_deg / self.resolution_deg;
        if (k - k.round()).abs() > 1e-9 || k.round() < 1.0 {
            return Err(Error::argument(format!(
                "A/R not integer: {} / {} = {k}",
                self.angle_range_deg, self.resolution_deg
            )));
        }
        Ok(k.round() as usize)
    }

    /// Angle of class 0. Zero over the full circle; `-A/2` for restricted
    /// ranges so the classes sit on the unambiguous broadside span.
    pub fn angle_offset_deg(&self) -> f64 {
        if self.angle_range_deg >= 360.0 {
            0.0
        } else {
            -self.angle_range_deg / 2.0
        }
    }

    pub fn class_angle_deg(&self, class: usize) -> f64 {
        self.angle_offset_deg() + class as f64 * self.resolution_deg
    }

    /// All class angles in label order.
    pub fn class_angles(&self) -> Result<Vec<f64>> {
        Ok((0..self.class_count()?).map(|k| self.class_angle_deg(k)).collect())
    }

    pub fn geometry(&self) -> Result<ArrayGeometry> {
        ArrayGeometry::half_wavelength(self.antenna_count, REFERENCE_CARRIER_HZ)
    }

    /// The dataset's frozen mixing grid, re-derivable from the master seed.
    pub fn grid(&self) -> Result<WidebandGrid> {
        WidebandGrid::seeded(self.antenna_count, BAND_COUNT, BAND_WIDTH_HZ, OCCUPIED_BAND, self.master_seed)
    }

    /// Known carrier of the active transmission (center of the occupied band).
    pub fn carrier_hz(&self) -> f64 {
        REFERENCE_CARRIER_HZ + (OCCUPIED_BAND - 1) as f64 * BAND_WIDTH_HZ
    }

    fn validate(&self) -> Result<usize> {
        let k = self.class_count()?;
        if !(2..=6).contains(&self.antenna_count) {
            return Err(Error::argument(format!(
                "antenna_count must be in 2..=6, got {}",
                self.antenna_count
            )));
        }
        if self.observations_per_class < 10 {
            return Err(Error::argument(format!(
                "observations_per_class must be >= 10, got {}",
                self.observations_per_class
            )));
        }
        if self.samples_per_observation < 16 {
            return Err(Error::argument(format!(
                "samples_per_observation must be >= 16, got {}",
                self.samples_per_observation
            )));
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(Error::argument("snr_db must be finite or +inf".to_string()));
        }
        if k > u16::MAX as usize {
            return Err(Error::argument(format!("class count {k} exceeds u16 label range")));
        }
        Ok(k)
    }
}

/// Which split an observation belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn tag(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Split> {
        match tag {
            0 => Some(Split::Train),
            1 => Some(Split::Val),
            2 => Some(Split::Test),
            _ => None,
        }
    }
}

/// Generated observations in class-major order plus optional split tags.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub params: DatasetParams,
    pub observations: Vec<Observation>,
    pub split_tags: Vec<Option<Split>>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Indices carrying the given split tag, in stored order.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.split_tags
            .iter()
            .enumerate()
            .filter_map(|(i, t)| (*t == Some(split)).then_some(i))
            .collect()
    }

    /// Pack one split into a real tensor batch.
    pub fn tensor_for_split(&self, split: Split) -> Result<RealTensorBatch> {
        let idx = self.split_indices(split);
        if idx.is_empty() {
            return Err(Error::argument(format!("dataset has no {split:?} observations")));
        }
        let obs: Vec<&Observation> = idx.iter().map(|&i| &self.observations[i]).collect();
        to_real_tensor(&obs)
    }
}

// ── Generation and splitting ─────────────────────────────────────────

fn snap_to_f32(z: Complex64) -> Complex64 {
    Complex64::new(z.re as f32 as f64, z.im as f32 as f64)
}

/// Generate all K*N observations for `params`, untagged, class-major,
/// deterministic in the master seed.
pub fn generate_dataset(params: &DatasetParams) -> Result<LabeledDataset> {
    let k = params.validate()?;
    let n = params.observations_per_class;
    let geometry = params.geometry()?;
    let grid = params.grid()?;
    let carrier = params.carrier_hz();

    let observations: Vec<Observation> = (0..k * n)
        .into_par_iter()
        .map(|g| -> Result<Observation> {
            let class = g / n;
            let source = SourceSpec::qpsk(carrier, params.class_angle_deg(class), OCCUPIED_BAND);
            let mut obs = synthesize_observation(
                &[source],
                &grid,
                &geometry,
                params.samples_per_observation,
                crate::seed::derive_seed(params.master_seed, Domain::Envelope, g as u64),
            )?;
            if params.snr_db.is_finite() {
                obs = add_awgn(
                    &obs,
                    &NoiseSpec {
                        snr_db: params.snr_db,
                        rng_seed: crate::seed::derive_seed(params.master_seed, Domain::Noise, g as u64),
                    },
                )?;
            }
            obs.true_label = Some(class as u16);
            for z in &mut obs.samples {
                *z = snap_to_f32(*z);
            }
            Ok(obs)
        })
        .collect::<Result<_>>()?;

    Ok(LabeledDataset { params: params.clone(), observations, split_tags: vec![None; k * n] })
}

/// Assign stratified split tags: per class, 20% test, then 20% of the
/// remainder as validation, rest train, via a seeded permutation.
pub fn split(mut ds: LabeledDataset) -> Result<LabeledDataset> {
    if ds.split_tags.iter().any(|t| t.is_some()) {
        return Err(Error::argument("dataset is already split".to_string()));
    }
    let k = ds.params.class_count()?;
    let n = ds.params.observations_per_class;
    if ds.observations.len() != k * n {
        return Err(Error::argument(format!(
            "dataset holds {} observations, expected {}",
            ds.observations.len(),
            k * n
        )));
    }
    if n < 5 {
        return Err(Error::argument(format!("need >= 5 samples per class to split, got {n}")));
    }
    let n_test = ((n as f64) * 0.2).round() as usize;
    let n_val = (((n - n_test) as f64) * 0.2).round() as usize;

    for class in 0..k {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = stream_rng(ds.params.master_seed, Domain::SplitPermutation, class as u64);
        order.shuffle(&mut rng);
        for (rank, local) in order.into_iter().enumerate() {
            let tag = if rank < n_test {
                Split::Test
            } else if rank < n_test + n_val {
                Split::Val
            } else {
                Split::Train
            };
            ds.split_tags[class * n + local] = Some(tag);
        }
    }
    Ok(ds)
}

// ── Real tensor packing ──────────────────────────────────────────────

/// How complex rows map onto the real input plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorLayout {
    /// Rows 0..L are the real parts, rows L..2L the imaginary parts.
    RealRowsThenImagRows,
}

/// Batch of observations as a real (batch, 2L, d, 1) tensor plus labels.
#[derive(Debug, Clone)]
pub struct RealTensorBatch {
    pub data: Tensor<f64>,
    pub labels: Vec<u16>,
    pub layout: TensorLayout,
}

impl RealTensorBatch {
    pub fn batch_size(&self) -> usize {
        self.data.shape()[0]
    }

    /// Inverse of the packing: the complex L x d matrix of one sample.
    pub fn reconstruct_complex(&self, sample: usize) -> Vec<Complex64> {
        let shape = self.data.shape();
        let (rows2, d) = (shape[1], shape[2]);
        let l = rows2 / 2;
        let plane = &self.data.as_slice()[sample * rows2 * d..(sample + 1) * rows2 * d];
        let mut out = Vec::with_capacity(l * d);
        for antenna in 0..l {
            for t in 0..d {
                out.push(Complex64::new(plane[antenna * d + t], plane[(l + antenna) * d + t]));
            }
        }
        out
    }
}

/// Stack real parts above imaginary parts: (batch, 2L, d, 1).
pub fn to_real_tensor(batch: &[&Observation]) -> Result<RealTensorBatch> {
    let first = batch.first().ok_or_else(|| Error::argument("empty observation batch".to_string()))?;
    let l = first.antenna_count;
    let d = first.samples_per_antenna;
    let mut data = Vec::with_capacity(batch.len() * 2 * l * d);
    let mut labels = Vec::with_capacity(batch.len());
    for (i, obs) in batch.iter().enumerate() {
        if obs.antenna_count != l || obs.samples_per_antenna != d {
            return Err(Error::argument(format!(
                "ragged batch: observation {i} is {}x{}, expected {l}x{d}",
                obs.antenna_count, obs.samples_per_antenna
            )));
        }
        labels.push(
            obs.true_label
                .ok_or_else(|| Error::argument(format!("observation {i} has no label")))?,
        );
        for antenna in 0..l {
            data.extend(obs.row(antenna).iter().map(|z| z.re));
        }
        for antenna in 0..l {
            data.extend(obs.row(antenna).iter().map(|z| z.im));
        }
    }
    Ok(RealTensorBatch {
        data: Tensor::new(vec![batch.len(), 2 * l, d, 1], data)?,
        labels,
        layout: TensorLayout::RealRowsThenImagRows,
    })
}

// ── Container I/O ────────────────────────────────────────────────────

fn header_bytes(params: &DatasetParams, k: usize) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[0..2].copy_from_slice(&(params.antenna_count as u16).to_le_bytes());
    h[2..4].copy_from_slice(&(k as u16).to_le_bytes());
    h[4..8].copy_from_slice(&(params.resolution_deg as f32).to_le_bytes());
    h[8..12].copy_from_slice(&(params.angle_range_deg as f32).to_le_bytes());
    h[12..16].copy_from_slice(&(params.samples_per_observation as u32).to_le_bytes());
    h[16..20].copy_from_slice(&(params.observations_per_class as u32).to_le_bytes());
    h[20..24].copy_from_slice(&(params.snr_db as f32).to_le_bytes());
    h[24..32].copy_from_slice(&params.master_seed.to_le_bytes());
    h
}

fn record_bytes(obs: &Observation, tag: Split) -> Vec<u8> {
    let mut rec = Vec::with_capacity(4 + obs.samples.len() * 8);
    rec.extend_from_slice(&obs.true_label.unwrap_or(0).to_le_bytes());
    rec.push(tag.tag());
    rec.push(0);
    for z in &obs.samples {
        rec.extend_from_slice(&(z.re as f32).to_le_bytes());
        rec.extend_from_slice(&(z.im as f32).to_le_bytes());
    }
    rec
}

/// Write the dataset container plus its `.manifest` sidecar. Requires every
/// observation to carry a split tag.
pub fn write_dataset(ds: &LabeledDataset, path: &Path) -> Result<()> {
    let k = ds.params.class_count()?;
    let mut file = BufWriter::new(File::create(path)?);
    file.write_all(MAGIC)?;
    file.write_all(&FORMAT_VERSION.to_le_bytes())?;
    file.write_all(&header_bytes(&ds.params, k))?;
    for (i, obs) in ds.observations.iter().enumerate() {
        let tag = ds.split_tags[i]
            .ok_or_else(|| Error::argument(format!("observation {i} has no split tag")))?;
        let rec = record_bytes(obs, tag);
        let mut hasher = crc32fast::Hasher::new();
        hasher.update(&rec);
        file.write_all(&rec)?;
        file.write_all(&hasher.finalize().to_le_bytes())?;
    }
    file.flush()?;

    let manifest = format!(
        "format=DOAF\nversion={FORMAT_VERSION}\nantenna_count={}\nclass_count={k}\n\
         resolution_deg={}\nangle_range_deg={}\nangle_offset_deg={}\nsamples_per_observation={}\n\
         observations_per_class={}\nsnr_db={}\nmaster_seed={}\nrecords={}\n",
        ds.params.antenna_count,
        ds.params.resolution_deg,
        ds.params.angle_range_deg,
        ds.params.angle_offset_deg(),
        ds.params.samples_per_observation,
        ds.params.observations_per_class,
        ds.params.snr_db,
        ds.params.master_seed,
        ds.observations.len(),
    );
    std::fs::write(manifest_path(path), manifest)?;
    Ok(())
}

/// Sidecar manifest path for a dataset file.
pub fn manifest_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.as_os_str().to_os_string();
    name.push(".manifest");
    std::path::PathBuf::from(name)
}

struct CountingReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> CountingReader<R> {
    fn read_exact_at(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let start = self.offset;
        self.inner
            .read_exact(buf)
            .map_err(|_| Error::format(start, format!("truncated while reading {what}")))?;
        self.offset += buf.len() as u64;
        Ok(())
    }
}

/// Read a dataset container written by [`write_dataset`].
pub fn read_dataset(path: &Path) -> Result<LabeledDataset> {
    let mut r = CountingReader { inner: BufReader::new(File::open(path)?), offset: 0 };

    let mut magic = [0u8; 4];
    r.read_exact_at(&mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}, expected \"DOAF\"")));
    }
    let mut ver = [0u8; 2];
    r.read_exact_at(&mut ver, "version")?;
    let version = u16::from_le_bytes(ver);
    if version != FORMAT_VERSION {
        return Err(Error::format(4, format!("unsupported format version {version}")));
    }
    let mut h = [0u8; HEADER_LEN];
    r.read_exact_at(&mut h, "header")?;
    let antenna_count = u16::from_le_bytes([h[0], h[1]]) as usize;
    let k_stored = u16::from_le_bytes([h[2], h[3]]) as usize;
    let resolution = f32::from_le_bytes([h[4], h[5], h[6], h[7]]) as f64;
    let angle_range = f32::from_le_bytes([h[8], h[9], h[10], h[11]]) as f64;
    let d = u32::from_le_bytes([h[12], h[13], h[14], h[15]]) as usize;
    let n = u32::from_le_bytes([h[16], h[17], h[18], h[19]]) as usize;
    let snr = f32::from_le_bytes([h[20], h[21], h[22], h[23]]) as f64;
    let master_seed = u64::from_le_bytes(h[24..32].try_into().unwrap());

    let params = DatasetParams {
        antenna_count,
        resolution_deg: resolution,
        angle_range_deg: angle_range,
        snr_db: snr,
        observations_per_class: n,
        samples_per_observation: d,
        master_seed,
    };
    let k = params
        .class_count()
        .map_err(|e| Error::format(6, format!("inconsistent header: {e}")))?;
    if k != k_stored {
        return Err(Error::format(8, format!("header claims {k_stored} classes, A/R gives {k}")));
    }

    let mut observations = Vec::with_capacity(k * n);
    let mut split_tags = Vec::with_capacity(k * n);
    let payload = 4 + 8 * antenna_count * d;
    let mut rec = vec![0u8; payload];
    for record in 0..k * n {
        let rec_offset = r.offset;
        r.read_exact_at(&mut rec, &format!("record {record}"))?;
        let mut crc = [0u8; 4];
        r.read_exact_at(&mut crc, &format!("record {record} checksum"))?;
        let mut hasher = crc32fast::Hasher::new();
        hasher.update(&rec);
        if hasher.finalize() != u32::from_le_bytes(crc) {
            return Err(Error::format(rec_offset, format!("record {record} checksum mismatch")));
        }
        let label = u16::from_le_bytes([rec[0], rec[1]]);
        if label as usize >= k {
            return Err(Error::format(rec_offset, format!("record {record} label {label} >= K={k}")));
        }
        let tag = Split::from_tag(rec[2]).ok_or_else(|| {
            Error::format(rec_offset + 2, format!("record {record} has invalid split tag {}", rec[2]))
        })?;
        let mut samples = Vec::with_capacity(antenna_count * d);
        for s in 0..antenna_count * d {
            let base = 4 + 8 * s;
            let re = f32::from_le_bytes(rec[base..base + 4].try_into().unwrap()) as f64;
            let im = f32::from_le_bytes(rec[base + 4..base + 8].try_into().unwrap()) as f64;
            samples.push(Complex64::new(re, im));
        }
        observations.push(Observation {
            antenna_count,
            samples_per_antenna: d,
            sample_rate_hz: BAND_WIDTH_HZ,
            samples,
            true_label: Some(label),
            snr_db: snr.is_finite().then_some(snr),
        });
        split_tags.push(Some(tag));
    }

    Ok(LabeledDataset { params, observations, split_tags })
}

// ── Tests ────────────────────────────────────────────────────────────
