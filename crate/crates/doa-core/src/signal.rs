//! Wideband array signal synthesis.
//!
//! Models an L-antenna uniform linear array receiving narrowband sources
//! inside one occupied band of a wideband grid. Each antenna's RF input is
//! mixed to baseband with a per-antenna gain, brick-wall low-pass filtered at
//! half the band width, and sampled at the band rate, then AWGN is injected
//! at a target SNR. Synthesis runs at 8x the output rate and the filter is
//! applied in the frequency domain on the cyclic record, so the inter-antenna
//! relations of the narrowband model hold exactly (no filter transients).

use std::cell::RefCell;

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::seed::{stream_rng, Domain};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Oversampling factor used during synthesis, before decimation to the band
/// rate.
const OVERSAMPLE: usize = 8;

/// Output samples per QPSK symbol (symbol rate = band_width / 8).
const SAMPLES_PER_SYMBOL: usize = 8;

// ── Geometry ─────────────────────────────────────────────────────────

/// Uniform linear array: L elements on a line with constant spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    pub antenna_count: usize,
    pub element_spacing_m: f64,
    pub reference_carrier_hz: f64,
}

impl ArrayGeometry {
    pub fn new(antenna_count: usize, element_spacing_m: f64, reference_carrier_hz: f64) -> Result<Self> {
        if antenna_count < 2 {
            return Err(Error::argument(format!("antenna_count must be >= 2, got {antenna_count}")));
        }
        if !(element_spacing_m > 0.0) {
            return Err(Error::argument(format!("element_spacing must be > 0, got {element_spacing_m}")));
        }
        if !(reference_carrier_hz > 0.0) {
            return Err(Error::argument("reference_carrier must be > 0".to_string()));
        }
        Ok(Self { antenna_count, element_spacing_m, reference_carrier_hz })
    }

    /// Standard design point: element spacing of half a wavelength at the
    /// reference carrier.
    pub fn half_wavelength(antenna_count: usize, reference_carrier_hz: f64) -> Result<Self> {
        let spacing = SPEED_OF_LIGHT / reference_carrier_hz / 2.0;
        Self::new(antenna_count, spacing, reference_carrier_hz)
    }

    /// Far-field propagation delay at element `element_index` (1-based,
    /// element 1 is the phase reference) for a source arriving from
    /// `angle_deg` off broadside.
    pub fn element_delay(&self, element_index: usize, angle_deg: f64) -> Result<f64> {
        if element_index < 1 || element_index > self.antenna_count {
            return Err(Error::argument(format!(
                "element index {element_index} out of range 1..={}",
                self.antenna_count
            )));
        }
        let sin_theta = angle_deg.to_radians().sin();
        Ok((element_index - 1) as f64 * self.element_spacing_m / SPEED_OF_LIGHT * sin_theta)
    }

    /// Per-element phase response for a (frequency, angle) pair. Entry `l`
    /// is exp(j 2π f τ_l(θ)); entry 0 is always 1+0j.
    pub fn steering_vector(&self, frequency_hz: f64, angle_deg: f64) -> Result<Vec<Complex64>> {
        if !(frequency_hz > 0.0) {
            return Err(Error::argument(format!("frequency must be > 0, got {frequency_hz}")));
        }
        (1..=self.antenna_count)
            .map(|l| {
                let tau = self.element_delay(l, angle_deg)?;
                Ok(Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * frequency_hz * tau))
            })
            .collect()
    }
}

// ── Sources and the wideband grid ────────────────────────────────────

/// Amplitude envelope of a narrowband source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Envelope {
    /// Constant unit envelope; the source is a pure carrier tone.
    Tone,
    /// Unit-power random QPSK symbol stream at one eighth of the band rate.
    Qpsk,
}

/// One narrowband emitter: carrier, arrival angle, amplitude and envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    pub carrier_hz: f64,
    pub doa_deg: f64,
    pub amplitude: f64,
    pub envelope: Envelope,
    /// 1-based index of the wideband grid band containing `carrier_hz`.
    pub band_index: usize,
}

impl SourceSpec {
    pub fn tone(carrier_hz: f64, doa_deg: f64, band_index: usize) -> Self {
        Self { carrier_hz, doa_deg, amplitude: 1.0, envelope: Envelope::Tone, band_index }
    }

    pub fn qpsk(carrier_hz: f64, doa_deg: f64, band_index: usize) -> Self {
        Self { carrier_hz, doa_deg, amplitude: 1.0, envelope: Envelope::Qpsk, band_index }
    }
}

/// N-band grid with per-(antenna, band) real mixing gains. Band `b`
/// (1-based) is centered at `reference_carrier + (b-1) * band_width`.
#[derive(Debug, Clone, PartialEq)]
pub struct WidebandGrid {
    pub band_count: usize,
    pub band_width_hz: f64,
    /// Row-major L x N matrix of mixing gains.
    pub mixing: Vec<f64>,
    /// 1-based indices of occupied bands; this artifact supports exactly one.
    pub occupied_bands: Vec<usize>,
}

impl WidebandGrid {
    /// Grid with all mixing gains equal to 1 (analytic test configuration).
    pub fn unit(antenna_count: usize, band_count: usize, band_width_hz: f64, occupied: usize) -> Result<Self> {
        Self::with_mixing(band_count, band_width_hz, vec![1.0; antenna_count * band_count], vec![occupied])
    }

    /// Grid whose mixing gains are standard-normal draws from `seed`
    /// (element-major order), frozen for the lifetime of the grid.
    pub fn seeded(
        antenna_count: usize,
        band_count: usize,
        band_width_hz: f64,
        occupied: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = stream_rng(seed, Domain::Grid, 0);
        let mixing = (0..antenna_count * band_count).map(|_| rng.sample(StandardNormal)).collect();
        Self::with_mixing(band_count, band_width_hz, mixing, vec![occupied])
    }

    pub fn with_mixing(
        band_count: usize,
        band_width_hz: f64,
        mixing: Vec<f64>,
        occupied_bands: Vec<usize>,
    ) -> Result<Self> {
        if band_count == 0 {
            return Err(Error::argument("band_count must be >= 1".to_string()));
        }
        if !(band_width_hz > 0.0) {
            return Err(Error::argument("band_width must be > 0".to_string()));
        }
        if mixing.is_empty() || mixing.len() % band_count != 0 {
            return Err(Error::argument(format!(
                "mixing matrix length {} is not a multiple of band_count {}",
                mixing.len(),
                band_count
            )));
        }
        if occupied_bands.iter().any(|&b| b < 1 || b > band_count) {
            return Err(Error::argument("occupied band index out of range".to_string()));
        }
        Ok(Self { band_count, band_width_hz, mixing, occupied_bands })
    }

    pub fn antenna_count(&self) -> usize {
        self.mixing.len() / self.band_count
    }

    /// Mixing gain for antenna `l` (0-based) and band `b` (1-based).
    pub fn mixing_gain(&self, antenna: usize, band: usize) -> f64 {
        self.mixing[antenna * self.band_count + (band - 1)]
    }

    /// Center frequency of band `b` (1-based) relative to the geometry's
    /// reference carrier.
    pub fn band_center_hz(&self, geometry: &ArrayGeometry, band: usize) -> f64 {
        geometry.reference_carrier_hz + (band - 1) as f64 * self.band_width_hz
    }
}

// ── Observations ─────────────────────────────────────────────────────

/// Complex baseband snapshot matrix captured at the array: L rows of d
/// samples at the band rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub antenna_count: usize,
    pub samples_per_antenna: usize,
    pub sample_rate_hz: f64,
    /// Row-major L x d complex samples.
    pub samples: Vec<Complex64>,
    pub true_label: Option<u16>,
    /// SNR the observation was noised at; `None` for noiseless data.
    pub snr_db: Option<f64>,
}

impl Observation {
    pub fn row(&self, antenna: usize) -> &[Complex64] {
        let d = self.samples_per_antenna;
        &self.samples[antenna * d..(antenna + 1) * d]
    }
}

/// AWGN injection parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub snr_db: f64,
    pub rng_seed: u64,
}

// ── Operations ───────────────────────────────────────────────────────

/// Mean squared magnitude over all entries of the snapshot matrix.
pub fn measure_power(obs: &Observation) -> f64 {
    let n = obs.samples.len();
    if n == 0 {
        return 0.0;
    }
    obs.samples.iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64
}

/// Synthesize the noiseless ADC output for `sources` impinging on the array:
/// the occupied band's content shifted to baseband, scaled by the antenna's
/// mixing gain, and phased by the steering response at the source carrier.
pub fn synthesize_observation(
    sources: &[SourceSpec],
    grid: &WidebandGrid,
    geometry: &ArrayGeometry,
    samples_per_antenna: usize,
    rng_seed: u64,
) -> Result<Observation> {
    if sources.is_empty() {
        return Err(Error::argument("empty source list".to_string()));
    }
    if grid.occupied_bands.len() > 1 {
        return Err(Error::Unsupported(format!(
            "{} occupied bands; exactly one is supported",
            grid.occupied_bands.len()
        )));
    }
    let busy = *grid
        .occupied_bands
        .first()
        .ok_or_else(|| Error::argument("no occupied band".to_string()))?;
    if samples_per_antenna < 16 {
        return Err(Error::argument(format!(
            "samples_per_antenna must be >= 16, got {samples_per_antenna}"
        )));
    }
    if grid.antenna_count() != geometry.antenna_count {
        return Err(Error::argument(format!(
            "grid is sized for {} antennas, geometry has {}",
            grid.antenna_count(),
            geometry.antenna_count
        )));
    }

    let l = geometry.antenna_count;
    let d = samples_per_antenna;
    let band_center = grid.band_center_hz(geometry, busy);
    let half_band = grid.band_width_hz / 2.0;

    let mut samples = vec![Complex64::new(0.0, 0.0); l * d];
    for (source_index, src) in sources.iter().enumerate() {
        if src.band_index != busy {
            return Err(Error::argument(format!(
                "source {source_index} sits in band {} but band {busy} is occupied",
                src.band_index
            )));
        }
        let offset = src.carrier_hz - band_center;
        if offset.abs() > half_band {
            return Err(Error::argument(format!(
                "source {source_index} carrier {} Hz is outside the occupied band",
                src.carrier_hz
            )));
        }
        if !src.amplitude.is_finite() {
            return Err(Error::argument("source amplitude must be finite".to_string()));
        }

        let mut rng = stream_rng(rng_seed, Domain::Envelope, source_index as u64);
        let baseband = band_limited_baseband(src, offset, grid.band_width_hz, d, &mut rng);
        let steering = geometry.steering_vector(src.carrier_hz, src.doa_deg)?;
        for (antenna, phase) in steering.iter().enumerate() {
            let gain = grid.mixing_gain(antenna, busy) * phase;
            let row = &mut samples[antenna * d..(antenna + 1) * d];
            for (out, s) in row.iter_mut().zip(&baseband) {
                *out += gain * s;
            }
        }
    }

    Ok(Observation {
        antenna_count: l,
        samples_per_antenna: d,
        sample_rate_hz: grid.band_width_hz,
        samples,
        true_label: None,
        snr_db: None,
    })
}

/// Add i.i.d. circular complex Gaussian noise scaled so the ratio of the
/// measured input power to the injected noise power equals `snr_db`.
/// `snr_db = +inf` is the noiseless sentinel and returns the input unchanged.
pub fn add_awgn(obs: &Observation, noise: &NoiseSpec) -> Result<Observation> {
    if noise.snr_db.is_nan() || noise.snr_db == f64::NEG_INFINITY {
        return Err(Error::argument(format!("snr_db must be finite or +inf, got {}", noise.snr_db)));
    }
    if noise.snr_db == f64::INFINITY {
        return Ok(obs.clone());
    }
    let signal_power = measure_power(obs);
    if signal_power <= 0.0 {
        return Err(Error::DegenerateInput(
            "zero-power signal: SNR is undefined".to_string(),
        ));
    }
    let noise_power = signal_power / 10f64.powf(noise.snr_db / 10.0);
    let sigma = (noise_power / 2.0).sqrt();

    let mut rng = ChaCha8Rng::seed_from_u64(noise.rng_seed);
    let mut out = obs.clone();
    for z in &mut out.samples {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *z += Complex64::new(sigma * re, sigma * im);
    }
    out.snr_db = Some(noise.snr_db);
    Ok(out)
}

// ── Baseband synthesis internals ─────────────────────────────────────

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    PLANNER.with(|p| {
        let mut planner = p.borrow_mut();
        let fft = if inverse {
            planner.plan_fft_inverse(buf.len())
        } else {
            planner.plan_fft_forward(buf.len())
        };
        fft.process(buf);
    });
}

/// Band content after mixing to baseband: envelope times the residual
/// carrier offset tone, synthesized at 8x the band rate, brick-wall filtered
/// at half the band width, and decimated to `d` samples at the band rate.
/// The filter acts on the cyclic spectrum, so no transient samples exist.
fn band_limited_baseband(
    src: &SourceSpec,
    offset_hz: f64,
    band_width_hz: f64,
    d: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Complex64> {
    let n_os = OVERSAMPLE * d;
    let dt = 1.0 / (OVERSAMPLE as f64 * band_width_hz);

    let mut buf = Vec::with_capacity(n_os);
    match src.envelope {
        Envelope::Tone => {
            for m in 0..n_os {
                let phase = 2.0 * std::f64::consts::PI * offset_hz * m as f64 * dt;
                buf.push(src.amplitude * Complex64::from_polar(1.0, phase));
            }
        }
        Envelope::Qpsk => {
            let os_per_symbol = OVERSAMPLE * SAMPLES_PER_SYMBOL;
            let n_symbols = n_os.div_ceil(os_per_symbol);
            let scale = std::f64::consts::FRAC_1_SQRT_2;
            let symbols: Vec<Complex64> = (0..n_symbols)
                .map(|_| {
                    let bits: u8 = rng.random_range(0..4);
                    let re = if bits & 1 == 0 { scale } else { -scale };
                    let im = if bits & 2 == 0 { scale } else { -scale };
                    Complex64::new(re, im)
                })
                .collect();
            for m in 0..n_os {
                let phase = 2.0 * std::f64::consts::PI * offset_hz * m as f64 * dt;
                buf.push(src.amplitude * symbols[m / os_per_symbol] * Complex64::from_polar(1.0, phase));
            }
        }
    }

    fft_in_place(&mut buf, false);

    // Gather the d baseband bins (|f| <= band_width/2) from the oversampled
    // spectrum; dropping everything else is the brick-wall filter, and
    // re-synthesizing from d bins is the decimation to the band rate.
    let half = (d - 1) / 2;
    let mut dec = Vec::with_capacity(d);
    for k_out in 0..d {
        let signed = if k_out <= half { k_out as i64 } else { k_out as i64 - d as i64 };
        let k_os = signed.rem_euclid(n_os as i64) as usize;
        dec.push(buf[k_os] / OVERSAMPLE as f64);
    }
    fft_in_place(&mut dec, true);
    for z in &mut dec {
        *z /= d as f64;
    }
    dec
}

// ── Tests ────────────────────────────────────────────────────────────
