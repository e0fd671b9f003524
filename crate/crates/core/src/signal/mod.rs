//! Multichannel recordings and their short-time Fourier analysis.

mod fft;
mod io;

pub use fft::{direct_real_dft, Dft};
pub use io::{read_binary, read_recording, read_text, write_binary, BINARY_MAGIC};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// A channels × time matrix with its sampling rate and emotion label.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    data: Vec<f64>,
    n_channels: usize,
    n_samples: usize,
    pub sample_rate_hz: f64,
    pub label: String,
    pub subject_id: String,
    pub session_id: String,
    pub channel_names: Vec<String>,
}

impl Recording {
    /// Builds a recording from one sample vector per channel.
    pub fn new(channels: Vec<Vec<f64>>, sample_rate_hz: f64, label: impl Into<String>) -> Result<Self> {
        let n_channels = channels.len();
        if n_channels == 0 {
            return Err(Error::Validation("recording needs at least one channel".into()));
        }
        let n_samples = channels[0].len();
        if channels.iter().any(|c| c.len() != n_samples) {
            return Err(Error::Validation("channels have different lengths".into()));
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::Validation(format!("sample rate {sample_rate_hz} must be positive")));
        }
        let data: Vec<f64> = channels.into_iter().flatten().collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("recording contains NaN or infinite samples".into()));
        }
        Ok(Self {
            data,
            n_channels,
            n_samples,
            sample_rate_hz,
            label: label.into(),
            subject_id: String::new(),
            session_id: String::new(),
            channel_names: (0..n_channels).map(|c| format!("ch{c}")).collect(),
        })
    }

    /// Builds a recording from time-major rows (one row per time step,
    /// channels as columns).
    pub fn from_time_major(rows: &[Vec<f64>], sample_rate_hz: f64, label: impl Into<String>) -> Result<Self> {
        let n_channels = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_channels) {
            return Err(Error::Validation("rows have different channel counts".into()));
        }
        let channels = (0..n_channels).map(|c| rows.iter().map(|r| r[c]).collect()).collect();
        Self::new(channels, sample_rate_hz, label)
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.n_samples..(c + 1) * self.n_samples]
    }

    pub fn with_ids(mut self, subject: impl Into<String>, session: impl Into<String>) -> Self {
        self.subject_id = subject.into();
        self.session_id = session.into();
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Window {
    /// Periodic Hann, `0.5 - 0.5 cos(2πn/N)`.
    Hann,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

/// Complex STFT laid out frames × bins × channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    values: Vec<Complex64>,
    pub n_frames: usize,
    pub n_bins: usize,
    pub n_channels: usize,
    pub freq_resolution_hz: f64,
    pub hop: usize,
    pub wsize: usize,
}

impl Spectrogram {
    pub fn get(&self, frame: usize, bin: usize, channel: usize) -> Complex64 {
        self.values[(frame * self.n_bins + bin) * self.n_channels + channel]
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }
}

/// Real-valued frames × bins × channels array, usually STFT magnitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct Magnitudes {
    pub values: Vec<f64>,
    pub n_frames: usize,
    pub n_bins: usize,
    pub n_channels: usize,
    pub freq_resolution_hz: f64,
}

impl Magnitudes {
    pub fn get(&self, frame: usize, bin: usize, channel: usize) -> f64 {
        self.values[(frame * self.n_bins + bin) * self.n_channels + channel]
    }

    /// One frame as a bins × channels slice.
    pub fn frame(&self, frame: usize) -> &[f64] {
        let len = self.n_bins * self.n_channels;
        &self.values[frame * len..(frame + 1) * len]
    }
}

/// Number of frames for `n` samples: every full window plus one
/// zero-padded tail frame when the hop grid leaves samples uncovered.
pub fn frame_count(n: usize, wsize: usize, hop: usize) -> usize {
    if n < wsize {
        return 0;
    }
    let full = (n - wsize) / hop + 1;
    if !(n - wsize).is_multiple_of(hop) {
        full + 1
    } else {
        full
    }
}

/// Hann-windowed STFT.
pub fn stft(rec: &Recording, wsize: usize, hop: usize) -> Result<Spectrogram> {
    stft_with_window(rec, wsize, hop, Window::Hann)
}

pub fn stft_with_window(rec: &Recording, wsize: usize, hop: usize, window: Window) -> Result<Spectrogram> {
    if wsize < 4 || !wsize.is_multiple_of(2) {
        return Err(Error::Validation(format!("window size {wsize} must be even and at least 4")));
    }
    if hop == 0 || hop > wsize {
        return Err(Error::Validation(format!("hop {hop} must be in 1..={wsize}")));
    }
    if wsize > rec.n_samples() {
        return Err(Error::Validation(format!(
            "window size {wsize} exceeds signal length {}",
            rec.n_samples()
        )));
    }
    let n_frames = frame_count(rec.n_samples(), wsize, hop);
    let n_bins = wsize / 2 + 1;
    let n_ch = rec.n_channels();
    let win = window.coefficients(wsize);
    let dft = Dft::new(wsize);
    let mut values = vec![Complex64::new(0.0, 0.0); n_frames * n_bins * n_ch];
    let mut buf = vec![Complex64::new(0.0, 0.0); wsize];
    for c in 0..n_ch {
        let x = rec.channel(c);
        for f in 0..n_frames {
            let start = f * hop;
            for (i, slot) in buf.iter_mut().enumerate() {
                let v = x.get(start + i).copied().unwrap_or(0.0);
                *slot = Complex64::new(v * win[i], 0.0);
            }
            dft.forward(&mut buf);
            for (b, &z) in buf[..n_bins].iter().enumerate() {
                values[(f * n_bins + b) * n_ch + c] = z;
            }
        }
    }
    Ok(Spectrogram {
        values,
        n_frames,
        n_bins,
        n_channels: n_ch,
        freq_resolution_hz: rec.sample_rate_hz / wsize as f64,
        hop,
        wsize,
    })
}

/// Elementwise modulus `sqrt(re² + im²)`.
pub fn magnitude(spec: &Spectrogram) -> Magnitudes {
    Magnitudes {
        values: spec.values.iter().map(|z| z.norm()).collect(),
        n_frames: spec.n_frames,
        n_bins: spec.n_bins,
        n_channels: spec.n_channels,
        freq_resolution_hz: spec.freq_resolution_hz,
    }
}

/// Largest power-of-two window whose bins up to `cut_hz` fit in
/// `image_height` rows.
pub fn default_wsize(sample_rate_hz: f64, cut_hz: f64, image_height: usize) -> usize {
    let limit = ((image_height.saturating_sub(1)) as f64 * sample_rate_hz / cut_hz).floor() as usize;
    let mut w = 4;
    while w * 2 <= limit {
        w *= 2;
    }
    w
}
