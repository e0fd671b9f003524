//! Electrode-frequency distribution maps.
//!
//! One map per STFT frame: bins above the cut frequency are dropped, the
//! frame is divided by its own maximum, zero-padded to a square image,
//! flipped so the highest retained frequency is on top, and quantized to
//! 8 bits with round-half-up. Frequency 0 lands on the bottom row and
//! channel 0 on column 0; padding fills the top rows and right columns.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::codec::Cursor;
use crate::error::{Error, Result};
use crate::signal::{default_wsize, magnitude, stft, Magnitudes, Recording};
use crate::tensor::Tensor;

pub const DATASET_MAGIC: &[u8; 4] = b"EFDM";
pub const DATASET_VERSION: u16 = 1;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EfdmMeta {
    pub subject: String,
    pub session: String,
    pub frame: usize,
    pub synthetic: bool,
}

/// An 8-bit frequency × channel intensity image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Efdm {
    pixels: Vec<u8>,
    height: usize,
    width: usize,
    pub label: String,
    pub meta: EfdmMeta,
}

/// SHA-256 of an image's pixel bytes.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fingerprint(pub [u8; 32]);

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0[..8] {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint({self})")
    }
}

impl Efdm {
    pub fn new(pixels: Vec<u8>, height: usize, width: usize, label: impl Into<String>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(Error::Dimension(format!(
                "{} pixels for a {height}x{width} image",
                pixels.len()
            )));
        }
        Ok(Self { pixels, height, width, label: label.into(), meta: EfdmMeta::default() })
    }

    pub fn zeros(height: usize, width: usize, label: impl Into<String>) -> Self {
        Self::new(vec![0; height * width], height, width, label).unwrap()
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    pub fn fingerprint(&self) -> Fingerprint {
        Fingerprint(Sha256::digest(&self.pixels).into())
    }

    /// Binary PGM (P5).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Largest bin index kept by a cut at `cut_hz`.
pub fn retained_bins(n_bins: usize, freq_resolution_hz: f64, cut_hz: f64) -> usize {
    let kept = (cut_hz / freq_resolution_hz + 1e-9).floor() as usize + 1;
    kept.min(n_bins)
}

/// `floor(x * 255 + 0.5)` for `x` in `[0, 1]`.
fn quantize_unit(x: f64) -> u8 {
    (x * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Builds one square `size × size` map per frame.
pub fn build_efdms(mags: &Magnitudes, cut_hz: f64, size: usize, label: &str) -> Result<Vec<Efdm>> {
    let nyquist = (mags.n_bins - 1) as f64 * mags.freq_resolution_hz;
    if cut_hz.is_nan() || cut_hz <= 0.0 || cut_hz > nyquist + 1e-9 {
        return Err(Error::Validation(format!("cut {cut_hz} Hz outside (0, {nyquist}] Hz")));
    }
    let bins = retained_bins(mags.n_bins, mags.freq_resolution_hz, cut_hz);
    let channels = mags.n_channels;
    if bins > size || channels > size {
        return Err(Error::Capacity(format!(
            "{bins} frequency bins x {channels} channels do not fit a {size}x{size} map; \
             use a larger image size or a coarser frequency resolution (smaller window)"
        )));
    }
    let mut out = Vec::with_capacity(mags.n_frames);
    for f in 0..mags.n_frames {
        let frame = mags.frame(f);
        let max = frame[..bins * channels].iter().cloned().fold(0.0f64, f64::max);
        let mut pixels = vec![0u8; size * size];
        if max > 0.0 {
            for b in 0..bins {
                let row = size - 1 - b;
                for c in 0..channels {
                    pixels[row * size + c] = quantize_unit(frame[b * channels + c] / max);
                }
            }
        }
        let mut e = Efdm::new(pixels, size, size, label)?;
        e.meta.frame = f;
        out.push(e);
    }
    Ok(out)
}

/// STFT and image geometry for turning recordings into maps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EfdmConfig {
    pub wsize: usize,
    pub hop: usize,
    pub cut_hz: f64,
    pub size: usize,
}

impl EfdmConfig {
    /// Non-overlapping windows sized so every bin up to `cut_hz` fits.
    pub fn for_rate(sample_rate_hz: f64, cut_hz: f64, size: usize) -> Self {
        let cut = cut_hz.min(sample_rate_hz / 2.0);
        let wsize = default_wsize(sample_rate_hz, cut, size);
        Self { wsize, hop: wsize, cut_hz: cut, size }
    }
}

/// All maps of one recording, tagged with its subject and session.
pub fn efdms_from_recording(rec: &Recording, cfg: &EfdmConfig) -> Result<Vec<Efdm>> {
    let mags = magnitude(&stft(rec, cfg.wsize, cfg.hop)?);
    let mut maps = build_efdms(&mags, cfg.cut_hz, cfg.size, &rec.label)?;
    for m in &mut maps {
        m.meta.subject = rec.subject_id.clone();
        m.meta.session = rec.session_id.clone();
    }
    Ok(maps)
}

/// Three identical planes, `[3, H, W]` planar.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbTriple {
    pub data: Vec<u8>,
    pub height: usize,
    pub width: usize,
}

impl RgbTriple {
    pub fn plane(&self, i: usize) -> &[u8] {
        let n = self.height * self.width;
        &self.data[i * n..(i + 1) * n]
    }

    /// Binary PPM (P6), pixel-interleaved.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        let n = self.height * self.width;
        for i in 0..n {
            out.extend_from_slice(&[self.data[i], self.data[n + i], self.data[2 * n + i]]);
        }
        out
    }
}

pub fn to_rgb_triple(e: &Efdm) -> RgbTriple {
    let mut data = Vec::with_capacity(3 * e.pixels.len());
    for _ in 0..3 {
        data.extend_from_slice(&e.pixels);
    }
    RgbTriple { data, height: e.height, width: e.width }
}

/// Pixel `p` ↦ `p / 127.5 − 1`, shape `[1, H, W]`.
pub fn to_float_tensor(e: &Efdm) -> Tensor {
    let data = e.pixels.iter().map(|&p| p as f64 / 127.5 - 1.0).collect();
    Tensor::new(vec![1, e.height, e.width], data).unwrap()
}

/// Inverse of the float scaling: `floor((x + 1) · 127.5 + 0.5)` clamped.
pub fn quantize_float(x: f64) -> u8 {
    ((x.clamp(-1.0, 1.0) + 1.0) * 127.5 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Stacks maps into `[B, planes, H, W]`, replicating the gray plane.
pub fn batch_tensor(items: &[&Efdm], planes: usize) -> Result<Tensor> {
    let first = items.first().ok_or_else(|| Error::Validation("empty batch".into()))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(items.len() * planes * h * w);
    for e in items {
        if (e.height, e.width) != (h, w) {
            return Err(Error::Dimension(format!(
                "batch mixes {}x{} and {h}x{w} maps",
                e.height, e.width
            )));
        }
        for _ in 0..planes {
            data.extend(e.pixels.iter().map(|&p| p as f64 / 127.5 - 1.0));
        }
    }
    Tensor::new(vec![items.len(), planes, h, w], data)
}

/// Ordered maps plus their label vocabulary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EfdmDataset {
    items: Vec<Efdm>,
    class_names: Vec<String>,
    height: usize,
    width: usize,
}

impl EfdmDataset {
    pub fn new(class_names: Vec<String>, height: usize, width: usize) -> Result<Self> {
        if class_names.is_empty() || class_names.len() > 255 {
            return Err(Error::Validation(format!("{} classes; need 1..=255", class_names.len())));
        }
        let unique: HashSet<_> = class_names.iter().collect();
        if unique.len() != class_names.len() {
            return Err(Error::Validation("duplicate class names".into()));
        }
        if class_names.iter().any(|n| n.len() > 255 || n.is_empty()) {
            return Err(Error::Validation("class names must be 1..=255 bytes".into()));
        }
        Ok(Self { items: Vec::new(), class_names, height, width })
    }

    pub fn from_items(class_names: Vec<String>, height: usize, width: usize, items: Vec<Efdm>) -> Result<Self> {
        let mut ds = Self::new(class_names, height, width)?;
        for e in items {
            ds.push(e)?;
        }
        Ok(ds)
    }

    pub fn push(&mut self, e: Efdm) -> Result<()> {
        if (e.height, e.width) != (self.height, self.width) {
            return Err(Error::Dimension(format!(
                "{}x{} map in a {}x{} dataset",
                e.height, e.width, self.height, self.width
            )));
        }
        if self.class_index(&e.label).is_none() {
            return Err(Error::Validation(format!("label '{}' not in vocabulary {:?}", e.label, self.class_names)));
        }
        self.items.push(e);
        Ok(())
    }

    pub fn extend(&mut self, other: &EfdmDataset) -> Result<()> {
        for e in &other.items {
            self.push(e.clone())?;
        }
        Ok(())
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.class_names.iter().position(|n| n == label)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Efdm] {
        &self.items
    }

    pub fn get(&self, i: usize) -> &Efdm {
        &self.items[i]
    }

    pub fn label_index(&self, i: usize) -> usize {
        self.class_index(&self.items[i].label).expect("labels validated on push")
    }

    pub fn labels(&self) -> Vec<usize> {
        (0..self.len()).map(|i| self.label_index(i)).collect()
    }

    /// Items of one class, order preserved.
    pub fn of_class(&self, label: &str) -> Result<EfdmDataset> {
        let mut ds = Self::new(self.class_names.clone(), self.height, self.width)?;
        ds.items = self.items.iter().filter(|e| e.label == label).cloned().collect();
        Ok(ds)
    }

    /// At most `n` items per class, keeping the first ones in order.
    pub fn take_per_class(&self, n: usize) -> EfdmDataset {
        let mut counts = vec![0usize; self.num_classes()];
        let mut ds = self.clone();
        ds.items = self
            .items
            .iter()
            .filter(|e| {
                let k = self.class_index(&e.label).unwrap();
                counts[k] += 1;
                counts[k] <= n
            })
            .cloned()
            .collect();
        ds
    }

    pub fn fingerprints(&self) -> Vec<Fingerprint> {
        self.items.iter().map(Efdm::fingerprint).collect()
    }

    /// Serialized dataset file.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.items.len() * (1 + self.height * self.width));
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.items.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u16).to_le_bytes());
        out.extend_from_slice(&(self.width as u16).to_le_bytes());
        out.push(self.class_names.len() as u8);
        for name in &self.class_names {
            out.push(name.len() as u8);
            out.extend_from_slice(name.as_bytes());
        }
        for i in 0..self.items.len() {
            out.push(self.label_index(i) as u8);
            out.extend_from_slice(&self.items[i].pixels);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |why: &str| Error::format(path, why.to_string());
        let mut cur = Cursor::new(bytes);
        if cur.take(4).ok_or_else(|| bad("truncated header"))? != DATASET_MAGIC {
            return Err(bad("missing EFDM magic"));
        }
        let version = cur.u16().ok_or_else(|| bad("truncated header"))?;
        if version != DATASET_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let count = cur.u32().ok_or_else(|| bad("truncated header"))? as usize;
        let height = cur.u16().ok_or_else(|| bad("truncated header"))? as usize;
        let width = cur.u16().ok_or_else(|| bad("truncated header"))? as usize;
        let n_classes = cur.u8().ok_or_else(|| bad("truncated header"))? as usize;
        let mut names = Vec::with_capacity(n_classes);
        for _ in 0..n_classes {
            let len = cur.u8().ok_or_else(|| bad("truncated class name"))? as usize;
            let raw = cur.take(len).ok_or_else(|| bad("truncated class name"))?;
            names.push(String::from_utf8(raw.to_vec()).map_err(|_| bad("class name is not UTF-8"))?);
        }
        let mut ds = Self::new(names, height, width).map_err(|e| bad(&e.to_string()))?;
        for i in 0..count {
            let label = cur.u8().ok_or_else(|| bad(&format!("truncated at item {i}")))? as usize;
            let pixels = cur.take(height * width).ok_or_else(|| bad(&format!("truncated at item {i}")))?;
            let name = ds.class_names.get(label).cloned().ok_or_else(|| bad(&format!("item {i} label {label} out of range")))?;
            let mut e = Efdm::new(pixels.to_vec(), height, width, name)?;
            e.meta.frame = i;
            ds.items.push(e);
        }
        if !cur.at_end() {
            return Err(bad("trailing bytes after last item"));
        }
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
