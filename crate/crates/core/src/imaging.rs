//! Grayscale export and lossless float archives for angular fields.
//!
//! Training reads the float32 archives; the 8-bit PGM/PNG files are for
//! inspection only.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gaf::{AngularField, FieldKind};

pub const ARCHIVE_MAGIC: &[u8; 4] = b"QGAF";
pub const ARCHIVE_VERSION: u8 = 1;
pub const ARCHIVE_EXTENSION: &str = "qgaf";

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("invalid value range [{lo}, {hi}]")]
    Range { lo: f64, hi: f64 },
    #[error("format error: {0}")]
    Format(String),
    #[error("expected {expected} pixel bytes, found {found}")]
    Length { expected: usize, found: usize },
    #[error("archive is {found}x{found}, expected {expected}x{expected}")]
    Dimension { expected: usize, found: usize },
    #[error("metadata: {0}")]
    Metadata(#[from] serde_json::Error),
    #[error("png: {0}")]
    Png(String),
}

type Result<T> = std::result::Result<T, ImagingError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ImagingError + '_ {
    move |source| ImagingError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueRange {
    pub lo: f64,
    pub hi: f64,
}

impl ValueRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(ImagingError::Range { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    /// Fixed mapping range per field kind. QGASF pixels are non-negative
    /// square roots, so they use `[0, 1]`; everything else uses `[-1, 1]`.
    pub fn default_for(kind: FieldKind) -> Self {
        match kind {
            FieldKind::Qgasf => Self { lo: 0.0, hi: 1.0 },
            _ => Self { lo: -1.0, hi: 1.0 },
        }
    }

    pub fn to_pixel(&self, v: f64) -> u8 {
        let t = ((v - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0);
        (255.0 * t).round() as u8
    }
}

/// Sidecar metadata for an exported image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub kind: FieldKind,
    pub window_id: usize,
    pub label: Option<f64>,
    pub value_range: ValueRange,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    pub meta: Option<ImageMeta>,
}

/// `round(255 * clamp((v - lo) / (hi - lo), 0, 1))` per entry.
pub fn field_to_gray(field: &AngularField, range: ValueRange, label: Option<f64>) -> Result<GrayImage> {
    let range = ValueRange::new(range.lo, range.hi)?;
    Ok(GrayImage {
        width: field.size,
        height: field.size,
        pixels: field.data.iter().map(|&v| range.to_pixel(v)).collect(),
        meta: Some(ImageMeta {
            kind: field.kind,
            window_id: field.source_window_start,
            label,
            value_range: range,
        }),
    })
}

/// Binary P5 bytes, maxval 255.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

/// Parses a binary P5 image with maxval 255. Header comments are skipped.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        let magic = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(ImagingError::Format(format!(
            "unsupported magic {magic:?}; only binary P5 is read"
        )));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(ImagingError::Format("truncated PGM header".to_owned()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| ImagingError::Format("header number out of range".to_owned()))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(ImagingError::Format("missing whitespace after maxval".to_owned()));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(ImagingError::Format(format!("maxval {maxval} unsupported")));
    }
    if width == 0 || height == 0 {
        return Err(ImagingError::Format(format!("bad dimensions {width}x{height}")));
    }
    let expected = width * height;
    let payload = &bytes[pos..];
    if payload.len() != expected {
        return Err(ImagingError::Length {
            expected,
            found: payload.len(),
        });
    }
    Ok(GrayImage {
        width,
        height,
        pixels: payload.to_vec(),
        meta: None,
    })
}

/// Sidecar path for an image file: `foo.pgm` -> `foo.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes the PGM and, when the image carries metadata, a JSON sidecar.
pub fn write_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(img)).map_err(io_err(path))?;
    if let Some(meta) = &img.meta {
        let side = sidecar_path(path);
        fs::write(&side, serde_json::to_vec_pretty(meta)?).map_err(io_err(&side))?;
    }
    Ok(())
}

/// Reads a PGM and its sidecar metadata if one exists.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut img = decode_pgm(&bytes)?;
    let side = sidecar_path(path);
    if side.exists() {
        let text = fs::read(&side).map_err(io_err(&side))?;
        img.meta = Some(serde_json::from_slice(&text)?);
    }
    Ok(img)
}

/// 8-bit grayscale PNG with the same pixel buffer as the PGM.
pub fn write_png(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| ImagingError::Png(e.to_string()))?;
    writer
        .write_image_data(&img.pixels)
        .map_err(|e| ImagingError::Png(e.to_string()))?;
    writer.finish().map_err(|e| ImagingError::Png(e.to_string()))
}

pub fn read_png(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(io_err(path))?;
    let decoder = png::Decoder::new(io::BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| ImagingError::Png(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| ImagingError::Png(e.to_string()))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(ImagingError::Png(format!(
            "expected 8-bit grayscale, got {:?} {:?}",
            info.color_type, info.bit_depth
        )));
    }
    buf.truncate(info.buffer_size());
    Ok(GrayImage {
        width: info.width as usize,
        height: info.height as usize,
        pixels: buf,
        meta: None,
    })
}

/// Provenance fields stamped into archives by the pipeline.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArchiveHeader {
    kind: FieldKind,
    size: usize,
    source_window_start: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

/// Float32 snapshot of a field and its label.
///
/// Layout: `"QGAF"`, version byte, `u32` LE metadata length, UTF-8 JSON
/// metadata, `size * size` LE `f32` values row-major, LE `f32` label.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldArchive {
    pub field: AngularField,
    pub label: f64,
    pub provenance: Option<Provenance>,
}

impl FieldArchive {
    /// Narrows values and label to `f32` precision, which is what the
    /// archive stores.
    pub fn new(field: &AngularField, label: f64, provenance: Option<Provenance>) -> Self {
        let mut field = field.clone();
        for v in &mut field.data {
            *v = *v as f32 as f64;
        }
        Self {
            field,
            label: label as f32 as f64,
            provenance,
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let header = ArchiveHeader {
            kind: self.field.kind,
            size: self.field.size,
            source_window_start: self.field.source_window_start,
            provenance: self.provenance.clone(),
        };
        let meta = serde_json::to_vec(&header)?;
        let n2 = self.field.size * self.field.size;
        let mut out = Vec::with_capacity(9 + meta.len() + 4 * (n2 + 1));
        out.extend_from_slice(ARCHIVE_MAGIC);
        out.push(ARCHIVE_VERSION);
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        for &v in &self.field.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.extend_from_slice(&(self.label as f32).to_le_bytes());
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 9 || &bytes[..4] != ARCHIVE_MAGIC {
            return Err(ImagingError::Format("missing QGAF magic".to_owned()));
        }
        if bytes[4] != ARCHIVE_VERSION {
            return Err(ImagingError::Format(format!(
                "archive version {} unsupported (expected {ARCHIVE_VERSION})",
                bytes[4]
            )));
        }
        let meta_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let meta_end = 9usize
            .checked_add(meta_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| ImagingError::Format("truncated metadata".to_owned()))?;
        let header: ArchiveHeader = serde_json::from_slice(&bytes[9..meta_end])?;
        let n2 = header.size * header.size;
        let body = &bytes[meta_end..];
        if body.len() != 4 * (n2 + 1) {
            return Err(ImagingError::Length {
                expected: 4 * (n2 + 1),
                found: body.len(),
            });
        }
        let mut floats = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
        let data: Vec<f64> = floats.by_ref().take(n2).collect();
        let label = floats.next().expect("length checked");
        Ok(Self {
            field: AngularField {
                kind: header.kind,
                size: header.size,
                data,
                source_window_start: header.source_window_start,
            },
            label,
            provenance: header.provenance,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
        file.write_all(&self.encode()?).map_err(io_err(path))?;
        file.flush().map_err(io_err(path))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::decode(&fs::read(path).map_err(io_err(path))?)
    }

    /// Like [`FieldArchive::read`], rejecting archives of another window size.
    pub fn read_expecting(path: impl AsRef<Path>, size: usize) -> Result<Self> {
        let archive = Self::read(path)?;
        if archive.field.size != size {
            return Err(ImagingError::Dimension {
                expected: size,
                found: archive.field.size,
            });
        }
        Ok(archive)
    }
}

pub fn write_archive(field: &AngularField, label: f64, path: impl AsRef<Path>) -> Result<()> {
    FieldArchive::new(field, label, None).write(path)
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<(AngularField, f64)> {
    let a = FieldArchive::read(path)?;
    Ok((a.field, a.label))
}

/// Archive file name for a window: `win_{start}.qgaf`.
pub fn archive_file_name(start_index: usize) -> String {
    format!("win_{start_index}.{ARCHIVE_EXTENSION}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn field(kind: FieldKind, data: Vec<f64>) -> AngularField {
        let size = (data.len() as f64).sqrt() as usize;
        AngularField {
            kind,
            size,
            data,
            source_window_start: 40,
        }
    }

    fn sample_image(n: usize) -> GrayImage {
        GrayImage {
            width: n,
            height: n,
            pixels: (0..n * n).map(|i| (i * 37 % 256) as u8).collect(),
            meta: None,
        }
    }

    #[test]
    fn gray_mapping_examples() {
        let ones = field(FieldKind::Qgasf, vec![1.0; 900]);
        let img = field_to_gray(&ones, ValueRange::default_for(FieldKind::Qgasf), None).unwrap();
        assert!(img.pixels.iter().all(|&p| p == 255));
        let r = ValueRange::default_for(FieldKind::Gasf);
        assert_eq!(r.to_pixel(-1.0), 0);
        assert_eq!(r.to_pixel(0.0), 128);
        assert_eq!(r.to_pixel(7.0), 255);
        assert!(ValueRange::new(1.0, 1.0).is_err());
        assert!(field_to_gray(&ones, ValueRange { lo: 2.0, hi: 1.0 }, None).is_err());
    }

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.pgm");
        let f = field(FieldKind::Gasf, (0..900).map(|i| (i as f64 / 450.0) - 1.0).collect());
        let img = field_to_gray(&f, ValueRange::default_for(f.kind), Some(1.02)).unwrap();
        write_pgm(&img, &path).unwrap();
        assert_eq!(read_pgm(&path).unwrap(), img);
        assert!(sidecar_path(&path).exists());
    }

    #[test]
    fn pgm_with_comment_header() {
        let mut bytes = b"P5\n# made elsewhere\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[3, 250]);
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!((img.width, img.height), (2, 1));
        assert_eq!(img.pixels, vec![3, 250]);
    }

    #[test]
    fn pgm_rejections() {
        assert!(matches!(decode_pgm(b"P2\n2 2\n255\n1 2 3 4"), Err(ImagingError::Format(_))));
        let mut bytes = encode_pgm(&sample_image(30));
        bytes.truncate(bytes.len() - 10);
        assert!(matches!(
            decode_pgm(&bytes),
            Err(ImagingError::Length { expected: 900, found: 890 })
        ));
        assert!(decode_pgm(b"P5\n3").is_err());
        assert!(decode_pgm(b"P5\n1 1\n65535\n\0\0").is_err());
    }

    #[test]
    fn png_matches_pgm_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let img = sample_image(30);
        write_png(&img, dir.path().join("w.png")).unwrap();
        write_pgm(&img, dir.path().join("w.pgm")).unwrap();
        let png = read_png(dir.path().join("w.png")).unwrap();
        let pgm = read_pgm(dir.path().join("w.pgm")).unwrap();
        assert_eq!(png.pixels, pgm.pixels);
        assert_eq!((png.width, png.height), (30, 30));
    }

    #[test]
    fn archive_label_and_dimensions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(archive_file_name(40));
        let f = field(FieldKind::Qgasf, vec![0.5; 900]);
        write_archive(&f, 1.0134, &path).unwrap();
        let (back, label) = read_archive(&path).unwrap();
        assert_eq!(label, 1.0134f32 as f64);
        assert_eq!(back, f);
        assert!(FieldArchive::read_expecting(&path, 30).is_ok());
        assert!(matches!(
            FieldArchive::read_expecting(&path, 64),
            Err(ImagingError::Dimension { expected: 64, found: 30 })
        ));
    }

    #[test]
    fn archive_rejections() {
        let f = field(FieldKind::Gadf, vec![0.25; 4]);
        let bytes = FieldArchive::new(&f, 1.0, None).encode().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(FieldArchive::decode(&bad).is_err());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(FieldArchive::decode(&bad).is_err());
        assert!(matches!(
            FieldArchive::decode(&bytes[..bytes.len() - 1]),
            Err(ImagingError::Length { .. })
        ));
    }

    proptest! {
        #[test]
        fn archive_round_trip_is_identity(
            data in prop::collection::vec(-1.0f64..1.0, 1..10).prop_flat_map(|v| {
                let n = v.len();
                prop::collection::vec(-1.0f64..1.0, n * n)
            }),
            label in 0.5f64..1.5,
            start in 0usize..5000,
        ) {
            let mut f = field(FieldKind::Qgadf, data);
            f.source_window_start = start;
            let prov = Provenance { config_hash: "abc".into(), seed: 7 };
            let a = FieldArchive::new(&f, label, Some(prov));
            let b = FieldArchive::decode(&a.encode().unwrap()).unwrap();
            prop_assert_eq!(&a, &b);
            for (x, y) in f.data.iter().zip(&b.field.data) {
                prop_assert_eq!((*x as f32).to_bits(), (*y as f32).to_bits());
            }
        }

        #[test]
        fn gray_mapping_monotone_and_bounded(mut v in prop::collection::vec(-1.5f64..1.5, 2..50)) {
            v.sort_by(f64::total_cmp);
            let r = ValueRange::new(-1.0, 1.0).unwrap();
            let px: Vec<u8> = v.iter().map(|&x| r.to_pixel(x)).collect();
            prop_assert!(px.windows(2).all(|w| w[0] <= w[1]));
            for (&x, &p) in v.iter().zip(&px) {
                if (-1.0..=1.0).contains(&x) {
                    let back = -1.0 + 2.0 * p as f64 / 255.0;
                    prop_assert!((back - x).abs() <= 2.0 / 510.0 + 1e-12);
                }
            }
        }
    }
}
