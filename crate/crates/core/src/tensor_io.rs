//! Raster images, instance maps and prediction fields, with their on-disk forms.
//!
//! Images are read from PNG or TIFF (8- or 16-bit, one or three channels) and
//! normalized to `[0, 1]`. Instance maps are stored as single-channel 16-bit
//! PNG. Prediction fields use the `CSF1` container:
//!
//! ```text
//! offset  size        content
//! 0       4           b"CSF1"
//! 4       8           planes  (u64, little endian)
//! 12      8           height  (u64, little endian)
//! 20      8           width   (u64, little endian)
//! 28      4*p*h*w     f32 little endian, plane-major, row-major within a plane
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor, Read, Write};
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageError, ImageFormat, ImageReader, Luma, Rgb};

use crate::error::{Error, Result};

const FIELD_MAGIC: &[u8; 4] = b"CSF1";
const FIELD_HEADER_LEN: u64 = 28;

/// A decoded image with intensities normalized to `[0, 1]`.
///
/// Pixels are stored interleaved: `data[(row * width + col) * channels + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl RasterImage {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::UnsupportedFormat(format!(
                "{channels} channels (expected 1 or 3)"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::DimensionMismatch(format!(
                "{}x{}x{} image needs {} values, got {}",
                height,
                width,
                channels,
                height * width * channels,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidConfig(format!(
                "intensity {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Iterates over pixels as channel slices in raster order.
    pub fn pixels(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.channels)
    }
}

/// Per-pixel instance ids; 0 is background and instances are numbered `1..=K`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InstanceMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
    count: u32,
}

impl InstanceMap {
    /// Builds a map from arbitrary labels, renumbering them to `1..=K` in
    /// ascending order of the original ids.
    pub fn new(height: usize, width: usize, mut labels: Vec<u32>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} map needs {} labels, got {}",
                height,
                width,
                height * width,
                labels.len()
            )));
        }
        let count = canonicalize(&mut labels);
        Ok(Self {
            height,
            width,
            labels,
            count,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            labels: vec![0; height * width],
            count: 0,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Number of instances `K`.
    pub fn num_instances(&self) -> usize {
        self.count as usize
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    /// Pixel count of every instance; entry `i` belongs to id `i + 1`.
    pub fn areas(&self) -> Vec<usize> {
        let mut areas = vec![0usize; self.num_instances()];
        for &l in &self.labels {
            if l > 0 {
                areas[l as usize - 1] += 1;
            }
        }
        areas
    }

    /// Inclusive `(row_min, col_min, row_max, col_max)` per instance.
    pub fn bounding_boxes(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut boxes = vec![(usize::MAX, usize::MAX, 0, 0); self.num_instances()];
        for (i, &l) in self.labels.iter().enumerate() {
            if l == 0 {
                continue;
            }
            let (r, c) = (i / self.width, i % self.width);
            let b = &mut boxes[l as usize - 1];
            b.0 = b.0.min(r);
            b.1 = b.1.min(c);
            b.2 = b.2.max(r);
            b.3 = b.3.max(c);
        }
        boxes
    }

    /// Foreground indicator (`label > 0`) in raster order.
    pub fn foreground(&self) -> Vec<bool> {
        self.labels.iter().map(|&l| l > 0).collect()
    }
}

/// Renumbers labels in place to `1..=K`, preserving the order of the original
/// ids. Returns `K`.
fn canonicalize(labels: &mut [u32]) -> u32 {
    let max = labels.iter().copied().max().unwrap_or(0) as usize;
    if max <= labels.len().max(1 << 16) {
        let mut table = vec![0u32; max + 1];
        for &l in labels.iter() {
            table[l as usize] = 1;
        }
        table[0] = 0;
        let mut next = 0;
        for slot in table.iter_mut().skip(1) {
            if *slot != 0 {
                next += 1;
                *slot = next;
            }
        }
        for l in labels.iter_mut() {
            *l = table[*l as usize];
        }
        next
    } else {
        let mut ids: Vec<u32> = labels.iter().copied().filter(|&l| l > 0).collect();
        ids.sort_unstable();
        ids.dedup();
        let table: HashMap<u32, u32> = ids
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, i as u32 + 1))
            .collect();
        for l in labels.iter_mut() {
            if *l > 0 {
                *l = table[l];
            }
        }
        ids.len() as u32
    }
}

/// A stack of equally sized `f32` planes, plane-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldTensor {
    planes: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FieldTensor {
    pub fn new(planes: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let expected = planes
            .checked_mul(height)
            .and_then(|n| n.checked_mul(width))
            .ok_or_else(|| Error::ShapeMismatch("field dimensions overflow".into()))?;
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "{planes}x{height}x{width} field needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            planes,
            height,
            width,
            data,
        })
    }

    pub fn zeros(planes: usize, height: usize, width: usize) -> Self {
        Self {
            planes,
            height,
            width,
            data: vec![0.0; planes * height * width],
        }
    }

    pub fn planes(&self) -> usize {
        self.planes
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(planes, height, width)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.planes, self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, index: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[index * n..(index + 1) * n]
    }

    pub fn plane_mut(&mut self, index: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[index * n..(index + 1) * n]
    }

    pub fn get(&self, plane: usize, row: usize, col: usize) -> f32 {
        self.data[(plane * self.height + row) * self.width + col]
    }

    /// Copies planes `start..end` into a new tensor.
    pub fn slice_planes(&self, start: usize, end: usize) -> FieldTensor {
        let n = self.height * self.width;
        FieldTensor {
            planes: end - start,
            height: self.height,
            width: self.width,
            data: self.data[start * n..end * n].to_vec(),
        }
    }

    /// Stacks tensors of equal height and width along the plane axis.
    pub fn concat(parts: &[&FieldTensor]) -> Result<FieldTensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::EmptyInput("no tensors to concatenate".into()))?;
        let (h, w) = (first.height, first.width);
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.data.len()).sum());
        let mut planes = 0;
        for p in parts {
            if (p.height, p.width) != (h, w) {
                return Err(Error::ShapeMismatch(format!(
                    "cannot stack {}x{} with {}x{}",
                    p.height, p.width, h, w
                )));
            }
            planes += p.planes;
            data.extend_from_slice(&p.data);
        }
        Ok(FieldTensor {
            planes,
            height: h,
            width: w,
            data,
        })
    }

    /// Copies the `height x width` window at `(row, col)` from every plane.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<FieldTensor> {
        if row + height > self.height || col + width > self.width {
            return Err(Error::ShapeMismatch(format!(
                "crop {height}x{width} at ({row}, {col}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(self.planes * height * width);
        for p in 0..self.planes {
            let plane = self.plane(p);
            for r in row..row + height {
                let start = r * self.width + col;
                data.extend_from_slice(&plane[start..start + width]);
            }
        }
        Ok(FieldTensor {
            planes: self.planes,
            height,
            width,
            data,
        })
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn map_image_error(path: &Path, err: ImageError) -> Error {
    match err {
        ImageError::Unsupported(e) => Error::UnsupportedFormat(e.to_string()),
        other => Error::io(path, other),
    }
}

fn decode(path: &Path) -> Result<DynamicImage> {
    let bytes = read_bytes(path)?;
    let reader = ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Tiff) => {}
        Some(other) => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: {other:?} (expected PNG or TIFF)",
                path.display()
            )))
        }
        None => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: unrecognized container",
                path.display()
            )))
        }
    }
    reader.decode().map_err(|e| map_image_error(path, e))
}

/// Loads an 8- or 16-bit, one- or three-channel PNG/TIFF and normalizes it.
pub fn load_image(path: impl AsRef<Path>) -> Result<RasterImage> {
    let path = path.as_ref();
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, data): (usize, Vec<f32>) = match img {
        DynamicImage::ImageLuma8(b) => (1, b.into_raw().into_iter().map(norm8).collect()),
        DynamicImage::ImageRgb8(b) => (3, b.into_raw().into_iter().map(norm8).collect()),
        DynamicImage::ImageLuma16(b) => (1, b.into_raw().into_iter().map(norm16).collect()),
        DynamicImage::ImageRgb16(b) => (3, b.into_raw().into_iter().map(norm16).collect()),
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: pixel layout {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    RasterImage::new(h, w, channels, data)
}

fn norm8(v: u8) -> f32 {
    v as f32 / 255.0
}

fn norm16(v: u16) -> f32 {
    v as f32 / 65535.0
}

/// Writes an image as 8-bit PNG, rounding intensities to the nearest level.
pub fn save_image(image: &RasterImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw: Vec<u8> = image
        .data
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    let (w, h) = (image.width as u32, image.height as u32);
    let result = if image.channels == 1 {
        ImageBuffer::<Luma<u8>, _>::from_raw(w, h, raw)
            .expect("buffer length checked at construction")
            .save_with_format(path, ImageFormat::Png)
    } else {
        ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, raw)
            .expect("buffer length checked at construction")
            .save_with_format(path, ImageFormat::Png)
    };
    result.map_err(|e| map_image_error(path, e))
}

/// Loads a single-channel label image and canonicalizes its ids.
pub fn load_instance_map(path: impl AsRef<Path>) -> Result<InstanceMap> {
    let path = path.as_ref();
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let labels: Vec<u32> = match img {
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(u32::from).collect(),
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(u32::from).collect(),
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: instance maps must be single-channel, got {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    InstanceMap::new(h, w, labels)
}

/// Writes an instance map as a 16-bit single-channel PNG.
pub fn save_instance_map(map: &InstanceMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if map.count > u16::MAX as u32 {
        return Err(Error::UnsupportedFormat(format!(
            "{} instances do not fit a 16-bit label image",
            map.count
        )));
    }
    let raw: Vec<u16> = map.labels.iter().map(|&l| l as u16).collect();
    ImageBuffer::<Luma<u16>, _>::from_raw(map.width as u32, map.height as u32, raw)
        .expect("buffer length checked at construction")
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| map_image_error(path, e))
}

/// Writes a field in the `CSF1` container.
pub fn save_field(field: &FieldTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        out.write_all(FIELD_MAGIC)?;
        for dim in [field.planes, field.height, field.width] {
            out.write_all(&(dim as u64).to_le_bytes())?;
        }
        for v in &field.data {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()
    };
    write(&mut out).map_err(|e| Error::io(path, e))
}

/// Reads a `CSF1` field. The header dimensions must account for the payload
/// exactly.
pub fn load_field(path: impl AsRef<Path>) -> Result<FieldTensor> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let file_len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut input = BufReader::new(file);

    let mut header = [0u8; FIELD_HEADER_LEN as usize];
    input
        .read_exact(&mut header)
        .map_err(|e| Error::io(path, format!("short header: {e}")))?;
    if &header[..4] != FIELD_MAGIC {
        return Err(Error::io(path, "missing CSF1 magic"));
    }
    let dim = |i: usize| u64::from_le_bytes(header[4 + 8 * i..12 + 8 * i].try_into().unwrap());
    let (planes, height, width) = (dim(0), dim(1), dim(2));
    let count = planes
        .checked_mul(height)
        .and_then(|n| n.checked_mul(width))
        .ok_or_else(|| Error::io(path, "header dimensions overflow"))?;
    let payload = count
        .checked_mul(4)
        .ok_or_else(|| Error::io(path, "header dimensions overflow"))?;
    if file_len - FIELD_HEADER_LEN != payload {
        return Err(Error::io(
            path,
            format!(
                "header {planes}x{height}x{width} implies {payload} payload bytes, file has {}",
                file_len - FIELD_HEADER_LEN
            ),
        ));
    }

    let mut data = Vec::with_capacity(count as usize);
    let mut chunk = vec![0u8; 1 << 16];
    let mut remaining = payload as usize;
    while remaining > 0 {
        let n = remaining.min(chunk.len());
        input
            .read_exact(&mut chunk[..n])
            .map_err(|e| Error::io(path, e))?;
        data.extend(
            chunk[..n]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
        );
        remaining -= n;
    }
    FieldTensor::new(planes as usize, height as usize, width as usize, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rgb8_png_normalizes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("red.png");
        ImageBuffer::<Rgb<u8>, _>::from_raw(1, 1, vec![255u8, 0, 0])
            .unwrap()
            .save(&path)
            .unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img.channels(), 3);
        assert_eq!(img.pixel(0, 0), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn gray16_tiff_normalizes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("white.tiff");
        ImageBuffer::<Luma<u16>, _>::from_raw(2, 1, vec![65535u16, 0])
            .unwrap()
            .save(&path)
            .unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img.channels(), 1);
        assert_eq!(img.data(), &[1.0, 0.0]);
    }

    #[test]
    fn truncated_png_is_io_failure() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cut.png");
        ImageBuffer::<Rgb<u8>, _>::from_raw(8, 8, vec![7u8; 192])
            .unwrap()
            .save(&path)
            .unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_image(&path), Err(Error::IoFailure { .. })));
    }

    #[test]
    fn rgba_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rgba.png");
        ImageBuffer::<image::Rgba<u8>, _>::from_raw(1, 1, vec![1u8, 2, 3, 4])
            .unwrap()
            .save(&path)
            .unwrap();
        assert!(matches!(load_image(&path), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn missing_file_is_io_failure() {
        assert!(matches!(
            load_image("/nonexistent/nowhere.png"),
            Err(Error::IoFailure { .. })
        ));
    }

    #[test]
    fn canonicalizes_gapped_labels() {
        let m = InstanceMap::new(1, 4, vec![0, 5, 9, 5]).unwrap();
        assert_eq!(m.labels(), &[0, 1, 2, 1]);
        assert_eq!(m.num_instances(), 2);

        let m = InstanceMap::new(2, 2, vec![0; 4]).unwrap();
        assert_eq!(m.num_instances(), 0);

        let m = InstanceMap::new(1, 3, vec![0, 2, 1]).unwrap();
        assert_eq!(m.labels(), &[0, 2, 1]);
    }

    #[test]
    fn canonicalizes_huge_ids() {
        let m = InstanceMap::new(1, 3, vec![u32::MAX, 0, 70_000]).unwrap();
        assert_eq!(m.labels(), &[2, 0, 1]);
    }

    #[test]
    fn instance_map_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.png");
        let m = InstanceMap::new(2, 3, vec![0, 300, 300, 7, 0, 1000]).unwrap();
        save_instance_map(&m, &path).unwrap();
        assert_eq!(load_instance_map(&path).unwrap(), m);
    }

    #[test]
    fn small_field_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csf");
        let f = FieldTensor::new(1, 2, 2, vec![0.25, 0.5, 0.75, 1.0]).unwrap();
        save_field(&f, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"CSF1");
        assert_eq!(bytes.len(), 28 + 16);
        assert_eq!(load_field(&path).unwrap(), f);
    }

    #[test]
    fn large_field_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("big.csf");
        let data: Vec<f32> = (0..32 * 512 * 512)
            .map(|i| (i as f32).sin() * 1e3)
            .collect();
        let f = FieldTensor::new(32, 512, 512, data).unwrap();
        save_field(&f, &path).unwrap();
        let g = load_field(&path).unwrap();
        assert_eq!(f.shape(), g.shape());
        assert!(f
            .data()
            .iter()
            .zip(g.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn header_payload_mismatch_is_io_failure() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csf");
        let mut bytes = b"CSF1".to_vec();
        for d in [1u64, 3, 3] {
            bytes.extend_from_slice(&d.to_le_bytes());
        }
        bytes.extend_from_slice(&[0u8; 8 * 4]);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_field(&path), Err(Error::IoFailure { .. })));
    }

    #[test]
    fn crop_and_concat() {
        let f = FieldTensor::new(2, 2, 3, (0..12).map(|v| v as f32).collect()).unwrap();
        let c = f.crop(1, 1, 1, 2).unwrap();
        assert_eq!(c.data(), &[4.0, 5.0, 10.0, 11.0]);
        let s = FieldTensor::concat(&[&f.slice_planes(1, 2), &f.slice_planes(0, 1)]).unwrap();
        assert_eq!(s.plane(0), f.plane(1));
        assert!(f.crop(1, 2, 1, 2).is_err());
    }

    proptest! {
        #[test]
        fn field_round_trip_is_bit_exact(
            planes in 1usize..4, h in 1usize..6, w in 1usize..6,
            seed in any::<u64>(),
        ) {
            let n = planes * h * w;
            let data: Vec<f32> = (0..n)
                .map(|i| f32::from_bits((seed as u32).wrapping_mul(2654435761).wrapping_add(i as u32 * 97)))
                .collect();
            let f = FieldTensor::new(planes, h, w, data).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.csf");
            save_field(&f, &path).unwrap();
            let g = load_field(&path).unwrap();
            prop_assert_eq!(f.shape(), g.shape());
            for (a, b) in f.data().iter().zip(g.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn canonicalization_preserves_partition(labels in proptest::collection::vec(0u32..12, 1..40)) {
            let n = labels.len();
            let m = InstanceMap::new(1, n, labels.clone()).unwrap();
            let out = m.labels();
            for i in 0..n {
                prop_assert_eq!(labels[i] == 0, out[i] == 0);
                for j in 0..n {
                    prop_assert_eq!(labels[i] == labels[j], out[i] == out[j]);
                }
            }
            let max = out.iter().copied().max().unwrap_or(0) as usize;
            prop_assert_eq!(max, m.num_instances());
            for id in 1..=max as u32 {
                prop_assert!(out.contains(&id));
            }
        }
    }
}
