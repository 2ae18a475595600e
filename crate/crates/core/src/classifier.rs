//! Rule-based image categorization.
//!
//! Single-channel images are binary (class 0). Three-channel images are
//! tested against a saturation threshold and a value range to pick out gray
//! images (class 1); the remaining color images are split on the area of
//! their largest cell into large-cell (class 2) and small-cell (class 3).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor_io::{InstanceMap, RasterImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ImageCategory {
    Binary,
    Gray,
    LargeCell,
    SmallCell,
}

impl ImageCategory {
    pub const ALL: [ImageCategory; 4] = [
        ImageCategory::Binary,
        ImageCategory::Gray,
        ImageCategory::LargeCell,
        ImageCategory::SmallCell,
    ];

    /// Numeric class id, 0 through 3.
    pub fn id(self) -> u8 {
        match self {
            ImageCategory::Binary => 0,
            ImageCategory::Gray => 1,
            ImageCategory::LargeCell => 2,
            ImageCategory::SmallCell => 3,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }
}

impl fmt::Display for ImageCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "class{}", self.id())
    }
}

impl FromStr for ImageCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let digits = s.trim().trim_start_matches("class").trim_start_matches("Class");
        digits
            .parse::<u8>()
            .ok()
            .and_then(ImageCategory::from_id)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown image category {s:?}")))
    }
}

/// Thresholds for [`categorize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierConfig {
    /// Saturation threshold.
    pub theta: f64,
    /// Lower bound of the open value range.
    pub alpha_s: f64,
    /// Upper bound of the open value range.
    pub alpha_l: f64,
    /// Largest-cell area (pixels) above which a color image is large-cell.
    pub sigma: f64,
    /// Test `mean_saturation < theta` instead of `> theta` for the gray rule.
    pub invert_saturation: bool,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            theta: 0.1,
            alpha_s: 0.1,
            alpha_l: 0.6,
            sigma: 8000.0,
            invert_saturation: false,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::InvalidConfig(format!("theta {} not in [0,1]", self.theta)));
        }
        if !(0.0 <= self.alpha_s && self.alpha_s < self.alpha_l && self.alpha_l <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "value range ({}, {}) must satisfy 0 <= alpha_s < alpha_l <= 1",
                self.alpha_s, self.alpha_l
            )));
        }
        if self.sigma.is_nan() || self.sigma <= 0.0 {
            return Err(Error::InvalidConfig(format!("sigma {} must be positive", self.sigma)));
        }
        Ok(())
    }
}

/// Mean saturation and mean value of a three-channel image under HSV
/// (`V = max`, `S = 1 - min/max`, and `S = 0` for black pixels).
pub fn rgb_to_hsv_stats(image: &RasterImage) -> Result<(f64, f64)> {
    if image.channels() != 3 {
        return Err(Error::WrongChannelCount {
            expected: 3,
            actual: image.channels(),
        });
    }
    let n = image.height() * image.width();
    if n == 0 {
        return Ok((0.0, 0.0));
    }
    let (mut s_sum, mut v_sum) = (0.0f64, 0.0f64);
    for px in image.pixels() {
        let max = px[0].max(px[1]).max(px[2]) as f64;
        let min = px[0].min(px[1]).min(px[2]) as f64;
        v_sum += max;
        if max > 0.0 {
            s_sum += 1.0 - min / max;
        }
    }
    Ok((s_sum / n as f64, v_sum / n as f64))
}

/// Pixel count of the largest instance, 0 for an empty map.
pub fn max_instance_area(mask: &InstanceMap) -> usize {
    mask.areas().into_iter().max().unwrap_or(0)
}

/// The category decided by the image alone, if the image is binary or gray.
/// `None` means the size split (and therefore a mask) is needed.
pub fn categorize_by_color(image: &RasterImage, cfg: &ClassifierConfig) -> Result<Option<ImageCategory>> {
    match image.channels() {
        1 => Ok(Some(ImageCategory::Binary)),
        3 => {
            let (s, v) = rgb_to_hsv_stats(image)?;
            let saturation_ok = if cfg.invert_saturation {
                s < cfg.theta
            } else {
                s > cfg.theta
            };
            let value_ok = cfg.alpha_s < v && v < cfg.alpha_l;
            Ok((saturation_ok && value_ok).then_some(ImageCategory::Gray))
        }
        other => Err(Error::WrongChannelCount {
            expected: 3,
            actual: other,
        }),
    }
}

/// Size split for color images.
pub fn categorize_by_area(max_area: usize, cfg: &ClassifierConfig) -> ImageCategory {
    if max_area as f64 > cfg.sigma {
        ImageCategory::LargeCell
    } else {
        ImageCategory::SmallCell
    }
}

/// Assigns one of the four categories to an image and its cell mask.
pub fn categorize(image: &RasterImage, mask: &InstanceMap, cfg: &ClassifierConfig) -> Result<ImageCategory> {
    if (mask.height(), mask.width()) != (image.height(), image.width()) {
        return Err(Error::DimensionMismatch(format!(
            "image is {}x{}, mask is {}x{}",
            image.height(),
            image.width(),
            mask.height(),
            mask.width()
        )));
    }
    match categorize_by_color(image, cfg)? {
        Some(category) => Ok(category),
        None => Ok(categorize_by_area(max_instance_area(mask), cfg)),
    }
}
