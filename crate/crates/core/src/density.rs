//! Textual density of a page image and the content-adaptive pruning ratio.
//!
//! Pixels are converted to BT.601 luma in `[0, 1]`, Sobel gradient
//! magnitudes are taken over the valid interior (the one-pixel border ring
//! has no full 3x3 window and never counts as an edge), and each token patch
//! reports the fraction of its `h * w` pixels whose magnitude reaches `tau`.

use crate::parallel::map_indexed;
use crate::{Error, Result};

const LUMA_R: f64 = 0.299;
const LUMA_G: f64 = 0.587;
const LUMA_B: f64 = 0.114;

/// Interleaved 8-bit RGB pixels, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width.checked_mul(height).and_then(|p| p.checked_mul(3)) != Some(data.len()) {
            return Err(Error::invalid(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }
}

/// Intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image must be non-empty"));
        }
        if width.checked_mul(height) != Some(pixels.len()) {
            return Err(Error::invalid(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("gray intensities must lie in [0, 1]"));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// 8-bit luma, scaled by 1/255.
    pub fn from_luma8(width: usize, height: usize, data: &[u8]) -> Result<Self> {
        Self::new(
            width,
            height,
            data.iter().map(|&p| f64::from(p) / 255.0).collect(),
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }
}

/// BT.601 luma of an 8-bit RGB image, scaled to `[0, 1]`.
pub fn to_gray(img: &RgbImage) -> Result<GrayImage> {
    if img.width == 0 || img.height == 0 {
        return Err(Error::invalid("cannot convert an empty image"));
    }
    let pixels = img
        .data
        .chunks_exact(3)
        .map(|px| {
            let y =
                LUMA_R * f64::from(px[0]) + LUMA_G * f64::from(px[1]) + LUMA_B * f64::from(px[2]);
            (y / 255.0).clamp(0.0, 1.0)
        })
        .collect();
    GrayImage::new(img.width, img.height, pixels)
}

/// Sobel gradient magnitudes. Entries on the one-pixel border are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMap {
    width: usize,
    height: usize,
    magnitude: Vec<f64>,
}

impl GradientMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        row > 0 && col > 0 && row + 1 < self.height && col + 1 < self.width
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.is_valid(row, col)
            .then(|| self.magnitude[row * self.width + col])
    }
}

/// `sqrt(Gx^2 + Gy^2)` with
///
/// ```text
/// Gx = [-1 0 +1; -2 0 +2; -1 0 +1]    Gy = [+1 +2 +1; 0 0 0; -1 -2 -1]
/// ```
///
/// applied to each interior pixel's 3x3 neighbourhood.
pub fn sobel_magnitude(img: &GrayImage) -> Result<GradientMap> {
    let (h, w) = (img.height, img.width);
    if h < 3 || w < 3 {
        return Err(Error::invalid(format!(
            "Sobel needs at least a 3x3 image, got {w}x{h}"
        )));
    }
    let rows = map_indexed(h, w * 9, |i| {
        let mut out = vec![0.0; w];
        if i == 0 || i + 1 == h {
            return out;
        }
        let (up, mid, down) = (
            &img.pixels[(i - 1) * w..i * w],
            &img.pixels[i * w..(i + 1) * w],
            &img.pixels[(i + 1) * w..(i + 2) * w],
        );
        for j in 1..w - 1 {
            let gx = (up[j + 1] - up[j - 1])
                + 2.0 * (mid[j + 1] - mid[j - 1])
                + (down[j + 1] - down[j - 1]);
            let gy =
                (up[j - 1] - down[j - 1]) + 2.0 * (up[j] - down[j]) + (up[j + 1] - down[j + 1]);
            out[j] = gx.hypot(gy);
        }
        out
    });
    Ok(GradientMap {
        width: w,
        height: h,
        magnitude: rows.concat(),
    })
}

/// Tiling of the image into token patches, in raster order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGrid {
    pub grid_h: usize,
    pub grid_w: usize,
}

impl PatchGrid {
    pub fn new(grid_h: usize, grid_w: usize) -> Result<Self> {
        if grid_h == 0 || grid_w == 0 {
            return Err(Error::invalid("patch grid must be at least 1x1"));
        }
        Ok(Self { grid_h, grid_w })
    }

    /// Token count covered by the grid.
    pub fn patches(&self) -> usize {
        self.grid_h * self.grid_w
    }

    /// Patch size `(h, w)` for an image; dimensions must divide evenly.
    pub fn patch_size(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        if self.grid_h == 0 || self.grid_w == 0 {
            return Err(Error::invalid("patch grid must be at least 1x1"));
        }
        if !height.is_multiple_of(self.grid_h) || !width.is_multiple_of(self.grid_w) {
            return Err(Error::invalid(format!(
                "{width}x{height} image does not divide into a {}x{} patch grid",
                self.grid_h, self.grid_w
            )));
        }
        Ok((height / self.grid_h, width / self.grid_w))
    }
}

impl std::str::FromStr for PatchGrid {
    type Err = Error;

    /// Parses `GHxGW`, e.g. `16x16`.
    fn from_str(s: &str) -> Result<Self> {
        let (h, w) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::invalid(format!("grid must look like 16x16, got {s:?}")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::invalid(format!("bad grid dimension {v:?}")))
        };
        Self::new(parse(h)?, parse(w)?)
    }
}

impl std::fmt::Display for PatchGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.grid_h, self.grid_w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchDensityMap {
    /// Per-patch edge fraction, raster order.
    pub per_patch: Vec<f64>,
    /// Mean of `per_patch`.
    pub mean: f64,
    pub tau: f64,
}

/// Fraction of thresholded edge pixels per patch.
///
/// The denominator is the full patch area `h * w` even for patches touching
/// the image border, whose outermost pixels can never count.
pub fn patch_density(grad: &GradientMap, grid: PatchGrid, tau: f64) -> Result<PatchDensityMap> {
    if !tau.is_finite() {
        return Err(Error::invalid("threshold must be finite"));
    }
    let (ph, pw) = grid.patch_size(grad.height, grad.width)?;
    let area = (ph * pw) as f64;
    let per_patch = map_indexed(grid.patches(), ph * pw, |k| {
        let (gr, gc) = (k / grid.grid_w, k % grid.grid_w);
        let mut active = 0usize;
        for r in gr * ph..(gr + 1) * ph {
            for c in gc * pw..(gc + 1) * pw {
                if grad.get(r, c).is_some_and(|g| g >= tau) {
                    active += 1;
                }
            }
        }
        active as f64 / area
    });
    let mean = per_patch.iter().sum::<f64>() / per_patch.len() as f64;
    Ok(PatchDensityMap {
        per_patch,
        mean,
        tau,
    })
}

/// Gray conversion, Sobel and patch density in one call.
pub fn text_density(img: &GrayImage, grid: PatchGrid, tau: f64) -> Result<PatchDensityMap> {
    grid.patch_size(img.height, img.width)?;
    patch_density(&sobel_magnitude(img)?, grid, tau)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicRatioConfig {
    /// Edge threshold on gradients of `[0, 1]` intensities.
    pub tau: f64,
    /// Similarity mapped to a normalized value of 0.
    pub phi_lo: f64,
    /// Similarity mapped to a normalized value of 1.
    pub phi_hi: f64,
    pub r_min: f64,
    pub r_max: f64,
}

impl Default for DynamicRatioConfig {
    fn default() -> Self {
        Self {
            tau: 0.2,
            phi_lo: 0.0,
            phi_hi: 1.0,
            r_min: 0.0,
            r_max: 0.5,
        }
    }
}

impl DynamicRatioConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.tau.is_finite() {
            return Err(Error::invalid("tau must be finite"));
        }
        if !(self.phi_lo.is_finite() && self.phi_hi.is_finite() && self.phi_lo < self.phi_hi) {
            return Err(Error::invalid(format!(
                "need phi_lo < phi_hi, got [{}, {}]",
                self.phi_lo, self.phi_hi
            )));
        }
        if !(0.0 <= self.r_min && self.r_min <= self.r_max && self.r_max < 1.0) {
            return Err(Error::invalid(format!(
                "need 0 <= r_min <= r_max < 1, got [{}, {}]",
                self.r_min, self.r_max
            )));
        }
        Ok(())
    }
}

/// `clamp(normalize(phi) * (1 - rho), r_min, r_max)` where `normalize` maps
/// `[phi_lo, phi_hi]` affinely onto `[0, 1]` and clamps.
pub fn dynamic_ratio(phi: f64, rho: f64, cfg: &DynamicRatioConfig) -> f64 {
    let span = cfg.phi_hi - cfg.phi_lo;
    let normalized = ((phi - cfg.phi_lo) / span).clamp(0.0, 1.0);
    let rho = rho.clamp(0.0, 1.0);
    let r = normalized * (1.0 - rho);
    if r.is_nan() {
        return cfg.r_min;
    }
    r.clamp(cfg.r_min, cfg.r_max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> GrayImage {
        let mut px = Vec::with_capacity(w * h);
        for r in 0..h {
            for c in 0..w {
                px.push(f(r, c));
            }
        }
        GrayImage::new(w, h, px).unwrap()
    }

    #[test]
    fn gray_conversion() {
        let img = RgbImage::new(3, 1, vec![255, 0, 0, 128, 128, 128, 255, 255, 255]).unwrap();
        let g = to_gray(&img).unwrap();
        assert!((g.get(0, 0) - 0.299).abs() < 1e-12);
        assert!((g.get(0, 1) - 128.0 / 255.0).abs() < 1e-12);
        assert!((g.get(0, 2) - 1.0).abs() < 1e-12);
        assert!(to_gray(&RgbImage::new(0, 0, vec![]).unwrap()).is_err());
        assert!(RgbImage::new(2, 2, vec![0; 11]).is_err());
    }

    #[test]
    fn uniform_image_has_no_gradient() {
        let g = sobel_magnitude(&gray(6, 5, |_, _| 0.37)).unwrap();
        for r in 1..4 {
            for c in 1..5 {
                assert_eq!(g.get(r, c), Some(0.0));
            }
        }
        assert_eq!(g.get(0, 2), None);
        assert_eq!(g.get(2, 5), None);
    }

    #[test]
    fn step_edges() {
        // Right column of the window at (2, 2) is 1: step after column 2.
        let v = sobel_magnitude(&gray(5, 5, |_, c| if c >= 3 { 1.0 } else { 0.0 })).unwrap();
        assert_eq!(v.get(2, 2), Some(4.0));
        // Top row of the window at (2, 2) is 1.
        let hz = sobel_magnitude(&gray(5, 5, |r, _| if r <= 1 { 1.0 } else { 0.0 })).unwrap();
        assert_eq!(hz.get(2, 2), Some(4.0));
    }

    #[test]
    fn too_small_for_sobel() {
        assert!(sobel_magnitude(&gray(2, 5, |_, _| 0.0)).is_err());
        assert!(sobel_magnitude(&gray(5, 2, |_, _| 0.0)).is_err());
    }

    #[test]
    fn uniform_density_is_zero() {
        let d = text_density(&gray(8, 8, |_, _| 1.0), PatchGrid::new(2, 2).unwrap(), 0.2).unwrap();
        assert_eq!(d.per_patch, vec![0.0; 4]);
        assert_eq!(d.mean, 0.0);
    }

    #[test]
    fn single_edge_pixel_counts_over_full_area() {
        // A bright corner pixel is seen only by the window centred at (1, 1).
        let img = gray(8, 8, |r, c| if (r, c) == (0, 0) { 1.0 } else { 0.0 });
        let g = sobel_magnitude(&img).unwrap();
        assert_eq!(g.get(1, 1), Some(2f64.sqrt()));
        let d = patch_density(&g, PatchGrid::new(2, 2).unwrap(), 0.2).unwrap();
        assert_eq!(d.per_patch, vec![0.0625, 0.0, 0.0, 0.0]);

        // A bright pixel at (1, 1): neighbours (1, 2) and (2, 1) reach 2,
        // (2, 2) reaches sqrt 2 and (1, 1) itself stays flat.
        let img = gray(8, 8, |r, c| if (r, c) == (1, 1) { 1.0 } else { 0.0 });
        let g = sobel_magnitude(&img).unwrap();
        assert_eq!(g.get(1, 1), Some(0.0));
        assert_eq!(g.get(1, 2), Some(2.0));
        let grid = PatchGrid::new(2, 2).unwrap();
        assert_eq!(
            patch_density(&g, grid, 2.0).unwrap().per_patch[0],
            2.0 / 16.0
        );
        assert_eq!(
            patch_density(&g, grid, 1.4).unwrap().per_patch[0],
            3.0 / 16.0
        );
    }

    #[test]
    fn ramp_patch_counts_interior_only() {
        // Horizontal ramp: every interior pixel has gx = 8/7, above tau.
        let img = gray(8, 8, |_, c| c as f64 / 7.0);
        let d = text_density(&img, PatchGrid::new(1, 1).unwrap(), 0.2).unwrap();
        assert_eq!(d.per_patch, vec![36.0 / 64.0]);
        assert_eq!(d.mean, 0.5625);
    }

    #[test]
    fn grid_must_divide_image() {
        let img = gray(9, 8, |_, _| 0.0);
        assert!(text_density(&img, PatchGrid::new(2, 2).unwrap(), 0.2).is_err());
        assert!("0x4".parse::<PatchGrid>().is_err());
        assert!("16".parse::<PatchGrid>().is_err());
        assert_eq!(
            "16x12".parse::<PatchGrid>().unwrap(),
            PatchGrid::new(16, 12).unwrap()
        );
    }

    #[test]
    fn dynamic_ratio_examples() {
        let cfg = DynamicRatioConfig::default();
        assert_eq!(dynamic_ratio(0.9, 1.0, &cfg), 0.0);
        assert_eq!(dynamic_ratio(-0.3, 0.1, &cfg), 0.0);
        assert_eq!(dynamic_ratio(0.0, 0.1, &cfg), 0.0);
        assert!((dynamic_ratio(0.8, 0.4, &cfg) - 0.48).abs() < 1e-15);
        assert_eq!(dynamic_ratio(1.0, 0.0, &cfg), 0.5);
    }

    #[test]
    fn dynamic_config_validation() {
        let bad = [
            DynamicRatioConfig {
                phi_lo: 1.0,
                phi_hi: 1.0,
                ..Default::default()
            },
            DynamicRatioConfig {
                r_min: 0.6,
                r_max: 0.5,
                ..Default::default()
            },
            DynamicRatioConfig {
                r_max: 1.0,
                ..Default::default()
            },
            DynamicRatioConfig {
                r_min: -0.1,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
        assert!(DynamicRatioConfig::default().validate().is_ok());
    }
}
