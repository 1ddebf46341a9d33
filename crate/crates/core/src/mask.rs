//! Cumulative region masks.
//!
//! A mask only ever grows: each accepted detection is OR-ed into it, so a
//! region seen once stays covered for the rest of the trajectory even if the
//! detector misses it later.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Default confidence threshold for accepting a detection.
pub const DEFAULT_TAU: f64 = 0.4;

/// A binary `h x w` grid stored row-major with values in `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryGrid {
    h: usize,
    w: usize,
    data: Vec<u8>,
}

impl BinaryGrid {
    pub fn zeros(h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::invalid(format!("grid dimensions must be positive, got {h}x{w}")));
        }
        Ok(Self {
            h,
            w,
            data: vec![0; h * w],
        })
    }

    pub fn ones(h: usize, w: usize) -> Result<Self> {
        let mut g = Self::zeros(h, w)?;
        g.data.fill(1);
        Ok(g)
    }

    /// Builds a grid from any nonzero/zero values.
    pub fn from_fn(h: usize, w: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        let mut g = Self::zeros(h, w)?;
        for y in 0..h {
            for x in 0..w {
                g.data[y * w + x] = f(y, x) as u8;
            }
        }
        Ok(g)
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.w + x] != 0
    }

    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        self.data[y * self.w + x] = on as u8;
    }

    pub fn area(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    /// True when every set cell of `other` is also set here.
    pub fn contains(&self, other: &BinaryGrid) -> bool {
        self.h == other.h && self.w == other.w && self.data.iter().zip(&other.data).all(|(&a, &b)| a >= b)
    }

    fn check_dims(&self, other: &BinaryGrid) -> Result<()> {
        if self.h != other.h || self.w != other.w {
            return Err(Error::invalid(format!(
                "mask is {}x{} but detection is {}x{}",
                self.h, self.w, other.h, other.w
            )));
        }
        Ok(())
    }

    /// `[h, w]` tensor of 0.0 / 1.0.
    pub fn to_tensor(&self) -> Tensor {
        tensor::from_vec(&[self.h, self.w], self.data.iter().map(|&v| v as f64).collect()).expect("shape")
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let px: Vec<u8> = self.data.iter().map(|&v| v * 255).collect();
        let img = image::GrayImage::from_raw(self.w as u32, self.h as u32, px).expect("buffer size");
        img.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_luma8();
        let (w, h) = img.dimensions();
        let mut g = Self::zeros(h as usize, w as usize)?;
        for (i, p) in img.pixels().enumerate() {
            g.data[i] = (p.0[0] >= 128) as u8;
        }
        Ok(g)
    }
}

/// Output of a region detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub region: BinaryGrid,
    /// Confidence in `[0, 1]`.
    pub score: f64,
}

impl Detection {
    pub fn empty(h: usize, w: usize) -> Result<Self> {
        Ok(Self {
            region: BinaryGrid::zeros(h, w)?,
            score: 0.0,
        })
    }
}

/// Finds hand-like regions in a `[C, H, W]` or `[H, W]` pixel image.
pub trait RegionDetector: Send + Sync {
    fn detect(&self, image: &Tensor) -> Result<Detection>;
}

/// Collapses a pixel tensor to a single `[H, W]` intensity plane.
pub fn intensity_plane(image: &Tensor) -> Result<(usize, usize, Vec<f64>)> {
    let (c, h, w) = match image.shape() {
        [h, w] => (1, *h, *w),
        [c, h, w] => (*c, *h, *w),
        s => {
            return Err(Error::Detector(format!(
                "expected [C, H, W] or [H, W] image, got {s:?}"
            )))
        }
    };
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::Detector("empty image".into()));
    }
    if !tensor::all_finite(image) {
        return Err(Error::Detector("image has non-finite pixels".into()));
    }
    let flat: Vec<f64> = image.iter().copied().collect();
    let plane = (0..h * w)
        .map(|i| (0..c).map(|k| flat[k * h * w + i]).sum::<f64>() / c as f64)
        .collect();
    Ok((h, w, plane))
}

/// Labels 4-connected components of `on`, returning one pixel list per component.
pub fn connected_components(h: usize, w: usize, on: &[bool]) -> Vec<Vec<usize>> {
    let mut seen = vec![false; h * w];
    let mut comps = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !on[start] || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            comp.push(i);
            let (y, x) = (i / w, i % w);
            let mut visit = |j: usize| {
                if on[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps
}

/// Bundled stand-in detector: the largest 4-connected region brighter than a
/// threshold, scored by its mean intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobDetector {
    pub intensity_threshold: f64,
}

impl Default for BlobDetector {
    fn default() -> Self {
        Self {
            intensity_threshold: 0.5,
        }
    }
}

impl RegionDetector for BlobDetector {
    fn detect(&self, image: &Tensor) -> Result<Detection> {
        synthetic_detect(image, self.intensity_threshold)
    }
}

pub fn synthetic_detect(image: &Tensor, intensity_threshold: f64) -> Result<Detection> {
    let (h, w, plane) = intensity_plane(image)?;
    let on: Vec<bool> = plane.iter().map(|&v| v > intensity_threshold).collect();
    let comps = connected_components(h, w, &on);
    // ties go to the component found first in raster order
    let Some(best) = comps.iter().fold(None::<&Vec<usize>>, |best, c| match best {
        Some(b) if b.len() >= c.len() => Some(b),
        _ => Some(c),
    }) else {
        return Detection::empty(h, w);
    };
    let mut region = BinaryGrid::zeros(h, w)?;
    for &i in best {
        region.data[i] = 1;
    }
    let mean = best.iter().map(|&i| plane[i]).sum::<f64>() / best.len() as f64;
    Ok(Detection {
        region,
        score: mean.clamp(0.0, 1.0),
    })
}

/// A monotonically growing binary mask with an optional area log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeMask {
    pub grid: BinaryGrid,
    /// Area after each update.
    pub history: Vec<usize>,
}

pub fn init_mask(h: usize, w: usize) -> Result<CumulativeMask> {
    Ok(CumulativeMask {
        grid: BinaryGrid::zeros(h, w)?,
        history: Vec::new(),
    })
}

/// `max(M, 1[S >= tau] * D)`, returned as a new mask.
pub fn update_mask(m: &CumulativeMask, det: &Detection, tau: f64) -> Result<CumulativeMask> {
    m.grid.check_dims(&det.region)?;
    let mut next = m.clone();
    if det.score >= tau {
        for (a, &b) in next.grid.data.iter_mut().zip(&det.region.data) {
            *a = (*a).max(b);
        }
    }
    next.history.push(next.grid.area());
    Ok(next)
}

/// Applies several detections in order.
pub fn update_mask_all(m: &CumulativeMask, dets: &[Detection], tau: f64) -> Result<CumulativeMask> {
    let mut out = m.clone();
    for d in dets {
        out = update_mask(&out, d, tau)?;
    }
    Ok(out)
}

impl CumulativeMask {
    pub fn area(&self) -> usize {
        self.grid.area()
    }

    /// Square dilation by `radius` cells; not applied unless asked for.
    pub fn dilated(&self, radius: usize) -> CumulativeMask {
        if radius == 0 {
            return self.clone();
        }
        let (h, w) = (self.grid.h, self.grid.w);
        let mut grid = self.grid.clone();
        for y in 0..h {
            for x in 0..w {
                if !self.grid.get(y, x) {
                    continue;
                }
                for yy in y.saturating_sub(radius)..=(y + radius).min(h - 1) {
                    for xx in x.saturating_sub(radius)..=(x + radius).min(w - 1) {
                        grid.set(yy, xx, true);
                    }
                }
            }
        }
        CumulativeMask {
            grid,
            history: self.history.clone(),
        }
    }

    /// Writes the per-update areas as one JSON object per line.
    pub fn write_area_log(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for (step, area) in self.history.iter().enumerate() {
            writeln!(f, "{}", serde_json::json!({ "update": step, "area": area })).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

/// Max-pools a pixel mask onto a coarser grid: pixel `(i, j)` belongs to
/// latent cell `(i * lh / H, j * lw / W)`.
pub fn downsample_mask(m: &BinaryGrid, lh: usize, lw: usize) -> Result<BinaryGrid> {
    if lh == 0 || lw == 0 || lh > m.h || lw > m.w {
        return Err(Error::invalid(format!(
            "cannot downsample a {}x{} mask to {lh}x{lw}",
            m.h, m.w
        )));
    }
    let mut out = BinaryGrid::zeros(lh, lw)?;
    for y in 0..m.h {
        for x in 0..m.w {
            if m.get(y, x) {
                out.set(y * lh / m.h, x * lw / m.w, true);
            }
        }
    }
    Ok(out)
}

/// Zeroes `grad` outside the mask. `grad` is `[..., h, w]` with the mask
/// broadcast over the leading axes.
pub fn apply_mask(grad: &Tensor, mask: &BinaryGrid) -> Result<Tensor> {
    let nd = grad.ndim();
    if nd < 2 || grad.shape()[nd - 2] != mask.h || grad.shape()[nd - 1] != mask.w {
        return Err(Error::invalid(format!(
            "gradient {:?} does not end in the {}x{} mask resolution",
            grad.shape(),
            mask.h,
            mask.w
        )));
    }
    let plane = mask.h * mask.w;
    let mut out = grad.as_standard_layout().into_owned();
    for (i, v) in out.iter_mut().enumerate() {
        if mask.data[i % plane] == 0 {
            *v = 0.0;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn det_with(h: usize, w: usize, cells: &[(usize, usize)], score: f64) -> Detection {
        let mut region = BinaryGrid::zeros(h, w).unwrap();
        for &(y, x) in cells {
            region.set(y, x, true);
        }
        Detection { region, score }
    }

    #[test]
    fn init_is_all_zero() {
        let m = init_mask(4, 4).unwrap();
        assert_eq!(m.area(), 0);
        assert_eq!(init_mask(1, 1).unwrap().grid.as_slice(), &[0]);
        assert!(init_mask(0, 3).is_err());
    }

    #[test]
    fn update_follows_threshold() {
        let m = init_mask(4, 4).unwrap();
        let d = det_with(4, 4, &[(1, 2)], 0.5);
        assert_eq!(update_mask(&m, &d, 0.4).unwrap().grid, d.region);
        let weak = det_with(4, 4, &[(1, 2)], 0.3);
        assert_eq!(update_mask(&m, &weak, 0.4).unwrap().grid, m.grid);
        let exact = det_with(4, 4, &[(0, 0)], 0.4);
        assert_eq!(update_mask(&m, &exact, 0.4).unwrap().area(), 1);
        let below = det_with(4, 4, &[(0, 0)], 0.4 - 1e-12);
        assert_eq!(update_mask(&m, &below, 0.4).unwrap().area(), 0);
    }

    #[test]
    fn set_cells_survive_missing_detections() {
        let m = update_mask(&init_mask(3, 3).unwrap(), &det_with(3, 3, &[(1, 1)], 0.9), 0.4).unwrap();
        let m2 = update_mask(&m, &det_with(3, 3, &[], 0.9), 0.4).unwrap();
        assert!(m2.grid.get(1, 1));
        assert_eq!(m2.history, vec![1, 1]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let m = init_mask(3, 3).unwrap();
        assert!(update_mask(&m, &det_with(4, 4, &[], 1.0), 0.4).is_err());
    }

    #[test]
    fn downsample_block_arithmetic() {
        let full = BinaryGrid::ones(32, 32).unwrap();
        assert_eq!(downsample_mask(&full, 16, 16).unwrap().area(), 256);
        let mut one = BinaryGrid::zeros(32, 32).unwrap();
        one.set(13, 30, true);
        let d = downsample_mask(&one, 16, 16).unwrap();
        assert_eq!(d.area(), 1);
        assert!(d.get(6, 15));
        let d = downsample_mask(&one, 5, 7).unwrap();
        assert_eq!(d.area(), 1);
        assert!(d.get(13 * 5 / 32, 30 * 7 / 32));
        assert!(downsample_mask(&one, 33, 4).is_err());
    }

    #[test]
    fn blob_detector_fixtures() {
        let black = tensor::zeros(&[1, 8, 8]);
        let d = synthetic_detect(&black, 0.5).unwrap();
        assert_eq!((d.region.area(), d.score), (0, 0.0));

        let mut img = tensor::zeros(&[1, 8, 8]);
        for y in 2..5 {
            for x in 3..6 {
                img[[0, y, x]] = 1.0;
            }
        }
        let d = synthetic_detect(&img, 0.5).unwrap();
        assert_eq!(
            d.region,
            BinaryGrid::from_fn(8, 8, |y, x| (2..5).contains(&y) && (3..6).contains(&x)).unwrap()
        );
        assert_eq!(d.score, 1.0);

        img[[0, 7, 0]] = 0.8;
        img[[0, 7, 1]] = 0.8;
        let d = synthetic_detect(&img, 0.5).unwrap();
        assert_eq!(d.region.area(), 9);
        assert!(!d.region.get(7, 0));
    }

    #[test]
    fn detector_rejects_non_finite_images() {
        let mut img = tensor::zeros(&[1, 4, 4]);
        img[[0, 0, 0]] = f64::NAN;
        assert!(matches!(synthetic_detect(&img, 0.5), Err(Error::Detector(_))));
    }

    #[test]
    fn apply_mask_cases() {
        let g = Tensor::from_elem(ndarray::IxDyn(&[2, 1, 4, 4]), 3.0);
        let ones = BinaryGrid::ones(4, 4).unwrap();
        assert!(tensor::bit_equal(&apply_mask(&g, &ones).unwrap(), &g));
        let zeros = BinaryGrid::zeros(4, 4).unwrap();
        assert!(apply_mask(&g, &zeros).unwrap().iter().all(|&v| v == 0.0));
        let half = BinaryGrid::from_fn(4, 4, |_, x| x < 2).unwrap();
        let out = apply_mask(&g, &half).unwrap();
        for n in 0..2 {
            for y in 0..4 {
                for x in 0..4 {
                    assert_eq!(out[[n, 0, y, x]], if x < 2 { 3.0 } else { 0.0 });
                }
            }
        }
        assert!(apply_mask(&g, &BinaryGrid::ones(3, 4).unwrap()).is_err());
    }

    #[test]
    fn png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let g = BinaryGrid::from_fn(5, 7, |y, x| (x + y) % 3 == 0).unwrap();
        let p = dir.path().join("m.png");
        g.write_png(&p).unwrap();
        assert_eq!(BinaryGrid::read_png(&p).unwrap(), g);
    }

    #[test]
    fn dilation_grows_by_radius() {
        let m = update_mask(&init_mask(5, 5).unwrap(), &det_with(5, 5, &[(2, 2)], 1.0), 0.4).unwrap();
        assert_eq!(m.dilated(1).area(), 9);
        assert_eq!(m.dilated(0), m);
    }

    fn stream() -> impl Strategy<Value = Vec<(Vec<bool>, f64)>> {
        prop::collection::vec((prop::collection::vec(any::<bool>(), 36), 0.0..1.0f64), 1..12)
    }

    proptest! {
        #[test]
        fn area_never_decreases(s in stream(), tau in 0.0..1.0f64) {
            let mut m = init_mask(6, 6).unwrap();
            let mut prev = 0;
            for (cells, score) in s {
                let d = Detection { region: BinaryGrid::from_fn(6, 6, |y, x| cells[y * 6 + x]).unwrap(), score };
                let next = update_mask(&m, &d, tau).unwrap();
                prop_assert!(next.grid.contains(&m.grid));
                prop_assert!(next.area() >= prev);
                prop_assert!(downsample_mask(&next.grid, 3, 2).unwrap().contains(&downsample_mask(&m.grid, 3, 2).unwrap()));
                prev = next.area();
                m = next;
            }
        }

        #[test]
        fn update_is_idempotent(cells in prop::collection::vec(any::<bool>(), 16), score in 0.0..1.0f64, tau in 0.0..1.0f64) {
            let d = Detection { region: BinaryGrid::from_fn(4, 4, |y, x| cells[y * 4 + x]).unwrap(), score };
            let once = update_mask(&init_mask(4, 4).unwrap(), &d, tau).unwrap();
            let twice = update_mask(&once, &d, tau).unwrap();
            prop_assert_eq!(once.grid, twice.grid);
        }
    }
}
