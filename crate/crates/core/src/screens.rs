//! Synthetic screens and grounding tasks.
//!
//! A screen is a small two-channel raster holding a handful of non-overlapping
//! rectangular elements. Each element carries a `(shape_class, intensity_level)`
//! attribute pair that is unique on its screen, so an instruction naming those
//! attributes picks out exactly one target.
//!
//! Coordinates the policy emits live in a fixed `0..=999` normalized space so
//! every coordinate renders as exactly three digits.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest normalized coordinate.
pub const NORM_MAX: u32 = 999;

/// Integer point. Pixel or normalized, depending on context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Point {
    pub x: u32,
    pub y: u32,
}

impl Point {
    pub const fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }
}

/// Axis-aligned box with inclusive corners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BBox {
    pub const fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        Self { x0, y0, x1, y1 }
    }

    /// Number of pixel columns covered.
    pub fn width(&self) -> u32 {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0 + 1
    }

    /// Integer center, rounded toward the top-left.
    pub fn center(&self) -> Point {
        Point::new((self.x0 + self.x1) / 2, (self.y0 + self.y1) / 2)
    }

    fn overlaps_with_gap(&self, other: &BBox, gap: u32) -> bool {
        !(self.x1 + gap < other.x0
            || other.x1 + gap < self.x0
            || self.y1 + gap < other.y0
            || other.y1 + gap < self.y0)
    }
}

/// Boundary-inclusive membership test.
pub fn point_in_bbox(p: Point, b: &BBox) -> bool {
    b.x0 <= p.x && p.x <= b.x1 && b.y0 <= p.y && p.y <= b.y1
}

/// Two-channel raster: rendered content plus a marker overlay.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: u32,
    height: u32,
    content: Vec<f64>,
    marker: Vec<f64>,
}

impl Raster {
    pub fn new(width: u32, height: u32) -> Self {
        let n = (width * height) as usize;
        Self {
            width,
            height,
            content: vec![0.0; n],
            marker: vec![0.0; n],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    #[inline]
    fn index(&self, x: u32, y: u32) -> usize {
        (y * self.width + x) as usize
    }

    pub fn content(&self) -> &[f64] {
        &self.content
    }

    pub fn marker(&self) -> &[f64] {
        &self.marker
    }

    pub fn content_at(&self, x: u32, y: u32) -> f64 {
        self.content[self.index(x, y)]
    }

    pub fn marker_at(&self, x: u32, y: u32) -> f64 {
        self.marker[self.index(x, y)]
    }

    pub fn set_content(&mut self, x: u32, y: u32, v: f64) {
        let i = self.index(x, y);
        self.content[i] = v.clamp(0.0, 1.0);
    }

    pub fn set_marker(&mut self, x: u32, y: u32, v: f64) {
        let i = self.index(x, y);
        self.marker[i] = v.clamp(0.0, 1.0);
    }

    pub fn bounds(&self) -> BBox {
        BBox::new(0, 0, self.width - 1, self.height - 1)
    }

    /// Average-pools each channel into a `grid × grid` map. Content cells come
    /// first, then marker cells, both row-major.
    pub fn pooled(&self, grid: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * grid * grid);
        for channel in [&self.content, &self.marker] {
            for gy in 0..grid {
                let ya = gy * self.height as usize / grid;
                let yb = (gy + 1) * self.height as usize / grid;
                for gx in 0..grid {
                    let xa = gx * self.width as usize / grid;
                    let xb = (gx + 1) * self.width as usize / grid;
                    let mut sum = 0.0;
                    for y in ya..yb {
                        let row = y * self.width as usize;
                        sum += channel[row + xa..row + xb].iter().sum::<f64>();
                    }
                    let count = ((yb - ya) * (xb - xa)).max(1);
                    out.push(sum / count as f64);
                }
            }
        }
        out
    }
}

/// Maps a pixel to the normalized `0..=999` space.
pub fn normalize_point(p: Point, dims: (u32, u32)) -> Result<Point> {
    let (w, h) = dims;
    if p.x >= w || p.y >= h {
        return Err(Error::Domain(format!(
            "pixel ({}, {}) outside {}x{} raster",
            p.x, p.y, w, h
        )));
    }
    let nx = ((p.x as u64 * 1000) / w as u64).min(NORM_MAX as u64) as u32;
    let ny = ((p.y as u64 * 1000) / h as u64).min(NORM_MAX as u64) as u32;
    Ok(Point::new(nx, ny))
}

/// Maps a normalized point back to the pixel whose normalized cell contains it.
///
/// For rasters up to 1000 pixels wide this is an exact left inverse of
/// [`normalize_point`].
pub fn denormalize_point(p: Point, dims: (u32, u32)) -> Result<Point> {
    let (w, h) = dims;
    if p.x > NORM_MAX || p.y > NORM_MAX {
        return Err(Error::Domain(format!(
            "normalized point ({}, {}) outside 0..=999",
            p.x, p.y
        )));
    }
    let px = ((p.x as u64 * w as u64).div_ceil(1000) as u32).min(w - 1);
    let py = ((p.y as u64 * h as u64).div_ceil(1000) as u32).min(h - 1);
    Ok(Point::new(px, py))
}

fn normalize_bbox(b: &BBox, dims: (u32, u32)) -> Result<BBox> {
    let a = normalize_point(Point::new(b.x0, b.y0), dims)?;
    let c = normalize_point(Point::new(b.x1, b.y1), dims)?;
    Ok(BBox::new(a.x, a.y, c.x, c.y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScreenConfig {
    pub width: u32,
    pub height: u32,
    pub min_elements: usize,
    pub max_elements: usize,
    pub min_element_size: u32,
    pub max_element_size: u32,
    pub shape_classes: usize,
    pub intensity_levels: usize,
}

impl Default for ScreenConfig {
    fn default() -> Self {
        Self {
            width: 96,
            height: 96,
            min_elements: 3,
            max_elements: 8,
            min_element_size: 8,
            max_element_size: 20,
            shape_classes: 3,
            intensity_levels: 8,
        }
    }
}

impl ScreenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScreenConfig(m));
        if self.width < 8 || self.height < 8 {
            return bad(format!("raster {}x{} below 8x8", self.width, self.height));
        }
        if self.min_elements == 0 || self.min_elements > self.max_elements {
            return bad(format!(
                "element range {}..={} is empty",
                self.min_elements, self.max_elements
            ));
        }
        if self.min_element_size == 0 || self.min_element_size > self.max_element_size {
            return bad("element size range is empty".into());
        }
        if self.max_element_size > self.width.min(self.height) {
            return bad("max element size exceeds raster".into());
        }
        if self.shape_classes == 0 || self.intensity_levels < 2 {
            return bad("need at least one shape class and two intensity levels".into());
        }
        if self.max_elements > self.intensity_levels {
            return bad(format!(
                "{} elements cannot carry distinct intensity levels out of {}",
                self.max_elements, self.intensity_levels
            ));
        }
        // Each element plus its one-pixel gap must fit somewhere.
        let cell = (self.min_element_size + 1) as u64;
        let cap = ((self.width as u64 + 1) / cell) * ((self.height as u64 + 1) / cell);
        if self.max_elements as u64 > cap {
            return bad(format!(
                "{} elements of at least {}px do not fit without overlap",
                self.max_elements, self.min_element_size
            ));
        }
        Ok(())
    }

    /// Cardinality of each instruction attribute: `[shape_class, intensity_level]`.
    pub fn instruction_cardinalities(&self) -> Vec<usize> {
        vec![self.shape_classes, self.intensity_levels]
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    fn intensity(&self, level: usize) -> f64 {
        0.3 + 0.7 * level as f64 / (self.intensity_levels - 1) as f64
    }
}

/// One rectangular screen element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub bbox: BBox,
    pub shape_class: usize,
    pub intensity_level: usize,
    pub intensity: f64,
}

impl Element {
    fn descriptor(&self) -> Vec<usize> {
        vec![self.shape_class, self.intensity_level]
    }
}

/// A screen, an instruction, and the element the instruction names.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundingTask {
    pub seed: u64,
    pub raster: Raster,
    pub elements: Vec<Element>,
    pub instruction: Vec<usize>,
    pub target_index: usize,
    pub target_bbox_norm: BBox,
}

impl GroundingTask {
    pub fn target(&self) -> &Element {
        &self.elements[self.target_index]
    }

    /// Ground-truth click point: center of the normalized target box.
    pub fn target_point(&self) -> Point {
        self.target_bbox_norm.center()
    }

    /// Indices of elements whose attributes match the instruction.
    pub fn matching_elements(&self) -> Vec<usize> {
        self.elements
            .iter()
            .enumerate()
            .filter(|(_, e)| e.descriptor() == self.instruction)
            .map(|(i, _)| i)
            .collect()
    }
}

const PLACEMENT_ATTEMPTS: usize = 2000;
const SPLIT_SHUFFLE_SEED: u64 = 0x5eed_5b17;

fn render(raster: &mut Raster, e: &Element) {
    let b = e.bbox;
    for y in b.y0..=b.y1 {
        for x in b.x0..=b.x1 {
            let on = match e.shape_class % 3 {
                0 => true,
                // outline, two pixels thick
                1 => x < b.x0 + 2 || x + 2 > b.x1 || y < b.y0 + 2 || y + 2 > b.y1,
                // horizontal stripes
                _ => (y - b.y0) % 2 == 0,
            };
            if on {
                raster.set_content(x, y, e.intensity);
            }
        }
    }
}

/// Generates the task for `seed`. Pure in `(seed, config)`.
pub fn generate_task(seed: u64, config: &ScreenConfig) -> Result<GroundingTask> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(config.min_elements..=config.max_elements);

    let mut levels: Vec<usize> = (0..config.intensity_levels).collect();
    levels.shuffle(&mut rng);

    let mut elements: Vec<Element> = Vec::with_capacity(n);
    for &level in levels.iter().take(n) {
        let mut placed = None;
        for attempt in 0..PLACEMENT_ATTEMPTS {
            // Fall back to minimum-size elements once the screen gets crowded.
            let (w, h) = if attempt < PLACEMENT_ATTEMPTS / 2 {
                (
                    rng.gen_range(config.min_element_size..=config.max_element_size),
                    rng.gen_range(config.min_element_size..=config.max_element_size),
                )
            } else {
                (config.min_element_size, config.min_element_size)
            };
            let x0 = rng.gen_range(0..=config.width - w);
            let y0 = rng.gen_range(0..=config.height - h);
            let bbox = BBox::new(x0, y0, x0 + w - 1, y0 + h - 1);
            if elements.iter().all(|e| !e.bbox.overlaps_with_gap(&bbox, 1)) {
                placed = Some(bbox);
                break;
            }
        }
        let bbox = placed.ok_or_else(|| Error::Generation {
            seed,
            reason: format!("could not place element {} of {}", elements.len() + 1, n),
        })?;
        elements.push(Element {
            bbox,
            shape_class: rng.gen_range(0..config.shape_classes),
            intensity_level: level,
            intensity: config.intensity(level),
        });
    }

    let mut raster = Raster::new(config.width, config.height);
    for e in &elements {
        render(&mut raster, e);
    }

    let target_index = rng.gen_range(0..n);
    let target = &elements[target_index];
    let target_bbox_norm = normalize_bbox(&target.bbox, config.dims())?;
    Ok(GroundingTask {
        seed,
        instruction: target.descriptor(),
        raster,
        target_index,
        target_bbox_norm,
        elements,
    })
}

/// Deterministically partitions `seeds` into disjoint train and eval sets.
///
/// The eval share is rounded to the nearest count and clamped so both sides
/// hold at least one seed when the range has two or more.
pub fn split_dataset(
    seeds: std::ops::Range<u64>,
    ratios: (f64, f64),
) -> Result<(Vec<u64>, Vec<u64>)> {
    let (train, eval) = ratios;
    if !(train > 0.0 && eval > 0.0) || ((train + eval) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidRatios { train, eval });
    }
    if seeds.is_empty() {
        return Err(Error::EmptyRange);
    }
    let n = (seeds.end - seeds.start) as usize;
    let mut all: Vec<u64> = seeds.collect();
    let mut rng = ChaCha8Rng::seed_from_u64(SPLIT_SHUFFLE_SEED);
    all.shuffle(&mut rng);
    let mut n_eval = (n as f64 * eval).round() as usize;
    n_eval = n_eval.max(1);
    if n >= 2 {
        n_eval = n_eval.min(n - 1);
    }
    let mut eval_set = all.split_off(n - n_eval);
    all.sort_unstable();
    eval_set.sort_unstable();
    Ok((all, eval_set))
}

/// Reference counts used by tests: distinct target centers among `seeds`.
pub fn distinct_target_centers(
    seeds: impl IntoIterator<Item = u64>,
    config: &ScreenConfig,
) -> Result<usize> {
    let mut set = HashSet::new();
    for s in seeds {
        set.insert(generate_task(s, config)?.target_point());
    }
    Ok(set.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_task() {
        let cfg = ScreenConfig::default();
        let a = generate_task(0, &cfg).unwrap();
        let b = generate_task(0, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn target_box_in_normalized_range() {
        let cfg = ScreenConfig::default();
        for seed in 0..200 {
            let t = generate_task(seed, &cfg).unwrap();
            let b = t.target_bbox_norm;
            assert!(b.x1 <= NORM_MAX && b.y1 <= NORM_MAX);
            assert!(b.x0 <= b.x1 && b.y0 <= b.y1);
        }
    }

    #[test]
    fn instruction_matches_exactly_one_element() {
        let cfg = ScreenConfig::default();
        for seed in 0..300 {
            let t = generate_task(seed, &cfg).unwrap();
            assert_eq!(t.matching_elements(), vec![t.target_index], "seed {seed}");
        }
    }

    #[test]
    fn elements_inside_raster_and_disjoint() {
        let cfg = ScreenConfig::default();
        for seed in 0..200 {
            let t = generate_task(seed, &cfg).unwrap();
            assert!((cfg.min_elements..=cfg.max_elements).contains(&t.elements.len()));
            for (i, a) in t.elements.iter().enumerate() {
                assert!(a.bbox.x1 < cfg.width && a.bbox.y1 < cfg.height);
                assert!(a.bbox.width() >= cfg.min_element_size);
                for b in &t.elements[i + 1..] {
                    assert!(!a.bbox.overlaps_with_gap(&b.bbox, 0));
                }
            }
        }
    }

    #[test]
    fn marker_channel_starts_empty() {
        let t = generate_task(3, &ScreenConfig::default()).unwrap();
        assert!(t.raster.marker().iter().all(|&v| v == 0.0));
        assert!(t.raster.content().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn overcrowded_config_is_rejected() {
        let cfg = ScreenConfig {
            width: 16,
            height: 16,
            min_elements: 8,
            max_elements: 8,
            min_element_size: 8,
            max_element_size: 8,
            ..ScreenConfig::default()
        };
        assert!(matches!(
            generate_task(0, &cfg),
            Err(Error::InvalidScreenConfig(_))
        ));
    }

    #[test]
    fn many_distinct_target_centers() {
        // Enumerated count over seeds 0..500 at the default config.
        let n = distinct_target_centers(0..500, &ScreenConfig::default()).unwrap();
        assert!(n >= 100, "only {n} distinct centers");
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(
            normalize_point(Point::new(0, 0), (96, 96)).unwrap(),
            Point::new(0, 0)
        );
        let far = normalize_point(Point::new(95, 77), (96, 78)).unwrap();
        assert!(far.x <= 999 && far.x >= 95 * 1000 / 96);
        assert!(far.y <= 999 && far.y >= 77 * 1000 / 78);
        assert_eq!(
            normalize_point(Point::new(50, 0), (100, 100)).unwrap().x,
            500
        );
        assert!(normalize_point(Point::new(96, 0), (96, 96)).is_err());
    }

    #[test]
    fn denormalize_inverts_normalize() {
        for dims in [(96, 96), (8, 8), (100, 37), (999, 1000), (1000, 640)] {
            for x in 0..dims.0 {
                let y = (x * 7) % dims.1;
                let p = Point::new(x, y);
                let n = normalize_point(p, dims).unwrap();
                assert_eq!(denormalize_point(n, dims).unwrap(), p, "{dims:?}");
            }
        }
    }

    #[test]
    fn bbox_membership_is_inclusive() {
        let b = BBox::new(0, 0, 10, 10);
        assert!(point_in_bbox(Point::new(5, 5), &b));
        assert!(point_in_bbox(Point::new(10, 10), &b));
        assert!(point_in_bbox(Point::new(0, 0), &b));
        assert!(!point_in_bbox(Point::new(11, 5), &b));
    }

    #[test]
    fn split_examples() {
        let (tr, ev) = split_dataset(0..1000, (0.8, 0.2)).unwrap();
        assert_eq!((tr.len(), ev.len()), (800, 200));
        let again = split_dataset(0..1000, (0.8, 0.2)).unwrap();
        assert_eq!((tr.clone(), ev.clone()), again);
        let mut all: Vec<u64> = tr.iter().chain(ev.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());

        // 100 * 0.001 rounds to 0; the floor keeps one eval seed.
        let (tr, ev) = split_dataset(0..100, (0.999, 0.001)).unwrap();
        assert_eq!((tr.len(), ev.len()), (99, 1));

        assert!(matches!(
            split_dataset(5..5, (0.5, 0.5)),
            Err(Error::EmptyRange)
        ));
        assert!(split_dataset(0..10, (0.5, 0.6)).is_err());
    }

    #[test]
    fn pooling_averages_cells() {
        let mut r = Raster::new(8, 8);
        for y in 0..4 {
            for x in 0..4 {
                r.set_content(x, y, 1.0);
            }
        }
        let f = r.pooled(2);
        assert_eq!(f.len(), 8);
        assert_eq!(&f[..4], &[1.0, 0.0, 0.0, 0.0]);
        assert!(f[4..].iter().all(|&v| v == 0.0));
    }
}
