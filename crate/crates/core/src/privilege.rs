//! Teacher-only privileged views of a task.
//!
//! Every transform returns a new raster and leaves the input untouched. The
//! content channel is attenuated or cropped; the marker channel carries the
//! drawn target outline.

use serde::{Deserialize, Serialize};

use crate::screens::{BBox, GroundingTask, Point, Raster};
use crate::tokens::{encode_point, TokenTrajectory};

/// What extra context the teacher sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrivilegeMode {
    NoPrivilege,
    TextCoordinate,
    DrawnBBox,
    GaussianZoom,
    StandardZoomHard,
    AdaptiveZoomHard,
}

impl PrivilegeMode {
    pub const ALL: [PrivilegeMode; 6] = [
        PrivilegeMode::NoPrivilege,
        PrivilegeMode::TextCoordinate,
        PrivilegeMode::DrawnBBox,
        PrivilegeMode::GaussianZoom,
        PrivilegeMode::StandardZoomHard,
        PrivilegeMode::AdaptiveZoomHard,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PrivilegeMode::NoPrivilege => "no_privilege",
            PrivilegeMode::TextCoordinate => "text_coordinate",
            PrivilegeMode::DrawnBBox => "drawn_bbox",
            PrivilegeMode::GaussianZoom => "gaussian_zoom",
            PrivilegeMode::StandardZoomHard => "standard_zoom_hard",
            PrivilegeMode::AdaptiveZoomHard => "adaptive_zoom_hard",
        }
    }

    /// Modes that draw the target outline also raise the hint flag.
    pub fn draws_marker(&self) -> bool {
        matches!(
            self,
            PrivilegeMode::DrawnBBox
                | PrivilegeMode::GaussianZoom
                | PrivilegeMode::StandardZoomHard
                | PrivilegeMode::AdaptiveZoomHard
        )
    }
}

impl std::str::FromStr for PrivilegeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PrivilegeMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown privilege mode '{s}'"))
    }
}

impl std::fmt::Display for PrivilegeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrivilegeConfig {
    /// Multiplier on the geometric mean of the target sides.
    pub sigma_scale: f64,
    /// σ never drops below `sigma_floor_coef * min(W, H)`.
    pub sigma_floor_coef: f64,
    /// Side of the fixed visible window; `None` means `ceil(min(W, H) / 2)`.
    pub standard_window: Option<u32>,
    pub adaptive_factor: f64,
}

impl Default for PrivilegeConfig {
    fn default() -> Self {
        Self {
            sigma_scale: 1.5,
            sigma_floor_coef: 0.1f64.sqrt(),
            standard_window: None,
            adaptive_factor: 3.0,
        }
    }
}

/// Euclidean distance from `p` to the nearest point of `b` (0 inside).
pub fn distance_to_bbox(p: Point, b: &BBox) -> f64 {
    let dx = if p.x < b.x0 {
        b.x0 - p.x
    } else if p.x > b.x1 {
        p.x - b.x1
    } else {
        0
    } as f64;
    let dy = if p.y < b.y0 {
        b.y0 - p.y
    } else if p.y > b.y1 {
        p.y - b.y1
    } else {
        0
    } as f64;
    dx.hypot(dy)
}

/// Mask width: `max(scale * sqrt(w * h), floor_coef * min(W, H))`.
pub fn compute_sigma(b: &BBox, dims: (u32, u32), scale: f64, floor_coef: f64) -> f64 {
    let area = b.width() as f64 * b.height() as f64;
    let floor = floor_coef * dims.0.min(dims.1) as f64;
    (scale * area.sqrt()).max(floor)
}

/// Attenuation factor at distance `d`.
#[inline]
pub fn mask_factor(d: f64, sigma: f64) -> f64 {
    (-(d * d) / (2.0 * sigma * sigma)).exp()
}

/// Attenuates content by `exp(-d² / 2σ²)`, `d` measured to the target box.
pub fn gaussian_soft_mask(r: &Raster, b: &BBox, sigma: f64) -> Raster {
    let mut out = r.clone();
    for y in 0..r.height() {
        for x in 0..r.width() {
            let d = distance_to_bbox(Point::new(x, y), b);
            if d > 0.0 {
                out.set_content(x, y, r.content_at(x, y) * mask_factor(d, sigma));
            }
        }
    }
    out
}

/// Sets the one-pixel border of `b` to 1 on the marker channel.
pub fn draw_bbox_marker(r: &Raster, b: &BBox) -> Raster {
    let mut out = r.clone();
    for x in b.x0..=b.x1 {
        out.set_marker(x, b.y0, 1.0);
        out.set_marker(x, b.y1, 1.0);
    }
    for y in b.y0..=b.y1 {
        out.set_marker(b.x0, y, 1.0);
        out.set_marker(b.x1, y, 1.0);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HardMask {
    /// Fixed `window × window` region centered on the target.
    Standard { window: u32 },
    /// Target box scaled by `factor` about its center.
    Adaptive { factor: f64 },
}

/// Region left visible by a hard mask, clipped to the raster.
pub fn visible_region(b: &BBox, dims: (u32, u32), mode: HardMask) -> BBox {
    let cx = (b.x0 + b.x1 + 1) as f64 / 2.0;
    let cy = (b.y0 + b.y1 + 1) as f64 / 2.0;
    let (half_w, half_h) = match mode {
        HardMask::Standard { window } => (window as f64 / 2.0, window as f64 / 2.0),
        HardMask::Adaptive { factor } => (
            factor * b.width() as f64 / 2.0,
            factor * b.height() as f64 / 2.0,
        ),
    };
    let clip = |lo: f64, hi: f64, n: u32| {
        let a = lo.round().max(0.0) as i64;
        let z = (hi.round() as i64 - 1).min(n as i64 - 1);
        (a as u32, z.max(a) as u32)
    };
    let (x0, x1) = clip(cx - half_w, cx + half_w, dims.0);
    let (y0, y1) = clip(cy - half_h, cy + half_h, dims.1);
    BBox::new(x0, y0, x1, y1)
}

/// Zeroes the content channel outside the visible region.
pub fn hard_mask(r: &Raster, b: &BBox, mode: HardMask) -> Raster {
    let keep = visible_region(b, r.dims(), mode);
    let mut out = r.clone();
    for y in 0..r.height() {
        for x in 0..r.width() {
            if !crate::screens::point_in_bbox(Point::new(x, y), &keep) {
                out.set_content(x, y, 0.0);
            }
        }
    }
    out
}

/// The teacher's view of a task.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivilegedContext {
    pub raster: Raster,
    pub hint_flag: bool,
    pub answer_tokens: Option<TokenTrajectory>,
}

pub fn build_privileged_context(
    task: &GroundingTask,
    mode: PrivilegeMode,
    cfg: &PrivilegeConfig,
) -> PrivilegedContext {
    let pixel_box = task.target().bbox;
    let dims = task.raster.dims();
    let raster = match mode {
        PrivilegeMode::NoPrivilege | PrivilegeMode::TextCoordinate => task.raster.clone(),
        PrivilegeMode::DrawnBBox => draw_bbox_marker(&task.raster, &pixel_box),
        PrivilegeMode::GaussianZoom => {
            let sigma = compute_sigma(&pixel_box, dims, cfg.sigma_scale, cfg.sigma_floor_coef);
            let masked = gaussian_soft_mask(&task.raster, &pixel_box, sigma);
            draw_bbox_marker(&masked, &pixel_box)
        }
        PrivilegeMode::StandardZoomHard => {
            let window = cfg
                .standard_window
                .unwrap_or_else(|| dims.0.min(dims.1).div_ceil(2));
            let masked = hard_mask(&task.raster, &pixel_box, HardMask::Standard { window });
            draw_bbox_marker(&masked, &pixel_box)
        }
        PrivilegeMode::AdaptiveZoomHard => {
            let factor = cfg.adaptive_factor;
            let masked = hard_mask(&task.raster, &pixel_box, HardMask::Adaptive { factor });
            draw_bbox_marker(&masked, &pixel_box)
        }
    };
    let answer_tokens = match mode {
        PrivilegeMode::TextCoordinate => {
            Some(encode_point(task.target_point()).expect("target point is normalized"))
        }
        _ => None,
    };
    PrivilegedContext {
        raster,
        hint_flag: mode.draws_marker(),
        answer_tokens,
    }
}

/// Plain-text PGM (P2, maxval 255) of one channel.
pub fn to_pgm(r: &Raster, marker_channel: bool) -> String {
    let data = if marker_channel {
        r.marker()
    } else {
        r.content()
    };
    let mut s = format!("P2\n{} {}\n255\n", r.width(), r.height());
    for row in data.chunks(r.width() as usize) {
        let line: Vec<String> = row
            .iter()
            .map(|v| ((v * 255.0).round() as u8).to_string())
            .collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}
