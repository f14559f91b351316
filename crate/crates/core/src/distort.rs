//! The distorted-digit benchmark: nine distortion kinds, each driven by a
//! level parameter on the 0.1..=1.0 grid.
//!
//! Randomness is derived by hashing (seed, kind, entity) and arranged so
//! the affected pixel set at a lower level is contained in the set at a
//! higher level ("nested"); the changed-pixel fraction is then monotone in
//! the level for a fixed image and seed, and every output is a pure
//! function of (image, spec).

use std::fmt;
use std::str::FromStr;

use crate::dataio::{EncodedDataset, RawImage, IMAGE_PIXELS, IMAGE_SIDE};
use crate::error::{BcpnnError, Result};

/// Intensity at or above which a pixel counts as stroke.
const STROKE_THRESHOLD: u8 = 32;
/// Pixel-change magnitude that counts toward the severity measure.
pub const SEVERITY_DELTA: u8 = 16;

/// The nine distortion kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DistortionKind {
    /// White grid lines; more lines at higher levels.
    Grid,
    /// Contiguous stroke segments erased; count and extent grow with level.
    Deletion,
    /// Small gaps punched along the stroke contour; gap count and width grow.
    Open,
    /// Random white blobs added; count grows with level.
    Clutter,
    /// Random white line segments crossing the image.
    Lines,
    /// Salt-and-pepper pixel flips with probability proportional to level.
    Noise,
    /// One white rectangle with area proportional to level.
    Occlusion,
    /// Morphological thinning; eroded boundary fraction grows with level.
    Erosion,
    /// Additive background texture with amplitude proportional to level.
    Texture,
}

impl DistortionKind {
    pub const ALL: [DistortionKind; 9] = [
        DistortionKind::Grid,
        DistortionKind::Deletion,
        DistortionKind::Open,
        DistortionKind::Clutter,
        DistortionKind::Lines,
        DistortionKind::Noise,
        DistortionKind::Occlusion,
        DistortionKind::Erosion,
        DistortionKind::Texture,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DistortionKind::Grid => "grid",
            DistortionKind::Deletion => "deletion",
            DistortionKind::Open => "open",
            DistortionKind::Clutter => "clutter",
            DistortionKind::Lines => "lines",
            DistortionKind::Noise => "noise",
            DistortionKind::Occlusion => "occlusion",
            DistortionKind::Erosion => "erosion",
            DistortionKind::Texture => "texture",
        }
    }

    fn id(&self) -> u64 {
        Self::ALL.iter().position(|k| k == self).unwrap() as u64
    }
}

impl fmt::Display for DistortionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistortionKind {
    type Err = BcpnnError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .find(|k| k.name() == s)
            .copied()
            .ok_or_else(|| BcpnnError::InvalidParameter(format!("unknown distortion kind '{s}'")))
    }
}

/// The ten admissible levels, 0.1..=1.0.
pub fn levels() -> [f64; 10] {
    [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]
}

/// Kind, level (on the 0.1 grid) and seed of one distortion application.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortionSpec {
    pub kind: DistortionKind,
    pub level: f64,
    pub seed: u64,
}

impl DistortionSpec {
    pub fn new(kind: DistortionKind, level: f64, seed: u64) -> Result<Self> {
        let idx = (level * 10.0).round();
        if !(1.0..=10.0).contains(&idx) || (level * 10.0 - idx).abs() > 1e-9 {
            return Err(BcpnnError::InvalidParameter(format!(
                "distortion level must lie on the 0.1..=1.0 grid, got {level}"
            )));
        }
        Ok(Self { kind, level, seed })
    }

    /// Level as an integer 1..=10.
    pub fn level_index(&self) -> u32 {
        (self.level * 10.0).round() as u32
    }
}

// splitmix64: tiny stateless hash used to derive per-entity uniforms.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn mix(seed: u64, kind: u64, tag: u64, entity: u64) -> u64 {
    splitmix64(seed ^ splitmix64(kind ^ splitmix64(tag ^ splitmix64(entity))))
}

fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn stroke_pixels(pixels: &[u8]) -> Vec<usize> {
    pixels
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= STROKE_THRESHOLD)
        .map(|(i, _)| i)
        .collect()
}

fn contour_pixels(pixels: &[u8]) -> Vec<usize> {
    stroke_pixels(pixels)
        .into_iter()
        .filter(|&p| {
            let (x, y) = (p % IMAGE_SIDE, p / IMAGE_SIDE);
            let neighbors = [
                (x.wrapping_sub(1), y),
                (x + 1, y),
                (x, y.wrapping_sub(1)),
                (x, y + 1),
            ];
            neighbors.iter().any(|&(nx, ny)| {
                nx >= IMAGE_SIDE
                    || ny >= IMAGE_SIDE
                    || pixels[ny * IMAGE_SIDE + nx] < STROKE_THRESHOLD
            })
        })
        .collect()
}

fn dist2(a: usize, b: usize) -> f64 {
    let (ax, ay) = ((a % IMAGE_SIDE) as f64, (a / IMAGE_SIDE) as f64);
    let (bx, by) = ((b % IMAGE_SIDE) as f64, (b / IMAGE_SIDE) as f64);
    (ax - bx) * (ax - bx) + (ay - by) * (ay - by)
}

/// Greedy farthest-point selection of `n` anchors out of `candidates`,
/// seeded by the hash-minimal candidate. Spreads deletion/gap sites over
/// the whole stroke.
fn spread_anchors(candidates: &[usize], n: usize, seed: u64, kind: u64) -> Vec<usize> {
    if candidates.is_empty() {
        return Vec::new();
    }
    let first = *candidates
        .iter()
        .min_by_key(|&&p| mix(seed, kind, 0, p as u64))
        .unwrap();
    let mut anchors = vec![first];
    while anchors.len() < n.min(candidates.len()) {
        let next = *candidates
            .iter()
            .filter(|p| !anchors.contains(p))
            .max_by(|&&a, &&b| {
                let da = anchors.iter().map(|&x| dist2(a, x)).fold(f64::MAX, f64::min);
                let db = anchors.iter().map(|&x| dist2(b, x)).fold(f64::MAX, f64::min);
                da.partial_cmp(&db).unwrap().then(b.cmp(&a))
            })
            .unwrap();
        anchors.push(next);
    }
    anchors
}

fn draw_segment(pixels: &mut [u8], x0: f64, y0: f64, x1: f64, y1: f64) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()) * 2.0).ceil() as usize + 1;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = (x0 + t * (x1 - x0)).round() as i64;
        let y = (y0 + t * (y1 - y0)).round() as i64;
        if (0..IMAGE_SIDE as i64).contains(&x) && (0..IMAGE_SIDE as i64).contains(&y) {
            pixels[y as usize * IMAGE_SIDE + x as usize] = 255;
        }
    }
}

/// Applies one distortion. Deterministic in (image, spec); output intensities
/// stay in 0..=255; the label is preserved.
pub fn distort(image: &RawImage, spec: &DistortionSpec) -> RawImage {
    let mut out = image.pixels.clone();
    let level = spec.level;
    let lix = spec.level_index();
    let seed = spec.seed;
    let kid = spec.kind.id();

    match spec.kind {
        DistortionKind::Grid => {
            // fixed line order, first round(level*12) drawn
            const LINES: [(bool, usize); 12] = [
                (true, 14),
                (false, 14),
                (true, 7),
                (false, 7),
                (true, 21),
                (false, 21),
                (true, 3),
                (false, 3),
                (true, 24),
                (false, 24),
                (true, 10),
                (false, 17),
            ];
            let n = ((level * 12.0).round() as usize).min(12);
            for &(is_row, pos) in LINES.iter().take(n) {
                for k in 0..IMAGE_SIDE {
                    let p = if is_row { pos * IMAGE_SIDE + k } else { k * IMAGE_SIDE + pos };
                    out[p] = 255;
                }
            }
        }
        DistortionKind::Deletion => {
            // erase stroke pixels segment by segment around 5 spread anchors
            let stroke = stroke_pixels(&image.pixels);
            if stroke.is_empty() {
                return RawImage { pixels: out, label: image.label };
            }
            let anchors = spread_anchors(&stroke, 5, seed, kid);
            let mut order: Vec<(usize, usize)> = stroke
                .iter()
                .map(|&p| {
                    let (a, _) = anchors
                        .iter()
                        .enumerate()
                        .map(|(i, &anc)| (i, dist2(p, anc)))
                        .min_by(|x, y| x.1.partial_cmp(&y.1).unwrap().then(x.0.cmp(&y.0)))
                        .unwrap();
                    (a, p)
                })
                .collect();
            order.sort_by(|a, b| {
                a.0.cmp(&b.0)
                    .then(dist2(a.1, anchors[a.0]).partial_cmp(&dist2(b.1, anchors[b.0])).unwrap())
                    .then(a.1.cmp(&b.1))
            });
            let budget = (level * 0.55 * stroke.len() as f64).round() as usize;
            for &(_, p) in order.iter().take(budget) {
                out[p] = 0;
            }
        }
        DistortionKind::Open => {
            // punch growing gaps at spread contour anchors
            let contour = contour_pixels(&image.pixels);
            if contour.is_empty() {
                return RawImage { pixels: out, label: image.label };
            }
            let anchors = spread_anchors(&contour, 8, seed, kid);
            let n_gaps = ((level * 8.0).ceil() as usize).min(anchors.len());
            let radius = 0.6 + 1.9 * level;
            let r2 = radius * radius;
            for &a in anchors.iter().take(n_gaps) {
                for p in 0..IMAGE_PIXELS {
                    if image.pixels[p] >= STROKE_THRESHOLD && dist2(p, a) <= r2 {
                        out[p] = 0;
                    }
                }
            }
        }
        DistortionKind::Clutter => {
            // ten blobs on a jittered 5x2 grid of cells, first ceil(level*10)
            let n = ((level * 10.0).ceil() as usize).min(10);
            for b in 0..n {
                let cell_x = b % 5;
                let cell_y = b / 5;
                let jx = unit(mix(seed, kid, 1, b as u64));
                let jy = unit(mix(seed, kid, 2, b as u64));
                let cx = (2.0 + cell_x as f64 * 5.2 + jx * 4.0).min(26.0);
                let cy = (4.0 + cell_y as f64 * 14.0 + jy * 9.0).min(26.0);
                let r = 1.0 + unit(mix(seed, kid, 3, b as u64));
                let r2 = r * r;
                for y in 0..IMAGE_SIDE {
                    for x in 0..IMAGE_SIDE {
                        let d = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                        if d <= r2 {
                            out[y * IMAGE_SIDE + x] = 255;
                        }
                    }
                }
            }
        }
        DistortionKind::Lines => {
            // ten segments between hashed border points, first ceil(level*10)
            let n = ((level * 10.0).ceil() as usize).min(10);
            for l in 0..n {
                let pick = |tag: u64| -> (f64, f64) {
                    let side = mix(seed, kid, tag, l as u64) % 4;
                    let along = unit(mix(seed, kid, tag + 10, l as u64)) * 27.0;
                    match side {
                        0 => (along, 0.0),
                        1 => (along, 27.0),
                        2 => (0.0, along),
                        _ => (27.0, along),
                    }
                };
                let (x0, y0) = pick(1);
                let (x1, y1) = pick(2);
                draw_segment(&mut out, x0, y0, x1, y1);
            }
        }
        DistortionKind::Noise => {
            // per-pixel threshold: nested flip sets across levels
            for p in 0..IMAGE_PIXELS {
                if unit(mix(seed, kid, 1, p as u64)) < level * 0.25 {
                    out[p] = if mix(seed, kid, 2, p as u64) & 1 == 0 { 255 } else { 0 };
                }
            }
        }
        DistortionKind::Occlusion => {
            // one centered-at-hash rectangle, side grows as sqrt(level)
            let cx = 8 + (mix(seed, kid, 1, 0) % 12) as i64;
            let cy = 8 + (mix(seed, kid, 2, 0) % 12) as i64;
            let side = ((392.0 * level).sqrt()).round() as i64;
            let half = side / 2;
            for y in (cy - half).max(0)..=(cy - half + side - 1).min(27) {
                for x in (cx - half).max(0)..=(cx - half + side - 1).min(27) {
                    out[y as usize * IMAGE_SIDE + x as usize] = 255;
                }
            }
        }
        DistortionKind::Erosion => {
            // continuous thinning: full boundary passes plus a hash-ordered
            // partial pass, 2 passes at level 1.0
            let total = 2.0 * level;
            let full = total.floor() as usize;
            let frac = total - full as f64;
            for pass in 0..=full {
                let boundary = contour_pixels(&out);
                if boundary.is_empty() {
                    break;
                }
                let take = if pass < full {
                    boundary.len()
                } else {
                    (frac * boundary.len() as f64).ceil() as usize
                };
                let mut ordered = boundary;
                ordered.sort_by_key(|&p| (mix(seed, kid, 4 + pass as u64, p as u64), p));
                for &p in ordered.iter().take(take) {
                    out[p] = 0;
                }
            }
        }
        DistortionKind::Texture => {
            // smooth sinusoidal background, amplitude proportional to level
            let fx = 0.10 + 0.15 * unit(mix(seed, kid, 1, 0));
            let fy = 0.10 + 0.15 * unit(mix(seed, kid, 2, 0));
            let phase = unit(mix(seed, kid, 3, 0)) * std::f64::consts::TAU;
            let amp = 170.0 * level;
            for y in 0..IMAGE_SIDE {
                for x in 0..IMAGE_SIDE {
                    let t = 0.5
                        + 0.5
                            * (std::f64::consts::TAU * (fx * x as f64 + fy * y as f64) + phase)
                                .sin();
                    let p = y * IMAGE_SIDE + x;
                    out[p] = (out[p] as f64 + amp * t).round().min(255.0) as u8;
                }
            }
        }
    }
    let _ = lix;
    RawImage {
        pixels: out,
        label: image.label,
    }
}

/// Fraction of pixels whose intensity moved by more than [`SEVERITY_DELTA`].
pub fn changed_fraction(before: &RawImage, after: &RawImage) -> f64 {
    let changed = before
        .pixels
        .iter()
        .zip(&after.pixels)
        .filter(|(&a, &b)| (a as i16 - b as i16).unsigned_abs() > SEVERITY_DELTA as u16)
        .count();
    changed as f64 / IMAGE_PIXELS as f64
}

/// One distorted benchmark sample with its provenance.
#[derive(Debug, Clone)]
pub struct DistortedSample {
    pub image: RawImage,
    pub kind: DistortionKind,
    pub level: f64,
    pub seed: u64,
    /// Index of the clean source image in the test set.
    pub source_index: usize,
}

/// The full distorted benchmark: `9 kinds x 10 levels x samples_per_cell`.
#[derive(Debug, Clone)]
pub struct DistortedSet {
    samples: Vec<DistortedSample>,
    samples_per_cell: usize,
}

impl DistortedSet {
    pub fn samples(&self) -> &[DistortedSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples_per_cell(&self) -> usize {
        self.samples_per_cell
    }

    /// The clean source images as a dataset (useful for side-by-side
    /// evaluation).
    pub fn to_dataset(&self) -> EncodedDataset {
        EncodedDataset::from_images(self.samples.iter().map(|s| s.image.clone()).collect())
    }
}

/// Picks `samples_per_cell` stratified source images (label `k % 10`,
/// round-robin through each class's occurrences) and distorts each with
/// every (kind, level) pair. The per-image seed is fixed across levels so
/// severity is nested and monotone per image.
pub fn build_distorted_set(
    test: &EncodedDataset,
    samples_per_cell: usize,
    base_seed: u64,
) -> Result<DistortedSet> {
    if samples_per_cell == 0 {
        return Err(BcpnnError::InvalidParameter(
            "samples_per_cell must be positive".into(),
        ));
    }
    let mut chosen = Vec::with_capacity(samples_per_cell);
    for k in 0..samples_per_cell {
        let class = (k % 10) as u8;
        let occurrence = k / 10;
        let idx = (0..test.len())
            .filter(|&i| test.label(i) == Some(class))
            .nth(occurrence)
            .ok_or_else(|| {
                BcpnnError::Precondition(format!(
                    "test set lacks {} images of class {class}",
                    occurrence + 1
                ))
            })?;
        chosen.push(idx);
    }

    let mut samples = Vec::with_capacity(9 * 10 * samples_per_cell);
    for kind in DistortionKind::ALL {
        for level in levels() {
            for (k, &idx) in chosen.iter().enumerate() {
                let seed = splitmix64(base_seed ^ splitmix64(k as u64));
                let spec = DistortionSpec::new(kind, level, seed)?;
                samples.push(DistortedSample {
                    image: distort(test.image(idx), &spec),
                    kind,
                    level,
                    seed,
                    source_index: idx,
                });
            }
        }
    }
    Ok(DistortedSet {
        samples,
        samples_per_cell,
    })
}
