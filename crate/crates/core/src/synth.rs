//! Deterministic synthetic digit images in MNIST layout (28x28 grayscale,
//! labels 0..=9), for demos and for running the full pipeline where the
//! real dataset is not available.
//!
//! Each class is a stroke skeleton (polylines and elliptic arcs) rendered
//! with a soft Gaussian stroke profile. Per-sample variation combines a
//! discrete style bit (dashed seven, serif one, curved nine tail), global
//! shift/slant/scale jitter, and anchor-level jitter, producing coherent
//! classes with several distinct sub-styles each.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::path::{Path, PathBuf};

use crate::dataio::{self, RawImage, IMAGE_PIXELS, IMAGE_SIDE};
use crate::error::Result;

#[derive(Clone)]
enum Stroke {
    Poly(Vec<(f64, f64)>),
    /// Elliptic arc: center, radii, angle range in degrees
    /// (0 = right, 90 = down, 270 = top; angles may exceed 360).
    Arc {
        c: (f64, f64),
        r: (f64, f64),
        a0: f64,
        a1: f64,
    },
}

fn glyph(class: u8, style: bool) -> Vec<Stroke> {
    use Stroke::*;
    match class {
        0 => {
            // narrow oval vs wide round zero
            let r = if style { (4.6, 8.2) } else { (6.2, 7.4) };
            vec![Arc {
                c: (14.0, 14.0),
                r,
                a0: 0.0,
                a1: 360.0,
            }]
        }
        1 => {
            // plain one vs one with base serif
            let mut s = vec![
                Poly(vec![(14.5, 5.5), (13.5, 22.5)]),
                Poly(vec![(14.5, 5.5), (11.0, 9.0)]),
            ];
            if style {
                s.push(Poly(vec![(10.5, 22.5), (16.5, 22.5)]));
            }
            s
        }
        2 => {
            if style {
                // curled base
                vec![
                    Arc {
                        c: (14.0, 9.5),
                        r: (5.0, 4.5),
                        a0: 180.0,
                        a1: 360.0,
                    },
                    Poly(vec![(19.0, 9.5), (9.0, 20.5)]),
                    Arc {
                        c: (14.5, 21.0),
                        r: (5.5, 2.2),
                        a0: 180.0,
                        a1: 330.0,
                    },
                ]
            } else {
                // straight base
                vec![
                    Arc {
                        c: (14.0, 9.5),
                        r: (5.0, 4.5),
                        a0: 180.0,
                        a1: 360.0,
                    },
                    Poly(vec![(19.0, 9.5), (8.5, 21.5), (19.5, 21.5)]),
                ]
            }
        }
        3 => {
            // rounded double-bow vs flat-topped three
            if style {
                vec![
                    Arc {
                        c: (13.5, 9.3),
                        r: (4.8, 4.3),
                        a0: 200.0,
                        a1: 450.0,
                    },
                    Arc {
                        c: (13.5, 17.5),
                        r: (5.2, 4.6),
                        a0: 270.0,
                        a1: 520.0,
                    },
                ]
            } else {
                vec![
                    Poly(vec![(9.5, 6.0), (18.5, 6.0), (13.5, 12.5)]),
                    Arc {
                        c: (13.0, 17.2),
                        r: (5.4, 4.9),
                        a0: 270.0,
                        a1: 520.0,
                    },
                ]
            }
        }
        4 => {
            if style {
                // closed-top four
                vec![
                    Poly(vec![(16.5, 6.0), (16.5, 23.0)]),
                    Poly(vec![(16.5, 6.0), (9.0, 16.5), (21.0, 16.5)]),
                ]
            } else {
                // open four
                vec![
                    Poly(vec![(17.0, 8.5), (17.0, 23.0)]),
                    Poly(vec![(11.5, 5.5), (9.0, 16.5), (21.0, 16.5)]),
                ]
            }
        }
        5 => {
            // square vs round bowl
            let bowl = if style {
                Arc {
                    c: (13.5, 17.0),
                    r: (5.0, 4.8),
                    a0: 220.0,
                    a1: 500.0,
                }
            } else {
                Arc {
                    c: (13.0, 17.5),
                    r: (5.8, 4.2),
                    a0: 250.0,
                    a1: 495.0,
                }
            };
            vec![Poly(vec![(19.0, 6.5), (10.0, 6.5), (9.5, 13.0)]), bowl]
        }
        6 => {
            // long hook vs compact six
            let hook = if style {
                Arc {
                    c: (14.5, 14.0),
                    r: (6.0, 9.0),
                    a0: 300.0,
                    a1: 120.0,
                }
            } else {
                Arc {
                    c: (13.5, 15.0),
                    r: (5.0, 7.6),
                    a0: 320.0,
                    a1: 130.0,
                }
            };
            vec![
                hook,
                Arc {
                    c: (14.0, 17.8),
                    r: (4.6, 4.2),
                    a0: 0.0,
                    a1: 360.0,
                },
            ]
        }
        7 => {
            // dashed vs undashed seven
            let mut s = vec![Poly(vec![(8.5, 6.5), (20.0, 6.5), (11.5, 23.0)])];
            if style {
                s.push(Poly(vec![(10.5, 14.5), (17.5, 14.5)]));
            }
            s
        }
        8 => {
            // equal loops vs small top loop
            let (top, bottom) = if style {
                ((4.1, 4.1), (4.9, 4.7))
            } else {
                ((3.4, 3.5), (5.4, 5.0))
            };
            vec![
                Arc {
                    c: (14.0, if style { 9.6 } else { 8.8 }),
                    r: top,
                    a0: 0.0,
                    a1: 360.0,
                },
                Arc {
                    c: (14.0, 18.0),
                    r: bottom,
                    a0: 0.0,
                    a1: 360.0,
                },
            ]
        }
        9 => {
            // straight vs curved tail
            let mut s = vec![Arc {
                c: (13.8, 10.0),
                r: (4.6, 4.4),
                a0: 0.0,
                a1: 360.0,
            }];
            if style {
                s.push(Poly(vec![(18.3, 10.5), (18.0, 16.0), (15.0, 22.5)]));
            } else {
                s.push(Poly(vec![(18.3, 10.5), (16.5, 23.0)]));
            }
            s
        }
        _ => unreachable!("labels are 0..=9"),
    }
}

fn sample_points(stroke: &Stroke, out: &mut Vec<(f64, f64)>) {
    match stroke {
        Stroke::Poly(anchors) => {
            for pair in anchors.windows(2) {
                let (x0, y0) = pair[0];
                let (x1, y1) = pair[1];
                let len = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
                let steps = (len / 0.15).ceil().max(1.0) as usize;
                for s in 0..=steps {
                    let t = s as f64 / steps as f64;
                    out.push((x0 + t * (x1 - x0), y0 + t * (y1 - y0)));
                }
            }
        }
        Stroke::Arc { c, r, a0, a1 } => {
            // sweep may run backwards (a1 < a0)
            let sweep = (a1 - a0).abs().to_radians();
            let arc_len = sweep * r.0.max(r.1);
            let steps = (arc_len / 0.15).ceil().max(4.0) as usize;
            for s in 0..=steps {
                let t = s as f64 / steps as f64;
                let a = (a0 + t * (a1 - a0)).to_radians();
                out.push((c.0 + r.0 * a.cos(), c.1 + r.1 * a.sin()));
            }
        }
    }
}

fn jitter_stroke(stroke: &Stroke, rng: &mut ChaCha8Rng) -> Stroke {
    let mut j = |amp: f64| rng.random_range(-amp..amp);
    match stroke {
        Stroke::Poly(anchors) => Stroke::Poly(
            anchors
                .iter()
                .map(|&(x, y)| (x + j(1.0), y + j(1.0)))
                .collect(),
        ),
        Stroke::Arc { c, r, a0, a1 } => Stroke::Arc {
            c: (c.0 + j(0.9), c.1 + j(0.9)),
            r: (
                r.0 * (1.0 + j(0.12)),
                r.1 * (1.0 + j(0.12)),
            ),
            a0: a0 + j(12.0),
            a1: a1 + j(12.0),
        },
    }
}

/// Renders one digit image for sample index `k` (label `k % 10`).
fn render(k: usize, seed: u64) -> RawImage {
    let class = (k % 10) as u8;
    let mut h = seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    h ^= h >> 33;
    let mut rng = ChaCha8Rng::seed_from_u64(h);

    let style = rng.random_bool(0.5);
    let dx = rng.random_range(-2.2..2.2);
    let dy = rng.random_range(-2.2..2.2);
    let shear = rng.random_range(-0.30..0.30);
    let scale = rng.random_range(0.85..1.15);
    let sigma = rng.random_range(0.90..1.45);
    let amp = rng.random_range(0.82..1.0);

    let mut points = Vec::new();
    for stroke in glyph(class, style) {
        let jittered = jitter_stroke(&stroke, &mut rng);
        sample_points(&jittered, &mut points);
    }

    let mut field = vec![0.0f64; IMAGE_PIXELS];
    let inv = 1.0 / (2.0 * sigma * sigma);
    for (px, py) in points {
        // global transform: scale about center, slant, shift
        let x = (px - 14.0) * scale + shear * (14.0 - py) + 14.0 + dx;
        let y = (py - 14.0) * scale + 14.0 + dy;
        let x0 = (x - 3.0).floor().max(0.0) as usize;
        let x1 = (x + 3.0).ceil().min(27.0) as usize;
        let y0 = (y - 3.0).floor().max(0.0) as usize;
        let y1 = (y + 3.0).ceil().min(27.0) as usize;
        for gy in y0..=y1 {
            for gx in x0..=x1 {
                let d2 = (gx as f64 - x).powi(2) + (gy as f64 - y).powi(2);
                let v = amp * (-d2 * inv).exp();
                let cell = &mut field[gy * IMAGE_SIDE + gx];
                if v > *cell {
                    *cell = v;
                }
            }
        }
    }

    let pixels = field
        .iter()
        .map(|&v| (v.min(1.0) * 255.0).round() as u8)
        .collect();
    RawImage {
        pixels,
        label: Some(class),
    }
}

/// `n` labeled digit images, label `k % 10`, deterministic per seed.
pub fn generate_images(n: usize, seed: u64) -> Vec<RawImage> {
    (0..n).into_par_iter().map(|k| render(k, seed)).collect()
}

/// Paths of a dataset written by [`write_dataset`].
#[derive(Debug, Clone)]
pub struct SynthPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

/// Writes a train/test pair of IDX file sets under `dir`. Train and test
/// use disjoint sample streams.
pub fn write_dataset(dir: &Path, n_train: usize, n_test: usize, seed: u64) -> Result<SynthPaths> {
    let train = generate_images(n_train, seed);
    let test = generate_images(n_test, seed ^ 0x7E57_DA7A_5EED_0001);
    let paths = SynthPaths {
        train_images: dir.join("train-images-idx3-ubyte"),
        train_labels: dir.join("train-labels-idx1-ubyte"),
        test_images: dir.join("t10k-images-idx3-ubyte"),
        test_labels: dir.join("t10k-labels-idx1-ubyte"),
    };
    dataio::write_idx_images(&paths.train_images, &train)?;
    dataio::write_idx_labels(&paths.train_labels, &train)?;
    dataio::write_idx_images(&paths.test_images, &test)?;
    dataio::write_idx_labels(&paths.test_labels, &test)?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_and_labeled() {
        let a = generate_images(20, 9);
        let b = generate_images(20, 9);
        assert_eq!(a, b);
        for (k, img) in a.iter().enumerate() {
            assert_eq!(img.label, Some((k % 10) as u8));
        }
        let c = generate_images(20, 10);
        assert_ne!(a, c);
    }

    #[test]
    fn images_have_visible_strokes() {
        for img in generate_images(30, 3) {
            let bright = img.pixels.iter().filter(|&&p| p >= 128).count();
            assert!(bright > 20, "class {:?} too faint", img.label);
            assert!(bright < 400, "class {:?} too dense", img.label);
        }
    }

    #[test]
    fn same_class_more_similar_than_cross_class() {
        // raw-pixel cosine similarity should already separate classes a bit
        let imgs = generate_images(100, 5);
        let cos = |a: &RawImage, b: &RawImage| -> f64 {
            let dot: f64 = a
                .pixels
                .iter()
                .zip(&b.pixels)
                .map(|(&x, &y)| x as f64 * y as f64)
                .sum();
            let na: f64 = a.pixels.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            let nb: f64 = b.pixels.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            dot / (na * nb)
        };
        let mut within = (0.0, 0);
        let mut across = (0.0, 0);
        for i in 0..imgs.len() {
            for j in (i + 1)..imgs.len() {
                let s = cos(&imgs[i], &imgs[j]);
                if imgs[i].label == imgs[j].label {
                    within = (within.0 + s, within.1 + 1);
                } else {
                    across = (across.0 + s, across.1 + 1);
                }
            }
        }
        let within_mean = within.0 / within.1 as f64;
        let across_mean = across.0 / across.1 as f64;
        assert!(
            within_mean > across_mean + 0.1,
            "within {within_mean} vs across {across_mean}"
        );
    }

    #[test]
    fn dataset_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write_dataset(dir.path(), 30, 10, 77).unwrap();
        let train = dataio::load_idx(&paths.train_images, &paths.train_labels).unwrap();
        let test = dataio::load_idx(&paths.test_images, &paths.test_labels).unwrap();
        assert_eq!(train.len(), 30);
        assert_eq!(test.len(), 10);
        assert_ne!(train[0], test[0]);
    }
}
