//! Evaluation stack: cosine-similarity matrices, the orthogonality ratio,
//! greedy prototype clustering of attractor states, and a one-vs-rest
//! logistic probe for measuring representation quality under distortion.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fmt;

use crate::config::{DriveMode, ExperimentConfig};
use crate::distort::{DistortedSet, DistortionKind};
use crate::error::{BcpnnError, Result};
use crate::feedforward::FeedforwardModel;
use crate::recurrent::RecurrentModel;
use crate::util::derive_seed;

/// Pairwise cosine similarities with rows/columns sorted by class label
/// (then original index). Symmetric with unit diagonal by construction.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    n: usize,
    /// Original sample index per sorted row.
    order: Vec<usize>,
    /// Label per sorted row.
    labels: Vec<u8>,
    /// Row-major `n x n`.
    values: Vec<f64>,
    /// Rows whose vector had zero norm (similarities defined as 0).
    zero_rows: Vec<bool>,
}

impl SimilarityMatrix {
    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.n + b]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn had_zero_vectors(&self) -> bool {
        self.zero_rows.iter().any(|&z| z)
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Cosine-similarity matrix over `representations`, sorted by label.
/// Zero vectors get off-diagonal similarity 0 and diagonal 1, and are
/// flagged on the output.
pub fn similarity_matrix<R: AsRef<[f64]> + Sync>(
    representations: &[R],
    labels: &[u8],
) -> Result<SimilarityMatrix> {
    if representations.is_empty() {
        return Err(BcpnnError::InvalidParameter(
            "similarity matrix needs at least one representation".into(),
        ));
    }
    if representations.len() != labels.len() {
        return Err(BcpnnError::DimensionMismatch(format!(
            "{} representations vs {} labels",
            representations.len(),
            labels.len()
        )));
    }
    let dim = representations[0].as_ref().len();
    if representations.iter().any(|r| r.as_ref().len() != dim) {
        return Err(BcpnnError::DimensionMismatch(
            "representations differ in length".into(),
        ));
    }

    let n = representations.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (labels[i], i));
    let sorted_labels: Vec<u8> = order.iter().map(|&i| labels[i]).collect();

    let norms: Vec<f64> = order
        .iter()
        .map(|&i| {
            representations[i]
                .as_ref()
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let zero_rows: Vec<bool> = norms.iter().map(|&v| v == 0.0).collect();

    let mut values = vec![0.0; n * n];
    values
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(a, row)| {
            let va = representations[order[a]].as_ref();
            for b in 0..n {
                row[b] = if a == b {
                    1.0
                } else if zero_rows[a] || zero_rows[b] {
                    0.0
                } else {
                    let vb = representations[order[b]].as_ref();
                    let dot: f64 = va.iter().zip(vb).map(|(x, y)| x * y).sum();
                    dot / (norms[a] * norms[b])
                };
            }
        });
    // enforce exact symmetry (dot products commute, but keep it explicit)
    for a in 0..n {
        for b in 0..a {
            let v = values[b * n + a];
            values[a * n + b] = v;
        }
    }

    Ok(SimilarityMatrix {
        n,
        order,
        labels: sorted_labels,
        values,
        zero_rows,
    })
}

/// Mean similarity over same-class off-diagonal pairs divided by the mean
/// over all off-diagonal pairs. Classes with fewer than two samples
/// contribute no within-class pairs.
pub fn orthogonality_ratio(matrix: &SimilarityMatrix) -> Result<f64> {
    if matrix.len() < 2 {
        return Err(BcpnnError::InvalidParameter(
            "orthogonality ratio needs at least two samples".into(),
        ));
    }
    let n = matrix.len();
    let mut within_sum = 0.0;
    let mut within_count = 0usize;
    let mut all_sum = 0.0;
    let mut all_count = 0usize;
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            let v = matrix.get(a, b);
            all_sum += v;
            all_count += 1;
            if matrix.labels[a] == matrix.labels[b] {
                within_sum += v;
                within_count += 1;
            }
        }
    }
    if within_count == 0 {
        return Err(BcpnnError::InvalidParameter(
            "no class has two or more samples".into(),
        ));
    }
    Ok((within_sum / within_count as f64) / (all_sum / all_count as f64))
}

/// One prototype: its founding (leader) state and the samples assigned to it.
#[derive(Debug, Clone)]
pub struct Prototype {
    pub leader_index: usize,
    pub leader: Vec<f64>,
    pub members: Vec<usize>,
}

/// Result of greedy leader clustering at threshold `theta`.
#[derive(Debug, Clone)]
pub struct PrototypeClustering {
    pub theta: f64,
    pub prototypes: Vec<Prototype>,
}

impl PrototypeClustering {
    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    /// Majority label of one prototype's members.
    pub fn majority_label(&self, prototype: usize, labels: &[u8]) -> u8 {
        let mut counts = [0usize; 10];
        for &m in &self.prototypes[prototype].members {
            counts[labels[m] as usize] += 1;
        }
        counts
            .iter()
            .enumerate()
            .max_by_key(|&(c, &n)| (n, usize::MAX - c))
            .map(|(c, _)| c as u8)
            .unwrap()
    }
}

/// Greedy leader clustering in sample order: each state joins the first
/// existing prototype whose leader similarity exceeds `theta`, otherwise it
/// founds a new one. Deterministic given the input order.
pub fn extract_prototypes<R: AsRef<[f64]>>(
    states: &[R],
    theta: f64,
) -> Result<PrototypeClustering> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(BcpnnError::InvalidParameter(format!(
            "theta must be in (0, 1), got {theta}"
        )));
    }
    let mut prototypes: Vec<Prototype> = Vec::new();
    for (k, state) in states.iter().enumerate() {
        let v = state.as_ref();
        let mut joined = false;
        for proto in prototypes.iter_mut() {
            if cosine_similarity(&proto.leader, v) > theta {
                proto.members.push(k);
                joined = true;
                break;
            }
        }
        if !joined {
            prototypes.push(Prototype {
                leader_index: k,
                leader: v.to_vec(),
                members: vec![k],
            });
        }
    }
    Ok(PrototypeClustering { theta, prototypes })
}

/// One-vs-rest logistic classifier over a fixed feature space.
#[derive(Debug, Clone)]
pub struct LinearProbe {
    dim: usize,
    /// Row-major `10 x dim`.
    weights: Vec<f64>,
    biases: [f64; 10],
    pub seed: u64,
}

impl LinearProbe {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn predict(&self, features: &[f64]) -> u8 {
        debug_assert_eq!(features.len(), self.dim);
        let mut best = 0u8;
        let mut best_z = f64::NEG_INFINITY;
        for c in 0..10 {
            let w = &self.weights[c * self.dim..(c + 1) * self.dim];
            let z: f64 = self.biases[c]
                + w.iter().zip(features).map(|(wv, x)| wv * x).sum::<f64>();
            if z > best_z {
                best_z = z;
                best = c as u8;
            }
        }
        best
    }

    pub fn accuracy(&self, features: &FeatureMatrix, labels: &[u8]) -> f64 {
        let correct = (0..features.len())
            .filter(|&k| self.predict(features.row(k)) == labels[k])
            .count();
        correct as f64 / features.len() as f64
    }
}

/// Dense row-major feature storage for probe training/evaluation.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    n: usize,
    dim: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(dim: usize) -> Self {
        Self {
            n: 0,
            dim,
            values: Vec::new(),
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut m = Self::new(dim);
        for r in rows {
            if r.len() != dim {
                return Err(BcpnnError::DimensionMismatch(
                    "feature rows differ in length".into(),
                ));
            }
            m.values.extend_from_slice(&r);
            m.n += 1;
        }
        Ok(m)
    }

    pub fn push_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.dim);
        self.values.extend_from_slice(row);
        self.n += 1;
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Trains `trials` independent one-vs-rest probes by logistic-loss SGD
/// (fixed recipe: `passes` passes, step size `step`, per-trial seeded
/// shuffling, no regularization). Deterministic per seed.
pub fn train_probe(
    features: &FeatureMatrix,
    labels: &[u8],
    trials: usize,
    seed: u64,
    passes: usize,
    step: f64,
) -> Result<Vec<LinearProbe>> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(BcpnnError::DimensionMismatch(format!(
            "{} feature rows vs {} labels",
            features.len(),
            labels.len()
        )));
    }
    let first = labels[0];
    if labels.iter().all(|&l| l == first) {
        return Err(BcpnnError::InvalidParameter(
            "probe training needs at least two classes".into(),
        ));
    }

    (0..trials)
        .into_par_iter()
        .map(|trial| {
            let dim = features.dim;
            let mut weights = vec![0.0; 10 * dim];
            let mut biases = [0.0; 10];
            let trial_seed = derive_seed(seed, 0x9000 + trial as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
            let mut order: Vec<usize> = (0..features.len()).collect();
            for _ in 0..passes {
                order.shuffle(&mut rng);
                for &k in &order {
                    let x = features.row(k);
                    let y = labels[k] as usize;
                    for c in 0..10 {
                        let w = &mut weights[c * dim..(c + 1) * dim];
                        let z: f64 =
                            biases[c] + w.iter().zip(x).map(|(wv, xv)| wv * xv).sum::<f64>();
                        let g = sigmoid(z) - if c == y { 1.0 } else { 0.0 };
                        if g != 0.0 {
                            let eta = step * g;
                            for (wv, xv) in w.iter_mut().zip(x) {
                                *wv -= eta * xv;
                            }
                            biases[c] -= eta;
                        }
                    }
                }
            }
            Ok(LinearProbe {
                dim,
                weights,
                biases,
                seed: trial_seed,
            })
        })
        .collect()
}

/// Which representation a probe score refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReprKind {
    Feedforward,
    Attractor,
}

impl fmt::Display for ReprKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReprKind::Feedforward => "feedforward",
            ReprKind::Attractor => "attractor",
        })
    }
}

#[derive(Debug, Clone)]
pub struct RobustnessRow {
    pub kind: DistortionKind,
    pub level: f64,
    pub repr: ReprKind,
    pub trial: usize,
    pub accuracy: f64,
}

/// Accuracy grid over (distortion kind, level, representation, trial).
#[derive(Debug, Clone)]
pub struct RobustnessReport {
    pub rows: Vec<RobustnessRow>,
}

impl RobustnessReport {
    /// Mean accuracy over kinds and trials at one level.
    pub fn mean_accuracy(&self, level: f64, repr: ReprKind) -> f64 {
        let picked: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| (r.level - level).abs() < 1e-9 && r.repr == repr)
            .map(|r| r.accuracy)
            .collect();
        picked.iter().sum::<f64>() / picked.len() as f64
    }

    /// Mean accuracy over levels and trials for one kind.
    pub fn mean_accuracy_by_kind(&self, kind: DistortionKind, repr: ReprKind) -> f64 {
        let picked: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.kind == kind && r.repr == repr)
            .map(|r| r.accuracy)
            .collect();
        picked.iter().sum::<f64>() / picked.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("type,level,repr_kind,trial,accuracy\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.1},{},{},{:.6}\n",
                r.kind, r.level, r.repr, r.trial, r.accuracy
            ));
        }
        out
    }
}

/// Runs every distorted sample through the feedforward encoder and the
/// attractor, scores both representations with every probe, and returns
/// the per-(kind, level, representation, trial) accuracy grid.
pub fn evaluate_robustness(
    probes: &[LinearProbe],
    ff_model: &FeedforwardModel,
    rec_model: &RecurrentModel,
    distorted: &DistortedSet,
    cfg: &ExperimentConfig,
) -> Result<RobustnessReport> {
    if probes.is_empty() {
        return Err(BcpnnError::InvalidParameter("no probes supplied".into()));
    }
    let dataset = distorted.to_dataset();
    let indices: Vec<usize> = (0..dataset.len()).collect();

    // per-sample representations, parallel across samples
    let reps: Vec<(Vec<f64>, Vec<f64>)> = indices
        .par_iter()
        .map(|&k| {
            let input = dataset.activity(k);
            let ff = ff_model.encode(&input)?;
            let support = if cfg.drive_mode == DriveMode::PersistentDrive {
                Some(ff_model.encode_support(&input)?)
            } else {
                None
            };
            let (att, _, _) = rec_model.attractor_final(&ff, support.as_ref())?;
            Ok((ff.into_values(), att.into_values()))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for kind in DistortionKind::ALL {
        for level in crate::distort::levels() {
            let cell: Vec<usize> = distorted
                .samples()
                .iter()
                .enumerate()
                .filter(|(_, s)| s.kind == kind && (s.level - level).abs() < 1e-9)
                .map(|(i, _)| i)
                .collect();
            for repr in [ReprKind::Feedforward, ReprKind::Attractor] {
                for (trial, probe) in probes.iter().enumerate() {
                    let correct = cell
                        .iter()
                        .filter(|&&i| {
                            let features = match repr {
                                ReprKind::Feedforward => &reps[i].0,
                                ReprKind::Attractor => &reps[i].1,
                            };
                            let label = distorted.samples()[i].image.label.expect("labeled");
                            probe.predict(features) == label
                        })
                        .count();
                    rows.push(RobustnessRow {
                        kind,
                        level,
                        repr,
                        trial,
                        accuracy: correct as f64 / cell.len() as f64,
                    });
                }
            }
        }
    }
    Ok(RobustnessReport { rows })
}
