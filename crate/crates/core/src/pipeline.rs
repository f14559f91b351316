//! End-to-end experiment drivers behind the command-line subcommands:
//! training the model pair, the three evaluation modes, and distorted-set
//! export. Everything here is deterministic given (config, seeds, input
//! files).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use crate::analysis::{
    evaluate_robustness, extract_prototypes, orthogonality_ratio, similarity_matrix, train_probe,
    FeatureMatrix, LinearProbe, PrototypeClustering, ReprKind, RobustnessReport,
};
use crate::bcpnn::softmax_per_hypercolumn;
use crate::config::{DriveMode, ExperimentConfig};
use crate::container::ModelContainer;
use crate::dataio::{self, EncodedDataset};
use crate::distort::{build_distorted_set, DistortedSet};
use crate::error::{BcpnnError, Result};
use crate::feedforward::train_feedforward_with_progress;
use crate::recurrent::{
    reconstruct, train_attractor_from_batches, train_recurrent, untrained_recurrent,
    RecurrentModel,
};
use crate::util::derive_seed;

const EVAL_PICK_TAG: u64 = 0x33;
const PROBE_TAG: u64 = 0x44;
/// Cumulative sample exposure the input-space baseline attractor aims for
/// when only test data is available (matches one pass over the full
/// training set).
const BASELINE_TARGET_UPDATES: usize = 60_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Ortho,
    Protos,
    Robust,
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::Ortho => "ortho",
            EvalMode::Protos => "protos",
            EvalMode::Robust => "robust",
        })
    }
}

impl FromStr for EvalMode {
    type Err = BcpnnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ortho" => Ok(EvalMode::Ortho),
            "protos" => Ok(EvalMode::Protos),
            "robust" => Ok(EvalMode::Robust),
            other => Err(BcpnnError::InvalidParameter(format!(
                "mode must be ortho, protos or robust, got '{other}'"
            ))),
        }
    }
}

/// Trains the feedforward net, then the recurrent net on its hidden
/// activities. A zero-epoch config produces the untrained pair (all
/// weights zero) so the container stays loadable.
pub fn train_in_memory(
    cfg: &ExperimentConfig,
    data: &EncodedDataset,
    verbose: bool,
) -> Result<ModelContainer> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(BcpnnError::InvalidParameter(
            "cannot train on an empty dataset".into(),
        ));
    }

    let feedforward = train_feedforward_with_progress(data, cfg, &mut |s| {
        if verbose {
            println!(
                "feedforward pass {}: {:.2}s, rewired {} connections, joint traces [{:.3e}, {:.3e}, {:.3e}], peak activity {:.4}",
                s.epoch,
                s.seconds,
                s.rewired_connections,
                s.joint_trace_min,
                s.joint_trace_mean,
                s.joint_trace_max,
                s.mean_peak_activity
            );
        }
    })?;

    let recurrent = if cfg.epochs == 0 {
        untrained_recurrent(feedforward.hidden_geometry(), cfg)?
    } else {
        let t0 = Instant::now();
        let rec = train_recurrent(&feedforward, data, cfg)?;
        if verbose {
            println!(
                "recurrent training: {:.2}s over {} pass(es)",
                t0.elapsed().as_secs_f64(),
                cfg.recurrent_epochs
            );
        }
        rec
    };

    Ok(ModelContainer {
        config: cfg.clone(),
        feedforward,
        recurrent,
    })
}

/// `train` subcommand: load data, train, persist.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    images: &Path,
    labels: &Path,
    out_model: &Path,
    verbose: bool,
) -> Result<()> {
    let data = EncodedDataset::load(images, labels)?;
    if verbose {
        println!(
            "training on {} samples ({} per pass), hidden layer {}x{}",
            data.len(),
            if cfg.train_limit > 0 {
                cfg.train_limit.min(data.len())
            } else {
                data.len()
            },
            cfg.h_hidden,
            cfg.m_hidden
        );
    }
    let container = train_in_memory(cfg, &data, verbose)?;
    container.save(out_model)?;
    if verbose {
        println!("model written to {}", out_model.display());
    }
    Ok(())
}

/// Deterministic evaluation subset: `eval_samples` indices drawn without
/// replacement from the test set, sorted ascending.
pub fn pick_eval_indices(cfg: &ExperimentConfig, n_test: usize) -> Vec<usize> {
    let n = cfg.eval_samples.min(n_test);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, EVAL_PICK_TAG));
    let mut picks: Vec<usize> = rand::seq::index::sample(&mut rng, n_test, n).into_vec();
    picks.sort_unstable();
    picks
}

fn labels_for(test: &EncodedDataset, indices: &[usize]) -> Result<Vec<u8>> {
    indices
        .iter()
        .map(|&k| {
            test.label(k).ok_or_else(|| {
                BcpnnError::Precondition("evaluation requires labeled test data".into())
            })
        })
        .collect()
}

/// Per-sample hidden representations before and after attractor dynamics.
pub struct HiddenEvaluations {
    pub feedforward: Vec<Vec<f64>>,
    pub attractor: Vec<Vec<f64>>,
    pub converged: Vec<bool>,
    pub steps: Vec<Option<usize>>,
}

/// Encodes the given test samples and runs the attractor on each.
pub fn evaluate_hidden(
    container: &ModelContainer,
    test: &EncodedDataset,
    indices: &[usize],
) -> Result<HiddenEvaluations> {
    let ff_model = &container.feedforward;
    let rec = &container.recurrent;
    let persistent = container.config.drive_mode == DriveMode::PersistentDrive;

    let rows: Vec<(Vec<f64>, Vec<f64>, bool, Option<usize>)> = indices
        .par_iter()
        .map(|&k| {
            let input = test.activity(k);
            let support = ff_model.encode_support(&input)?;
            let ff_act = softmax_per_hypercolumn(&support);
            let drive = if persistent { Some(&support) } else { None };
            let (att, converged, steps) = rec.attractor_final(&ff_act, drive)?;
            Ok((ff_act.into_values(), att.into_values(), converged, steps))
        })
        .collect::<Result<_>>()?;

    let mut out = HiddenEvaluations {
        feedforward: Vec::with_capacity(rows.len()),
        attractor: Vec::with_capacity(rows.len()),
        converged: Vec::with_capacity(rows.len()),
        steps: Vec::with_capacity(rows.len()),
    };
    for (ff, att, conv, steps) in rows {
        out.feedforward.push(ff);
        out.attractor.push(att);
        out.converged.push(conv);
        out.steps.push(steps);
    }
    Ok(out)
}

/// Trains the input-space baseline attractor on the training set when
/// available, otherwise on the evaluation samples. Passes repeat until the
/// cumulative update count reaches the full-training-set equivalent;
/// with fewer updates the uniform-init residue in the traces manufactures
/// a spurious global attractor (the residue inflates the joint estimate of
/// every frequently-active pair relative to the marginals).
pub fn train_input_attractor(
    cfg: &ExperimentConfig,
    train: Option<&EncodedDataset>,
    test: &EncodedDataset,
    eval_indices: &[usize],
) -> Result<RecurrentModel> {
    let mut baseline_cfg = cfg.clone();
    baseline_cfg.drive_mode = DriveMode::ClampedInit;
    let geometry = dataio::input_geometry();
    match train {
        Some(train) => {
            let n = train.len();
            let passes = BASELINE_TARGET_UPDATES.div_ceil(n).max(1);
            train_attractor_from_batches(geometry, n, passes, &baseline_cfg, |chunk| {
                Ok(train.batch(chunk))
            })
        }
        None => {
            let n = eval_indices.len();
            let passes = BASELINE_TARGET_UPDATES.div_ceil(n).max(1);
            train_attractor_from_batches(geometry, n, passes, &baseline_cfg, |chunk| {
                let mapped: Vec<usize> = chunk.iter().map(|&k| eval_indices[k]).collect();
                Ok(test.batch(&mapped))
            })
        }
    }
}

/// The four orthogonality-ratio rows, in comparison order.
#[derive(Debug, Clone)]
pub struct OrthoReport {
    /// (repr_kind, ratio, sample count)
    pub rows: Vec<(String, f64, usize)>,
}

impl OrthoReport {
    pub fn ratio(&self, kind: &str) -> f64 {
        self.rows
            .iter()
            .find(|(k, _, _)| k == kind)
            .map(|&(_, r, _)| r)
            .expect("known repr kind")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("repr_kind,ratio,n\n");
        for (kind, ratio, n) in &self.rows {
            out.push_str(&format!("{kind},{ratio:.6},{n}\n"));
        }
        out
    }
}

/// Computes similarity ratios for the input data, the input-space
/// attractor baseline, the feedforward representations, and the attractor
/// representations.
pub fn eval_ortho(
    container: &ModelContainer,
    test: &EncodedDataset,
    train: Option<&EncodedDataset>,
) -> Result<OrthoReport> {
    let cfg = &container.config;
    let indices = pick_eval_indices(cfg, test.len());
    let labels = labels_for(test, &indices)?;
    let n = indices.len();

    // input data: per-pixel intensities
    let input_reps: Vec<Vec<f64>> = indices
        .iter()
        .map(|&k| dataio::on_unit_values(&test.activity(k)))
        .collect();

    // attractor trained directly on the input code
    let baseline = train_input_attractor(cfg, train, test, &indices)?;
    let baseline_reps: Vec<Vec<f64>> = indices
        .par_iter()
        .map(|&k| {
            let input = test.activity(k);
            let (state, _, _) = baseline.attractor_final(&input, None)?;
            Ok(dataio::on_unit_values(&state))
        })
        .collect::<Result<_>>()?;

    let hidden = evaluate_hidden(container, test, &indices)?;

    let ratio_of = |reps: &[Vec<f64>]| -> Result<f64> {
        orthogonality_ratio(&similarity_matrix(reps, &labels)?)
    };
    let rows = vec![
        ("input".to_string(), ratio_of(&input_reps)?, n),
        ("attractor_input".to_string(), ratio_of(&baseline_reps)?, n),
        ("feedforward".to_string(), ratio_of(&hidden.feedforward)?, n),
        (
            "feedforward_recurrent".to_string(),
            ratio_of(&hidden.attractor)?,
            n,
        ),
    ];
    Ok(OrthoReport { rows })
}

/// Prototype tables and reconstruction gallery data for one threshold.
pub struct ProtoThetaReport {
    pub theta: f64,
    pub clustering: PrototypeClustering,
    /// Majority label per prototype.
    pub majority: Vec<u8>,
    /// Top-down reconstruction of each prototype leader as pixel bytes.
    pub leader_images: Vec<Vec<u8>>,
}

pub struct ProtoReport {
    pub per_theta: Vec<ProtoThetaReport>,
    pub n: usize,
    pub converged_fraction: f64,
    pub median_steps: usize,
}

impl ProtoThetaReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("prototype_id,count,label_majority\n");
        for (id, p) in self.clustering.prototypes.iter().enumerate() {
            out.push_str(&format!("{id},{},{}\n", p.members.len(), self.majority[id]));
        }
        out
    }
}

/// Runs the attractor over the evaluation samples and clusters the final
/// states at thresholds 0.5 and 0.9.
pub fn eval_protos(container: &ModelContainer, test: &EncodedDataset) -> Result<ProtoReport> {
    let cfg = &container.config;
    let indices = pick_eval_indices(cfg, test.len());
    let labels = labels_for(test, &indices)?;
    let hidden = evaluate_hidden(container, test, &indices)?;

    let converged_fraction =
        hidden.converged.iter().filter(|&&c| c).count() as f64 / hidden.converged.len() as f64;
    let mut step_counts: Vec<usize> = hidden
        .steps
        .iter()
        .map(|s| s.unwrap_or(cfg.timesteps))
        .collect();
    step_counts.sort_unstable();
    let median_steps = step_counts[step_counts.len() / 2];

    let hidden_geometry = container.feedforward.hidden_geometry();
    let mut per_theta = Vec::new();
    for theta in [0.5, 0.9] {
        let clustering = extract_prototypes(&hidden.attractor, theta)?;
        let majority: Vec<u8> = (0..clustering.len())
            .map(|p| clustering.majority_label(p, &labels))
            .collect();
        let leader_images = clustering
            .prototypes
            .iter()
            .map(|p| {
                let state =
                    crate::geometry::ActivityVector::new(hidden_geometry, p.leader.clone())?;
                let recon = reconstruct(&container.feedforward, &state)?;
                Ok(dataio::on_units_to_pixels(&dataio::on_unit_values(&recon)))
            })
            .collect::<Result<Vec<_>>>()?;
        per_theta.push(ProtoThetaReport {
            theta,
            clustering,
            majority,
            leader_images,
        });
    }
    Ok(ProtoReport {
        per_theta,
        n: indices.len(),
        converged_fraction,
        median_steps,
    })
}

pub struct RobustReport {
    pub grid: RobustnessReport,
    /// Mean probe accuracy on the clean evaluation subset, per
    /// representation kind.
    pub clean_feedforward: f64,
    pub clean_attractor: f64,
    /// (filename, pixels) pairs for the before/after gallery.
    pub gallery: Vec<(String, Vec<u8>)>,
}

fn clean_features(
    container: &ModelContainer,
    data: &EncodedDataset,
    indices: &[usize],
) -> Result<(FeatureMatrix, Vec<u8>)> {
    let dim = container.feedforward.hidden_geometry().total_units();
    let mut features = FeatureMatrix::new(dim);
    let mut labels = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(256) {
        let batch = container.feedforward.encode_batch(&data.batch(chunk))?;
        for (i, &k) in chunk.iter().enumerate() {
            features.push_row(batch.row(i));
            labels.push(data.label(k).ok_or_else(|| {
                BcpnnError::Precondition("probe training requires labeled data".into())
            })?);
        }
    }
    Ok((features, labels))
}

/// Builds the distorted benchmark, trains the probes on clean feedforward
/// representations, and scores both representation kinds across the grid.
pub fn eval_robust(
    container: &ModelContainer,
    test: &EncodedDataset,
    train: Option<&EncodedDataset>,
) -> Result<RobustReport> {
    let cfg = &container.config;
    let distorted = build_distorted_set(test, cfg.distortion_samples_per_cell, cfg.distortion_seed)?;
    let probes = train_probes_on_clean(container, test, train)?;
    let grid = evaluate_robustness(&probes, &container.feedforward, &container.recurrent, &distorted, cfg)?;

    // clean-subset comparison of the two representation kinds
    let indices = pick_eval_indices(cfg, test.len());
    let labels = labels_for(test, &indices)?;
    let hidden = evaluate_hidden(container, test, &indices)?;
    let mean_acc = |reps: &[Vec<f64>]| -> f64 {
        let mut total = 0.0;
        for probe in &probes {
            let correct = reps
                .iter()
                .zip(&labels)
                .filter(|(r, &l)| probe.predict(r) == l)
                .count();
            total += correct as f64 / reps.len() as f64;
        }
        total / probes.len() as f64
    };
    let clean_feedforward = mean_acc(&hidden.feedforward);
    let clean_attractor = mean_acc(&hidden.attractor);

    let gallery = robust_gallery(container, &distorted)?;
    Ok(RobustReport {
        grid,
        clean_feedforward,
        clean_attractor,
        gallery,
    })
}

/// Probes are trained on the clean training set when provided, otherwise on
/// the clean test encodings (recorded in the report metadata).
pub fn train_probes_on_clean(
    container: &ModelContainer,
    test: &EncodedDataset,
    train: Option<&EncodedDataset>,
) -> Result<Vec<LinearProbe>> {
    let cfg = &container.config;
    let source = train.unwrap_or(test);
    let n = if cfg.train_limit > 0 {
        source.len().min(cfg.train_limit)
    } else {
        source.len()
    };
    let indices: Vec<usize> = (0..n).collect();
    let (features, labels) = clean_features(container, source, &indices)?;
    train_probe(
        &features,
        &labels,
        cfg.probe_trials,
        derive_seed(cfg.seed, PROBE_TAG),
        cfg.probe_passes,
        cfg.probe_step,
    )
}

fn robust_gallery(
    container: &ModelContainer,
    distorted: &DistortedSet,
) -> Result<Vec<(String, Vec<u8>)>> {
    let persistent = container.config.drive_mode == DriveMode::PersistentDrive;
    let mut seen = std::collections::BTreeSet::new();
    let mut gallery = Vec::new();
    for sample in distorted.samples() {
        let key = (sample.kind.name(), (sample.level * 10.0).round() as u32);
        if !seen.insert(key) {
            continue;
        }
        let input = dataio::encode_image(&sample.image);
        let support = container.feedforward.encode_support(&input)?;
        let ff_act = softmax_per_hypercolumn(&support);
        let drive = if persistent { Some(&support) } else { None };
        let (att, _, _) = container.recurrent.attractor_final(&ff_act, drive)?;
        let recon = reconstruct(&container.feedforward, &att)?;
        let stem = format!("distort_{}_{:.1}_{}", sample.kind, sample.level, sample.source_index);
        gallery.push((format!("{stem}_in.pgm"), sample.image.pixels.clone()));
        gallery.push((
            format!("{stem}_out.pgm"),
            dataio::on_units_to_pixels(&dataio::on_unit_values(&recon)),
        ));
    }
    Ok(gallery)
}

/// `eval` subcommand: load the model, run one mode, write its outputs.
pub fn cmd_eval(
    model_path: &Path,
    test_images: &Path,
    test_labels: &Path,
    train_paths: Option<(&Path, &Path)>,
    mode: EvalMode,
    out_dir: &Path,
) -> Result<()> {
    let container = ModelContainer::load(model_path)?;
    let test = EncodedDataset::load(test_images, test_labels)?;
    let train = train_paths
        .map(|(i, l)| EncodedDataset::load(i, l))
        .transpose()?;
    std::fs::create_dir_all(out_dir).map_err(|e| BcpnnError::io(out_dir, e))?;

    match mode {
        EvalMode::Ortho => {
            let report = eval_ortho(&container, &test, train.as_ref())?;
            write_text(&out_dir.join("orthogonality.csv"), &report.to_csv())?;
            write_text(
                &out_dir.join("orthogonality_meta.txt"),
                &format!(
                    "samples={}\nbaseline_training={}\ndiagonal=excluded from both means\n",
                    report.rows[0].2,
                    if train.is_some() {
                        "one pass over the supplied training set"
                    } else {
                        "repeated passes over the clean test subset"
                    },
                ),
            )?;
            for (kind, ratio, n) in &report.rows {
                println!("orthogonality ratio [{kind}]: {ratio:.4} (n={n})");
            }
        }
        EvalMode::Protos => {
            let report = eval_protos(&container, &test)?;
            println!(
                "attractor convergence: {:.1}% of {} samples, median {} steps",
                report.converged_fraction * 100.0,
                report.n,
                report.median_steps
            );
            for theta_report in &report.per_theta {
                let theta = theta_report.theta;
                write_text(
                    &out_dir.join(format!("prototypes_{theta:.1}.csv")),
                    &theta_report.to_csv(),
                )?;
                let gallery_dir = out_dir.join(format!("protos_{theta:.1}"));
                std::fs::create_dir_all(&gallery_dir)
                    .map_err(|e| BcpnnError::io(&gallery_dir, e))?;
                for (id, p) in theta_report.clustering.prototypes.iter().enumerate() {
                    let name = format!("proto_{id}_n{}.pgm", p.members.len());
                    dataio::write_pgm(&gallery_dir.join(name), &theta_report.leader_images[id])?;
                }
                println!(
                    "theta {:.1}: {} prototypes over {} samples",
                    theta,
                    theta_report.clustering.len(),
                    report.n
                );
            }
        }
        EvalMode::Robust => {
            let report = eval_robust(&container, &test, train.as_ref())?;
            write_text(&out_dir.join("robustness.csv"), &report.grid.to_csv())?;
            write_text(
                &out_dir.join("robustness_meta.txt"),
                &format!(
                    "probe=one-vs-rest logistic SGD, passes={}, step={}, trials={}, no regularization\nprobe_training_set={}\nclean_feedforward_accuracy={:.4}\nclean_attractor_accuracy={:.4}\n",
                    container.config.probe_passes,
                    container.config.probe_step,
                    container.config.probe_trials,
                    if train.is_some() { "supplied training set" } else { "clean test encodings" },
                    report.clean_feedforward,
                    report.clean_attractor,
                ),
            )?;
            let gallery_dir = out_dir.join("gallery");
            std::fs::create_dir_all(&gallery_dir).map_err(|e| BcpnnError::io(&gallery_dir, e))?;
            for (name, pixels) in &report.gallery {
                dataio::write_pgm(&gallery_dir.join(name), pixels)?;
            }
            for level in crate::distort::levels() {
                println!(
                    "level {:.1}: feedforward {:.3}, attractor {:.3}",
                    level,
                    report.grid.mean_accuracy(level, ReprKind::Feedforward),
                    report.grid.mean_accuracy(level, ReprKind::Attractor)
                );
            }
        }
    }
    Ok(())
}

/// `distort` subcommand: write the benchmark as PGM files plus a manifest.
pub fn cmd_distort(
    test_images: &Path,
    test_labels: &Path,
    out_dir: &Path,
    seed: u64,
    samples_per_cell: usize,
) -> Result<()> {
    let test = EncodedDataset::load(test_images, test_labels)?;
    let set = build_distorted_set(&test, samples_per_cell, seed)?;
    std::fs::create_dir_all(out_dir).map_err(|e| BcpnnError::io(out_dir, e))?;

    let mut manifest = String::from("filename,type,level,label,seed\n");
    for (k, sample) in set.samples().iter().enumerate() {
        let idx = k % samples_per_cell;
        let name = format!("{}_{:.1}_{idx:03}.pgm", sample.kind, sample.level);
        dataio::write_pgm(&out_dir.join(&name), &sample.image.pixels)?;
        manifest.push_str(&format!(
            "{name},{},{:.1},{},{}\n",
            sample.kind,
            sample.level,
            sample.image.label.expect("labeled test data"),
            sample.seed
        ));
    }
    write_text(&out_dir.join("manifest.csv"), &manifest)?;
    println!(
        "wrote {} distorted images + manifest to {}",
        set.len(),
        out_dir.display()
    );
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| BcpnnError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn small_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.h_hidden = 8;
        cfg.m_hidden = 8;
        cfg.alpha = 0.01;
        cfg.epochs = 2;
        cfg.rewire_epochs = 1;
        cfg.eval_samples = 60;
        cfg.probe_trials = 2;
        cfg.probe_passes = 5;
        cfg.distortion_samples_per_cell = 1;
        cfg.seed = 7;
        cfg
    }

    fn small_world() -> (ExperimentConfig, EncodedDataset, EncodedDataset, ModelContainer) {
        let cfg = small_cfg();
        let train = EncodedDataset::from_images(synth::generate_images(150, 100));
        let test = EncodedDataset::from_images(synth::generate_images(80, 200));
        let container = train_in_memory(&cfg, &train, false).unwrap();
        (cfg, train, test, container)
    }

    #[test]
    fn eval_indices_are_deterministic_and_sorted() {
        let cfg = small_cfg();
        let a = pick_eval_indices(&cfg, 500);
        let b = pick_eval_indices(&cfg, 500);
        assert_eq!(a, b);
        assert_eq!(a.len(), 60);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn ortho_report_has_four_rows_in_order() {
        let (_, train, test, container) = small_world();
        let report = eval_ortho(&container, &test, Some(&train)).unwrap();
        let kinds: Vec<&str> = report.rows.iter().map(|(k, _, _)| k.as_str()).collect();
        assert_eq!(
            kinds,
            ["input", "attractor_input", "feedforward", "feedforward_recurrent"]
        );
        let csv = report.to_csv();
        assert!(csv.starts_with("repr_kind,ratio,n\n"));
        assert_eq!(csv.lines().count(), 5);
        // hidden representations separate classes better than raw input
        assert!(report.ratio("feedforward") > report.ratio("input"));
    }

    #[test]
    fn protos_counts_grow_with_theta_on_real_states() {
        let (_, _, test, container) = small_world();
        let report = eval_protos(&container, &test).unwrap();
        assert_eq!(report.per_theta.len(), 2);
        let n_05 = report.per_theta[0].clustering.len();
        let n_09 = report.per_theta[1].clustering.len();
        assert!(n_09 >= n_05, "theta 0.9 gave {n_09} < {n_05} at 0.5");
        for theta_report in &report.per_theta {
            assert_eq!(
                theta_report.leader_images.len(),
                theta_report.clustering.len()
            );
            let total: usize = theta_report
                .clustering
                .prototypes
                .iter()
                .map(|p| p.members.len())
                .sum();
            assert_eq!(total, report.n);
        }
    }

    #[test]
    fn robust_grid_has_full_shape() {
        let (cfg, train, test, container) = small_world();
        let report = eval_robust(&container, &test, Some(&train)).unwrap();
        assert_eq!(report.grid.rows.len(), 9 * 10 * 2 * cfg.probe_trials);
        let csv = report.grid.to_csv();
        assert_eq!(csv.lines().count(), 1 + report.grid.rows.len());
        assert!(report.clean_feedforward > 0.0);
        // one in/out pair per (kind, level)
        assert_eq!(report.gallery.len(), 9 * 10 * 2);
    }

    #[test]
    fn train_twice_is_bit_identical() {
        let cfg = small_cfg();
        let train = EncodedDataset::from_images(synth::generate_images(120, 5));
        let a = train_in_memory(&cfg, &train, false).unwrap().to_bytes();
        let b = train_in_memory(&cfg, &train, false).unwrap().to_bytes();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_epoch_training_is_loadable() {
        let mut cfg = small_cfg();
        cfg.epochs = 0;
        let train = EncodedDataset::from_images(synth::generate_images(30, 5));
        let container = train_in_memory(&cfg, &train, false).unwrap();
        let bytes = container.to_bytes();
        let loaded = ModelContainer::from_bytes(&bytes).unwrap();
        assert!(loaded
            .feedforward
            .params()
            .weights_raw()
            .iter()
            .all(|&w| w == 0.0));
        assert!(loaded
            .recurrent
            .params()
            .weights_raw()
            .iter()
            .all(|&w| w == 0.0));
    }

    #[test]
    fn distort_command_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let paths = synth::write_dataset(dir.path(), 10, 60, 3).unwrap();
        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        cmd_distort(&paths.test_images, &paths.test_labels, &out_a, 5, 2).unwrap();
        cmd_distort(&paths.test_images, &paths.test_labels, &out_b, 5, 2).unwrap();
        let manifest_a = std::fs::read(out_a.join("manifest.csv")).unwrap();
        let manifest_b = std::fs::read(out_b.join("manifest.csv")).unwrap();
        assert_eq!(manifest_a, manifest_b);
        let count = std::fs::read_dir(&out_a).unwrap().count();
        assert_eq!(count, 9 * 10 * 2 + 1); // images + manifest
        // one arbitrary image byte-compares across runs
        let img_a = std::fs::read(out_a.join("grid_0.3_001.pgm")).unwrap();
        let img_b = std::fs::read(out_b.join("grid_0.3_001.pgm")).unwrap();
        assert_eq!(img_a, img_b);
    }
}
