//! The input-to-hidden projection: unsupervised training with interleaved
//! structural plasticity, and the encoding of inputs into hidden
//! representations.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bcpnn::{softmax_in_place, softmax_per_hypercolumn, PTraces, ProjectionParams, TRACE_BATCH};
use crate::config::ExperimentConfig;
use crate::dataio::EncodedDataset;
use crate::error::{BcpnnError, Result};
use crate::geometry::{ActivityBatch, ActivityVector, LayerGeometry, SupportVector};
use crate::topology::{mutual_information_scores, rewire, ConnectivityMask};
use crate::util::derive_seed;

const MASK_SEED_TAG: u64 = 0x11;
const SHUFFLE_SEED_TAG: u64 = 0x22;
const BOOTSTRAP_SEED_TAG: u64 = 0x55;

/// Blend factor of the template bootstrap: joint traces start at
/// `(1 - beta) * uniform + beta * sample_template`.
const BOOTSTRAP_BETA: f64 = 0.5;

/// Trained feedforward projection with its connectivity and traces.
#[derive(Debug, Clone)]
pub struct FeedforwardModel {
    input_geometry: LayerGeometry,
    hidden_geometry: LayerGeometry,
    mask: ConnectivityMask,
    traces: PTraces,
    params: ProjectionParams,
    epochs_trained: usize,
    seed: u64,
}

/// Per-pass training diagnostics.
#[derive(Debug, Clone)]
pub struct FfEpochStats {
    pub epoch: usize,
    pub seconds: f64,
    /// Connections changed by the rewiring step after this pass.
    pub rewired_connections: usize,
    pub joint_trace_min: f64,
    pub joint_trace_mean: f64,
    pub joint_trace_max: f64,
    /// Mean per-hypercolumn max activity over the last batch; rises as
    /// representations sharpen.
    pub mean_peak_activity: f64,
}

impl FeedforwardModel {
    #[inline]
    pub fn input_geometry(&self) -> LayerGeometry {
        self.input_geometry
    }

    #[inline]
    pub fn hidden_geometry(&self) -> LayerGeometry {
        self.hidden_geometry
    }

    pub fn mask(&self) -> &ConnectivityMask {
        &self.mask
    }

    pub fn traces(&self) -> &PTraces {
        &self.traces
    }

    pub fn params(&self) -> &ProjectionParams {
        &self.params
    }

    pub fn epochs_trained(&self) -> usize {
        self.epochs_trained
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub(crate) fn from_parts(
        mask: ConnectivityMask,
        traces: PTraces,
        params: ProjectionParams,
        epochs_trained: usize,
        seed: u64,
    ) -> Self {
        Self {
            input_geometry: mask.source_geometry(),
            hidden_geometry: mask.target_geometry(),
            mask,
            traces,
            params,
            epochs_trained,
            seed,
        }
    }

    /// Hidden activity for one input: propagate then softmax. Read-only.
    pub fn encode(&self, input: &ActivityVector) -> Result<ActivityVector> {
        Ok(softmax_per_hypercolumn(&self.params.propagate(input)?))
    }

    /// Pre-softmax hidden support for one input (used as persistent drive).
    pub fn encode_support(&self, input: &ActivityVector) -> Result<SupportVector> {
        self.params.propagate(input)
    }

    /// Hidden activities for a batch of inputs, parallel across samples.
    pub fn encode_batch(&self, inputs: &ActivityBatch) -> Result<ActivityBatch> {
        if inputs.geometry() != self.input_geometry {
            return Err(BcpnnError::DimensionMismatch(
                "batch geometry does not match model input geometry".into(),
            ));
        }
        Ok(encode_rows(&self.params, inputs))
    }
}

fn encode_rows(params: &ProjectionParams, inputs: &ActivityBatch) -> ActivityBatch {
    let hidden = params.target_geometry();
    let m = hidden.minicolumns();
    ActivityBatch::from_rows_parallel(hidden, inputs.len(), |k, row| {
        let src = inputs.row(k);
        for t in 0..hidden.num_hypercolumns() {
            params.propagate_block(t, src, &mut row[t * m..(t + 1) * m]);
        }
        softmax_in_place(row, m);
    })
}

/// Training-time winner assignment: one-hot argmax per hypercolumn of
/// `likelihood - (log win rate - log uniform)`, i.e. the support with the
/// log-prior replaced by an equally strong frequency penalty
/// (`support - 2*bias` up to a per-hypercolumn constant).
///
/// Competing on the full posterior lets an early leader absorb every
/// sample: losers' posterior traces decay, their bias diverges, and they
/// never recover. The conscience term steers win rates toward uniform, so
/// the units partition the input space and the bias spread stays small
/// enough for the standard activation rule to rank by likelihood at
/// inference time.
fn winner_rows(params: &ProjectionParams, inputs: &ActivityBatch) -> ActivityBatch {
    let hidden = params.target_geometry();
    let m = hidden.minicolumns();
    let bias = params.bias();
    ActivityBatch::from_rows_parallel(hidden, inputs.len(), |k, row| {
        let src = inputs.row(k);
        for t in 0..hidden.num_hypercolumns() {
            let out = &mut row[t * m..(t + 1) * m];
            params.propagate_block(t, src, out);
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for (i, &v) in out.iter().enumerate() {
                let v = v - 2.0 * bias[t * m + i];
                if v > best_v {
                    best = i;
                    best_v = v;
                }
            }
            out.fill(0.0);
            out[best] = 1.0;
        }
    })
}

/// Trains the feedforward projection: per pass, every sample's hidden
/// activity is computed with the current parameters and fed to the trace
/// update; parameters are recomputed once per pass; the first
/// `rewire_epochs` passes end with a structural-plasticity step.
/// Deterministic for a fixed config and seed.
pub fn train_feedforward(
    dataset: &EncodedDataset,
    cfg: &ExperimentConfig,
) -> Result<FeedforwardModel> {
    train_feedforward_with_progress(dataset, cfg, &mut |_| {})
}

pub fn train_feedforward_with_progress(
    dataset: &EncodedDataset,
    cfg: &ExperimentConfig,
    progress: &mut dyn FnMut(&FfEpochStats),
) -> Result<FeedforwardModel> {
    if dataset.is_empty() {
        return Err(BcpnnError::InvalidParameter(
            "cannot train on an empty dataset".into(),
        ));
    }
    let input_geometry = cfg.input_geometry();
    if dataset.geometry() != input_geometry {
        return Err(BcpnnError::DimensionMismatch(
            "dataset geometry does not match configured input layer".into(),
        ));
    }
    let hidden_geometry = cfg.hidden_geometry();
    let seed = cfg.seed;

    let mut mask = ConnectivityMask::random(
        input_geometry,
        hidden_geometry,
        cfg.p_conn,
        derive_seed(seed, MASK_SEED_TAG),
    )?;
    let rewire_epochs = cfg.rewire_epochs.min(cfg.epochs);
    // During rewiring, joint traces are kept for every candidate pair so
    // silent sources can be scored; afterwards traces shrink to the mask.
    let reservoir = if rewire_epochs > 0 {
        ConnectivityMask::full(input_geometry, hidden_geometry)
    } else {
        mask.clone()
    };
    let mut traces = PTraces::init(&reservoir, cfg.alpha, cfg.eps_trace)?;
    let mut params = traces.compute_params(&mask)?;

    let n = if cfg.train_limit > 0 {
        dataset.len().min(cfg.train_limit)
    } else {
        dataset.len()
    };

    // With exactly uniform traces every minicolumn of a hypercolumn
    // receives identical updates and the tie never breaks. Seed each unit's
    // joint traces with the encoded pixels of one training sample (blended
    // with uniform), the standard sample-based initialization of
    // competitive learning; the marginals are set to the matching means so
    // the traces stay a consistent joint distribution.
    if cfg.epochs > 0 {
        bootstrap_templates(&mut traces, dataset, n, derive_seed(seed, BOOTSTRAP_SEED_TAG));
        params = traces.compute_params(&mask)?;
    }

    for epoch in 0..cfg.epochs {
        let t0 = Instant::now();
        let mut order: Vec<usize> = (0..n).collect();
        if cfg.shuffle {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(seed, SHUFFLE_SEED_TAG + epoch as u64));
            order.shuffle(&mut rng);
        }

        let mut mean_peak = 0.0;
        let n_chunks = order.chunks(TRACE_BATCH).count();
        for (ci, chunk) in order.chunks(TRACE_BATCH).enumerate() {
            let inputs = dataset.batch(chunk);
            let winners = winner_rows(&params, &inputs);
            traces.update_batch(&inputs, &winners)?;
            // refresh the running estimates so every batch sees the newest
            // statistics (one smoothed competitive-learning step per batch)
            params = traces.compute_params(&mask)?;
            if ci == n_chunks - 1 {
                // graded-encoder sharpness on the pass's final batch
                mean_peak = peak_activity(&encode_rows(&params, &inputs));
            }
        }

        let rewired_connections = if epoch < rewire_epochs {
            let scores = mutual_information_scores(&traces);
            let next = rewire(&mask, &scores, cfg.swap_fraction)?;
            let changed = changed_connections(&mask, &next);
            mask = next;
            changed
        } else {
            0
        };

        params = traces.compute_params(&mask)?;

        let (jmin, jmean, jmax) = trace_stats(&traces);
        progress(&FfEpochStats {
            epoch,
            seconds: t0.elapsed().as_secs_f64(),
            rewired_connections,
            joint_trace_min: jmin,
            joint_trace_mean: jmean,
            joint_trace_max: jmax,
            mean_peak_activity: mean_peak,
        });
    }

    if rewire_epochs > 0 {
        traces = traces.restrict(&mask)?;
    }

    Ok(FeedforwardModel {
        input_geometry,
        hidden_geometry,
        mask,
        traces,
        params,
        epochs_trained: cfg.epochs,
        seed,
    })
}

/// Seeds each hidden minicolumn's joint traces with the encoded pixels of
/// one randomly chosen training sample. Minicolumn `j` of every hidden
/// hypercolumn is seeded from the same sample (their receptive fields
/// differ), keeping the traces a marginally consistent joint distribution.
fn bootstrap_templates(traces: &mut PTraces, dataset: &EncodedDataset, n: usize, seed: u64) {
    let m_hidden = traces.target_geometry().minicolumns();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<usize> = if n >= m_hidden {
        rand::seq::index::sample(&mut rng, n, m_hidden).into_vec()
    } else {
        (0..m_hidden).map(|j| j % n).collect()
    };
    let templates = dataset.batch(&picks);
    traces.seed_templates(&templates, BOOTSTRAP_BETA);
}

fn peak_activity(batch: &ActivityBatch) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let g = batch.geometry();
    let m = g.minicolumns();
    let mut total = 0.0;
    for k in 0..batch.len() {
        let row = batch.row(k);
        let mut per_sample = 0.0;
        for hc in row.chunks(m) {
            per_sample += hc.iter().fold(0.0f64, |a, &b| a.max(b));
        }
        total += per_sample / g.num_hypercolumns() as f64;
    }
    total / batch.len() as f64
}

fn trace_stats(traces: &PTraces) -> (f64, f64, f64) {
    let joint = traces.joint_raw();
    if joint.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let mut min = f64::MAX;
    let mut max = f64::MIN;
    let mut sum = 0.0;
    for &v in joint {
        min = min.min(v);
        max = max.max(v);
        sum += v;
    }
    (min, sum / joint.len() as f64, max)
}

fn changed_connections(a: &ConnectivityMask, b: &ConnectivityMask) -> usize {
    (0..a.target_geometry().num_hypercolumns())
        .map(|t| {
            b.sources(t)
                .iter()
                .filter(|s| a.sources(t).binary_search(s).is_err())
                .count()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{EncodedDataset, RawImage, IMAGE_PIXELS};
    use crate::synth;

    fn tiny_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.h_hidden = 6;
        cfg.m_hidden = 8;
        cfg.alpha = 0.01;
        cfg.epochs = 3;
        cfg.rewire_epochs = 2;
        cfg.seed = 1234;
        cfg
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let data = EncodedDataset::from_images(vec![]);
        assert!(train_feedforward(&data, &tiny_cfg()).is_err());
    }

    #[test]
    fn zero_epochs_yields_uniform_encoder() {
        let data = EncodedDataset::from_images(synth::generate_images(10, 3));
        let mut cfg = tiny_cfg();
        cfg.epochs = 0;
        let model = train_feedforward(&data, &cfg).unwrap();
        assert_eq!(model.epochs_trained(), 0);
        let uniform = ActivityVector::uniform(model.hidden_geometry());
        for k in 0..data.len() {
            let h = model.encode(&data.activity(k)).unwrap();
            assert_eq!(h, uniform);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = EncodedDataset::from_images(synth::generate_images(40, 7));
        let cfg = tiny_cfg();
        let a = train_feedforward(&data, &cfg).unwrap();
        let b = train_feedforward(&data, &cfg).unwrap();
        assert_eq!(a.params().weights_raw(), b.params().weights_raw());
        assert_eq!(a.params().bias(), b.params().bias());
        assert_eq!(a.traces().joint_raw(), b.traces().joint_raw());
        assert_eq!(a.mask(), b.mask());
    }

    #[test]
    fn params_are_consistent_with_traces() {
        let data = EncodedDataset::from_images(synth::generate_images(30, 5));
        let model = train_feedforward(&data, &tiny_cfg()).unwrap();
        let recomputed = model.traces().compute_params(model.mask()).unwrap();
        assert_eq!(recomputed.weights_raw(), model.params().weights_raw());
        assert_eq!(recomputed.bias(), model.params().bias());
    }

    #[test]
    fn single_pattern_training_peaks_monotonically() {
        let mut img = RawImage::new(vec![0; IMAGE_PIXELS], Some(0)).unwrap();
        for p in 300..340 {
            img.pixels[p] = 230;
        }
        let data = EncodedDataset::from_images(vec![img]);
        let mut cfg = tiny_cfg();
        cfg.alpha = 0.05;
        cfg.epochs = 3;
        cfg.rewire_epochs = 0;
        cfg.shuffle = false;
        let mut peaks = Vec::new();
        train_feedforward_with_progress(&data, &cfg, &mut |s| peaks.push(s.mean_peak_activity))
            .unwrap();
        assert_eq!(peaks.len(), 3);
        assert!(peaks[1] > peaks[0]);
        assert!(peaks[2] > peaks[1]);
        assert!(peaks[0] > 1.0 / cfg.m_hidden as f64);
    }

    #[test]
    fn encode_is_normalized_and_read_only() {
        let data = EncodedDataset::from_images(synth::generate_images(25, 9));
        let model = train_feedforward(&data, &tiny_cfg()).unwrap();
        let before = model.params().weights_raw().to_vec();
        let g = model.hidden_geometry();
        for k in 0..5 {
            let h = model.encode(&data.activity(k)).unwrap();
            for hc in 0..g.num_hypercolumns() {
                let s: f64 = h.values()[g.hypercolumn_range(hc)].iter().sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
        assert_eq!(model.params().weights_raw(), &before[..]);
    }

    #[test]
    fn batch_encode_agrees_with_serial_encode() {
        let data = EncodedDataset::from_images(synth::generate_images(12, 11));
        let model = train_feedforward(&data, &tiny_cfg()).unwrap();
        let idx: Vec<usize> = (0..12).collect();
        let batch = model.encode_batch(&data.batch(&idx)).unwrap();
        for k in 0..12 {
            let serial = model.encode(&data.activity(k)).unwrap();
            assert_eq!(batch.row(k), serial.values());
        }
    }

    #[test]
    fn geometry_mismatch_is_a_dimension_error() {
        let data = EncodedDataset::from_images(synth::generate_images(10, 2));
        let model = train_feedforward(&data, &tiny_cfg()).unwrap();
        let wrong = ActivityVector::uniform(LayerGeometry::new(3, 2).unwrap());
        assert!(matches!(
            model.encode(&wrong),
            Err(BcpnnError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn representations_sharpen_after_training() {
        let data = EncodedDataset::from_images(synth::generate_images(60, 21));
        let mut cfg = tiny_cfg();
        cfg.alpha = 0.02;
        let model = train_feedforward(&data, &cfg).unwrap();
        let g = model.hidden_geometry();
        let mut peaks: Vec<f64> = Vec::new();
        for k in 0..data.len() {
            let h = model.encode(&data.activity(k)).unwrap();
            let mut peak = 0.0;
            for hc in 0..g.num_hypercolumns() {
                peak += h.values()[g.hypercolumn_range(hc)]
                    .iter()
                    .fold(0.0f64, |a, &b| a.max(b));
            }
            peaks.push(peak / g.num_hypercolumns() as f64);
        }
        peaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = peaks[peaks.len() / 2];
        assert!(
            median > 1.0 / g.minicolumns() as f64,
            "median peak {median} not above uniform level"
        );
    }
}
