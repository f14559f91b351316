//! The recurrent attractor projection: trained on the feedforward-driven
//! hidden activities, iterated for pattern completion, and projected back
//! to the input layer for visualization.

use crate::bcpnn::{softmax_per_hypercolumn, PTraces, ProjectionParams, TRACE_BATCH};
use crate::config::{DriveMode, ExperimentConfig};
use crate::dataio::EncodedDataset;
use crate::error::{BcpnnError, Result};
use crate::feedforward::FeedforwardModel;
use crate::geometry::{ActivityBatch, ActivityVector, LayerGeometry, SupportVector};
use crate::topology::ConnectivityMask;

/// Trained recurrent projection over the hidden layer. Connectivity is
/// full between distinct hypercolumns; within-hypercolumn pairs (self
/// included) carry no weights since the softmax already enforces their
/// mutual exclusion.
#[derive(Debug, Clone)]
pub struct RecurrentModel {
    geometry: LayerGeometry,
    traces: PTraces,
    params: ProjectionParams,
    timesteps: usize,
    drive_mode: DriveMode,
    drive_gain: f64,
    eps_conv: f64,
}

/// States visited by one attractor run: the initial state plus at most
/// `timesteps` iterates.
#[derive(Debug, Clone)]
pub struct AttractorTrajectory {
    pub states: Vec<ActivityVector>,
    pub converged: bool,
    pub steps_to_convergence: Option<usize>,
}

impl AttractorTrajectory {
    pub fn final_state(&self) -> &ActivityVector {
        self.states.last().expect("trajectory holds >= 1 state")
    }
}

impl RecurrentModel {
    #[inline]
    pub fn geometry(&self) -> LayerGeometry {
        self.geometry
    }

    pub fn traces(&self) -> &PTraces {
        &self.traces
    }

    pub fn params(&self) -> &ProjectionParams {
        &self.params
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn drive_mode(&self) -> DriveMode {
        self.drive_mode
    }

    pub fn drive_gain(&self) -> f64 {
        self.drive_gain
    }

    pub fn eps_conv(&self) -> f64 {
        self.eps_conv
    }

    pub(crate) fn from_parts(
        traces: PTraces,
        params: ProjectionParams,
        timesteps: usize,
        drive_mode: DriveMode,
        drive_gain: f64,
        eps_conv: f64,
    ) -> Self {
        Self {
            geometry: traces.target_geometry(),
            traces,
            params,
            timesteps,
            drive_mode,
            drive_gain,
            eps_conv,
        }
    }

    /// Synchronous attractor iteration from `initial`:
    /// `state_{t+1} = softmax(b + W state_t [+ gain * ff_support])`,
    /// stopping early once the max-norm step falls below `eps_conv`.
    /// The feedforward support only enters in persistent-drive mode.
    pub fn run_attractor(
        &self,
        initial: &ActivityVector,
        ff_support: Option<&SupportVector>,
    ) -> Result<AttractorTrajectory> {
        self.check_initial(initial, ff_support)?;
        let mut states = vec![initial.clone()];
        let mut converged = false;
        let mut steps_to_convergence = None;
        let mut state = initial.clone();
        for t in 1..=self.timesteps {
            let next = self.step(&state, ff_support)?;
            let delta = next.max_abs_diff(&state);
            states.push(next.clone());
            state = next;
            if delta < self.eps_conv {
                converged = true;
                steps_to_convergence = Some(t);
                break;
            }
        }
        Ok(AttractorTrajectory {
            states,
            converged,
            steps_to_convergence,
        })
    }

    /// Like [`run_attractor`](Self::run_attractor) but keeps only the final
    /// state; used when trajectories for many samples would not fit memory.
    pub fn attractor_final(
        &self,
        initial: &ActivityVector,
        ff_support: Option<&SupportVector>,
    ) -> Result<(ActivityVector, bool, Option<usize>)> {
        self.check_initial(initial, ff_support)?;
        let mut state = initial.clone();
        for t in 1..=self.timesteps {
            let next = self.step(&state, ff_support)?;
            let delta = next.max_abs_diff(&state);
            state = next;
            if delta < self.eps_conv {
                return Ok((state, true, Some(t)));
            }
        }
        Ok((state, false, None))
    }

    fn check_initial(
        &self,
        initial: &ActivityVector,
        ff_support: Option<&SupportVector>,
    ) -> Result<()> {
        if initial.geometry() != self.geometry {
            return Err(BcpnnError::DimensionMismatch(
                "initial state does not match hidden geometry".into(),
            ));
        }
        if let Some(s) = ff_support {
            if s.geometry() != self.geometry {
                return Err(BcpnnError::DimensionMismatch(
                    "feedforward support does not match hidden geometry".into(),
                ));
            }
        }
        Ok(())
    }

    fn step(
        &self,
        state: &ActivityVector,
        ff_support: Option<&SupportVector>,
    ) -> Result<ActivityVector> {
        let support = self.params.propagate(state)?;
        let support = match (self.drive_mode, ff_support) {
            (DriveMode::PersistentDrive, Some(ff)) => {
                let values: Vec<f64> = support
                    .values()
                    .iter()
                    .zip(ff.values())
                    .map(|(s, f)| s + self.drive_gain * f)
                    .collect();
                SupportVector::new(self.geometry, values)?
            }
            _ => support,
        };
        Ok(softmax_per_hypercolumn(&support))
    }

    /// Support/activity alignment `sum_j s_j pi_j` of one state; a soft
    /// attractor-descent diagnostic (non-decreasing along most
    /// trajectories in clamped-init mode).
    pub fn support_alignment(&self, state: &ActivityVector) -> Result<f64> {
        let support = self.params.propagate(state)?;
        Ok(support
            .values()
            .iter()
            .zip(state.values())
            .map(|(s, p)| s * p)
            .sum())
    }
}

/// Trains a recurrent attractor on externally supplied activity batches.
/// `batch_fn` must return the activities for the requested sample indices;
/// it is called per pass in fixed chunk order. Used both for the hidden
/// layer (batches come from the feedforward encoder) and for input-space
/// baseline attractors.
pub fn train_attractor_from_batches<F>(
    geometry: LayerGeometry,
    n_samples: usize,
    passes: usize,
    cfg: &ExperimentConfig,
    batch_fn: F,
) -> Result<RecurrentModel>
where
    F: Fn(&[usize]) -> Result<ActivityBatch>,
{
    if n_samples == 0 {
        return Err(BcpnnError::InvalidParameter(
            "cannot train an attractor on zero samples".into(),
        ));
    }
    let mask = ConnectivityMask::full_excluding_self(geometry);
    let mut traces = PTraces::init(&mask, cfg.alpha, cfg.eps_trace)?;
    let indices: Vec<usize> = (0..n_samples).collect();
    for _pass in 0..passes {
        for chunk in indices.chunks(TRACE_BATCH) {
            let batch = batch_fn(chunk)?;
            traces.update_batch(&batch, &batch)?;
        }
    }
    let params = traces.compute_params(&mask)?;
    Ok(RecurrentModel::from_parts(
        traces,
        params,
        cfg.timesteps,
        cfg.drive_mode,
        cfg.drive_gain,
        cfg.eps_conv,
    ))
}

/// Trains the recurrent projection on the feedforward-driven hidden
/// activities of `dataset` (one pass per `recurrent_epochs`, parameters
/// recomputed at the end).
pub fn train_recurrent(
    ff_model: &FeedforwardModel,
    dataset: &EncodedDataset,
    cfg: &ExperimentConfig,
) -> Result<RecurrentModel> {
    if ff_model.epochs_trained() < 1 {
        return Err(BcpnnError::Precondition(
            "recurrent training needs a feedforward model trained for >= 1 epoch".into(),
        ));
    }
    if dataset.is_empty() {
        return Err(BcpnnError::InvalidParameter(
            "cannot train on an empty dataset".into(),
        ));
    }
    let n = if cfg.train_limit > 0 {
        dataset.len().min(cfg.train_limit)
    } else {
        dataset.len()
    };
    train_attractor_from_batches(
        ff_model.hidden_geometry(),
        n,
        cfg.recurrent_epochs,
        cfg,
        |chunk| ff_model.encode_batch(&dataset.batch(chunk)),
    )
}

/// An untrained recurrent model (all weights zero); the counterpart of a
/// zero-epoch feedforward model.
pub fn untrained_recurrent(geometry: LayerGeometry, cfg: &ExperimentConfig) -> Result<RecurrentModel> {
    let mask = ConnectivityMask::full_excluding_self(geometry);
    let traces = PTraces::init(&mask, cfg.alpha, cfg.eps_trace)?;
    let params = traces.compute_params(&mask)?;
    Ok(RecurrentModel::from_parts(
        traces,
        params,
        cfg.timesteps,
        cfg.drive_mode,
        cfg.drive_gain,
        cfg.eps_conv,
    ))
}

/// Top-down reconstruction: the hidden activity is pushed through the
/// transposed feedforward weights (no bias) and normalized per input
/// hypercolumn; pixel intensity reads out as the "on" minicolumn
/// activation.
pub fn reconstruct(
    ff_model: &FeedforwardModel,
    hidden: &ActivityVector,
) -> Result<ActivityVector> {
    let support = ff_model.params().propagate_transposed(hidden)?;
    let support = SupportVector::new(ff_model.input_geometry(), support)?;
    Ok(softmax_per_hypercolumn(&support))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bcpnn::DEFAULT_TRACE_FLOOR;
    use crate::dataio;
    use crate::feedforward::train_feedforward;
    use crate::synth;

    fn toy_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.h_hidden = 3;
        cfg.m_hidden = 4;
        cfg.alpha = 0.05;
        cfg.timesteps = 20;
        cfg
    }

    fn geometry() -> LayerGeometry {
        LayerGeometry::new(3, 4).unwrap()
    }

    fn one_hot(geometry: LayerGeometry, winners: &[usize]) -> ActivityVector {
        let mut v = vec![0.0; geometry.total_units()];
        for (h, &w) in winners.iter().enumerate() {
            v[geometry.unit(h, w)] = 1.0;
        }
        ActivityVector::new(geometry, v).unwrap()
    }

    fn stored(patterns: &[ActivityVector], passes: usize) -> RecurrentModel {
        let g = patterns[0].geometry();
        let cfg = toy_cfg();
        train_attractor_from_batches(g, patterns.len(), passes, &cfg, |chunk| {
            let mut b = ActivityBatch::with_capacity(g, chunk.len());
            for &k in chunk {
                b.push(&patterns[k]);
            }
            Ok(b)
        })
        .unwrap()
    }

    #[test]
    fn untrained_model_settles_to_uniform_in_one_step() {
        let g = geometry();
        let model = untrained_recurrent(g, &toy_cfg()).unwrap();
        assert!(model.params().weights_raw().iter().all(|&w| w == 0.0));
        let traj = model
            .run_attractor(&ActivityVector::uniform(g), None)
            .unwrap();
        assert!(traj.converged);
        assert_eq!(traj.steps_to_convergence, Some(1));
        assert_eq!(traj.final_state(), &ActivityVector::uniform(g));
    }

    #[test]
    fn trained_traces_and_weights_are_symmetric() {
        let g = geometry();
        let patterns = vec![one_hot(g, &[0, 1, 2]), one_hot(g, &[3, 2, 0])];
        let model = stored(&patterns, 100);
        for i in 0..g.total_units() {
            for j in 0..g.total_units() {
                assert_eq!(model.traces().joint_at(i, j), model.traces().joint_at(j, i));
                assert_eq!(model.params().weight(i, j), model.params().weight(j, i));
            }
        }
        // block-hollow: within-hypercolumn weights are exactly zero
        for i in 0..g.total_units() {
            for j in g.hypercolumn_range(g.hypercolumn_of(i)) {
                assert_eq!(model.params().weight(i, j), 0.0);
            }
        }
    }

    #[test]
    fn single_stored_pattern_is_a_fixed_point() {
        let g = geometry();
        let pattern = one_hot(g, &[1, 3, 0]);
        let model = stored(&[pattern.clone()].to_vec(), 500);
        let traj = model.run_attractor(&pattern, None).unwrap();
        assert!(traj.converged);
        assert_eq!(traj.steps_to_convergence, Some(1));
    }

    #[test]
    fn two_orthogonal_patterns_are_distinct_fixed_points() {
        let g = geometry();
        let a = one_hot(g, &[0, 0, 0]);
        let b = one_hot(g, &[2, 2, 2]);
        let model = stored(&[a.clone(), b.clone()], 300);
        for p in [&a, &b] {
            let traj = model.run_attractor(p, None).unwrap();
            assert!(traj.converged);
            assert_eq!(traj.steps_to_convergence, Some(1));
            assert!(traj.final_state().max_abs_diff(p) < 1e-6);
        }
        // the two fixed points stay distinct
        let fa = model.run_attractor(&a, None).unwrap();
        let fb = model.run_attractor(&b, None).unwrap();
        assert!(fa.final_state().max_abs_diff(fb.final_state()) > 0.9);
    }

    #[test]
    fn perturbed_patterns_are_recalled() {
        let g = geometry();
        let a = one_hot(g, &[0, 0, 0]);
        let b = one_hot(g, &[2, 2, 2]);
        let model = stored(&[a.clone(), b.clone()], 300);
        // 20% of each winner's mass spread over the losers
        let spread = 0.2 / (g.minicolumns() as f64 - 1.0);
        for target in [&a, &b] {
            let v: Vec<f64> = target
                .values()
                .iter()
                .map(|&x| if x == 1.0 { 0.8 } else { spread })
                .collect();
            let noisy = ActivityVector::new(g, v).unwrap();
            let traj = model.run_attractor(&noisy, None).unwrap();
            assert!(traj.converged, "did not converge from perturbed state");
            assert!(
                traj.final_state().max_abs_diff(target) < 1e-6,
                "recalled the wrong pattern"
            );
        }
    }

    #[test]
    fn convergence_is_idempotent() {
        let g = geometry();
        let a = one_hot(g, &[1, 2, 3]);
        let model = stored(&[a.clone()], 400);
        let traj = model.run_attractor(&a, None).unwrap();
        assert!(traj.converged);
        let again = model.run_attractor(traj.final_state(), None).unwrap();
        assert!(again.converged);
        assert_eq!(again.steps_to_convergence, Some(1));
    }

    #[test]
    fn trajectory_is_bounded_and_alignment_rises() {
        let g = geometry();
        let a = one_hot(g, &[0, 1, 2]);
        let b = one_hot(g, &[3, 0, 1]);
        let model = stored(&[a.clone(), b], 300);
        // start from a blend biased toward `a`
        let mut v = vec![0.0; g.total_units()];
        for h in 0..g.num_hypercolumns() {
            let r = g.hypercolumn_range(h);
            for x in &mut v[r] {
                *x = 1.0 / g.minicolumns() as f64;
            }
        }
        for (h, &w) in [0usize, 1, 2].iter().enumerate() {
            let r = g.hypercolumn_range(h);
            for (off, x) in v[r].iter_mut().enumerate() {
                *x = if off == w { 0.55 } else { 0.15 };
            }
        }
        let start = ActivityVector::new(g, v).unwrap();
        let traj = model.run_attractor(&start, None).unwrap();
        assert!(traj.states.len() <= model.timesteps() + 1);
        let mut last = f64::NEG_INFINITY;
        for state in &traj.states {
            let align = model.support_alignment(state).unwrap();
            assert!(align >= last - 1e-9, "alignment dropped: {align} < {last}");
            last = align;
        }
    }

    #[test]
    fn persistent_drive_uses_ff_support() {
        let g = geometry();
        let a = one_hot(g, &[0, 0, 0]);
        let b = one_hot(g, &[2, 2, 2]);
        let patterns = vec![a.clone(), b.clone()];
        let cfg = toy_cfg();
        let base = train_attractor_from_batches(g, 2, 300, &cfg, |chunk| {
            let mut batch = ActivityBatch::with_capacity(g, chunk.len());
            for &k in chunk {
                batch.push(&patterns[k]);
            }
            Ok(batch)
        })
        .unwrap();
        let driven = RecurrentModel::from_parts(
            base.traces().clone(),
            base.params().clone(),
            cfg.timesteps,
            DriveMode::PersistentDrive,
            50.0,
            cfg.eps_conv,
        );
        // a strong support for pattern b overrides an initial state at a
        let mut sv = vec![0.0; g.total_units()];
        for h in 0..g.num_hypercolumns() {
            sv[g.unit(h, 2)] = 1.0;
        }
        let support = SupportVector::new(g, sv).unwrap();
        let traj = driven.run_attractor(&a, Some(&support)).unwrap();
        assert!(traj.final_state().max_abs_diff(&b) < 1e-3);
        // clamped-init ignores the support entirely
        let traj = base.run_attractor(&a, Some(&support)).unwrap();
        assert!(traj.final_state().max_abs_diff(&a) < 1e-6);
    }

    #[test]
    fn untrained_ff_model_is_rejected() {
        let data = EncodedDataset::from_images(synth::generate_images(8, 2));
        let mut cfg = ExperimentConfig::default();
        cfg.h_hidden = 4;
        cfg.m_hidden = 4;
        cfg.epochs = 0;
        let ff = train_feedforward(&data, &cfg).unwrap();
        assert!(matches!(
            train_recurrent(&ff, &data, &cfg),
            Err(BcpnnError::Precondition(_))
        ));
    }

    #[test]
    fn reconstruction_uniform_for_zero_weights() {
        let data = EncodedDataset::from_images(synth::generate_images(8, 2));
        let mut cfg = ExperimentConfig::default();
        cfg.h_hidden = 4;
        cfg.m_hidden = 4;
        cfg.epochs = 0;
        let ff = train_feedforward(&data, &cfg).unwrap();
        let hidden = ActivityVector::uniform(ff.hidden_geometry());
        let rec = reconstruct(&ff, &hidden).unwrap();
        for &v in dataio::on_unit_values(&rec).iter() {
            assert_eq!(v, 0.5);
        }
    }

    #[test]
    fn reconstruction_matches_hand_computed_toy_case() {
        use crate::bcpnn::ProjectionParams;
        use crate::feedforward::FeedforwardModel;
        use crate::topology::ConnectivityMask;

        // 1 input hypercolumn (2 units), 1 hidden hypercolumn (2 units)
        let src = LayerGeometry::new(1, 2).unwrap();
        let tgt = LayerGeometry::new(1, 2).unwrap();
        let mask = ConnectivityMask::full(src, tgt);
        let w = vec![0.7, -0.3, 0.2, 0.9]; // rows: source unit, cols: target unit
        let params = ProjectionParams::from_parts(mask.clone(), vec![0.0, 0.0], w).unwrap();
        let traces = PTraces::init(&mask, 0.01, DEFAULT_TRACE_FLOOR).unwrap();
        let ff = FeedforwardModel::from_parts(mask, traces, params, 1, 0);

        let hidden = ActivityVector::new(tgt, vec![0.6, 0.4]).unwrap();
        let rec = reconstruct(&ff, &hidden).unwrap();
        // s_0 = 0.6*0.7 + 0.4*(-0.3) = 0.3; s_1 = 0.6*0.2 + 0.4*0.9 = 0.48
        let e0 = (0.3f64 - 0.48).exp();
        let expect0 = e0 / (e0 + 1.0);
        assert!((rec.values()[0] - expect0).abs() < 1e-12);
        assert!((rec.values()[0] + rec.values()[1] - 1.0).abs() < 1e-12);
    }
}
