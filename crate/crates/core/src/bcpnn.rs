//! The shared Hebbian-Bayesian math: activity propagation, softmax
//! competition within hypercolumns, exponentially smoothed probability
//! traces, and the log-odds bias/weight computation derived from them.
//!
//! These operations are identical for the feedforward and the recurrent
//! projection; the two nets differ only in wiring and training schedule.

use rayon::prelude::*;

use crate::error::{BcpnnError, Result};
use crate::geometry::{ActivityBatch, ActivityVector, LayerGeometry, SupportVector};
use crate::topology::ConnectivityMask;

/// Default floor applied to every trace after each update. Keeps the logs
/// in the bias/weight computation finite; with the default learning rate
/// traces cannot legitimately reach zero from uniform initialization, so
/// the floor only guards numerical edge cases.
pub const DEFAULT_TRACE_FLOOR: f64 = 1e-8;

/// Batch length used by [`PTraces::update_batch`] callers in this crate.
/// Fixed so results never depend on thread count.
pub const TRACE_BATCH: usize = 128;

fn block_offsets(mask: &ConnectivityMask) -> Vec<usize> {
    let m_src = mask.source_geometry().minicolumns();
    let m_tgt = mask.target_geometry().minicolumns();
    let h_tgt = mask.target_geometry().num_hypercolumns();
    let mut offsets = Vec::with_capacity(h_tgt + 1);
    let mut acc = 0usize;
    offsets.push(0);
    for t in 0..h_tgt {
        acc += mask.sources(t).len() * m_src * m_tgt;
        offsets.push(acc);
    }
    offsets
}

/// Splits a flat per-pair array into its per-target-hypercolumn blocks.
fn split_blocks<'a>(values: &'a mut [f64], offsets: &[usize]) -> Vec<&'a mut [f64]> {
    let mut rest = values;
    let mut out = Vec::with_capacity(offsets.len() - 1);
    for t in 0..offsets.len() - 1 {
        let (head, tail) = rest.split_at_mut(offsets[t + 1] - offsets[t]);
        out.push(head);
        rest = tail;
    }
    out
}

/// Exponentially smoothed probability estimates for one projection:
/// unit marginals on both sides plus joint estimates for every connected
/// (source unit, target unit) pair.
///
/// Joint traces are stored per target hypercolumn as row-major
/// `[source slot][target minicolumn]` blocks, where source slots follow the
/// mask's sorted source-hypercolumn order.
#[derive(Debug, Clone, PartialEq)]
pub struct PTraces {
    mask: ConnectivityMask,
    alpha: f64,
    floor: f64,
    p_pre: Vec<f64>,
    p_post: Vec<f64>,
    p_joint: Vec<f64>,
    block_offsets: Vec<usize>,
}

impl PTraces {
    /// Uniform initialization: `p_pre = 1/M_src`, `p_post = 1/M_tgt`, and
    /// the joint traces exactly at the product of the marginals, so the
    /// induced weights start at exactly zero.
    pub fn init(mask: &ConnectivityMask, alpha: f64, floor: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(BcpnnError::InvalidParameter(format!(
                "learning rate must be in (0, 1), got {alpha}"
            )));
        }
        if !(floor > 0.0 && floor < 1e-3) {
            return Err(BcpnnError::InvalidParameter(format!(
                "trace floor must be in (0, 1e-3), got {floor}"
            )));
        }
        let pre = 1.0 / mask.source_geometry().minicolumns() as f64;
        let post = 1.0 / mask.target_geometry().minicolumns() as f64;
        let offsets = block_offsets(mask);
        Ok(Self {
            mask: mask.clone(),
            alpha,
            floor,
            p_pre: vec![pre; mask.source_geometry().total_units()],
            p_post: vec![post; mask.target_geometry().total_units()],
            p_joint: vec![pre * post; *offsets.last().unwrap()],
            block_offsets: offsets,
        })
    }

    pub(crate) fn from_parts(
        mask: ConnectivityMask,
        alpha: f64,
        floor: f64,
        p_pre: Vec<f64>,
        p_post: Vec<f64>,
        p_joint: Vec<f64>,
    ) -> Result<Self> {
        let offsets = block_offsets(&mask);
        if p_pre.len() != mask.source_geometry().total_units()
            || p_post.len() != mask.target_geometry().total_units()
            || p_joint.len() != *offsets.last().unwrap()
        {
            return Err(BcpnnError::DimensionMismatch(
                "trace arrays do not match mask geometry".into(),
            ));
        }
        Ok(Self {
            mask,
            alpha,
            floor,
            p_pre,
            p_post,
            p_joint,
            block_offsets: offsets,
        })
    }

    #[cfg(test)]
    pub(crate) fn set_for_test(&mut self, p_pre: Vec<f64>, p_post: Vec<f64>, p_joint: Vec<f64>) {
        assert_eq!(p_pre.len(), self.p_pre.len());
        assert_eq!(p_post.len(), self.p_post.len());
        assert_eq!(p_joint.len(), self.p_joint.len());
        self.p_pre = p_pre;
        self.p_post = p_post;
        self.p_joint = p_joint;
    }

    #[inline]
    pub fn mask(&self) -> &ConnectivityMask {
        &self.mask
    }

    #[inline]
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    #[inline]
    pub fn floor(&self) -> f64 {
        self.floor
    }

    #[inline]
    pub fn source_geometry(&self) -> LayerGeometry {
        self.mask.source_geometry()
    }

    #[inline]
    pub fn target_geometry(&self) -> LayerGeometry {
        self.mask.target_geometry()
    }

    #[inline]
    pub fn p_pre(&self) -> &[f64] {
        &self.p_pre
    }

    #[inline]
    pub fn p_post(&self) -> &[f64] {
        &self.p_post
    }

    /// Joint-trace block of one target hypercolumn, row-major
    /// `[source slot][target minicolumn]`.
    #[inline]
    pub fn joint_block(&self, target_hypercolumn: usize) -> &[f64] {
        &self.p_joint
            [self.block_offsets[target_hypercolumn]..self.block_offsets[target_hypercolumn + 1]]
    }

    pub(crate) fn joint_raw(&self) -> &[f64] {
        &self.p_joint
    }

    /// Joint trace of a connected unit pair, `None` when the pair is not
    /// covered by the mask.
    pub fn joint_at(&self, source_unit: usize, target_unit: usize) -> Option<f64> {
        let src_geom = self.source_geometry();
        let tgt_geom = self.target_geometry();
        let t = tgt_geom.hypercolumn_of(target_unit);
        let slot = self
            .mask
            .sources(t)
            .binary_search(&(src_geom.hypercolumn_of(source_unit) as u32))
            .ok()?;
        let row = slot * src_geom.minicolumns() + src_geom.minicolumn_of(source_unit);
        Some(self.joint_block(t)[row * tgt_geom.minicolumns() + tgt_geom.minicolumn_of(target_unit)])
    }

    /// Re-seeds the joint traces so target minicolumn `j` (of every target
    /// hypercolumn) prefers the source pattern `templates[j]`:
    /// `p_ij = (1-beta)/(M_s*M_t) + beta * template_j[i]/M_t`, with `p_pre`
    /// set to the matching mixture marginal and `p_post` left uniform. The
    /// result is a consistent joint distribution whose induced weights are
    /// log-ratio templates of the seed patterns.
    pub(crate) fn seed_templates(&mut self, templates: &ActivityBatch, beta: f64) {
        let m_src = self.source_geometry().minicolumns();
        let m_tgt = self.target_geometry().minicolumns();
        debug_assert_eq!(templates.len(), m_tgt);
        debug_assert_eq!(templates.geometry(), self.source_geometry());
        let floor = self.floor;

        let uniform_pre = 1.0 / m_src as f64;
        for (i, p) in self.p_pre.iter_mut().enumerate() {
            let mean: f64 = (0..m_tgt).map(|j| templates.row(j)[i]).sum::<f64>() / m_tgt as f64;
            *p = ((1.0 - beta) * uniform_pre + beta * mean).max(floor);
        }

        let uniform_joint = uniform_pre / m_tgt as f64;
        let mask = &self.mask;
        let offsets = &self.block_offsets;
        split_blocks(&mut self.p_joint, offsets)
            .into_par_iter()
            .enumerate()
            .for_each(|(t, block)| {
                for (slot, &sh) in mask.sources(t).iter().enumerate() {
                    for i in 0..m_src {
                        let unit = sh as usize * m_src + i;
                        let row = &mut block[(slot * m_src + i) * m_tgt..][..m_tgt];
                        for (j, p) in row.iter_mut().enumerate() {
                            let template = templates.row(j)[unit] / m_tgt as f64;
                            *p = ((1.0 - beta) * uniform_joint + beta * template).max(floor);
                        }
                    }
                }
            });
    }

    /// One step of the exponential update with rate `alpha`, flooring every
    /// trace afterwards.
    pub fn update(&mut self, source: &ActivityVector, target: &ActivityVector) -> Result<()> {
        self.check_geometries(source.geometry(), target.geometry())?;
        let alpha = self.alpha;
        let one_minus = 1.0 - alpha;
        let floor = self.floor;

        for (p, &pi) in self.p_pre.iter_mut().zip(source.values()) {
            *p = (one_minus * *p + alpha * pi).max(floor);
        }
        for (p, &pi) in self.p_post.iter_mut().zip(target.values()) {
            *p = (one_minus * *p + alpha * pi).max(floor);
        }

        let m_src = self.source_geometry().minicolumns();
        let m_tgt = self.target_geometry().minicolumns();
        let src = source.values();
        let tgt = target.values();
        let mask = &self.mask;
        let offsets = &self.block_offsets;
        split_blocks(&mut self.p_joint, offsets)
            .into_par_iter()
            .enumerate()
            .for_each(|(t, block)| {
                let tgt_hc = &tgt[t * m_tgt..(t + 1) * m_tgt];
                for (slot, &sh) in mask.sources(t).iter().enumerate() {
                    let src_hc = &src[sh as usize * m_src..(sh as usize + 1) * m_src];
                    for (i, &pi) in src_hc.iter().enumerate() {
                        let row = &mut block[(slot * m_src + i) * m_tgt..][..m_tgt];
                        for (p, &pj) in row.iter_mut().zip(tgt_hc) {
                            *p = (one_minus * *p + alpha * (pi * pj)).max(floor);
                        }
                    }
                }
            });
        Ok(())
    }

    /// Applies a whole batch of updates at once: per-batch decay plus a
    /// weighted accumulation of the per-sample co-activations, in fixed
    /// sample order. Equivalent to calling [`PTraces::update`] per sample up
    /// to rounding, except the floor is applied once at batch end.
    pub fn update_batch(&mut self, sources: &ActivityBatch, targets: &ActivityBatch) -> Result<()> {
        self.check_geometries(sources.geometry(), targets.geometry())?;
        if sources.len() != targets.len() {
            return Err(BcpnnError::DimensionMismatch(format!(
                "source batch has {} samples, target batch {}",
                sources.len(),
                targets.len()
            )));
        }
        let b = sources.len();
        if b == 0 {
            return Ok(());
        }
        let alpha = self.alpha;
        let one_minus = 1.0 - alpha;
        let decay = one_minus.powi(b as i32);
        let floor = self.floor;
        // coef[k] = alpha * (1 - alpha)^(b-1-k)
        let mut coef = vec![0.0; b];
        let mut acc = alpha;
        for k in (0..b).rev() {
            coef[k] = acc;
            acc *= one_minus;
        }

        marginal_batch(&mut self.p_pre, sources, &coef, decay, floor);
        marginal_batch(&mut self.p_post, targets, &coef, decay, floor);

        let m_src = self.source_geometry().minicolumns();
        let m_tgt = self.target_geometry().minicolumns();
        // unit-major copies so the per-pair loop streams contiguous slices
        let src_t = transpose_batch(sources);
        let tgt_t = transpose_batch(targets);
        let mask = &self.mask;
        let offsets = &self.block_offsets;
        split_blocks(&mut self.p_joint, offsets)
            .into_par_iter()
            .enumerate()
            .for_each(|(t, block)| {
                for (slot, &sh) in mask.sources(t).iter().enumerate() {
                    for i in 0..m_src {
                        let unit = sh as usize * m_src + i;
                        let src_col = &src_t[unit * b..(unit + 1) * b];
                        let row = &mut block[(slot * m_src + i) * m_tgt..][..m_tgt];
                        for (j, p) in row.iter_mut().enumerate() {
                            let tgt_col = &tgt_t[(t * m_tgt + j) * b..(t * m_tgt + j + 1) * b];
                            let mut sum = 0.0;
                            // (pi_i * pi_j) * coef keeps the accumulation
                            // bit-symmetric under source/target exchange,
                            // which the recurrent projection relies on.
                            for ((&s, &g), &c) in src_col.iter().zip(tgt_col).zip(&coef) {
                                sum += (s * g) * c;
                            }
                            *p = (decay * *p + sum).max(floor);
                        }
                    }
                }
            });
        Ok(())
    }

    /// Bias and weights from the current traces, restricted to `mask`
    /// (which must be covered by the traces' own mask).
    pub fn compute_params(&self, mask: &ConnectivityMask) -> Result<ProjectionParams> {
        if !mask.is_subset_of(&self.mask) {
            return Err(BcpnnError::DimensionMismatch(
                "params mask is not covered by the trace mask".into(),
            ));
        }
        let floor = self.floor;
        let below = |v: &f64| *v < floor;
        if self.p_pre.iter().any(below)
            || self.p_post.iter().any(below)
            || self.p_joint.iter().any(below)
        {
            return Err(BcpnnError::Invariant(
                "trace below floor in compute_params".into(),
            ));
        }

        let bias: Vec<f64> = self.p_post.iter().map(|p| p.ln()).collect();

        let m_src = self.source_geometry().minicolumns();
        let m_tgt = self.target_geometry().minicolumns();
        let out_offsets = block_offsets(mask);
        let mut weights = vec![0.0; *out_offsets.last().unwrap()];
        split_blocks(&mut weights, &out_offsets)
            .into_par_iter()
            .enumerate()
            .for_each(|(t, out_block)| {
                let own_block = self.joint_block(t);
                let own_sources = self.mask.sources(t);
                let p_post_hc = &self.p_post[t * m_tgt..(t + 1) * m_tgt];
                for (out_slot, &sh) in mask.sources(t).iter().enumerate() {
                    let own_slot = own_sources.binary_search(&sh).unwrap();
                    for i in 0..m_src {
                        let p_i = self.p_pre[sh as usize * m_src + i];
                        let src_row = &own_block[(own_slot * m_src + i) * m_tgt..][..m_tgt];
                        let dst_row = &mut out_block[(out_slot * m_src + i) * m_tgt..][..m_tgt];
                        for j in 0..m_tgt {
                            dst_row[j] = (src_row[j] / (p_i * p_post_hc[j])).ln();
                        }
                    }
                }
            });

        Ok(ProjectionParams {
            mask: mask.clone(),
            bias,
            weights,
            block_offsets: out_offsets,
        })
    }

    /// Copy of these traces covering only the pairs in `mask`.
    pub fn restrict(&self, mask: &ConnectivityMask) -> Result<PTraces> {
        if !mask.is_subset_of(&self.mask) {
            return Err(BcpnnError::DimensionMismatch(
                "restriction mask is not covered by the trace mask".into(),
            ));
        }
        let m_src = self.source_geometry().minicolumns();
        let m_tgt = self.target_geometry().minicolumns();
        let offsets = block_offsets(mask);
        let mut joint = Vec::with_capacity(*offsets.last().unwrap());
        for t in 0..mask.target_geometry().num_hypercolumns() {
            let own_block = self.joint_block(t);
            let own_sources = self.mask.sources(t);
            for &sh in mask.sources(t) {
                let own_slot = own_sources.binary_search(&sh).unwrap();
                let start = own_slot * m_src * m_tgt;
                joint.extend_from_slice(&own_block[start..start + m_src * m_tgt]);
            }
        }
        Ok(PTraces {
            mask: mask.clone(),
            alpha: self.alpha,
            floor: self.floor,
            p_pre: self.p_pre.clone(),
            p_post: self.p_post.clone(),
            p_joint: joint,
            block_offsets: offsets,
        })
    }

    fn check_geometries(&self, source: LayerGeometry, target: LayerGeometry) -> Result<()> {
        if source != self.source_geometry() {
            return Err(BcpnnError::DimensionMismatch(
                "source activity does not match trace source geometry".into(),
            ));
        }
        if target != self.target_geometry() {
            return Err(BcpnnError::DimensionMismatch(
                "target activity does not match trace target geometry".into(),
            ));
        }
        Ok(())
    }
}

/// Unit-major copy of a batch: element `(unit, k)` at `unit * n + k`.
fn transpose_batch(batch: &ActivityBatch) -> Vec<f64> {
    let units = batch.geometry().total_units();
    let n = batch.len();
    let mut out = vec![0.0; units * n];
    for k in 0..n {
        for (u, &v) in batch.row(k).iter().enumerate() {
            out[u * n + k] = v;
        }
    }
    out
}

fn marginal_batch(p: &mut [f64], batch: &ActivityBatch, coef: &[f64], decay: f64, floor: f64) {
    let mut acc = vec![0.0; p.len()];
    for (k, &c) in coef.iter().enumerate() {
        for (a, &v) in acc.iter_mut().zip(batch.row(k)) {
            *a += c * v;
        }
    }
    for (pv, a) in p.iter_mut().zip(acc) {
        *pv = (decay * *pv + a).max(floor);
    }
}

/// Bias vector and masked weight matrix of one projection, derived from
/// traces. Weight storage mirrors the joint-trace block layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionParams {
    mask: ConnectivityMask,
    bias: Vec<f64>,
    weights: Vec<f64>,
    block_offsets: Vec<usize>,
}

impl ProjectionParams {
    pub(crate) fn from_parts(
        mask: ConnectivityMask,
        bias: Vec<f64>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let offsets = block_offsets(&mask);
        if bias.len() != mask.target_geometry().total_units()
            || weights.len() != *offsets.last().unwrap()
        {
            return Err(BcpnnError::DimensionMismatch(
                "param arrays do not match mask geometry".into(),
            ));
        }
        Ok(Self {
            mask,
            bias,
            weights,
            block_offsets: offsets,
        })
    }

    #[inline]
    pub fn mask(&self) -> &ConnectivityMask {
        &self.mask
    }

    #[inline]
    pub fn source_geometry(&self) -> LayerGeometry {
        self.mask.source_geometry()
    }

    #[inline]
    pub fn target_geometry(&self) -> LayerGeometry {
        self.mask.target_geometry()
    }

    #[inline]
    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub(crate) fn weights_raw(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    /// Weight block of one target hypercolumn, row-major
    /// `[source slot][target minicolumn]`.
    #[inline]
    pub fn weight_block(&self, target_hypercolumn: usize) -> &[f64] {
        &self.weights
            [self.block_offsets[target_hypercolumn]..self.block_offsets[target_hypercolumn + 1]]
    }

    /// Weight between two units; unconnected pairs weigh zero.
    pub fn weight(&self, source_unit: usize, target_unit: usize) -> f64 {
        let src_geom = self.source_geometry();
        let tgt_geom = self.target_geometry();
        let t = tgt_geom.hypercolumn_of(target_unit);
        match self
            .mask
            .sources(t)
            .binary_search(&(src_geom.hypercolumn_of(source_unit) as u32))
        {
            Ok(slot) => {
                let row = slot * src_geom.minicolumns() + src_geom.minicolumn_of(source_unit);
                self.weight_block(t)[row * tgt_geom.minicolumns() + tgt_geom.minicolumn_of(target_unit)]
            }
            Err(_) => 0.0,
        }
    }

    /// Total input per target unit: `s_j = b_j + sum_i pi_i w_ij` over the
    /// connected pairs; absent connections contribute zero.
    pub fn propagate(&self, source: &ActivityVector) -> Result<SupportVector> {
        if source.geometry() != self.source_geometry() {
            return Err(BcpnnError::DimensionMismatch(
                "source activity does not match projection source geometry".into(),
            ));
        }
        let tgt_geom = self.target_geometry();
        let mut out = vec![0.0; tgt_geom.total_units()];
        let m_tgt = tgt_geom.minicolumns();
        let src = source.values();
        out.par_chunks_mut(m_tgt).enumerate().for_each(|(t, s)| {
            self.propagate_block(t, src, s);
        });
        Ok(SupportVector::from_raw(tgt_geom, out))
    }

    /// Support of one target hypercolumn written into `out` (length `M_tgt`).
    pub(crate) fn propagate_block(&self, target_hypercolumn: usize, source: &[f64], out: &mut [f64]) {
        let m_src = self.source_geometry().minicolumns();
        let m_tgt = self.target_geometry().minicolumns();
        let t = target_hypercolumn;
        out.copy_from_slice(&self.bias[t * m_tgt..(t + 1) * m_tgt]);
        let block = self.weight_block(t);
        for (slot, &sh) in self.mask.sources(t).iter().enumerate() {
            let src_hc = &source[sh as usize * m_src..(sh as usize + 1) * m_src];
            for (i, &pi) in src_hc.iter().enumerate() {
                if pi == 0.0 {
                    continue;
                }
                let row = &block[(slot * m_src + i) * m_tgt..][..m_tgt];
                for (s, &w) in out.iter_mut().zip(row) {
                    *s += pi * w;
                }
            }
        }
    }

    /// Transposed pass used for top-down reconstruction: per source unit,
    /// `s_i = sum_j pi_j w_ij` over the connected pairs, without bias.
    pub fn propagate_transposed(&self, target: &ActivityVector) -> Result<Vec<f64>> {
        if target.geometry() != self.target_geometry() {
            return Err(BcpnnError::DimensionMismatch(
                "target activity does not match projection target geometry".into(),
            ));
        }
        let m_src = self.source_geometry().minicolumns();
        let m_tgt = self.target_geometry().minicolumns();
        let mut out = vec![0.0; self.source_geometry().total_units()];
        let tgt = target.values();
        for t in 0..self.target_geometry().num_hypercolumns() {
            let block = self.weight_block(t);
            let tgt_hc = &tgt[t * m_tgt..(t + 1) * m_tgt];
            for (slot, &sh) in self.mask.sources(t).iter().enumerate() {
                let out_hc = &mut out[sh as usize * m_src..(sh as usize + 1) * m_src];
                for (i, o) in out_hc.iter_mut().enumerate() {
                    let row = &block[(slot * m_src + i) * m_tgt..][..m_tgt];
                    let mut acc = 0.0;
                    for (&pj, &w) in tgt_hc.iter().zip(row) {
                        acc += pj * w;
                    }
                    *o += acc;
                }
            }
        }
        Ok(out)
    }
}

/// Standalone form of the propagation rule with an explicit target-geometry
/// check.
pub fn propagate(
    source: &ActivityVector,
    params: &ProjectionParams,
    target_geometry: LayerGeometry,
) -> Result<SupportVector> {
    if params.target_geometry() != target_geometry {
        return Err(BcpnnError::DimensionMismatch(
            "projection target geometry does not match requested geometry".into(),
        ));
    }
    params.propagate(source)
}

/// Soft winner-takes-all within each hypercolumn:
/// `pi_j = exp(s_j - max_k s_k) / sum_k exp(s_k - max_k s_k)`.
/// The max shift is mathematically neutral and prevents overflow.
pub fn softmax_per_hypercolumn(support: &SupportVector) -> ActivityVector {
    let geometry = support.geometry();
    let mut values = support.values().to_vec();
    let m = geometry.minicolumns();
    for hc in values.chunks_mut(m) {
        let max = hc.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut denom = 0.0;
        for v in hc.iter_mut() {
            *v = (*v - max).exp();
            denom += *v;
        }
        for v in hc.iter_mut() {
            *v /= denom;
        }
    }
    ActivityVector::from_normalized(geometry, values)
}

/// Softmax over a raw slice holding one layer's supports; used by hot loops
/// that avoid intermediate allocations.
pub(crate) fn softmax_in_place(values: &mut [f64], minicolumns: usize) {
    for hc in values.chunks_mut(minicolumns) {
        let max = hc.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut denom = 0.0;
        for v in hc.iter_mut() {
            *v = (*v - max).exp();
            denom += *v;
        }
        for v in hc.iter_mut() {
            *v /= denom;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ACTIVITY_SUM_TOL;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn geom(h: usize, m: usize) -> LayerGeometry {
        LayerGeometry::new(h, m).unwrap()
    }

    fn random_activity(geometry: LayerGeometry, rng: &mut ChaCha8Rng) -> ActivityVector {
        let mut values = vec![0.0; geometry.total_units()];
        for h in 0..geometry.num_hypercolumns() {
            let r = geometry.hypercolumn_range(h);
            let mut sum = 0.0;
            for v in &mut values[r.clone()] {
                *v = rng.random_range(0.01..1.0);
                sum += *v;
            }
            for v in &mut values[r] {
                *v /= sum;
            }
        }
        ActivityVector::new(geometry, values).unwrap()
    }

    #[test]
    fn propagate_zero_weights_returns_bias() {
        let src = geom(2, 2);
        let tgt = geom(2, 3);
        let mask = ConnectivityMask::full(src, tgt);
        let traces = PTraces::init(&mask, 0.01, DEFAULT_TRACE_FLOOR).unwrap();
        let params = traces.compute_params(&mask).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let act = random_activity(src, &mut rng);
        let s = params.propagate(&act).unwrap();
        for (sv, bv) in s.values().iter().zip(params.bias()) {
            assert_eq!(sv, bv);
        }
    }

    #[test]
    fn propagate_one_hot_selects_weight_row() {
        let src = geom(1, 2);
        let tgt = geom(1, 2);
        let mask = ConnectivityMask::full(src, tgt);
        // w = [[2, -1], [0, 0]], b = (0, 0)
        let params =
            ProjectionParams::from_parts(mask, vec![0.0, 0.0], vec![2.0, -1.0, 0.0, 0.0]).unwrap();
        let act = ActivityVector::new(src, vec![1.0, 0.0]).unwrap();
        let s = params.propagate(&act).unwrap();
        assert_eq!(s.values(), &[2.0, -1.0]);
    }

    #[test]
    fn propagate_matches_dense_triple_loop_oracle() {
        let src = geom(3, 2);
        let tgt = geom(3, 4);
        let mask = ConnectivityMask::random(src, tgt, 0.67, 11).unwrap();
        let mut traces = PTraces::init(&mask, 0.05, DEFAULT_TRACE_FLOOR).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..30 {
            let a = random_activity(src, &mut rng);
            let b = random_activity(tgt, &mut rng);
            traces.update(&a, &b).unwrap();
        }
        let params = traces.compute_params(&mask).unwrap();
        let act = random_activity(src, &mut rng);

        // independent straightforward triple loop over the dense matrix
        let mut expected = params.bias().to_vec();
        for j in 0..tgt.total_units() {
            for i in 0..src.total_units() {
                expected[j] += act.values()[i] * params.weight(i, j);
            }
        }
        let s = params.propagate(&act).unwrap();
        for (a, e) in s.values().iter().zip(&expected) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_uniform_for_constant_support() {
        let g = geom(1, 5);
        let s = SupportVector::new(g, vec![3.7; 5]).unwrap();
        let a = softmax_per_hypercolumn(&s);
        for &v in a.values() {
            assert_eq!(v, 0.2);
        }
    }

    #[test]
    fn softmax_analytic_two_unit_case() {
        let g = geom(1, 2);
        let s = SupportVector::new(g, vec![0.0, 3f64.ln()]).unwrap();
        let a = softmax_per_hypercolumn(&s);
        assert!((a.values()[0] - 0.25).abs() < 1e-12);
        assert!((a.values()[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_shift_invariance() {
        let g = geom(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base: Vec<f64> = (0..6).map(|_| rng.random_range(-4.0..4.0)).collect();
        let mut shifted = base.clone();
        for v in &mut shifted[0..3] {
            *v += 123.456;
        }
        for v in &mut shifted[3..6] {
            *v -= 77.0;
        }
        let a = softmax_per_hypercolumn(&SupportVector::new(g, base).unwrap());
        let b = softmax_per_hypercolumn(&SupportVector::new(g, shifted).unwrap());
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn softmax_survives_extreme_supports() {
        let g = geom(1, 3);
        let s = SupportVector::new(g, vec![1e4, -1e4, 0.0]).unwrap();
        let a = softmax_per_hypercolumn(&s);
        let sum: f64 = a.values().iter().sum();
        assert!((sum - 1.0).abs() < ACTIVITY_SUM_TOL);
        assert!(a.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn init_gives_uniform_traces_and_zero_weights() {
        let src = geom(1, 2);
        let tgt = geom(1, 100);
        let mask = ConnectivityMask::full(src, tgt);
        let traces = PTraces::init(&mask, 0.0001, DEFAULT_TRACE_FLOOR).unwrap();
        assert!(traces.p_pre().iter().all(|&p| p == 0.5));
        assert!(traces.p_post().iter().all(|&p| p == 0.01));
        assert!(traces.joint_block(0).iter().all(|&p| p == 0.5 * 0.01));
        let params = traces.compute_params(&mask).unwrap();
        assert!(params.weights_raw().iter().all(|&w| w == 0.0));
        assert!(params.bias().iter().all(|&b| b == 0.01f64.ln()));
    }

    #[test]
    fn init_per_hypercolumn_sums_are_one() {
        let src = geom(3, 7);
        let tgt = geom(2, 4);
        let mask = ConnectivityMask::full(src, tgt);
        let traces = PTraces::init(&mask, 0.1, DEFAULT_TRACE_FLOOR).unwrap();
        for h in 0..3 {
            let s: f64 = traces.p_pre()[src.hypercolumn_range(h)].iter().sum();
            assert!((s - 1.0).abs() < ACTIVITY_SUM_TOL);
        }
        for h in 0..2 {
            let s: f64 = traces.p_post()[tgt.hypercolumn_range(h)].iter().sum();
            assert!((s - 1.0).abs() < ACTIVITY_SUM_TOL);
        }
    }

    #[test]
    fn init_with_empty_mask_is_fine() {
        let src = geom(3, 2);
        let tgt = geom(2, 2);
        let mask =
            ConnectivityMask::from_parts(src, tgt, vec![vec![], vec![]]).unwrap();
        let traces = PTraces::init(&mask, 0.1, DEFAULT_TRACE_FLOOR).unwrap();
        assert!(traces.joint_raw().is_empty());
        assert!(traces.compute_params(&mask).is_ok());
    }

    #[test]
    fn init_rejects_bad_alpha() {
        let mask = ConnectivityMask::full(geom(1, 2), geom(1, 2));
        assert!(PTraces::init(&mask, 0.0, DEFAULT_TRACE_FLOOR).is_err());
        assert!(PTraces::init(&mask, 1.0, DEFAULT_TRACE_FLOOR).is_err());
        assert!(PTraces::init(&mask, -0.5, DEFAULT_TRACE_FLOOR).is_err());
    }

    #[test]
    fn update_moves_trace_by_alpha() {
        // p = 0.5, pi = 1, alpha = 0.0001 -> 0.50005
        let g = geom(1, 2);
        let mask = ConnectivityMask::full(g, g);
        let mut traces = PTraces::init(&mask, 0.0001, DEFAULT_TRACE_FLOOR).unwrap();
        let act = ActivityVector::new(g, vec![1.0, 0.0]).unwrap();
        traces.update(&act, &act).unwrap();
        assert!((traces.p_pre()[0] - 0.50005).abs() < 1e-12);
    }

    #[test]
    fn zero_activity_pair_decays_exactly() {
        let g = geom(1, 2);
        let mask = ConnectivityMask::full(g, g);
        let alpha = 0.125;
        let mut traces = PTraces::init(&mask, alpha, DEFAULT_TRACE_FLOOR).unwrap();
        let before = traces.joint_at(1, 1).unwrap();
        // unit 1 is silent on both sides
        let act = ActivityVector::new(g, vec![1.0, 0.0]).unwrap();
        traces.update(&act, &act).unwrap();
        let after = traces.joint_at(1, 1).unwrap();
        assert_eq!(after, (1.0 - alpha) * before + alpha * 0.0);
    }

    #[test]
    fn repeated_updates_match_closed_form() {
        let src = geom(1, 2);
        let tgt = geom(1, 3);
        let mask = ConnectivityMask::full(src, tgt);
        let alpha = 0.01;
        let mut traces = PTraces::init(&mask, alpha, DEFAULT_TRACE_FLOOR).unwrap();
        let a = ActivityVector::new(src, vec![0.3, 0.7]).unwrap();
        let b = ActivityVector::new(tgt, vec![0.2, 0.5, 0.3]).unwrap();
        let n = 1000;
        for _ in 0..n {
            traces.update(&a, &b).unwrap();
        }
        let fade = (1.0 - alpha).powi(n);
        // closed form p0*(1-a)^n + pi*(1-(1-a)^n)
        let expect_pre = 0.5 * fade + 0.3 * (1.0 - fade);
        assert!((traces.p_pre()[0] - expect_pre).abs() < 1e-12);
        let expect_joint = (0.5 / 3.0) * fade + 0.3 * 0.5 * (1.0 - fade);
        assert!((traces.joint_at(0, 1).unwrap() - expect_joint).abs() < 1e-12);
    }

    #[test]
    fn batch_update_tracks_sequential_updates() {
        let src = geom(2, 2);
        let tgt = geom(2, 3);
        let mask = ConnectivityMask::random(src, tgt, 0.5, 4).unwrap();
        let mut seq = PTraces::init(&mask, 0.05, DEFAULT_TRACE_FLOOR).unwrap();
        let mut bat = seq.clone();

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut sb = ActivityBatch::with_capacity(src, 17);
        let mut tb = ActivityBatch::with_capacity(tgt, 17);
        for _ in 0..17 {
            let a = random_activity(src, &mut rng);
            let b = random_activity(tgt, &mut rng);
            seq.update(&a, &b).unwrap();
            sb.push(&a);
            tb.push(&b);
        }
        bat.update_batch(&sb, &tb).unwrap();
        for (a, b) in seq.joint_raw().iter().zip(bat.joint_raw()) {
            assert!((a - b).abs() < 1e-13);
        }
        for (a, b) in seq.p_pre().iter().zip(bat.p_pre()) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn trace_conservation_over_many_updates() {
        let src = geom(2, 3);
        let tgt = geom(2, 4);
        let mask = ConnectivityMask::full(src, tgt);
        let mut traces = PTraces::init(&mask, 0.02, DEFAULT_TRACE_FLOOR).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..500 {
            let a = random_activity(src, &mut rng);
            let b = random_activity(tgt, &mut rng);
            traces.update(&a, &b).unwrap();
        }
        for h in 0..2 {
            let s: f64 = traces.p_pre()[src.hypercolumn_range(h)].iter().sum();
            assert!((s - 1.0).abs() < ACTIVITY_SUM_TOL);
            let s: f64 = traces.p_post()[tgt.hypercolumn_range(h)].iter().sum();
            assert!((s - 1.0).abs() < ACTIVITY_SUM_TOL);
        }
        // joint bounded by min of the marginals
        for i in 0..src.total_units() {
            for j in 0..tgt.total_units() {
                let p = traces.joint_at(i, j).unwrap();
                assert!(p <= traces.p_pre()[i].min(traces.p_post()[j]) + 1e-9);
                assert!(p >= traces.floor() && p <= 1.0);
            }
        }
    }

    #[test]
    fn independent_traces_give_zero_weights() {
        let mask = ConnectivityMask::full(geom(2, 2), geom(1, 4));
        let traces = PTraces::init(&mask, 0.1, DEFAULT_TRACE_FLOOR).unwrap();
        let params = traces.compute_params(&mask).unwrap();
        assert!(params.weights_raw().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn compute_params_analytic_value() {
        // p_pre = 0.5, p_post = 0.01, p_joint = 0.02 -> w = ln 4
        let mask = ConnectivityMask::full(geom(1, 2), geom(1, 2));
        let mut traces = PTraces::init(&mask, 0.1, DEFAULT_TRACE_FLOOR).unwrap();
        traces.set_for_test(
            vec![0.5, 0.5],
            vec![0.01, 0.99],
            vec![0.02, 0.48, 0.005, 0.495],
        );
        let params = traces.compute_params(&mask).unwrap();
        assert!((params.weight(0, 0) - 4.0f64.ln()).abs() < 1e-12);
        assert!((params.weight(0, 0) - 1.386294).abs() < 1e-6);
        assert_eq!(params.bias()[0], 0.01f64.ln());
    }

    #[test]
    fn compute_params_flags_trace_below_floor() {
        let mask = ConnectivityMask::full(geom(1, 2), geom(1, 2));
        let mut traces = PTraces::init(&mask, 0.1, DEFAULT_TRACE_FLOOR).unwrap();
        traces.set_for_test(
            vec![0.5, 0.5],
            vec![0.5, 0.5],
            vec![1e-12, 0.5, 0.5, 0.25],
        );
        assert!(matches!(
            traces.compute_params(&mask),
            Err(BcpnnError::Invariant(_))
        ));
    }

    #[test]
    fn recurrent_training_keeps_weights_symmetric() {
        let g = geom(3, 4);
        let mask = ConnectivityMask::full_excluding_self(g);
        let mut traces = PTraces::init(&mask, 0.05, DEFAULT_TRACE_FLOOR).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut batch = ActivityBatch::with_capacity(g, 10);
        for _ in 0..10 {
            batch.push(&random_activity(g, &mut rng));
        }
        traces.update_batch(&batch, &batch).unwrap();
        let params = traces.compute_params(&mask).unwrap();
        for i in 0..g.total_units() {
            for j in 0..g.total_units() {
                let pij = traces.joint_at(i, j);
                let pji = traces.joint_at(j, i);
                assert_eq!(pij, pji, "joint trace asymmetry at ({i},{j})");
                assert_eq!(params.weight(i, j), params.weight(j, i));
            }
            // within-hypercolumn pairs are structurally absent
            for j in g.hypercolumn_range(g.hypercolumn_of(i)) {
                assert_eq!(params.weight(i, j), 0.0);
                assert!(traces.joint_at(i, j).is_none());
            }
        }
    }

    #[test]
    fn zero_knowledge_start_is_uniform() {
        let src = geom(4, 2);
        let tgt = geom(3, 5);
        let mask = ConnectivityMask::random(src, tgt, 0.5, 2).unwrap();
        let traces = PTraces::init(&mask, 0.0001, DEFAULT_TRACE_FLOOR).unwrap();
        let params = traces.compute_params(&mask).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..5 {
            let act = random_activity(src, &mut rng);
            let out = softmax_per_hypercolumn(&params.propagate(&act).unwrap());
            assert_eq!(out, ActivityVector::uniform(tgt));
        }
    }

    #[test]
    fn transposed_propagation_matches_hand_computation() {
        let src = geom(1, 2);
        let tgt = geom(1, 2);
        let mask = ConnectivityMask::full(src, tgt);
        let params =
            ProjectionParams::from_parts(mask, vec![0.5, -0.5], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let hidden = ActivityVector::new(tgt, vec![0.25, 0.75]).unwrap();
        let s = params.propagate_transposed(&hidden).unwrap();
        // s_i = sum_j pi_j w_ij, no bias
        assert!((s[0] - (0.25 * 1.0 + 0.75 * 2.0)).abs() < 1e-15);
        assert!((s[1] - (0.25 * 3.0 + 0.75 * 4.0)).abs() < 1e-15);
    }

    #[test]
    fn restrict_keeps_masked_blocks() {
        let src = geom(4, 2);
        let tgt = geom(2, 3);
        let full = ConnectivityMask::full(src, tgt);
        let sparse =
            ConnectivityMask::from_parts(src, tgt, vec![vec![1, 3], vec![0, 2]]).unwrap();
        let mut traces = PTraces::init(&full, 0.1, DEFAULT_TRACE_FLOOR).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let a = random_activity(src, &mut rng);
            let b = random_activity(tgt, &mut rng);
            traces.update(&a, &b).unwrap();
        }
        let restricted = traces.restrict(&sparse).unwrap();
        for i in 0..src.total_units() {
            for j in 0..tgt.total_units() {
                let want = if sparse.contains(src.hypercolumn_of(i), tgt.hypercolumn_of(j)) {
                    traces.joint_at(i, j)
                } else {
                    None
                };
                assert_eq!(restricted.joint_at(i, j), want);
            }
        }
        // params over the sparse mask agree whether computed from the full
        // or the restricted traces
        let a = traces.compute_params(&sparse).unwrap();
        let b = restricted.compute_params(&sparse).unwrap();
        assert_eq!(a.weights_raw(), b.weights_raw());
        assert_eq!(a.bias(), b.bias());
    }
}
