//! Sparse hypercolumn-to-hypercolumn connectivity and the structural
//! plasticity (rewiring) mechanism that selects which source hypercolumns
//! feed each target hypercolumn.
//!
//! Connections are granular at the hypercolumn level: when a source
//! hypercolumn is selected for a target hypercolumn, every minicolumn pair
//! between the two is connected.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bcpnn::PTraces;
use crate::error::{BcpnnError, Result};
use crate::geometry::LayerGeometry;

/// Which source hypercolumns feed each target hypercolumn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectivityMask {
    source_geometry: LayerGeometry,
    target_geometry: LayerGeometry,
    /// Per target hypercolumn: sorted, distinct source hypercolumn ids.
    sources: Vec<Vec<u32>>,
}

impl ConnectivityMask {
    pub fn from_parts(
        source_geometry: LayerGeometry,
        target_geometry: LayerGeometry,
        sources: Vec<Vec<u32>>,
    ) -> Result<Self> {
        if sources.len() != target_geometry.num_hypercolumns() {
            return Err(BcpnnError::DimensionMismatch(format!(
                "mask has {} target entries, geometry has {} hypercolumns",
                sources.len(),
                target_geometry.num_hypercolumns()
            )));
        }
        let h_src = source_geometry.num_hypercolumns() as u32;
        for (t, list) in sources.iter().enumerate() {
            for pair in list.windows(2) {
                if pair[0] >= pair[1] {
                    return Err(BcpnnError::InvalidParameter(format!(
                        "mask sources for target hypercolumn {t} not sorted/unique"
                    )));
                }
            }
            if list.iter().any(|&s| s >= h_src) {
                return Err(BcpnnError::InvalidParameter(format!(
                    "mask sources for target hypercolumn {t} out of range"
                )));
            }
        }
        Ok(Self {
            source_geometry,
            target_geometry,
            sources,
        })
    }

    /// Each target hypercolumn samples `ceil(p_conn * H_source)` distinct
    /// source hypercolumns, uniformly without replacement. Deterministic for
    /// a fixed seed.
    pub fn random(
        source_geometry: LayerGeometry,
        target_geometry: LayerGeometry,
        p_conn: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(p_conn > 0.0 && p_conn <= 1.0) {
            return Err(BcpnnError::InvalidParameter(format!(
                "p_conn must be in (0, 1], got {p_conn}"
            )));
        }
        let h_src = source_geometry.num_hypercolumns();
        let count = (p_conn * h_src as f64).ceil() as usize;
        if count == 0 {
            return Err(BcpnnError::InvalidParameter(format!(
                "p_conn {p_conn} selects zero source hypercolumns"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sources = (0..target_geometry.num_hypercolumns())
            .map(|_| {
                let mut picks: Vec<u32> = rand::seq::index::sample(&mut rng, h_src, count)
                    .into_iter()
                    .map(|i| i as u32)
                    .collect();
                picks.sort_unstable();
                picks
            })
            .collect();
        Ok(Self {
            source_geometry,
            target_geometry,
            sources,
        })
    }

    /// Every source hypercolumn connects to every target hypercolumn.
    pub fn full(source_geometry: LayerGeometry, target_geometry: LayerGeometry) -> Self {
        let all: Vec<u32> = (0..source_geometry.num_hypercolumns() as u32).collect();
        Self {
            source_geometry,
            target_geometry,
            sources: vec![all; target_geometry.num_hypercolumns()],
        }
    }

    /// Recurrent wiring: every hypercolumn connects to every other
    /// hypercolumn of the same layer, never to itself. Units inside one
    /// hypercolumn are mutually exclusive under the softmax, so
    /// within-hypercolumn pairs carry no usable weight.
    pub fn full_excluding_self(geometry: LayerGeometry) -> Self {
        let h = geometry.num_hypercolumns() as u32;
        let sources = (0..h)
            .map(|t| (0..h).filter(|&s| s != t).collect())
            .collect();
        Self {
            source_geometry: geometry,
            target_geometry: geometry,
            sources,
        }
    }

    #[inline]
    pub fn source_geometry(&self) -> LayerGeometry {
        self.source_geometry
    }

    #[inline]
    pub fn target_geometry(&self) -> LayerGeometry {
        self.target_geometry
    }

    /// Sorted source hypercolumn ids of one target hypercolumn.
    #[inline]
    pub fn sources(&self, target_hypercolumn: usize) -> &[u32] {
        &self.sources[target_hypercolumn]
    }

    pub fn contains(&self, source_hypercolumn: usize, target_hypercolumn: usize) -> bool {
        self.sources[target_hypercolumn]
            .binary_search(&(source_hypercolumn as u32))
            .is_ok()
    }

    /// Number of connected source-unit/target-unit pairs.
    pub fn connected_pairs(&self) -> usize {
        let per_pair = self.source_geometry.minicolumns() * self.target_geometry.minicolumns();
        self.sources.iter().map(|s| s.len() * per_pair).sum()
    }

    /// True when every connection of `self` is also present in `other`.
    pub fn is_subset_of(&self, other: &ConnectivityMask) -> bool {
        self.source_geometry == other.source_geometry
            && self.target_geometry == other.target_geometry
            && self
                .sources
                .iter()
                .zip(&other.sources)
                .all(|(a, b)| a.iter().all(|s| b.binary_search(s).is_ok()))
    }
}

/// Hypercolumn-pair relevance estimates used to drive rewiring.
///
/// Pairs not tracked by the traces score `f64::NEG_INFINITY` so they are
/// never chosen as replacement candidates.
#[derive(Debug, Clone)]
pub struct RewiringScore {
    source_hypercolumns: usize,
    target_hypercolumns: usize,
    /// Row-major `[target_hc][source_hc]`.
    scores: Vec<f64>,
}

impl RewiringScore {
    #[inline]
    pub fn get(&self, source_hypercolumn: usize, target_hypercolumn: usize) -> f64 {
        self.scores[target_hypercolumn * self.source_hypercolumns + source_hypercolumn]
    }

    pub fn source_hypercolumns(&self) -> usize {
        self.source_hypercolumns
    }

    pub fn target_hypercolumns(&self) -> usize {
        self.target_hypercolumns
    }
}

/// Plug-in mutual information between each (source hypercolumn, target
/// hypercolumn) pair under the trace distribution:
/// `sum_ij p_ij * ln(p_ij / (p_i * p_j))` over the minicolumn pairs.
pub fn mutual_information_scores(traces: &PTraces) -> RewiringScore {
    use rayon::prelude::*;

    let src_geom = traces.source_geometry();
    let tgt_geom = traces.target_geometry();
    let h_src = src_geom.num_hypercolumns();
    let h_tgt = tgt_geom.num_hypercolumns();
    let m_src = src_geom.minicolumns();
    let m_tgt = tgt_geom.minicolumns();

    let mut scores = vec![f64::NEG_INFINITY; h_src * h_tgt];
    scores
        .par_chunks_mut(h_src)
        .enumerate()
        .for_each(|(t, row)| {
            for (slot, &s) in traces.mask().sources(t).iter().enumerate() {
                let s = s as usize;
                let mut mi = 0.0;
                for i in 0..m_src {
                    let p_i = traces.p_pre()[src_geom.unit(s, i)];
                    let row_offset = slot * m_src + i;
                    for j in 0..m_tgt {
                        let p_j = traces.p_post()[tgt_geom.unit(t, j)];
                        let p_ij = traces.joint_block(t)[row_offset * m_tgt + j];
                        mi += p_ij * (p_ij / (p_i * p_j)).ln();
                    }
                }
                row[s] = mi;
            }
        });

    RewiringScore {
        source_hypercolumns: h_src,
        target_hypercolumns: h_tgt,
        scores,
    }
}

/// Swaps, per target hypercolumn, the `ceil(swap_fraction * n_active)`
/// lowest-scoring active sources for the equally many highest-scoring
/// inactive sources, but only where the replacement strictly improves the
/// score. Ties break toward the lower source index. Cardinality per target
/// hypercolumn is preserved.
pub fn rewire(
    mask: &ConnectivityMask,
    scores: &RewiringScore,
    swap_fraction: f64,
) -> Result<ConnectivityMask> {
    if !(0.0..=1.0).contains(&swap_fraction) {
        return Err(BcpnnError::InvalidParameter(format!(
            "swap_fraction must be in [0, 1], got {swap_fraction}"
        )));
    }
    if scores.source_hypercolumns != mask.source_geometry.num_hypercolumns()
        || scores.target_hypercolumns != mask.target_geometry.num_hypercolumns()
    {
        return Err(BcpnnError::DimensionMismatch(
            "scores do not match mask geometry".into(),
        ));
    }

    let h_src = mask.source_geometry.num_hypercolumns() as u32;
    let mut new_sources = Vec::with_capacity(mask.sources.len());
    for (t, active) in mask.sources.iter().enumerate() {
        let n_swap = (swap_fraction * active.len() as f64).ceil() as usize;
        if n_swap == 0 {
            new_sources.push(active.clone());
            continue;
        }

        let mut worst_active: Vec<u32> = active.clone();
        // ascending score, ties toward the lower index
        worst_active.sort_by(|&a, &b| {
            scores
                .get(a as usize, t)
                .partial_cmp(&scores.get(b as usize, t))
                .unwrap()
                .then(a.cmp(&b))
        });

        let is_active = |s: u32| active.binary_search(&s).is_ok();
        let mut best_inactive: Vec<u32> = (0..h_src).filter(|&s| !is_active(s)).collect();
        // descending score, ties toward the lower index
        best_inactive.sort_by(|&a, &b| {
            scores
                .get(b as usize, t)
                .partial_cmp(&scores.get(a as usize, t))
                .unwrap()
                .then(a.cmp(&b))
        });

        let mut keep: Vec<u32> = active.clone();
        for k in 0..n_swap.min(best_inactive.len()) {
            let out = worst_active[k];
            let inn = best_inactive[k];
            if scores.get(inn as usize, t) > scores.get(out as usize, t) {
                let pos = keep.iter().position(|&s| s == out).unwrap();
                keep[pos] = inn;
            }
        }
        keep.sort_unstable();
        new_sources.push(keep);
    }

    ConnectivityMask::from_parts(mask.source_geometry, mask.target_geometry, new_sources)
}
