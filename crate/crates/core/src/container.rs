//! Model persistence.
//!
//! Byte layout (all integers little-endian unless noted):
//!
//! ```text
//! magic "BCPN" (4 bytes)
//! format version u32 (currently 1)
//! sections, each prefixed by a u64 byte length:
//!   1. config text (canonical key=value, UTF-8)
//!   2. layer geometries + training metadata:
//!      h_input u32, m_input u32, h_hidden u32, m_hidden u32,
//!      epochs_trained u32, seed u64
//!   3. feedforward connectivity mask: per target hypercolumn,
//!      count u32 followed by the sorted source hypercolumn ids as u32
//!   4. feedforward traces: alpha f64, then p_pre, p_post, p_joint
//!      (each as a u64 element count followed by f64 values)
//!   5. feedforward params: bias then weights (same array framing)
//!   6. recurrent traces: as section 4 (the recurrent mask is structural —
//!      all hypercolumn pairs except self — and is rebuilt on load)
//!   7. recurrent params: as section 5
//! trailing CRC32 (u32) over every preceding byte
//! ```

use std::path::Path;

use crate::bcpnn::{PTraces, ProjectionParams};
use crate::config::ExperimentConfig;
use crate::error::{BcpnnError, Result};
use crate::feedforward::FeedforwardModel;
use crate::recurrent::RecurrentModel;
use crate::topology::ConnectivityMask;

pub const MAGIC: &[u8; 4] = b"BCPN";
pub const FORMAT_VERSION: u32 = 1;

/// A trained model pair plus the configuration that produced it.
#[derive(Debug, Clone)]
pub struct ModelContainer {
    pub config: ExperimentConfig,
    pub feedforward: FeedforwardModel,
    pub recurrent: RecurrentModel,
}

fn put_array(buf: &mut Vec<u8>, values: &[f64]) {
    buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_section(out: &mut Vec<u8>, section: &[u8]) {
    out.extend_from_slice(&(section.len() as u64).to_le_bytes());
    out.extend_from_slice(section);
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        match end {
            Some(end) => {
                let s = &self.data[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(BcpnnError::Container(format!(
                "truncated while reading {what} at offset {}",
                self.pos
            ))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn array(&mut self, what: &str) -> Result<Vec<f64>> {
        let n = self.u64(what)? as usize;
        let bytes = self.take(n * 8, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn section(&mut self, what: &str) -> Result<Reader<'a>> {
        let len = self.u64(what)? as usize;
        Ok(Reader {
            data: self.take(len, what)?,
            pos: 0,
        })
    }

    fn done(&self) -> bool {
        self.pos == self.data.len()
    }
}

fn traces_section(traces: &PTraces) -> Vec<u8> {
    let mut s = Vec::new();
    s.extend_from_slice(&traces.alpha().to_le_bytes());
    put_array(&mut s, traces.p_pre());
    put_array(&mut s, traces.p_post());
    put_array(&mut s, traces.joint_raw());
    s
}

fn params_section(params: &ProjectionParams) -> Vec<u8> {
    let mut s = Vec::new();
    put_array(&mut s, params.bias());
    put_array(&mut s, params.weights_raw());
    s
}

fn read_traces(r: &mut Reader, mask: &ConnectivityMask, floor: f64) -> Result<PTraces> {
    let alpha = r.f64("trace alpha")?;
    let p_pre = r.array("p_pre")?;
    let p_post = r.array("p_post")?;
    let p_joint = r.array("p_joint")?;
    PTraces::from_parts(mask.clone(), alpha, floor, p_pre, p_post, p_joint)
}

fn read_params(r: &mut Reader, mask: &ConnectivityMask) -> Result<ProjectionParams> {
    let bias = r.array("bias")?;
    let weights = r.array("weights")?;
    ProjectionParams::from_parts(mask.clone(), bias, weights)
}

impl ModelContainer {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());

        put_section(&mut out, self.config.to_text().as_bytes());

        let ff = &self.feedforward;
        let mut meta = Vec::new();
        meta.extend_from_slice(&(ff.input_geometry().num_hypercolumns() as u32).to_le_bytes());
        meta.extend_from_slice(&(ff.input_geometry().minicolumns() as u32).to_le_bytes());
        meta.extend_from_slice(&(ff.hidden_geometry().num_hypercolumns() as u32).to_le_bytes());
        meta.extend_from_slice(&(ff.hidden_geometry().minicolumns() as u32).to_le_bytes());
        meta.extend_from_slice(&(ff.epochs_trained() as u32).to_le_bytes());
        meta.extend_from_slice(&ff.seed().to_le_bytes());
        put_section(&mut out, &meta);

        let mut mask = Vec::new();
        for t in 0..ff.hidden_geometry().num_hypercolumns() {
            let sources = ff.mask().sources(t);
            mask.extend_from_slice(&(sources.len() as u32).to_le_bytes());
            for &s in sources {
                mask.extend_from_slice(&s.to_le_bytes());
            }
        }
        put_section(&mut out, &mask);

        put_section(&mut out, &traces_section(ff.traces()));
        put_section(&mut out, &params_section(ff.params()));
        put_section(&mut out, &traces_section(self.recurrent.traces()));
        put_section(&mut out, &params_section(self.recurrent.params()));

        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        if data.len() < 12 {
            return Err(BcpnnError::Container("file too short".into()));
        }
        let (body, crc_bytes) = data.split_at(data.len() - 4);
        let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(BcpnnError::Container(format!(
                "CRC mismatch: stored {stored:#010x}, computed {computed:#010x}"
            )));
        }

        let mut r = Reader { data: body, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(BcpnnError::Container("bad magic, not a model file".into()));
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(BcpnnError::Container(format!(
                "unsupported format version {version}, expected {FORMAT_VERSION}"
            )));
        }

        let config_section = r.section("config")?;
        let config_text = std::str::from_utf8(config_section.data)
            .map_err(|_| BcpnnError::Container("config section is not UTF-8".into()))?;
        let config = ExperimentConfig::parse(config_text)?;

        let mut meta = r.section("metadata")?;
        let h_input = meta.u32("h_input")? as usize;
        let m_input = meta.u32("m_input")? as usize;
        let h_hidden = meta.u32("h_hidden")? as usize;
        let m_hidden = meta.u32("m_hidden")? as usize;
        let epochs_trained = meta.u32("epochs_trained")? as usize;
        let seed = meta.u64("seed")?;
        let input_geometry = crate::geometry::LayerGeometry::new(h_input, m_input)?;
        let hidden_geometry = crate::geometry::LayerGeometry::new(h_hidden, m_hidden)?;

        let mut mask_r = r.section("mask")?;
        let mut sources = Vec::with_capacity(hidden_geometry.num_hypercolumns());
        for _ in 0..hidden_geometry.num_hypercolumns() {
            let count = mask_r.u32("mask count")? as usize;
            let mut list = Vec::with_capacity(count);
            for _ in 0..count {
                list.push(mask_r.u32("mask source")?);
            }
            sources.push(list);
        }
        if !mask_r.done() {
            return Err(BcpnnError::Container("trailing bytes in mask section".into()));
        }
        let ff_mask = ConnectivityMask::from_parts(input_geometry, hidden_geometry, sources)?;

        let mut ff_traces_r = r.section("feedforward traces")?;
        let ff_traces = read_traces(&mut ff_traces_r, &ff_mask, config.eps_trace)?;
        let mut ff_params_r = r.section("feedforward params")?;
        let ff_params = read_params(&mut ff_params_r, &ff_mask)?;

        let rec_mask = ConnectivityMask::full_excluding_self(hidden_geometry);
        let mut rec_traces_r = r.section("recurrent traces")?;
        let rec_traces = read_traces(&mut rec_traces_r, &rec_mask, config.eps_trace)?;
        let mut rec_params_r = r.section("recurrent params")?;
        let rec_params = read_params(&mut rec_params_r, &rec_mask)?;

        if !r.done() {
            return Err(BcpnnError::Container("trailing bytes after sections".into()));
        }

        let feedforward =
            FeedforwardModel::from_parts(ff_mask, ff_traces, ff_params, epochs_trained, seed);
        let recurrent = RecurrentModel::from_parts(
            rec_traces,
            rec_params,
            config.timesteps,
            config.drive_mode,
            config.drive_gain,
            config.eps_conv,
        );
        Ok(Self {
            config,
            feedforward,
            recurrent,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| BcpnnError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let data = std::fs::read(path).map_err(|e| BcpnnError::io(path, e))?;
        Self::from_bytes(&data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::EncodedDataset;
    use crate::feedforward::train_feedforward;
    use crate::recurrent::train_recurrent;
    use crate::synth;

    fn trained() -> ModelContainer {
        let mut cfg = ExperimentConfig::default();
        cfg.h_hidden = 5;
        cfg.m_hidden = 6;
        cfg.alpha = 0.01;
        cfg.epochs = 2;
        cfg.rewire_epochs = 1;
        cfg.seed = 99;
        let data = EncodedDataset::from_images(synth::generate_images(30, 4));
        let feedforward = train_feedforward(&data, &cfg).unwrap();
        let recurrent = train_recurrent(&feedforward, &data, &cfg).unwrap();
        ModelContainer {
            config: cfg,
            feedforward,
            recurrent,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = trained();
        let bytes = c.to_bytes();
        let loaded = ModelContainer::from_bytes(&bytes).unwrap();
        assert_eq!(loaded.to_bytes(), bytes);
        // element-wise equality of every array
        assert_eq!(
            loaded.feedforward.params().weights_raw(),
            c.feedforward.params().weights_raw()
        );
        assert_eq!(loaded.feedforward.params().bias(), c.feedforward.params().bias());
        assert_eq!(
            loaded.feedforward.traces().joint_raw(),
            c.feedforward.traces().joint_raw()
        );
        assert_eq!(
            loaded.recurrent.params().weights_raw(),
            c.recurrent.params().weights_raw()
        );
        assert_eq!(
            loaded.recurrent.traces().joint_raw(),
            c.recurrent.traces().joint_raw()
        );
        assert_eq!(loaded.feedforward.mask(), c.feedforward.mask());
        assert_eq!(loaded.config, c.config);
        assert_eq!(loaded.feedforward.epochs_trained(), c.feedforward.epochs_trained());
    }

    #[test]
    fn save_load_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bcpn");
        let c = trained();
        c.save(&path).unwrap();
        let loaded = ModelContainer::load(&path).unwrap();
        assert_eq!(loaded.to_bytes(), c.to_bytes());
    }

    #[test]
    fn corrupted_byte_fails_crc() {
        let c = trained();
        let mut bytes = c.to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xFF;
        match ModelContainer::from_bytes(&bytes) {
            Err(BcpnnError::Container(msg)) => assert!(msg.contains("CRC")),
            other => panic!("expected CRC failure, got {other:?}"),
        }
    }

    #[test]
    fn wrong_version_is_rejected() {
        let c = trained();
        let mut bytes = c.to_bytes();
        // bump version field, then fix up the CRC so only the gate trips
        bytes[4] = 2;
        let body_len = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&crc.to_le_bytes());
        match ModelContainer::from_bytes(&bytes) {
            Err(BcpnnError::Container(msg)) => assert!(msg.contains("version")),
            other => panic!("expected version gate, got {other:?}"),
        }
    }

    #[test]
    fn magic_header_layout() {
        let bytes = trained().to_bytes();
        assert_eq!(&bytes[..4], b"BCPN");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    }
}
