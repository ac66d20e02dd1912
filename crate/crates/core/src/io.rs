//! On-disk formats: parameter blocks (JSON header line + little-endian f64
//! payload), chain checkpoints, and the pendulum trajectory CSV with its JSON
//! sidecar.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::mdn::{MdnArchitecture, ParamVector};
use crate::pendulum::{Observation, PendulumParams, PendulumState, Standardizer};
use crate::samplers::{ChainCheckpoint, StepDiagnostics};
use crate::{Error, Result};

pub const PARAM_FORMAT: &str = "pbnn-params";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBlockHeader {
    pub format: String,
    pub version: u32,
    pub architecture: MdnArchitecture,
    /// Length of each vector.
    pub len: usize,
    /// Number of vectors in the payload.
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra: Option<serde_json::Value>,
}

/// Write `vectors` as one JSON header line followed by `count * len` f64s.
pub fn write_param_block<W: Write>(
    mut w: W,
    arch: &MdnArchitecture,
    vectors: &[ParamVector],
    extra: Option<serde_json::Value>,
) -> Result<()> {
    let len = arch.param_count();
    if let Some(bad) = vectors.iter().find(|v| v.len() != len) {
        return Err(Error::invalid(format!("vector of length {} does not match architecture ({len})", bad.len())));
    }
    let header = ParamBlockHeader {
        format: PARAM_FORMAT.into(),
        version: 1,
        architecture: arch.clone(),
        len,
        count: vectors.len(),
        extra,
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(len * vectors.len() * 8);
    for v in vectors {
        for x in v.iter() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_param_block<R: Read>(r: R) -> Result<(ParamBlockHeader, Vec<ParamVector>)> {
    let mut reader = BufReader::new(r);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let header: ParamBlockHeader = serde_json::from_str(line.trim_end())?;
    if header.format != PARAM_FORMAT {
        return Err(Error::Format(format!("unexpected format tag '{}'", header.format)));
    }
    if header.len != header.architecture.param_count() {
        return Err(Error::Format("header length disagrees with architecture".into()));
    }
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;
    if payload.len() != header.len * header.count * 8 {
        return Err(Error::Format(format!(
            "payload has {} bytes, header promises {}",
            payload.len(),
            header.len * header.count * 8
        )));
    }
    let values: Vec<f64> = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let vectors = if header.len == 0 {
        vec![ParamVector::new(Vec::new()); header.count]
    } else {
        values.chunks_exact(header.len).map(|c| ParamVector::new(c.to_vec())).collect()
    };
    Ok((header, vectors))
}

pub fn save_params(path: &Path, arch: &MdnArchitecture, vectors: &[ParamVector]) -> Result<()> {
    write_param_block(fs::File::create(path)?, arch, vectors, None)
}

pub fn load_params(path: &Path) -> Result<(ParamBlockHeader, Vec<ParamVector>)> {
    read_param_block(fs::File::open(path)?)
}

/// Chain checkpoint: chain state (and step log) in the header, retained
/// samples in the binary block.
pub fn save_checkpoint(path: &Path, arch: &MdnArchitecture, ck: &ChainCheckpoint) -> Result<()> {
    let extra = serde_json::json!({ "chain": ck, "step_log": ck.step_log });
    write_param_block(fs::File::create(path)?, arch, &ck.samples, Some(extra))
}

pub fn load_checkpoint(path: &Path) -> Result<(MdnArchitecture, ChainCheckpoint)> {
    let (header, samples) = load_params(path)?;
    let extra = header.extra.ok_or_else(|| Error::Format("checkpoint header lacks chain state".into()))?;
    let mut ck: ChainCheckpoint = serde_json::from_value(extra["chain"].clone())?;
    let log: Vec<StepDiagnostics> = serde_json::from_value(extra["step_log"].clone())?;
    ck.samples = samples;
    ck.step_log = log;
    Ok((header.architecture, ck))
}

pub const TRAJECTORY_HEADER: &str = "t,y1,y2,y3,y4";

pub fn trajectory_csv(obs: &[Observation]) -> String {
    let mut s = String::with_capacity(obs.len() * 80);
    s.push_str(TRAJECTORY_HEADER);
    s.push('\n');
    for (t, o) in obs.iter().enumerate() {
        s.push_str(&format!("{t},{},{},{},{}\n", o[0], o[1], o[2], o[3]));
    }
    s
}

pub fn parse_trajectory_csv(text: &str) -> Result<Vec<Observation>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == TRAJECTORY_HEADER => {}
        other => return Err(Error::Format(format!("expected header '{TRAJECTORY_HEADER}', found {other:?}"))),
    }
    let mut out = Vec::new();
    for (row, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Format(format!("row {row}: expected 5 fields, found {}", fields.len())));
        }
        let t: usize = fields[0].trim().parse().map_err(|_| Error::Format(format!("row {row}: bad time index")))?;
        if t != out.len() {
            return Err(Error::Format(format!("row {row}: time index {t} out of sequence")));
        }
        let mut o = [0.0; 4];
        for d in 0..4 {
            o[d] = fields[d + 1].trim().parse().map_err(|_| Error::Format(format!("row {row}: bad value in column y{}", d + 1)))?;
        }
        out.push(o);
    }
    Ok(out)
}

/// Everything needed to rebuild the supervised dataset from the CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub params: PendulumParams,
    pub initial_state: PendulumState,
    pub seed: u64,
    pub lags: Vec<usize>,
    pub n_train: usize,
    /// Fit on the observations touched by the training split only.
    pub standardization: Option<Standardizer>,
    pub config_hash: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn param_block_roundtrip(values in proptest::collection::vec(proptest::num::f64::ANY, 2 * 17)) {
            let arch = MdnArchitecture { input_dim: 2, hidden: vec![3], output_dim: 1, ..Default::default() };
            prop_assert_eq!(arch.param_count(), 17);
            let vs = vec![ParamVector::new(values[..17].to_vec()), ParamVector::new(values[17..].to_vec())];
            let mut buf = Vec::new();
            write_param_block(&mut buf, &arch, &vs, None).unwrap();
            let (h, back) = read_param_block(&buf[..]).unwrap();
            prop_assert_eq!(h.count, 2);
            for (a, b) in vs.iter().zip(&back) {
                let ab: Vec<u64> = a.iter().map(|x| x.to_bits()).collect();
                let bb: Vec<u64> = b.iter().map(|x| x.to_bits()).collect();
                prop_assert_eq!(ab, bb);
            }
        }

        #[test]
        fn trajectory_csv_roundtrip_is_bit_exact(rows in proptest::collection::vec(proptest::array::uniform4(-1e3f64..1e3), 1..40)) {
            let back = parse_trajectory_csv(&trajectory_csv(&rows)).unwrap();
            prop_assert_eq!(back, rows);
        }
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let arch = MdnArchitecture { input_dim: 1, hidden: vec![1], output_dim: 1, ..Default::default() };
        let mut buf = Vec::new();
        write_param_block(&mut buf, &arch, &[ParamVector::zeros(arch.param_count())], None).unwrap();
        buf.pop();
        assert!(matches!(read_param_block(&buf[..]), Err(Error::Format(_))));
    }

    #[test]
    fn wrong_header_rejected() {
        assert!(parse_trajectory_csv("a,b\n0,1\n").is_err());
        assert!(parse_trajectory_csv("t,y1,y2,y3,y4\n1,0,0,0,0\n").is_err());
    }
}
