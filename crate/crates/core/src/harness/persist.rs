//! Versioned binary model file.
//!
//! Layout: an 8-byte magic and a little-endian `u32` version, then tagged
//! sections. Each section is a 4-byte tag, a `u32`-prefixed UTF-8 header of
//! `key=value` lines and a `u64`-prefixed payload. The autoencoder section
//! stores parameters as `f32`; mixture and calibration sections store `f64`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::density::{Component, GmmModel, Reduction};
use crate::error::{Error, Result};
use crate::rcae::{Architecture, Parameters, RcaeModel};

pub const MAGIC: &[u8; 8] = b"MESPOTMF";
pub const FORMAT_VERSION: u32 = 1;

/// Scale of score variation on held-out normal clips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub reference_span: f64,
    pub clips: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub rcae: RcaeModel,
    pub mixtures: Option<Vec<GmmModel>>,
    pub calibration: Option<Calibration>,
}

struct Section {
    tag: [u8; 4],
    header: String,
    payload: Vec<u8>,
}

fn put_section(out: &mut Vec<u8>, s: &Section) {
    out.extend_from_slice(&s.tag);
    out.extend_from_slice(&(s.header.len() as u32).to_le_bytes());
    out.extend_from_slice(s.header.as_bytes());
    out.extend_from_slice(&(s.payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&s.payload);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("model file is truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn section(&mut self) -> Result<Option<Section>> {
        if self.pos == self.bytes.len() {
            return Ok(None);
        }
        let tag: [u8; 4] = self.take(4)?.try_into().expect("4 bytes");
        let hlen = self.u32()? as usize;
        let header = std::str::from_utf8(self.take(hlen)?)
            .map_err(|_| Error::Format("section header is not UTF-8".into()))?
            .to_owned();
        let plen = self.u64()? as usize;
        let payload = self.take(plen)?.to_vec();
        Ok(Some(Section { tag, header, payload }))
    }
}

fn parse_header(text: &str) -> Result<BTreeMap<&str, &str>> {
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split_once('=')
                .ok_or_else(|| Error::Format(format!("malformed header line {l:?}")))
        })
        .collect()
}

fn field<T: std::str::FromStr>(h: &BTreeMap<&str, &str>, key: &str) -> Result<T> {
    h.get(key)
        .ok_or_else(|| Error::Format(format!("header lacks {key}")))?
        .parse()
        .map_err(|_| Error::Format(format!("header field {key} does not parse")))
}

fn f64s(payload: &[u8]) -> Vec<f64> {
    payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect()
}

fn rcae_section(m: &RcaeModel) -> Section {
    let a = &m.arch;
    let params = m.flatten();
    let header = format!(
        "block={}\ntime_steps={}\nconv_filters={}\nlstm_filters={}\nkernel={}\ndepth={}\ndropout={}\nparams={}\n",
        a.block,
        a.time_steps,
        a.conv_filters,
        a.lstm_filters,
        a.kernel,
        a.depth,
        m.dropout,
        params.len()
    );
    let payload = params.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    Section {
        tag: *b"RCAE",
        header,
        payload,
    }
}

fn read_rcae(s: &Section) -> Result<RcaeModel> {
    let h = parse_header(&s.header)?;
    let arch = Architecture {
        block: field(&h, "block")?,
        time_steps: field(&h, "time_steps")?,
        conv_filters: field(&h, "conv_filters")?,
        lstm_filters: field(&h, "lstm_filters")?,
        kernel: field(&h, "kernel")?,
        depth: field(&h, "depth")?,
    };
    arch.validate().map_err(|e| Error::Format(e.to_string()))?;
    let mut model = RcaeModel::init(&arch, &mut ChaCha8Rng::seed_from_u64(0))?;
    model.dropout = field(&h, "dropout")?;
    let count: usize = field(&h, "params")?;
    if count != model.param_count() || s.payload.len() != 4 * count {
        return Err(Error::Format(format!(
            "architecture needs {} parameters, file holds {count}",
            model.param_count()
        )));
    }
    let flat: Vec<f64> = s
        .payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    model.load_flat(&flat);
    Ok(model)
}

fn mixture_section(mixtures: &[GmmModel]) -> Section {
    let reduction = mixtures.first().map_or(Reduction::SpatialMeanPool, |g| g.reduction);
    let mut header = format!("bags={}\nreduction={}\n", mixtures.len(), reduction.code());
    let mut payload = Vec::new();
    for g in mixtures {
        let comps = g.components();
        header += &format!("mixture{}={},{}\n", g.bag_index, comps.len(), g.dim());
        let values = comps
            .iter()
            .map(|c| c.weight)
            .chain(comps.iter().flat_map(|c| c.mean.iter().copied()))
            .chain(comps.iter().flat_map(|c| c.covariance.iter().copied()));
        values.for_each(|v| payload.extend_from_slice(&v.to_le_bytes()));
    }
    Section {
        tag: *b"GMMS",
        header,
        payload,
    }
}

fn read_mixtures(s: &Section) -> Result<Vec<GmmModel>> {
    let h = parse_header(&s.header)?;
    let bags: usize = field(&h, "bags")?;
    let code: String = field(&h, "reduction")?;
    let reduction = Reduction::from_code(&code).ok_or_else(|| Error::Format(format!("unknown reduction {code}")))?;
    let values = f64s(&s.payload);
    let mut pos = 0;
    let mut out = Vec::with_capacity(bags);
    for bag in 0..bags {
        let shape: String = field(&h, &format!("mixture{bag}"))?;
        let (m, d) = shape
            .split_once(',')
            .and_then(|(m, d)| Some((m.parse::<usize>().ok()?, d.parse::<usize>().ok()?)))
            .ok_or_else(|| Error::Format(format!("bad mixture shape {shape}")))?;
        let need = m * (1 + d + d * d);
        let block = values
            .get(pos..pos + need)
            .ok_or_else(|| Error::Format("mixture payload is truncated".into()))?;
        pos += need;
        let (weights, rest) = block.split_at(m);
        let (means, covs) = rest.split_at(m * d);
        let comps = (0..m)
            .map(|k| Component {
                weight: weights[k],
                mean: means[k * d..(k + 1) * d].to_vec(),
                covariance: covs[k * d * d..(k + 1) * d * d].to_vec(),
            })
            .collect();
        out.push(GmmModel::new(bag, reduction, comps)?);
    }
    if pos != values.len() {
        return Err(Error::Format("mixture payload has trailing data".into()));
    }
    Ok(out)
}

impl ModelFile {
    pub fn new(rcae: RcaeModel) -> Self {
        Self {
            rcae,
            mixtures: None,
            calibration: None,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        put_section(&mut out, &rcae_section(&self.rcae));
        if let Some(m) = &self.mixtures {
            put_section(&mut out, &mixture_section(m));
        }
        if let Some(c) = &self.calibration {
            put_section(
                &mut out,
                &Section {
                    tag: *b"CALB",
                    header: format!("clips={}\n", c.clips),
                    payload: c.reference_span.to_le_bytes().to_vec(),
                },
            );
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
            return Err(Error::Format("not a model file".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                expected: FORMAT_VERSION,
                found: version,
            });
        }
        let mut rcae = None;
        let mut mixtures = None;
        let mut calibration = None;
        while let Some(s) = r.section()? {
            match &s.tag {
                b"RCAE" => rcae = Some(read_rcae(&s)?),
                b"GMMS" => mixtures = Some(read_mixtures(&s)?),
                b"CALB" => {
                    let h = parse_header(&s.header)?;
                    let span = f64s(&s.payload);
                    if span.len() != 1 {
                        return Err(Error::Format("calibration payload must hold one value".into()));
                    }
                    calibration = Some(Calibration {
                        reference_span: span[0],
                        clips: field(&h, "clips")?,
                    });
                }
                other => {
                    return Err(Error::Format(format!(
                        "unknown section {:?}",
                        String::from_utf8_lossy(other)
                    )))
                }
            }
        }
        Ok(Self {
            rcae: rcae.ok_or_else(|| Error::Format("model file has no autoencoder".into()))?,
            mixtures,
            calibration,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::ModelNotFound(path.to_path_buf()));
        }
        let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{fit_mixture, GmmConfig};

    fn tiny_model() -> RcaeModel {
        let arch = Architecture {
            block: 8,
            time_steps: 4,
            conv_filters: 3,
            lstm_filters: 2,
            kernel: 3,
            depth: 2,
        };
        let mut m = RcaeModel::init(&arch, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        m.round_to_f32();
        m
    }

    fn mixtures() -> Vec<GmmModel> {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64).sin(), (i as f64 * 0.7).cos()]).collect();
        let cfg = GmmConfig {
            components: 2,
            ..GmmConfig::default()
        };
        (0..16).map(|b| fit_mixture(&xs, &cfg, b, &mut rng).unwrap().0).collect()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let mut file = ModelFile::new(tiny_model());
        file.mixtures = Some(mixtures());
        file.calibration = Some(Calibration {
            reference_span: 0.123_456_789,
            clips: 3,
        });
        file.save(&path).unwrap();
        let first = std::fs::read(&path).unwrap();
        let loaded = ModelFile::load(&path).unwrap();
        assert_eq!(loaded, file);
        loaded.save(&path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn version_and_missing_file_errors() {
        let mut bytes = ModelFile::new(tiny_model()).to_bytes();
        bytes[8] = 9;
        assert!(matches!(
            ModelFile::from_bytes(&bytes),
            Err(Error::Version { expected: 1, found: 9 })
        ));
        let missing = ModelFile::load(Path::new("/nonexistent/model.bin")).unwrap_err();
        assert!(missing.to_string().contains("model not found"));
        assert!(matches!(ModelFile::from_bytes(b"garbage"), Err(Error::Format(_))));
        let full = ModelFile::new(tiny_model()).to_bytes();
        assert!(matches!(ModelFile::from_bytes(&full[..full.len() - 3]), Err(Error::Format(_))));
    }
}
