use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RunConfig;
use crate::denoiser::{ParamStore, Srcnn, UNet};
use crate::diffusion::NoiseSchedule;
use crate::numerics::{AdamW, AdamWState, Shape, Tensor};
use crate::preprocess::NormStats;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RSCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Unet,
    Srcnn,
}

/// Seeds of every random stream a run consumed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedLineage {
    pub seed: u64,
    pub init: u64,
    pub batches: u64,
}

/// A trained network with everything needed to sample or resume:
/// configuration, preprocessing statistics and optional optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelKind,
    pub config: RunConfig,
    pub norm: NormStats,
    pub topo_moments: (f64, f64),
    pub step: u64,
    pub seeds: SeedLineage,
    pub params: ParamStore<f32>,
    pub optimizer: Option<Vec<AdamWState<f32>>>,
}

#[derive(Serialize, Deserialize)]
struct UNetRecord {
    base_channels: usize,
    depth: usize,
    time_embed_dim: usize,
    in_channels: usize,
    groups: usize,
}

#[derive(Serialize, Deserialize)]
struct ScheduleRecord {
    kind: String,
    steps: usize,
}

#[derive(Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    shape: [usize; 4],
}

#[derive(Serialize, Deserialize)]
struct OptimizerRecord {
    step: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelKind,
    config: Vec<(String, String)>,
    unet: Option<UNetRecord>,
    schedule: Option<ScheduleRecord>,
    gamma: f64,
    vmax_gamma: f64,
    topo_moments: [f64; 2],
    step: u64,
    seeds: SeedLineage,
    params: Vec<ParamRecord>,
    optimizer: Option<OptimizerRecord>,
}

fn push_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| {
            Error::Checkpoint(format!(
                "truncated {what}: need {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let b = self.take(n * 4, what)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

impl Checkpoint {
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        self.config.schedule()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let optimizer = match &self.optimizer {
            Some(states) => {
                let first = states.first().ok_or_else(|| {
                    Error::Checkpoint("optimizer state has no tensors".into())
                })?;
                if states.iter().any(|s| s.step != first.step || s.hyper != first.hyper) {
                    return Err(Error::Checkpoint("optimizer tensors disagree on step".into()));
                }
                let h = first.hyper;
                Some(OptimizerRecord {
                    step: first.step,
                    lr: h.lr,
                    beta1: h.beta1,
                    beta2: h.beta2,
                    eps: h.eps,
                    weight_decay: h.weight_decay,
                })
            }
            None => None,
        };
        let unet = (self.model == ModelKind::Unet).then(|| {
            let u = self.config.unet_config();
            UNetRecord {
                base_channels: u.base_channels,
                depth: u.depth,
                time_embed_dim: u.time_embed_dim,
                in_channels: u.in_channels,
                groups: u.groups,
            }
        });
        let header = Header {
            model: self.model,
            config: self
                .config
                .entries()
                .into_iter()
                .filter(|(k, _)| *k != "out_dir")
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            unet,
            schedule: (self.model == ModelKind::Unet).then(|| ScheduleRecord {
                kind: self.config.schedule.to_string(),
                steps: self.config.diffusion_steps,
            }),
            gamma: self.norm.gamma,
            vmax_gamma: self.norm.vmax_gamma,
            topo_moments: [self.topo_moments.0, self.topo_moments.1],
            step: self.step,
            seeds: self.seeds,
            params: self
                .params
                .iter()
                .map(|(name, t)| ParamRecord {
                    name: name.to_string(),
                    shape: t.shape().dims(),
                })
                .collect(),
            optimizer,
        };
        let json = serde_json::to_vec(&header)
            .map_err(|e| Error::Checkpoint(format!("encoding header: {e}")))?;
        let mut out = Vec::with_capacity(12 + json.len() + self.params.scalar_count() * 12);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let len = u32::try_from(json.len())
            .map_err(|_| Error::Checkpoint("header exceeds 4 GiB".into()))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in self.params.iter() {
            push_f32s(&mut out, t.data());
        }
        if let Some(states) = &self.optimizer {
            for s in states {
                push_f32s(&mut out, &s.m);
                push_f32s(&mut out, &s.v);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let len = r.u32("header length")? as usize;
        let header: Header = serde_json::from_slice(r.take(len, "header")?)
            .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;

        let mut config = RunConfig::default();
        for (k, v) in &header.config {
            config
                .set(k, v)
                .map_err(|e| Error::Checkpoint(format!("stored config: {e}")))?;
        }
        if let Some(u) = &header.unet {
            let c = config.unet_config();
            let stored = (u.base_channels, u.depth, u.time_embed_dim, u.in_channels, u.groups);
            if stored != (c.base_channels, c.depth, c.time_embed_dim, c.in_channels, c.groups) {
                return Err(Error::Checkpoint(
                    "network record disagrees with stored config".into(),
                ));
            }
        }
        if let Some(s) = &header.schedule {
            if s.steps != config.diffusion_steps || s.kind != config.schedule.to_string() {
                return Err(Error::Checkpoint(
                    "schedule record disagrees with stored config".into(),
                ));
            }
        }
        let norm = NormStats::new(header.gamma, header.vmax_gamma)
            .map_err(|e| Error::Checkpoint(format!("normalisation: {e}")))?;

        let mut params = ParamStore::default();
        for p in &header.params {
            let [b, c, h, w] = p.shape;
            let shape = Shape::new(b, c, h, w);
            let data = r.f32s(shape.len(), &p.name)?;
            params.add(p.name.clone(), Tensor::from_vec(shape, data)?);
        }
        let optimizer = match &header.optimizer {
            Some(o) => {
                let hyper = AdamW {
                    lr: o.lr,
                    beta1: o.beta1,
                    beta2: o.beta2,
                    eps: o.eps,
                    weight_decay: o.weight_decay,
                };
                let mut states = Vec::with_capacity(params.len());
                for (name, t) in params.iter() {
                    let mut st = AdamWState::new(t.len(), hyper);
                    st.step = o.step;
                    st.m = r.f32s(t.len(), &format!("{name} first moment"))?;
                    st.v = r.f32s(t.len(), &format!("{name} second moment"))?;
                    states.push(st);
                }
                Some(states)
            }
            None => None,
        };
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            model: header.model,
            config,
            norm,
            topo_moments: (header.topo_moments[0], header.topo_moments[1]),
            step: header.step,
            seeds: header.seeds,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)
                .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        }
        std::fs::write(path, self.to_bytes()?)
            .map_err(|e| Error::io(format!("writing checkpoint {}", path.display()), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)
            .map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
        Self::from_bytes(&bytes)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }

    fn expect_model(&self, kind: ModelKind) -> Result<()> {
        if self.model != kind {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds a {:?} network, expected {kind:?}",
                self.model
            )));
        }
        Ok(())
    }

    pub fn unet(&self) -> Result<UNet<f32>> {
        self.expect_model(ModelKind::Unet)?;
        let mut net = UNet::new(self.config.unet_config(), self.seeds.init)?;
        net.params_mut().load_from(&self.params)?;
        Ok(net)
    }

    pub fn srcnn(&self) -> Result<Srcnn<f32>> {
        self.expect_model(ModelKind::Srcnn)?;
        let mut net = Srcnn::new(self.seeds.init);
        net.params_mut().load_from(&self.params)?;
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::UNetConfig;

    fn small_checkpoint(with_opt: bool) -> Checkpoint {
        let mut config = RunConfig::default();
        config.base_channels = 8;
        config.groups = 4;
        config.time_embed_dim = 16;
        let net = UNet::<f32>::new(config.unet_config(), 3).unwrap();
        let mut optimizer = net.params().optimizer(config.adamw());
        for (i, st) in optimizer.iter_mut().enumerate() {
            st.step = 7;
            st.m.iter_mut().for_each(|v| *v = 0.25 * i as f32);
            st.v.iter_mut().for_each(|v| *v = 1.0 / (1.0 + i as f32));
        }
        Checkpoint {
            model: ModelKind::Unet,
            config,
            norm: NormStats::new(0.15, 1.7).unwrap(),
            topo_moments: (412.5, 96.25),
            step: 7,
            seeds: SeedLineage {
                seed: 1,
                init: 3,
                batches: 4,
            },
            params: net.params().clone(),
            optimizer: with_opt.then_some(optimizer),
        }
    }

    #[test]
    fn roundtrip_is_exact() {
        for with_opt in [false, true] {
            let ck = small_checkpoint(with_opt);
            let bytes = ck.to_bytes().unwrap();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.to_bytes().unwrap(), bytes);
        }
    }

    #[test]
    fn layout_starts_with_magic_and_header() {
        let bytes = small_checkpoint(false).to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"RSCK");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[12..12 + len]).unwrap();
        assert_eq!(header["params"][0]["name"], "time_embed.0.weight");
        let payload = bytes.len() - 12 - len;
        assert_eq!(payload, 4 * small_checkpoint(false).params.scalar_count());
    }

    #[test]
    fn rejects_corruption() {
        let bytes = small_checkpoint(true).to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(Checkpoint::from_bytes(&magic).is_err());
    }

    #[test]
    fn missing_header_key_is_reported() {
        let bytes = small_checkpoint(false).to_bytes().unwrap();
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let mut header: serde_json::Value = serde_json::from_slice(&bytes[12..12 + len]).unwrap();
        header.as_object_mut().unwrap().remove("vmax_gamma");
        let json = serde_json::to_vec(&header).unwrap();
        let mut out = bytes[..8].to_vec();
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&bytes[12 + len..]);
        match Checkpoint::from_bytes(&out) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("vmax_gamma"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rebuilt_network_matches() {
        let ck = small_checkpoint(false);
        let net = ck.unet().unwrap();
        assert_eq!(net.params(), &ck.params);
        assert!(ck.srcnn().is_err());
        let cfg = UNetConfig {
            base_channels: 8,
            groups: 4,
            time_embed_dim: 16,
            ..UNetConfig::default()
        };
        assert_eq!(*net.config(), cfg);
    }
}
