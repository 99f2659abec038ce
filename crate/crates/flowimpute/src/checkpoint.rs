//! On-disk checkpoint chain: a plain-text manifest plus one flat
//! little-endian `f64` array file per snapshot per network.
//!
//! The manifest records everything needed to rebuild the models and redo
//! the preprocessing: data dimension, layer shapes, the partition of every
//! coupling layer, scaling parameters, the initializer, snapshot epochs,
//! the training seed and a configuration echo. Array files hold parameters
//! in canonical order (see [`FlowModel::param_set`] and
//! [`LatentNet::param_set`]); each file's SHA-256 digest is stored in the
//! manifest and verified on load.

use std::collections::HashMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::autodiff::ParamSet;
use crate::dataset::{GridShape, InitMethod, ScaleMode, ScaleParams};
use crate::error::{Error, Result};
use crate::flow::{Activation, CouplingLayer, FlowModel, Mlp};
use crate::latent::{LatentNet, LATENT_LAYERS};

const MANIFEST_NAME: &str = "manifest.txt";
const FORMAT_VERSION: &str = "1";

/// Parameters of both networks at one schedule epoch.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub epoch: usize,
    pub flow_params: ParamSet,
    pub latent_params: ParamSet,
}

/// The ordered snapshots saved at schedule epochs, plus everything needed to
/// reproduce preprocessing at imputation time.
#[derive(Debug, Clone)]
pub struct CheckpointChain {
    pub dim: usize,
    pub hidden_width: usize,
    pub leaky_slope: f64,
    /// Per layer, `true` marks a pass-through index.
    pub partitions: Vec<Vec<bool>>,
    pub scale: ScaleParams,
    pub grid: Option<GridShape>,
    pub init_method: InitMethod,
    pub seed: u64,
    pub snapshots: Vec<Snapshot>,
    /// Resolved training configuration, echoed verbatim into the manifest.
    pub config_echo: Vec<(String, String)>,
}

impl CheckpointChain {
    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    /// Flow model skeleton with the chain's structure and zeroed parameters.
    pub fn flow_skeleton(&self) -> Result<FlowModel> {
        let mut layers = Vec::with_capacity(self.partitions.len());
        for flags in &self.partitions {
            if flags.len() != self.dim {
                return Err(Error::Manifest(format!(
                    "partition length {} does not match dimension {}",
                    flags.len(),
                    self.dim
                )));
            }
            let pass: Vec<usize> = (0..self.dim).filter(|&i| flags[i]).collect();
            let trans: Vec<usize> = (0..self.dim).filter(|&i| !flags[i]).collect();
            let dims = [
                pass.len(),
                self.hidden_width,
                self.hidden_width,
                self.hidden_width,
                trans.len(),
            ];
            let zeros = |act: Activation| -> Result<Mlp> {
                let mut weights = Vec::new();
                let mut biases = Vec::new();
                for pair in dims.windows(2) {
                    weights.push(ndarray::Array2::zeros((pair[0], pair[1])));
                    biases.push(ndarray::Array2::zeros((1, pair[1])));
                }
                Mlp::from_parts(weights, biases, act, self.leaky_slope)
            };
            layers.push(CouplingLayer::new(
                self.dim,
                pass,
                trans,
                zeros(Activation::Tanh)?,
                zeros(Activation::Linear)?,
            )?);
        }
        FlowModel::from_layers(self.dim, self.hidden_width, self.leaky_slope, layers)
    }

    /// Latent network skeleton with zeroed parameters.
    pub fn latent_skeleton(&self) -> Result<LatentNet> {
        let weights = (0..LATENT_LAYERS)
            .map(|_| ndarray::Array2::zeros((self.dim, self.dim)))
            .collect();
        let biases = (0..LATENT_LAYERS)
            .map(|_| ndarray::Array2::zeros((1, self.dim)))
            .collect();
        LatentNet::from_parts(self.dim, weights, biases, self.leaky_slope)
    }

    /// Materialize the models of one snapshot.
    pub fn models_at(&self, index: usize) -> Result<(FlowModel, LatentNet)> {
        let snap = self.snapshots.get(index).ok_or_else(|| {
            Error::InvalidArgument(format!("snapshot index {index} out of range"))
        })?;
        let mut flow = self.flow_skeleton()?;
        flow.set_param_set(&snap.flow_params)?;
        let mut latent = self.latent_skeleton()?;
        latent.set_param_set(&snap.latent_params)?;
        Ok((flow, latent))
    }

    /// Persist the chain into `dir` (created if needed).
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut manifest = String::new();
        let mut push = |k: &str, v: String| {
            manifest.push_str(k);
            manifest.push('=');
            manifest.push_str(&v);
            manifest.push('\n');
        };
        push("version", FORMAT_VERSION.to_string());
        push("dim", self.dim.to_string());
        push("coupling_layers", self.partitions.len().to_string());
        push("hidden_width", self.hidden_width.to_string());
        push("leaky_slope", self.leaky_slope.to_string());
        push("latent_layers", LATENT_LAYERS.to_string());
        for (i, flags) in self.partitions.iter().enumerate() {
            let line: Vec<&str> = flags.iter().map(|&f| if f { "1" } else { "0" }).collect();
            push(&format!("partition.{i}"), line.join(","));
        }
        push(
            "scale.mode",
            match self.scale.mode {
                ScaleMode::Tabular => "tabular".to_string(),
                ScaleMode::Image => "image".to_string(),
            },
        );
        push("scale.min", join_floats(&self.scale.min));
        push("scale.max", join_floats(&self.scale.max));
        if let Some(g) = self.grid {
            push("grid", format!("{},{},{}", g.rows, g.cols, g.channels));
        }
        push("init.method", self.init_method.name().to_string());
        push("seed", self.seed.to_string());
        let epochs: Vec<String> = self.snapshots.iter().map(|s| s.epoch.to_string()).collect();
        push("snapshot_epochs", epochs.join(","));
        for (k, v) in &self.config_echo {
            push(&format!("config.{k}"), v.clone());
        }

        for snap in &self.snapshots {
            for (net, params) in [("flow", &snap.flow_params), ("latent", &snap.latent_params)] {
                let file = format!("snap{:06}_{net}.f64", snap.epoch);
                let bytes = flat_to_bytes(&params.to_flat());
                std::fs::write(dir.join(&file), &bytes)?;
                push(&format!("digest.{file}"), hex_digest(&bytes));
            }
        }
        std::fs::write(dir.join(MANIFEST_NAME), manifest)?;
        Ok(())
    }

    /// Load a chain saved by [`CheckpointChain::save`], verifying every
    /// array file against its recorded digest.
    pub fn load(dir: &Path) -> Result<CheckpointChain> {
        let manifest_path = dir.join(MANIFEST_NAME);
        let text = std::fs::read_to_string(&manifest_path).map_err(|e| {
            Error::Manifest(format!("cannot read `{}`: {e}", manifest_path.display()))
        })?;
        let mut kv: HashMap<String, String> = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Manifest(format!("line {} is not key=value", lineno + 1))
            })?;
            kv.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| -> Result<&String> {
            kv.get(k)
                .ok_or_else(|| Error::Manifest(format!("missing key `{k}`")))
        };
        let parse_usize = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Manifest(format!("key `{k}` is not an integer")))
        };

        let version = get("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Manifest(format!(
                "unsupported format version `{version}`"
            )));
        }
        let dim = parse_usize("dim")?;
        let n_layers = parse_usize("coupling_layers")?;
        let hidden_width = parse_usize("hidden_width")?;
        let leaky_slope: f64 = get("leaky_slope")?
            .parse()
            .map_err(|_| Error::Manifest("bad leaky_slope".to_string()))?;
        let latent_layers = parse_usize("latent_layers")?;
        if latent_layers != LATENT_LAYERS {
            return Err(Error::Manifest(format!(
                "expected {LATENT_LAYERS} latent layers, manifest says {latent_layers}"
            )));
        }

        let mut partitions = Vec::with_capacity(n_layers);
        for i in 0..n_layers {
            let raw = get(&format!("partition.{i}"))?;
            let flags: Vec<bool> = raw
                .split(',')
                .map(|s| match s {
                    "1" => Ok(true),
                    "0" => Ok(false),
                    other => Err(Error::Manifest(format!("bad partition flag `{other}`"))),
                })
                .collect::<Result<_>>()?;
            if flags.len() != dim {
                return Err(Error::Manifest(format!(
                    "partition.{i} has {} flags for dimension {dim}",
                    flags.len()
                )));
            }
            partitions.push(flags);
        }

        let mode = match get("scale.mode")?.as_str() {
            "tabular" => ScaleMode::Tabular,
            "image" => ScaleMode::Image,
            other => return Err(Error::Manifest(format!("bad scale mode `{other}`"))),
        };
        let min = split_floats(get("scale.min")?)?;
        let max = split_floats(get("scale.max")?)?;
        if min.len() != dim || max.len() != dim {
            return Err(Error::Manifest(
                "scale vectors do not match dimension".to_string(),
            ));
        }
        let scale = ScaleParams { mode, min, max };

        let grid = match kv.get("grid") {
            None => None,
            Some(raw) => {
                let parts: Vec<usize> = raw
                    .split(',')
                    .map(|s| {
                        s.parse()
                            .map_err(|_| Error::Manifest("bad grid entry".to_string()))
                    })
                    .collect::<Result<_>>()?;
                if parts.len() != 3 {
                    return Err(Error::Manifest("grid needs rows,cols,channels".to_string()));
                }
                Some(GridShape {
                    rows: parts[0],
                    cols: parts[1],
                    channels: parts[2],
                })
            }
        };

        let init_method = InitMethod::parse(get("init.method")?)?;
        let seed: u64 = get("seed")?
            .parse()
            .map_err(|_| Error::Manifest("bad seed".to_string()))?;
        let epochs: Vec<usize> = {
            let raw = get("snapshot_epochs")?;
            if raw.is_empty() {
                Vec::new()
            } else {
                raw.split(',')
                    .map(|s| {
                        s.parse()
                            .map_err(|_| Error::Manifest("bad snapshot epoch".to_string()))
                    })
                    .collect::<Result<_>>()?
            }
        };

        let mut config_echo: Vec<(String, String)> = kv
            .iter()
            .filter_map(|(k, v)| {
                k.strip_prefix("config.")
                    .map(|name| (name.to_string(), v.clone()))
            })
            .collect();
        config_echo.sort();

        let mut chain = CheckpointChain {
            dim,
            hidden_width,
            leaky_slope,
            partitions,
            scale,
            grid,
            init_method,
            seed,
            snapshots: Vec::new(),
            config_echo,
        };

        let flow_template = chain.flow_skeleton()?.param_set();
        let latent_template = chain.latent_skeleton()?.param_set();
        for &epoch in &epochs {
            let load_net = |net: &str, template: &ParamSet| -> Result<ParamSet> {
                let file = format!("snap{epoch:06}_{net}.f64");
                let bytes = std::fs::read(dir.join(&file)).map_err(|e| {
                    Error::Manifest(format!("cannot read array file `{file}`: {e}"))
                })?;
                let recorded = get(&format!("digest.{file}"))?;
                if hex_digest(&bytes) != *recorded {
                    return Err(Error::DigestMismatch { file });
                }
                let flat = bytes_to_flat(&bytes).ok_or_else(|| {
                    Error::Manifest(format!("array file `{file}` is not a whole number of f64"))
                })?;
                template.from_flat(&flat)
            };
            let flow_params = load_net("flow", &flow_template)?;
            let latent_params = load_net("latent", &latent_template)?;
            chain.snapshots.push(Snapshot {
                epoch,
                flow_params,
                latent_params,
            });
        }
        Ok(chain)
    }
}

fn join_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn split_floats(raw: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .map(|s| {
            s.parse()
                .map_err(|_| Error::Manifest(format!("bad float `{s}`")))
        })
        .collect()
}

fn flat_to_bytes(flat: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(flat.len() * 8);
    for v in flat {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn bytes_to_flat(bytes: &[u8]) -> Option<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return None;
    }
    Some(
        bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
    )
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::RngStream;
    use crate::latent::LatentInit;

    fn sample_chain() -> CheckpointChain {
        let mut rng = RngStream::new(40);
        let flow = FlowModel::init(3, 2, None, &mut rng).unwrap();
        let latent = LatentNet::init(3, LatentInit::IdentitySkip, &mut rng).unwrap();
        CheckpointChain {
            dim: 3,
            hidden_width: flow.hidden_width(),
            leaky_slope: flow.leaky_slope(),
            partitions: flow.layers().iter().map(|l| l.partition_flags(3)).collect(),
            scale: ScaleParams {
                mode: ScaleMode::Tabular,
                min: vec![0.25, -1.0, 3.5],
                max: vec![1.75, 2.0, 3.5],
            },
            grid: None,
            init_method: InitMethod::Marginal,
            seed: 40,
            snapshots: vec![
                Snapshot {
                    epoch: 1,
                    flow_params: flow.param_set(),
                    latent_params: latent.param_set(),
                },
                Snapshot {
                    epoch: 2,
                    flow_params: flow.param_set(),
                    latent_params: latent.param_set(),
                },
            ],
            config_echo: vec![
                ("batch_size".to_string(), "128".to_string()),
                ("lambda".to_string(), "1".to_string()),
            ],
        }
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let chain = sample_chain();
        let dir = tempfile::tempdir().unwrap();
        chain.save(dir.path()).unwrap();
        let loaded = CheckpointChain::load(dir.path()).unwrap();
        assert_eq!(loaded.dim, chain.dim);
        assert_eq!(loaded.partitions, chain.partitions);
        assert_eq!(loaded.scale, chain.scale);
        assert_eq!(loaded.seed, chain.seed);
        assert_eq!(loaded.config_echo, chain.config_echo);
        assert_eq!(loaded.len(), chain.len());
        for (a, b) in loaded.snapshots.iter().zip(chain.snapshots.iter()) {
            assert_eq!(a.epoch, b.epoch);
            let fa = a.flow_params.to_flat();
            let fb = b.flow_params.to_flat();
            assert_eq!(fa.len(), fb.len());
            for (x, y) in fa.iter().zip(fb.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        // Models rebuild and evaluate.
        let (flow, latent) = loaded.models_at(0).unwrap();
        let x = ndarray::Array2::from_elem((2, 3), 0.4);
        let (z, _) = flow.forward(&x).unwrap();
        latent.forward(&z).unwrap();
    }

    #[test]
    fn corrupted_array_file_is_detected() {
        let chain = sample_chain();
        let dir = tempfile::tempdir().unwrap();
        chain.save(dir.path()).unwrap();
        let victim = dir.path().join("snap000001_flow.f64");
        let mut bytes = std::fs::read(&victim).unwrap();
        bytes[0] ^= 0xff;
        std::fs::write(&victim, bytes).unwrap();
        match CheckpointChain::load(dir.path()) {
            Err(Error::DigestMismatch { file }) => {
                assert_eq!(file, "snap000001_flow.f64");
            }
            other => panic!("expected DigestMismatch, got {other:?}"),
        }
    }

    #[test]
    fn missing_manifest_key_is_reported() {
        let chain = sample_chain();
        let dir = tempfile::tempdir().unwrap();
        chain.save(dir.path()).unwrap();
        let path = dir.path().join(MANIFEST_NAME);
        let text = std::fs::read_to_string(&path).unwrap();
        let without: String = text
            .lines()
            .filter(|l| !l.starts_with("scale.min="))
            .map(|l| format!("{l}\n"))
            .collect();
        std::fs::write(&path, without).unwrap();
        assert!(matches!(
            CheckpointChain::load(dir.path()),
            Err(Error::Manifest(_))
        ));
    }

    #[test]
    fn saved_bytes_are_deterministic() {
        let chain = sample_chain();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        chain.save(d1.path()).unwrap();
        chain.save(d2.path()).unwrap();
        let m1 = std::fs::read(d1.path().join(MANIFEST_NAME)).unwrap();
        let m2 = std::fs::read(d2.path().join(MANIFEST_NAME)).unwrap();
        assert_eq!(m1, m2);
    }
}
