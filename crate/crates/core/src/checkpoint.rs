//! Checkpoint container.
//!
//! Layout: the four bytes `DDN1`, a little-endian `u64` manifest length,
//! the UTF-8 manifest, then every array named in the manifest as
//! little-endian `f32` values in manifest order. The manifest is one
//! whitespace-separated record per line:
//!
//! ```text
//! config <key> <value>
//! range <dim> <lo> <hi>
//! path_seed <seed>
//! path <target> <target> ...
//! epochs <n>
//! adam_step <n>
//! tensor <kind> <name> <extent>x<extent>...
//! ```
//!
//! `kind` is `param`, `adam_m` or `adam_v`. Floats in the manifest are
//! written in shortest round-trip form so a load restores them exactly.

use std::fs;
use std::path::Path;

use crate::chain::PermutationPaths;
use crate::error::{DdnError, Result};
use crate::model::{DdnModel, ModelConfig, Variant};
use crate::rng::seeded;
use crate::trainer::AdamState;

pub const MAGIC: &[u8; 4] = b"DDN1";

/// A model with its frozen paths and, optionally, optimizer state.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: DdnModel<f32>,
    pub paths: PermutationPaths,
    pub path_seed: u64,
    pub adam: Option<AdamState<f32>>,
    pub epochs: usize,
}

fn shape_str(shape: &[usize]) -> String {
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let cfg = self.model.config();
        let mut manifest = String::new();
        let mut push = |line: String| {
            manifest.push_str(&line);
            manifest.push('\n');
        };
        push(format!("config input_dim {}", cfg.input_dim));
        push(format!("config target_dim {}", cfg.target_dim));
        push(format!("config bins {}", cfg.bins));
        push(format!("config latent_dim {}", cfg.latent_dim));
        push(format!("config beta {}", cfg.beta));
        push(format!("config variant {}", cfg.variant));
        push(format!("config hidden_width {}", cfg.hidden_width));
        push(format!("config branch_width {}", cfg.branch_width));
        push(format!(
            "config channels {}",
            cfg.channels.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
        ));
        push(format!("config initial_length {}", cfg.initial_length));
        push(format!("config kernel_width {}", cfg.kernel_width));
        push(format!("config upsample_factor {}", cfg.upsample_factor));
        for (d, (lo, hi)) in cfg.ranges.iter().enumerate() {
            push(format!("range {d} {lo} {hi}"));
        }
        push(format!("path_seed {}", self.path_seed));
        for p in self.paths.paths() {
            push(format!("path {}", p.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")));
        }
        push(format!("epochs {}", self.epochs));

        let store = self.model.params();
        let mut arrays: Vec<&[f32]> = Vec::new();
        for (name, t) in store.iter() {
            push(format!("tensor param {name} {}", shape_str(t.shape())));
            arrays.push(t.data());
        }
        if let Some(adam) = &self.adam {
            push(format!("adam_step {}", adam.step));
            for (k, id) in store.trainable_ids().into_iter().enumerate() {
                let shape = shape_str(store.get(id).shape());
                push(format!("tensor adam_m {} {shape}", store.name(id)));
                arrays.push(&adam.first[k]);
                push(format!("tensor adam_v {} {shape}", store.name(id)));
                arrays.push(&adam.second[k]);
            }
        }

        let mut out = Vec::with_capacity(12 + manifest.len() + 4 * arrays.iter().map(|a| a.len()).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(manifest.as_bytes());
        for a in arrays {
            for v in a {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| DdnError::Format(m.to_string());
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("missing DDN1 magic"));
        }
        let len = u64::from_le_bytes(bytes[4..12].try_into().expect("eight bytes")) as usize;
        let manifest = bytes
            .get(12..12 + len)
            .ok_or_else(|| bad("truncated manifest"))
            .and_then(|m| std::str::from_utf8(m).map_err(|_| bad("manifest is not UTF-8")))?;
        let mut payload = &bytes[12 + len..];

        let mut kv = std::collections::BTreeMap::new();
        let mut ranges = Vec::new();
        let mut paths = Vec::new();
        let (mut path_seed, mut epochs, mut adam_step) = (0u64, 0usize, None);
        let mut tensors: Vec<(String, String, Vec<usize>)> = Vec::new();
        for line in manifest.lines() {
            let f: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| s.parse::<u64>().map_err(|_| bad(&format!("bad integer in '{line}'")));
            match f.as_slice() {
                ["config", k, v] => {
                    kv.insert(k.to_string(), v.to_string());
                }
                ["range", _, lo, hi] => {
                    let p = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("bad float in '{line}'")));
                    ranges.push((p(lo)?, p(hi)?));
                }
                ["path_seed", s] => path_seed = num(s)?,
                ["path", rest @ ..] => paths.push(rest.iter().map(|s| num(s).map(|v| v as usize)).collect::<Result<Vec<_>>>()?),
                ["epochs", n] => epochs = num(n)? as usize,
                ["adam_step", n] => adam_step = Some(num(n)?),
                ["tensor", kind, name, shape] => {
                    let dims = shape
                        .split('x')
                        .map(|s| s.parse::<usize>().map_err(|_| bad(&format!("bad shape in '{line}'"))))
                        .collect::<Result<Vec<_>>>()?;
                    tensors.push((kind.to_string(), name.to_string(), dims));
                }
                _ => return Err(bad(&format!("unrecognized manifest line '{line}'"))),
            }
        }

        let get = |k: &str| kv.get(k).ok_or_else(|| bad(&format!("manifest lacks config {k}")));
        let uint = |k: &str| get(k)?.parse::<usize>().map_err(|_| bad(&format!("config {k} is not an integer")));
        let variant: Variant = get("variant")?.parse()?;
        let beta: f64 = get("beta")?.parse().map_err(|_| bad("config beta is not a float"))?;
        let mut cfg = ModelConfig::new(uint("input_dim")?, ranges, variant, beta)?;
        if cfg.target_dim != uint("target_dim")? {
            return Err(bad("range count disagrees with target_dim"));
        }
        cfg.bins = uint("bins")?;
        cfg.latent_dim = uint("latent_dim")?;
        cfg.hidden_width = uint("hidden_width")?;
        cfg.branch_width = uint("branch_width")?;
        cfg.channels = get("channels")?
            .split(',')
            .map(|s| s.parse().map_err(|_| bad("bad channel list")))
            .collect::<Result<_>>()?;
        cfg.initial_length = uint("initial_length")?;
        cfg.kernel_width = uint("kernel_width")?;
        cfg.upsample_factor = uint("upsample_factor")?;
        cfg.validate()?;

        let mut model = DdnModel::<f32>::new(cfg.clone(), &mut seeded(0))?;
        let paths = PermutationPaths::new(cfg.target_dim, paths)?;
        let mut take = |n: usize| -> Result<Vec<f32>> {
            if payload.len() < 4 * n {
                return Err(bad("truncated tensor data"));
            }
            let (head, rest) = payload.split_at(4 * n);
            payload = rest;
            Ok(head.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("four bytes"))).collect())
        };

        let trainable: Vec<String> = {
            let s = model.params();
            s.trainable_ids().into_iter().map(|id| s.name(id).to_string()).collect()
        };
        let mut adam = adam_step.map(|step| AdamState {
            step,
            first: vec![Vec::new(); trainable.len()],
            second: vec![Vec::new(); trainable.len()],
        });
        let mut loaded = 0;
        for (kind, name, shape) in &tensors {
            let n: usize = shape.iter().product();
            let values = take(n)?;
            let store = model.params_mut();
            let id = store
                .find(name)
                .ok_or_else(|| bad(&format!("unknown parameter '{name}'")))?;
            if store.get(id).shape() != shape.as_slice() {
                return Err(bad(&format!("parameter '{name}' has shape {shape:?}, expected {:?}", store.get(id).shape())));
            }
            match kind.as_str() {
                "param" => {
                    store.set_values(id, &values)?;
                    loaded += 1;
                }
                "adam_m" | "adam_v" => {
                    let state = adam.as_mut().ok_or_else(|| bad("optimizer tensors without adam_step"))?;
                    let k = trainable
                        .iter()
                        .position(|t| t == name)
                        .ok_or_else(|| bad(&format!("'{name}' is not trainable")))?;
                    if kind == "adam_m" {
                        state.first[k] = values;
                    } else {
                        state.second[k] = values;
                    }
                }
                other => return Err(bad(&format!("unknown tensor kind '{other}'"))),
            }
        }
        if loaded != model.params().len() {
            return Err(bad(&format!("{loaded} of {} parameters present", model.params().len())));
        }
        if !payload.is_empty() {
            return Err(bad("trailing bytes after tensor data"));
        }
        if let Some(state) = &adam {
            let store = model.params();
            for (k, id) in store.trainable_ids().into_iter().enumerate() {
                let n = store.get(id).len();
                if state.first[k].len() != n || state.second[k].len() != n {
                    return Err(bad(&format!("optimizer state missing for '{}'", store.name(id))));
                }
            }
        }
        Ok(Self {
            model,
            paths,
            path_seed,
            adam,
            epochs,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
