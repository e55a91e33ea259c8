//! Parameter layout, initialization and checkpoints.

use std::fs;
use std::path::Path;

use asttf_tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{ModelConfig, ModelError};

#[derive(Debug, Clone, Copy)]
pub struct BranchParams {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    /// Relative-distance tables, `2K + 1` rows of `d_head`.
    pub r_key: usize,
    pub r_query: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct EncLayerParams {
    pub anc: BranchParams,
    pub sib: BranchParams,
    /// `2 d_model -> d_model`, no bias.
    pub w_o: usize,
    pub ln1: (usize, usize),
    pub ff1: (usize, usize),
    pub ff2: (usize, usize),
    pub ln2: (usize, usize),
}

#[derive(Debug, Clone, Copy)]
pub struct AttnParams {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct DecLayerParams {
    pub self_attn: AttnParams,
    pub ln1: (usize, usize),
    pub cross_attn: AttnParams,
    pub ln2: (usize, usize),
    pub ff1: (usize, usize),
    pub ff2: (usize, usize),
    pub ln3: (usize, usize),
}

/// Indices into the flat parameter list; derived from the config alone.
#[derive(Debug, Clone)]
pub struct Layout {
    pub code_emb: usize,
    pub summary_emb: usize,
    pub dec_pos: usize,
    pub enc: Vec<EncLayerParams>,
    pub dec: Vec<DecLayerParams>,
    pub out: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Xavier,
    Uniform(f64),
    Zeros,
    Ones,
}

#[derive(Debug, Clone)]
struct Spec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

struct Builder {
    d: usize,
    specs: Vec<Spec>,
}

impl Builder {
    fn add(&mut self, name: String, shape: &[usize], init: Init) -> usize {
        self.specs.push(Spec {
            name,
            shape: shape.to_vec(),
            init,
        });
        self.specs.len() - 1
    }

    fn matrix(&mut self, name: String, rows: usize, cols: usize) -> usize {
        self.add(name, &[rows, cols], Init::Xavier)
    }

    fn norm(&mut self, prefix: &str) -> (usize, usize) {
        let d = self.d;
        (
            self.add(format!("{prefix}.gain"), &[d], Init::Ones),
            self.add(format!("{prefix}.bias"), &[d], Init::Zeros),
        )
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) -> (usize, usize) {
        (
            self.matrix(format!("{prefix}.weight"), fan_in, fan_out),
            self.add(format!("{prefix}.bias"), &[fan_out], Init::Zeros),
        )
    }

    fn branch(&mut self, prefix: &str, k: u32, dh: usize) -> BranchParams {
        let d = self.d;
        let rows = 2 * k as usize + 1;
        BranchParams {
            wq: self.matrix(format!("{prefix}.query"), d, d),
            wk: self.matrix(format!("{prefix}.key"), d, d),
            wv: self.matrix(format!("{prefix}.value"), d, d),
            r_key: self.add(format!("{prefix}.rel_key"), &[rows, dh], Init::Uniform(0.02)),
            r_query: self.add(format!("{prefix}.rel_query"), &[rows, dh], Init::Uniform(0.02)),
        }
    }

    fn attn(&mut self, prefix: &str) -> AttnParams {
        let d = self.d;
        AttnParams {
            wq: self.matrix(format!("{prefix}.query"), d, d),
            wk: self.matrix(format!("{prefix}.key"), d, d),
            wv: self.matrix(format!("{prefix}.value"), d, d),
            wo: self.matrix(format!("{prefix}.output"), d, d),
        }
    }
}

fn plan(c: &ModelConfig) -> (Layout, Vec<Spec>) {
    let (d, dh) = (c.d_model, c.d_head());
    let mut b = Builder { d, specs: Vec::new() };
    let code_emb = b.matrix("code_embedding".into(), c.code_vocab, d);
    let summary_emb = b.matrix("summary_embedding".into(), c.summary_vocab, d);
    let dec_pos = b.matrix("decoder_positions".into(), c.max_summary_len, d);
    let enc = (0..c.enc_layers)
        .map(|l| {
            let p = format!("encoder.{l}");
            EncLayerParams {
                anc: b.branch(&format!("{p}.anc"), c.k_anc, dh),
                sib: b.branch(&format!("{p}.sib"), c.k_sib, dh),
                w_o: b.matrix(format!("{p}.output"), 2 * d, d),
                ln1: b.norm(&format!("{p}.attn_norm")),
                ff1: b.linear(&format!("{p}.ff1"), d, c.d_ff),
                ff2: b.linear(&format!("{p}.ff2"), c.d_ff, d),
                ln2: b.norm(&format!("{p}.ff_norm")),
            }
        })
        .collect();
    let dec = (0..c.dec_layers)
        .map(|l| {
            let p = format!("decoder.{l}");
            DecLayerParams {
                self_attn: b.attn(&format!("{p}.self")),
                ln1: b.norm(&format!("{p}.self_norm")),
                cross_attn: b.attn(&format!("{p}.cross")),
                ln2: b.norm(&format!("{p}.cross_norm")),
                ff1: b.linear(&format!("{p}.ff1"), d, c.d_ff),
                ff2: b.linear(&format!("{p}.ff2"), c.d_ff, d),
                ln3: b.norm(&format!("{p}.ff_norm")),
            }
        })
        .collect();
    let out = b.linear("output", d, c.summary_vocab);
    let layout = Layout {
        code_emb,
        summary_emb,
        dec_pos,
        enc,
        dec,
        out,
    };
    (layout, b.specs)
}

/// Config, named parameter tensors and their layout.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub layout: Layout,
    names: Vec<String>,
    pub params: Vec<Tensor>,
}

impl Model {
    /// Scaled uniform init (`±sqrt(6 / (fan_in + fan_out))`), relative
    /// tables `±0.02`, norms at identity, biases zero.
    pub fn init(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let (layout, specs) = plan(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = specs
            .iter()
            .map(|s| {
                let n: usize = s.shape.iter().product();
                let data = match s.init {
                    Init::Xavier => {
                        let a = (6.0 / (s.shape[0] + s.shape[1]) as f64).sqrt();
                        (0..n).map(|_| rng.gen_range(-a..a)).collect()
                    }
                    Init::Uniform(a) => (0..n).map(|_| rng.gen_range(-a..a)).collect(),
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                };
                Tensor::new(&s.shape, data).expect("sized from shape")
            })
            .collect();
        Ok(Self {
            config,
            layout,
            names: specs.into_iter().map(|s| s.name).collect(),
            params,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Puts every parameter on `tape`, trainable or frozen.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| if trainable { tape.param(p.clone()) } else { tape.constant(p.clone()) })
            .collect()
    }

    /// Writes `config.json`, `manifest.json` and `params.bin` (little-endian
    /// f32) into `dir`, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        let (files, _) = self.checkpoint_files();
        fs::create_dir_all(dir)?;
        for (name, bytes) in files {
            fs::write(dir.join(name), bytes)?;
        }
        Ok(())
    }

    /// Checkpoint contents as `(file name, bytes)` without touching disk.
    pub fn checkpoint_files(&self) -> (Vec<(&'static str, Vec<u8>)>, Manifest) {
        let mut blob = Vec::with_capacity(self.param_count() * 4);
        let mut entries = Vec::with_capacity(self.params.len());
        for (name, p) in self.names.iter().zip(&self.params) {
            entries.push(ManifestEntry {
                name: name.clone(),
                shape: p.shape().to_vec(),
                offset: blob.len(),
            });
            blob.extend(p.to_f32_le_bytes());
        }
        let manifest = Manifest { tensors: entries };
        let config = serde_json::to_vec_pretty(&self.config).expect("config serializes");
        let man = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        (
            vec![("config.json", config), ("manifest.json", man), ("params.bin", blob)],
            manifest,
        )
    }

    pub fn load(dir: &Path) -> Result<Self, ModelError> {
        let config: ModelConfig = serde_json::from_slice(&fs::read(dir.join("config.json"))?)?;
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
        let blob = fs::read(dir.join("params.bin"))?;
        let mut model = Self::init(config)?;
        if manifest.tensors.len() != model.params.len() {
            return Err(ModelError::Checkpoint(format!(
                "manifest lists {} tensors, config implies {}",
                manifest.tensors.len(),
                model.params.len()
            )));
        }
        for (k, e) in manifest.tensors.iter().enumerate() {
            if e.name != model.names[k] || e.shape != model.params[k].shape() {
                return Err(ModelError::Checkpoint(format!("tensor {k} is {} {:?}, expected {} {:?}", e.name, e.shape, model.names[k], model.params[k].shape())));
            }
            let len = model.params[k].len() * 4;
            let bytes = blob
                .get(e.offset..e.offset + len)
                .ok_or_else(|| ModelError::Checkpoint(format!("params.bin too short for {}", e.name)))?;
            model.params[k] = Tensor::from_f32_le_bytes(&e.shape, bytes)?;
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into `params.bin`.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tensors: Vec<ManifestEntry>,
}
