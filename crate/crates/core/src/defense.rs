//! Adversarial-input discriminator and directory integrity manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::autodiff::{Graph, Tensor, Var};
use crate::dataio::Checkpoint;
use crate::error::{Error, Result};
use crate::metrics::{confusion, ConfusionReport};
use crate::nn::{dropout, permutation, Adam, CausalConv, Linear, Optimizer, ParamSet};

const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorConfig {
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub dropout: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub input_length: usize,
    pub seed: u64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            conv_channels: vec![16, 32, 16],
            kernel: 5,
            dropout: 0.2,
            lr: 1e-4,
            weight_decay: 1e-5,
            batch_size: 32,
            epochs: 200,
            input_length: 300,
            seed: 0,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Contract(m));
        if self.conv_channels.len() != 3 || self.conv_channels.contains(&0) {
            return fail(format!("expected three positive conv widths, got {:?}", self.conv_channels));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.kernel == 0 || self.batch_size == 0 {
            return fail("kernel and batch size must be positive".into());
        }
        if self.pooled_length() == 0 {
            return fail(format!("input length {} is too short for two poolings", self.input_length));
        }
        Ok(())
    }

    /// Sequence length after the two max pools.
    pub fn pooled_length(&self) -> usize {
        self.input_length / 4
    }
}

/// `(x - mean) / (std + 1e-8)` with the population std.
pub fn standardize(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    x.iter().map(|v| (v - mean) / (std + STD_FLOOR)).collect()
}

/// Three causal convolutions with ReLU, max pooling between them, and a
/// linear head producing one logit.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    pub params: ParamSet,
    convs: Vec<CausalConv>,
    head: Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefenseEpoch {
    pub epoch: usize,
    pub loss: f64,
    /// Percent, measured on training batches as they were seen.
    pub train_accuracy: f64,
}

/// Numerically stable binary cross-entropy on logits, averaged.
pub fn bce_with_logits<'g>(logits: Var<'g>, labels: Var<'g>) -> Result<Var<'g>> {
    let soft = logits.abs().neg().exp().shift(1.0).ln()?;
    Ok(logits.relu().sub(labels.mul(logits)?)?.add(soft)?.mean())
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        let mut c_in = 1;
        let mut convs = Vec::new();
        for (i, &c) in config.conv_channels.iter().enumerate() {
            convs.push(CausalConv::new(&mut params, &format!("conv{i}"), c_in, c, config.kernel, 1, &mut rng));
            c_in = c;
        }
        let head = Linear::new(&mut params, "head", c_in * config.pooled_length(), 1, &mut rng);
        Ok(Self { config, params, convs, head })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let cfg = ck
            .architecture
            .get("discriminator")
            .cloned()
            .ok_or_else(|| Error::Corrupt("checkpoint does not hold a discriminator".into()))?;
        let cfg: DiscriminatorConfig =
            serde_json::from_value(cfg).map_err(|e| Error::Corrupt(format!("discriminator config: {e}")))?;
        let mut model = Self::new(cfg)?;
        model.params.load_named(&ck.tensors)?;
        Ok(model)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint { architecture: json!({ "discriminator": self.config }), meta: json!({}), tensors: self.params.named() }
    }

    /// Logits `[B]` for standardized inputs `x: [B, L]`. Dropout is active
    /// only when `rng` is given.
    fn logits<'g>(&self, vars: &[Var<'g>], x: Var<'g>, mut rng: Option<&mut ChaCha8Rng>) -> Result<Var<'g>> {
        let b = x.shape()[0];
        let mut h = x.reshape(&[b, 1, self.config.input_length])?;
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(vars, h)?.relu();
            if i + 1 < self.convs.len() {
                h = h.maxpool1d(2, 2)?;
            }
            if let Some(r) = rng.as_deref_mut() {
                h = dropout(h, self.config.dropout, r)?;
            }
        }
        let shape = h.shape();
        let flat = h.reshape(&[b, shape[1] * shape[2]])?;
        self.head.forward(vars, flat)?.reshape(&[b])
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.input_length {
            return Err(Error::Contract(format!(
                "discriminator expects {} days, got {}",
                self.config.input_length,
                x.len()
            )));
        }
        Ok(())
    }

    /// Probability that each series was adversarially altered.
    pub fn predict_proba(&self, inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
        const CHUNK: usize = 64;
        let l = self.config.input_length;
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(CHUNK) {
            let mut data = Vec::with_capacity(chunk.len() * l);
            for x in chunk {
                self.check_input(x)?;
                data.extend(standardize(x));
            }
            let g = Graph::new();
            let vars = self.params.bind_frozen(&g);
            let x = g.constant(Tensor::new(vec![chunk.len(), l], data)?);
            out.extend(self.logits(&vars, x, None)?.sigmoid().data());
        }
        Ok(out)
    }

    pub fn classify(&self, series: &[f64]) -> Result<f64> {
        self.check_input(series)?;
        Ok(self.predict_proba(&[series.to_vec()])?[0])
    }

    /// Confusion metrics with "attacked" as the positive class, threshold 0.5.
    pub fn evaluate(&self, real: &[Vec<f64>], attacked: &[Vec<f64>]) -> Result<ConfusionReport> {
        let inputs: Vec<Vec<f64>> = real.iter().chain(attacked).cloned().collect();
        let labels: Vec<bool> = (0..inputs.len()).map(|i| i >= real.len()).collect();
        let preds: Vec<bool> = self.predict_proba(&inputs)?.into_iter().map(|p| p >= 0.5).collect();
        confusion(&labels, &preds)
    }
}

/// Train a fresh discriminator on real (label 0) and attacked (label 1)
/// series.
pub fn train_discriminator(
    real: &[Vec<f64>],
    attacked: &[Vec<f64>],
    config: DiscriminatorConfig,
) -> Result<(Discriminator, Vec<DefenseEpoch>)> {
    if real.is_empty() || attacked.is_empty() {
        return Err(Error::Contract("both classes need at least one series".into()));
    }
    let (lo, hi) = (real.len().min(attacked.len()), real.len().max(attacked.len()));
    if hi > 10 * lo {
        log::warn!("class imbalance {hi}:{lo} exceeds 10:1");
    }
    let mut model = Discriminator::new(config)?;
    let cfg = model.config.clone();
    let mut inputs = Vec::with_capacity(real.len() + attacked.len());
    for x in real.iter().chain(attacked) {
        model.check_input(x)?;
        inputs.push(standardize(x));
    }
    let labels: Vec<f64> = (0..inputs.len()).map(|i| if i >= real.len() { 1.0 } else { 0.0 }).collect();
    let mut opt = Adam::new(cfg.lr, 0.9, 0.999, cfg.weight_decay);
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        let order = permutation(inputs.len(), &mut rng);
        let (mut total, mut correct) = (0.0, 0usize);
        for (bi, ids) in order.chunks(cfg.batch_size).enumerate() {
            let data: Vec<f64> = ids.iter().flat_map(|&i| inputs[i].iter().copied()).collect();
            let y: Vec<f64> = ids.iter().map(|&i| labels[i]).collect();
            let g = Graph::new();
            let vars = model.params.bind(&g);
            let x = g.constant(Tensor::new(vec![ids.len(), cfg.input_length], data)?);
            let logits = model.logits(&vars, x, Some(&mut rng))?;
            let loss = bce_with_logits(logits, g.constant(Tensor::vector(y.clone())))?;
            let lv = loss.item();
            if !lv.is_finite() {
                return Err(Error::Numerical(format!("discriminator loss {lv} at epoch {}, batch {bi}", epoch + 1)));
            }
            correct += logits.data().iter().zip(&y).filter(|(z, y)| (**z >= 0.0) == (**y == 1.0)).count();
            g.backward(loss)?;
            opt.step(&mut model.params, &ParamSet::grads(&vars)?)?;
            total += lv * ids.len() as f64;
        }
        let entry = DefenseEpoch {
            epoch: epoch + 1,
            loss: total / inputs.len() as f64,
            train_accuracy: correct as f64 / inputs.len() as f64 * 100.0,
        };
        log::debug!("discriminator epoch {} loss {:.6} acc {:.2}", entry.epoch, entry.loss, entry.train_accuracy);
        curve.push(entry);
    }
    Ok((model, curve))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Sorted `(relative path, SHA-256)` pairs plus a digest over all entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntegrityManifest {
    pub entries: Vec<(String, String)>,
    pub root_digest: String,
}

impl IntegrityManifest {
    fn from_entries(mut entries: Vec<(String, String)>) -> Self {
        entries.sort();
        let root_digest = hex(&Sha256::digest(Self::entry_lines(&entries).as_bytes()));
        Self { entries, root_digest }
    }

    fn entry_lines(entries: &[(String, String)]) -> String {
        entries.iter().map(|(p, d)| format!("{p}\t{d}\n")).collect()
    }

    /// `path<TAB>digest` lines followed by `root<TAB>digest`.
    pub fn to_text(&self) -> String {
        format!("{}root\t{}\n", Self::entry_lines(&self.entries), self.root_digest)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut root = None;
        for (i, line) in text.lines().enumerate() {
            if root.is_some() {
                return Err(Error::Parse { line: i + 1, detail: "content after the root line".into() });
            }
            let (path, digest) = line
                .split_once('\t')
                .ok_or_else(|| Error::Parse { line: i + 1, detail: "expected `path<TAB>digest`".into() })?;
            if digest.len() != 64 || !digest.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(Error::Parse { line: i + 1, detail: format!("bad digest `{digest}`") });
            }
            if path == "root" {
                root = Some(digest.to_string());
            } else {
                entries.push((path.to_string(), digest.to_string()));
            }
        }
        let root = root.ok_or_else(|| Error::Corrupt("manifest has no root line".into()))?;
        if entries.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Corrupt("manifest paths are not sorted and unique".into()));
        }
        let m = Self::from_entries(entries);
        if m.root_digest != root {
            return Err(Error::Corrupt("manifest root digest does not match its entries".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// Hash every regular file under `dir`.
pub fn build_manifest(dir: &Path) -> Result<IntegrityManifest> {
    let mut entries = Vec::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(dir).to_path_buf();
            let io = e.into_io_error().unwrap_or_else(|| std::io::Error::other("directory walk failed"));
            Error::io(path, io)
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let bytes = std::fs::read(entry.path()).map_err(|e| Error::io(entry.path(), e))?;
        let rel = entry.path().strip_prefix(dir).expect("walk stays under root");
        let rel: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
        entries.push((rel.join("/"), hex(&Sha256::digest(&bytes))));
    }
    Ok(IntegrityManifest::from_entries(entries))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub added: Vec<String>,
    pub removed: Vec<String>,
    pub modified: Vec<String>,
}

impl Verdict {
    pub fn is_pass(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty() && self.modified.is_empty()
    }
}

pub fn verify_manifest(dir: &Path, manifest: &IntegrityManifest) -> Result<Verdict> {
    let current = build_manifest(dir)?;
    let expected: BTreeMap<&str, &str> = manifest.entries.iter().map(|(p, d)| (p.as_str(), d.as_str())).collect();
    let found: BTreeMap<&str, &str> = current.entries.iter().map(|(p, d)| (p.as_str(), d.as_str())).collect();
    let mut v = Verdict::default();
    for (p, d) in &found {
        match expected.get(p) {
            None => v.added.push(p.to_string()),
            Some(e) if e != d => v.modified.push(p.to_string()),
            _ => {}
        }
    }
    v.removed = expected.keys().filter(|p| !found.contains_key(*p)).map(|p| p.to_string()).collect();
    Ok(v)
}
