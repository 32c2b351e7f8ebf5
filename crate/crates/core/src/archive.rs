//! Versioned binary model archive: little-endian 64-bit floats, dimensions
//! before payload for every matrix, bit-exact round trips.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{Activation, DenseLayer, DenseNet};
use crate::rulenet::RuleNetParams;
use crate::symbolize::{ClusterBank, SymbolizerConfig};
use crate::train::{EpochLoss, TrainConfig, TrainedModel};

const MAGIC: &[u8; 4] = b"SQRM";
const VERSION: u32 = 1;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, vs: &[f64]) {
        self.u64(vs.len() as u64);
        for v in vs {
            self.f64(*v);
        }
    }

    fn matrix(&mut self, m: &Matrix) {
        self.u64(m.rows as u64);
        self.u64(m.cols as u64);
        for v in &m.data {
            self.f64(*v);
        }
    }

    fn net(&mut self, net: &DenseNet) {
        self.u64(net.layers.len() as u64);
        for layer in &net.layers {
            self.u8(match layer.activation {
                Activation::Linear => 0,
                Activation::Relu => 1,
                Activation::Sigmoid => 2,
            });
            self.matrix(&layer.weights);
            self.f64s(&layer.bias);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, at: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.at..self.at + n)
            .ok_or_else(|| Error::Format("model archive is truncated".into()))?;
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Format("length field overflows usize".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.usize()?;
        if n > self.bytes.len() / 8 {
            return Err(Error::Format("vector length exceeds archive size".into()));
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }

    fn matrix(&mut self) -> Result<Matrix> {
        let rows = self.usize()?;
        let cols = self.usize()?;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format("matrix dimensions overflow".into()))?;
        if n > self.bytes.len() / 8 {
            return Err(Error::Format("matrix payload exceeds archive size".into()));
        }
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(self.f64()?);
        }
        Ok(Matrix { rows, cols, data })
    }

    fn net(&mut self) -> Result<DenseNet> {
        let n = self.usize()?;
        let mut layers = Vec::with_capacity(n.min(64));
        for _ in 0..n {
            let activation = match self.u8()? {
                0 => Activation::Linear,
                1 => Activation::Relu,
                2 => Activation::Sigmoid,
                other => return Err(Error::Format(format!("unknown activation tag {other}"))),
            };
            let weights = self.matrix()?;
            let bias = self.f64s()?;
            layers.push(DenseLayer {
                weights,
                bias,
                activation,
            });
        }
        Ok(DenseNet { layers })
    }

    fn done(&self) -> Result<()> {
        if self.at != self.bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after model payload",
                self.bytes.len() - self.at
            )));
        }
        Ok(())
    }
}

pub fn encode_model(model: &TrainedModel) -> Vec<u8> {
    let mut w = Writer::new();
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    let cfg = &model.config;
    w.u64(cfg.symbolizer.window_len as u64);
    w.u64(cfg.symbolizer.regions as u64);
    w.u64(cfg.symbolizer.clusters as u64);
    w.u64(cfg.symbolizer.embed_dim as u64);
    w.f64(cfg.symbolizer.alpha);
    w.u64(cfg.rulenet_hidden.len() as u64);
    for h in &cfg.rulenet_hidden {
        w.u64(*h as u64);
    }
    w.u64(cfg.rules as u64);
    w.f64(cfg.rule_bias);
    w.f64(cfg.lambda1);
    w.f64(cfg.lambda2);
    w.f64(cfg.learning_rate);
    w.u64(cfg.pretrain_epochs as u64);
    w.u64(cfg.joint_epochs as u64);
    w.u64(cfg.batch_size as u64);
    w.u64(cfg.seed);
    w.u8(cfg.pretrain as u8);
    w.f64s(&cfg.tau_sweep);
    w.f64(cfg.precision_filter);
    w.u64(cfg.baseline_refresh as u64);
    w.u64(cfg.baseline_restarts as u64);
    w.net(&model.encoder);
    w.net(&model.decoder);
    w.u64(model.bank.centers.len() as u64);
    w.u64(model.bank.dim() as u64);
    for c in &model.bank.centers {
        for v in c {
            w.f64(*v);
        }
    }
    w.u64(model.rulenet.raw.len() as u64);
    for m in &model.rulenet.raw {
        w.matrix(m);
    }
    w.f64(model.rulenet.bias);
    w.u64(model.majority_class as u64);
    w.u64(model.loss_history.len() as u64);
    for e in &model.loss_history {
        w.f64(e.recon);
        w.f64(e.cluster);
        w.f64(e.rule);
        w.f64(e.total);
    }
    w.buf
}

pub fn decode_model(bytes: &[u8]) -> Result<TrainedModel> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a model archive (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported model archive version {version}, expected {VERSION}"
        )));
    }
    let symbolizer = SymbolizerConfig {
        window_len: r.usize()?,
        regions: r.usize()?,
        clusters: r.usize()?,
        embed_dim: r.usize()?,
        alpha: r.f64()?,
    };
    let nh = r.usize()?;
    let mut rulenet_hidden = Vec::with_capacity(nh.min(64));
    for _ in 0..nh {
        rulenet_hidden.push(r.usize()?);
    }
    let rules = r.usize()?;
    let rule_bias = r.f64()?;
    let lambda1 = r.f64()?;
    let lambda2 = r.f64()?;
    let learning_rate = r.f64()?;
    let pretrain_epochs = r.usize()?;
    let joint_epochs = r.usize()?;
    let batch_size = r.usize()?;
    let seed = r.u64()?;
    let pretrain = r.u8()? != 0;
    let tau_sweep = r.f64s()?;
    let precision_filter = r.f64()?;
    let baseline_refresh = r.usize()?;
    let baseline_restarts = r.usize()?;
    let config = TrainConfig {
        symbolizer,
        rulenet_hidden,
        rules,
        rule_bias,
        lambda1,
        lambda2,
        learning_rate,
        pretrain_epochs,
        joint_epochs,
        batch_size,
        seed,
        pretrain,
        tau_sweep,
        precision_filter,
        baseline_refresh,
        baseline_restarts,
    };
    let encoder = r.net()?;
    let decoder = r.net()?;
    let k = r.usize()?;
    let dim = r.usize()?;
    if k.saturating_mul(dim) > bytes.len() / 8 {
        return Err(Error::Format("bank payload exceeds archive size".into()));
    }
    let mut centers = Vec::with_capacity(k);
    for _ in 0..k {
        let mut c = Vec::with_capacity(dim);
        for _ in 0..dim {
            c.push(r.f64()?);
        }
        centers.push(c);
    }
    let nr = r.usize()?;
    let mut raw = Vec::with_capacity(nr.min(64));
    for _ in 0..nr {
        raw.push(r.matrix()?);
    }
    let bias = r.f64()?;
    let majority_class = r.usize()?;
    let ne = r.usize()?;
    if ne > bytes.len() / 32 {
        return Err(Error::Format("loss history exceeds archive size".into()));
    }
    let mut loss_history = Vec::with_capacity(ne);
    for _ in 0..ne {
        loss_history.push(EpochLoss {
            recon: r.f64()?,
            cluster: r.f64()?,
            rule: r.f64()?,
            total: r.f64()?,
        });
    }
    r.done()?;
    Ok(TrainedModel {
        encoder,
        decoder,
        bank: ClusterBank { centers },
        rulenet: RuleNetParams { raw, bias },
        config,
        majority_class,
        loss_history,
    })
}

pub fn save_model(model: &TrainedModel, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let bytes = fs::read(path)?;
    decode_model(&bytes)
}
