//! Orchestration: autoencoder pretraining, joint optimization of the
//! reconstruction + clustering + rule objective, evaluation of both the
//! neural and the extracted-rule classifiers, and the hard-k-means baseline.

use std::time::Instant;

use rand::seq::SliceRandom;

use crate::data::{binarize, Dataset, LabeledSequence};
use crate::error::{Error, Result};
use crate::logic::{classify_with_rules, extract_rules, rule_metrics, Rule};
use crate::matrix::Matrix;
use crate::nn::{
    loss_eval, Activation, Adam, DenseNet, LossKind, NetGrads, RngState,
};
use crate::rulenet::{
    program_tensor, rulenet_forward, rulenet_forward_trace, rulenet_vjp, RuleNetParams,
};
use crate::symbolize::{
    cluster_loss, discretize_flat, hard_assign, kmeans_inertia, lloyd_kmeans, slide_windows,
    squared_distance, symbolize_trace, symbolize_vjp, ClusterBank, SymbolizerConfig, Window,
};

/// Hidden width of the window autoencoder.
const AE_HIDDEN: usize = 32;
/// Window batch size for autoencoder pretraining.
const AE_BATCH: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub symbolizer: SymbolizerConfig,
    /// Hidden widths of the rule net between the atom layer and the rule layer.
    pub rulenet_hidden: Vec<usize>,
    /// Number of rule nodes m in the final dense layer.
    pub rules: usize,
    /// Fixed bias d of every rule layer.
    pub rule_bias: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub learning_rate: f64,
    pub pretrain_epochs: usize,
    pub joint_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub pretrain: bool,
    pub tau_sweep: Vec<f64>,
    /// Keep only rules whose training precision reaches this value.
    pub precision_filter: f64,
    /// Baseline: epochs between hard re-clustering passes.
    pub baseline_refresh: usize,
    /// Baseline: k-means restarts per re-clustering, best inertia wins.
    pub baseline_restarts: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            symbolizer: SymbolizerConfig::default(),
            rulenet_hidden: vec![16],
            rules: 4,
            rule_bias: 0.5,
            lambda1: 1.0,
            lambda2: 1.0,
            learning_rate: 1e-3,
            pretrain_epochs: 50,
            joint_epochs: 100,
            batch_size: 16,
            seed: 0,
            pretrain: true,
            tau_sweep: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            precision_filter: 0.8,
            baseline_refresh: 10,
            baseline_restarts: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.symbolizer.validate()?;
        if self.rules == 0 {
            return Err(Error::invalid_argument("config: rules must be at least 1"));
        }
        if !(self.rule_bias > 0.0 && self.rule_bias < 1.0) {
            return Err(Error::invalid_argument("config: rule bias must be in (0,1)"));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::invalid_argument("config: lambdas must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid_argument("config: batch size must be positive"));
        }
        if self.tau_sweep.is_empty()
            || self
                .tau_sweep
                .iter()
                .any(|t| !(*t > 0.0 && *t < 1.0))
        {
            return Err(Error::invalid_argument(
                "config: tau sweep values must lie in (0,1)",
            ));
        }
        Ok(())
    }

    /// Width chain of the rule net for a given interpretation size.
    fn rulenet_widths(&self) -> Vec<usize> {
        let n = self.symbolizer.clusters * self.symbolizer.regions;
        let mut widths = vec![n];
        widths.extend_from_slice(&self.rulenet_hidden);
        widths.push(self.rules);
        widths
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub recon: f64,
    pub cluster: f64,
    pub rule: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub encoder: DenseNet,
    pub decoder: DenseNet,
    pub bank: ClusterBank,
    pub rulenet: RuleNetParams,
    pub config: TrainConfig,
    pub majority_class: usize,
    /// Entry 0 is the objective before any update; entry i is the running
    /// mean loss of epoch i.
    pub loss_history: Vec<EpochLoss>,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub dataset: String,
    pub accuracy_neural: f64,
    pub accuracy_rules: f64,
    pub rules: Vec<Rule>,
    pub wall_clock_seconds: f64,
    pub epoch_losses: Vec<EpochLoss>,
    pub majority_class: usize,
}

pub struct Pretrained {
    pub encoder: DenseNet,
    pub decoder: DenseNet,
    pub bank: ClusterBank,
    pub recon_history: Vec<f64>,
}

fn all_train_windows(ds: &Dataset, l: usize) -> Result<Vec<Window>> {
    let mut windows = Vec::new();
    for seq in &ds.train {
        windows.extend(slide_windows(&seq.values, l)?);
    }
    Ok(windows)
}

fn build_autoencoder(cfg: &SymbolizerConfig, rng: &mut RngState) -> Result<(DenseNet, DenseNet)> {
    let encoder = DenseNet::new_glorot(
        &[cfg.window_len, AE_HIDDEN, cfg.embed_dim],
        &[Activation::Relu, Activation::Linear],
        rng,
    )?;
    let decoder = DenseNet::new_glorot(
        &[cfg.embed_dim, AE_HIDDEN, cfg.window_len],
        &[Activation::Relu, Activation::Linear],
        rng,
    )?;
    Ok((encoder, decoder))
}

fn update_net(adam: &mut Adam, prefix: &str, net: &mut DenseNet, grads: &NetGrads) -> Result<()> {
    for (i, (layer, (gw, gb))) in net.layers.iter_mut().zip(&grads.layers).enumerate() {
        adam.update(&format!("{prefix}.{i}.w"), &mut layer.weights.data, &gw.data)?;
        adam.update(&format!("{prefix}.{i}.b"), &mut layer.bias, gb)?;
    }
    Ok(())
}

/// Trains the window autoencoder on every training window, then seeds the
/// cluster bank with Lloyd k-means over the resulting embeddings. With
/// pretraining disabled both steps are skipped and the bank is the embeddings
/// of K randomly chosen windows.
pub fn pretrain(ds: &Dataset, cfg: &TrainConfig, rng: &mut RngState) -> Result<Pretrained> {
    cfg.validate()?;
    ds.validate()?;
    let sym = &cfg.symbolizer;
    let (mut encoder, mut decoder) = build_autoencoder(sym, rng)?;
    let windows = all_train_windows(ds, sym.window_len)?;
    if windows.len() < sym.clusters {
        return Err(Error::InvalidDataset(format!(
            "{}: {} windows cannot seed {} clusters",
            ds.name,
            windows.len(),
            sym.clusters
        )));
    }
    let mut recon_history = Vec::new();
    if cfg.pretrain {
        let mut adam = Adam::new(cfg.learning_rate);
        let mut order: Vec<usize> = (0..windows.len()).collect();
        for _ in 0..cfg.pretrain_epochs {
            order.shuffle(rng);
            let mut epoch_recon = 0.0;
            for chunk in order.chunks(AE_BATCH) {
                let mut enc_g = NetGrads::zeros_like(&encoder);
                let mut dec_g = NetGrads::zeros_like(&decoder);
                for &wi in chunk {
                    let w = &windows[wi];
                    let et = encoder.forward(&w.values)?;
                    let dt = decoder.forward(et.output())?;
                    let recon = squared_distance(&w.values, dt.output());
                    epoch_recon += recon;
                    let upstream: Vec<f64> = dt
                        .output()
                        .iter()
                        .zip(&w.values)
                        .map(|(o, t)| 2.0 * (o - t))
                        .collect();
                    let (dg, dz) = decoder.backward(&dt, &upstream)?;
                    dec_g.accumulate(&dg);
                    let (eg, _) = encoder.backward(&et, &dz)?;
                    enc_g.accumulate(&eg);
                }
                let scale = 1.0 / chunk.len() as f64;
                enc_g.scale(scale);
                dec_g.scale(scale);
                adam.begin_step();
                update_net(&mut adam, "enc", &mut encoder, &enc_g)?;
                update_net(&mut adam, "dec", &mut decoder, &dec_g)?;
            }
            recon_history.push(epoch_recon / windows.len() as f64);
        }
        let embeddings: Vec<Vec<f64>> = windows
            .iter()
            .map(|w| Ok(encoder.forward(&w.values)?.output().to_vec()))
            .collect::<Result<_>>()?;
        let bank = lloyd_kmeans(&embeddings, sym.clusters, rng, 100)?;
        Ok(Pretrained {
            encoder,
            decoder,
            bank,
            recon_history,
        })
    } else {
        let mut idx: Vec<usize> = (0..windows.len()).collect();
        idx.shuffle(rng);
        let centers: Vec<Vec<f64>> = idx[..sym.clusters]
            .iter()
            .map(|&i| Ok(encoder.forward(&windows[i].values)?.output().to_vec()))
            .collect::<Result<_>>()?;
        Ok(Pretrained {
            encoder,
            decoder,
            bank: ClusterBank { centers },
            recon_history,
        })
    }
}

struct ParamGrads {
    enc: NetGrads,
    dec: NetGrads,
    bank: Vec<Vec<f64>>,
    rule: Vec<Matrix>,
}

impl ParamGrads {
    fn zeros(encoder: &DenseNet, decoder: &DenseNet, bank: &ClusterBank, net: &RuleNetParams) -> Self {
        ParamGrads {
            enc: NetGrads::zeros_like(encoder),
            dec: NetGrads::zeros_like(decoder),
            bank: vec![vec![0.0; bank.dim()]; bank.k()],
            rule: net.raw.iter().map(|m| Matrix::zeros(m.rows, m.cols)).collect(),
        }
    }

    fn scale(&mut self, s: f64) {
        self.enc.scale(s);
        self.dec.scale(s);
        for c in self.bank.iter_mut() {
            for v in c.iter_mut() {
                *v *= s;
            }
        }
        for m in self.rule.iter_mut() {
            for v in m.data.iter_mut() {
                *v *= s;
            }
        }
    }
}

/// Loss terms of one input under the current parameters.
#[derive(Debug, Clone, Copy)]
struct InputTerms {
    recon: f64,
    cluster: f64,
    rule: f64,
}

/// Forward + backward of one sequence. The three objective terms are
/// returned unweighted; gradients are accumulated already weighted by the
/// lambdas.
fn accumulate_input(
    encoder: &DenseNet,
    decoder: &DenseNet,
    bank: &ClusterBank,
    rulenet: &RuleNetParams,
    cfg: &TrainConfig,
    seq: &LabeledSequence,
    grads: &mut ParamGrads,
) -> Result<InputTerms> {
    let trace = symbolize_trace(&seq.values, encoder, bank, &cfg.symbolizer)?;
    let mut recon = 0.0;
    let mut dz_extra: Vec<Vec<f64>> = Vec::with_capacity(trace.windows.len());
    for (w, z) in trace.windows.iter().zip(&trace.embeddings) {
        let dt = decoder.forward(z)?;
        recon += squared_distance(&w.values, dt.output());
        let upstream: Vec<f64> = dt
            .output()
            .iter()
            .zip(&w.values)
            .map(|(o, t)| 2.0 * (o - t))
            .collect();
        let (dg, dz) = decoder.backward(&dt, &upstream)?;
        grads.dec.accumulate(&dg);
        dz_extra.push(dz);
    }
    let cluster = cluster_loss(&trace);
    let rt = rulenet_forward_trace(rulenet, &trace.vector.values)?;
    let target = seq.label as f64;
    let (rule, dy) = loss_eval(LossKind::BinaryCrossEntropy, &[rt.y_hat], &[target])?;
    let (rg, dv) = rulenet_vjp(rulenet, &rt, cfg.lambda2 * dy[0])?;
    for (acc, g) in grads.rule.iter_mut().zip(&rg) {
        for (a, b) in acc.data.iter_mut().zip(&g.data) {
            *a += b;
        }
    }
    let (eg, bg) = symbolize_vjp(
        &trace,
        encoder,
        bank,
        cfg.symbolizer.alpha,
        &dv,
        cfg.lambda1,
        Some(&dz_extra),
    )?;
    grads.enc.accumulate(&eg);
    for (acc, g) in grads.bank.iter_mut().zip(&bg) {
        for (a, b) in acc.iter_mut().zip(g) {
            *a += b;
        }
    }
    Ok(InputTerms {
        recon,
        cluster,
        rule,
    })
}

/// The three loss terms of one input, without touching any gradient.
pub fn input_losses(model: &TrainedModel, seq: &LabeledSequence) -> Result<(f64, f64, f64)> {
    let trace = symbolize_trace(&seq.values, &model.encoder, &model.bank, &model.config.symbolizer)?;
    let mut recon = 0.0;
    for (w, z) in trace.windows.iter().zip(&trace.embeddings) {
        let dt = model.decoder.forward(z)?;
        recon += squared_distance(&w.values, dt.output());
    }
    let cluster = cluster_loss(&trace);
    let y_hat = rulenet_forward(&model.rulenet, &trace.vector.values)?;
    let (rule, _) = loss_eval(
        LossKind::BinaryCrossEntropy,
        &[y_hat],
        &[seq.label as f64],
    )?;
    Ok((recon, cluster, rule))
}

/// Mean combined objective over the training split.
pub fn mean_objective(model: &TrainedModel, ds: &Dataset) -> Result<f64> {
    let cfg = &model.config;
    let mut total = 0.0;
    for seq in &ds.train {
        let (recon, cluster, rule) = input_losses(model, seq)?;
        total += recon + cfg.lambda1 * cluster + cfg.lambda2 * rule;
    }
    Ok(total / ds.train.len() as f64)
}

fn mean_epoch_loss(sums: &InputTerms, n: usize, cfg: &TrainConfig) -> EpochLoss {
    let n = n as f64;
    let recon = sums.recon / n;
    let cluster = sums.cluster / n;
    let rule = sums.rule / n;
    EpochLoss {
        recon,
        cluster,
        rule,
        total: recon + cfg.lambda1 * cluster + cfg.lambda2 * rule,
    }
}

/// Joint minimization of reconstruction + lambda1 * clustering +
/// lambda2 * rule loss over encoder, decoder, bank, and rule-net weights.
///
/// Draw order from `rng`: pretraining, rule-net init, then one shuffle per
/// epoch; the whole trajectory is deterministic given (dataset, config, seed).
pub fn train_joint(ds: &Dataset, cfg: &TrainConfig, rng: &mut RngState) -> Result<TrainedModel> {
    cfg.validate()?;
    ds.validate()?;
    if ds.num_classes != 2 {
        return Err(Error::InvalidDataset(format!(
            "{}: joint training needs binary labels, got {} classes",
            ds.name, ds.num_classes
        )));
    }
    let pre = pretrain(ds, cfg, rng)?;
    let mut encoder = pre.encoder;
    let mut decoder = pre.decoder;
    let mut bank = pre.bank;
    let mut rulenet = RuleNetParams::new_random(&cfg.rulenet_widths(), cfg.rule_bias, rng)?;
    // anchor first-layer rows on atoms that hold in positive inputs so the
    // rectifiers start live (deterministic, consumes no rng draws)
    let n_atoms = cfg.symbolizer.clusters * cfg.symbolizer.regions;
    let mut seen = vec![false; n_atoms];
    for seq in ds.train.iter().filter(|s| s.label == 1) {
        let trace = symbolize_trace(&seq.values, &encoder, &bank, &cfg.symbolizer)?;
        for (flag, &v) in seen.iter_mut().zip(&trace.vector.values) {
            if v >= 0.5 {
                *flag = true;
            }
        }
    }
    let high_atoms: Vec<usize> = seen
        .iter()
        .enumerate()
        .filter(|(_, &s)| s)
        .map(|(i, _)| i)
        .collect();
    rulenet.re_anchor_first_layer(&high_atoms);

    let model_snapshot = |encoder: &DenseNet,
                              decoder: &DenseNet,
                              bank: &ClusterBank,
                              rulenet: &RuleNetParams,
                              history: Vec<EpochLoss>| TrainedModel {
        encoder: encoder.clone(),
        decoder: decoder.clone(),
        bank: bank.clone(),
        rulenet: rulenet.clone(),
        config: cfg.clone(),
        majority_class: ds.majority_class(),
        loss_history: history,
    };

    // clean objective before any update
    let init_model = model_snapshot(&encoder, &decoder, &bank, &rulenet, Vec::new());
    let mut init_sums = InputTerms {
        recon: 0.0,
        cluster: 0.0,
        rule: 0.0,
    };
    for seq in &ds.train {
        let (r, c, l) = input_losses(&init_model, seq)?;
        init_sums.recon += r;
        init_sums.cluster += c;
        init_sums.rule += l;
    }
    let mut history = vec![mean_epoch_loss(&init_sums, ds.train.len(), cfg)];

    let mut adam = Adam::new(cfg.learning_rate);
    let mut order: Vec<usize> = (0..ds.train.len()).collect();
    for epoch in 0..cfg.joint_epochs {
        order.shuffle(rng);
        let mut sums = InputTerms {
            recon: 0.0,
            cluster: 0.0,
            rule: 0.0,
        };
        for chunk in order.chunks(cfg.batch_size) {
            let mut grads = ParamGrads::zeros(&encoder, &decoder, &bank, &rulenet);
            for &i in chunk {
                let terms = accumulate_input(
                    &encoder, &decoder, &bank, &rulenet, cfg, &ds.train[i], &mut grads,
                )?;
                sums.recon += terms.recon;
                sums.cluster += terms.cluster;
                sums.rule += terms.rule;
            }
            grads.scale(1.0 / chunk.len() as f64);
            adam.begin_step();
            update_net(&mut adam, "enc", &mut encoder, &grads.enc)?;
            update_net(&mut adam, "dec", &mut decoder, &grads.dec)?;
            for (i, (center, g)) in bank.centers.iter_mut().zip(&grads.bank).enumerate() {
                adam.update(&format!("bank.{i}"), center, g)?;
            }
            for (i, (raw, g)) in rulenet.raw.iter_mut().zip(&grads.rule).enumerate() {
                adam.update(&format!("rule.{i}"), &mut raw.data, &g.data)?;
            }
        }
        let epoch_loss = mean_epoch_loss(&sums, ds.train.len(), cfg);
        if !epoch_loss.total.is_finite() {
            return Err(Error::TrainingDiverged(format!(
                "non-finite loss at epoch {epoch}"
            )));
        }
        history.push(epoch_loss);
    }
    Ok(model_snapshot(&encoder, &decoder, &bank, &rulenet, history))
}

/// Positive iff the rule net output reaches 1/2; the boundary counts as
/// positive.
pub fn classify_neural(y_hat: f64) -> usize {
    usize::from(y_hat >= 0.5)
}

/// Rule-net score of one raw sequence under a trained model.
pub fn predict_score(model: &TrainedModel, x: &[f64]) -> Result<f64> {
    let trace = symbolize_trace(x, &model.encoder, &model.bank, &model.config.symbolizer)?;
    rulenet_forward(&model.rulenet, &trace.vector.values)
}

/// Discretized interpretation (one-hot per region) of every sequence, paired
/// with its label.
pub fn discretize_split(model: &TrainedModel, seqs: &[LabeledSequence]) -> Result<Vec<(Vec<f64>, usize)>> {
    seqs.iter()
        .map(|seq| {
            let trace =
                symbolize_trace(&seq.values, &model.encoder, &model.bank, &model.config.symbolizer)?;
            Ok((discretize_flat(&trace.region_matrix), seq.label))
        })
        .collect()
}

fn score_and_filter_rules(
    mut candidates: Vec<Rule>,
    train_disc: &[(Vec<f64>, usize)],
    clusters: usize,
    precision_filter: f64,
) -> Result<Vec<Rule>> {
    let mut kept = Vec::new();
    for rule in candidates.iter_mut() {
        let m = rule_metrics(rule, train_disc, clusters)?;
        let Some(precision) = m.precision else {
            continue; // never fires on the training split
        };
        rule.precision = Some(precision);
        rule.recall = Some(m.recall);
        if precision >= precision_filter {
            kept.push(rule.clone());
        }
    }
    kept.sort_by(|a, b| {
        b.precision
            .partial_cmp(&a.precision)
            .unwrap()
            .then(b.recall.partial_cmp(&a.recall).unwrap())
            .then(a.body.cmp(&b.body))
    });
    Ok(kept)
}

/// Sweeps the configured taus over the program tensor, scores every distinct
/// body on the discretized training split, and keeps the high-precision rules
/// sorted by (precision, recall).
pub fn extract_scored_rules(
    model: &TrainedModel,
    train_disc: &[(Vec<f64>, usize)],
    target_class: usize,
) -> Result<Vec<Rule>> {
    let mp = program_tensor(&model.rulenet)?;
    let k = model.config.symbolizer.clusters;
    let mut seen = std::collections::BTreeSet::new();
    let mut candidates = Vec::new();
    for &tau in &model.config.tau_sweep {
        for rule in extract_rules(&mp, tau, target_class, k)? {
            if seen.insert(rule.body.clone()) {
                candidates.push(rule);
            }
        }
    }
    score_and_filter_rules(candidates, train_disc, k, model.config.precision_filter)
}

/// Accuracy of both classifiers on the test split: the neural score
/// thresholded at 1/2 and the extracted rules with majority fallback.
pub fn evaluate(model: &TrainedModel, ds: &Dataset) -> Result<Report> {
    if ds.test.is_empty() {
        return Err(Error::InvalidDataset(format!(
            "{}: empty test split",
            ds.name
        )));
    }
    let mut correct_neural = 0usize;
    for seq in &ds.test {
        let y_hat = predict_score(model, &seq.values)?;
        if classify_neural(y_hat) == seq.label {
            correct_neural += 1;
        }
    }
    let train_disc = discretize_split(model, &ds.train)?;
    let rules = extract_scored_rules(model, &train_disc, 1)?;
    let class_counts = ds.class_counts();
    let k = model.config.symbolizer.clusters;
    let mut correct_rules = 0usize;
    for seq in &ds.test {
        let trace =
            symbolize_trace(&seq.values, &model.encoder, &model.bank, &model.config.symbolizer)?;
        let d = discretize_flat(&trace.region_matrix);
        let pred = classify_with_rules(&rules, &d, k, &class_counts, model.majority_class)?;
        if pred == seq.label {
            correct_rules += 1;
        }
    }
    Ok(Report {
        dataset: ds.name.clone(),
        accuracy_neural: correct_neural as f64 / ds.test.len() as f64,
        accuracy_rules: correct_rules as f64 / ds.test.len() as f64,
        rules,
        wall_clock_seconds: 0.0,
        epoch_losses: model.loss_history.clone(),
        majority_class: model.majority_class,
    })
}

/// Trains and evaluates, reporting wall-clock for the whole run.
pub fn run_experiment(
    ds: &Dataset,
    cfg: &TrainConfig,
    rng: &mut RngState,
) -> Result<(TrainedModel, Report)> {
    let start = Instant::now();
    let model = train_joint(ds, cfg, rng)?;
    let mut report = evaluate(&model, ds)?;
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok((model, report))
}

/// Interpretation vector and its discretization under hard nearest-center
/// assignments (the non-differentiable pipeline).
pub fn hard_interpretation(
    x: &[f64],
    encoder: &DenseNet,
    bank: &ClusterBank,
    cfg: &SymbolizerConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let windows = slide_windows(x, cfg.window_len)?;
    let mut counts = Matrix::zeros(cfg.clusters, cfg.regions);
    for w in &windows {
        let z = encoder.forward(&w.values)?;
        let c = hard_assign(z.output(), bank);
        let j = crate::symbolize::assign_region(w.start, x.len(), cfg.regions);
        counts.set(c, j, counts.get(c, j) + 1.0);
    }
    let mut v = vec![0.0; cfg.clusters * cfg.regions];
    let mut disc = vec![0.0; cfg.clusters * cfg.regions];
    let mut col = vec![0.0; cfg.clusters];
    let mut soft = vec![0.0; cfg.clusters];
    for j in 0..cfg.regions {
        for i in 0..cfg.clusters {
            col[i] = counts.get(i, j);
        }
        crate::matrix::softmax_into(&col, &mut soft);
        let mut best = 0;
        for i in 0..cfg.clusters {
            v[j * cfg.clusters + i] = soft[i];
            if col[i] > col[best] {
                best = i;
            }
        }
        disc[j * cfg.clusters + best] = 1.0;
    }
    Ok((v, disc))
}

/// Non-differentiable baseline: the pretrained autoencoder is frozen, window
/// assignments come from Lloyd k-means (best of `baseline_restarts`,
/// re-clustered every `baseline_refresh` epochs), and only the rule net
/// trains by gradient.
pub fn run_hard_baseline(
    ds: &Dataset,
    cfg: &TrainConfig,
    rng: &mut RngState,
) -> Result<(TrainedModel, Report)> {
    cfg.validate()?;
    ds.validate()?;
    if ds.num_classes != 2 {
        return Err(Error::InvalidDataset(format!(
            "{}: baseline needs binary labels",
            ds.name
        )));
    }
    let start = Instant::now();
    let sym = &cfg.symbolizer;
    let pre = pretrain(ds, cfg, rng)?;
    let encoder = pre.encoder;
    let decoder = pre.decoder;
    let mut bank = pre.bank;
    let mut rulenet = RuleNetParams::new_random(&cfg.rulenet_widths(), cfg.rule_bias, rng)?;
    let mut adam = Adam::new(cfg.learning_rate);

    let embeddings: Vec<Vec<f64>> = all_train_windows(ds, sym.window_len)?
        .iter()
        .map(|w| Ok(encoder.forward(&w.values)?.output().to_vec()))
        .collect::<Result<_>>()?;

    let recluster = |rng: &mut RngState| -> Result<ClusterBank> {
        let mut best: Option<(f64, ClusterBank)> = None;
        for _ in 0..cfg.baseline_restarts.max(1) {
            let candidate = lloyd_kmeans(&embeddings, sym.clusters, rng, 100)?;
            let inertia = kmeans_inertia(&embeddings, &candidate);
            if best.as_ref().map(|(b, _)| inertia < *b).unwrap_or(true) {
                best = Some((inertia, candidate));
            }
        }
        Ok(best.unwrap().1)
    };

    let build_vectors = |encoder: &DenseNet, bank: &ClusterBank| -> Result<Vec<Vec<f64>>> {
        ds.train
            .iter()
            .map(|seq| Ok(hard_interpretation(&seq.values, encoder, bank, sym)?.0))
            .collect()
    };

    bank = recluster(rng)?;
    let mut vectors = build_vectors(&encoder, &bank)?;
    let mut seen = vec![false; sym.clusters * sym.regions];
    for (v, seq) in vectors.iter().zip(&ds.train) {
        if seq.label == 1 {
            for (flag, &e) in seen.iter_mut().zip(v) {
                if e >= 0.5 {
                    *flag = true;
                }
            }
        }
    }
    let high_atoms: Vec<usize> = seen
        .iter()
        .enumerate()
        .filter(|(_, &s)| s)
        .map(|(i, _)| i)
        .collect();
    rulenet.re_anchor_first_layer(&high_atoms);

    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..ds.train.len()).collect();
    let refresh = cfg.baseline_refresh.max(1);
    for epoch in 0..cfg.joint_epochs {
        if epoch > 0 && epoch % refresh == 0 {
            bank = recluster(rng)?;
            vectors = build_vectors(&encoder, &bank)?;
        }
        order.shuffle(rng);
        let mut rule_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut grads: Vec<Matrix> = rulenet
                .raw
                .iter()
                .map(|m| Matrix::zeros(m.rows, m.cols))
                .collect();
            for &i in chunk {
                let rt = rulenet_forward_trace(&rulenet, &vectors[i])?;
                let (loss, dy) = loss_eval(
                    LossKind::BinaryCrossEntropy,
                    &[rt.y_hat],
                    &[ds.train[i].label as f64],
                )?;
                rule_sum += loss;
                let (rg, _) = rulenet_vjp(&rulenet, &rt, cfg.lambda2 * dy[0])?;
                for (acc, g) in grads.iter_mut().zip(&rg) {
                    for (a, b) in acc.data.iter_mut().zip(&g.data) {
                        *a += b;
                    }
                }
            }
            let scale = 1.0 / chunk.len() as f64;
            adam.begin_step();
            for (i, (raw, g)) in rulenet.raw.iter_mut().zip(&grads).enumerate() {
                let mut scaled = g.data.clone();
                for v in scaled.iter_mut() {
                    *v *= scale;
                }
                adam.update(&format!("rule.{i}"), &mut raw.data, &scaled)?;
            }
        }
        let rule = rule_sum / ds.train.len() as f64;
        if !rule.is_finite() {
            return Err(Error::TrainingDiverged(format!(
                "baseline: non-finite loss at epoch {epoch}"
            )));
        }
        history.push(EpochLoss {
            recon: 0.0,
            cluster: 0.0,
            rule,
            total: rule,
        });
    }

    let model = TrainedModel {
        encoder,
        decoder,
        bank,
        rulenet,
        config: cfg.clone(),
        majority_class: ds.majority_class(),
        loss_history: history,
    };

    // evaluation under the same hard pipeline
    let train_disc: Vec<(Vec<f64>, usize)> = ds
        .train
        .iter()
        .map(|seq| {
            let (_, d) = hard_interpretation(&seq.values, &model.encoder, &model.bank, sym)?;
            Ok((d, seq.label))
        })
        .collect::<Result<_>>()?;
    let rules = extract_scored_rules(&model, &train_disc, 1)?;
    let class_counts = ds.class_counts();
    let mut correct_neural = 0usize;
    let mut correct_rules = 0usize;
    for seq in &ds.test {
        let (v, d) = hard_interpretation(&seq.values, &model.encoder, &model.bank, sym)?;
        let y_hat = rulenet_forward(&model.rulenet, &v)?;
        if classify_neural(y_hat) == seq.label {
            correct_neural += 1;
        }
        let pred = classify_with_rules(&rules, &d, sym.clusters, &class_counts, model.majority_class)?;
        if pred == seq.label {
            correct_rules += 1;
        }
    }
    let report = Report {
        dataset: ds.name.clone(),
        accuracy_neural: correct_neural as f64 / ds.test.len() as f64,
        accuracy_rules: correct_rules as f64 / ds.test.len() as f64,
        rules,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        epoch_losses: model.loss_history.clone(),
        majority_class: model.majority_class,
    };
    Ok((model, report))
}

/// One-vs-rest stack for multi-class data: one binary model per target class,
/// each trained on its binarized view with a seed derived from the base seed.
pub struct OneVsRestModel {
    pub models: Vec<TrainedModel>,
}

pub fn train_one_vs_rest(ds: &Dataset, cfg: &TrainConfig) -> Result<OneVsRestModel> {
    let mut models = Vec::with_capacity(ds.num_classes);
    for class in 0..ds.num_classes {
        let bds = binarize(ds, class)?;
        let mut class_cfg = cfg.clone();
        class_cfg.seed = cfg.seed.wrapping_add(class as u64);
        let mut rng = crate::nn::rng_from_seed(class_cfg.seed);
        models.push(train_joint(&bds, &class_cfg, &mut rng)?);
    }
    Ok(OneVsRestModel { models })
}

/// Argmax over the per-class neural scores; rules from every class merged and
/// arbitrated by training precision.
pub fn evaluate_one_vs_rest(ovr: &OneVsRestModel, ds: &Dataset) -> Result<Report> {
    if ovr.models.len() != ds.num_classes {
        return Err(Error::invalid_argument(
            "evaluate_one_vs_rest: one model per class required",
        ));
    }
    let mut correct_neural = 0usize;
    for seq in &ds.test {
        let mut best = (0usize, f64::NEG_INFINITY);
        for (class, model) in ovr.models.iter().enumerate() {
            let y = predict_score(model, &seq.values)?;
            if y > best.1 {
                best = (class, y);
            }
        }
        if best.0 == seq.label {
            correct_neural += 1;
        }
    }
    // merge per-class rules, each scored on its own binarized training view
    let mut rules = Vec::new();
    for (class, model) in ovr.models.iter().enumerate() {
        let bds = binarize(ds, class)?;
        let train_disc = discretize_split(model, &bds.train)?;
        for mut rule in extract_scored_rules(model, &train_disc, 1)? {
            rule.head_class = class;
            rules.push(rule);
        }
    }
    let class_counts = ds.class_counts();
    let majority = ds.majority_class();
    let mut correct_rules = 0usize;
    for seq in &ds.test {
        // each class model discretizes with its own bank; arbitrate the
        // firing rules across classes by precision
        let mut best: Option<(f64, usize, usize)> = None;
        for (class, model) in ovr.models.iter().enumerate() {
            let trace = symbolize_trace(
                &seq.values,
                &model.encoder,
                &model.bank,
                &model.config.symbolizer,
            )?;
            let d = discretize_flat(&trace.region_matrix);
            let k = model.config.symbolizer.clusters;
            let class_rules: Vec<Rule> = rules
                .iter()
                .filter(|r| r.head_class == class)
                .cloned()
                .collect();
            for rule in &class_rules {
                if crate::logic::rule_satisfied(rule, &d, k)? {
                    let p = rule.precision.unwrap_or(0.0);
                    let freq = class_counts[class];
                    let cand = (p, freq, class);
                    best = Some(match best {
                        None => cand,
                        Some(cur)
                            if cand.0 > cur.0
                                || (cand.0 == cur.0 && cand.1 > cur.1)
                                || (cand.0 == cur.0 && cand.1 == cur.1 && cand.2 < cur.2) =>
                        {
                            cand
                        }
                        Some(cur) => cur,
                    });
                }
            }
        }
        let pred = best.map(|(_, _, c)| c).unwrap_or(majority);
        if pred == seq.label {
            correct_rules += 1;
        }
    }
    Ok(Report {
        dataset: ds.name.clone(),
        accuracy_neural: correct_neural as f64 / ds.test.len() as f64,
        accuracy_rules: correct_rules as f64 / ds.test.len() as f64,
        rules,
        wall_clock_seconds: 0.0,
        epoch_losses: Vec::new(),
        majority_class: majority,
    })
}
