//! Differentiable rule-learning network: stacked softmax-weighted dense rule
//! layers with a fixed bias, closed by a fuzzy disjunction over the final
//! layer's rule nodes.

use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::{softmax_rows, softmax_vjp, Matrix};
use crate::nn::RngState;

/// Trainable raw weights of the rule layers plus the fixed bias d.
#[derive(Debug, Clone)]
pub struct RuleNetParams {
    pub raw: Vec<Matrix>,
    pub bias: f64,
}

/// Raw-weight boost applied to each row's anchor column at init.
pub const ANCHOR_BOOST: f64 = 5.0;

impl RuleNetParams {
    /// Random raw weights over the width chain `n -> hidden... -> m`.
    ///
    /// Each row starts sharply concentrated on one random column. A
    /// near-uniform softmax row would give M x close to the mean of a simplex
    /// block, which sits below the fixed bias d, so every rectifier would
    /// start dead and no gradient could ever flow; single-atom rows keep the
    /// nodes live from the first step.
    pub fn new_random(widths: &[usize], bias: f64, rng: &mut RngState) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::invalid_argument(
                "rule net needs at least input and output widths",
            ));
        }
        if !(0.0..1.0).contains(&bias) || bias <= 0.0 {
            return Err(Error::invalid_argument("rule net bias must be in (0,1)"));
        }
        let mut raw = Vec::with_capacity(widths.len() - 1);
        for win in widths.windows(2) {
            let mut m = Matrix::zeros(win[1], win[0]);
            for v in m.data.iter_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
            for r in 0..m.rows {
                let anchor = rng.random_range(0..m.cols);
                m.row_mut(r)[anchor] += ANCHOR_BOOST;
            }
            raw.push(m);
        }
        Ok(RuleNetParams { raw, bias })
    }

    /// Moves the first layer's anchors onto the given atom columns, rotating
    /// through them row by row. Anchoring rows on atoms that are actually
    /// true in positive inputs keeps at least one live path per node from the
    /// start; deterministic so it leaves the caller's generator untouched.
    pub fn re_anchor_first_layer(&mut self, atoms: &[usize]) {
        if atoms.is_empty() {
            return;
        }
        let m = &mut self.raw[0];
        for r in 0..m.rows {
            let row = m.row_mut(r);
            let current = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            row[current] -= ANCHOR_BOOST;
            row[atoms[r % atoms.len()]] += ANCHOR_BOOST;
        }
    }

    pub fn input_size(&self) -> usize {
        self.raw.first().map(|m| m.cols).unwrap_or(0)
    }

    /// Number of rule nodes in the final layer.
    pub fn rule_count(&self) -> usize {
        self.raw.last().map(|m| m.rows).unwrap_or(0)
    }
}

/// One rule layer on already-softmaxed weights:
/// y = relu(M x - d) / (1 - d).
pub fn rule_layer_activated(m: &Matrix, x: &[f64], d: f64) -> Result<Vec<f64>> {
    let mut y = m.matvec(x)?;
    for v in y.iter_mut() {
        *v = ((*v - d).max(0.0)) / (1.0 - d);
    }
    Ok(y)
}

/// One rule layer on raw weights; softmax is applied per row first.
pub fn rule_layer(raw: &Matrix, x: &[f64], d: f64) -> Result<Vec<f64>> {
    let m = softmax_rows(raw)?;
    rule_layer_activated(&m, x, d)
}

/// Complement-product disjunction: 1 - prod(1 - v_i).
pub fn fuzzy_or(v: &[f64]) -> f64 {
    1.0 - v.iter().map(|x| 1.0 - x).product::<f64>()
}

/// d(fuzzy_or)/dv_i = prod_{j != i} (1 - v_j), via prefix/suffix products so a
/// zero factor does not poison the rest.
fn fuzzy_or_grad(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut prefix = vec![1.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] * (1.0 - v[i]);
    }
    let mut suffix = vec![1.0; n + 1];
    for i in (0..n).rev() {
        suffix[i] = suffix[i + 1] * (1.0 - v[i]);
    }
    (0..n).map(|i| prefix[i] * suffix[i + 1]).collect()
}

/// Intermediate values of one rule-net forward pass.
#[derive(Debug, Clone)]
pub struct RuleNetTrace {
    /// Softmax-activated weight matrices, one per layer.
    pub activated: Vec<Matrix>,
    /// Layer inputs/outputs: x[0] is the interpretation vector, x[i] the
    /// output of layer i.
    pub x: Vec<Vec<f64>>,
    /// Pre-rectifier values M x - d per layer.
    pub pre: Vec<Vec<f64>>,
    pub y_hat: f64,
}

/// Forward pass keeping the trace for the backward pass.
pub fn rulenet_forward_trace(params: &RuleNetParams, v: &[f64]) -> Result<RuleNetTrace> {
    if v.len() != params.input_size() {
        return Err(Error::invalid_argument(format!(
            "rulenet_forward: expected input of length {}, got {}",
            params.input_size(),
            v.len()
        )));
    }
    let mut activated = Vec::with_capacity(params.raw.len());
    let mut xs = vec![v.to_vec()];
    let mut pres = Vec::with_capacity(params.raw.len());
    for raw in &params.raw {
        let m = softmax_rows(raw)?;
        let mut pre = m.matvec(xs.last().unwrap())?;
        for p in pre.iter_mut() {
            *p -= params.bias;
        }
        let out: Vec<f64> = pre.iter().map(|&p| p.max(0.0) / (1.0 - params.bias)).collect();
        activated.push(m);
        pres.push(pre);
        xs.push(out);
    }
    let y_hat = fuzzy_or(xs.last().unwrap());
    Ok(RuleNetTrace {
        activated,
        x: xs,
        pre: pres,
        y_hat,
    })
}

/// Head-atom truth degree in [0,1] for one interpretation vector.
pub fn rulenet_forward(params: &RuleNetParams, v: &[f64]) -> Result<f64> {
    Ok(rulenet_forward_trace(params, v)?.y_hat)
}

/// Forward pass over explicitly given row-stochastic matrices, bypassing the
/// softmax; the symbolic-emulation checks feed exact program rows through it.
pub fn forward_activated(mats: &[Matrix], v: &[f64], d: f64) -> Result<f64> {
    let mut cur = v.to_vec();
    for m in mats {
        cur = rule_layer_activated(m, &cur, d)?;
    }
    Ok(fuzzy_or(&cur))
}

/// Gradients of `dy * y_hat` with respect to every raw weight matrix and the
/// input vector. ReLU at the kink (M x = d) takes subgradient 0.
pub fn rulenet_vjp(
    params: &RuleNetParams,
    trace: &RuleNetTrace,
    dy: f64,
) -> Result<(Vec<Matrix>, Vec<f64>)> {
    let mut raw_grads: Vec<Matrix> = params
        .raw
        .iter()
        .map(|m| Matrix::zeros(m.rows, m.cols))
        .collect();
    let last = trace.x.last().unwrap();
    let mut dx: Vec<f64> = fuzzy_or_grad(last).iter().map(|g| g * dy).collect();
    for i in (0..params.raw.len()).rev() {
        let m = &trace.activated[i];
        let input = &trace.x[i];
        let scale = 1.0 / (1.0 - params.bias);
        let dpre: Vec<f64> = dx
            .iter()
            .zip(&trace.pre[i])
            .map(|(u, &p)| if p > 0.0 { u * scale } else { 0.0 })
            .collect();
        // gradient on the activated matrix rows, then back through softmax
        for r in 0..m.rows {
            if dpre[r] != 0.0 {
                let dm_row: Vec<f64> = input.iter().map(|x| dpre[r] * x).collect();
                let draw = softmax_vjp(m.row(r), &dm_row);
                for (g, d) in raw_grads[i].row_mut(r).iter_mut().zip(&draw) {
                    *g += d;
                }
            }
        }
        dx = m.matvec_t(&dpre)?;
    }
    Ok((raw_grads, dx))
}

/// Program tensor M_P in [0,1]^(m x n): the product of all softmax-activated
/// layer weights, composed so it maps interpretation atoms to rule rows.
#[derive(Debug, Clone)]
pub struct ProgramTensor {
    pub matrix: Matrix,
}

pub fn program_tensor(params: &RuleNetParams) -> Result<ProgramTensor> {
    let mut product: Option<Matrix> = None;
    for raw in &params.raw {
        let m = softmax_rows(raw)?;
        product = Some(match product {
            None => m,
            Some(p) => m.matmul(&p)?,
        });
    }
    let matrix = product.ok_or_else(|| Error::invalid_argument("empty rule net"))?;
    Ok(ProgramTensor { matrix })
}
