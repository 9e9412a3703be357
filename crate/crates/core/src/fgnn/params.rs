use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::layers::HeadVars;
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{GruVars, Tape, Tensor, Var};

pub const EMBEDDING: &str = "embedding";
pub const OUTPUT: &str = "output.weight";
const GRU_WEIGHTS: [&str; 6] = ["w_ir", "w_iz", "w_in", "w_hr", "w_hz", "w_hn"];
const GRU_BIASES: [&str; 6] = ["b_ir", "b_iz", "b_in", "b_hr", "b_hz", "b_hn"];

/// Names and shapes of every learned tensor, in canonical order.
pub fn param_layout(config: &ModelConfig, num_items: usize) -> Vec<(String, Vec<usize>)> {
    let d = config.dim;
    let mut out = vec![(EMBEDDING.to_string(), vec![num_items, d])];
    for l in 0..config.layers {
        for k in 0..config.heads {
            let dh = config.head_dim(l, k);
            out.push((format!("wgat.{l}.{k}.weight"), vec![dh, d]));
            out.push((format!("wgat.{l}.{k}.att"), vec![2 * dh + 1]));
        }
    }
    for (i, w) in GRU_WEIGHTS.iter().enumerate() {
        let cols = if i < 3 { 2 * d } else { d };
        out.push((format!("readout.gru.{w}"), vec![d, cols]));
    }
    for b in GRU_BIASES {
        out.push((format!("readout.gru.{b}"), vec![d]));
    }
    out.push((OUTPUT.to_string(), vec![d, 2 * d]));
    out
}

fn is_gru_weight(name: &str) -> bool {
    name.strip_prefix("readout.gru.")
        .is_some_and(|rest| GRU_WEIGHTS.contains(&rest))
}

/// Every learned tensor of the model, named, in [`param_layout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    num_items: usize,
    tensors: Vec<(String, Tensor)>,
}

/// `rows × cols` matrix whose rows (if `rows ≤ cols`) or columns are
/// orthonormal: Q of a Gaussian draw, with column signs fixed so that R has a
/// positive diagonal.
pub(crate) fn orthogonal<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let (tall_r, tall_c) = (rows.max(cols), rows.min(cols));
    let a = DMatrix::from_fn(tall_r, tall_c, |_, _| normal.sample(rng));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..tall_c {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let m = if rows >= cols { q } else { q.transpose() };
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push(m[(i, j)]);
        }
    }
    out
}

impl ModelParams {
    /// Gaussian `N(0, init_std²)` for everything except the recurrent weight
    /// matrices, which are orthogonal. Every tensor requires gradients.
    pub fn init(config: &ModelConfig, num_items: usize, init_std: f64, seed: u64) -> Result<Self> {
        config.validate()?;
        if num_items == 0 {
            return Err(Error::Config("model needs at least one item".into()));
        }
        let normal = Normal::new(0.0, init_std)
            .map_err(|e| Error::Config(format!("init_std {init_std}: {e}")))?;
        let tensors = param_layout(config, num_items)
            .into_iter()
            .enumerate()
            .map(|(k, (name, shape))| {
                let mut r = rng::stream(seed, &[0x1417, k as u64]);
                let data = if is_gru_weight(&name) {
                    orthogonal(shape[0], shape[1], &mut r)
                } else {
                    let n: usize = shape.iter().product();
                    (0..n).map(|_| normal.sample(&mut r)).collect()
                };
                let t = Tensor::new(&shape, data).expect("layout shape").with_grad();
                (name, t)
            })
            .collect();
        Ok(ModelParams {
            config: config.clone(),
            num_items,
            tensors,
        })
    }

    /// Assembles parameters from named tensors, checking names and shapes
    /// against the layout.
    pub fn from_tensors(
        config: &ModelConfig,
        num_items: usize,
        tensors: Vec<(String, Tensor)>,
    ) -> Result<Self> {
        config.validate()?;
        let layout = param_layout(config, num_items);
        if layout.len() != tensors.len() {
            return Err(Error::Format(format!(
                "expected {} parameter tensors, found {}",
                layout.len(),
                tensors.len()
            )));
        }
        let mut out = Vec::with_capacity(layout.len());
        for ((name, shape), (tname, mut t)) in layout.into_iter().zip(tensors) {
            if name != tname || shape != t.shape() {
                return Err(Error::Format(format!(
                    "parameter {tname} {:?} does not match layout entry {name} {shape:?}",
                    t.shape()
                )));
            }
            if let Some(bad) = t.data().iter().find(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("parameter {name} holds {bad}")));
            }
            t.set_requires_grad(true);
            out.push((name, t));
        }
        Ok(ModelParams {
            config: config.clone(),
            num_items,
            tensors: out,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn tensors(&self) -> &[(String, Tensor)] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [(String, Tensor)] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(|(_, t)| t.zero_grad());
    }

    /// Records every tensor on `tape` as a borrowed leaf.
    pub fn bind<'a>(&'a self, tape: &Tape<'a>) -> ParamVars {
        let vars: Vec<Var> = self.tensors.iter().map(|(_, t)| tape.leaf(t)).collect();
        ParamVars::from_vars(&self.config, &vars).expect("layout-ordered tensors")
    }
}

/// Tape handles of the parameters, grouped by role.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub embedding: Var,
    /// `layers[l][k]` is head `k` of layer `l`.
    pub layers: Vec<Vec<HeadVars>>,
    pub gru: GruVars,
    pub output: Var,
    /// Every handle in layout order.
    pub all: Vec<Var>,
}

impl ParamVars {
    /// Groups handles given in [`param_layout`] order.
    pub fn from_vars(config: &ModelConfig, vars: &[Var]) -> Result<Self> {
        let expected = 1 + 2 * config.layers * config.heads + 12 + 1;
        if vars.len() != expected {
            return Err(Error::shape("param_vars", &[vars.len()], &[expected]));
        }
        let mut it = vars.iter().copied();
        let mut next = || it.next().unwrap();
        let embedding = next();
        let layers = (0..config.layers)
            .map(|_| {
                (0..config.heads)
                    .map(|_| HeadVars {
                        weight: next(),
                        att: next(),
                    })
                    .collect()
            })
            .collect();
        let gru = GruVars {
            w_ir: next(),
            w_iz: next(),
            w_in: next(),
            w_hr: next(),
            w_hz: next(),
            w_hn: next(),
            b_ir: next(),
            b_iz: next(),
            b_in: next(),
            b_hr: next(),
            b_hz: next(),
            b_hn: next(),
        };
        let output = next();
        Ok(ParamVars {
            embedding,
            layers,
            gru,
            output,
            all: vars.to_vec(),
        })
    }
}
