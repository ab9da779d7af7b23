//! Layer-wise neuron alignment between a global model and client submodels.
//!
//! [`otp_personalize`] carries the global model down into a client's
//! coordinates and fuses it with the client's history; [`ota_align_up`] lifts a
//! trained submodel back into the global coordinates; [`aggregate`] averages
//! lifted models. Hidden layers are matched by optimal transport over neuron
//! rows (incoming weights with the bias appended); the output layer is class
//! indexed and always uses the identity plan.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matmul, matmul_tn, pairwise_euclidean, Matrix, Vector};
use crate::nn::{Layer, LayerStack};
use crate::ot::{column_normalize, solve_uniform, OtConfig, TransportPlan};

/// Tolerance on aggregation weights summing to one.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Output neuron indices, per layer, that a submodel occupies in the global model.
pub type KeptNeurons = Vec<Vec<usize>>;

#[derive(Debug, Clone)]
pub struct AlignmentResult {
    pub model: LayerStack,
    pub plans: Vec<TransportPlan>,
    pub per_layer_objective: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub alpha: f64,
    pub ot: OtConfig,
}

impl FusionConfig {
    pub fn new(alpha: f64, ot: OtConfig) -> Result<Self> {
        let cfg = Self { alpha, ot };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig {
                field: "alpha",
                reason: format!("must lie in [0, 1], got {}", self.alpha),
            });
        }
        self.ot.validate()
    }
}

fn check_compatible(sub: &LayerStack, global: &LayerStack) -> Result<()> {
    if sub.depth() != global.depth() {
        return Err(Error::LayerCount {
            op: "alignment",
            left: sub.depth(),
            right: global.depth(),
        });
    }
    let (ds, dg) = (sub.dims(), global.dims());
    for (layer, (&s, &g)) in ds.iter().zip(&dg).enumerate() {
        let fixed = layer == 0 || layer == ds.len() - 1;
        if (fixed && s != g) || s > g {
            return Err(Error::WidthViolation {
                layer,
                sub: s,
                global: g,
            });
        }
    }
    Ok(())
}

fn identity_plan(n: usize, cost: Matrix) -> (TransportPlan, f64) {
    let plan = TransportPlan {
        plan: Matrix::identity(n).scale(1.0 / n as f64),
        row_marginal: Vector::uniform(n),
        col_marginal: Vector::uniform(n),
        col_violation: 0.0,
        iterations: 0,
    };
    let objective = plan.objective(&cost).unwrap_or(f64::NAN);
    (plan, objective)
}

fn remap_inputs(weight: &Matrix, map: Option<&Matrix>) -> Result<Matrix> {
    match map {
        Some(m) => matmul(weight, m),
        None => Ok(weight.clone()),
    }
}

/// `T̂ᵀ · rows`, applied to a weight matrix and its bias column.
fn project(normalized: &Matrix, weight: &Matrix, bias: &Vector) -> Result<Layer> {
    let w = matmul_tn(normalized, weight)?;
    let b = matmul_tn(normalized, &Matrix::new(bias.len(), 1, bias.0.clone())?)?;
    Layer::new(w, Vector(b.into_vec()))
}

/// `α · aligned + (1 − α) · history`, exact at the endpoints.
fn fuse(alpha: f64, aligned: Layer, history: &Layer) -> Result<Layer> {
    if alpha == 1.0 {
        return Ok(aligned);
    }
    if alpha == 0.0 {
        return Ok(history.clone());
    }
    let weight = aligned.weight.lincomb(alpha, &history.weight, 1.0 - alpha)?;
    let bias = aligned
        .bias
        .0
        .iter()
        .zip(&history.bias.0)
        .map(|(a, h)| alpha * a + (1.0 - alpha) * h)
        .collect::<Vec<_>>();
    Layer::new(weight, Vector(bias))
}

/// Personalized submodel for a client: the global model aligned onto the
/// client's historical neurons, fused with that history by `alpha`. The
/// result has the history's dims.
pub fn otp_personalize(
    global: &LayerStack,
    history: &LayerStack,
    cfg: &FusionConfig,
) -> Result<AlignmentResult> {
    cfg.validate()?;
    check_compatible(history, global)?;
    let last = global.depth() - 1;
    let mut input_map: Option<Matrix> = None;
    let mut layers = Vec::with_capacity(global.depth());
    let mut plans = Vec::with_capacity(global.depth());
    let mut objectives = Vec::with_capacity(global.depth());

    for (l, (g, h)) in global.layers().iter().zip(history.layers()).enumerate() {
        let step = || -> Result<(Layer, TransportPlan, f64, Option<Matrix>)> {
            let remapped = remap_inputs(&g.weight, input_map.as_ref())?;
            let source = remapped.with_column(g.bias.as_slice())?;
            let cost = pairwise_euclidean(&source, &h.augmented())?;
            if l == last {
                let (plan, obj) = identity_plan(g.out_dim(), cost);
                let aligned = Layer::new(remapped, g.bias.clone())?;
                return Ok((aligned, plan, obj, None));
            }
            let plan = solve_uniform(&cost, &cfg.ot)?;
            let obj = plan.objective(&cost)?;
            let normalized = plan.column_normalized()?;
            let aligned = project(&normalized, &remapped, &g.bias)?;
            Ok((aligned, plan, obj, Some(normalized)))
        };
        let (aligned, plan, obj, next_map) = step().map_err(|e| e.at_layer(l))?;
        layers.push(fuse(cfg.alpha, aligned, h).map_err(|e| e.at_layer(l))?);
        plans.push(plan);
        objectives.push(obj);
        input_map = next_map;
    }
    Ok(AlignmentResult {
        model: LayerStack::new(layers)?,
        plans,
        per_layer_objective: objectives,
    })
}

/// Lifts a client submodel into the global model's coordinates.
///
/// Every global neuron becomes the barycentre of the client neurons it receives
/// mass from (plan normalized per global neuron). The same normalized plan
/// carries the client's input columns onto the previous layer's global
/// neurons, which makes this the scale inverse of [`otp_personalize`].
pub fn ota_align_up(
    client: &LayerStack,
    global_ref: &LayerStack,
    ot: &OtConfig,
) -> Result<AlignmentResult> {
    ot.validate()?;
    check_compatible(client, global_ref)?;
    let last = global_ref.depth() - 1;
    let mut input_map: Option<Matrix> = None;
    let mut layers = Vec::with_capacity(client.depth());
    let mut plans = Vec::with_capacity(client.depth());
    let mut objectives = Vec::with_capacity(client.depth());

    for (l, (c, g)) in client.layers().iter().zip(global_ref.layers()).enumerate() {
        let step = || -> Result<(Layer, TransportPlan, f64, Option<Matrix>)> {
            let remapped = remap_inputs(&c.weight, input_map.as_ref())?;
            let source = remapped.with_column(c.bias.as_slice())?;
            let cost = pairwise_euclidean(&source, &g.augmented())?;
            if l == last {
                let (plan, obj) = identity_plan(c.out_dim(), cost);
                return Ok((Layer::new(remapped, c.bias.clone())?, plan, obj, None));
            }
            let plan = solve_uniform(&cost, ot)?;
            let obj = plan.objective(&cost)?;
            let normalized = column_normalize(&plan.plan)?;
            let lifted = project(&normalized, &remapped, &c.bias)?;
            Ok((lifted, plan, obj, Some(normalized)))
        };
        let (lifted, plan, obj, next_map) = step().map_err(|e| e.at_layer(l))?;
        layers.push(lifted);
        plans.push(plan);
        objectives.push(obj);
        input_map = next_map;
    }
    Ok(AlignmentResult {
        model: LayerStack::new(layers)?,
        plans,
        per_layer_objective: objectives,
    })
}

/// `Σ p_i · W_i`, accumulated in input order.
pub fn aggregate(lifted: &[(&LayerStack, f64)]) -> Result<LayerStack> {
    let (first, _) = lifted.first().ok_or(Error::WeightSum { sum: 0.0 })?;
    let sum: f64 = lifted.iter().map(|(_, p)| p).sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::WeightSum { sum });
    }
    let mut acc = LayerStack::zeros(&first.dims());
    for (model, p) in lifted {
        acc.add_scaled(model, *p)?;
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractStrategy {
    FixedPosition,
    Magnitude,
    Random,
}

/// A submodel cut out of the global model together with the positions it took.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub model: LayerStack,
    pub kept: KeptNeurons,
}

/// Cuts a submodel with `shape` dims out of `global`.
///
/// Hidden layers keep the first `k` neurons (`FixedPosition`), the `k` with
/// the largest L2 norm of incoming weights plus bias (`Magnitude`, ties to the
/// lower index), or a seeded uniform sample (`Random`). Kept neurons stay in
/// their original order, and their incoming columns are restricted to the
/// neurons kept in the previous layer.
pub fn baseline_extract(
    global: &LayerStack,
    shape: &[usize],
    strategy: ExtractStrategy,
    seed: u64,
) -> Result<Extraction> {
    let dims = global.dims();
    if shape.len() != dims.len() {
        return Err(Error::LayerCount {
            op: "baseline_extract",
            left: shape.len(),
            right: dims.len(),
        });
    }
    for (layer, (&s, &g)) in shape.iter().zip(&dims).enumerate() {
        let fixed = layer == 0 || layer == dims.len() - 1;
        if s == 0 || s > g || (fixed && s != g) {
            return Err(Error::WidthViolation {
                layer,
                sub: s,
                global: g,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prev: Vec<usize> = (0..dims[0]).collect();
    let mut kept = Vec::with_capacity(global.depth());
    let mut layers = Vec::with_capacity(global.depth());
    for (l, layer) in global.layers().iter().enumerate() {
        let (width, keep) = (layer.out_dim(), shape[l + 1]);
        let rows: Vec<usize> = if keep == width {
            (0..width).collect()
        } else {
            match strategy {
                ExtractStrategy::FixedPosition => (0..keep).collect(),
                ExtractStrategy::Magnitude => {
                    let aug = layer.augmented();
                    let norms: Vec<f64> = (0..width)
                        .map(|i| aug.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
                        .collect();
                    let mut order: Vec<usize> = (0..width).collect();
                    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
                    let mut top = order[..keep].to_vec();
                    top.sort_unstable();
                    top
                }
                ExtractStrategy::Random => {
                    let mut pick = sample(&mut rng, width, keep).into_vec();
                    pick.sort_unstable();
                    pick
                }
            }
        };
        layers.push(Layer::new(
            layer.weight.select(&rows, &prev),
            Vector(rows.iter().map(|&r| layer.bias[r]).collect()),
        )?);
        prev = rows.clone();
        kept.push(rows);
    }
    Ok(Extraction {
        model: LayerStack::new(layers)?,
        kept,
    })
}
