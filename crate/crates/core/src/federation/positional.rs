//! Position-based aggregation of heterogeneous submodels: every global
//! parameter averages over the clients whose submodel occupies it.

use crate::alignment::{KeptNeurons, WEIGHT_SUM_TOL};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::nn::{Layer, LayerStack};

/// A trained submodel and the global neuron positions it was cut from.
#[derive(Debug, Clone, Copy)]
pub struct PositionalUpdate<'a> {
    pub client: usize,
    pub model: &'a LayerStack,
    pub kept: Option<&'a KeptNeurons>,
    pub weight: f64,
}

/// Per-parameter weighted average over covering clients, weights renormalized
/// over the clients that cover each parameter. Parameters no client covers keep
/// their value from `previous`.
pub fn positional_aggregate(previous: &LayerStack, updates: &[PositionalUpdate]) -> Result<LayerStack> {
    let sum: f64 = updates.iter().map(|u| u.weight).sum();
    if updates.is_empty() || (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::WeightSum { sum });
    }
    let dims = previous.dims();
    let mut maps = Vec::with_capacity(updates.len());
    for u in updates {
        let kept = u.kept.ok_or(Error::MissingIndexMap { client: u.client })?;
        check_map(u, kept, &dims)?;
        maps.push(kept);
    }

    let mut layers = Vec::with_capacity(previous.depth());
    for (l, prev) in previous.layers().iter().enumerate() {
        let (rows, cols) = (prev.out_dim(), prev.in_dim());
        let mut w_num = Matrix::zeros(rows, cols);
        let mut w_den = Matrix::zeros(rows, cols);
        let mut b_num = vec![0.0; rows];
        let mut b_den = vec![0.0; rows];
        for (u, kept) in updates.iter().zip(&maps) {
            let sub = &u.model.layers()[l];
            let inputs: Vec<usize> = if l == 0 {
                (0..cols).collect()
            } else {
                kept[l - 1].clone()
            };
            for (r, &gr) in kept[l].iter().enumerate() {
                for (c, &gc) in inputs.iter().enumerate() {
                    w_num[(gr, gc)] += u.weight * sub.weight[(r, c)];
                    w_den[(gr, gc)] += u.weight;
                }
                b_num[gr] += u.weight * sub.bias.0[r];
                b_den[gr] += u.weight;
            }
        }
        let weight = Matrix::from_fn(rows, cols, |r, c| {
            let den = w_den[(r, c)];
            if den > 0.0 {
                w_num[(r, c)] / den
            } else {
                prev.weight[(r, c)]
            }
        });
        let bias = (0..rows)
            .map(|r| if b_den[r] > 0.0 { b_num[r] / b_den[r] } else { prev.bias.0[r] })
            .collect();
        layers.push(Layer::new(weight, Vector(bias))?);
    }
    LayerStack::new(layers)
}

fn check_map(u: &PositionalUpdate, kept: &KeptNeurons, dims: &[usize]) -> Result<()> {
    let sub_dims = u.model.dims();
    if kept.len() + 1 != dims.len() || sub_dims.len() != dims.len() {
        return Err(Error::LayerCount {
            op: "positional_aggregate",
            left: sub_dims.len(),
            right: dims.len(),
        });
    }
    for (l, rows) in kept.iter().enumerate() {
        let global = dims[l + 1];
        if rows.len() != sub_dims[l + 1] || rows.iter().any(|&r| r >= global) {
            return Err(Error::WidthViolation {
                layer: l + 1,
                sub: rows.len(),
                global,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::{aggregate, baseline_extract, ExtractStrategy};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(seed: u64) -> LayerStack {
        LayerStack::init(&[3, 4, 2], &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn full_map() -> KeptNeurons {
        vec![(0..4).collect(), (0..2).collect()]
    }

    #[test]
    fn full_size_equals_weighted_average() {
        let (a, b, g) = (net(1), net(2), net(3));
        let map = full_map();
        let ups = [
            PositionalUpdate { client: 0, model: &a, kept: Some(&map), weight: 0.25 },
            PositionalUpdate { client: 1, model: &b, kept: Some(&map), weight: 0.75 },
        ];
        let pos = positional_aggregate(&g, &ups).unwrap();
        let avg = aggregate(&[(&a, 0.25), (&b, 0.75)]).unwrap();
        assert!(pos.max_abs_diff(&avg).unwrap() < 1e-15);
    }

    #[test]
    fn coverage_rules() {
        let g = net(4);
        let sub = baseline_extract(&net(5), &[3, 2, 2], ExtractStrategy::FixedPosition, 0).unwrap();
        let kept = vec![vec![1, 3], vec![0, 1]];
        let ups = [PositionalUpdate { client: 7, model: &sub.model, kept: Some(&kept), weight: 1.0 }];
        let out = positional_aggregate(&g, &ups).unwrap();
        let (o, s) = (&out.layers()[0], &sub.model.layers()[0]);
        // one covering client: its value exactly
        assert_eq!(o.weight.row(1), s.weight.row(0));
        assert_eq!(o.weight.row(3), s.weight.row(1));
        assert_eq!(o.bias.0[3], s.bias.0[1]);
        // uncovered rows keep the previous global value
        assert_eq!(o.weight.row(0), g.layers()[0].weight.row(0));
        assert_eq!(o.bias.0[2], g.layers()[0].bias.0[2]);
        // output layer: only columns 1 and 3 are covered
        let (o1, g1, s1) = (&out.layers()[1], &g.layers()[1], &sub.model.layers()[1]);
        assert_eq!(o1.weight[(0, 0)], g1.weight[(0, 0)]);
        assert_eq!(o1.weight[(1, 3)], s1.weight[(1, 1)]);
    }

    #[test]
    fn missing_map_and_bad_weights() {
        let a = net(1);
        let ups = [PositionalUpdate { client: 3, model: &a, kept: None, weight: 1.0 }];
        assert!(matches!(
            positional_aggregate(&a, &ups),
            Err(Error::MissingIndexMap { client: 3 })
        ));
        let map = full_map();
        let ups = [PositionalUpdate { client: 0, model: &a, kept: Some(&map), weight: 0.5 }];
        assert!(matches!(positional_aggregate(&a, &ups), Err(Error::WeightSum { .. })));
        let bad = vec![vec![0, 1, 2, 9], vec![0, 1]];
        let ups = [PositionalUpdate { client: 0, model: &a, kept: Some(&bad), weight: 1.0 }];
        assert!(matches!(positional_aggregate(&a, &ups), Err(Error::WidthViolation { .. })));
    }
}
