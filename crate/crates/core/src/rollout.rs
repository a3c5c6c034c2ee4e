//! Cross-layer aggregation: `Ã_1 = Â_1`, `Ã_ℓ = Â_ℓ · Ã_{ℓ−1}`.

use crate::attribution::{fixed_residual, row_normalize, AttributionMatrix, Method};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{matmul, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RolloutOptions {
    /// Row-normalize each layer's matrix before composing.
    pub normalize: bool,
    /// Mix each (normalized) layer matrix with the identity at 0.5/0.5.
    pub add_fixed_residual: bool,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        Self {
            normalize: true,
            add_fixed_residual: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStack<T> {
    pub method: Method,
    /// `matrices[ℓ]` aggregates layers `0..=ℓ`.
    pub matrices: Vec<Matrix<T>>,
    pub normalized: bool,
    pub fixed_residual: bool,
    pub mask: Vec<bool>,
}

impl<T: Scalar> RolloutStack<T> {
    pub fn num_layers(&self) -> usize {
        self.matrices.len()
    }
}

pub fn rollout<T: Scalar>(per_layer: &[AttributionMatrix<T>], add_fixed_residual: bool) -> Result<RolloutStack<T>> {
    rollout_with(
        per_layer,
        RolloutOptions {
            add_fixed_residual,
            ..RolloutOptions::default()
        },
    )
}

pub fn rollout_with<T: Scalar>(per_layer: &[AttributionMatrix<T>], options: RolloutOptions) -> Result<RolloutStack<T>> {
    let first = per_layer
        .first()
        .ok_or_else(|| Error::Contract("rollout needs at least one layer".into()))?;
    let n = first.seq_len();
    let mut matrices: Vec<Matrix<T>> = Vec::with_capacity(per_layer.len());
    for layer in per_layer {
        if layer.values.shape() != (n, n) || layer.mask != first.mask {
            return Err(Error::Contract(format!(
                "rollout layer {} has shape {:?}, expected {n}x{n} with a shared mask",
                layer.layer_index,
                layer.values.shape()
            )));
        }
        let mut step = if options.normalize {
            row_normalize(&layer.values, &layer.mask, "rollout input")?
        } else {
            layer.values.clone()
        };
        if options.add_fixed_residual {
            step = fixed_residual(&step);
            for (i, &active) in layer.mask.iter().enumerate() {
                if !active {
                    step[(i, i)] = T::zero();
                }
            }
        }
        let aggregated = match matrices.last() {
            None => step,
            Some(prev) => matmul(&step, prev)?,
        };
        matrices.push(aggregated);
    }
    Ok(RolloutStack {
        method: first.method,
        matrices,
        normalized: options.normalize,
        fixed_residual: options.add_fixed_residual,
        mask: first.mask.clone(),
    })
}

/// Row 0 restricted to `positions`, renormalized to sum to one.
pub fn cls_row<T: Scalar>(m: &Matrix<T>, positions: &[usize]) -> Result<Vec<T>> {
    let row: Vec<f64> = positions.iter().map(|&j| m[(0, j)].wide()).collect();
    let total: f64 = row.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::DegenerateRow {
            what: "CLS attribution",
            row: 0,
        });
    }
    Ok(row.into_iter().map(|v| T::narrow(v / total)).collect())
}

pub fn active_positions(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect()
}

/// CLS attribution over unmasked tokens at 0-based `layer` of the stack.
pub fn cls_attribution<T: Scalar>(stack: &RolloutStack<T>, layer: usize) -> Result<Vec<T>> {
    let m = stack.matrices.get(layer).ok_or(Error::LayerOutOfRange {
        layer,
        num_layers: stack.num_layers(),
    })?;
    cls_row(m, &active_positions(&stack.mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn attr(values: Matrix<f64>, layer: usize) -> AttributionMatrix<f64> {
        let n = values.rows();
        AttributionMatrix {
            method: Method::NEnc,
            layer_index: layer,
            values,
            mask: vec![true; n],
        }
    }

    fn m(rows: &[&[f64]]) -> Matrix<f64> {
        Matrix::from_f64_rows(rows).unwrap()
    }

    #[test]
    fn identity_chain() {
        let layers: Vec<_> = (0..4).map(|l| attr(Matrix::identity(3), l)).collect();
        let stack = rollout(&layers, false).unwrap();
        assert!(stack.matrices.iter().all(|a| *a == Matrix::identity(3)));
        assert_eq!(cls_attribution(&stack, 3).unwrap(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn uniform_is_absorbing() {
        let u = Matrix::filled(4, 4, 0.25);
        let stack = rollout(&[attr(u.clone(), 0), attr(u.clone(), 1)], false).unwrap();
        assert!(stack.matrices[1].max_abs_diff(&u).unwrap() < 1e-15);
        for v in cls_attribution(&stack, 1).unwrap() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn two_layer_hand_product() {
        let a = m(&[&[0.6, 0.4], &[0.2, 0.8]]);
        let b = m(&[&[1.0, 0.0], &[0.5, 0.5]]);
        let stack = rollout(&[attr(a, 0), attr(b, 1)], false).unwrap();
        let want = m(&[&[0.6, 0.4], &[0.4, 0.6]]);
        assert!(stack.matrices[1].max_abs_diff(&want).unwrap() < 1e-15);
    }

    #[test]
    fn fixed_residual_flag_mixes_identity() {
        let u = Matrix::filled(2, 2, 0.5);
        let stack = rollout(&[attr(u, 0)], true).unwrap();
        assert_eq!(stack.matrices[0], m(&[&[0.75, 0.25], &[0.25, 0.75]]));
        assert!(stack.fixed_residual);
    }

    #[test]
    fn unnormalized_rollout_keeps_scale() {
        let a = m(&[&[2.0, 0.0], &[0.0, 2.0]]);
        let stack = rollout_with(
            &[attr(a.clone(), 0), attr(a, 1)],
            RolloutOptions {
                normalize: false,
                add_fixed_residual: false,
            },
        )
        .unwrap();
        assert_eq!(stack.matrices[1], m(&[&[4.0, 0.0], &[0.0, 4.0]]));
        assert!(!stack.normalized);
    }

    #[test]
    fn zero_row_is_rejected() {
        let a = m(&[&[1.0, 0.0], &[0.0, 0.0]]);
        assert!(matches!(
            rollout(&[attr(a, 0)], false),
            Err(Error::DegenerateRow { row: 1, .. })
        ));
    }

    #[test]
    fn masked_token_dropped_from_cls() {
        let mut a = attr(m(&[&[0.5, 0.5, 0.0], &[0.5, 0.5, 0.0], &[0.0, 0.0, 0.0]]), 0);
        a.mask = vec![true, true, false];
        let stack = rollout(&[a], false).unwrap();
        assert_eq!(cls_attribution(&stack, 0).unwrap(), vec![0.5, 0.5]);
        assert!(matches!(
            cls_attribution(&stack, 1),
            Err(Error::LayerOutOfRange { layer: 1, num_layers: 1 })
        ));
    }

    #[test]
    fn empty_input_rejected() {
        assert!(rollout::<f64>(&[], false).is_err());
    }

    fn arb_positive(n: usize) -> impl Strategy<Value = Matrix<f64>> {
        proptest::collection::vec(0.01f64..5.0, n * n).prop_map(move |d| Matrix::from_vec(n, n, d).unwrap())
    }

    proptest! {
        #[test]
        fn products_stay_row_stochastic(layers in proptest::collection::vec(arb_positive(5), 1..6)) {
            let per: Vec<_> = layers.into_iter().enumerate().map(|(l, v)| attr(v, l)).collect();
            let stack = rollout(&per, false).unwrap();
            for a in &stack.matrices {
                for r in a.iter_rows() {
                    let s: f64 = r.iter().sum();
                    prop_assert!((s - 1.0).abs() < 1e-4);
                    prop_assert!(r.iter().all(|&v| v >= 0.0));
                }
            }
        }

        #[test]
        fn prefix_property(layers in proptest::collection::vec(arb_positive(4), 1..6)) {
            let per: Vec<_> = layers.into_iter().enumerate().map(|(l, v)| attr(v, l)).collect();
            let full = rollout(&per, false).unwrap();
            for k in 1..=per.len() {
                let prefix = rollout(&per[..k], false).unwrap();
                prop_assert_eq!(prefix.matrices.last().unwrap(), &full.matrices[k - 1]);
            }
        }

        #[test]
        fn permuting_tokens_permutes_cls(layers in proptest::collection::vec(arb_positive(4), 1..4)) {
            // Swap tokens 1 and 3 in every layer matrix (rows and columns).
            let perm = [0usize, 3, 2, 1];
            let per: Vec<_> = layers.iter().cloned().enumerate().map(|(l, v)| attr(v, l)).collect();
            let permuted: Vec<_> = layers
                .iter()
                .enumerate()
                .map(|(l, v)| {
                    let mut p = Matrix::zeros(4, 4);
                    for i in 0..4 {
                        for j in 0..4 {
                            p[(i, j)] = v[(perm[i], perm[j])];
                        }
                    }
                    attr(p, l)
                })
                .collect();
            let last = per.len() - 1;
            let a = cls_attribution(&rollout(&per, false).unwrap(), last).unwrap();
            let b = cls_attribution(&rollout(&permuted, false).unwrap(), last).unwrap();
            for j in 0..4 {
                prop_assert!((a[perm[j]] - b[j]).abs() < 1e-12);
            }
        }
    }
}
