use crate::autodiff::{Array, Real, Tape, Var};
use crate::model::{forward_loss, Batch, ModelConfig, Parameters};
use crate::optim::global_norm;

use super::UpstreamError;

/// A differentiable loss over a flat list of parameter blocks.
pub trait Objective<T: Real> {
    type Batch;

    fn loss(&self, params: &[Var<T>], batch: &Self::Batch) -> Result<Var<T>, UpstreamError>;
}

/// Mean token cross-entropy of the text-to-text model.
pub struct ModelObjective<'a, T> {
    pub template: &'a Parameters<T>,
    pub config: &'a ModelConfig,
}

impl<'a, T> ModelObjective<'a, T> {
    pub fn new(template: &'a Parameters<T>, config: &'a ModelConfig) -> Self {
        Self { template, config }
    }
}

impl<T: Real> Objective<T> for ModelObjective<'_, T> {
    type Batch = Batch;

    fn loss(&self, params: &[Var<T>], batch: &Batch) -> Result<Var<T>, UpstreamError> {
        let bound = self.template.attach(params.to_vec())?;
        Ok(forward_loss(&bound, self.config, batch)?)
    }
}

/// Update direction of one meta step: the new parameters are
/// `θ − β·grad`.
#[derive(Clone, Debug)]
pub struct Direction<T> {
    pub support_loss: f64,
    pub query_loss: Option<f64>,
    pub grad: Vec<Array<T>>,
}

impl<T: Real> Direction<T> {
    pub fn norm(&self) -> f64 {
        global_norm(&self.grad)
    }
}

fn finite<T: Real>(x: T, op: &'static str) -> Result<f64, UpstreamError> {
    match x.to_f64() {
        Some(v) if v.is_finite() => Ok(v),
        _ => Err(crate::autodiff::AutodiffError::NonFinite { op }.into()),
    }
}

fn check_grads<T: Real>(grads: &[Array<T>], op: &'static str) -> Result<(), UpstreamError> {
    if grads.iter().all(Array::all_finite) {
        Ok(())
    } else {
        Err(crate::autodiff::AutodiffError::NonFinite { op }.into())
    }
}

fn eager_grad<T: Real, O: Objective<T>>(
    obj: &O,
    params: &[Array<T>],
    batch: &O::Batch,
    op: &'static str,
) -> Result<(f64, Vec<Array<T>>), UpstreamError> {
    let tape = Tape::new();
    let vars: Vec<Var<T>> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = obj.loss(&vars, batch)?;
    let value = finite(loss.item(), op)?;
    let grads = tape.grad_arrays(&loss, &vars)?;
    check_grads(&grads, op)?;
    Ok((value, grads))
}

fn inner_update<T: Real>(params: &[Array<T>], grads: &[Array<T>], alpha: T) -> Result<Vec<Array<T>>, UpstreamError> {
    params
        .iter()
        .zip(grads)
        .map(|(p, g)| Ok(p.sub(&g.scale(alpha)?)?))
        .collect()
}

/// Second-order meta-gradient: the query loss at `θ − α∇L_support(θ)`,
/// differentiated with respect to `θ` through the inner step.
pub fn maml_direction<T: Real, O: Objective<T>>(
    obj: &O,
    params: &[Array<T>],
    support: &O::Batch,
    query: &O::Batch,
    alpha: T,
) -> Result<Direction<T>, UpstreamError> {
    let tape = Tape::new();
    let theta: Vec<Var<T>> = params.iter().map(|p| tape.param(p.clone())).collect();
    let support_loss = obj.loss(&theta, support)?;
    let support_value = finite(support_loss.item(), "inner loss")?;
    let inner = tape.gradient(&support_loss, &theta, true)?;
    let fast = theta
        .iter()
        .zip(&inner)
        .map(|(t, g)| Ok(t.sub(&g.scale(alpha)?)?))
        .collect::<Result<Vec<_>, UpstreamError>>()?;
    let query_loss = obj.loss(&fast, query)?;
    let query_value = finite(query_loss.item(), "query loss")?;
    let grad = tape.grad_arrays(&query_loss, &theta)?;
    check_grads(&grad, "meta-gradient")?;
    Ok(Direction {
        support_loss: support_value,
        query_loss: Some(query_value),
        grad,
    })
}

/// First-order approximation: the query gradient taken at the adapted
/// weights.
pub fn fomaml_direction<T: Real, O: Objective<T>>(
    obj: &O,
    params: &[Array<T>],
    support: &O::Batch,
    query: &O::Batch,
    alpha: T,
) -> Result<Direction<T>, UpstreamError> {
    let (support_value, g) = eager_grad(obj, params, support, "inner loss")?;
    let fast = inner_update(params, &g, alpha)?;
    let (query_value, grad) = eager_grad(obj, &fast, query, "query loss")?;
    Ok(Direction {
        support_loss: support_value,
        query_loss: Some(query_value),
        grad,
    })
}

/// `k = batches.len()` plain steps with rate `α`; the direction is the
/// total displacement `θ − θ′`, so `θ − β·grad = θ + β(θ′ − θ)`.
pub fn reptile_direction<T: Real, O: Objective<T>>(
    obj: &O,
    params: &[Array<T>],
    batches: &[O::Batch],
    alpha: T,
) -> Result<Direction<T>, UpstreamError> {
    if batches.is_empty() {
        return Err(UpstreamError::Config("reptile needs at least one inner batch".into()));
    }
    let mut current = params.to_vec();
    let mut displacement: Option<Vec<Array<T>>> = None;
    let mut first_loss = 0.0;
    for (j, batch) in batches.iter().enumerate() {
        let (value, g) = eager_grad(obj, &current, batch, "inner loss")?;
        if j == 0 {
            first_loss = value;
        }
        let step = g
            .iter()
            .map(|g| Ok(g.scale(alpha)?))
            .collect::<Result<Vec<_>, UpstreamError>>()?;
        current = current
            .iter()
            .zip(&step)
            .map(|(p, s)| Ok(p.sub(s)?))
            .collect::<Result<_, UpstreamError>>()?;
        displacement = Some(match displacement {
            None => step,
            Some(d) => d
                .iter()
                .zip(&step)
                .map(|(d, s)| Ok(d.add(s)?))
                .collect::<Result<_, UpstreamError>>()?,
        });
    }
    let grad = displacement.unwrap_or_default();
    check_grads(&grad, "reptile displacement")?;
    Ok(Direction {
        support_loss: first_loss,
        query_loss: None,
        grad,
    })
}

fn apply<T: Real>(params: &Parameters<T>, d: &Direction<T>, beta: T) -> Result<Parameters<T>, UpstreamError> {
    let next = inner_update(params.arrays(), &d.grad, beta)?;
    Ok(params.with_arrays(next)?)
}

fn positive<T: Real>(alpha: T, beta: T) -> Result<(), UpstreamError> {
    if alpha > T::zero() && beta > T::zero() {
        Ok(())
    } else {
        Err(UpstreamError::Config("step sizes must be positive".into()))
    }
}

/// One second-order meta-update of the model on a support/query pair.
pub fn maml_step<T: Real>(
    params: &Parameters<T>,
    config: &ModelConfig,
    support: &Batch,
    query: &Batch,
    alpha: T,
    beta: T,
) -> Result<Parameters<T>, UpstreamError> {
    positive(alpha, beta)?;
    let obj = ModelObjective::new(params, config);
    let d = maml_direction(&obj, params.arrays(), support, query, alpha)?;
    apply(params, &d, beta)
}

/// One first-order meta-update of the model on a support/query pair.
pub fn fomaml_step<T: Real>(
    params: &Parameters<T>,
    config: &ModelConfig,
    support: &Batch,
    query: &Batch,
    alpha: T,
    beta: T,
) -> Result<Parameters<T>, UpstreamError> {
    positive(alpha, beta)?;
    let obj = ModelObjective::new(params, config);
    let d = fomaml_direction(&obj, params.arrays(), support, query, alpha)?;
    apply(params, &d, beta)
}

/// One interpolation update after `batches.len()` inner steps.
pub fn reptile_step<T: Real>(
    params: &Parameters<T>,
    config: &ModelConfig,
    batches: &[Batch],
    alpha: T,
    beta: T,
) -> Result<Parameters<T>, UpstreamError> {
    positive(alpha, beta)?;
    let obj = ModelObjective::new(params, config);
    let d = reptile_direction(&obj, params.arrays(), batches, alpha)?;
    apply(params, &d, beta)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `½(θ − a)²` summed over a single block.
    struct Quadratic;

    impl Objective<f64> for Quadratic {
        type Batch = f64;

        fn loss(&self, params: &[Var<f64>], a: &f64) -> Result<Var<f64>, UpstreamError> {
            let d = params[0].offset(-a)?;
            Ok(d.mul(&d)?.sum()?.scale(0.5)?)
        }
    }

    /// `c·θ`, whose Hessian is zero.
    struct Linear;

    impl Objective<f64> for Linear {
        type Batch = f64;

        fn loss(&self, params: &[Var<f64>], c: &f64) -> Result<Var<f64>, UpstreamError> {
            Ok(params[0].scale(*c)?.sum()?)
        }
    }

    fn theta(x: f64) -> Vec<Array<f64>> {
        vec![Array::from_f64(&[1], &[x]).unwrap()]
    }

    #[test]
    fn quadratic_meta_gradients() {
        let m = maml_direction(&Quadratic, &theta(1.0), &0.0, &2.0, 0.5).unwrap();
        assert!((m.grad[0].data()[0] + 0.75).abs() < 1e-15);
        let f = fomaml_direction(&Quadratic, &theta(1.0), &0.0, &2.0, 0.5).unwrap();
        assert!((f.grad[0].data()[0] + 1.5).abs() < 1e-15);
        assert!((m.grad[0].data()[0] - 0.5 * f.grad[0].data()[0]).abs() < 1e-15);
    }

    #[test]
    fn quadratic_reptile() {
        let r = reptile_direction(&Quadratic, &theta(1.0), &[0.0], 0.5).unwrap();
        let next = inner_update(&theta(1.0), &r.grad, 0.5).unwrap();
        assert!((next[0].data()[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn zero_inner_rate_reduces_to_query_gradient() {
        let m = maml_direction(&Quadratic, &theta(1.0), &0.0, &2.0, 0.0).unwrap();
        let f = fomaml_direction(&Quadratic, &theta(1.0), &0.0, &2.0, 0.0).unwrap();
        assert_eq!(m.grad, f.grad);
        assert_eq!(m.grad[0].data(), &[-1.0]);
    }

    #[test]
    fn linear_loss_first_order_is_exact() {
        let p = vec![Array::from_f64(&[3], &[0.3, -1.0, 2.0]).unwrap()];
        let m = maml_direction(&Linear, &p, &1.5, &-0.5, 0.1).unwrap();
        let f = fomaml_direction(&Linear, &p, &1.5, &-0.5, 0.1).unwrap();
        assert_eq!(m.grad, f.grad);
    }

    #[test]
    fn reptile_accumulates_steps() {
        // Two steps on ½θ² from θ=1 with α=0.5: 1 → 0.5 → 0.25.
        let r = reptile_direction(&Quadratic, &theta(1.0), &[0.0, 0.0], 0.5).unwrap();
        assert!((r.grad[0].data()[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let err = maml_direction(&Quadratic, &theta(f64::MAX), &-f64::MAX, &0.0, 0.5).unwrap_err();
        assert!(err.is_numeric(), "{err}");
    }
}
