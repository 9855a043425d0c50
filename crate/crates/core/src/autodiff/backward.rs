//! Adjoint rules. Each rule is written once against [`Operand`], which is
//! implemented both by plain arrays (eager backward pass) and by tape
//! variables (recorded backward pass, for second derivatives). Every rule
//! uses only primitives that themselves have rules.

use std::rc::Rc;

use super::array::{Array, Real, Result};
use super::tape::{Op, Tape};

pub(crate) trait Operand<T: Real>: Clone + Sized {
    fn shape(&self) -> Vec<usize>;
    /// A constant living in the same context as `self`.
    fn lift(&self, a: Array<T>) -> Self;
    fn add(&self, o: &Self) -> Result<Self>;
    fn sub(&self, o: &Self) -> Result<Self>;
    fn mul(&self, o: &Self) -> Result<Self>;
    fn div(&self, o: &Self) -> Result<Self>;
    fn scale(&self, c: T) -> Result<Self>;
    fn matmul(&self, o: &Self) -> Result<Self>;
    fn transpose(&self) -> Result<Self>;
    fn reshape(&self, shape: &[usize]) -> Result<Self>;
    fn concat_cols(parts: &[Self]) -> Result<Self>;
    fn slice_cols(&self, start: usize, end: usize) -> Result<Self>;
    fn gather_rows(&self, ids: &[usize]) -> Result<Self>;
    fn scatter_add_rows(&self, ids: &[usize], rows: usize) -> Result<Self>;
    fn add_row(&self, row: &Self) -> Result<Self>;
    fn mul_row(&self, row: &Self) -> Result<Self>;
    fn add_col(&self, col: &Self) -> Result<Self>;
    fn mul_col(&self, col: &Self) -> Result<Self>;
    fn sum_rows(&self) -> Result<Self>;
    fn sum_cols(&self) -> Result<Self>;
    fn sum(&self) -> Result<Self>;
    fn broadcast_scalar(&self, shape: &[usize]) -> Result<Self>;
    fn step(&self) -> Result<Self>;
    fn softmax_rows(&self) -> Result<Self>;
}

/// Eager operand: a shared, already-evaluated array.
#[derive(Clone)]
pub(crate) struct Val<T>(pub(crate) Rc<Array<T>>);

impl<T: Real> Operand<T> for Val<T> {
    fn shape(&self) -> Vec<usize> {
        self.0.shape().to_vec()
    }
    fn lift(&self, a: Array<T>) -> Self {
        Val(Rc::new(a))
    }
    fn add(&self, o: &Self) -> Result<Self> {
        Array::add(&self.0, &o.0).map(|a| Val(Rc::new(a)))
    }
    fn sub(&self, o: &Self) -> Result<Self> {
        Array::sub(&self.0, &o.0).map(|a| Val(Rc::new(a)))
    }
    fn mul(&self, o: &Self) -> Result<Self> {
        Array::mul(&self.0, &o.0).map(|a| Val(Rc::new(a)))
    }
    fn div(&self, o: &Self) -> Result<Self> {
        Array::div(&self.0, &o.0).map(|a| Val(Rc::new(a)))
    }
    fn scale(&self, c: T) -> Result<Self> {
        Array::scale(&self.0, c).map(|a| Val(Rc::new(a)))
    }
    fn matmul(&self, o: &Self) -> Result<Self> {
        Array::matmul(&self.0, &o.0).map(|a| Val(Rc::new(a)))
    }
    fn transpose(&self) -> Result<Self> {
        Array::transpose(&self.0).map(|a| Val(Rc::new(a)))
    }
    fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Array::reshape(&self.0, shape).map(|a| Val(Rc::new(a)))
    }
    fn concat_cols(parts: &[Self]) -> Result<Self> {
        let refs: Vec<&Array<T>> = parts.iter().map(|p| p.0.as_ref()).collect();
        Array::concat_cols(&refs).map(|a| Val(Rc::new(a)))
    }
    fn slice_cols(&self, start: usize, end: usize) -> Result<Self> {
        Array::slice_cols(&self.0, start, end).map(|a| Val(Rc::new(a)))
    }
    fn gather_rows(&self, ids: &[usize]) -> Result<Self> {
        Array::gather_rows(&self.0, ids).map(|a| Val(Rc::new(a)))
    }
    fn scatter_add_rows(&self, ids: &[usize], rows: usize) -> Result<Self> {
        Array::scatter_add_rows(&self.0, ids, rows).map(|a| Val(Rc::new(a)))
    }
    fn add_row(&self, row: &Self) -> Result<Self> {
        Array::add_row(&self.0, &row.0).map(|a| Val(Rc::new(a)))
    }
    fn mul_row(&self, row: &Self) -> Result<Self> {
        Array::mul_row(&self.0, &row.0).map(|a| Val(Rc::new(a)))
    }
    fn add_col(&self, col: &Self) -> Result<Self> {
        Array::add_col(&self.0, &col.0).map(|a| Val(Rc::new(a)))
    }
    fn mul_col(&self, col: &Self) -> Result<Self> {
        Array::mul_col(&self.0, &col.0).map(|a| Val(Rc::new(a)))
    }
    fn sum_rows(&self) -> Result<Self> {
        Array::sum_rows(&self.0).map(|a| Val(Rc::new(a)))
    }
    fn sum_cols(&self) -> Result<Self> {
        Array::sum_cols(&self.0).map(|a| Val(Rc::new(a)))
    }
    fn sum(&self) -> Result<Self> {
        Array::sum(&self.0).map(|a| Val(Rc::new(a)))
    }
    fn broadcast_scalar(&self, shape: &[usize]) -> Result<Self> {
        Array::broadcast_scalar(&self.0, shape).map(|a| Val(Rc::new(a)))
    }
    fn step(&self) -> Result<Self> {
        Array::step(&self.0).map(|a| Val(Rc::new(a)))
    }
    fn softmax_rows(&self) -> Result<Self> {
        Array::softmax_rows(&self.0).map(|a| Val(Rc::new(a)))
    }
}

fn zeros_like<T: Real, G: Operand<T>>(g: &G, shape: &[usize]) -> G {
    g.lift(Array::zeros(shape))
}

/// Contribution of the output adjoint `g` to each input of one node. `x` are
/// the node's inputs and `y` its output, as operands; `need[i]` says whether
/// input `i` wants an adjoint at all.
fn adjoint<T: Real, G: Operand<T>>(
    op: &Op<T>,
    x: &[G],
    y: &G,
    g: &G,
    need: &[bool],
) -> Result<Vec<Option<G>>> {
    let when = |i: usize, f: &dyn Fn() -> Result<G>| -> Result<Option<G>> {
        if need[i] {
            f().map(Some)
        } else {
            Ok(None)
        }
    };
    let out = match op {
        Op::Leaf | Op::Step => vec![None; x.len()],
        Op::Add => vec![when(0, &|| Ok(g.clone()))?, when(1, &|| Ok(g.clone()))?],
        Op::Sub => vec![when(0, &|| Ok(g.clone()))?, when(1, &|| g.scale(-T::one()))?],
        Op::Mul => vec![when(0, &|| g.mul(&x[1]))?, when(1, &|| g.mul(&x[0]))?],
        // d(a/b) = da/b - (a/b) db/b
        Op::Div => vec![
            when(0, &|| g.div(&x[1]))?,
            when(1, &|| g.mul(y)?.div(&x[1])?.scale(-T::one()))?,
        ],
        Op::Scale(c) => vec![when(0, &|| g.scale(*c))?],
        Op::Offset(_) => vec![when(0, &|| Ok(g.clone()))?],
        Op::MatMul => vec![
            when(0, &|| g.matmul(&x[1].transpose()?))?,
            when(1, &|| x[0].transpose()?.matmul(g))?,
        ],
        Op::Transpose => vec![when(0, &|| g.transpose())?],
        Op::Reshape => vec![when(0, &|| g.reshape(&x[0].shape()))?],
        Op::Concat => {
            let mut start = 0;
            let mut parts = Vec::with_capacity(x.len());
            for (i, xi) in x.iter().enumerate() {
                let width = xi.shape()[xi.shape().len() - 1];
                parts.push(when(i, &|| g.slice_cols(start, start + width))?);
                start += width;
            }
            parts
        }
        Op::SliceCols { start, end } => vec![when(0, &|| {
            let shape = x[0].shape();
            let (rows, width) = (shape[0], shape[1]);
            let mut parts = Vec::with_capacity(3);
            if *start > 0 {
                parts.push(zeros_like(g, &[rows, *start]));
            }
            parts.push(g.clone());
            if *end < width {
                parts.push(zeros_like(g, &[rows, width - end]));
            }
            G::concat_cols(&parts)
        })?],
        Op::Gather(ids) => vec![when(0, &|| g.scatter_add_rows(ids, x[0].shape()[0]))?],
        Op::ScatterAdd(ids) => vec![when(0, &|| g.gather_rows(ids))?],
        Op::AddRow => vec![
            when(0, &|| Ok(g.clone()))?,
            when(1, &|| g.sum_rows()?.reshape(&x[1].shape()))?,
        ],
        Op::MulRow => vec![
            when(0, &|| g.mul_row(&x[1]))?,
            when(1, &|| g.mul(&x[0])?.sum_rows()?.reshape(&x[1].shape()))?,
        ],
        Op::AddCol => vec![when(0, &|| Ok(g.clone()))?, when(1, &|| g.sum_cols())?],
        Op::MulCol => vec![
            when(0, &|| g.mul_col(&x[1]))?,
            when(1, &|| g.mul(&x[0])?.sum_cols())?,
        ],
        Op::SumRows => vec![when(0, &|| zeros_like(g, &x[0].shape()).add_row(g))?],
        Op::SumCols => vec![when(0, &|| zeros_like(g, &x[0].shape()).add_col(g))?],
        Op::Sum => vec![when(0, &|| g.broadcast_scalar(&x[0].shape()))?],
        Op::Broadcast => vec![when(0, &|| g.sum()?.reshape(&x[0].shape()))?],
        Op::Exp => vec![when(0, &|| g.mul(y))?],
        Op::Log => vec![when(0, &|| g.div(&x[0]))?],
        Op::Tanh => vec![when(0, &|| g.sub(&g.mul(y)?.mul(y)?))?],
        Op::Relu => vec![when(0, &|| g.mul(&x[0].step()?))?],
        Op::Sqrt => vec![when(0, &|| g.div(y)?.scale(T::from_f64_lossy(0.5)))?],
        Op::Recip => vec![when(0, &|| g.mul(y)?.mul(y)?.scale(-T::one()))?],
        // y * (g - rowsum(g * y))
        Op::Softmax => vec![when(0, &|| {
            let dot = g.mul(y)?.sum_cols()?.scale(-T::one())?;
            y.mul(&g.add_col(&dot)?)
        })?],
        // rowweight * g * (softmax(logits) - onehot(targets))
        Op::CrossEntropy { targets, weights } => vec![when(0, &|| {
            let shape = x[0].shape();
            let onehot = g.lift(Array::one_hot(targets, shape[1]));
            let w = g.lift(Array::new(vec![weights.len(), 1], weights.to_vec())?);
            let diff = x[0].softmax_rows()?.sub(&onehot)?;
            diff.mul(&g.broadcast_scalar(&shape)?)?.mul_col(&w)
        })?],
    };
    Ok(out)
}

/// Reverse sweep from `out` over the tape, returning the adjoint of each id
/// in `wrt` (zeros where no path exists).
pub(crate) fn run<T: Real, G: Operand<T>>(
    tape: &Tape<T>,
    out: usize,
    seed: G,
    wrt: &[usize],
    operand: impl Fn(usize) -> G,
) -> Result<Vec<G>> {
    let mut adj: Vec<Option<G>> = vec![None; out + 1];
    let mut result: Vec<Option<G>> = vec![None; wrt.len()];
    let lowest = wrt.iter().copied().min().unwrap_or(out);
    adj[out] = Some(seed);
    for id in (lowest..=out).rev() {
        let Some(g) = adj[id].take() else { continue };
        for (slot, &w) in result.iter_mut().zip(wrt) {
            if w == id {
                *slot = Some(g.clone());
            }
        }
        let (op, inputs, needs, _) = tape.snapshot(id);
        if inputs.is_empty() || !needs.iter().any(|&n| n) {
            continue;
        }
        let xs: Vec<G> = inputs.iter().map(|&i| operand(i)).collect();
        let y = operand(id);
        let contributions = adjoint(&op, &xs, &y, &g, &needs)?;
        for (&input, contribution) in inputs.iter().zip(contributions) {
            let Some(c) = contribution else { continue };
            adj[input] = Some(match adj[input].take() {
                Some(acc) => acc.add(&c)?,
                None => c,
            });
        }
    }
    let template = operand(out);
    Ok(result
        .into_iter()
        .zip(wrt)
        .map(|(g, &w)| g.unwrap_or_else(|| zeros_like(&template, tape.value_of(w).shape())))
        .collect())
}
