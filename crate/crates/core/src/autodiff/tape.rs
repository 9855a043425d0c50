//! Define-by-run tape. Every primitive applied to a [`Var`] appends a node;
//! [`Tape::gradient`] walks the tape backwards, optionally recording the
//! adjoint computation itself so that it can be differentiated again.

use std::cell::RefCell;
use std::rc::Rc;

use super::array::{Array, Real, Result};
use super::backward::{self, Operand, Val};
use super::AutodiffError;

#[derive(Clone, Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Scale(T),
    Offset(T),
    MatMul,
    Transpose,
    Reshape,
    Concat,
    SliceCols { start: usize, end: usize },
    Gather(Rc<[usize]>),
    ScatterAdd(Rc<[usize]>),
    AddRow,
    MulRow,
    AddCol,
    MulCol,
    SumRows,
    SumCols,
    Sum,
    Broadcast,
    Exp,
    Log,
    Tanh,
    Relu,
    Step,
    Sqrt,
    Recip,
    Softmax,
    CrossEntropy { targets: Rc<[usize]>, weights: Rc<[T]> },
}

pub(crate) struct Node<T> {
    pub(crate) op: Op<T>,
    pub(crate) inputs: Vec<usize>,
    pub(crate) value: Rc<Array<T>>,
    pub(crate) requires_grad: bool,
}

/// Ordered record of evaluated nodes. Cloning a `Tape` clones the handle, not
/// the record. Confined to one thread.
pub struct Tape<T> {
    nodes: Rc<RefCell<Vec<Node<T>>>>,
}

impl<T> Clone for Tape<T> {
    fn clone(&self) -> Self {
        Self {
            nodes: Rc::clone(&self.nodes),
        }
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to one node of a tape.
pub struct Var<T> {
    tape: Tape<T>,
    id: usize,
}

impl<T> Clone for Var<T> {
    fn clone(&self) -> Self {
        Self {
            tape: self.tape.clone(),
            id: self.id,
        }
    }
}

impl<T: Real> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Rc::new(RefCell::new(Vec::new())),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op<T>, inputs: Vec<usize>, value: Array<T>, requires_grad: bool) -> Var<T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            inputs,
            value: Rc::new(value),
            requires_grad,
        });
        Var {
            tape: self.clone(),
            id: nodes.len() - 1,
        }
    }

    /// A leaf that gradients can be taken with respect to.
    pub fn param(&self, value: Array<T>) -> Var<T> {
        self.push(Op::Leaf, vec![], value, true)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&self, value: Array<T>) -> Var<T> {
        self.push(Op::Leaf, vec![], value, false)
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Array<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn snapshot(&self, id: usize) -> (Op<T>, Vec<usize>, Vec<bool>, Rc<Array<T>>) {
        let nodes = self.nodes.borrow();
        let node = &nodes[id];
        let needs = node.inputs.iter().map(|&i| nodes[i].requires_grad).collect();
        (node.op.clone(), node.inputs.clone(), needs, Rc::clone(&node.value))
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    pub(crate) fn var(&self, id: usize) -> Var<T> {
        Var {
            tape: self.clone(),
            id,
        }
    }

    fn owns(&self, v: &Var<T>) -> bool {
        Rc::ptr_eq(&self.nodes, &v.tape.nodes) && v.id < self.len()
    }

    /// Adjoints of the scalar `output` with respect to each of `wrt`.
    ///
    /// With `create_graph` the adjoint computation is recorded on this tape,
    /// so the returned nodes can themselves be differentiated. Otherwise the
    /// adjoints are computed eagerly and attached as constants.
    pub fn gradient(&self, output: &Var<T>, wrt: &[Var<T>], create_graph: bool) -> Result<Vec<Var<T>>> {
        self.validate(output, wrt)?;
        if create_graph {
            let seed = self.constant(Array::full(&output.shape(), T::one()));
            let ids: Vec<usize> = wrt.iter().map(|v| v.id).collect();
            backward::run(self, output.id, seed, &ids, |id| self.var(id))
        } else {
            Ok(self
                .grad_arrays(output, wrt)?
                .into_iter()
                .map(|a| self.constant(a))
                .collect())
        }
    }

    /// Eager adjoints as plain arrays; appends nothing to the tape.
    pub fn grad_arrays(&self, output: &Var<T>, wrt: &[Var<T>]) -> Result<Vec<Array<T>>> {
        self.validate(output, wrt)?;
        let seed = Val(Rc::new(Array::full(&output.shape(), T::one())));
        let ids: Vec<usize> = wrt.iter().map(|v| v.id).collect();
        let grads = backward::run(self, output.id, seed, &ids, |id| Val(self.value_of(id)))?;
        Ok(grads
            .into_iter()
            .map(|g| Rc::try_unwrap(g.0).unwrap_or_else(|rc| (*rc).clone()))
            .collect())
    }

    fn validate(&self, output: &Var<T>, wrt: &[Var<T>]) -> Result<()> {
        if !self.owns(output) {
            return Err(AutodiffError::NotOnTape);
        }
        if !output.value().is_scalar() {
            return Err(AutodiffError::NotScalar {
                shape: output.shape(),
            });
        }
        for v in wrt {
            if !self.owns(v) {
                return Err(AutodiffError::NotOnTape);
            }
            if !self.requires_grad(v.id) {
                return Err(AutodiffError::NoGrad { id: v.id });
            }
        }
        Ok(())
    }
}

impl<T: Real> Var<T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &Tape<T> {
        &self.tape
    }

    pub fn value(&self) -> Rc<Array<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    /// The scalar value of a one-element node.
    pub fn item(&self) -> T {
        self.value().item()
    }

    fn same_tape(&self, other: &Var<T>) -> Result<()> {
        if Rc::ptr_eq(&self.tape.nodes, &other.tape.nodes) {
            Ok(())
        } else {
            Err(AutodiffError::NotOnTape)
        }
    }

    fn unary(&self, op: Op<T>, f: impl FnOnce(&Array<T>) -> Result<Array<T>>) -> Result<Var<T>> {
        let value = f(&self.value())?;
        Ok(self
            .tape
            .push(op, vec![self.id], value, self.requires_grad()))
    }

    fn binary(
        &self,
        other: &Var<T>,
        op: Op<T>,
        f: impl FnOnce(&Array<T>, &Array<T>) -> Result<Array<T>>,
    ) -> Result<Var<T>> {
        self.same_tape(other)?;
        let value = f(&self.value(), &other.value())?;
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(op, vec![self.id, other.id], value, rg))
    }

    pub fn add(&self, o: &Var<T>) -> Result<Var<T>> {
        self.binary(o, Op::Add, Array::add)
    }

    pub fn sub(&self, o: &Var<T>) -> Result<Var<T>> {
        self.binary(o, Op::Sub, Array::sub)
    }

    pub fn mul(&self, o: &Var<T>) -> Result<Var<T>> {
        self.binary(o, Op::Mul, Array::mul)
    }

    pub fn div(&self, o: &Var<T>) -> Result<Var<T>> {
        self.binary(o, Op::Div, Array::div)
    }

    pub fn scale(&self, c: T) -> Result<Var<T>> {
        self.unary(Op::Scale(c), |a| a.scale(c))
    }

    pub fn offset(&self, c: T) -> Result<Var<T>> {
        self.unary(Op::Offset(c), |a| a.offset(c))
    }

    pub fn matmul(&self, o: &Var<T>) -> Result<Var<T>> {
        self.binary(o, Op::MatMul, Array::matmul)
    }

    pub fn transpose(&self) -> Result<Var<T>> {
        self.unary(Op::Transpose, Array::transpose)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<T>> {
        self.unary(Op::Reshape, |a| a.reshape(shape))
    }

    pub fn concat_cols(parts: &[Var<T>]) -> Result<Var<T>> {
        let first = parts.first().ok_or(AutodiffError::Empty { op: "concat" })?;
        for p in parts {
            first.same_tape(p)?;
        }
        let values: Vec<Rc<Array<T>>> = parts.iter().map(Var::value).collect();
        let refs: Vec<&Array<T>> = values.iter().map(|v| v.as_ref()).collect();
        let value = Array::concat_cols(&refs)?;
        let rg = parts.iter().any(Var::requires_grad);
        Ok(first
            .tape
            .push(Op::Concat, parts.iter().map(|p| p.id).collect(), value, rg))
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Var<T>> {
        self.unary(Op::SliceCols { start, end }, |a| a.slice_cols(start, end))
    }

    /// Embedding lookup: rows of `self` selected by `ids`.
    pub fn gather_rows(&self, ids: &[usize]) -> Result<Var<T>> {
        let ids: Rc<[usize]> = ids.into();
        let value = self.value().gather_rows(&ids)?;
        Ok(self
            .tape
            .push(Op::Gather(ids), vec![self.id], value, self.requires_grad()))
    }

    pub fn scatter_add_rows(&self, ids: &[usize], rows: usize) -> Result<Var<T>> {
        let ids: Rc<[usize]> = ids.into();
        let value = self.value().scatter_add_rows(&ids, rows)?;
        Ok(self
            .tape
            .push(Op::ScatterAdd(ids), vec![self.id], value, self.requires_grad()))
    }

    pub fn add_row(&self, row: &Var<T>) -> Result<Var<T>> {
        self.binary(row, Op::AddRow, Array::add_row)
    }

    pub fn mul_row(&self, row: &Var<T>) -> Result<Var<T>> {
        self.binary(row, Op::MulRow, Array::mul_row)
    }

    pub fn add_col(&self, col: &Var<T>) -> Result<Var<T>> {
        self.binary(col, Op::AddCol, Array::add_col)
    }

    pub fn mul_col(&self, col: &Var<T>) -> Result<Var<T>> {
        self.binary(col, Op::MulCol, Array::mul_col)
    }

    pub fn sum_rows(&self) -> Result<Var<T>> {
        self.unary(Op::SumRows, Array::sum_rows)
    }

    pub fn sum_cols(&self) -> Result<Var<T>> {
        self.unary(Op::SumCols, Array::sum_cols)
    }

    pub fn sum(&self) -> Result<Var<T>> {
        self.unary(Op::Sum, Array::sum)
    }

    pub fn mean(&self) -> Result<Var<T>> {
        let n = T::from_usize(self.value().len()).unwrap_or_else(T::one);
        self.sum()?.scale(n.recip())
    }

    pub fn broadcast_scalar(&self, shape: &[usize]) -> Result<Var<T>> {
        self.unary(Op::Broadcast, |a| a.broadcast_scalar(shape))
    }

    pub fn exp(&self) -> Result<Var<T>> {
        self.unary(Op::Exp, Array::exp)
    }

    pub fn log(&self) -> Result<Var<T>> {
        self.unary(Op::Log, Array::log)
    }

    pub fn tanh(&self) -> Result<Var<T>> {
        self.unary(Op::Tanh, Array::tanh)
    }

    pub fn relu(&self) -> Result<Var<T>> {
        self.unary(Op::Relu, Array::relu)
    }

    /// Heaviside step; its derivative is taken to be zero everywhere.
    pub fn step(&self) -> Result<Var<T>> {
        self.unary(Op::Step, Array::step)
    }

    pub fn sqrt(&self) -> Result<Var<T>> {
        self.unary(Op::Sqrt, Array::sqrt)
    }

    pub fn recip(&self) -> Result<Var<T>> {
        self.unary(Op::Recip, Array::recip)
    }

    pub fn softmax_rows(&self) -> Result<Var<T>> {
        self.unary(Op::Softmax, Array::softmax_rows)
    }

    /// Weighted sum of per-row cross-entropies against integer targets.
    /// With every weight equal to `1/n` this is the mean loss.
    pub fn cross_entropy(&self, targets: &[usize], weights: &[T]) -> Result<Var<T>> {
        let value = self.value().cross_entropy(targets, weights)?;
        let op = Op::CrossEntropy {
            targets: targets.into(),
            weights: weights.into(),
        };
        Ok(self.tape.push(op, vec![self.id], value, self.requires_grad()))
    }

    /// Layer normalization over the last axis followed by a learned gain and
    /// bias, composed from the primitives above.
    pub fn layer_norm(&self, gain: &Var<T>, bias: &Var<T>, eps: T) -> Result<Var<T>> {
        let (_, cols) = self.value().dims2().ok_or(AutodiffError::Rank {
            op: "layer_norm",
            shape: self.shape(),
        })?;
        let inv_n = T::from_usize(cols).unwrap_or_else(T::one).recip();
        let mean = self.sum_cols()?.scale(inv_n)?;
        let centered = self.add_col(&mean.scale(-T::one())?)?;
        let var = centered.mul(&centered)?.sum_cols()?.scale(inv_n)?;
        let inv_std = var.offset(eps)?.sqrt()?.recip()?;
        centered.mul_col(&inv_std)?.mul_row(gain)?.add_row(bias)
    }
}

impl<T: Real> Operand<T> for Var<T> {
    fn shape(&self) -> Vec<usize> {
        Var::shape(self)
    }
    fn lift(&self, a: Array<T>) -> Self {
        self.tape.constant(a)
    }
    fn add(&self, o: &Self) -> Result<Self> {
        Var::add(self, o)
    }
    fn sub(&self, o: &Self) -> Result<Self> {
        Var::sub(self, o)
    }
    fn mul(&self, o: &Self) -> Result<Self> {
        Var::mul(self, o)
    }
    fn div(&self, o: &Self) -> Result<Self> {
        Var::div(self, o)
    }
    fn scale(&self, c: T) -> Result<Self> {
        Var::scale(self, c)
    }
    fn matmul(&self, o: &Self) -> Result<Self> {
        Var::matmul(self, o)
    }
    fn transpose(&self) -> Result<Self> {
        Var::transpose(self)
    }
    fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Var::reshape(self, shape)
    }
    fn concat_cols(parts: &[Self]) -> Result<Self> {
        Var::concat_cols(parts)
    }
    fn slice_cols(&self, start: usize, end: usize) -> Result<Self> {
        Var::slice_cols(self, start, end)
    }
    fn gather_rows(&self, ids: &[usize]) -> Result<Self> {
        Var::gather_rows(self, ids)
    }
    fn scatter_add_rows(&self, ids: &[usize], rows: usize) -> Result<Self> {
        Var::scatter_add_rows(self, ids, rows)
    }
    fn add_row(&self, row: &Self) -> Result<Self> {
        Var::add_row(self, row)
    }
    fn mul_row(&self, row: &Self) -> Result<Self> {
        Var::mul_row(self, row)
    }
    fn add_col(&self, col: &Self) -> Result<Self> {
        Var::add_col(self, col)
    }
    fn mul_col(&self, col: &Self) -> Result<Self> {
        Var::mul_col(self, col)
    }
    fn sum_rows(&self) -> Result<Self> {
        Var::sum_rows(self)
    }
    fn sum_cols(&self) -> Result<Self> {
        Var::sum_cols(self)
    }
    fn sum(&self) -> Result<Self> {
        Var::sum(self)
    }
    fn broadcast_scalar(&self, shape: &[usize]) -> Result<Self> {
        Var::broadcast_scalar(self, shape)
    }
    fn step(&self) -> Result<Self> {
        Var::step(self)
    }
    fn softmax_rows(&self) -> Result<Self> {
        Var::softmax_rows(self)
    }
}
