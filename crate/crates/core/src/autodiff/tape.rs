use super::kernels::{self, ConvGeom};
use super::{AutodiffError, Graph, NodeId, Op};
use crate::element::{gemm, Element, Trans};
use crate::tensor::Tensor;
use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};

/// Leaf name to tensor, borrowed for the lifetime of a tape.
#[derive(Debug, Clone)]
pub struct Bindings<'b, E: Element> {
    map: HashMap<&'b str, &'b Tensor<E>>,
}

impl<E: Element> Default for Bindings<'_, E> {
    fn default() -> Self {
        Bindings {
            map: HashMap::new(),
        }
    }
}

impl<'b, E: Element> Bindings<'b, E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, name: &'b str, value: &'b Tensor<E>) -> &mut Self {
        self.map.insert(name, value);
        self
    }

    pub fn with(mut self, name: &'b str, value: &'b Tensor<E>) -> Self {
        self.map.insert(name, value);
        self
    }

    pub fn get(&self, name: &str) -> Option<&'b Tensor<E>> {
        self.map.get(name).copied()
    }
}

impl<'b, E: Element> FromIterator<(&'b str, &'b Tensor<E>)> for Bindings<'b, E> {
    fn from_iter<I: IntoIterator<Item = (&'b str, &'b Tensor<E>)>>(iter: I) -> Self {
        Bindings {
            map: iter.into_iter().collect(),
        }
    }
}

/// Gradients of a scalar root with respect to named leaves.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<E: Element> {
    by_leaf: BTreeMap<String, Tensor<E>>,
}

impl<E: Element> Gradients<E> {
    pub fn get(&self, name: &str) -> Option<&Tensor<E>> {
        self.by_leaf.get(name)
    }

    pub fn take(&mut self, name: &str) -> Option<Tensor<E>> {
        self.by_leaf.remove(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<E>)> {
        self.by_leaf.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn into_map(self) -> BTreeMap<String, Tensor<E>> {
        self.by_leaf
    }

    pub fn len(&self) -> usize {
        self.by_leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_leaf.is_empty()
    }
}

/// One evaluation of a [`Graph`]: cached forward values plus reverse sweep.
pub struct Tape<'g, 'b, E: Element> {
    graph: &'g Graph,
    values: Vec<Option<Cow<'b, Tensor<E>>>>,
    evaluated: bool,
}

/// Forward-evaluates `graph` and returns the value at `root`.
pub fn eval<E: Element>(
    graph: &Graph,
    bindings: &Bindings<'_, E>,
    root: NodeId,
) -> Result<Tensor<E>, AutodiffError> {
    let mut tape = Tape::new(graph);
    tape.forward(bindings)?;
    Ok(tape.value(root)?.clone())
}

fn shape_err(node: NodeId, op: &Op, detail: String) -> AutodiffError {
    AutodiffError::Shape {
        node,
        op: op.name(),
        detail,
    }
}

impl<'g, 'b, E: Element> Tape<'g, 'b, E> {
    pub fn new(graph: &'g Graph) -> Self {
        Tape {
            graph,
            values: Vec::new(),
            evaluated: false,
        }
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    /// Evaluates every node in order, caching the results.
    pub fn forward(&mut self, bindings: &Bindings<'b, E>) -> Result<(), AutodiffError> {
        self.evaluated = false;
        self.values.clear();
        self.values.reserve(self.graph.len());
        for (i, op) in self.graph.nodes.iter().enumerate() {
            let id = NodeId(i);
            let v = match op {
                Op::Leaf { name, .. } => Cow::Borrowed(
                    bindings
                        .get(name)
                        .ok_or_else(|| AutodiffError::UnboundLeaf(name.clone()))?,
                ),
                Op::Constant(t) => Cow::Owned(t.cast()),
                _ => Cow::Owned(self.compute(id, op)?),
            };
            self.values.push(Some(v));
        }
        self.evaluated = true;
        Ok(())
    }

    pub fn value(&self, node: NodeId) -> Result<&Tensor<E>, AutodiffError> {
        if !self.evaluated {
            return Err(AutodiffError::NotEvaluated);
        }
        self.values
            .get(node.0)
            .and_then(|v| v.as_deref())
            .ok_or_else(|| AutodiffError::InvalidArgument(format!("no node {node}")))
    }

    /// Scalar value at `node`, as f64.
    pub fn scalar(&self, node: NodeId) -> Result<f64, AutodiffError> {
        let v = self.value(node)?;
        v.item().map(|x| x.to_f64()).ok_or_else(|| AutodiffError::NonScalarRoot {
            node,
            shape: v.shape().to_vec(),
        })
    }

    fn val(&self, id: NodeId) -> &Tensor<E> {
        self.values[id.0].as_deref().expect("parent evaluated before child")
    }

    fn compute(&self, id: NodeId, op: &Op) -> Result<Tensor<E>, AutodiffError> {
        match *op {
            Op::Leaf { .. } | Op::Constant(_) => unreachable!("handled by forward"),
            Op::Conv2d { x, w, b, params } => {
                let (xv, wv) = (self.val(x), self.val(w));
                let (geom, batch, out_c) = conv_geom(id, op, xv, wv, params.stride, params.padding)?;
                let bias = self.bias(id, op, b, out_c)?;
                let data = kernels::conv2d_forward(xv.data(), wv.data(), bias, batch, out_c, &geom);
                Ok(Tensor::from_raw(vec![batch, out_c, geom.out_h, geom.out_w], data))
            }
            Op::ConvTranspose2d { x, w, b, params } => {
                let (xv, wv) = (self.val(x), self.val(w));
                let (geom, batch, in_c) =
                    conv_transpose_geom(id, op, xv, wv, params.stride, params.padding)?;
                let bias = self.bias(id, op, b, geom.channels)?;
                let data =
                    kernels::conv_transpose2d_forward(xv.data(), wv.data(), bias, batch, in_c, &geom);
                Ok(Tensor::from_raw(
                    vec![batch, geom.channels, geom.height, geom.width],
                    data,
                ))
            }
            Op::Dense { x, w, b } => {
                let (xv, wv) = (self.val(x), self.val(w));
                let (n, din, dout) = dense_dims(id, op, xv, wv)?;
                let mut out = vec![E::zero(); n * dout];
                gemm(n, din, dout, xv.data(), Trans::No, wv.data(), Trans::No, &mut out, false);
                if let Some(bias) = self.bias(id, op, b, dout)? {
                    for row in out.chunks_mut(dout) {
                        row.iter_mut().zip(bias).for_each(|(o, &bb)| *o += bb);
                    }
                }
                Ok(Tensor::from_raw(vec![n, dout], out))
            }
            Op::LeakyRelu { x, slope } => {
                let s = E::from_f64(slope);
                Ok(self.val(x).map(|v| if v > E::zero() { v } else { v * s }))
            }
            Op::Sigmoid(x) => Ok(self.val(x).map(sigmoid)),
            Op::Exp(x) => Ok(self.val(x).map(|v| v.exp())),
            Op::Add(a, b) => self.binary(id, op, a, b, |p, q| p + q),
            Op::Sub(a, b) => self.binary(id, op, a, b, |p, q| p - q),
            Op::Mul(a, b) => self.binary(id, op, a, b, |p, q| p * q),
            Op::Div(a, b) => self.binary(id, op, a, b, |p, q| p / q),
            Op::Square(x) => Ok(self.val(x).map(|v| v * v)),
            Op::Abs(x) => Ok(self.val(x).map(|v| v.abs())),
            Op::Scale { x, factor } => {
                let f = E::from_f64(factor);
                Ok(self.val(x).map(|v| v * f))
            }
            Op::Offset { x, value } => {
                let c = E::from_f64(value);
                Ok(self.val(x).map(|v| v + c))
            }
            Op::Sum(x) => Ok(Tensor::scalar(self.val(x).sum())),
            Op::Mean(x) => {
                let xv = self.val(x);
                Ok(Tensor::scalar(xv.sum() / E::from_f64(xv.len() as f64)))
            }
            Op::Reshape { x, ref shape } => {
                let xv = self.val(x);
                if shape.iter().product::<usize>() != xv.len() || shape.contains(&0) {
                    return Err(shape_err(
                        id,
                        op,
                        format!("cannot reshape {:?} into {:?}", xv.shape(), shape),
                    ));
                }
                Ok(Tensor::from_raw(shape.clone(), xv.data().to_vec()))
            }
            Op::Narrow { x, start, len } => {
                let xv = self.val(x);
                let last = *xv.shape().last().unwrap_or(&1);
                if xv.rank() == 0 || len == 0 || start + len > last {
                    return Err(shape_err(
                        id,
                        op,
                        format!("narrow [{start}, {}) of shape {:?}", start + len, xv.shape()),
                    ));
                }
                let data: Vec<E> = xv
                    .data()
                    .chunks(last)
                    .flat_map(|row| row[start..start + len].iter().copied())
                    .collect();
                let mut shape = xv.shape().to_vec();
                *shape.last_mut().unwrap() = len;
                Ok(Tensor::from_raw(shape, data))
            }
            Op::Clamp { x, lo, hi } => {
                let (l, h) = (E::from_f64(lo), E::from_f64(hi));
                Ok(self.val(x).map(|v| v.max(l).min(h)))
            }
            Op::PadSymmetric { x, pad } => {
                let xv = self.val(x);
                let [n, c, h, w] = rank4(id, op, xv)?;
                let data = kernels::pad_symmetric_forward(xv.data(), n * c, h, w, pad);
                Ok(Tensor::from_raw(vec![n, c, h + 2 * pad, w + 2 * pad], data))
            }
        }
    }

    fn bias(
        &self,
        id: NodeId,
        op: &Op,
        b: Option<NodeId>,
        expected: usize,
    ) -> Result<Option<&[E]>, AutodiffError> {
        match b {
            None => Ok(None),
            Some(b) => {
                let bv = self.val(b);
                if bv.shape() != [expected] {
                    return Err(shape_err(
                        id,
                        op,
                        format!("bias shape {:?}, expected [{expected}]", bv.shape()),
                    ));
                }
                Ok(Some(bv.data()))
            }
        }
    }

    fn binary(
        &self,
        id: NodeId,
        op: &Op,
        a: NodeId,
        b: NodeId,
        f: impl Fn(E, E) -> E,
    ) -> Result<Tensor<E>, AutodiffError> {
        let (av, bv) = (self.val(a), self.val(b));
        if av.shape() == bv.shape() {
            Ok(av.zip_map(bv, f))
        } else if bv.len() == 1 {
            let s = bv.data()[0];
            Ok(av.map(|p| f(p, s)))
        } else if av.len() == 1 {
            let s = av.data()[0];
            Ok(bv.map(|q| f(s, q)))
        } else {
            Err(shape_err(
                id,
                op,
                format!("operands {:?} and {:?}", av.shape(), bv.shape()),
            ))
        }
    }

    /// Gradients of the scalar `root` with respect to every differentiable leaf.
    pub fn backward(&self, root: NodeId) -> Result<Gradients<E>, AutodiffError> {
        let names: Vec<&str> = self.graph.differentiable_leaves();
        self.backward_wrt(root, &names)
    }

    /// Gradients of the scalar `root` with respect to the named leaves only;
    /// branches that cannot reach them are skipped.
    pub fn backward_wrt(
        &self,
        root: NodeId,
        leaves: &[&str],
    ) -> Result<Gradients<E>, AutodiffError> {
        if !self.evaluated {
            return Err(AutodiffError::NotEvaluated);
        }
        let rv = self.value(root)?;
        if rv.len() != 1 {
            return Err(AutodiffError::NonScalarRoot {
                node: root,
                shape: rv.shape().to_vec(),
            });
        }
        let mut wanted = Vec::with_capacity(leaves.len());
        for &name in leaves {
            let id = self
                .graph
                .leaf_id(name)
                .ok_or_else(|| AutodiffError::UnknownLeaf(name.to_string()))?;
            match self.graph.op(id) {
                Op::Leaf {
                    requires_grad: true,
                    ..
                } => wanted.push(id),
                _ => return Err(AutodiffError::NotDifferentiable(name.to_string())),
            }
        }

        let n = root.0 + 1;
        let mut needs = vec![false; n];
        for &id in &wanted {
            if id.0 < n {
                needs[id.0] = true;
            }
        }
        for i in 0..n {
            if !needs[i] {
                needs[i] = self.graph.nodes[i].parents().iter().any(|p| needs[p.0]);
            }
        }

        let mut grads: Vec<Option<Tensor<E>>> = vec![None; n];
        if needs[root.0] {
            grads[root.0] = Some(Tensor::from_raw(rv.shape().to_vec(), vec![E::one()]));
        }
        for i in (0..n).rev() {
            if !needs[i] {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let op = &self.graph.nodes[i];
            if let Op::Leaf { .. } = op {
                grads[i] = Some(g);
                continue;
            }
            self.backprop(NodeId(i), op, &g, &needs, &mut grads);
        }

        let mut by_leaf = BTreeMap::new();
        for id in wanted {
            let name = match self.graph.op(id) {
                Op::Leaf { name, .. } => name.clone(),
                _ => unreachable!(),
            };
            let g = grads
                .get_mut(id.0)
                .and_then(|g| g.take())
                .unwrap_or_else(|| Tensor::zeros(self.val(id).shape()));
            by_leaf.insert(name, g);
        }
        Ok(Gradients { by_leaf })
    }

    fn backprop(
        &self,
        id: NodeId,
        op: &Op,
        g: &Tensor<E>,
        needs: &[bool],
        grads: &mut [Option<Tensor<E>>],
    ) {
        let want = |p: NodeId| needs[p.0];
        match *op {
            Op::Leaf { .. } | Op::Constant(_) => {}
            Op::Conv2d { x, w, b, params } => {
                let (xv, wv) = (self.val(x), self.val(w));
                let (geom, batch, out_c) = conv_geom(id, op, xv, wv, params.stride, params.padding)
                    .expect("validated in forward");
                let (dx, dw, db) = kernels::conv2d_backward(
                    xv.data(),
                    wv.data(),
                    g.data(),
                    batch,
                    out_c,
                    &geom,
                    want(x),
                    want(w),
                    b.is_some_and(want),
                );
                accumulate_raw(grads, x, xv, dx);
                accumulate_raw(grads, w, wv, dw);
                if let Some(b) = b {
                    accumulate_raw(grads, b, self.val(b), db);
                }
            }
            Op::ConvTranspose2d { x, w, b, params } => {
                let (xv, wv) = (self.val(x), self.val(w));
                let (geom, batch, in_c) =
                    conv_transpose_geom(id, op, xv, wv, params.stride, params.padding)
                        .expect("validated in forward");
                let (dx, dw, db) = kernels::conv_transpose2d_backward(
                    xv.data(),
                    wv.data(),
                    g.data(),
                    batch,
                    in_c,
                    &geom,
                    want(x),
                    want(w),
                    b.is_some_and(want),
                );
                accumulate_raw(grads, x, xv, dx);
                accumulate_raw(grads, w, wv, dw);
                if let Some(b) = b {
                    accumulate_raw(grads, b, self.val(b), db);
                }
            }
            Op::Dense { x, w, b } => {
                let (xv, wv) = (self.val(x), self.val(w));
                let (n, din, dout) = dense_dims(id, op, xv, wv).expect("validated in forward");
                if want(x) {
                    let mut dx = vec![E::zero(); n * din];
                    gemm(n, dout, din, g.data(), Trans::No, wv.data(), Trans::Yes, &mut dx, false);
                    accumulate_raw(grads, x, xv, Some(dx));
                }
                if want(w) {
                    let mut dw = vec![E::zero(); din * dout];
                    gemm(din, n, dout, xv.data(), Trans::Yes, g.data(), Trans::No, &mut dw, false);
                    accumulate_raw(grads, w, wv, Some(dw));
                }
                if let Some(b) = b.filter(|&b| want(b)) {
                    let mut db = vec![E::zero(); dout];
                    for row in g.data().chunks(dout) {
                        db.iter_mut().zip(row).for_each(|(d, &r)| *d += r);
                    }
                    accumulate_raw(grads, b, self.val(b), Some(db));
                }
            }
            Op::LeakyRelu { x, slope } => {
                if want(x) {
                    let s = E::from_f64(slope);
                    let d = self.val(x).zip_map(g, |v, gg| if v > E::zero() { gg } else { gg * s });
                    accumulate(grads, x, d);
                }
            }
            Op::Sigmoid(x) => {
                if want(x) {
                    let y = self.val(id);
                    let d = y.zip_map(g, |yy, gg| gg * yy * (E::one() - yy));
                    accumulate(grads, x, d);
                }
            }
            Op::Exp(x) => {
                if want(x) {
                    let d = self.val(id).zip_map(g, |yy, gg| gg * yy);
                    accumulate(grads, x, d);
                }
            }
            Op::Add(a, b) => {
                if want(a) {
                    self.accumulate_broadcast(grads, a, g.clone());
                }
                if want(b) {
                    self.accumulate_broadcast(grads, b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if want(a) {
                    self.accumulate_broadcast(grads, a, g.clone());
                }
                if want(b) {
                    self.accumulate_broadcast(grads, b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.val(a), self.val(b));
                if want(a) {
                    let d = broadcast_zip(g, bv, |gg, q| gg * q);
                    self.accumulate_broadcast(grads, a, d);
                }
                if want(b) {
                    let d = broadcast_zip(g, av, |gg, p| gg * p);
                    self.accumulate_broadcast(grads, b, d);
                }
            }
            Op::Div(a, b) => {
                let bv = self.val(b);
                if want(a) {
                    let d = broadcast_zip(g, bv, |gg, q| gg / q);
                    self.accumulate_broadcast(grads, a, d);
                }
                if want(b) {
                    // d(a/b)/db = -(a/b)/b = -y/b
                    let y = self.val(id);
                    let t = y.zip_map(g, |yy, gg| gg * yy);
                    let d = broadcast_zip(&t, bv, |tt, q| -tt / q);
                    self.accumulate_broadcast(grads, b, d);
                }
            }
            Op::Square(x) => {
                if want(x) {
                    let two = E::from_f64(2.0);
                    let d = self.val(x).zip_map(g, |v, gg| two * v * gg);
                    accumulate(grads, x, d);
                }
            }
            Op::Abs(x) => {
                if want(x) {
                    let d = self.val(x).zip_map(g, |v, gg| gg * sign(v));
                    accumulate(grads, x, d);
                }
            }
            Op::Scale { x, factor } => {
                if want(x) {
                    let f = E::from_f64(factor);
                    accumulate(grads, x, g.map(|gg| gg * f));
                }
            }
            Op::Offset { x, .. } => {
                if want(x) {
                    accumulate(grads, x, g.clone());
                }
            }
            Op::Sum(x) => {
                if want(x) {
                    let gg = g.data()[0];
                    accumulate(grads, x, Tensor::full(self.val(x).shape(), gg));
                }
            }
            Op::Mean(x) => {
                if want(x) {
                    let xv = self.val(x);
                    let gg = g.data()[0] / E::from_f64(xv.len() as f64);
                    accumulate(grads, x, Tensor::full(xv.shape(), gg));
                }
            }
            Op::Reshape { x, .. } => {
                if want(x) {
                    let shape = self.val(x).shape().to_vec();
                    accumulate(grads, x, Tensor::from_raw(shape, g.data().to_vec()));
                }
            }
            Op::Narrow { x, start, len } => {
                if want(x) {
                    let xv = self.val(x);
                    let last = *xv.shape().last().unwrap();
                    let mut d = vec![E::zero(); xv.len()];
                    for (row, grow) in d.chunks_mut(last).zip(g.data().chunks(len)) {
                        row[start..start + len].copy_from_slice(grow);
                    }
                    accumulate(grads, x, Tensor::from_raw(xv.shape().to_vec(), d));
                }
            }
            Op::Clamp { x, lo, hi } => {
                if want(x) {
                    let (l, h) = (E::from_f64(lo), E::from_f64(hi));
                    let d = self
                        .val(x)
                        .zip_map(g, |v, gg| if v >= l && v <= h { gg } else { E::zero() });
                    accumulate(grads, x, d);
                }
            }
            Op::PadSymmetric { x, pad } => {
                if want(x) {
                    let xv = self.val(x);
                    let s = xv.shape();
                    let d = kernels::pad_symmetric_backward(g.data(), s[0] * s[1], s[2], s[3], pad);
                    accumulate(grads, x, Tensor::from_raw(s.to_vec(), d));
                }
            }
        }
    }

    /// Accumulates `d` (shaped like the op output) into `target`, summing it
    /// down when `target` was a broadcast scalar.
    fn accumulate_broadcast(&self, grads: &mut [Option<Tensor<E>>], target: NodeId, d: Tensor<E>) {
        let tv = self.val(target);
        if tv.shape() == d.shape() {
            accumulate(grads, target, d);
        } else {
            accumulate(grads, target, Tensor::from_raw(tv.shape().to_vec(), vec![d.sum()]));
        }
    }
}

#[inline]
fn sigmoid<E: Element>(v: E) -> E {
    if v >= E::zero() {
        E::one() / (E::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (E::one() + e)
    }
}

#[inline]
fn sign<E: Element>(v: E) -> E {
    if v > E::zero() {
        E::one()
    } else if v < E::zero() {
        -E::one()
    } else {
        E::zero()
    }
}

/// `f(g, other)` where `other` is either same-shaped or a broadcast scalar.
fn broadcast_zip<E: Element>(g: &Tensor<E>, other: &Tensor<E>, f: impl Fn(E, E) -> E) -> Tensor<E> {
    if other.shape() == g.shape() {
        g.zip_map(other, f)
    } else {
        let s = other.data()[0];
        g.map(|gg| f(gg, s))
    }
}

fn accumulate<E: Element>(grads: &mut [Option<Tensor<E>>], target: NodeId, d: Tensor<E>) {
    match &mut grads[target.0] {
        Some(existing) => existing
            .data_mut()
            .iter_mut()
            .zip(d.data())
            .for_each(|(e, &v)| *e += v),
        slot @ None => *slot = Some(d),
    }
}

fn accumulate_raw<E: Element>(
    grads: &mut [Option<Tensor<E>>],
    target: NodeId,
    like: &Tensor<E>,
    d: Option<Vec<E>>,
) {
    if let Some(d) = d {
        accumulate(grads, target, Tensor::from_raw(like.shape().to_vec(), d));
    }
}

fn rank4<E: Element>(id: NodeId, op: &Op, t: &Tensor<E>) -> Result<[usize; 4], AutodiffError> {
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(shape_err(
            id,
            op,
            format!("expected NCHW input, got {:?}", t.shape()),
        )),
    }
}

fn conv_geom<E: Element>(
    id: NodeId,
    op: &Op,
    x: &Tensor<E>,
    w: &Tensor<E>,
    stride: usize,
    pad: usize,
) -> Result<(ConvGeom, usize, usize), AutodiffError> {
    let [n, c, h, wd] = rank4(id, op, x)?;
    let [o, ci, kh, kw] = rank4(id, op, w)?;
    if ci != c {
        return Err(shape_err(
            id,
            op,
            format!("input has {c} channels but kernel {:?} expects {ci}", w.shape()),
        ));
    }
    let (Some(oh), Some(ow)) = (
        kernels::conv_out_size(h, kh, stride, pad),
        kernels::conv_out_size(wd, kw, stride, pad),
    ) else {
        return Err(shape_err(
            id,
            op,
            format!("kernel {kh}x{kw} larger than padded input {h}x{wd} (pad {pad})"),
        ));
    };
    let geom = ConvGeom {
        channels: c,
        height: h,
        width: wd,
        kh,
        kw,
        stride,
        pad,
        out_h: oh,
        out_w: ow,
    };
    Ok((geom, n, o))
}

fn conv_transpose_geom<E: Element>(
    id: NodeId,
    op: &Op,
    x: &Tensor<E>,
    w: &Tensor<E>,
    stride: usize,
    pad: usize,
) -> Result<(ConvGeom, usize, usize), AutodiffError> {
    let [n, c, h, wd] = rank4(id, op, x)?;
    let [ci, o, kh, kw] = rank4(id, op, w)?;
    if ci != c {
        return Err(shape_err(
            id,
            op,
            format!("input has {c} channels but kernel {:?} expects {ci}", w.shape()),
        ));
    }
    let (Some(oh), Some(ow)) = (
        kernels::conv_transpose_out_size(h, kh, stride, pad),
        kernels::conv_transpose_out_size(wd, kw, stride, pad),
    ) else {
        return Err(shape_err(
            id,
            op,
            format!("padding {pad} leaves no output for input {h}x{wd}"),
        ));
    };
    let geom = ConvGeom {
        channels: o,
        height: oh,
        width: ow,
        kh,
        kw,
        stride,
        pad,
        out_h: h,
        out_w: wd,
    };
    Ok((geom, n, c))
}

fn dense_dims<E: Element>(
    id: NodeId,
    op: &Op,
    x: &Tensor<E>,
    w: &Tensor<E>,
) -> Result<(usize, usize, usize), AutodiffError> {
    match (x.shape(), w.shape()) {
        (&[n, din], &[win, dout]) if din == win => Ok((n, din, dout)),
        (xs, ws) => Err(shape_err(
            id,
            op,
            format!("x {xs:?} is incompatible with weight {ws:?} (want [N,in] · [in,out])"),
        )),
    }
}
