//! Minimal reverse-mode tape used by the model forward pass and the
//! training losses.
//!
//! The op set is deliberately small and matched to the network: affine maps,
//! the temporal mixers, token pooling, cosine alignment and the two batch
//! losses. Every op stores its inputs as node ids; [`Graph::backward`] walks
//! the tape in reverse and accumulates vector-Jacobian products. All math is
//! `f64` and fully deterministic, which keeps checkpoints byte-reproducible.
//!
//! Shape errors here are programmer errors (the public model API validates
//! dimensions first), so ops panic on mismatched shapes instead of returning
//! `Result`.

/// Dense row-major tensor of rank 0..=3.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![], data: vec![v] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Tensor { shape: vec![rows, cols], data }
    }

    /// Token tensor laid out as `[time][token][channel]`.
    pub fn tokens(t: usize, n: usize, d: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), t * n * d, "token data length mismatch");
        Tensor { shape: vec![t, n, d], data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product::<usize>().max(if shape.is_empty() { 1 } else { 0 });
        let len = if shape.is_empty() { 1 } else { len };
        Tensor { shape: shape.to_vec(), data: vec![0.0; len] }
    }

    pub fn zeros_like(&self) -> Self {
        Tensor { shape: self.shape.clone(), data: vec![0.0; self.data.len()] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn as_scalar(&self) -> f64 {
        assert!(self.shape.is_empty(), "not a scalar: shape {:?}", self.shape);
        self.data[0]
    }

    fn rc(&self) -> (usize, usize) {
        assert_eq!(self.rank(), 2, "expected matrix, got shape {:?}", self.shape);
        (self.shape[0], self.shape[1])
    }

    fn tnd(&self) -> (usize, usize, usize) {
        assert_eq!(self.rank(), 3, "expected token tensor, got shape {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2])
    }

    #[inline]
    pub fn at2(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    #[inline]
    pub fn at3(&self, t: usize, n: usize, d: usize) -> f64 {
        self.data[(t * self.shape[1] + n) * self.shape[2] + d]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// `w [m,n] · x [n] + b [m] -> [m]`
    Affine { w: NodeId, x: NodeId, b: NodeId },
    /// `w [n] · x [n] + b [] -> scalar`
    AffineScalar { w: NodeId, x: NodeId, b: NodeId },
    /// `out[j] = g[j] * x[j % x.len()]`, a diagonal-style gain projection.
    GainTile { g: NodeId, x: NodeId },
    Concat { parts: Vec<NodeId> },
    Relu { x: NodeId },
    /// Mean over the time and token axes: `[t,n,d] -> [d]`.
    PoolTokens { x: NodeId },
    /// Depthwise temporal convolution with edge-clamp padding plus a gated
    /// identity path: `y = conv_t(x) + gate * x`, shapes `[t,n,d] -> [t,n,d]`.
    /// `w` is `[d, k]`, `b` is `[d]`, `gate` is scalar.
    TemporalConv { w: NodeId, b: NodeId, gate: NodeId, x: NodeId },
    /// Single-head attention along the time axis, applied independently per
    /// token position: `[t,n,d] -> [t,n,d]`. `wq/wk/wv` are `[d,d]`.
    TemporalAttention { wq: NodeId, wk: NodeId, wv: NodeId, x: NodeId },
    /// Shared dense map over the channel axis of every token:
    /// `y[t,n,:] = w · x[t,n,:] + b`.
    TokenDense { w: NodeId, b: NodeId, x: NodeId },
    /// `sum_l cos(anchor_l, x)`; anchors are constant vectors.
    CosineSum { x: NodeId, anchors: Vec<NodeId> },
    StackScalars { parts: Vec<NodeId> },
    /// `(1 - pearson(pred, target)) / 2` with eps-floored deviations.
    PlccLoss { pred: NodeId, target: NodeId, eps: f64 },
    /// Mean pairwise hinge over pairs ordered by the target.
    RankLoss { pred: NodeId, target: NodeId, margin: f64 },
    /// `a + scale * b` for scalars.
    AddScaled { a: NodeId, b: NodeId, scale: f64 },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients of one backward pass, indexed by node id. Nodes the loss does
/// not depend on have no entry.
pub struct Gradients {
    by_node: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.by_node[id.0].as_ref()
    }
}

/// Eagerly-evaluated computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Insert a leaf (parameter or constant).
    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Leaf, t)
    }

    pub fn affine(&mut self, w: NodeId, x: NodeId, b: NodeId) -> NodeId {
        let (m, n) = self.value(w).rc();
        assert_eq!(self.value(x).shape(), [n], "affine input dim");
        assert_eq!(self.value(b).shape(), [m], "affine bias dim");
        let mut out = vec![0.0; m];
        for r in 0..m {
            let mut acc = self.value(b).data()[r];
            for c in 0..n {
                acc += self.value(w).at2(r, c) * self.value(x).data()[c];
            }
            out[r] = acc;
        }
        self.push(Op::Affine { w, x, b }, Tensor::vector(out))
    }

    pub fn affine_scalar(&mut self, w: NodeId, x: NodeId, b: NodeId) -> NodeId {
        let n = self.value(w).len();
        assert_eq!(self.value(w).rank(), 1);
        assert_eq!(self.value(x).shape(), [n], "affine_scalar input dim");
        assert!(self.value(b).shape().is_empty(), "affine_scalar bias must be scalar");
        let dot: f64 = self
            .value(w)
            .data()
            .iter()
            .zip(self.value(x).data())
            .map(|(a, b)| a * b)
            .sum();
        let v = dot + self.value(b).as_scalar();
        self.push(Op::AffineScalar { w, x, b }, Tensor::scalar(v))
    }

    pub fn gain_tile(&mut self, g: NodeId, x: NodeId) -> NodeId {
        assert_eq!(self.value(g).rank(), 1);
        assert_eq!(self.value(x).rank(), 1);
        let k = self.value(x).len();
        assert!(k > 0, "gain_tile source must be non-empty");
        let out: Vec<f64> = self
            .value(g)
            .data()
            .iter()
            .enumerate()
            .map(|(j, gj)| gj * self.value(x).data()[j % k])
            .collect();
        self.push(Op::GainTile { g, x }, Tensor::vector(out))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let mut out = Vec::new();
        for p in parts {
            assert_eq!(self.value(*p).rank(), 1, "concat expects vectors");
            out.extend_from_slice(self.value(*p).data());
        }
        self.push(Op::Concat { parts: parts.to_vec() }, Tensor::vector(out))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f64> = self.value(x).data().iter().map(|v| v.max(0.0)).collect();
        let shape = self.value(x).shape().to_vec();
        self.push(Op::Relu { x }, Tensor { shape, data: out })
    }

    pub fn pool_tokens(&mut self, x: NodeId) -> NodeId {
        let (t, n, d) = self.value(x).tnd();
        let scale = 1.0 / (t * n) as f64;
        let mut out = vec![0.0; d];
        for ti in 0..t {
            for ni in 0..n {
                for di in 0..d {
                    out[di] += self.value(x).at3(ti, ni, di) * scale;
                }
            }
        }
        self.push(Op::PoolTokens { x }, Tensor::vector(out))
    }

    pub fn temporal_conv(&mut self, w: NodeId, b: NodeId, gate: NodeId, x: NodeId) -> NodeId {
        let (t, n, d) = self.value(x).tnd();
        let (wd, k) = self.value(w).rc();
        assert_eq!(wd, d, "temporal_conv kernel channels");
        assert_eq!(self.value(b).shape(), [d], "temporal_conv bias");
        assert!(k % 2 == 1, "temporal kernel must be odd");
        let pad = k / 2;
        let g = self.value(gate).as_scalar();
        let mut out = vec![0.0; t * n * d];
        for ti in 0..t {
            for ni in 0..n {
                for di in 0..d {
                    let mut acc = self.value(b).data()[di] + g * self.value(x).at3(ti, ni, di);
                    for ki in 0..k {
                        let src = (ti + ki).saturating_sub(pad).min(t - 1);
                        acc += self.value(w).at2(di, ki) * self.value(x).at3(src, ni, di);
                    }
                    out[(ti * n + ni) * d + di] = acc;
                }
            }
        }
        self.push(Op::TemporalConv { w, b, gate, x }, Tensor::tokens(t, n, d, out))
    }

    pub fn temporal_attention(&mut self, wq: NodeId, wk: NodeId, wv: NodeId, x: NodeId) -> NodeId {
        let (t, n, d) = self.value(x).tnd();
        for m in [wq, wk, wv] {
            assert_eq!(self.value(m).shape(), [d, d], "attention projection shape");
        }
        let (out, _) = self.attention_forward(wq, wk, wv, x, t, n, d);
        self.push(Op::TemporalAttention { wq, wk, wv, x }, Tensor::tokens(t, n, d, out))
    }

    /// Shared by forward and backward: returns output data and per-(n,t)
    /// softmax weight rows, flattened as `[n][t_query][t_key]`.
    #[allow(clippy::too_many_arguments)]
    fn attention_forward(
        &self,
        wq: NodeId,
        wk: NodeId,
        wv: NodeId,
        x: NodeId,
        t: usize,
        n: usize,
        d: usize,
    ) -> (Vec<f64>, Vec<f64>) {
        let scale = 1.0 / (d as f64).sqrt();
        let matvec = |m: NodeId, ti: usize, ni: usize| -> Vec<f64> {
            let mut out = vec![0.0; d];
            for r in 0..d {
                let mut acc = 0.0;
                for c in 0..d {
                    acc += self.value(m).at2(r, c) * self.value(x).at3(ti, ni, c);
                }
                out[r] = acc;
            }
            out
        };
        let mut out = vec![0.0; t * n * d];
        let mut alphas = vec![0.0; n * t * t];
        for ni in 0..n {
            let q: Vec<Vec<f64>> = (0..t).map(|ti| matvec(wq, ti, ni)).collect();
            let k: Vec<Vec<f64>> = (0..t).map(|ti| matvec(wk, ti, ni)).collect();
            let v: Vec<Vec<f64>> = (0..t).map(|ti| matvec(wv, ti, ni)).collect();
            for tq in 0..t {
                let scores: Vec<f64> = (0..t)
                    .map(|tk| q[tq].iter().zip(&k[tk]).map(|(a, b)| a * b).sum::<f64>() * scale)
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let denom: f64 = exps.iter().sum();
                for tk in 0..t {
                    let a = exps[tk] / denom;
                    alphas[(ni * t + tq) * t + tk] = a;
                    for di in 0..d {
                        out[(tq * n + ni) * d + di] += a * v[tk][di];
                    }
                }
            }
        }
        (out, alphas)
    }

    pub fn token_dense(&mut self, w: NodeId, b: NodeId, x: NodeId) -> NodeId {
        let (t, n, d) = self.value(x).tnd();
        assert_eq!(self.value(w).shape(), [d, d], "token_dense weight shape");
        assert_eq!(self.value(b).shape(), [d], "token_dense bias shape");
        let mut out = vec![0.0; t * n * d];
        for ti in 0..t {
            for ni in 0..n {
                for r in 0..d {
                    let mut acc = self.value(b).data()[r];
                    for c in 0..d {
                        acc += self.value(w).at2(r, c) * self.value(x).at3(ti, ni, c);
                    }
                    out[(ti * n + ni) * d + r] = acc;
                }
            }
        }
        self.push(Op::TokenDense { w, b, x }, Tensor::tokens(t, n, d, out))
    }

    pub fn cosine_sum(&mut self, x: NodeId, anchors: &[NodeId]) -> NodeId {
        let xs = self.value(x).data();
        let xn = norm(xs);
        let mut total = 0.0;
        for a in anchors {
            let av = self.value(*a).data();
            assert_eq!(av.len(), xs.len(), "cosine_sum anchor dim");
            let an = norm(av);
            if xn > 0.0 && an > 0.0 {
                total += dot(av, xs) / (an * xn);
            }
        }
        self.push(Op::CosineSum { x, anchors: anchors.to_vec() }, Tensor::scalar(total))
    }

    pub fn stack_scalars(&mut self, parts: &[NodeId]) -> NodeId {
        let out: Vec<f64> = parts.iter().map(|p| self.value(*p).as_scalar()).collect();
        self.push(Op::StackScalars { parts: parts.to_vec() }, Tensor::vector(out))
    }

    pub fn plcc_loss(&mut self, pred: NodeId, target: NodeId, eps: f64) -> NodeId {
        let (value, _) = plcc_value_grad(self.value(pred).data(), self.value(target).data(), eps);
        self.push(Op::PlccLoss { pred, target, eps }, Tensor::scalar(value))
    }

    pub fn rank_loss(&mut self, pred: NodeId, target: NodeId, margin: f64) -> NodeId {
        let (value, _) = rank_value_grad(self.value(pred).data(), self.value(target).data(), margin);
        self.push(Op::RankLoss { pred, target, margin }, Tensor::scalar(value))
    }

    pub fn add_scaled(&mut self, a: NodeId, b: NodeId, scale: f64) -> NodeId {
        let v = self.value(a).as_scalar() + scale * self.value(b).as_scalar();
        self.push(Op::AddScaled { a, b, scale }, Tensor::scalar(v))
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: NodeId) -> Gradients {
        assert!(
            self.value(root).shape().is_empty(),
            "backward root must be scalar, got shape {:?}",
            self.value(root).shape()
        );
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));

        for idx in (0..self.nodes.len()).rev() {
            let gout = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(idx, &gout, &mut grads);
            grads[idx] = Some(gout);
        }
        Gradients { by_node: grads }
    }

    fn accumulate(&self, idx: usize, gout: &Tensor, grads: &mut [Option<Tensor>]) {
        let add = |grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor| {
            match &mut grads[id.0] {
                Some(existing) => {
                    for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                        *e += d;
                    }
                }
                slot @ None => *slot = Some(delta),
            }
        };
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Affine { w, x, b } => {
                let (m, n) = self.value(*w).rc();
                let mut gw = Tensor::zeros(&[m, n]);
                let mut gx = Tensor::zeros(&[n]);
                for r in 0..m {
                    let go = gout.data()[r];
                    for c in 0..n {
                        gw.data_mut()[r * n + c] += go * self.value(*x).data()[c];
                        gx.data_mut()[c] += go * self.value(*w).at2(r, c);
                    }
                }
                add(grads, *w, gw);
                add(grads, *x, gx);
                add(grads, *b, gout.clone());
            }
            Op::AffineScalar { w, x, b } => {
                let go = gout.as_scalar();
                let gw = Tensor::vector(self.value(*x).data().iter().map(|v| go * v).collect());
                let gx = Tensor::vector(self.value(*w).data().iter().map(|v| go * v).collect());
                add(grads, *w, gw);
                add(grads, *x, gx);
                add(grads, *b, Tensor::scalar(go));
            }
            Op::GainTile { g, x } => {
                let k = self.value(*x).len();
                let mut gg = self.value(*g).zeros_like();
                let mut gx = self.value(*x).zeros_like();
                for (j, go) in gout.data().iter().enumerate() {
                    gg.data_mut()[j] += go * self.value(*x).data()[j % k];
                    gx.data_mut()[j % k] += go * self.value(*g).data()[j];
                }
                add(grads, *g, gg);
                add(grads, *x, gx);
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    let slice = gout.data()[offset..offset + len].to_vec();
                    add(grads, *p, Tensor::vector(slice));
                    offset += len;
                }
            }
            Op::Relu { x } => {
                let gx: Vec<f64> = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(gout.data())
                    .map(|(v, g)| if *v > 0.0 { *g } else { 0.0 })
                    .collect();
                let shape = self.value(*x).shape().to_vec();
                add(grads, *x, Tensor { shape, data: gx });
            }
            Op::PoolTokens { x } => {
                let (t, n, d) = self.value(*x).tnd();
                let scale = 1.0 / (t * n) as f64;
                let mut gx = vec![0.0; t * n * d];
                for cell in 0..t * n {
                    for di in 0..d {
                        gx[cell * d + di] = gout.data()[di] * scale;
                    }
                }
                add(grads, *x, Tensor::tokens(t, n, d, gx));
            }
            Op::TemporalConv { w, b, gate, x } => {
                let (t, n, d) = self.value(*x).tnd();
                let (_, k) = self.value(*w).rc();
                let pad = k / 2;
                let g = self.value(*gate).as_scalar();
                let mut gw = Tensor::zeros(&[d, k]);
                let mut gb = Tensor::zeros(&[d]);
                let mut ggate = 0.0;
                let mut gx = vec![0.0; t * n * d];
                for ti in 0..t {
                    for ni in 0..n {
                        for di in 0..d {
                            let go = gout.at3(ti, ni, di);
                            gb.data_mut()[di] += go;
                            ggate += go * self.value(*x).at3(ti, ni, di);
                            gx[(ti * n + ni) * d + di] += go * g;
                            for ki in 0..k {
                                let src = (ti + ki).saturating_sub(pad).min(t - 1);
                                gw.data_mut()[di * k + ki] += go * self.value(*x).at3(src, ni, di);
                                gx[(src * n + ni) * d + di] += go * self.value(*w).at2(di, ki);
                            }
                        }
                    }
                }
                add(grads, *w, gw);
                add(grads, *b, gb);
                add(grads, *gate, Tensor::scalar(ggate));
                add(grads, *x, Tensor::tokens(t, n, d, gx));
            }
            Op::TemporalAttention { wq, wk, wv, x } => {
                let (t, n, d) = self.value(*x).tnd();
                let scale = 1.0 / (d as f64).sqrt();
                let (_, alphas) = self.attention_forward(*wq, *wk, *wv, *x, t, n, d);
                let mut gwq = Tensor::zeros(&[d, d]);
                let mut gwk = Tensor::zeros(&[d, d]);
                let mut gwv = Tensor::zeros(&[d, d]);
                let mut gx = vec![0.0; t * n * d];
                let matvec = |m: NodeId, ti: usize, ni: usize| -> Vec<f64> {
                    (0..d)
                        .map(|r| {
                            (0..d)
                                .map(|c| self.value(m).at2(r, c) * self.value(*x).at3(ti, ni, c))
                                .sum()
                        })
                        .collect()
                };
                for ni in 0..n {
                    let q: Vec<Vec<f64>> = (0..t).map(|ti| matvec(*wq, ti, ni)).collect();
                    let k: Vec<Vec<f64>> = (0..t).map(|ti| matvec(*wk, ti, ni)).collect();
                    let v: Vec<Vec<f64>> = (0..t).map(|ti| matvec(*wv, ti, ni)).collect();
                    // Gradients w.r.t. the projected q/k/v rows of this token.
                    let mut gq = vec![vec![0.0; d]; t];
                    let mut gk = vec![vec![0.0; d]; t];
                    let mut gv = vec![vec![0.0; d]; t];
                    for tq in 0..t {
                        let go: Vec<f64> = (0..d).map(|di| gout.at3(tq, ni, di)).collect();
                        // ds[u] = dL/d score(tq, u) through the softmax.
                        let arow = &alphas[(ni * t + tq) * t..(ni * t + tq + 1) * t];
                        let dal: Vec<f64> =
                            (0..t).map(|u| dot(&go, &v[u])).collect();
                        let inner: f64 = (0..t).map(|u| dal[u] * arow[u]).sum();
                        for u in 0..t {
                            let ds = arow[u] * (dal[u] - inner);
                            for di in 0..d {
                                gq[tq][di] += ds * k[u][di] * scale;
                                gk[u][di] += ds * q[tq][di] * scale;
                                gv[u][di] += arow[u] * go[di];
                            }
                        }
                    }
                    for ti in 0..t {
                        for r in 0..d {
                            for c in 0..d {
                                let xc = self.value(*x).at3(ti, ni, c);
                                gwq.data_mut()[r * d + c] += gq[ti][r] * xc;
                                gwk.data_mut()[r * d + c] += gk[ti][r] * xc;
                                gwv.data_mut()[r * d + c] += gv[ti][r] * xc;
                                gx[(ti * n + ni) * d + c] += gq[ti][r] * self.value(*wq).at2(r, c)
                                    + gk[ti][r] * self.value(*wk).at2(r, c)
                                    + gv[ti][r] * self.value(*wv).at2(r, c);
                            }
                        }
                    }
                }
                add(grads, *wq, gwq);
                add(grads, *wk, gwk);
                add(grads, *wv, gwv);
                add(grads, *x, Tensor::tokens(t, n, d, gx));
            }
            Op::TokenDense { w, b, x } => {
                let (t, n, d) = self.value(*x).tnd();
                let mut gw = Tensor::zeros(&[d, d]);
                let mut gb = Tensor::zeros(&[d]);
                let mut gx = vec![0.0; t * n * d];
                for ti in 0..t {
                    for ni in 0..n {
                        for r in 0..d {
                            let go = gout.at3(ti, ni, r);
                            gb.data_mut()[r] += go;
                            for c in 0..d {
                                gw.data_mut()[r * d + c] += go * self.value(*x).at3(ti, ni, c);
                                gx[(ti * n + ni) * d + c] += go * self.value(*w).at2(r, c);
                            }
                        }
                    }
                }
                add(grads, *w, gw);
                add(grads, *b, gb);
                add(grads, *x, Tensor::tokens(t, n, d, gx));
            }
            Op::CosineSum { x, anchors } => {
                let go = gout.as_scalar();
                let xs = self.value(*x).data();
                let xn = norm(xs);
                let mut gx = vec![0.0; xs.len()];
                if xn > 0.0 {
                    for a in anchors {
                        let av = self.value(*a).data();
                        let an = norm(av);
                        if an == 0.0 {
                            continue;
                        }
                        let d = dot(av, xs);
                        for j in 0..xs.len() {
                            gx[j] += go * (av[j] / (an * xn) - d * xs[j] / (an * xn * xn * xn));
                        }
                    }
                }
                add(grads, *x, Tensor::vector(gx));
            }
            Op::StackScalars { parts } => {
                for (p, g) in parts.iter().zip(gout.data()) {
                    add(grads, *p, Tensor::scalar(*g));
                }
            }
            Op::PlccLoss { pred, target, eps } => {
                let (_, g) =
                    plcc_value_grad(self.value(*pred).data(), self.value(*target).data(), *eps);
                let go = gout.as_scalar();
                add(grads, *pred, Tensor::vector(g.iter().map(|v| v * go).collect()));
            }
            Op::RankLoss { pred, target, margin } => {
                let (_, g) =
                    rank_value_grad(self.value(*pred).data(), self.value(*target).data(), *margin);
                let go = gout.as_scalar();
                add(grads, *pred, Tensor::vector(g.iter().map(|v| v * go).collect()));
            }
            Op::AddScaled { a, b, scale } => {
                let go = gout.as_scalar();
                add(grads, *a, Tensor::scalar(go));
                add(grads, *b, Tensor::scalar(go * scale));
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `(1 - r) / 2` and its gradient w.r.t. `pred`, where `r` is the Pearson
/// correlation with eps-floored standard deviations. Callers are expected to
/// have rejected constant targets already.
pub(crate) fn plcc_value_grad(pred: &[f64], target: &[f64], eps: f64) -> (f64, Vec<f64>) {
    let b = pred.len();
    assert_eq!(b, target.len(), "plcc length mismatch");
    assert!(b >= 2, "plcc needs at least two samples");
    let bf = b as f64;
    let mp = pred.iter().sum::<f64>() / bf;
    let mt = target.iter().sum::<f64>() / bf;
    let cp: Vec<f64> = pred.iter().map(|v| v - mp).collect();
    let ct: Vec<f64> = target.iter().map(|v| v - mt).collect();
    let cov = dot(&cp, &ct) / bf;
    let sp_raw = (dot(&cp, &cp) / bf).sqrt();
    let st_raw = (dot(&ct, &ct) / bf).sqrt();
    let sp = sp_raw.max(eps);
    let st = st_raw.max(eps);
    let r = (cov / (sp * st)).clamp(-1.0, 1.0);
    let value = (1.0 - r) / 2.0;
    let floored = sp_raw < eps;
    let mut grad = vec![0.0; b];
    for i in 0..b {
        let mut dr = ct[i] / (bf * sp * st);
        if !floored {
            dr -= cov * cp[i] / (bf * sp * sp * sp * st);
        }
        grad[i] = -dr / 2.0;
    }
    (value, grad)
}

/// Mean hinge over ordered pairs `(i, j)` with `target_i > target_j` and its
/// gradient w.r.t. `pred`. No qualifying pair gives exactly zero.
pub(crate) fn rank_value_grad(pred: &[f64], target: &[f64], margin: f64) -> (f64, Vec<f64>) {
    let b = pred.len();
    assert_eq!(b, target.len(), "rank length mismatch");
    let mut pairs = 0usize;
    let mut total = 0.0;
    let mut grad = vec![0.0; b];
    for i in 0..b {
        for j in 0..b {
            if target[i] > target[j] {
                pairs += 1;
                let h = margin - (pred[i] - pred[j]);
                if h > 0.0 {
                    total += h;
                    grad[i] -= 1.0;
                    grad[j] += 1.0;
                }
            }
        }
    }
    if pairs == 0 {
        return (0.0, vec![0.0; b]);
    }
    let k = pairs as f64;
    for g in &mut grad {
        *g /= k;
    }
    (total / k, grad)
}
