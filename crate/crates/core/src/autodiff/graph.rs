use std::collections::{HashMap, HashSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::tensor::Tensor;

const LN_EPS: f64 = 1e-8;
/// Probabilities below this floor are clamped before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Scratch gradients used while replaying a graph backward.
///
/// Backward propagates through these buffers and only adds the finished
/// per-tensor totals into the tensors' `grad` accumulators at the end, so a
/// second `backward` call on the same graph doubles every grad exactly.
pub struct GradStore {
    scratch: HashMap<u64, (Tensor, Vec<f64>)>,
}

impl GradStore {
    fn new() -> Self {
        GradStore {
            scratch: HashMap::new(),
        }
    }

    fn seed(&mut self, t: &Tensor) {
        self.scratch
            .insert(t.id(), (t.clone(), vec![1.0; t.numel()]));
    }

    /// Upstream gradient of `t`, if `t` lies on a path to the loss.
    fn upstream(&self, t: &Tensor) -> Option<Vec<f64>> {
        self.scratch.get(&t.id()).map(|(_, g)| g.clone())
    }

    fn accumulate(&mut self, t: &Tensor, contribution: &[f64]) {
        if !t.requires_grad() {
            return;
        }
        let entry = self
            .scratch
            .entry(t.id())
            .or_insert_with(|| (t.clone(), vec![0.0; t.numel()]));
        for (g, c) in entry.1.iter_mut().zip(contribution) {
            *g += c;
        }
    }

    /// Accumulate `contribution` into the slice of `t` starting at `offset`.
    fn accumulate_range(&mut self, t: &Tensor, offset: usize, contribution: &[f64]) {
        if !t.requires_grad() {
            return;
        }
        let entry = self
            .scratch
            .entry(t.id())
            .or_insert_with(|| (t.clone(), vec![0.0; t.numel()]));
        for (g, c) in entry.1[offset..offset + contribution.len()]
            .iter_mut()
            .zip(contribution)
        {
            *g += c;
        }
    }

    fn flush(self) {
        for (_, (tensor, scratch)) in self.scratch {
            tensor.add_to_grad(&scratch);
        }
    }
}

type Step = Box<dyn Fn(&mut GradStore)>;

/// Ordered record of executed operations, replayed in reverse by
/// [`backward`](Graph::backward) to drive the chain rule.
pub struct Graph {
    steps: Vec<Step>,
    produced: HashSet<u64>,
    recording: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// Graph that records operations for a later backward pass.
    pub fn new() -> Self {
        Graph {
            steps: Vec::new(),
            produced: HashSet::new(),
            recording: true,
        }
    }

    /// Forward-only graph: nothing is recorded and backward is unavailable.
    pub fn inference() -> Self {
        Graph {
            steps: Vec::new(),
            produced: HashSet::new(),
            recording: false,
        }
    }

    pub fn recorded_ops(&self) -> usize {
        self.steps.len()
    }

    fn track(&self, inputs: &[&Tensor]) -> bool {
        self.recording && inputs.iter().any(|t| t.requires_grad())
    }

    fn register<F: Fn(&mut GradStore) + 'static>(&mut self, out: &Tensor, step: F) {
        self.produced.insert(out.id());
        self.steps.push(Box::new(step));
    }

    /// Replay the recorded operations in reverse, accumulating dLoss/dT into
    /// every reachable tensor's grad. Each recorded operation is visited
    /// exactly once. Gradients add (+=) onto whatever the accumulators held.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        if loss.numel() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        if !self.produced.contains(&loss.id()) {
            return Err(Error::contract(
                "loss was not produced by operations recorded on this graph".to_string(),
            ));
        }
        let mut store = GradStore::new();
        store.seed(loss);
        for step in self.steps.iter().rev() {
            step(&mut store);
        }
        store.flush();
        Ok(())
    }

    // ── linear algebra ────────────────────────────────────────────────

    /// Matrix product `a [m×k] · b [k×n]`.
    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let av = a.data.borrow();
        let bv = b.data.borrow();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for kk in 0..k {
                let aik = av.values[i * k + kk];
                if aik == 0.0 {
                    continue;
                }
                let brow = &bv.values[kk * n..(kk + 1) * n];
                for j in 0..n {
                    orow[j] += aik * brow[j];
                }
            }
        }
        drop(av);
        drop(bv);
        let track = self.track(&[a, b]);
        let c = Tensor::output(vec![m, n], out, track);
        if track {
            let (a, b, c2) = (a.clone(), b.clone(), c.clone());
            self.register(&c, move |store| {
                let Some(go) = store.upstream(&c2) else { return };
                let av = a.values();
                let bv = b.values();
                // dL/da = go · bᵀ
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    let grow = &go[i * n..(i + 1) * n];
                    for kk in 0..k {
                        let brow = &bv[kk * n..(kk + 1) * n];
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += grow[j] * brow[j];
                        }
                        da[i * k + kk] = acc;
                    }
                }
                // dL/db = aᵀ · go
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    let grow = &go[i * n..(i + 1) * n];
                    for kk in 0..k {
                        let aik = av[i * k + kk];
                        if aik == 0.0 {
                            continue;
                        }
                        let drow = &mut db[kk * n..(kk + 1) * n];
                        for j in 0..n {
                            drow[j] += aik * grow[j];
                        }
                    }
                }
                store.accumulate(&a, &da);
                store.accumulate(&b, &db);
            });
        }
        Ok(c)
    }

    /// Product against a transposed right factor: `a [m×k] · bᵀ`, b given as [n×k].
    pub fn matmul_nt(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::Shape {
                op: "matmul_nt",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let av = a.data.borrow();
        let bv = b.data.borrow();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &av.values[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &bv.values[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for kk in 0..k {
                    acc += arow[kk] * brow[kk];
                }
                out[i * n + j] = acc;
            }
        }
        drop(av);
        drop(bv);
        let track = self.track(&[a, b]);
        let c = Tensor::output(vec![m, n], out, track);
        if track {
            let (a, b, c2) = (a.clone(), b.clone(), c.clone());
            self.register(&c, move |store| {
                let Some(go) = store.upstream(&c2) else { return };
                let av = a.values();
                let bv = b.values();
                let mut da = vec![0.0; m * k];
                let mut db = vec![0.0; n * k];
                for i in 0..m {
                    for j in 0..n {
                        let g = go[i * n + j];
                        if g == 0.0 {
                            continue;
                        }
                        let arow = &av[i * k..(i + 1) * k];
                        let brow = &bv[j * k..(j + 1) * k];
                        for kk in 0..k {
                            da[i * k + kk] += g * brow[kk];
                            db[j * k + kk] += g * arow[kk];
                        }
                    }
                }
                store.accumulate(&a, &da);
                store.accumulate(&b, &db);
            });
        }
        Ok(c)
    }

    // ── elementwise ───────────────────────────────────────────────────

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(Error::Shape {
                op: "add",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        let out: Vec<f64> = {
            let av = a.data.borrow();
            let bv = b.data.borrow();
            av.values
                .iter()
                .zip(bv.values.iter())
                .map(|(x, y)| x + y)
                .collect()
        };
        let track = self.track(&[a, b]);
        let c = Tensor::output(a.shape(), out, track);
        if track {
            let (a, b, c2) = (a.clone(), b.clone(), c.clone());
            self.register(&c, move |store| {
                let Some(go) = store.upstream(&c2) else { return };
                store.accumulate(&a, &go);
                store.accumulate(&b, &go);
            });
        }
        Ok(c)
    }

    /// Row-broadcast bias: `x [m×n] + b [n]`.
    pub fn add_bias(&mut self, x: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (sx, sb) = (x.shape(), b.shape());
        if sx.len() != 2 || sb.len() != 1 || sb[0] != sx[1] {
            return Err(Error::Shape {
                op: "add_bias",
                lhs: sx,
                rhs: sb,
            });
        }
        let (m, n) = (sx[0], sx[1]);
        let out: Vec<f64> = {
            let xv = x.data.borrow();
            let bv = b.data.borrow();
            let mut out = xv.values.clone();
            for i in 0..m {
                for j in 0..n {
                    out[i * n + j] += bv.values[j];
                }
            }
            out
        };
        let track = self.track(&[x, b]);
        let c = Tensor::output(vec![m, n], out, track);
        if track {
            let (x, b, c2) = (x.clone(), b.clone(), c.clone());
            self.register(&c, move |store| {
                let Some(go) = store.upstream(&c2) else { return };
                store.accumulate(&x, &go);
                let mut db = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        db[j] += go[i * n + j];
                    }
                }
                store.accumulate(&b, &db);
            });
        }
        Ok(c)
    }

    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(Error::Shape {
                op: "mul",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        let out: Vec<f64> = {
            let av = a.data.borrow();
            let bv = b.data.borrow();
            av.values
                .iter()
                .zip(bv.values.iter())
                .map(|(x, y)| x * y)
                .collect()
        };
        let track = self.track(&[a, b]);
        let c = Tensor::output(a.shape(), out, track);
        if track {
            let (a, b, c2) = (a.clone(), b.clone(), c.clone());
            self.register(&c, move |store| {
                let Some(go) = store.upstream(&c2) else { return };
                let av = a.values();
                let bv = b.values();
                let da: Vec<f64> = go.iter().zip(bv.iter()).map(|(g, y)| g * y).collect();
                let db: Vec<f64> = go.iter().zip(av.iter()).map(|(g, x)| g * x).collect();
                store.accumulate(&a, &da);
                store.accumulate(&b, &db);
            });
        }
        Ok(c)
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&mut self, x: &Tensor, factor: f64) -> Tensor {
        let out: Vec<f64> = x.values().iter().map(|v| v * factor).collect();
        let track = self.track(&[x]);
        let c = Tensor::output(x.shape(), out, track);
        if track {
            let (x, c2) = (x.clone(), c.clone());
            self.register(&c, move |store| {
                let Some(go) = store.upstream(&c2) else { return };
                let dx: Vec<f64> = go.iter().map(|g| g * factor).collect();
                store.accumulate(&x, &dx);
            });
        }
        c
    }

    /// Multiply every element of `x` by the single value of scalar tensor `s`.
    pub fn mul_scalar(&mut self, x: &Tensor, s: &Tensor) -> Result<Tensor> {
        if s.numel() != 1 {
            return Err(Error::Shape {
                op: "mul_scalar",
                lhs: x.shape(),
                rhs: s.shape(),
            });
        }
        let sv = s.item();
        let out: Vec<f64> = x.values().iter().map(|v| v * sv).collect();
        let track = self.track(&[x, s]);
        let c = Tensor::output(x.shape(), out, track);
        if track {
            let (x, s, c2) = (x.clone(), s.clone(), c.clone());
            self.register(&c, move |store| {
                let Some(go) = store.upstream(&c2) else { return };
                let sv = s.item();
                let xv = x.values();
                let dx: Vec<f64> = go.iter().map(|g| g * sv).collect();
                let ds: f64 = go.iter().zip(xv.iter()).map(|(g, v)| g * v).sum();
                store.accumulate(&x, &dx);
                store.accumulate(&s, &[ds]);
            });
        }
        Ok(c)
    }

    pub fn sigmoid(&mut self, x: &Tensor) -> Tensor {
        let out: Vec<f64> = x
            .values()
            .iter()
            .map(|&v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let track = self.track(&[x]);
        let c = Tensor::output(x.shape(), out, track);
        if track {
            let (x, c2) = (x.clone(), c.clone());
            self.register(&c, move |store| {
                let Some(go) = store.upstream(&c2) else { return };
                let y = c2.values();
                let dx: Vec<f64> = go
                    .iter()
                    .zip(y.iter())
                    .map(|(g, &s)| g * s * (1.0 - s))
                    .collect();
                store.accumulate(&x, &dx);
            });
        }
        c
    }

    pub fn tanh(&mut self, x: &Tensor) -> Tensor {
        let out: Vec<f64> = x.values().iter().map(|v| v.tanh()).collect();
        let track = self.track(&[x]);
        let c = Tensor::output(x.shape(), out, track);
        if track {
            let (x, c2) = (x.clone(), c.clone());
            self.register(&c, move |store| {
                let Some(go) = store.upstream(&c2) else { return };
                let y = c2.values();
                let dx: Vec<f64> = go
                    .iter()
                    .zip(y.iter())
                    .map(|(g, &t)| g * (1.0 - t * t))
                    .collect();
                store.accumulate(&x, &dx);
            });
        }
        c
    }

    /// GELU with the tanh approximation used by standard decoder blocks.
    pub fn gelu(&mut self, x: &Tensor) -> Tensor {
        const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        const A: f64 = 0.044715;
        let out: Vec<f64> = x
            .values()
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (C * (v + A * v * v * v)).tanh()))
            .collect();
        let track = self.track(&[x]);
        let c = Tensor::output(x.shape(), out, track);
        if track {
            let (x, c2) = (x.clone(), c.clone());
            self.register(&c, move |store| {
                let Some(go) = store.upstream(&c2) else { return };
                let xv = x.values();
                let dx: Vec<f64> = go
                    .iter()
                    .zip(xv.iter())
                    .map(|(g, &v)| {
                        let u = C * (v + A * v * v * v);
                        let t = u.tanh();
                        let sech2 = 1.0 - t * t;
                        g * (0.5 * (1.0 + t) + 0.5 * v * sech2 * C * (1.0 + 3.0 * A * v * v))
                    })
                    .collect();
                store.accumulate(&x, &dx);
            });
        }
        c
    }

    // ── normalizers ───────────────────────────────────────────────────

    /// Softmax along `axis` of a 1-D or 2-D tensor, computed with
    /// max-subtraction so arbitrarily large logits cannot overflow.
    pub fn softmax(&mut self, x: &Tensor, axis: usize) -> Result<Tensor> {
        let shape = x.shape();
        if axis >= shape.len() {
            return Err(Error::Shape {
                op: "softmax",
                lhs: shape,
                rhs: vec![axis],
            });
        }
        let xv = x.values();
        let mut out = vec![0.0; xv.len()];
        for_each_slice(&shape, axis, |indices| {
            softmax_into(&xv, &mut out, indices);
        });
        let track = self.track(&[x]);
        let c = Tensor::output(shape.clone(), out, track);
        if track {
            let (x, c2) = (x.clone(), c.clone());
            self.register(&c, move |store| {
                let Some(go) = store.upstream(&c2) else { return };
                let p = c2.values();
                let mut dx = vec![0.0; p.len()];
                for_each_slice(&x.shape(), axis, |indices| {
                    softmax_backward_into(&p, &go, &mut dx, indices);
                });
                store.accumulate(&x, &dx);
            });
        }
        Ok(c)
    }

    /// Softmax of a flat tensor restricted to `active` entries; inactive
    /// entries are exactly zero in the output.
    pub fn masked_softmax(&mut self, x: &Tensor, active: &[bool]) -> Result<Tensor> {
        if x.numel() != active.len() || !active.iter().any(|&a| a) {
            return Err(Error::contract(format!(
                "masked_softmax: {} entries, mask {:?}",
                x.numel(),
                active
            )));
        }
        let xv = x.values();
        let indices: Vec<usize> = (0..xv.len()).filter(|&i| active[i]).collect();
        let mut out = vec![0.0; xv.len()];
        softmax_into(&xv, &mut out, &indices);
        let track = self.track(&[x]);
        let c = Tensor::output(x.shape(), out, track);
        if track {
            let (x, c2) = (x.clone(), c.clone());
            self.register(&c, move |store| {
                let Some(go) = store.upstream(&c2) else { return };
                let p = c2.values();
                let mut dx = vec![0.0; p.len()];
                softmax_backward_into(&p, &go, &mut dx, &indices);
                store.accumulate(&x, &dx);
            });
        }
        Ok(c)
    }

    /// Row-wise softmax of square attention scores where row `t` may only
    /// attend to columns `0..=t`; masked columns are exactly zero.
    pub fn causal_softmax(&mut self, scores: &Tensor) -> Result<Tensor> {
        let shape = scores.shape();
        if shape.len() != 2 || shape[0] != shape[1] {
            return Err(Error::Shape {
                op: "causal_softmax",
                lhs: shape,
                rhs: vec![],
            });
        }
        let t = shape[0];
        let xv = scores.values();
        let mut out = vec![0.0; xv.len()];
        for r in 0..t {
            let indices: Vec<usize> = (0..=r).map(|c| r * t + c).collect();
            softmax_into(&xv, &mut out, &indices);
        }
        let track = self.track(&[scores]);
        let c = Tensor::output(shape, out, track);
        if track {
            let (x, c2) = (scores.clone(), c.clone());
            self.register(&c, move |store| {
                let Some(go) = store.upstream(&c2) else { return };
                let p = c2.values();
                let mut dx = vec![0.0; p.len()];
                for r in 0..t {
                    let indices: Vec<usize> = (0..=r).map(|c| r * t + c).collect();
                    softmax_backward_into(&p, &go, &mut dx, &indices);
                }
                store.accumulate(&x, &dx);
            });
        }
        Ok(c)
    }

    /// Per-row standardization to zero mean and unit variance followed by an
    /// affine transform with `gain` and `bias`.
    pub fn layer_norm(&mut self, x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let sx = x.shape();
        let n = *sx.last().unwrap();
        let rows = x.numel() / n;
        if gain.shape() != vec![n] || bias.shape() != vec![n] {
            return Err(Error::Shape {
                op: "layer_norm",
                lhs: sx,
                rhs: gain.shape(),
            });
        }
        let xv = x.values();
        let gv = gain.values();
        let bv = bias.values();
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * n..(r + 1) * n];
            let (mean, std) = row_moments(row);
            for j in 0..n {
                out[r * n + j] = (row[j] - mean) / std * gv[j] + bv[j];
            }
        }
        let track = self.track(&[x, gain, bias]);
        let c = Tensor::output(sx, out, track);
        if track {
            let (x, gain, bias, c2) = (x.clone(), gain.clone(), bias.clone(), c.clone());
            self.register(&c, move |store| {
                let Some(go) = store.upstream(&c2) else { return };
                let xv = x.values();
                let gv = gain.values();
                let mut dx = vec![0.0; xv.len()];
                let mut dgain = vec![0.0; n];
                let mut dbias = vec![0.0; n];
                for r in 0..rows {
                    let row = &xv[r * n..(r + 1) * n];
                    let grow = &go[r * n..(r + 1) * n];
                    let (mean, std) = row_moments(row);
                    let xhat: Vec<f64> = row.iter().map(|v| (v - mean) / std).collect();
                    let dxhat: Vec<f64> = grow.iter().zip(gv.iter()).map(|(g, w)| g * w).collect();
                    let mean_dxhat: f64 = dxhat.iter().sum::<f64>() / n as f64;
                    let mean_dxhat_xhat: f64 =
                        dxhat.iter().zip(xhat.iter()).map(|(d, h)| d * h).sum::<f64>() / n as f64;
                    for j in 0..n {
                        dgain[j] += grow[j] * xhat[j];
                        dbias[j] += grow[j];
                        dx[r * n + j] =
                            (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat) / std;
                    }
                }
                store.accumulate(&x, &dx);
                store.accumulate(&gain, &dgain);
                store.accumulate(&bias, &dbias);
            });
        }
        Ok(c)
    }

    // ── lookup and reshaping ──────────────────────────────────────────

    /// Token plus position embedding: out[t] = w_e[ids[t]] + w_p[t].
    pub fn embed(&mut self, w_e: &Tensor, w_p: &Tensor, ids: &[usize]) -> Result<Tensor> {
        let (se, sp) = (w_e.shape(), w_p.shape());
        if se.len() != 2 || sp.len() != 2 || se[1] != sp[1] {
            return Err(Error::Shape {
                op: "embed",
                lhs: se,
                rhs: sp,
            });
        }
        let (vocab, dim, window) = (se[0], se[1], sp[0]);
        if ids.is_empty() || ids.len() > window {
            return Err(Error::contract(format!(
                "embed: sequence length {} outside window 1..={window}",
                ids.len()
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= vocab) {
            return Err(Error::contract(format!(
                "embed: token id {bad} outside vocabulary of size {vocab}"
            )));
        }
        let t = ids.len();
        let ev = w_e.data.borrow();
        let pv = w_p.data.borrow();
        let mut out = vec![0.0; t * dim];
        for (pos, &id) in ids.iter().enumerate() {
            for j in 0..dim {
                out[pos * dim + j] = ev.values[id * dim + j] + pv.values[pos * dim + j];
            }
        }
        drop(ev);
        drop(pv);
        let track = self.track(&[w_e, w_p]);
        let c = Tensor::output(vec![t, dim], out, track);
        if track {
            let (w_e, w_p, c2) = (w_e.clone(), w_p.clone(), c.clone());
            let ids = ids.to_vec();
            self.register(&c, move |store| {
                let Some(go) = store.upstream(&c2) else { return };
                for (pos, &id) in ids.iter().enumerate() {
                    let slice = &go[pos * dim..(pos + 1) * dim];
                    store.accumulate_range(&w_e, id * dim, slice);
                    store.accumulate_range(&w_p, pos * dim, slice);
                }
            });
        }
        Ok(c)
    }

    /// Columns `start..start+len` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
        let sx = x.shape();
        if sx.len() != 2 || start + len > sx[1] || len == 0 {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: sx,
                rhs: vec![start, len],
            });
        }
        let (m, n) = (sx[0], sx[1]);
        let xv = x.values();
        let mut out = vec![0.0; m * len];
        for i in 0..m {
            out[i * len..(i + 1) * len].copy_from_slice(&xv[i * n + start..i * n + start + len]);
        }
        let track = self.track(&[x]);
        let c = Tensor::output(vec![m, len], out, track);
        if track {
            let (x, c2) = (x.clone(), c.clone());
            self.register(&c, move |store| {
                let Some(go) = store.upstream(&c2) else { return };
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    dx[i * n + start..i * n + start + len]
                        .copy_from_slice(&go[i * len..(i + 1) * len]);
                }
                store.accumulate(&x, &dx);
            });
        }
        Ok(c)
    }

    /// Single row `r` of a 2-D tensor as a [1×n] tensor.
    pub fn row(&mut self, x: &Tensor, r: usize) -> Result<Tensor> {
        let sx = x.shape();
        if sx.len() != 2 || r >= sx[0] {
            return Err(Error::Shape {
                op: "row",
                lhs: sx,
                rhs: vec![r],
            });
        }
        let n = sx[1];
        let out = x.values()[r * n..(r + 1) * n].to_vec();
        let track = self.track(&[x]);
        let c = Tensor::output(vec![1, n], out, track);
        if track {
            let (x, c2) = (x.clone(), c.clone());
            self.register(&c, move |store| {
                let Some(go) = store.upstream(&c2) else { return };
                store.accumulate_range(&x, r * n, &go);
            });
        }
        Ok(c)
    }

    /// Concatenate 2-D tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[&Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::contract("concat_cols of zero tensors".to_string()));
        }
        let m = parts[0].shape()[0];
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = p.shape();
            if s.len() != 2 || s[0] != m {
                return Err(Error::Shape {
                    op: "concat_cols",
                    lhs: parts[0].shape(),
                    rhs: s,
                });
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; m * total];
        let mut offset = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            let pv = p.values();
            for i in 0..m {
                out[i * total + offset..i * total + offset + w]
                    .copy_from_slice(&pv[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        let inputs: Vec<&Tensor> = parts.to_vec();
        let track = self.track(&inputs);
        let c = Tensor::output(vec![m, total], out, track);
        if track {
            let owned: Vec<Tensor> = parts.iter().map(|p| (*p).clone()).collect();
            let c2 = c.clone();
            self.register(&c, move |store| {
                let Some(go) = store.upstream(&c2) else { return };
                let mut offset = 0;
                for (p, &w) in owned.iter().zip(&widths) {
                    let mut dp = vec![0.0; m * w];
                    for i in 0..m {
                        dp[i * w..(i + 1) * w]
                            .copy_from_slice(&go[i * total + offset..i * total + offset + w]);
                    }
                    store.accumulate(p, &dp);
                    offset += w;
                }
            });
        }
        Ok(c)
    }

    // ── similarity and losses ─────────────────────────────────────────

    /// Cosine similarity of two equal-length tensors, flattened. A zero-norm
    /// input yields the constant 0 with no gradient, so degenerate vectors
    /// never abort a forward pass.
    pub fn cosine(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.numel() != b.numel() {
            return Err(Error::Shape {
                op: "cosine",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        let av = a.values();
        let bv = b.values();
        let na = norm(&av);
        let nb = norm(&bv);
        if na == 0.0 || nb == 0.0 {
            return Ok(Tensor::scalar(0.0));
        }
        let dot: f64 = av.iter().zip(bv.iter()).map(|(x, y)| x * y).sum();
        let cos = (dot / (na * nb)).clamp(-1.0, 1.0);
        let track = self.track(&[a, b]);
        let c = Tensor::output(vec![1], vec![cos], track);
        if track {
            let (a, b, c2) = (a.clone(), b.clone(), c.clone());
            self.register(&c, move |store| {
                let Some(go) = store.upstream(&c2) else { return };
                let g = go[0];
                let av = a.values();
                let bv = b.values();
                let na = norm(&av);
                let nb = norm(&bv);
                let dot: f64 = av.iter().zip(bv.iter()).map(|(x, y)| x * y).sum();
                let cos = dot / (na * nb);
                let da: Vec<f64> = av
                    .iter()
                    .zip(bv.iter())
                    .map(|(x, y)| g * (y / (na * nb) - cos * x / (na * na)))
                    .collect();
                let db: Vec<f64> = av
                    .iter()
                    .zip(bv.iter())
                    .map(|(x, y)| g * (x / (na * nb) - cos * y / (nb * nb)))
                    .collect();
                store.accumulate(&a, &da);
                store.accumulate(&b, &db);
            });
        }
        Ok(c)
    }

    /// Negative log probability of `target` under the distribution `p`.
    /// Probabilities below [`PROB_FLOOR`] are clamped so early training
    /// cannot produce infinities.
    pub fn cross_entropy(&mut self, p: &Tensor, target: usize) -> Result<Tensor> {
        if target >= p.numel() {
            return Err(Error::contract(format!(
                "cross_entropy: target {target} outside distribution of {} entries",
                p.numel()
            )));
        }
        let pt = p.value_at(target).max(PROB_FLOOR);
        let track = self.track(&[p]);
        let c = Tensor::output(vec![1], vec![-pt.ln()], track);
        if track {
            let (p, c2) = (p.clone(), c.clone());
            self.register(&c, move |store| {
                let Some(go) = store.upstream(&c2) else { return };
                let pt = p.value_at(target).max(PROB_FLOOR);
                let mut dp = vec![0.0; p.numel()];
                dp[target] = -go[0] / pt;
                store.accumulate(&p, &dp);
            });
        }
        Ok(c)
    }

    /// Mean negative log probability over rows: p is [T×V], `targets[t]` the
    /// target column of row t. Same clamping as [`cross_entropy`](Self::cross_entropy).
    pub fn nll_rows(&mut self, p: &Tensor, targets: &[usize]) -> Result<Tensor> {
        let sp = p.shape();
        if sp.len() != 2 || sp[0] != targets.len() {
            return Err(Error::Shape {
                op: "nll_rows",
                lhs: sp,
                rhs: vec![targets.len()],
            });
        }
        let (t, v) = (sp[0], sp[1]);
        if let Some(&bad) = targets.iter().find(|&&y| y >= v) {
            return Err(Error::contract(format!(
                "nll_rows: target {bad} outside {v} columns"
            )));
        }
        let pv = p.values();
        let mut total = 0.0;
        for (r, &y) in targets.iter().enumerate() {
            total -= pv[r * v + y].max(PROB_FLOOR).ln();
        }
        let loss = total / t as f64;
        let track = self.track(&[p]);
        let c = Tensor::output(vec![1], vec![loss], track);
        if track {
            let (p, c2) = (p.clone(), c.clone());
            let targets = targets.to_vec();
            self.register(&c, move |store| {
                let Some(go) = store.upstream(&c2) else { return };
                let pv = p.values();
                let mut dp = vec![0.0; pv.len()];
                for (r, &y) in targets.iter().enumerate() {
                    let pt = pv[r * v + y].max(PROB_FLOOR);
                    dp[r * v + y] = -go[0] / (t as f64 * pt);
                }
                store.accumulate(&p, &dp);
            });
        }
        Ok(c)
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, x: &Tensor) -> Tensor {
        let total: f64 = x.values().iter().sum();
        let track = self.track(&[x]);
        let c = Tensor::output(vec![1], vec![total], track);
        if track {
            let (x, c2) = (x.clone(), c.clone());
            self.register(&c, move |store| {
                let Some(go) = store.upstream(&c2) else { return };
                store.accumulate(&x, &vec![go[0]; x.numel()]);
            });
        }
        c
    }

    /// Inverted dropout: keeps each element with probability 1−rate and
    /// rescales survivors by 1/(1−rate). rate 0 is the identity.
    pub fn dropout(&mut self, x: &Tensor, rate: f64, rng: &mut ChaCha8Rng) -> Tensor {
        assert!((0.0..1.0).contains(&rate), "dropout rate {rate}");
        if rate == 0.0 {
            return x.clone();
        }
        let keep = 1.0 - rate;
        let mask: Vec<f64> = x
            .values()
            .iter()
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { 1.0 / keep })
            .collect();
        let out: Vec<f64> = x
            .values()
            .iter()
            .zip(mask.iter())
            .map(|(v, m)| v * m)
            .collect();
        let track = self.track(&[x]);
        let c = Tensor::output(x.shape(), out, track);
        if track {
            let (x, c2) = (x.clone(), c.clone());
            self.register(&c, move |store| {
                let Some(go) = store.upstream(&c2) else { return };
                let dx: Vec<f64> = go.iter().zip(mask.iter()).map(|(g, m)| g * m).collect();
                store.accumulate(&x, &dx);
            });
        }
        c
    }
}

// ── shared numeric kernels ────────────────────────────────────────────

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn row_moments(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, (var + LN_EPS).sqrt())
}

/// Softmax over the elements of `values` selected by `indices`, written into
/// the same positions of `out`.
fn softmax_into(values: &[f64], out: &mut [f64], indices: &[usize]) {
    let max = indices
        .iter()
        .map(|&i| values[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for &i in indices {
        let e = (values[i] - max).exp();
        out[i] = e;
        total += e;
    }
    for &i in indices {
        out[i] /= total;
    }
}

/// dSoftmax backward for one slice: dx = p ⊙ (g − Σ g⊙p), restricted to `indices`.
fn softmax_backward_into(p: &[f64], go: &[f64], dx: &mut [f64], indices: &[usize]) {
    let dot: f64 = indices.iter().map(|&i| go[i] * p[i]).sum();
    for &i in indices {
        dx[i] += p[i] * (go[i] - dot);
    }
}

/// Visit every 1-D slice of `shape` along `axis`, yielding the flat indices
/// of the slice.
fn for_each_slice(shape: &[usize], axis: usize, mut f: impl FnMut(&[usize])) {
    match shape.len() {
        1 => {
            let indices: Vec<usize> = (0..shape[0]).collect();
            f(&indices);
        }
        2 => {
            let (m, n) = (shape[0], shape[1]);
            if axis == 1 {
                for i in 0..m {
                    let indices: Vec<usize> = (0..n).map(|j| i * n + j).collect();
                    f(&indices);
                }
            } else {
                for j in 0..n {
                    let indices: Vec<usize> = (0..m).map(|i| i * n + j).collect();
                    f(&indices);
                }
            }
        }
        _ => panic!("softmax supports 1-D and 2-D tensors, got {shape:?}"),
    }
}

/// Cosine similarity with the degenerate-input rule: a zero-norm vector gives
/// value 0 and sets the flag instead of failing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSim {
    pub value: f64,
    pub degenerate: bool,
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<CosineSim> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            op: "cosine_similarity",
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Ok(CosineSim {
            value: 0.0,
            degenerate: true,
        });
    }
    let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
    Ok(CosineSim {
        value: (dot / (na * nb)).clamp(-1.0, 1.0),
        degenerate: false,
    })
}
