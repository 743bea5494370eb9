//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A `Tape` records one forward pass as a flat list of nodes; `backward`
//! walks the list in reverse and accumulates gradients. Ops are a closed
//! enum rather than closures so the backward pass is a plain match, easy to
//! audit against the finite-difference harness.
//!
//! Conventions:
//! - volumetric tensors are `[channels, d, d, d]` flattened with spatial
//!   stride `(d*d, d, 1)`;
//! - token matrices are `[rows, cols]` row-major;
//! - convolutions are kernel 3, stride 1, zero padding 1 (shape preserving).

/// Dense tensor value. Shape is carried alongside the flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Handle to a node on the tape.
pub type VarId = usize;

enum Op {
    /// Input with no parents. `param` links the node to a parameter slot so
    /// its gradient can be exported after `backward`.
    Leaf { param: Option<usize> },
    Conv3d { x: VarId, w: VarId, b: VarId, cin: usize, cout: usize, d: usize },
    AvgPool2 { x: VarId, c: usize, d: usize },
    Upsample2 { x: VarId, c: usize, d: usize },
    Silu { x: VarId },
    Sigmoid { x: VarId },
    Add { a: VarId, b: VarId },
    /// `x: [rows, cin] @ w: [cin, cout] + b` -> `[rows, cout]`.
    Linear { x: VarId, w: VarId, b: VarId, rows: usize, cin: usize, cout: usize },
    /// Row-wise normalization with learned scale and shift.
    /// `aux` holds `rows * (cols + 1)` values: xhat per row then inv_std.
    LayerNorm { x: VarId, gamma: VarId, beta: VarId, rows: usize, cols: usize, aux: Vec<f64> },
    /// Channel-group normalization over a `[c, d, d, d]` volume with
    /// per-channel affine. `aux` holds xhat (c*d^3) then inv_std per group.
    GroupNorm { x: VarId, gamma: VarId, beta: VarId, groups: usize, c: usize, d: usize, aux: Vec<f64> },
    /// Multi-head causal self-attention over pre-projected q, k, v.
    /// Scores for j > i are never formed. `probs` stores the lower-triangular
    /// softmax rows per head, flattened head-major.
    CausalAttend { q: VarId, k: VarId, v: VarId, heads: usize, rows: usize, cols: usize, probs: Vec<f64> },
    /// Stack row vectors `[cols]` into a `[rows, cols]` matrix.
    StackRows { rows: Vec<VarId>, cols: usize },
    SelectRow { x: VarId, row: usize, cols: usize },
    /// Same data, new shape.
    Reshape { x: VarId },
    SumAll { x: VarId },
    /// Soft dice loss, Eq. 4. `pred` is `[levels, vol]` of probabilities;
    /// only the level indices in `levels` contribute, averaged unweighted.
    DiceLoss { pred: VarId, target: Vec<f64>, levels: Vec<usize>, vol: usize },
    /// Binary cross-entropy on probabilities, clamped away from {0, 1}.
    BceLoss { pred: VarId, target: Vec<f64>, levels: Vec<usize>, vol: usize },
}

struct Node {
    op: Op,
    value: Vec<f64>,
    shape: Vec<usize>,
}

/// Records one forward computation.
pub struct Tape {
    nodes: Vec<Node>,
}

const BCE_EPS: f64 = 1e-7;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Vec<f64>) -> VarId {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node { op, value, shape });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: VarId) -> &[f64] {
        &self.nodes[id].value
    }

    pub fn shape(&self, id: VarId) -> &[usize] {
        &self.nodes[id].shape
    }

    /// Constant input; its gradient is computed but never read.
    pub fn constant(&mut self, t: &Tensor) -> VarId {
        self.push(Op::Leaf { param: None }, t.shape.clone(), t.data.clone())
    }

    /// Parameter input tagged with the owning parameter slot.
    pub fn param(&mut self, slot: usize, t: &Tensor) -> VarId {
        self.push(Op::Leaf { param: Some(slot) }, t.shape.clone(), t.data.clone())
    }

    /// 3x3x3 convolution, stride 1, zero pad 1.
    /// `x: [cin, d, d, d]`, `w: [cout, cin, 3, 3, 3]`, `b: [cout]`.
    pub fn conv3d(&mut self, x: VarId, w: VarId, b: VarId) -> VarId {
        let (cin, d) = (self.nodes[x].shape[0], self.nodes[x].shape[1]);
        let cout = self.nodes[w].shape[0];
        debug_assert_eq!(self.nodes[x].shape, vec![cin, d, d, d]);
        debug_assert_eq!(self.nodes[w].shape, vec![cout, cin, 3, 3, 3]);
        debug_assert_eq!(self.nodes[b].shape, vec![cout]);
        let xp = pad3(&self.nodes[x].value, cin, d);
        let wv = &self.nodes[w].value;
        let bv = &self.nodes[b].value;
        let vol = d * d * d;
        let mut out = vec![0.0; cout * vol];
        let pd = d + 2;
        let (ps2, ps1) = (pd * pd, pd);
        for co in 0..cout {
            let o = &mut out[co * vol..(co + 1) * vol];
            o.fill(bv[co]);
            for ci in 0..cin {
                let xc = &xp[ci * pd * pd * pd..(ci + 1) * pd * pd * pd];
                let wb = (co * cin + ci) * 27;
                for ka in 0..3 {
                    for kb in 0..3 {
                        for kc in 0..3 {
                            let wk = wv[wb + (ka * 3 + kb) * 3 + kc];
                            if wk == 0.0 {
                                continue;
                            }
                            for a in 0..d {
                                for bq in 0..d {
                                    let ob = a * d * d + bq * d;
                                    let ib = (a + ka) * ps2 + (bq + kb) * ps1 + kc;
                                    let xr = &xc[ib..ib + d];
                                    let or = &mut o[ob..ob + d];
                                    for c in 0..d {
                                        or[c] += wk * xr[c];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        self.push(Op::Conv3d { x, w, b, cin, cout, d }, vec![cout, d, d, d], out)
    }

    /// 2x2x2 average pooling; halves each spatial dim.
    pub fn avg_pool2(&mut self, x: VarId) -> VarId {
        let (c, d) = (self.nodes[x].shape[0], self.nodes[x].shape[1]);
        debug_assert!(d % 2 == 0);
        let h = d / 2;
        let xv = &self.nodes[x].value;
        let mut out = vec![0.0; c * h * h * h];
        for ch in 0..c {
            let xb = ch * d * d * d;
            let ob = ch * h * h * h;
            for a in 0..h {
                for b in 0..h {
                    for cc in 0..h {
                        let mut s = 0.0;
                        for da in 0..2 {
                            for db in 0..2 {
                                for dc in 0..2 {
                                    s += xv[xb + (2 * a + da) * d * d + (2 * b + db) * d + 2 * cc + dc];
                                }
                            }
                        }
                        out[ob + a * h * h + b * h + cc] = s / 8.0;
                    }
                }
            }
        }
        self.push(Op::AvgPool2 { x, c, d }, vec![c, h, h, h], out)
    }

    /// Nearest-neighbor upsampling; doubles each spatial dim.
    pub fn upsample2(&mut self, x: VarId) -> VarId {
        let (c, d) = (self.nodes[x].shape[0], self.nodes[x].shape[1]);
        let u = d * 2;
        let xv = &self.nodes[x].value;
        let mut out = vec![0.0; c * u * u * u];
        for ch in 0..c {
            let xb = ch * d * d * d;
            let ob = ch * u * u * u;
            for a in 0..u {
                for b in 0..u {
                    for cc in 0..u {
                        out[ob + a * u * u + b * u + cc] =
                            xv[xb + (a / 2) * d * d + (b / 2) * d + cc / 2];
                    }
                }
            }
        }
        self.push(Op::Upsample2 { x, c, d }, vec![c, u, u, u], out)
    }

    pub fn silu(&mut self, x: VarId) -> VarId {
        let v: Vec<f64> = self.nodes[x].value.iter().map(|&t| t * sigmoid(t)).collect();
        let shape = self.nodes[x].shape.clone();
        self.push(Op::Silu { x }, shape, v)
    }

    pub fn sigmoid_op(&mut self, x: VarId) -> VarId {
        let v: Vec<f64> = self.nodes[x].value.iter().map(|&t| sigmoid(t)).collect();
        let shape = self.nodes[x].shape.clone();
        self.push(Op::Sigmoid { x }, shape, v)
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        debug_assert_eq!(self.nodes[a].shape, self.nodes[b].shape);
        let v: Vec<f64> = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(&p, &q)| p + q)
            .collect();
        let shape = self.nodes[a].shape.clone();
        self.push(Op::Add { a, b }, shape, v)
    }

    /// Affine map over the last axis of a `[rows, cin]` matrix (or a bare
    /// `[cin]` vector, treated as one row).
    pub fn linear(&mut self, x: VarId, w: VarId, b: VarId) -> VarId {
        let (rows, cin) = match self.nodes[x].shape.as_slice() {
            [r, c] => (*r, *c),
            [c] => (1, *c),
            s => panic!("linear expects vector or matrix, got {s:?}"),
        };
        let cout = self.nodes[w].shape[1];
        debug_assert_eq!(self.nodes[w].shape, vec![cin, cout]);
        debug_assert_eq!(self.nodes[b].shape, vec![cout]);
        let xv = &self.nodes[x].value;
        let wv = &self.nodes[w].value;
        let bv = &self.nodes[b].value;
        let mut out = vec![0.0; rows * cout];
        for r in 0..rows {
            let o = &mut out[r * cout..(r + 1) * cout];
            o.copy_from_slice(bv);
            for i in 0..cin {
                let xi = xv[r * cin + i];
                if xi == 0.0 {
                    continue;
                }
                let wr = &wv[i * cout..(i + 1) * cout];
                for j in 0..cout {
                    o[j] += xi * wr[j];
                }
            }
        }
        let shape = if self.nodes[x].shape.len() == 1 { vec![cout] } else { vec![rows, cout] };
        self.push(Op::Linear { x, w, b, rows, cin, cout }, shape, out)
    }

    /// Row-wise layer normalization of a `[rows, cols]` matrix.
    pub fn layer_norm(&mut self, x: VarId, gamma: VarId, beta: VarId) -> VarId {
        let (rows, cols) = match self.nodes[x].shape.as_slice() {
            [r, c] => (*r, *c),
            [c] => (1, *c),
            s => panic!("layer_norm expects vector or matrix, got {s:?}"),
        };
        debug_assert_eq!(self.nodes[gamma].shape, vec![cols]);
        debug_assert_eq!(self.nodes[beta].shape, vec![cols]);
        const EPS: f64 = 1e-5;
        let xv = &self.nodes[x].value;
        let gv = &self.nodes[gamma].value;
        let bv = &self.nodes[beta].value;
        let mut out = vec![0.0; rows * cols];
        let mut aux = vec![0.0; rows * (cols + 1)];
        for r in 0..rows {
            let row = &xv[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + EPS).sqrt();
            for j in 0..cols {
                let xhat = (row[j] - mean) * inv;
                aux[r * (cols + 1) + j] = xhat;
                out[r * cols + j] = gv[j] * xhat + bv[j];
            }
            aux[r * (cols + 1) + cols] = inv;
        }
        let shape = self.nodes[x].shape.clone();
        self.push(Op::LayerNorm { x, gamma, beta, rows, cols, aux }, shape, out)
    }

    /// Group normalization of a `[c, d, d, d]` volume: statistics per group
    /// of `c / groups` channels, learned per-channel scale and shift.
    pub fn group_norm(&mut self, x: VarId, gamma: VarId, beta: VarId, groups: usize) -> VarId {
        let (c, d) = (self.nodes[x].shape[0], self.nodes[x].shape[1]);
        debug_assert!(c % groups == 0);
        debug_assert_eq!(self.nodes[gamma].shape, vec![c]);
        debug_assert_eq!(self.nodes[beta].shape, vec![c]);
        const EPS: f64 = 1e-5;
        let vol = d * d * d;
        let gsize = (c / groups) * vol;
        let xv = &self.nodes[x].value;
        let gv = &self.nodes[gamma].value;
        let bv = &self.nodes[beta].value;
        let mut out = vec![0.0; c * vol];
        let mut aux = vec![0.0; c * vol + groups];
        for g in 0..groups {
            let base = g * gsize;
            let span = &xv[base..base + gsize];
            let mean = span.iter().sum::<f64>() / gsize as f64;
            let var = span.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / gsize as f64;
            let inv = 1.0 / (var + EPS).sqrt();
            aux[c * vol + g] = inv;
            for i in 0..gsize {
                let idx = base + i;
                let ch = idx / vol;
                let xhat = (xv[idx] - mean) * inv;
                aux[idx] = xhat;
                out[idx] = gv[ch] * xhat + bv[ch];
            }
        }
        let shape = self.nodes[x].shape.clone();
        self.push(Op::GroupNorm { x, gamma, beta, groups, c, d, aux }, shape, out)
    }

    /// Causal multi-head attention. `q`, `k`, `v` are `[rows, cols]` with
    /// `cols` divisible by `heads`. Entries above the diagonal are never
    /// computed; row i attends to positions 0..=i only.
    pub fn causal_attend(&mut self, q: VarId, k: VarId, v: VarId, heads: usize) -> VarId {
        let (rows, cols) = (self.nodes[q].shape[0], self.nodes[q].shape[1]);
        debug_assert_eq!(self.nodes[k].shape, vec![rows, cols]);
        debug_assert_eq!(self.nodes[v].shape, vec![rows, cols]);
        debug_assert!(cols % heads == 0);
        let hd = cols / heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let qv = &self.nodes[q].value;
        let kv = &self.nodes[k].value;
        let vv = &self.nodes[v].value;
        let tri = rows * (rows + 1) / 2;
        let mut probs = vec![0.0; heads * tri];
        let mut out = vec![0.0; rows * cols];
        let mut scores = vec![0.0; rows];
        for h in 0..heads {
            let hb = h * hd;
            for i in 0..rows {
                for j in 0..=i {
                    let mut s = 0.0;
                    for dpos in 0..hd {
                        s += qv[i * cols + hb + dpos] * kv[j * cols + hb + dpos];
                    }
                    scores[j] = s * scale;
                }
                let m = scores[..=i].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for sc in scores[..=i].iter_mut() {
                    *sc = (*sc - m).exp();
                    z += *sc;
                }
                let pb = h * tri + i * (i + 1) / 2;
                for j in 0..=i {
                    let p = scores[j] / z;
                    probs[pb + j] = p;
                    for dpos in 0..hd {
                        out[i * cols + hb + dpos] += p * vv[j * cols + hb + dpos];
                    }
                }
            }
        }
        self.push(
            Op::CausalAttend { q, k, v, heads, rows, cols, probs },
            vec![rows, cols],
            out,
        )
    }

    /// Stack `[cols]` vectors into a `[rows, cols]` matrix.
    pub fn stack_rows(&mut self, rows: &[VarId]) -> VarId {
        let cols = self.nodes[rows[0]].shape[0];
        let mut out = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            debug_assert_eq!(self.nodes[r].shape, vec![cols]);
            out.extend_from_slice(&self.nodes[r].value);
        }
        let n = rows.len();
        self.push(Op::StackRows { rows: rows.to_vec(), cols }, vec![n, cols], out)
    }

    pub fn select_row(&mut self, x: VarId, row: usize) -> VarId {
        let cols = self.nodes[x].shape[1];
        let v = self.nodes[x].value[row * cols..(row + 1) * cols].to_vec();
        self.push(Op::SelectRow { x, row, cols }, vec![cols], v)
    }

    pub fn reshape(&mut self, x: VarId, shape: Vec<usize>) -> VarId {
        debug_assert_eq!(shape.iter().product::<usize>(), self.nodes[x].value.len());
        let v = self.nodes[x].value.clone();
        self.push(Op::Reshape { x }, shape, v)
    }

    pub fn sum_all(&mut self, x: VarId) -> VarId {
        let s = self.nodes[x].value.iter().sum();
        self.push(Op::SumAll { x }, vec![1], vec![s])
    }

    /// Soft dice loss over the selected level rows of a `[levels, vol]`
    /// probability tensor, averaged unweighted across the selection.
    pub fn dice_loss(&mut self, pred: VarId, target: &[f64], levels: &[usize]) -> VarId {
        let vol = self.nodes[pred].shape[1];
        debug_assert_eq!(target.len(), self.nodes[pred].value.len());
        let pv = &self.nodes[pred].value;
        let mut total = 0.0;
        for &l in levels {
            let p = &pv[l * vol..(l + 1) * vol];
            let y = &target[l * vol..(l + 1) * vol];
            let mut inter = 0.0;
            let mut psum = 0.0;
            let mut ysum = 0.0;
            for i in 0..vol {
                inter += p[i] * y[i];
                psum += p[i];
                ysum += y[i];
            }
            total += 1.0 - 2.0 * inter / (psum + ysum + 1.0);
        }
        let v = total / levels.len() as f64;
        self.push(
            Op::DiceLoss { pred, target: target.to_vec(), levels: levels.to_vec(), vol },
            vec![1],
            vec![v],
        )
    }

    /// Mean binary cross-entropy over the selected level rows, probabilities
    /// clamped to `[eps, 1 - eps]`.
    pub fn bce_loss(&mut self, pred: VarId, target: &[f64], levels: &[usize]) -> VarId {
        let vol = self.nodes[pred].shape[1];
        debug_assert_eq!(target.len(), self.nodes[pred].value.len());
        let pv = &self.nodes[pred].value;
        let mut total = 0.0;
        for &l in levels {
            for i in 0..vol {
                let p = pv[l * vol + i].clamp(BCE_EPS, 1.0 - BCE_EPS);
                let y = target[l * vol + i];
                total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
            }
        }
        let v = total / (levels.len() * vol) as f64;
        self.push(
            Op::BceLoss { pred, target: target.to_vec(), levels: levels.to_vec(), vol },
            vec![1],
            vec![v],
        )
    }

    /// Reverse pass from a scalar node. Returns per-node gradients; parameter
    /// gradients are read out by the caller via leaf `param` slots.
    pub fn backward(&self, loss: VarId) -> Gradients {
        debug_assert_eq!(self.nodes[loss].value.len(), 1);
        let mut grads: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.value.len()]).collect();
        grads[loss][0] = 1.0;
        for id in (0..=loss).rev() {
            let g = std::mem::take(&mut grads[id]);
            if g.iter().all(|&v| v == 0.0) {
                grads[id] = g;
                continue;
            }
            self.backprop_node(id, &g, &mut grads);
            grads[id] = g;
        }
        Gradients { grads }
    }

    fn backprop_node(&self, id: VarId, g: &[f64], grads: &mut [Vec<f64>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf { .. } => {}
            Op::Conv3d { x, w, b, cin, cout, d } => {
                let (cin, cout, d) = (*cin, *cout, *d);
                let vol = d * d * d;
                let pd = d + 2;
                let pvol = pd * pd * pd;
                let xp = pad3(&self.nodes[*x].value, cin, d);
                let wv = &self.nodes[*w].value;
                // Bias gradient.
                for co in 0..cout {
                    let s: f64 = g[co * vol..(co + 1) * vol].iter().sum();
                    grads[*b][co] += s;
                }
                // Weight gradient and padded input gradient share the loop.
                let mut dxp = vec![0.0; cin * pvol];
                for co in 0..cout {
                    let go = &g[co * vol..(co + 1) * vol];
                    for ci in 0..cin {
                        let xc = &xp[ci * pvol..(ci + 1) * pvol];
                        let dxc = &mut dxp[ci * pvol..(ci + 1) * pvol];
                        let wb = (co * cin + ci) * 27;
                        for ka in 0..3 {
                            for kb in 0..3 {
                                for kc in 0..3 {
                                    let widx = wb + (ka * 3 + kb) * 3 + kc;
                                    let wk = wv[widx];
                                    let mut dw = 0.0;
                                    for a in 0..d {
                                        for bq in 0..d {
                                            let ob = a * d * d + bq * d;
                                            let ib = (a + ka) * pd * pd + (bq + kb) * pd + kc;
                                            let gr = &go[ob..ob + d];
                                            let xr = &xc[ib..ib + d];
                                            let dxr = &mut dxc[ib..ib + d];
                                            for c in 0..d {
                                                dw += gr[c] * xr[c];
                                                dxr[c] += wk * gr[c];
                                            }
                                        }
                                    }
                                    grads[*w][widx] += dw;
                                }
                            }
                        }
                    }
                }
                // Crop padding off the input gradient.
                let gx = &mut grads[*x];
                for ci in 0..cin {
                    for a in 0..d {
                        for bq in 0..d {
                            let src = ci * pvol + (a + 1) * pd * pd + (bq + 1) * pd + 1;
                            let dst = ci * vol + a * d * d + bq * d;
                            for c in 0..d {
                                gx[dst + c] += dxp[src + c];
                            }
                        }
                    }
                }
            }
            Op::AvgPool2 { x, c, d } => {
                let (c, d) = (*c, *d);
                let h = d / 2;
                let gx = &mut grads[*x];
                for ch in 0..c {
                    let xb = ch * d * d * d;
                    let ob = ch * h * h * h;
                    for a in 0..h {
                        for b in 0..h {
                            for cc in 0..h {
                                let gv = g[ob + a * h * h + b * h + cc] / 8.0;
                                for da in 0..2 {
                                    for db in 0..2 {
                                        for dc in 0..2 {
                                            gx[xb + (2 * a + da) * d * d + (2 * b + db) * d + 2 * cc + dc] += gv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Upsample2 { x, c, d } => {
                let (c, d) = (*c, *d);
                let u = d * 2;
                let gx = &mut grads[*x];
                for ch in 0..c {
                    let xb = ch * d * d * d;
                    let ob = ch * u * u * u;
                    for a in 0..u {
                        for b in 0..u {
                            for cc in 0..u {
                                gx[xb + (a / 2) * d * d + (b / 2) * d + cc / 2] +=
                                    g[ob + a * u * u + b * u + cc];
                            }
                        }
                    }
                }
            }
            Op::Silu { x } => {
                let xv = &self.nodes[*x].value;
                let gx = &mut grads[*x];
                for i in 0..g.len() {
                    let s = sigmoid(xv[i]);
                    gx[i] += g[i] * s * (1.0 + xv[i] * (1.0 - s));
                }
            }
            Op::Sigmoid { x } => {
                let yv = &node.value;
                let gx = &mut grads[*x];
                for i in 0..g.len() {
                    gx[i] += g[i] * yv[i] * (1.0 - yv[i]);
                }
            }
            Op::Add { a, b } => {
                for (dst, gv) in grads[*a].iter_mut().zip(g) {
                    *dst += gv;
                }
                for (dst, gv) in grads[*b].iter_mut().zip(g) {
                    *dst += gv;
                }
            }
            Op::Linear { x, w, b, rows, cin, cout } => {
                let (rows, cin, cout) = (*rows, *cin, *cout);
                let xv = &self.nodes[*x].value;
                let wv = &self.nodes[*w].value;
                for r in 0..rows {
                    let gr = &g[r * cout..(r + 1) * cout];
                    for j in 0..cout {
                        grads[*b][j] += gr[j];
                    }
                    for i in 0..cin {
                        let xi = xv[r * cin + i];
                        let wr = &wv[i * cout..(i + 1) * cout];
                        let mut dx = 0.0;
                        for j in 0..cout {
                            dx += gr[j] * wr[j];
                            grads[*w][i * cout + j] += gr[j] * xi;
                        }
                        grads[*x][r * cin + i] += dx;
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, rows, cols, aux } => {
                let (rows, cols) = (*rows, *cols);
                let gv = &self.nodes[*gamma].value;
                let n = cols as f64;
                for r in 0..rows {
                    let xhat = &aux[r * (cols + 1)..r * (cols + 1) + cols];
                    let inv = aux[r * (cols + 1) + cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for j in 0..cols {
                        let dxhat = gr[j] * gv[j];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat[j];
                        grads[*gamma][j] += gr[j] * xhat[j];
                        grads[*beta][j] += gr[j];
                    }
                    for j in 0..cols {
                        let dxhat = gr[j] * gv[j];
                        grads[*x][r * cols + j] +=
                            inv * (dxhat - sum_dxhat / n - xhat[j] * sum_dxhat_xhat / n);
                    }
                }
            }
            Op::GroupNorm { x, gamma, beta, groups, c, d, aux } => {
                let (groups, c, d) = (*groups, *c, *d);
                let vol = d * d * d;
                let gsize = (c / groups) * vol;
                let gv = &self.nodes[*gamma].value;
                let n = gsize as f64;
                for grp in 0..groups {
                    let base = grp * gsize;
                    let inv = aux[c * vol + grp];
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for i in 0..gsize {
                        let idx = base + i;
                        let ch = idx / vol;
                        let dxhat = g[idx] * gv[ch];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * aux[idx];
                        grads[*gamma][ch] += g[idx] * aux[idx];
                        grads[*beta][ch] += g[idx];
                    }
                    for i in 0..gsize {
                        let idx = base + i;
                        let ch = idx / vol;
                        let dxhat = g[idx] * gv[ch];
                        grads[*x][idx] +=
                            inv * (dxhat - sum_dxhat / n - aux[idx] * sum_dxhat_xhat / n);
                    }
                }
            }
            Op::CausalAttend { q, k, v, heads, rows, cols, probs } => {
                let (heads, rows, cols) = (*heads, *rows, *cols);
                let hd = cols / heads;
                let scale = 1.0 / (hd as f64).sqrt();
                let tri = rows * (rows + 1) / 2;
                let qv = &self.nodes[*q].value;
                let kv = &self.nodes[*k].value;
                let vv = &self.nodes[*v].value;
                let mut dp = vec![0.0; rows];
                let mut ds = vec![0.0; rows];
                for h in 0..heads {
                    let hb = h * hd;
                    for i in 0..rows {
                        let pb = h * tri + i * (i + 1) / 2;
                        let go = &g[i * cols + hb..i * cols + hb + hd];
                        // dL/dv and dL/dp.
                        let mut pdp = 0.0;
                        for j in 0..=i {
                            let p = probs[pb + j];
                            let mut acc = 0.0;
                            for dpos in 0..hd {
                                acc += go[dpos] * vv[j * cols + hb + dpos];
                                grads[*v][j * cols + hb + dpos] += p * go[dpos];
                            }
                            dp[j] = acc;
                            pdp += p * acc;
                        }
                        // Softmax Jacobian, then q and k gradients.
                        for j in 0..=i {
                            let p = probs[pb + j];
                            ds[j] = p * (dp[j] - pdp);
                        }
                        for j in 0..=i {
                            let dsj = ds[j] * scale;
                            for dpos in 0..hd {
                                grads[*q][i * cols + hb + dpos] += dsj * kv[j * cols + hb + dpos];
                                grads[*k][j * cols + hb + dpos] += dsj * qv[i * cols + hb + dpos];
                            }
                        }
                    }
                }
            }
            Op::StackRows { rows, cols } => {
                for (idx, &r) in rows.iter().enumerate() {
                    for j in 0..*cols {
                        grads[r][j] += g[idx * cols + j];
                    }
                }
            }
            Op::SelectRow { x, row, cols } => {
                for j in 0..*cols {
                    grads[*x][row * cols + j] += g[j];
                }
            }
            Op::Reshape { x } => {
                for (dst, gv) in grads[*x].iter_mut().zip(g) {
                    *dst += gv;
                }
            }
            Op::SumAll { x } => {
                for dst in grads[*x].iter_mut() {
                    *dst += g[0];
                }
            }
            Op::DiceLoss { pred, target, levels, vol } => {
                let pv = &self.nodes[*pred].value;
                let gl = g[0] / levels.len() as f64;
                for &l in levels {
                    let p = &pv[l * vol..(l + 1) * vol];
                    let y = &target[l * vol..(l + 1) * vol];
                    let mut inter = 0.0;
                    let mut psum = 0.0;
                    let mut ysum = 0.0;
                    for i in 0..*vol {
                        inter += p[i] * y[i];
                        psum += p[i];
                        ysum += y[i];
                    }
                    let den = psum + ysum + 1.0;
                    let gp = &mut grads[*pred][l * vol..(l + 1) * vol];
                    for i in 0..*vol {
                        gp[i] += gl * (-2.0 * y[i] / den + 2.0 * inter / (den * den));
                    }
                }
            }
            Op::BceLoss { pred, target, levels, vol } => {
                let pv = &self.nodes[*pred].value;
                let gl = g[0] / (levels.len() * vol) as f64;
                for &l in levels {
                    let gp = &mut grads[*pred][l * vol..(l + 1) * vol];
                    for i in 0..*vol {
                        let raw = pv[l * vol + i];
                        if raw <= BCE_EPS || raw >= 1.0 - BCE_EPS {
                            continue;
                        }
                        let y = target[l * vol + i];
                        gp[i] += gl * (-y / raw + (1.0 - y) / (1.0 - raw));
                    }
                }
            }
        }
    }

    /// Collect parameter gradients into `out[slot]` after a backward pass.
    pub fn export_param_grads(&self, grads: &Gradients, out: &mut [Vec<f64>]) {
        for (id, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(slot) } = node.op {
                let dst = &mut out[slot];
                for (d, s) in dst.iter_mut().zip(&grads.grads[id]) {
                    *d += s;
                }
            }
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-node gradient buffers from one backward pass.
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn of(&self, id: VarId) -> &[f64] {
        &self.grads[id]
    }
}

/// Zero-pad each channel of a `[c, d, d, d]` volume by one cell per face.
fn pad3(x: &[f64], c: usize, d: usize) -> Vec<f64> {
    let pd = d + 2;
    let mut out = vec![0.0; c * pd * pd * pd];
    for ch in 0..c {
        let xb = ch * d * d * d;
        let ob = ch * pd * pd * pd;
        for a in 0..d {
            for b in 0..d {
                let src = xb + a * d * d + b * d;
                let dst = ob + (a + 1) * pd * pd + (b + 1) * pd + 1;
                out[dst..dst + d].copy_from_slice(&x[src..src + d]);
            }
        }
    }
    out
}
