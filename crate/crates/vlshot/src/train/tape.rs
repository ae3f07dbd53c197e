//! Minimal reverse-mode autodiff over f64 vectors.
//!
//! Training needs exact, reproducible gradients for a handful of operations
//! (affine layers, feature normalization, tanh, cosine scoring, softmax
//! cross-entropy), not a tensor framework. Nodes live in an append-only
//! arena; values are computed eagerly on construction and gradients by one
//! reverse sweep. Everything is plain `f64` arithmetic in a fixed order, so
//! two runs over the same data produce bit-identical results.

use crate::{Error, Result};

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// y = W x with W row-major `[rows * cols]`.
    MatVec { w: NodeId, x: NodeId, rows: usize, cols: usize },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    /// y = s · v with s a length-1 node.
    Scale { s: NodeId, v: NodeId },
    Tanh { x: NodeId },
    /// y = γ ⊙ (x − μ)/σ + β over the feature dimension.
    FeatureNorm { x: NodeId, gain: NodeId, shift: NodeId, eps: f64 },
    /// y = x / ‖x‖₂.
    L2Normalize { x: NodeId },
    /// Scalar product (length-1 output).
    Dot { a: NodeId, b: NodeId },
    Concat { parts: Vec<NodeId> },
    /// −log softmax(logits)[target] (length-1 output).
    SoftmaxCrossEntropy { logits: NodeId, target: usize },
    /// Mean of length-1 nodes (length-1 output).
    Mean { parts: Vec<NodeId> },
}

struct Node {
    value: Vec<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients from a backward sweep.
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn of(&self, id: NodeId) -> &[f64] {
        &self.grads[id]
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].value
    }

    /// Value of a length-1 node.
    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        let v = &self.nodes[id].value;
        if v.len() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "expected scalar node, found length {}",
                v.len()
            )));
        }
        Ok(v[0])
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    fn len_of(&self, id: NodeId) -> usize {
        self.nodes[id].value.len()
    }

    fn check_same_len(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        if self.len_of(a) != self.len_of(b) {
            return Err(Error::ShapeMismatch(format!(
                "{what} of lengths {} and {}",
                self.len_of(a),
                self.len_of(b)
            )));
        }
        Ok(())
    }

    pub fn leaf(&mut self, value: Vec<f64>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn scalar_leaf(&mut self, value: f64) -> NodeId {
        self.push(vec![value], Op::Leaf)
    }

    pub fn matvec(&mut self, w: NodeId, rows: usize, cols: usize, x: NodeId) -> Result<NodeId> {
        if self.len_of(w) != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "weight of length {} for {rows}x{cols}",
                self.len_of(w)
            )));
        }
        if self.len_of(x) != cols {
            return Err(Error::ShapeMismatch(format!(
                "input of length {} for {rows}x{cols}",
                self.len_of(x)
            )));
        }
        let wv = &self.nodes[w].value;
        let xv = &self.nodes[x].value;
        let mut y = vec![0.0; rows];
        for r in 0..rows {
            let mut acc = 0.0;
            for c in 0..cols {
                acc += wv[r * cols + c] * xv[c];
            }
            y[r] = acc;
        }
        Ok(self.push(y, Op::MatVec { w, x, rows, cols }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_len(a, b, "add")?;
        let v: Vec<f64> = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(v, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_len(a, b, "sub")?;
        let v: Vec<f64> = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(x, y)| x - y)
            .collect();
        Ok(self.push(v, Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_len(a, b, "mul")?;
        let v: Vec<f64> = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(v, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, s: NodeId, v: NodeId) -> Result<NodeId> {
        if self.len_of(s) != 1 {
            return Err(Error::ShapeMismatch(format!(
                "scale factor must be scalar, found length {}",
                self.len_of(s)
            )));
        }
        let sv = self.nodes[s].value[0];
        let out: Vec<f64> = self.nodes[v].value.iter().map(|x| sv * x).collect();
        Ok(self.push(out, Op::Scale { s, v }))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v: Vec<f64> = self.nodes[x].value.iter().map(|t| t.tanh()).collect();
        self.push(v, Op::Tanh { x })
    }

    pub fn feature_norm(&mut self, x: NodeId, gain: NodeId, shift: NodeId) -> Result<NodeId> {
        const EPS: f64 = 1e-5;
        self.check_same_len(x, gain, "feature norm gain")?;
        self.check_same_len(x, shift, "feature norm shift")?;
        let xv = &self.nodes[x].value;
        let n = xv.len() as f64;
        let mean = xv.iter().sum::<f64>() / n;
        let var = xv.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sigma = (var + EPS).sqrt();
        let gv = &self.nodes[gain].value;
        let bv = &self.nodes[shift].value;
        let out: Vec<f64> = xv
            .iter()
            .zip(gv.iter().zip(bv))
            .map(|(v, (g, b))| g * (v - mean) / sigma + b)
            .collect();
        Ok(self.push(out, Op::FeatureNorm { x, gain, shift, eps: EPS }))
    }

    pub fn l2_normalize(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = &self.nodes[x].value;
        let norm = xv.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm <= 0.0 {
            return Err(Error::Encoder(format!(
                "cannot normalize tape vector with norm {norm}"
            )));
        }
        let out: Vec<f64> = xv.iter().map(|v| v / norm).collect();
        Ok(self.push(out, Op::L2Normalize { x }))
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_len(a, b, "dot")?;
        let v: f64 = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(x, y)| x * y)
            .sum();
        Ok(self.push(vec![v], Op::Dot { a, b }))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::InvalidInput("concat of zero nodes".into()));
        }
        let mut v = Vec::new();
        for &p in parts {
            v.extend_from_slice(&self.nodes[p].value);
        }
        Ok(self.push(v, Op::Concat { parts: parts.to_vec() }))
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        let lv = &self.nodes[logits].value;
        if target >= lv.len() {
            return Err(Error::InvalidInput(format!(
                "cross-entropy target {target} out of range for {} logits",
                lv.len()
            )));
        }
        let max = lv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_sum: f64 = lv.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
        let loss = log_sum - lv[target];
        Ok(self.push(vec![loss], Op::SoftmaxCrossEntropy { logits, target }))
    }

    pub fn mean_of(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::InvalidInput("mean of zero nodes".into()));
        }
        for &p in parts {
            if self.len_of(p) != 1 {
                return Err(Error::ShapeMismatch(
                    "mean_of expects scalar nodes".into(),
                ));
            }
        }
        let v = parts.iter().map(|&p| self.nodes[p].value[0]).sum::<f64>() / parts.len() as f64;
        Ok(self.push(vec![v], Op::Mean { parts: parts.to_vec() }))
    }

    /// One reverse sweep from a scalar loss node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.len_of(loss) != 1 {
            return Err(Error::ShapeMismatch(format!(
                "backward from node of length {}",
                self.len_of(loss)
            )));
        }
        let mut grads: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.value.len()])
            .collect();
        grads[loss][0] = 1.0;

        for id in (0..=loss).rev() {
            // nodes after `loss` cannot influence it; ids are topological
            let g = std::mem::take(&mut grads[id]);
            if g.iter().all(|x| *x == 0.0) {
                grads[id] = g;
                continue;
            }
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::MatVec { w, x, rows, cols } => {
                    let wv = &self.nodes[*w].value;
                    let xv = &self.nodes[*x].value;
                    for r in 0..*rows {
                        for c in 0..*cols {
                            grads[*w][r * cols + c] += g[r] * xv[c];
                        }
                    }
                    for c in 0..*cols {
                        let mut acc = 0.0;
                        for r in 0..*rows {
                            acc += g[r] * wv[r * cols + c];
                        }
                        grads[*x][c] += acc;
                    }
                }
                Op::Add { a, b } => {
                    for (i, gi) in g.iter().enumerate() {
                        grads[*a][i] += gi;
                        grads[*b][i] += gi;
                    }
                }
                Op::Sub { a, b } => {
                    for (i, gi) in g.iter().enumerate() {
                        grads[*a][i] += gi;
                        grads[*b][i] -= gi;
                    }
                }
                Op::Mul { a, b } => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    for (i, gi) in g.iter().enumerate() {
                        grads[*a][i] += gi * bv[i];
                        grads[*b][i] += gi * av[i];
                    }
                }
                Op::Scale { s, v } => {
                    let sv = self.nodes[*s].value[0];
                    let vv = &self.nodes[*v].value;
                    let mut ds = 0.0;
                    for (i, gi) in g.iter().enumerate() {
                        ds += gi * vv[i];
                        grads[*v][i] += gi * sv;
                    }
                    grads[*s][0] += ds;
                }
                Op::Tanh { x } => {
                    let yv = &self.nodes[id].value;
                    for (i, gi) in g.iter().enumerate() {
                        grads[*x][i] += gi * (1.0 - yv[i] * yv[i]);
                    }
                }
                Op::FeatureNorm { x, gain, shift, eps } => {
                    let xv = &self.nodes[*x].value;
                    let gv = &self.nodes[*gain].value;
                    let n = xv.len() as f64;
                    let mean = xv.iter().sum::<f64>() / n;
                    let var = xv.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    let sigma = (var + eps).sqrt();
                    let xhat: Vec<f64> = xv.iter().map(|v| (v - mean) / sigma).collect();
                    let dxhat: Vec<f64> =
                        g.iter().zip(gv).map(|(gi, gam)| gi * gam).collect();
                    let mean_dxhat = dxhat.iter().sum::<f64>() / n;
                    let mean_dxhat_xhat =
                        dxhat.iter().zip(&xhat).map(|(d, h)| d * h).sum::<f64>() / n;
                    for i in 0..xv.len() {
                        grads[*gain][i] += g[i] * xhat[i];
                        grads[*shift][i] += g[i];
                        grads[*x][i] +=
                            (dxhat[i] - mean_dxhat - xhat[i] * mean_dxhat_xhat) / sigma;
                    }
                }
                Op::L2Normalize { x } => {
                    let yv = &self.nodes[id].value;
                    let xv = &self.nodes[*x].value;
                    let norm = xv.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let gy: f64 = g.iter().zip(yv).map(|(gi, yi)| gi * yi).sum();
                    for i in 0..xv.len() {
                        grads[*x][i] += (g[i] - yv[i] * gy) / norm;
                    }
                }
                Op::Dot { a, b } => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    for i in 0..av.len() {
                        grads[*a][i] += g[0] * bv[i];
                        grads[*b][i] += g[0] * av[i];
                    }
                }
                Op::Concat { parts } => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.nodes[p].value.len();
                        for i in 0..len {
                            grads[p][i] += g[offset + i];
                        }
                        offset += len;
                    }
                }
                Op::SoftmaxCrossEntropy { logits, target } => {
                    let lv = &self.nodes[*logits].value;
                    let max = lv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = lv.iter().map(|l| (l - max).exp()).collect();
                    let sum: f64 = exps.iter().sum();
                    for i in 0..lv.len() {
                        let p = exps[i] / sum;
                        let indicator = if i == *target { 1.0 } else { 0.0 };
                        grads[*logits][i] += g[0] * (p - indicator);
                    }
                }
                Op::Mean { parts } => {
                    let share = g[0] / parts.len() as f64;
                    for &p in parts {
                        grads[p][0] += share;
                    }
                }
            }
            grads[id] = g;
        }
        Ok(Gradients { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Builds a composite function exercising every op, returning the loss
    /// node and the leaf ids in declaration order.
    fn composite(tape: &mut Tape, values: &[Vec<f64>]) -> (NodeId, Vec<NodeId>) {
        let leaves: Vec<NodeId> = values.iter().map(|v| tape.leaf(v.clone())).collect();
        let [w1, b1, gain, shift, w2, b2, s, xi, xt1, xt2, aux] =
            leaves[..11].try_into().expect("11 leaves");

        let tower = |tape: &mut Tape, x: NodeId| -> NodeId {
            let h = tape.matvec(w1, 4, 4, x).unwrap();
            let h = tape.add(h, b1).unwrap();
            let h = tape.feature_norm(h, gain, shift).unwrap();
            let h = tape.tanh(h);
            let h = tape.matvec(w2, 4, 4, h).unwrap();
            let h = tape.add(h, b2).unwrap();
            tape.l2_normalize(h).unwrap()
        };

        let ei = tower(tape, xi);
        let e1 = tower(tape, xt1);
        let e2 = tower(tape, xt2);
        let c1 = tape.dot(ei, e1).unwrap();
        let c2 = tape.dot(ei, e2).unwrap();
        let logits = tape.concat(&[c1, c2]).unwrap();
        let logits = tape.scale(s, logits).unwrap();
        let ce = tape.softmax_cross_entropy(logits, 0).unwrap();

        // fusion-style auxiliary term: [e1, e2, e1+e2, e1−e2, e1⊙e2] · aux
        let sum = tape.add(e1, e2).unwrap();
        let diff = tape.sub(e1, e2).unwrap();
        let prod = tape.mul(e1, e2).unwrap();
        let fused = tape.concat(&[e1, e2, sum, diff, prod]).unwrap();
        let aux_term = tape.dot(fused, aux).unwrap();

        let loss = tape.mean_of(&[ce, aux_term]).unwrap();
        (loss, leaves)
    }

    fn seed_values() -> Vec<Vec<f64>> {
        // fixed, mildly irregular values; nothing symmetric enough to hide a
        // wrong sign or a missing term
        let mut vals = Vec::new();
        let mut x = 0.37_f64;
        let mut draw = |n: usize, scale: f64| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    x = (x * 9301.0 + 0.49297).fract();
                    (x - 0.5) * 2.0 * scale
                })
                .collect()
        };
        vals.push(draw(16, 0.8)); // w1
        vals.push(draw(4, 0.3)); // b1
        vals.push(draw(4, 0.5).iter().map(|v| 1.0 + v).collect()); // gain near 1
        vals.push(draw(4, 0.3)); // shift
        vals.push(draw(16, 0.8)); // w2
        vals.push(draw(4, 0.3)); // b2
        vals.push(vec![3.7]); // scale
        vals.push(draw(4, 1.0)); // image features
        vals.push(draw(4, 1.0)); // text features 1
        vals.push(draw(4, 1.0)); // text features 2
        vals.push(draw(20, 0.6)); // aux weights
        vals
    }

    #[test]
    fn gradients_match_central_differences() {
        let base = seed_values();
        let mut tape = Tape::new();
        let (loss, leaves) = composite(&mut tape, &base);
        let grads = tape.backward(loss).unwrap();

        let eval = |vals: &[Vec<f64>]| -> f64 {
            let mut t = Tape::new();
            let (l, _) = composite(&mut t, vals);
            t.scalar(l).unwrap()
        };

        let h = 1e-5;
        let mut checked = 0usize;
        for (li, leaf) in leaves.iter().enumerate() {
            for j in 0..base[li].len() {
                let mut plus = base.clone();
                plus[li][j] += h;
                let mut minus = base.clone();
                minus[li][j] -= h;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let ad = grads.of(*leaf)[j];
                let denom = fd.abs().max(ad.abs());
                if denom > 1e-6 {
                    let rel = (fd - ad).abs() / denom;
                    assert!(
                        rel <= 1e-4,
                        "leaf {li} component {j}: autodiff {ad} vs finite diff {fd} (rel {rel})"
                    );
                } else {
                    assert!(
                        (fd - ad).abs() <= 1e-6,
                        "leaf {li} component {j}: autodiff {ad} vs finite diff {fd}"
                    );
                }
                checked += 1;
            }
        }
        assert!(checked >= 80, "checked {checked} coordinates");
    }

    #[test]
    fn values_are_computed_eagerly_and_deterministically() {
        let base = seed_values();
        let mut t1 = Tape::new();
        let (l1, _) = composite(&mut t1, &base);
        let mut t2 = Tape::new();
        let (l2, _) = composite(&mut t2, &base);
        assert_eq!(
            t1.scalar(l1).unwrap().to_bits(),
            t2.scalar(l2).unwrap().to_bits()
        );
    }

    #[test]
    fn softmax_cross_entropy_matches_hand_computation() {
        let mut tape = Tape::new();
        let logits = tape.leaf(vec![2.0, 0.0, -1.0]);
        let loss = tape.softmax_cross_entropy(logits, 0).unwrap();
        let z: f64 = (0.0f64).exp() + (-2.0f64).exp() + (-3.0f64).exp();
        assert!((tape.scalar(loss).unwrap() - z.ln()).abs() < 1e-12);

        let grads = tape.backward(loss).unwrap();
        let p0 = 1.0 / z;
        assert!((grads.of(logits)[0] - (p0 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn shape_errors_are_rejected() {
        let mut tape = Tape::new();
        let a = tape.leaf(vec![1.0, 2.0]);
        let b = tape.leaf(vec![1.0, 2.0, 3.0]);
        assert!(tape.add(a, b).is_err());
        assert!(tape.dot(a, b).is_err());
        assert!(tape.matvec(a, 2, 2, b).is_err());
        let z = tape.leaf(vec![0.0, 0.0]);
        assert!(tape.l2_normalize(z).is_err());
        let l = tape.leaf(vec![1.0, 2.0]);
        assert!(tape.softmax_cross_entropy(l, 5).is_err());
        assert!(tape.backward(l).is_err(), "loss must be scalar");
    }

    #[test]
    fn gradient_flows_through_shared_subexpressions() {
        // y = x·x with both sides the same node: dy/dx = 2x
        let mut tape = Tape::new();
        let x = tape.leaf(vec![3.0, -2.0]);
        let y = tape.dot(x, x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.of(x), &[6.0, -4.0]);
    }
}
