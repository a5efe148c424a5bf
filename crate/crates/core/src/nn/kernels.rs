//! Per-sample forward/backward kernels over flat slices.

/// Dot product with four fixed accumulators (deterministic, vectorizable).
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    /// Input `[x, y, c]`.
    pub input: [usize; 3],
    /// Output `[x, y, c]`.
    pub output: [usize; 3],
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.input[2]
    }

    /// Copies the receptive field of output `(ox, oy)` into `patch` in
    /// `[kx, ky, c]` order, zero-filling padding.
    fn gather(&self, input: &[f64], ox: usize, oy: usize, patch: &mut [f64]) {
        let [ix_max, iy_max, cin] = self.input;
        let k = self.kernel;
        for kx in 0..k {
            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
            for ky in 0..k {
                let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                let dst = &mut patch[(kx * k + ky) * cin..(kx * k + ky + 1) * cin];
                if ix < 0 || iy < 0 || ix as usize >= ix_max || iy as usize >= iy_max {
                    dst.fill(0.0);
                } else {
                    let src = (ix as usize * iy_max + iy as usize) * cin;
                    dst.copy_from_slice(&input[src..src + cin]);
                }
            }
        }
    }

    /// Adds `dpatch` back onto `dinput` (the adjoint of `gather`).
    fn scatter(&self, dpatch: &[f64], ox: usize, oy: usize, dinput: &mut [f64]) {
        let [ix_max, iy_max, cin] = self.input;
        let k = self.kernel;
        for kx in 0..k {
            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
            if ix < 0 || ix as usize >= ix_max {
                continue;
            }
            for ky in 0..k {
                let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                if iy < 0 || iy as usize >= iy_max {
                    continue;
                }
                let dst = (ix as usize * iy_max + iy as usize) * cin;
                let src = &dpatch[(kx * k + ky) * cin..(kx * k + ky + 1) * cin];
                for (d, s) in dinput[dst..dst + cin].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
    }
}

pub fn conv_forward(g: &ConvGeom, input: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64]) {
    let plen = g.patch_len();
    let [ox_max, oy_max, cout] = g.output;
    let mut patch = vec![0.0; plen];
    for ox in 0..ox_max {
        for oy in 0..oy_max {
            g.gather(input, ox, oy, &mut patch);
            let dst = &mut out[(ox * oy_max + oy) * cout..(ox * oy_max + oy + 1) * cout];
            for (o, slot) in dst.iter_mut().enumerate() {
                *slot = bias[o] + dot(&weight[o * plen..(o + 1) * plen], &patch);
            }
        }
    }
}

/// Accumulates weight/bias gradients and, when `dinput` is given, the
/// gradient with respect to the input.
pub fn conv_backward(
    g: &ConvGeom,
    input: &[f64],
    weight: &[f64],
    dout: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
    mut dinput: Option<&mut [f64]>,
) {
    let plen = g.patch_len();
    let [ox_max, oy_max, cout] = g.output;
    let mut patch = vec![0.0; plen];
    let mut dpatch = vec![0.0; plen];
    for ox in 0..ox_max {
        for oy in 0..oy_max {
            let grads = &dout[(ox * oy_max + oy) * cout..(ox * oy_max + oy + 1) * cout];
            if grads.iter().all(|&d| d == 0.0) {
                continue;
            }
            g.gather(input, ox, oy, &mut patch);
            dpatch.fill(0.0);
            for (o, &d) in grads.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                dbias[o] += d;
                axpy(&mut dweight[o * plen..(o + 1) * plen], d, &patch);
                if dinput.is_some() {
                    axpy(&mut dpatch, d, &weight[o * plen..(o + 1) * plen]);
                }
            }
            if let Some(di) = dinput.as_deref_mut() {
                g.scatter(&dpatch, ox, oy, di);
            }
        }
    }
}

/// Max pooling; `argmax` receives the flat input index of each output. Ties
/// go to the first index in `[px, py]` scan order.
pub fn maxpool_forward(
    input: &[f64],
    in_shape: [usize; 3],
    out_shape: [usize; 3],
    size: usize,
    stride: usize,
    out: &mut [f64],
    argmax: &mut [u32],
) {
    let [_, iy_max, c] = in_shape;
    let [ox_max, oy_max, _] = out_shape;
    for ox in 0..ox_max {
        for oy in 0..oy_max {
            for ch in 0..c {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = usize::MAX;
                for px in 0..size {
                    for py in 0..size {
                        let idx = ((ox * stride + px) * iy_max + oy * stride + py) * c + ch;
                        let x = input[idx];
                        if best_idx == usize::MAX || x > best {
                            best = x;
                            best_idx = idx;
                        }
                    }
                }
                let o = (ox * oy_max + oy) * c + ch;
                out[o] = best;
                argmax[o] = best_idx as u32;
            }
        }
    }
}

pub fn maxpool_backward(dout: &[f64], argmax: &[u32], dinput: &mut [f64]) {
    for (&d, &idx) in dout.iter().zip(argmax) {
        dinput[idx as usize] += d;
    }
}

pub fn relu_forward(input: &[f64], out: &mut [f64]) {
    for (o, &x) in out.iter_mut().zip(input) {
        *o = if x > 0.0 { x } else { 0.0 };
    }
}

pub fn relu_backward(input: &[f64], dout: &[f64], dinput: &mut [f64]) {
    for ((di, &x), &d) in dinput.iter_mut().zip(input).zip(dout) {
        *di = if x > 0.0 { d } else { 0.0 };
    }
}

pub fn dense_forward(input: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64]) {
    let n = input.len();
    for (o, slot) in out.iter_mut().enumerate() {
        *slot = bias[o] + dot(&weight[o * n..(o + 1) * n], input);
    }
}

pub fn dense_backward(
    input: &[f64],
    weight: &[f64],
    dout: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
    mut dinput: Option<&mut [f64]>,
) {
    let n = input.len();
    for (o, &d) in dout.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        dbias[o] += d;
        axpy(&mut dweight[o * n..(o + 1) * n], d, input);
        if let Some(di) = dinput.as_deref_mut() {
            axpy(di, d, &weight[o * n..(o + 1) * n]);
        }
    }
}

/// Returns `(loss, probabilities)` for one sample with a stable log-sum-exp.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| libm::exp(z - max)).sum();
    let lse = max + libm::log(sum);
    let probs = logits.iter().map(|&z| libm::exp(z - lse)).collect();
    (lse - logits[label], probs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..11).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..11).map(|i| (i * i) as f64 * 0.1).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn uniform_logits_give_log_classes() {
        for k in 2..12 {
            let (loss, probs) = softmax_cross_entropy(&vec![3.7; k], 0);
            assert!((loss - (k as f64).ln()).abs() < 1e-12);
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_handles_large_logits() {
        let (loss, probs) = softmax_cross_entropy(&[1000.0, -1000.0, 0.0], 0);
        assert!(loss.abs() < 1e-12);
        assert!(probs.iter().all(|p| p.is_finite() && *p >= 0.0));
    }

    #[test]
    fn relu_blocks_negative_inputs() {
        let input = [-1.0, -0.5, -3.0];
        let mut di = [9.0; 3];
        relu_backward(&input, &[1.0, 2.0, 3.0], &mut di);
        assert_eq!(di, [0.0; 3]);
    }

    #[test]
    fn maxpool_ties_route_to_first() {
        let input = [1.0, 1.0, 1.0, 1.0];
        let mut out = [0.0];
        let mut arg = [0u32];
        maxpool_forward(&input, [2, 2, 1], [1, 1, 1], 2, 2, &mut out, &mut arg);
        assert_eq!(arg[0], 0);
        let mut di = [0.0; 4];
        maxpool_backward(&[5.0], &arg, &mut di);
        assert_eq!(di, [5.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn conv_with_padding_matches_direct_sum() {
        // 3x3 input, single channel, 3x3 kernel, pad 1.
        let input: Vec<f64> = (1..=9).map(f64::from).collect();
        let weight: Vec<f64> = (0..9).map(|i| (i as f64 - 4.0) * 0.25).collect();
        let g = ConvGeom {
            input: [3, 3, 1],
            output: [3, 3, 1],
            kernel: 3,
            stride: 1,
            pad: 1,
        };
        let mut out = vec![0.0; 9];
        conv_forward(&g, &input, &weight, &[0.5], &mut out);
        for ox in 0..3i32 {
            for oy in 0..3i32 {
                let mut s = 0.5;
                for kx in 0..3i32 {
                    for ky in 0..3i32 {
                        let (ix, iy) = (ox + kx - 1, oy + ky - 1);
                        if (0..3).contains(&ix) && (0..3).contains(&iy) {
                            s += weight[(kx * 3 + ky) as usize] * input[(ix * 3 + iy) as usize];
                        }
                    }
                }
                assert!((out[(ox * 3 + oy) as usize] - s).abs() < 1e-12);
            }
        }
    }
}
