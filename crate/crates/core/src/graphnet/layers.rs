//! Convolution and dense layers with explicit backward passes. Feature maps
//! are height × width × channels, row-major.

use rand::Rng;

/// 3×3 convolution, stride 2, zero padding 1. Weights are `[ky][kx][cin][cout]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv3x3 {
    pub cin: usize,
    pub cout: usize,
}

impl Conv3x3 {
    pub const STRIDE: usize = 2;

    pub fn out_dims(h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(2), w.div_ceil(2))
    }

    pub fn weight_len(&self) -> usize {
        9 * self.cin * self.cout
    }

    /// Pre-activation output.
    pub fn forward(&self, input: &[f64], h: usize, w: usize, weight: &[f64], bias: &[f64]) -> Vec<f64> {
        let (ho, wo) = Self::out_dims(h, w);
        let (ci, co) = (self.cin, self.cout);
        let mut out = Vec::with_capacity(ho * wo * co);
        for oy in 0..ho {
            for ox in 0..wo {
                out.extend_from_slice(bias);
                let acc = out.len() - co;
                for ky in 0..3 {
                    let Some(iy) = (oy * 2 + ky).checked_sub(1).filter(|&y| y < h) else {
                        continue;
                    };
                    for kx in 0..3 {
                        let Some(ix) = (ox * 2 + kx).checked_sub(1).filter(|&x| x < w) else {
                            continue;
                        };
                        let px = &input[(iy * w + ix) * ci..(iy * w + ix + 1) * ci];
                        let wk = &weight[(ky * 3 + kx) * ci * co..(ky * 3 + kx + 1) * ci * co];
                        for (c, &v) in px.iter().enumerate() {
                            if v == 0.0 {
                                continue;
                            }
                            for (o, &wv) in out[acc..acc + co].iter_mut().zip(&wk[c * co..(c + 1) * co]) {
                                *o += v * wv;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Given `dout` w.r.t. the pre-activation output, accumulates weight and
    /// bias gradients and returns the input gradient when `want_input` is set.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        input: &[f64],
        h: usize,
        w: usize,
        weight: &[f64],
        dout: &[f64],
        dweight: &mut [f64],
        dbias: &mut [f64],
        want_input: bool,
    ) -> Option<Vec<f64>> {
        let (ho, wo) = Self::out_dims(h, w);
        let (ci, co) = (self.cin, self.cout);
        let mut din = want_input.then(|| vec![0.0; h * w * ci]);
        for oy in 0..ho {
            for ox in 0..wo {
                let g = &dout[(oy * wo + ox) * co..(oy * wo + ox + 1) * co];
                for (b, &gv) in dbias.iter_mut().zip(g) {
                    *b += gv;
                }
                for ky in 0..3 {
                    let Some(iy) = (oy * 2 + ky).checked_sub(1).filter(|&y| y < h) else {
                        continue;
                    };
                    for kx in 0..3 {
                        let Some(ix) = (ox * 2 + kx).checked_sub(1).filter(|&x| x < w) else {
                            continue;
                        };
                        let base = (iy * w + ix) * ci;
                        let koff = (ky * 3 + kx) * ci * co;
                        for c in 0..ci {
                            let v = input[base + c];
                            let wrow = koff + c * co;
                            if v != 0.0 {
                                for (dw, &gv) in dweight[wrow..wrow + co].iter_mut().zip(g) {
                                    *dw += v * gv;
                                }
                            }
                            if let Some(din) = din.as_mut() {
                                din[base + c] += weight[wrow..wrow + co].iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
                            }
                        }
                    }
                }
            }
        }
        din
    }
}

/// Fully connected layer `y = x·W + b` with `W` stored `[in][out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn forward(&self, x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
        let mut out = bias.to_vec();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (o, &wv) in out.iter_mut().zip(&weight[i * self.outputs..(i + 1) * self.outputs]) {
                *o += xi * wv;
            }
        }
        out
    }

    pub fn backward(
        &self,
        x: &[f64],
        weight: &[f64],
        dout: &[f64],
        dweight: &mut [f64],
        dbias: &mut [f64],
        want_input: bool,
    ) -> Option<Vec<f64>> {
        for (b, &g) in dbias.iter_mut().zip(dout) {
            *b += g;
        }
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (dw, &g) in dweight[i * self.outputs..(i + 1) * self.outputs].iter_mut().zip(dout) {
                *dw += xi * g;
            }
        }
        want_input.then(|| {
            (0..self.inputs)
                .map(|i| {
                    weight[i * self.outputs..(i + 1) * self.outputs]
                        .iter()
                        .zip(dout)
                        .map(|(a, b)| a * b)
                        .sum()
                })
                .collect()
        })
    }
}

/// Xavier/Glorot uniform draw for a layer with the given fan-in and fan-out.
pub fn xavier_uniform<R: Rng + ?Sized>(rng: &mut R, len: usize, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..len).map(|_| rng.gen_range(-limit..=limit)).collect()
}

pub fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Zeroes gradient entries where the pre-activation was not positive.
pub fn relu_backward_in_place(grad: &mut [f64], pre: &[f64]) {
    for (g, &z) in grad.iter_mut().zip(pre) {
        if z <= 0.0 {
            *g = 0.0;
        }
    }
}

pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_conv(conv: &Conv3x3, x: &[f64], h: usize, w: usize, wt: &[f64], b: &[f64]) -> Vec<f64> {
        let (ho, wo) = Conv3x3::out_dims(h, w);
        let mut out = vec![0.0; ho * wo * conv.cout];
        for oy in 0..ho {
            for ox in 0..wo {
                for o in 0..conv.cout {
                    let mut s = b[o];
                    for ky in 0..3i64 {
                        for kx in 0..3i64 {
                            let iy = oy as i64 * 2 + ky - 1;
                            let ix = ox as i64 * 2 + kx - 1;
                            if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                continue;
                            }
                            for c in 0..conv.cin {
                                let xi = x[((iy as usize) * w + ix as usize) * conv.cin + c];
                                s += xi * wt[((ky as usize * 3 + kx as usize) * conv.cin + c) * conv.cout + o];
                            }
                        }
                    }
                    out[(oy * wo + ox) * conv.cout + o] = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_loop_and_its_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = Conv3x3 { cin: 3, cout: 4 };
        let (h, w) = (7, 6);
        let x: Vec<f64> = (0..h * w * 3).map(|_| rng.gen::<f64>() - 0.5).collect();
        let wt: Vec<f64> = (0..conv.weight_len()).map(|_| rng.gen::<f64>() - 0.5).collect();
        let b = vec![0.1, -0.2, 0.3, 0.0];
        let fast = conv.forward(&x, h, w, &wt, &b);
        let slow = naive_conv(&conv, &x, h, w, &wt, &b);
        for (a, s) in fast.iter().zip(&slow) {
            assert!((a - s).abs() < 1e-12);
        }
        // <conv(x) - b, g> == <x, convᵀ g>
        let g: Vec<f64> = (0..fast.len()).map(|_| rng.gen::<f64>() - 0.5).collect();
        let mut dw = vec![0.0; wt.len()];
        let mut db = vec![0.0; 4];
        let dx = conv.backward(&x, h, w, &wt, &g, &mut dw, &mut db, true).unwrap();
        let zero_b = vec![0.0; 4];
        let lhs: f64 = conv
            .forward(&x, h, w, &wt, &zero_b)
            .iter()
            .zip(&g)
            .map(|(a, b)| a * b)
            .sum();
        let rhs: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        let lhs_w: f64 = wt.iter().zip(&dw).map(|(a, b)| a * b).sum();
        assert!((lhs - lhs_w).abs() < 1e-10);
    }

    #[test]
    fn output_sizes_round_up() {
        assert_eq!(Conv3x3::out_dims(240, 360), (120, 180));
        assert_eq!(Conv3x3::out_dims(30, 45), (15, 23));
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }
}
