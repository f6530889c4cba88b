use serde::{Deserialize, Serialize};

use super::tensor::{matmul, matmul_nt, matmul_tn, Tensor};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Linear,
}

/// One graph convolution `σ(E·H·W)`.
pub fn gcn_layer_forward(h: &Tensor, e: &Tensor, w: &Tensor, activation: Activation) -> Result<Tensor> {
    let (n, fin) = h.dims2()?;
    let (en, em) = e.dims2()?;
    let (win, fout) = w.dims2()?;
    if en != n || em != n {
        return Err(invalid(format!("adjacency is {en}x{em}, features have {n} rows")));
    }
    if win != fin {
        return Err(invalid(format!("weight has {win} rows, features have {fin} columns")));
    }
    let pass = propagate(h.data(), e.data(), w.data(), n, fin, fout);
    let mut out = pass.pre;
    if activation == Activation::Relu {
        super::layers::relu_in_place(&mut out);
    }
    Tensor::new(vec![n, fout], out)
}

pub(crate) struct Propagated {
    /// `E·H`, kept for the weight gradient.
    pub eh: Vec<f64>,
    pub pre: Vec<f64>,
}

pub(crate) fn propagate(h: &[f64], e: &[f64], w: &[f64], n: usize, fin: usize, fout: usize) -> Propagated {
    let eh = matmul(e, h, n, n, fin);
    let pre = matmul(&eh, w, n, fin, fout);
    Propagated { eh, pre }
}

/// Backward through `Z = E·H·W` given `dZ`. Adds into `dw`, returns `dH`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn propagate_backward(
    e: &[f64],
    w: &[f64],
    eh: &[f64],
    dz: &[f64],
    n: usize,
    fin: usize,
    fout: usize,
    dw: &mut [f64],
) -> Vec<f64> {
    for (acc, g) in dw.iter_mut().zip(matmul_tn(eh, dz, n, fin, fout)) {
        *acc += g;
    }
    let deh = matmul_nt(dz, w, n, fout, fin);
    matmul_tn(e, &deh, n, n, fin)
}
