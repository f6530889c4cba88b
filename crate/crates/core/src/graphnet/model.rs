use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gcn::{propagate, propagate_backward};
use super::layers::{relu_backward_in_place, relu_in_place, sigmoid, softplus, xavier_uniform, Conv3x3, Dense};
use super::tensor::Tensor;
use crate::error::{invalid, Result};
use crate::sphere_layout::{knn_adjacency, GraphSpec, NodeLayout};

/// Architecture hyper-parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n: usize,
    pub k: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub conv_channels: [usize; 4],
    pub hidden: usize,
    pub node_features: usize,
    pub gcn_hidden: [usize; 3],
    pub with_depth: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n: crate::DEFAULT_NODES,
            k: crate::DEFAULT_K,
            input_height: 240,
            input_width: 360,
            conv_channels: [8, 16, 32, 32],
            hidden: 128,
            node_features: 32,
            gcn_hidden: [64, 64, 32],
            with_depth: true,
        }
    }
}

impl ModelConfig {
    pub fn out_channels(&self) -> usize {
        if self.with_depth {
            4
        } else {
            3
        }
    }

    fn convs(&self) -> [Conv3x3; 4] {
        let c = self.conv_channels;
        [
            Conv3x3 { cin: 3, cout: c[0] },
            Conv3x3 { cin: c[0], cout: c[1] },
            Conv3x3 { cin: c[1], cout: c[2] },
            Conv3x3 { cin: c[2], cout: c[3] },
        ]
    }

    /// Spatial size entering each conv layer, plus the final map size.
    fn conv_dims(&self) -> [(usize, usize); 5] {
        let mut dims = [(self.input_height, self.input_width); 5];
        for i in 1..5 {
            dims[i] = Conv3x3::out_dims(dims[i - 1].0, dims[i - 1].1);
        }
        dims
    }

    pub fn flat_features(&self) -> usize {
        let (h, w) = self.conv_dims()[4];
        h * w * self.conv_channels[3]
    }

    fn fc1(&self) -> Dense {
        Dense {
            inputs: self.flat_features(),
            outputs: self.hidden,
        }
    }

    fn fc2(&self) -> Dense {
        Dense {
            inputs: self.hidden,
            outputs: self.n * self.node_features,
        }
    }

    /// `(in, out)` widths of the four graph layers.
    pub fn gcn_widths(&self) -> [(usize, usize); 4] {
        let g = self.gcn_hidden;
        [
            (self.node_features, g[0]),
            (g[0], g[1]),
            (g[1], g[2]),
            (g[2], self.out_channels()),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [self.input_height, self.input_width, self.hidden, self.node_features];
        if sizes
            .iter()
            .chain(&self.conv_channels)
            .chain(&self.gcn_hidden)
            .any(|&v| v == 0)
        {
            return Err(invalid("model dimensions must be positive"));
        }
        if self.n < 2 || self.k == 0 || self.k >= self.n {
            return Err(invalid(format!("need 1 <= k < n, got n={} k={}", self.n, self.k)));
        }
        Ok(())
    }

    /// `(name, shape, fan_in, fan_out)` for every parameter, in storage order.
    /// Fans are zero for biases.
    fn param_specs(&self) -> Vec<(String, Vec<usize>, usize, usize)> {
        let mut specs = Vec::new();
        for (i, c) in self.convs().iter().enumerate() {
            specs.push((
                format!("conv{i}.weight"),
                vec![3, 3, c.cin, c.cout],
                9 * c.cin,
                9 * c.cout,
            ));
            specs.push((format!("conv{i}.bias"), vec![c.cout], 0, 0));
        }
        for (name, d) in [("fc1", self.fc1()), ("fc2", self.fc2())] {
            specs.push((format!("{name}.weight"), vec![d.inputs, d.outputs], d.inputs, d.outputs));
            specs.push((format!("{name}.bias"), vec![d.outputs], 0, 0));
        }
        for (i, (fi, fo)) in self.gcn_widths().iter().enumerate() {
            specs.push((format!("gcn{i}.weight"), vec![*fi, *fo], *fi, *fo));
        }
        specs
    }
}

const CONV: usize = 0;
const FC1: usize = 8;
const FC2: usize = 10;
const GCN: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

/// Trainable predictor: conv backbone, two dense bridge layers, four graph layers.
#[derive(Debug, Clone)]
pub struct PredictorModel {
    config: ModelConfig,
    params: Vec<NamedTensor>,
    graph: GraphSpec<f64>,
    propagation: Tensor,
    seed: u64,
}

/// Per-layer inputs, `E·H` products and pre-activations.
type GcnTrace = (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>);

struct BackboneActs {
    conv_in: Vec<Vec<f64>>,
    conv_pre: Vec<Vec<f64>>,
    flat: Vec<f64>,
    fc1_pre: Vec<f64>,
    fc1_out: Vec<f64>,
    h0: Vec<f64>,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    conv_in: Vec<Vec<f64>>,
    conv_pre: Vec<Vec<f64>>,
    flat: Vec<f64>,
    fc1_pre: Vec<f64>,
    fc1_out: Vec<f64>,
    gcn_eh: Vec<Vec<f64>>,
    gcn_pre: Vec<Vec<f64>>,
    output: Tensor,
}

impl ForwardPass {
    pub fn output(&self) -> &Tensor {
        &self.output
    }

    /// Sign pattern of every ReLU input; changes mark a kink crossing.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let gcn_relu = &self.gcn_pre[..3];
        self.conv_pre
            .iter()
            .chain(std::iter::once(&self.fc1_pre))
            .chain(gcn_relu)
            .flat_map(|v| v.iter().map(|&z| z > 0.0))
            .collect()
    }
}

impl PredictorModel {
    /// Xavier-uniform weights and zero biases drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = config
            .param_specs()
            .into_iter()
            .map(|(name, shape, fan_in, fan_out)| {
                let len = shape.iter().product();
                let data = if fan_in == 0 {
                    vec![0.0; len]
                } else {
                    xavier_uniform(&mut rng, len, fan_in, fan_out)
                };
                Ok(NamedTensor {
                    name,
                    tensor: Tensor::new(shape, data)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(config, params, seed)
    }

    /// Assembles a model from explicit parameters, checking names and shapes.
    pub fn from_parts(config: ModelConfig, params: Vec<NamedTensor>, seed: u64) -> Result<Self> {
        config.validate()?;
        let specs = config.param_specs();
        if specs.len() != params.len() {
            return Err(invalid(format!(
                "expected {} parameter tensors, got {}",
                specs.len(),
                params.len()
            )));
        }
        for ((name, shape, _, _), p) in specs.iter().zip(&params) {
            if &p.name != name || p.tensor.shape() != shape.as_slice() {
                return Err(invalid(format!(
                    "parameter {} {:?} does not match expected {name} {shape:?}",
                    p.name,
                    p.tensor.shape()
                )));
            }
        }
        let layout = NodeLayout::<f64>::new(config.n)?;
        let graph = knn_adjacency(&layout, config.k)?;
        let propagation = Tensor::new(vec![config.n, config.n], graph.normalized.clone())?;
        Ok(Self {
            config,
            params,
            graph,
            propagation,
            seed,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[NamedTensor] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [NamedTensor] {
        &mut self.params
    }

    pub fn graph(&self) -> &GraphSpec<f64> {
        &self.graph
    }

    /// Normalized adjacency used by every graph layer.
    pub fn propagation(&self) -> &Tensor {
        &self.propagation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layout(&self) -> &NodeLayout<f64> {
        &self.graph.layout
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    fn p(&self, i: usize) -> &[f64] {
        self.params[i].tensor.data()
    }

    fn check_image(&self, img: &Tensor) -> Result<()> {
        let want = [self.config.input_height, self.config.input_width, 3];
        if img.shape() != want {
            return Err(invalid(format!("image shape {:?}, expected {want:?}", img.shape())));
        }
        Ok(())
    }

    /// Conv stack and bridge: returns `N × F₀` node features.
    pub fn backbone_forward(&self, img: &Tensor) -> Result<Tensor> {
        self.check_image(img)?;
        let acts = self.backbone(img.data());
        Tensor::new(vec![self.config.n, self.config.node_features], acts.h0)
    }

    fn backbone(&self, img: &[f64]) -> BackboneActs {
        let dims = self.config.conv_dims();
        let mut conv_in = vec![img.to_vec()];
        let mut conv_pre = Vec::with_capacity(4);
        for (i, conv) in self.config.convs().iter().enumerate() {
            let (h, w) = dims[i];
            let pre = conv.forward(&conv_in[i], h, w, self.p(CONV + 2 * i), self.p(CONV + 2 * i + 1));
            let mut act = pre.clone();
            relu_in_place(&mut act);
            conv_pre.push(pre);
            conv_in.push(act);
        }
        let flat = conv_in.pop().expect("four conv outputs");
        let fc1_pre = self.config.fc1().forward(&flat, self.p(FC1), self.p(FC1 + 1));
        let mut fc1_out = fc1_pre.clone();
        relu_in_place(&mut fc1_out);
        let h0 = self.config.fc2().forward(&fc1_out, self.p(FC2), self.p(FC2 + 1));
        BackboneActs {
            conv_in,
            conv_pre,
            flat,
            fc1_pre,
            fc1_out,
            h0,
        }
    }

    /// Graph layers on given node features and propagation matrix, with the softplus head.
    pub fn gcn_stack_forward(&self, h0: &Tensor, e: &Tensor) -> Result<Tensor> {
        let n = self.config.n;
        if h0.shape() != [n, self.config.node_features] || e.shape() != [n, n] {
            return Err(invalid("node features or adjacency have the wrong shape"));
        }
        let (_, _, pre) = self.gcn_stack(h0.data(), e.data());
        let out = pre[3].iter().map(|&z| softplus(z)).collect();
        Tensor::new(vec![n, self.config.out_channels()], out)
    }

    fn gcn_stack(&self, h0: &[f64], e: &[f64]) -> GcnTrace {
        let n = self.config.n;
        let mut inputs = vec![h0.to_vec()];
        let mut ehs = Vec::with_capacity(4);
        let mut pres = Vec::with_capacity(4);
        for (l, (fi, fo)) in self.config.gcn_widths().into_iter().enumerate() {
            let pass = propagate(&inputs[l], e, self.p(GCN + l), n, fi, fo);
            if l < 3 {
                let mut act = pass.pre.clone();
                relu_in_place(&mut act);
                inputs.push(act);
            }
            ehs.push(pass.eh);
            pres.push(pass.pre);
        }
        (inputs, ehs, pres)
    }

    /// Predicted non-negative amplitudes, `N × 4` (RGBD) or `N × 3`.
    pub fn model_forward(&self, img: &Tensor) -> Result<Tensor> {
        Ok(self.forward(img)?.output)
    }

    pub fn forward(&self, img: &Tensor) -> Result<ForwardPass> {
        self.check_image(img)?;
        let acts = self.backbone(img.data());
        let (_, gcn_eh, gcn_pre) = self.gcn_stack(&acts.h0, self.propagation.data());
        let out = gcn_pre[3].iter().map(|&z| softplus(z)).collect();
        Ok(ForwardPass {
            conv_in: acts.conv_in,
            conv_pre: acts.conv_pre,
            flat: acts.flat,
            fc1_pre: acts.fc1_pre,
            fc1_out: acts.fc1_out,
            gcn_eh,
            gcn_pre,
            output: Tensor::new(vec![self.config.n, self.config.out_channels()], out)?,
        })
    }

    /// Parameter gradients given the loss gradient w.r.t. the model output.
    pub fn backward(&self, pass: &ForwardPass, d_output: &[f64]) -> Result<Vec<Vec<f64>>> {
        if d_output.len() != pass.output.len() {
            return Err(invalid("output gradient has the wrong length"));
        }
        let cfg = &self.config;
        let n = cfg.n;
        let mut grads: Vec<Vec<f64>> = self.params.iter().map(|p| vec![0.0; p.tensor.len()]).collect();

        let mut dz: Vec<f64> = d_output
            .iter()
            .zip(&pass.gcn_pre[3])
            .map(|(g, &z)| g * sigmoid(z))
            .collect();
        let e = self.propagation.data();
        let widths = cfg.gcn_widths();
        for l in (0..4).rev() {
            let (fi, fo) = widths[l];
            let dh = propagate_backward(e, self.p(GCN + l), &pass.gcn_eh[l], &dz, n, fi, fo, &mut grads[GCN + l]);
            dz = dh;
            if l > 0 {
                relu_backward_in_place(&mut dz, &pass.gcn_pre[l - 1]);
            }
        }

        let (before, after) = grads.split_at_mut(FC2);
        let (fc2_w, fc2_b) = after.split_at_mut(1);
        let mut d_fc1 = cfg
            .fc2()
            .backward(&pass.fc1_out, self.p(FC2), &dz, &mut fc2_w[0], &mut fc2_b[0], true)
            .expect("input gradient requested");
        relu_backward_in_place(&mut d_fc1, &pass.fc1_pre);
        let (fc1_w, fc1_b) = before[FC1..].split_at_mut(1);
        let mut d_flat = cfg
            .fc1()
            .backward(&pass.flat, self.p(FC1), &d_fc1, &mut fc1_w[0], &mut fc1_b[0], true)
            .expect("input gradient requested");

        let dims = cfg.conv_dims();
        let convs = cfg.convs();
        let mut dact = std::mem::take(&mut d_flat);
        for i in (0..4).rev() {
            relu_backward_in_place(&mut dact, &pass.conv_pre[i]);
            let (h, w) = dims[i];
            let (wg, bg) = before[CONV + 2 * i..CONV + 2 * i + 2].split_at_mut(1);
            let din = convs[i].backward(
                &pass.conv_in[i],
                h,
                w,
                self.p(CONV + 2 * i),
                &dact,
                &mut wg[0],
                &mut bg[0],
                i > 0,
            );
            if let Some(din) = din {
                dact = din;
            }
        }
        Ok(grads)
    }
}
