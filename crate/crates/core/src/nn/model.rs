use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    gelu_backward, gelu_matrix, layer_norm_backward, normalize_rows, scale_shift, softmax_rows, Normalized,
};
use super::params::Params;
use crate::embedding::{DYN_DIM, SEQ_DIM, STR_DIM};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{add_column_sums, affine, gemm, Matrix};

pub const DROPOUT_P: f64 = 0.1;
pub const EXPERTS: usize = 4;
pub const MODALITIES: [&str; 3] = ["seq", "str", "dyn"];

/// Which modalities feed each expert: E1 seq+str, E2 seq+dyn, E3 str+dyn, E4 all.
pub const EXPERT_INPUTS: [&[usize]; EXPERTS] = [&[0, 1], &[0, 2], &[1, 2], &[0, 1, 2]];

/// Layer widths of the fusion network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionDims {
    /// Input widths for sequence, structure and dynamics embeddings.
    pub inputs: [usize; 3],
    pub fused: usize,
    pub expert_hidden: usize,
    pub router_hidden: usize,
    pub classifier_hidden: usize,
    pub classes: usize,
}

impl Default for FusionDims {
    fn default() -> Self {
        Self::DEFAULT
    }
}

const fn linear(i: usize, o: usize) -> usize {
    i * o + o
}

impl FusionDims {
    pub const DEFAULT: Self = Self {
        inputs: [SEQ_DIM, STR_DIM, DYN_DIM],
        fused: 512,
        expert_hidden: 352,
        router_hidden: 64,
        classifier_hidden: 256,
        classes: 2,
    };

    /// Parameter count implied by the layer shapes.
    pub const fn parameter_count(&self) -> usize {
        let d = self.fused;
        let mut total = 0;
        let mut m = 0;
        while m < 3 {
            // projection plus LayerNorm scale and shift
            total += linear(self.inputs[m], d) + 2 * d;
            m += 1;
        }
        let mut e = 0;
        while e < EXPERTS {
            total += linear(EXPERT_INPUTS[e].len() * d, self.expert_hidden) + linear(self.expert_hidden, d);
            e += 1;
        }
        total += linear(3 * d, self.router_hidden) + linear(self.router_hidden, EXPERTS);
        total + linear(d, self.classifier_hidden) + linear(self.classifier_hidden, self.classes)
    }
}

/// Trainable parameters of the default model.
pub const PARAMETER_COUNT: usize = FusionDims::DEFAULT.parameter_count();

/// Model configuration for the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Ablation {
    /// Sequence, structure, dynamics inputs enabled.
    pub modalities: [bool; 3],
    /// Soft routing over four experts; off means the concatenation expert alone.
    pub moe: bool,
    /// Contrastive term enabled in the objective.
    pub contrastive: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            modalities: [true; 3],
            moe: true,
            contrastive: true,
        }
    }
}

impl Ablation {
    pub const NAMES: [&'static str; 9] = [
        "full",
        "seq",
        "struct",
        "dyn",
        "seq+struct",
        "seq+dyn",
        "struct+dyn",
        "no-moe",
        "no-ctr",
    ];

    pub fn all() -> Vec<Ablation> {
        Self::NAMES.iter().map(|n| n.parse().expect("known name")).collect()
    }

    /// Present modality pairs, in the order (seq,str), (seq,dyn), (str,dyn).
    pub fn contrastive_pairs(&self) -> Vec<(usize, usize)> {
        [(0, 1), (0, 2), (1, 2)]
            .into_iter()
            .filter(|&(a, b)| self.modalities[a] && self.modalities[b])
            .collect()
    }
}

impl FromStr for Ablation {
    type Err = Error;

    /// `full`, or `+`-joined modality names (`seq`, `struct`, `dyn`) and
    /// flags (`no-moe`, `no-ctr`).
    fn from_str(s: &str) -> Result<Self> {
        let mut a = Ablation::default();
        if s == "full" || s == "none" {
            return Ok(a);
        }
        let mut mods = [false; 3];
        for part in s.split('+') {
            match part {
                "seq" => mods[0] = true,
                "struct" | "str" => mods[1] = true,
                "dyn" => mods[2] = true,
                "no-moe" => a.moe = false,
                "no-ctr" => a.contrastive = false,
                _ => return Err(Error::Config(format!("unknown ablation '{s}'"))),
            }
        }
        if mods.iter().any(|&m| m) {
            a.modalities = mods;
        }
        Ok(a)
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.modalities != [true; 3] {
            let names = ["seq", "struct", "dyn"];
            parts.extend((0..3).filter(|&i| self.modalities[i]).map(|i| names[i]));
        }
        if !self.moe {
            parts.push("no-moe");
        }
        if !self.contrastive {
            parts.push("no-ctr");
        }
        if parts.is_empty() {
            f.write_str("full")
        } else {
            f.write_str(&parts.join("+"))
        }
    }
}

impl TryFrom<String> for Ablation {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Ablation> for String {
    fn from(a: Ablation) -> String {
        a.to_string()
    }
}

#[derive(Clone, Copy, Debug)]
struct Linear {
    w: usize,
    b: usize,
    input: usize,
    output: usize,
}

#[derive(Clone, Copy, Debug)]
struct Head {
    linear: Linear,
    scale: usize,
    shift: usize,
}

#[derive(Clone, Copy, Debug)]
struct Mlp {
    fc1: Linear,
    fc2: Linear,
}

/// Dropout on the classifier hidden layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dropout {
    Off,
    /// Mask drawn from the counter stream keyed by `(seed, epoch, batch)`.
    On {
        seed: u64,
        epoch: u64,
        batch: u64,
    },
}

/// Trimodal fusion network: projection heads, four experts, router, classifier.
#[derive(Clone, Debug)]
pub struct FusionModel {
    pub dims: FusionDims,
    pub params: Params,
    heads: [Head; 3],
    experts: [Mlp; EXPERTS],
    router: Mlp,
    classifier: Mlp,
}

#[derive(Clone, Debug)]
pub struct FusionOutput {
    /// Projected embeddings, zero for disabled modalities.
    pub z: [Matrix; 3],
    pub experts: [Matrix; EXPERTS],
    pub weights: Matrix,
    pub fused: Matrix,
    pub logits: Matrix,
}

#[derive(Clone, Debug)]
struct HeadCache {
    input: Matrix,
    norm: Normalized,
    pre: Matrix,
}

#[derive(Clone, Debug)]
struct MlpCache {
    input: Matrix,
    pre: Matrix,
    /// Hidden activations after GELU (and after dropout for the classifier).
    hidden: Matrix,
}

/// Forward activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub out: FusionOutput,
    pub ablation: Ablation,
    heads: [Option<HeadCache>; 3],
    experts: [Option<MlpCache>; EXPERTS],
    router: Option<MlpCache>,
    classifier: MlpCache,
    /// Per-unit dropout factor (0 or 1/(1-p)).
    mask: Option<Vec<f64>>,
}

/// Gradients with respect to every parameter, plus optional input gradients.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub inputs: [Option<Matrix>; 3],
}

impl Forward {
    /// Classifier hidden activations after dropout.
    pub fn classifier_hidden(&self) -> &Matrix {
        &self.classifier.hidden
    }
}

fn add_linear(p: &mut Params, name: &str, input: usize, output: usize) -> Linear {
    Linear {
        w: p.add(&format!("{name}.weight"), &[input, output], true),
        b: p.add(&format!("{name}.bias"), &[output], false),
        input,
        output,
    }
}

fn add_mlp(p: &mut Params, name: &str, input: usize, hidden: usize, output: usize) -> Mlp {
    Mlp {
        fc1: add_linear(p, &format!("{name}.fc1"), input, hidden),
        fc2: add_linear(p, &format!("{name}.fc2"), hidden, output),
    }
}

impl FusionModel {
    /// Builds the layer layout with all parameters zero.
    pub fn zeroed(dims: FusionDims) -> Self {
        let mut p = Params::new();
        let d = dims.fused;
        let heads = std::array::from_fn(|m| {
            let name = format!("head.{}", MODALITIES[m]);
            let linear = add_linear(&mut p, &format!("{name}.linear"), dims.inputs[m], d);
            Head {
                linear,
                scale: p.add(&format!("{name}.norm.scale"), &[d], false),
                shift: p.add(&format!("{name}.norm.shift"), &[d], false),
            }
        });
        let experts = std::array::from_fn(|k| {
            add_mlp(
                &mut p,
                &format!("expert{}", k + 1),
                EXPERT_INPUTS[k].len() * d,
                dims.expert_hidden,
                d,
            )
        });
        let router = add_mlp(&mut p, "router", 3 * d, dims.router_hidden, EXPERTS);
        let classifier = add_mlp(&mut p, "classifier", d, dims.classifier_hidden, dims.classes);
        Self {
            dims,
            params: p,
            heads,
            experts,
            router,
            classifier,
        }
    }

    /// Xavier-uniform weights, zero biases, unit LayerNorm scales.
    pub fn new(dims: FusionDims, seed: u64) -> Self {
        let mut model = Self::zeroed(dims);
        let mut gen = rng::hashed(&[b"fusion-init", &seed.to_le_bytes()]);
        for id in 0..model.params.specs.len() {
            let spec = model.params.specs[id].clone();
            let values = model.params.get_mut(id);
            if spec.name.ends_with(".weight") {
                let bound = (6.0 / (spec.shape[0] + spec.shape[1]) as f64).sqrt();
                for v in values.iter_mut() {
                    *v = bound * (2.0 * gen.random::<f64>() - 1.0);
                }
            } else if spec.name.ends_with(".scale") {
                values.fill(1.0);
            }
        }
        model
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    /// Parameters that receive updates under `ablation`.
    pub fn trainable(&self, ablation: &Ablation) -> Vec<bool> {
        let mut on = vec![true; self.params.specs.len()];
        let mut off = |ids: &[usize]| ids.iter().for_each(|&i| on[i] = false);
        for (m, h) in self.heads.iter().enumerate() {
            if !ablation.modalities[m] {
                off(&[h.linear.w, h.linear.b, h.scale, h.shift]);
            }
        }
        if !ablation.moe {
            for e in &self.experts[..3] {
                off(&[e.fc1.w, e.fc1.b, e.fc2.w, e.fc2.b]);
            }
            let r = self.router;
            off(&[r.fc1.w, r.fc1.b, r.fc2.w, r.fc2.b]);
        }
        on
    }

    /// Names of the parameters in the router's output layer.
    pub fn router_output_params(&self) -> [usize; 2] {
        [self.router.fc2.w, self.router.fc2.b]
    }

    fn linear(&self, l: Linear, x: &Matrix) -> Matrix {
        affine(x, self.params.get(l.w), self.params.get(l.b))
    }

    fn check_inputs(&self, inputs: [&Matrix; 3], ablation: &Ablation) -> Result<usize> {
        let rows = (0..3)
            .find(|&m| ablation.modalities[m])
            .map_or(inputs[0].rows, |m| inputs[m].rows);
        for m in 0..3 {
            if !ablation.modalities[m] {
                continue;
            }
            if inputs[m].cols != self.dims.inputs[m] {
                return Err(Error::DimMismatch {
                    expected: self.dims.inputs[m],
                    got: inputs[m].cols,
                });
            }
            if inputs[m].rows != rows {
                return Err(Error::DimMismatch {
                    expected: rows,
                    got: inputs[m].rows,
                });
            }
        }
        Ok(rows)
    }

    /// `GELU(LayerNorm(xA + b))` for one modality.
    pub fn project(&self, modality: usize, x: &Matrix) -> Result<Matrix> {
        if x.cols != self.dims.inputs[modality] {
            return Err(Error::DimMismatch {
                expected: self.dims.inputs[modality],
                got: x.cols,
            });
        }
        Ok(self.project_cached(modality, x).1)
    }

    fn project_cached(&self, modality: usize, x: &Matrix) -> (HeadCache, Matrix) {
        let h = self.heads[modality];
        let a = self.linear(h.linear, x);
        let norm = normalize_rows(&a);
        let pre = scale_shift(&norm.xhat, self.params.get(h.scale), self.params.get(h.shift));
        let z = gelu_matrix(&pre);
        (
            HeadCache {
                input: x.clone(),
                norm,
                pre,
            },
            z,
        )
    }

    fn mlp_forward(&self, mlp: Mlp, input: Matrix, mask: Option<&[f64]>) -> (MlpCache, Matrix) {
        let pre = self.linear(mlp.fc1, &input);
        let mut hidden = gelu_matrix(&pre);
        if let Some(mask) = mask {
            for (h, f) in hidden.data.iter_mut().zip(mask) {
                *h *= f;
            }
        }
        let out = self.linear(mlp.fc2, &hidden);
        (MlpCache { input, pre, hidden }, out)
    }

    /// Runs the network from precomputed projections onwards.
    fn fuse(
        &self,
        z: [Matrix; 3],
        rows: usize,
        ablation: &Ablation,
        dropout: Dropout,
    ) -> (
        FusionOutput,
        [Option<MlpCache>; EXPERTS],
        Option<MlpCache>,
        MlpCache,
        Option<Vec<f64>>,
    ) {
        let d = self.dims.fused;
        let mut experts: [Option<MlpCache>; EXPERTS] = Default::default();
        let mut outs: [Matrix; EXPERTS] = std::array::from_fn(|_| Matrix::zeros(rows, d));
        for k in 0..EXPERTS {
            if !ablation.moe && k < 3 {
                continue;
            }
            let parts: Vec<&Matrix> = EXPERT_INPUTS[k].iter().map(|&m| &z[m]).collect();
            let (cache, out) = self.mlp_forward(self.experts[k], Matrix::hcat(&parts), None);
            experts[k] = Some(cache);
            outs[k] = out;
        }

        let (router, weights) = if ablation.moe {
            let (cache, logits) = self.mlp_forward(self.router, Matrix::hcat(&[&z[0], &z[1], &z[2]]), None);
            (Some(cache), softmax_rows(&logits))
        } else {
            let mut w = Matrix::zeros(rows, EXPERTS);
            for i in 0..rows {
                w.row_mut(i)[EXPERTS - 1] = 1.0;
            }
            (None, w)
        };
        debug_assert!((0..rows).all(|i| (weights.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9));

        let mut fused = Matrix::zeros(rows, d);
        for i in 0..rows {
            let w = weights.row(i).to_vec();
            let row = fused.row_mut(i);
            for (k, wk) in w.iter().enumerate() {
                for (f, e) in row.iter_mut().zip(outs[k].row(i)) {
                    *f += wk * e;
                }
            }
        }

        let mask = match dropout {
            Dropout::Off => None,
            Dropout::On { seed, epoch, batch } => {
                let mut gen = rng::keyed(seed, epoch, batch);
                let keep = 1.0 - DROPOUT_P;
                Some(
                    (0..rows * self.dims.classifier_hidden)
                        .map(|_| if gen.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect::<Vec<f64>>(),
                )
            }
        };
        let (classifier, logits) = self.mlp_forward(self.classifier, fused.clone(), mask.as_deref());
        debug_assert!(logits.is_finite(), "non-finite logits");
        (
            FusionOutput {
                z,
                experts: outs,
                weights,
                fused,
                logits,
            },
            experts,
            router,
            classifier,
            mask,
        )
    }

    /// Full forward pass. Inputs for disabled modalities are ignored.
    pub fn forward(&self, inputs: [&Matrix; 3], ablation: &Ablation, dropout: Dropout) -> Result<Forward> {
        let rows = self.check_inputs(inputs, ablation)?;
        let mut heads: [Option<HeadCache>; 3] = Default::default();
        let z: [Matrix; 3] = std::array::from_fn(|m| {
            if ablation.modalities[m] {
                let (cache, z) = self.project_cached(m, inputs[m]);
                heads[m] = Some(cache);
                z
            } else {
                Matrix::zeros(rows, self.dims.fused)
            }
        });
        let (out, experts, router, classifier, mask) = self.fuse(z, rows, ablation, dropout);
        Ok(Forward {
            out,
            ablation: *ablation,
            heads,
            experts,
            router,
            classifier,
            mask,
        })
    }

    /// Experts, router and classifier applied to given projections.
    pub fn fuse_projections(&self, z: [Matrix; 3], ablation: &Ablation) -> FusionOutput {
        let rows = z[0].rows;
        self.fuse(z, rows, ablation, Dropout::Off).0
    }

    fn linear_backward(
        &self,
        l: Linear,
        input: &Matrix,
        dy: &Matrix,
        grads: &mut [f64],
        want_dx: bool,
    ) -> Option<Matrix> {
        let w_range = self.params.specs[l.w].range();
        gemm(
            l.input,
            input.rows,
            l.output,
            &input.data,
            true,
            &dy.data,
            false,
            &mut grads[w_range],
            true,
        );
        let b_range = self.params.specs[l.b].range();
        add_column_sums(dy, &mut grads[b_range]);
        want_dx.then(|| {
            let mut dx = Matrix::zeros(dy.rows, l.input);
            gemm(
                dy.rows,
                l.output,
                l.input,
                &dy.data,
                false,
                self.params.get(l.w),
                true,
                &mut dx.data,
                false,
            );
            dx
        })
    }

    fn mlp_backward(&self, mlp: Mlp, cache: &MlpCache, dy: &Matrix, mask: Option<&[f64]>, grads: &mut [f64]) -> Matrix {
        let mut dhidden = self
            .linear_backward(mlp.fc2, &cache.hidden, dy, grads, true)
            .expect("input gradient");
        if let Some(mask) = mask {
            for (g, f) in dhidden.data.iter_mut().zip(mask) {
                *g *= f;
            }
        }
        let dpre = gelu_backward(&cache.pre, &dhidden);
        self.linear_backward(mlp.fc1, &cache.input, &dpre, grads, true)
            .expect("input gradient")
    }

    /// Reverse pass given `dL/dlogits` and any direct gradients on the
    /// projections (from the contrastive term).
    pub fn backward(
        &self,
        fwd: &Forward,
        dlogits: &Matrix,
        dz_extra: [Option<&Matrix>; 3],
        input_grads: bool,
    ) -> Gradients {
        let out = &fwd.out;
        let rows = dlogits.rows;
        let d = self.dims.fused;
        let mut grads = self.params.zeros_like();

        let dfused = self.mlp_backward(
            self.classifier,
            &fwd.classifier,
            dlogits,
            fwd.mask.as_deref(),
            &mut grads,
        );

        let mut dz: [Matrix; 3] = std::array::from_fn(|_| Matrix::zeros(rows, d));
        let mut dweights = Matrix::zeros(rows, EXPERTS);
        for k in 0..EXPERTS {
            let Some(cache) = &fwd.experts[k] else { continue };
            let mut dexpert = Matrix::zeros(rows, d);
            for i in 0..rows {
                let wk = out.weights.get(i, k);
                let g = dfused.row(i);
                dweights.row_mut(i)[k] = g.iter().zip(out.experts[k].row(i)).map(|(a, b)| a * b).sum();
                for (o, v) in dexpert.row_mut(i).iter_mut().zip(g) {
                    *o = wk * v;
                }
            }
            let dinput = self.mlp_backward(self.experts[k], cache, &dexpert, None, &mut grads);
            for (slot, &m) in EXPERT_INPUTS[k].iter().enumerate() {
                dz[m].add_assign(&dinput.columns(slot * d, d));
            }
        }

        if let Some(cache) = &fwd.router {
            let mut dlogit = Matrix::zeros(rows, EXPERTS);
            for i in 0..rows {
                let w = out.weights.row(i);
                let dw = dweights.row(i);
                let dot: f64 = w.iter().zip(dw).map(|(a, b)| a * b).sum();
                for (k, o) in dlogit.row_mut(i).iter_mut().enumerate() {
                    *o = w[k] * (dw[k] - dot);
                }
            }
            let dinput = self.mlp_backward(self.router, cache, &dlogit, None, &mut grads);
            for (m, dzm) in dz.iter_mut().enumerate() {
                dzm.add_assign(&dinput.columns(m * d, d));
            }
        }

        let mut inputs: [Option<Matrix>; 3] = Default::default();
        for m in 0..3 {
            let Some(cache) = &fwd.heads[m] else { continue };
            if let Some(extra) = dz_extra[m] {
                dz[m].add_assign(extra);
            }
            let h = self.heads[m];
            let ds = gelu_backward(&cache.pre, &dz[m]);
            let scale_range = self.params.specs[h.scale].range();
            let shift_range = self.params.specs[h.shift].range();
            let (mut dscale, mut dshift) = (vec![0.0; d], vec![0.0; d]);
            let da = layer_norm_backward(&cache.norm, self.params.get(h.scale), &ds, &mut dscale, &mut dshift);
            for (g, v) in grads[scale_range].iter_mut().zip(&dscale) {
                *g += v;
            }
            for (g, v) in grads[shift_range].iter_mut().zip(&dshift) {
                *g += v;
            }
            inputs[m] = self.linear_backward(h.linear, &cache.input, &da, &mut grads, input_grads);
        }
        Gradients { params: grads, inputs }
    }
}
