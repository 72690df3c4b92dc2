//! Declarative network specs, the dense-to-fused substitution rule, and
//! executable models built from them.
//!
//! # Text format
//!
//! One item per line, `type key=value ...`; `#` starts a comment.
//!
//! ```text
//! input c=3 h=32 w=32
//! conv out=16 k=3 stride=1 pad=1 act=relu
//! maxpool
//! scfusion out=32 k=3 stride=1 pad=1 alpha=4 variant=D act=relu
//! shortcut_begin
//! shortcut_add act=relu
//! gap
//! fc out=10 act=none
//! ```
//!
//! `shortcut_begin` remembers the current activation; the matching
//! `shortcut_add` adds it back (identity shortcut) and applies `act`.
//! Shortcuts nest. `alpha` is an integer or a ratio `p/q`; `variant` is one
//! of the ablation labels `A`-`D`.

use std::fmt::{self, Write as _};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::conv::{ConvGeometry, MacCounter};
use crate::error::{Error, Result};
use crate::fusion::{
    ablation_config, parse_alpha, Ablation, Alpha, BaseKernels, KernelKind, SCFusionConfig,
    SCFusionLayer,
};
use crate::sc_kernels::{
    apply_mask_in_place, check_mask, normal_fill, MaskId, Parity, SCKernelPair,
};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    None,
    Relu,
}

impl Activation {
    fn as_str(self) -> &'static str {
        match self {
            Activation::None => "none",
            Activation::Relu => "relu",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Conv {
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        act: Activation,
    },
    ScFusion {
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        alpha: Alpha,
        variant: Ablation,
        act: Activation,
    },
    MaxPool,
    Gap,
    Fc {
        out: usize,
        act: Activation,
    },
    ShortcutBegin,
    ShortcutAdd {
        act: Activation,
    },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::ScFusion { .. } => "scfusion",
            LayerSpec::MaxPool => "maxpool",
            LayerSpec::Gap => "gap",
            LayerSpec::Fc { .. } => "fc",
            LayerSpec::ShortcutBegin => "shortcut_begin",
            LayerSpec::ShortcutAdd { .. } => "shortcut_add",
        }
    }

    /// Fused-layer configuration for an `scfusion` entry with input channels `c_in`.
    pub fn fusion_config(&self, c_in: usize) -> Option<SCFusionConfig> {
        match *self {
            LayerSpec::ScFusion {
                c_out,
                k,
                stride,
                pad,
                alpha,
                variant,
                ..
            } => Some(ablation_config(
                variant,
                &SCFusionConfig::new(c_in, c_out, k, stride, pad, alpha),
            )),
            _ => None,
        }
    }
}

/// `(channels, height, width)` of one sample.
pub type Chw = (usize, usize, usize);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub input: Chw,
    pub layers: Vec<LayerSpec>,
}

/// Input and output shape of one layer, as resolved by shape propagation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub input: Chw,
    pub output: Chw,
}

impl ModelSpec {
    pub fn new(input: Chw) -> Self {
        Self {
            input,
            layers: Vec::new(),
        }
    }

    pub fn push(mut self, layer: LayerSpec) -> Self {
        self.layers.push(layer);
        self
    }

    fn layer_err(&self, index: usize, msg: impl Into<String>) -> Error {
        Error::Layer {
            index,
            kind: self.layers[index].kind().to_string(),
            msg: msg.into(),
        }
    }

    /// Shape of every layer's input and output, without the
    /// final-layer-is-logits requirement.
    pub fn propagate(&self) -> Result<Vec<LayerShape>> {
        let (c0, h0, w0) = self.input;
        if c0 == 0 || h0 == 0 || w0 == 0 {
            return Err(Error::InvalidShape([1, c0, h0, w0]));
        }
        let mut cur = self.input;
        let mut saved: Vec<Chw> = Vec::new();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let (c, h, w) = cur;
            let next = match *layer {
                LayerSpec::Conv {
                    c_out,
                    k,
                    stride,
                    pad,
                    ..
                } => {
                    if c_out == 0 {
                        return Err(self.layer_err(i, "zero output channels"));
                    }
                    let g = ConvGeometry::new(k, stride, pad);
                    let (ho, wo) = g
                        .output_hw(h, w)
                        .map_err(|e| self.layer_err(i, e.to_string()))?;
                    (c_out, ho, wo)
                }
                LayerSpec::ScFusion { .. } => {
                    let cfg = layer.fusion_config(c).expect("scfusion layer");
                    cfg.validate()
                        .map_err(|e| self.layer_err(i, e.to_string()))?;
                    let (ho, wo) = cfg
                        .geometry()
                        .output_hw(h, w)
                        .map_err(|e| self.layer_err(i, e.to_string()))?;
                    (cfg.c_out, ho, wo)
                }
                LayerSpec::MaxPool => {
                    if h % 2 != 0 || w % 2 != 0 {
                        return Err(self.layer_err(i, format!("odd spatial size {h}x{w}")));
                    }
                    (c, h / 2, w / 2)
                }
                LayerSpec::Gap => (c, 1, 1),
                LayerSpec::Fc { out: o, .. } => {
                    if o == 0 {
                        return Err(self.layer_err(i, "zero outputs"));
                    }
                    (o, 1, 1)
                }
                LayerSpec::ShortcutBegin => {
                    saved.push(cur);
                    cur
                }
                LayerSpec::ShortcutAdd { .. } => {
                    let s = saved
                        .pop()
                        .ok_or_else(|| self.layer_err(i, "no open shortcut_begin"))?;
                    if s != cur {
                        return Err(self.layer_err(
                            i,
                            format!(
                                "identity shortcut shape {s:?} differs from branch shape {cur:?}"
                            ),
                        ));
                    }
                    cur
                }
            };
            out.push(LayerShape {
                input: cur,
                output: next,
            });
            cur = next;
        }
        if !saved.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "{} unclosed shortcut_begin",
                saved.len()
            )));
        }
        Ok(out)
    }

    /// Shape propagation plus the requirement that the network ends in
    /// class logits `(classes, 1, 1)`. Returns the class count.
    pub fn validate(&self) -> Result<usize> {
        let shapes = self.propagate()?;
        match shapes.last() {
            Some(LayerShape {
                output: (classes, 1, 1),
                ..
            }) => Ok(*classes),
            Some(s) => Err(Error::InvalidConfig(format!(
                "final layer emits {:?}, expected (classes, 1, 1) logits",
                s.output
            ))),
            None => Err(Error::InvalidConfig("model has no layers".into())),
        }
    }

    pub fn num_classes(&self) -> Result<usize> {
        self.validate()
    }

    /// Every `scfusion` layer switched to ablation `label`.
    pub fn with_ablation(&self, label: Ablation) -> Self {
        let mut spec = self.clone();
        for l in &mut spec.layers {
            if let LayerSpec::ScFusion { variant, .. } = l {
                *variant = label;
            }
        }
        spec
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let (c, h, w) = self.input;
        writeln!(s, "input c={c} h={h} w={w}").unwrap();
        for layer in &self.layers {
            match layer {
                LayerSpec::Conv {
                    c_out,
                    k,
                    stride,
                    pad,
                    act,
                } => writeln!(
                    s,
                    "conv out={c_out} k={k} stride={stride} pad={pad} act={}",
                    act.as_str()
                ),
                LayerSpec::ScFusion {
                    c_out,
                    k,
                    stride,
                    pad,
                    alpha,
                    variant,
                    act,
                } => writeln!(
                    s,
                    "scfusion out={c_out} k={k} stride={stride} pad={pad} alpha={alpha} variant={variant} act={}",
                    act.as_str()
                ),
                LayerSpec::MaxPool => writeln!(s, "maxpool"),
                LayerSpec::Gap => writeln!(s, "gap"),
                LayerSpec::Fc { out, act } => writeln!(s, "fc out={out} act={}", act.as_str()),
                LayerSpec::ShortcutBegin => writeln!(s, "shortcut_begin"),
                LayerSpec::ShortcutAdd { act } => writeln!(s, "shortcut_add act={}", act.as_str()),
            }
            .unwrap();
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut input = None;
        let mut layers = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let mut words = content.split_whitespace();
            let kind = words.next().expect("non-empty line");
            let mut kv = KeyValues::new(line, words)?;
            let layer = match kind {
                "input" => {
                    if input.is_some() || !layers.is_empty() {
                        return Err(Error::Parse {
                            line,
                            msg: "`input` must appear exactly once, before any layer".into(),
                        });
                    }
                    input = Some((kv.usize("c")?, kv.usize("h")?, kv.usize("w")?));
                    kv.finish()?;
                    continue;
                }
                "conv" => LayerSpec::Conv {
                    c_out: kv.usize("out")?,
                    k: kv.usize("k")?,
                    stride: kv.usize_or("stride", 1)?,
                    pad: kv.usize_or("pad", 0)?,
                    act: kv.act()?,
                },
                "scfusion" => LayerSpec::ScFusion {
                    c_out: kv.usize("out")?,
                    k: kv.usize("k")?,
                    stride: kv.usize_or("stride", 1)?,
                    pad: kv.usize_or("pad", 0)?,
                    alpha: kv.parsed("alpha", parse_alpha)?,
                    variant: match kv.take("variant") {
                        Some(v) => v.parse().map_err(|e: Error| Error::Parse {
                            line,
                            msg: e.to_string(),
                        })?,
                        None => Ablation::D,
                    },
                    act: kv.act()?,
                },
                "maxpool" => LayerSpec::MaxPool,
                "gap" => LayerSpec::Gap,
                "fc" => LayerSpec::Fc {
                    out: kv.usize("out")?,
                    act: kv.act()?,
                },
                "shortcut_begin" => LayerSpec::ShortcutBegin,
                "shortcut_add" => LayerSpec::ShortcutAdd { act: kv.act()? },
                other => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("unknown layer type `{other}`"),
                    })
                }
            };
            kv.finish()?;
            layers.push(layer);
        }
        let input = input.ok_or(Error::Parse {
            line: 0,
            msg: "missing `input` line".into(),
        })?;
        Ok(Self { input, layers })
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

struct KeyValues<'a> {
    line: usize,
    pairs: Vec<(&'a str, &'a str)>,
}

impl<'a> KeyValues<'a> {
    fn new(line: usize, words: impl Iterator<Item = &'a str>) -> Result<Self> {
        let mut pairs: Vec<(&str, &str)> = Vec::new();
        for w in words {
            let (k, v) = w.split_once('=').ok_or_else(|| Error::Parse {
                line,
                msg: format!("expected key=value, found `{w}`"),
            })?;
            if pairs.iter().any(|(pk, _)| *pk == k) {
                return Err(Error::Parse {
                    line,
                    msg: format!("duplicate key `{k}`"),
                });
            }
            pairs.push((k, v));
        }
        Ok(Self { line, pairs })
    }

    fn take(&mut self, key: &str) -> Option<&'a str> {
        let i = self.pairs.iter().position(|(k, _)| *k == key)?;
        Some(self.pairs.remove(i).1)
    }

    fn parsed<V>(&mut self, key: &str, f: impl Fn(&str) -> Result<V>) -> Result<V> {
        let line = self.line;
        let v = self.take(key).ok_or_else(|| Error::Parse {
            line,
            msg: format!("missing `{key}`"),
        })?;
        f(v).map_err(|e| Error::Parse {
            line,
            msg: format!("`{key}`: {e}"),
        })
    }

    fn usize(&mut self, key: &str) -> Result<usize> {
        self.parsed(key, |v| {
            v.parse()
                .map_err(|_| Error::InvalidConfig(format!("`{v}` is not a non-negative integer")))
        })
    }

    fn usize_or(&mut self, key: &str, default: usize) -> Result<usize> {
        if self.pairs.iter().any(|(k, _)| *k == key) {
            self.usize(key)
        } else {
            Ok(default)
        }
    }

    fn act(&mut self) -> Result<Activation> {
        match self.take("act") {
            None | Some("none") => Ok(Activation::None),
            Some("relu") => Ok(Activation::Relu),
            Some(other) => Err(Error::Parse {
                line: self.line,
                msg: format!("unknown activation `{other}`"),
            }),
        }
    }

    fn finish(self) -> Result<()> {
        match self.pairs.first() {
            Some((k, _)) => Err(Error::Parse {
                line: self.line,
                msg: format!("unknown key `{k}`"),
            }),
            None => Ok(()),
        }
    }
}

/// Replace every convolution except the first with a full (ablation D)
/// fused layer of identical channels and geometry.
pub fn substitute_scfusion(spec: &ModelSpec, alpha: Alpha) -> Result<ModelSpec> {
    spec.propagate()?;
    let mut seen_conv = false;
    let mut out = spec.clone();
    for layer in &mut out.layers {
        if let LayerSpec::Conv {
            c_out,
            k,
            stride,
            pad,
            act,
        } = *layer
        {
            if seen_conv {
                *layer = LayerSpec::ScFusion {
                    c_out,
                    k,
                    stride,
                    pad,
                    alpha,
                    variant: Ablation::D,
                    act,
                };
            }
            seen_conv = true;
        }
    }
    if !seen_conv {
        return Err(Error::InvalidConfig(
            "spec has no convolutional layers to substitute".into(),
        ));
    }
    out.propagate()?;
    Ok(out)
}

/// Named trainable or fixed tensor of a built model.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor4<T>,
    pub mask: Option<MaskId>,
    pub trainable: bool,
}

impl<T: Scalar> Param<T> {
    /// Scalars that can hold a nonzero value (masked positions excluded).
    pub fn effective_len(&self) -> u64 {
        match self.mask {
            Some(m) => {
                let s = self.value.shape();
                let nnz = m.grid().map(|g| g.nnz()).unwrap_or(0);
                (s.n * s.c * nnz) as u64
            }
            None => self.value.len() as u64,
        }
    }

    pub fn enforce_mask(&mut self) -> Result<()> {
        if let Some(m) = self.mask {
            apply_mask_in_place(&mut self.value, &m.grid()?)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum Base {
    Sparse { even: usize, odd: usize },
    Dense(usize),
}

#[derive(Clone, Debug)]
enum Plan {
    Conv {
        w: usize,
        geom: ConvGeometry,
        act: Activation,
    },
    Fused {
        cfg: SCFusionConfig,
        base: Base,
        fuse_w: usize,
        fuse_b: usize,
        act: Activation,
    },
    MaxPool,
    Gap,
    Fc {
        w: usize,
        b: usize,
        act: Activation,
    },
    ShortcutBegin,
    ShortcutAdd {
        act: Activation,
    },
}

pub const INPUT_MEAN: &str = "input.mean";
pub const INPUT_STD: &str = "input.std";

/// Executable network: a spec, its parameters, and the resolved layer plan.
#[derive(Clone, Debug)]
pub struct Model<T> {
    spec: ModelSpec,
    classes: usize,
    params: Vec<Param<T>>,
    plan: Vec<Plan>,
}

impl<T: Scalar> Model<T> {
    /// Build with freshly initialized parameters; deterministic per seed.
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::assemble(spec, |shape, mask, std| match std {
            Some(std) => normal_fill(
                shape,
                std,
                mask.map(|m| m.grid()).transpose()?.as_ref(),
                &mut rng,
            ),
            None => Tensor4::zeros(shape),
        })
    }

    /// Lay out parameters in canonical order, obtaining each tensor from
    /// `make(shape, mask, init_std)`; `init_std` is `None` for zero-initialized
    /// tensors (biases).
    fn assemble(
        spec: &ModelSpec,
        mut make: impl FnMut(Shape4, Option<MaskId>, Option<f64>) -> Result<Tensor4<T>>,
    ) -> Result<Self> {
        let classes = spec.validate()?;
        let shapes = spec.propagate()?;
        let (c0, _, _) = spec.input;
        let mut params: Vec<Param<T>> = Vec::new();
        let mut add =
            |params: &mut Vec<Param<T>>, name: String, shape: Shape4, mask, std, trainable| {
                let value = make(shape, mask, std)?;
                params.push(Param {
                    name,
                    value,
                    mask,
                    trainable,
                });
                Ok::<usize, Error>(params.len() - 1)
            };

        add(
            &mut params,
            INPUT_MEAN.into(),
            Shape4::new(1, c0, 1, 1),
            None,
            None,
            false,
        )?;
        let std_idx = add(
            &mut params,
            INPUT_STD.into(),
            Shape4::new(1, c0, 1, 1),
            None,
            None,
            false,
        )?;
        params[std_idx].value = Tensor4::full((1, c0, 1, 1), T::one())?;

        let mut plan = Vec::with_capacity(spec.layers.len());
        for (i, (layer, shape)) in spec.layers.iter().zip(&shapes).enumerate() {
            let (c_in, h_in, w_in) = shape.input;
            let p = match *layer {
                LayerSpec::Conv {
                    c_out,
                    k,
                    stride,
                    pad,
                    act,
                } => {
                    let std = (2.0 / (c_in * k * k) as f64).sqrt();
                    let w = add(
                        &mut params,
                        format!("l{i}.conv.w"),
                        Shape4::new(c_out, c_in, k, k),
                        None,
                        Some(std),
                        true,
                    )?;
                    Plan::Conv {
                        w,
                        geom: ConvGeometry::new(k, stride, pad),
                        act,
                    }
                }
                LayerSpec::ScFusion { act, .. } => {
                    let cfg = layer.fusion_config(c_in).expect("scfusion layer");
                    let n = cfg.n_base();
                    let bshape = Shape4::new(n, c_in, cfg.k, cfg.k);
                    let base = match cfg.kernel {
                        KernelKind::Sparse => {
                            let even_id = MaskId {
                                parity: Parity::Even,
                                k: cfg.k,
                            };
                            let odd_id = MaskId {
                                parity: Parity::Odd,
                                k: cfg.k,
                            };
                            let std_e = crate::sc_kernels::init_std(c_in, even_id.grid()?.nnz());
                            let std_o = crate::sc_kernels::init_std(c_in, odd_id.grid()?.nnz());
                            let even = add(
                                &mut params,
                                format!("l{i}.scf.w_even"),
                                bshape,
                                Some(even_id),
                                Some(std_e),
                                true,
                            )?;
                            let odd = add(
                                &mut params,
                                format!("l{i}.scf.w_odd"),
                                bshape,
                                Some(odd_id),
                                Some(std_o),
                                true,
                            )?;
                            Base::Sparse { even, odd }
                        }
                        KernelKind::Dense => {
                            let std = (2.0 / (c_in * cfg.k * cfg.k) as f64).sqrt();
                            Base::Dense(add(
                                &mut params,
                                format!("l{i}.scf.w_dense"),
                                bshape,
                                None,
                                Some(std),
                                true,
                            )?)
                        }
                    };
                    let fin = cfg.fusion_in();
                    let fuse_w = add(
                        &mut params,
                        format!("l{i}.scf.fuse_w"),
                        Shape4::new(cfg.c_out, fin, 1, 1),
                        None,
                        Some((2.0 / fin as f64).sqrt()),
                        true,
                    )?;
                    let fuse_b = add(
                        &mut params,
                        format!("l{i}.scf.fuse_b"),
                        Shape4::new(1, cfg.c_out, 1, 1),
                        None,
                        None,
                        true,
                    )?;
                    Plan::Fused {
                        cfg,
                        base,
                        fuse_w,
                        fuse_b,
                        act,
                    }
                }
                LayerSpec::MaxPool => Plan::MaxPool,
                LayerSpec::Gap => Plan::Gap,
                LayerSpec::Fc { out, act } => {
                    let fan_in = c_in * h_in * w_in;
                    let gain = if act == Activation::Relu { 2.0 } else { 1.0 };
                    let w = add(
                        &mut params,
                        format!("l{i}.fc.w"),
                        Shape4::new(out, fan_in, 1, 1),
                        None,
                        Some((gain / fan_in as f64).sqrt()),
                        true,
                    )?;
                    let b = add(
                        &mut params,
                        format!("l{i}.fc.b"),
                        Shape4::new(1, out, 1, 1),
                        None,
                        None,
                        true,
                    )?;
                    Plan::Fc { w, b, act }
                }
                LayerSpec::ShortcutBegin => Plan::ShortcutBegin,
                LayerSpec::ShortcutAdd { act } => Plan::ShortcutAdd { act },
            };
            plan.push(p);
        }
        Ok(Self {
            spec: spec.clone(),
            classes,
            params,
            plan,
        })
    }

    /// Rebuild a model from a spec and named tensors, checking names, shapes
    /// and masks against the layout `build` would produce.
    pub fn from_params(spec: &ModelSpec, tensors: Vec<(String, Tensor4<T>)>) -> Result<Self> {
        let mut model = Self::assemble(spec, |shape, _, _| Tensor4::zeros(shape))?;
        if tensors.len() != model.params.len() {
            return Err(Error::Malformed(format!(
                "spec expects {} tensors, found {}",
                model.params.len(),
                tensors.len()
            )));
        }
        for (p, (name, t)) in model.params.iter_mut().zip(tensors) {
            if p.name != name {
                return Err(Error::Malformed(format!(
                    "expected tensor `{}`, found `{name}`",
                    p.name
                )));
            }
            if p.value.shape() != t.shape() {
                return Err(Error::ShapeMismatch {
                    op: "load parameter",
                    expected: p.value.shape(),
                    found: t.shape(),
                });
            }
            if let Some(m) = p.mask {
                check_mask(&name, &t, &m.grid()?)?;
            }
            p.value = t;
        }
        Ok(model)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    /// Trainable scalars, excluding positions fixed at zero by a mask.
    pub fn num_parameters(&self) -> u64 {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(Param::effective_len)
            .sum()
    }

    /// Set the per-channel input normalization `(x - mean) / std`.
    pub fn set_normalization(&mut self, mean: &[T], std: &[T]) -> Result<()> {
        let c = self.spec.input.0;
        if mean.len() != c || std.len() != c {
            return Err(Error::InvalidConfig(format!(
                "normalization needs {c} channel statistics"
            )));
        }
        self.params[0].value = Tensor4::from_vec((1, c, 1, 1), mean.to_vec())?;
        self.params[1].value = Tensor4::from_vec((1, c, 1, 1), std.to_vec())?;
        Ok(())
    }

    pub fn normalize(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let (c, h, w) = self.spec.input;
        let s = x.shape();
        if (s.c, s.h, s.w) != (c, h, w) {
            return Err(Error::ShapeMismatch {
                op: "model input",
                expected: Shape4::new(s.n, c, h, w),
                found: s,
            });
        }
        let mean = self.params[0].value.data();
        let std = self.params[1].value.data();
        let mut out = x.clone();
        let plane = s.plane();
        for (i, p) in out.data_mut().chunks_mut(plane).enumerate() {
            let ch = i % c;
            let inv = T::one() / std[ch];
            p.iter_mut().for_each(|v| *v = (*v - mean[ch]) * inv);
        }
        Ok(out)
    }

    /// Record the forward pass on `tape` and return the logits node.
    /// Parameter `i` is bound to tape parameter id `i`.
    pub fn record(&self, tape: &mut Tape<T>, x: &Tensor4<T>) -> Result<Var> {
        let xn = self.normalize(x)?;
        let mut cur = tape.input(xn);
        let pv: Vec<Var> = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| tape.param(i, p.value.clone()))
            .collect();
        let mut saved = Vec::new();
        for p in &self.plan {
            cur = match p {
                Plan::Conv { w, geom, act } => {
                    let y = tape.conv2d(cur, pv[*w], *geom)?;
                    activate(tape, y, *act)
                }
                Plan::Fused {
                    cfg,
                    base,
                    fuse_w,
                    fuse_b,
                    act,
                } => {
                    let geom = cfg.geometry();
                    let mut parts = Vec::with_capacity(4);
                    match base {
                        Base::Dense(w) => parts.push(tape.conv2d(cur, pv[*w], geom)?),
                        Base::Sparse { even, odd } => {
                            let masks = crate::sc_kernels::make_mask_pair(cfg.k)?;
                            let e = tape.conv2d_sparse(cur, pv[*even], &masks.even, geom)?;
                            let o = tape.conv2d_sparse(cur, pv[*odd], &masks.odd, geom)?;
                            parts.push(e);
                            parts.push(o);
                            if cfg.use_addition {
                                let a = tape.add(e, o)?;
                                parts.push(a);
                                if cfg.use_inverse {
                                    parts.push(tape.negate(a));
                                }
                            }
                        }
                    }
                    let cat = tape.concat(&parts)?;
                    let z = tape.relu(cat);
                    let y = tape.conv1x1(z, pv[*fuse_w], pv[*fuse_b])?;
                    activate(tape, y, *act)
                }
                Plan::MaxPool => tape.maxpool2x2(cur)?,
                Plan::Gap => tape.global_avg_pool(cur)?,
                Plan::Fc { w, b, act } => {
                    let s = tape.value(cur).shape();
                    let flat = tape.reshape(cur, Shape4::new(s.n, s.c * s.h * s.w, 1, 1))?;
                    let y = tape.conv1x1(flat, pv[*w], pv[*b])?;
                    activate(tape, y, *act)
                }
                Plan::ShortcutBegin => {
                    saved.push(cur);
                    cur
                }
                Plan::ShortcutAdd { act } => {
                    let s = saved.pop().expect("validated shortcut nesting");
                    let y = tape.add(cur, s)?;
                    activate(tape, y, *act)
                }
            };
        }
        Ok(cur)
    }

    /// Inference forward pass; MACs executed are added to `counter`.
    pub fn forward(&self, x: &Tensor4<T>, counter: &MacCounter) -> Result<Tensor4<T>> {
        let mut tape = Tape::new();
        let out = self.record(&mut tape, x)?;
        counter.add(tape.macs());
        Ok(tape.value(out).clone())
    }

    pub fn predict(&self, x: &Tensor4<T>) -> Result<Vec<usize>> {
        let logits = self.forward(x, &MacCounter::new())?;
        Ok(argmax_rows(&logits))
    }

    /// The fused layer at spec index `layer` as a standalone [`SCFusionLayer`].
    pub fn fusion_layer(&self, layer: usize) -> Option<SCFusionLayer<T>> {
        match self.plan.get(layer)? {
            Plan::Fused {
                cfg,
                base,
                fuse_w,
                fuse_b,
                ..
            } => {
                let kernels = match base {
                    Base::Sparse { even, odd } => BaseKernels::Sparse(
                        SCKernelPair::new(
                            self.params[*even].value.clone(),
                            self.params[*odd].value.clone(),
                        )
                        .ok()?,
                    ),
                    Base::Dense(w) => BaseKernels::Dense(self.params[*w].value.clone()),
                };
                SCFusionLayer::from_parts(
                    cfg.clone(),
                    kernels,
                    self.params[*fuse_w].value.clone(),
                    self.params[*fuse_b].value.data().to_vec(),
                )
                .ok()
            }
            _ => None,
        }
    }

    /// Check every masked parameter against its mask.
    pub fn check_masks(&self) -> Result<()> {
        for p in &self.params {
            if let Some(m) = p.mask {
                check_mask(&p.name, &p.value, &m.grid()?)?;
            }
        }
        Ok(())
    }

    /// Same model in another scalar type.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            spec: self.spec.clone(),
            classes: self.classes,
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    mask: p.mask,
                    trainable: p.trainable,
                })
                .collect(),
            plan: self.plan.clone(),
        }
    }
}

fn activate<T: Scalar>(tape: &mut Tape<T>, v: Var, act: Activation) -> Var {
    match act {
        Activation::None => v,
        Activation::Relu => tape.relu(v),
    }
}

/// Index of the largest logit per sample (first on ties).
pub fn argmax_rows<T: Scalar>(logits: &Tensor4<T>) -> Vec<usize> {
    let s = logits.shape();
    let per = s.c * s.plane();
    logits
        .data()
        .chunks(per)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |(bi, bv), (i, &v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                })
                .0
        })
        .collect()
}

/// Host networks sized for a laptop CPU and 32×32 RGB input.
pub const BASE_PRESETS: [&str; 2] = ["tiny-vgg", "tiny-resnet"];

/// Preset names: `tiny-vgg`, `tiny-resnet`, and `<base>-scfusion-<alpha>`
/// for the substituted variant (e.g. `tiny-vgg-scfusion-4`).
pub fn preset(name: &str) -> Result<ModelSpec> {
    if let Some((base, alpha)) = name.split_once("-scfusion-") {
        return substitute_scfusion(&preset(base)?, parse_alpha(alpha)?);
    }
    let text = match name {
        "tiny-vgg" => TINY_VGG,
        "tiny-resnet" => TINY_RESNET,
        _ => {
            return Err(Error::InvalidConfig(format!(
                "unknown preset `{name}` (known: tiny-vgg, tiny-resnet, <base>-scfusion-<alpha>)"
            )))
        }
    };
    ModelSpec::parse(text)
}

/// Every base preset plus its substitutions at alpha 2, 4 and 8.
pub fn all_presets() -> Vec<(String, ModelSpec)> {
    let mut out = Vec::new();
    for base in BASE_PRESETS {
        out.push((base.to_string(), preset(base).expect("built-in preset")));
        for alpha in [2, 4, 8] {
            let name = format!("{base}-scfusion-{alpha}");
            let spec = preset(&name).expect("built-in preset");
            out.push((name, spec));
        }
    }
    out
}

const TINY_VGG: &str = "\
input c=3 h=32 w=32
conv out=16 k=3 pad=1 act=relu
maxpool
conv out=32 k=3 pad=1 act=relu
maxpool
conv out=32 k=3 pad=1 act=relu
maxpool
conv out=64 k=3 pad=1 act=relu
gap
fc out=10
";

const TINY_RESNET: &str = "\
input c=3 h=32 w=32
conv out=16 k=3 pad=1 act=relu
maxpool
shortcut_begin
conv out=16 k=3 pad=1 act=relu
conv out=16 k=3 pad=1
shortcut_add act=relu
maxpool
conv out=32 k=3 pad=1 act=relu
shortcut_begin
conv out=32 k=3 pad=1 act=relu
conv out=32 k=3 pad=1
shortcut_add act=relu
gap
fc out=10
";
