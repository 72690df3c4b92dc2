//! Analytic MAC and parameter accounting.
//!
//! Costs are counted in multiply-accumulates (1 MAC = 1 unit); additions,
//! negations and ReLUs are free. A fused layer has two cost figures:
//!
//! * `scfusion_*` (exact): the two sparse kernels together hold
//!   `ceil(k^2/2) + floor(k^2/2) = k^2` nonzeros, so the base convolutions
//!   cost `k^2 * c_in * n * h * w`. This is what the convolution engine
//!   executes and what [`verify_against_counter`] checks.
//! * `closed_*` (closed form): the base term is written
//!   `2 * ceil(k^2/2) * c_in * n * h * w`, an upper bound on the exact count.
//!   The reduction ratio from this form is `alpha * k^2 / (2*ceil(k^2/2) + 4 * c_out/c_in)`.
//!
//! Both share the channel-wise term `branches * n * c_out * h * w`.

use std::fmt::Write as _;

use num_rational::Ratio;

use crate::conv::MacCounter;
use crate::error::Result;
use crate::fusion::{Alpha, KernelKind, SCFusionConfig};
use crate::model::{LayerSpec, ModelSpec};

pub type Rational = Ratio<u64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CostKind {
    /// Dense convolution left uncompressed.
    DenseConv,
    /// Fused sparse-complementary layer.
    Fused,
    /// Fully-connected layer (never compressed).
    Fc,
}

impl CostKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CostKind::DenseConv => "conv",
            CostKind::Fused => "scfusion",
            CostKind::Fc => "fc",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerCostReport {
    pub layer_name: String,
    pub kind: CostKind,
    pub baseline_macs: u64,
    pub scfusion_macs: u64,
    pub closed_macs: u64,
    pub baseline_params: u64,
    pub scfusion_params: u64,
    pub closed_params: u64,
    pub rho_macs: Rational,
    pub rho_params: Rational,
    pub rho_macs_closed: Rational,
    pub rho_params_closed: Rational,
}

fn ratio(num: u64, den: u64) -> Rational {
    Ratio::new(num, den.max(1))
}

impl LayerCostReport {
    #[allow(clippy::too_many_arguments)]
    fn new(
        layer_name: String,
        kind: CostKind,
        baseline_macs: u64,
        scfusion_macs: u64,
        closed_macs: u64,
        baseline_params: u64,
        scfusion_params: u64,
        closed_params: u64,
    ) -> Self {
        Self {
            layer_name,
            kind,
            baseline_macs,
            scfusion_macs,
            closed_macs,
            baseline_params,
            scfusion_params,
            closed_params,
            rho_macs: ratio(baseline_macs, scfusion_macs),
            rho_params: ratio(baseline_params, scfusion_params),
            rho_macs_closed: ratio(baseline_macs, closed_macs),
            rho_params_closed: ratio(baseline_params, closed_params),
        }
    }
}

/// Cost of a fused layer against the dense `k x k` convolution it replaces,
/// for an output map of `h_out x w_out`.
pub fn layer_cost(cfg: &SCFusionConfig, h_out: usize, w_out: usize) -> Result<LayerCostReport> {
    cfg.validate()?;
    let (k2, c_in, c_out) = ((cfg.k * cfg.k) as u64, cfg.c_in as u64, cfg.c_out as u64);
    let n = cfg.n_base() as u64;
    let hw = (h_out * w_out) as u64;
    let fusion_in = cfg.fusion_in() as u64;

    let closed_base = match cfg.kernel {
        KernelKind::Sparse => 2 * k2.div_ceil(2),
        KernelKind::Dense => k2,
    };
    let base_params = k2 * c_in * n;
    let fuse_params = fusion_in * c_out;

    Ok(LayerCostReport::new(
        "scfusion".into(),
        CostKind::Fused,
        k2 * c_in * c_out * hw,
        (base_params + fuse_params) * hw,
        (closed_base * c_in * n + fuse_params) * hw,
        k2 * c_in * c_out,
        base_params + fuse_params + c_out,
        closed_base * c_in * n + fuse_params,
    ))
}

/// Cost of an uncompressed dense convolution (ratio 1).
pub fn dense_conv_cost(
    c_in: usize,
    c_out: usize,
    k: usize,
    h_out: usize,
    w_out: usize,
) -> LayerCostReport {
    let params = (k * k * c_in * c_out) as u64;
    let macs = params * (h_out * w_out) as u64;
    LayerCostReport::new(
        "conv".into(),
        CostKind::DenseConv,
        macs,
        macs,
        macs,
        params,
        params,
        params,
    )
}

pub fn fc_cost(fan_in: usize, out: usize) -> LayerCostReport {
    let macs = (fan_in * out) as u64;
    let params = macs + out as u64;
    LayerCostReport::new(
        "fc".into(),
        CostKind::Fc,
        macs,
        macs,
        macs,
        params,
        params,
        params,
    )
}

/// Closed-form reduction ratio `alpha * k^2 / (2*ceil(k^2/2) + 4 * c_out/c_in)`.
pub fn closed_form_rho(k: usize, alpha: Alpha, out_over_in: Rational) -> Rational {
    let k2 = (k * k) as u64;
    let denom = Ratio::from_integer(2 * k2.div_ceil(2)) + out_over_in * 4;
    alpha * k2 / denom
}

#[derive(Clone, Debug, PartialEq)]
pub struct RatioCell {
    pub out_over_in: u64,
    pub alpha: u64,
    pub rho: Rational,
}

/// Reduction ratios for `k = 3`, `alpha in {2, 4, 8}`, `c_out/c_in in {1, 2}`.
pub fn ratio_grid() -> Vec<RatioCell> {
    let mut cells = Vec::new();
    for r in [1u64, 2] {
        for a in [2u64, 4, 8] {
            cells.push(RatioCell {
                out_over_in: r,
                alpha: a,
                rho: closed_form_rho(3, Ratio::from_integer(a), Ratio::from_integer(r)),
            });
        }
    }
    cells
}

pub fn rational_to_f64(r: Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

pub fn render_ratio_grid() -> String {
    let cells = ratio_grid();
    let mut s = String::new();
    writeln!(
        s,
        "{:<16}{:>10}{:>10}{:>10}",
        "k=3", "alpha=2", "alpha=4", "alpha=8"
    )
    .unwrap();
    for r in [1u64, 2] {
        write!(s, "{:<16}", format!("c_out/c_in={r}")).unwrap();
        for c in cells.iter().filter(|c| c.out_over_in == r) {
            write!(
                s,
                "{:>10}",
                format!("{}x", trim_decimals(rational_to_f64(c.rho)))
            )
            .unwrap();
        }
        writeln!(s).unwrap();
    }
    s
}

fn trim_decimals(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CostTotals {
    pub baseline_macs: u64,
    pub scfusion_macs: u64,
    pub closed_macs: u64,
    pub baseline_params: u64,
    pub scfusion_params: u64,
    pub closed_params: u64,
}

impl CostTotals {
    fn add(&mut self, r: &LayerCostReport) {
        self.baseline_macs += r.baseline_macs;
        self.scfusion_macs += r.scfusion_macs;
        self.closed_macs += r.closed_macs;
        self.baseline_params += r.baseline_params;
        self.scfusion_params += r.scfusion_params;
        self.closed_params += r.closed_params;
    }

    pub fn rho_macs(&self) -> Rational {
        ratio(self.baseline_macs, self.scfusion_macs)
    }

    pub fn rho_macs_closed(&self) -> Rational {
        ratio(self.baseline_macs, self.closed_macs)
    }

    pub fn rho_params(&self) -> Rational {
        ratio(self.baseline_params, self.scfusion_params)
    }

    pub fn rho_params_closed(&self) -> Rational {
        ratio(self.baseline_params, self.closed_params)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelCostReport {
    pub layers: Vec<LayerCostReport>,
    /// Every convolutional layer, dense or fused.
    pub conv: CostTotals,
    /// Fused layers only.
    pub fused: CostTotals,
    /// Convolutional plus fully-connected layers.
    pub model: CostTotals,
}

/// Per-layer costs for a spec. Pooling and shortcut additions are free.
pub fn model_cost(spec: &ModelSpec) -> Result<ModelCostReport> {
    let shapes = spec.propagate()?;
    let mut layers = Vec::new();
    let (mut conv, mut fused, mut model) = (
        CostTotals::default(),
        CostTotals::default(),
        CostTotals::default(),
    );
    for (i, (layer, shape)) in spec.layers.iter().zip(&shapes).enumerate() {
        let (c_in, h_in, w_in) = shape.input;
        let (_, ho, wo) = shape.output;
        let mut report = match *layer {
            LayerSpec::Conv { c_out, k, .. } => dense_conv_cost(c_in, c_out, k, ho, wo),
            LayerSpec::ScFusion { .. } => {
                let cfg = layer.fusion_config(c_in).expect("scfusion layer");
                layer_cost(&cfg, ho, wo)?
            }
            LayerSpec::Fc { out, .. } => fc_cost(c_in * h_in * w_in, out),
            _ => continue,
        };
        report.layer_name = format!("l{i}.{}", report.kind.as_str());
        match report.kind {
            CostKind::DenseConv => conv.add(&report),
            CostKind::Fused => {
                conv.add(&report);
                fused.add(&report);
            }
            CostKind::Fc => {}
        }
        model.add(&report);
        layers.push(report);
    }
    Ok(ModelCostReport {
        layers,
        conv,
        fused,
        model,
    })
}

/// True iff a single-sample forward pass executed exactly the analytic
/// (nonzero-based) number of MACs.
pub fn verify_against_counter(report: &LayerCostReport, measured: &MacCounter) -> bool {
    measured.get() == report.scfusion_macs
}

const REPORT_HEADER: &str =
    "# cost unit: 1 MAC (multiply-accumulate); additions, negations and ReLU are not counted";

fn fmt_rho(r: Rational) -> String {
    format!("{:.4}", rational_to_f64(r))
}

impl ModelCostReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{REPORT_HEADER}").unwrap();
        writeln!(
            s,
            "layer,kind,baseline_macs,scfusion_macs,closed_macs,rho_macs,rho_macs_closed,baseline_params,scfusion_params,closed_params,rho_params,rho_params_closed"
        )
        .unwrap();
        for r in &self.layers {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.layer_name,
                r.kind.as_str(),
                r.baseline_macs,
                r.scfusion_macs,
                r.closed_macs,
                fmt_rho(r.rho_macs),
                fmt_rho(r.rho_macs_closed),
                r.baseline_params,
                r.scfusion_params,
                r.closed_params,
                fmt_rho(r.rho_params),
                fmt_rho(r.rho_params_closed),
            )
            .unwrap();
        }
        for (name, t) in [
            ("total_fused", &self.fused),
            ("total_conv", &self.conv),
            ("total_model", &self.model),
        ] {
            writeln!(
                s,
                "{name},total,{},{},{},{},{},{},{},{},{},{}",
                t.baseline_macs,
                t.scfusion_macs,
                t.closed_macs,
                fmt_rho(t.rho_macs()),
                fmt_rho(t.rho_macs_closed()),
                t.baseline_params,
                t.scfusion_params,
                t.closed_params,
                fmt_rho(t.rho_params()),
                fmt_rho(t.rho_params_closed()),
            )
            .unwrap();
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{REPORT_HEADER}").unwrap();
        writeln!(
            s,
            "{:<14} {:<9} {:>12} {:>12} {:>12} {:>8} {:>8} {:>10} {:>10} {:>8}",
            "layer",
            "kind",
            "base MACs",
            "exact MACs",
            "closed MACs",
            "rho",
            "rho(cf)",
            "base par",
            "exact par",
            "rho par"
        )
        .unwrap();
        let row = |s: &mut String, name: &str, kind: &str, t: &CostTotals| {
            writeln!(
                s,
                "{:<14} {:<9} {:>12} {:>12} {:>12} {:>8} {:>8} {:>10} {:>10} {:>8}",
                name,
                kind,
                t.baseline_macs,
                t.scfusion_macs,
                t.closed_macs,
                format!("{:.2}x", rational_to_f64(t.rho_macs())),
                format!("{:.2}x", rational_to_f64(t.rho_macs_closed())),
                t.baseline_params,
                t.scfusion_params,
                format!("{:.2}x", rational_to_f64(t.rho_params())),
            )
            .unwrap();
        };
        for r in &self.layers {
            let mut t = CostTotals::default();
            t.add(r);
            row(&mut s, &r.layer_name, r.kind.as_str(), &t);
        }
        row(&mut s, "fused layers", "total", &self.fused);
        row(&mut s, "all conv", "total", &self.conv);
        row(&mut s, "whole model", "total", &self.model);
        s
    }
}
