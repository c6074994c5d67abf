//! Static BOPs / FLOPs / parameter accounting.
//!
//! Counting rules: one binary multiply-accumulate is one BOP, one real
//! multiply-accumulate is one FLOP, `OPs = BOPs/64 + FLOPs`, and one MB is
//! 2²⁰ bytes. Elementwise work (batch norm, RSign, RPReLU, pooling) is counted
//! in FLOPs too but kept in its own class so it can be separated from the
//! convolution/FC multiply-accumulates.

use std::fmt::Write as _;

use crate::backbone::{Chw, LayerSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::gbdt::{GbdtConfig, TreeEnsemble, TreeNode};

pub const BOPS_PER_OP: f64 = 64.0;
pub const BYTES_PER_MB: f64 = 1024.0 * 1024.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpClass {
    /// XNOR-popcount convolution.
    Binary,
    /// Real-valued convolution or fully connected multiply-accumulates.
    Mac,
    /// Per-element normalisation, activation and pooling.
    Elementwise,
    /// Tree-node comparisons.
    Compare,
}

impl OpClass {
    fn tag(self) -> &'static str {
        match self {
            OpClass::Binary => "bin",
            OpClass::Mac => "mac",
            OpClass::Elementwise => "elt",
            OpClass::Compare => "cmp",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostRow {
    pub name: String,
    pub class: OpClass,
    pub bops: u64,
    pub flops: u64,
    pub param_bits: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CostTotals {
    pub bops: u64,
    pub flops: u64,
    pub param_bits: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostReport {
    pub name: String,
    pub rows: Vec<CostRow>,
    pub totals: CostTotals,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CostOptions {
    /// Per-output-channel binary weight scales are stored (32 bits each).
    pub weight_scaling: bool,
}

impl Default for CostOptions {
    fn default() -> Self {
        CostOptions { weight_scaling: true }
    }
}

/// `BOPs/64 + FLOPs`, unrounded.
pub fn total_ops(bops: f64, flops: f64) -> f64 {
    bops / BOPS_PER_OP + flops
}

impl CostReport {
    pub fn from_rows(name: impl Into<String>, rows: Vec<CostRow>) -> Self {
        let totals = rows.iter().fold(CostTotals::default(), |t, r| CostTotals {
            bops: t.bops + r.bops,
            flops: t.flops + r.flops,
            param_bits: t.param_bits + r.param_bits,
        });
        CostReport {
            name: name.into(),
            rows,
            totals,
        }
    }

    pub fn ops(&self) -> f64 {
        total_ops(self.totals.bops as f64, self.totals.flops as f64)
    }

    pub fn param_bytes(&self) -> f64 {
        self.totals.param_bits as f64 / 8.0
    }

    pub fn param_megabytes(&self) -> f64 {
        self.param_bytes() / BYTES_PER_MB
    }

    pub fn flops_of(&self, class: OpClass) -> u64 {
        self.rows.iter().filter(|r| r.class == class).map(|r| r.flops).sum()
    }

    /// Convolution and FC multiply-accumulates only.
    pub fn mac_flops(&self) -> u64 {
        self.flops_of(OpClass::Mac)
    }

    pub fn elementwise_flops(&self) -> u64 {
        self.flops_of(OpClass::Elementwise)
    }

    /// Aligned human-readable table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "cost report: {}", self.name);
        let _ = writeln!(s, "{:<24} {:>5} {:>14} {:>12} {:>12}", "layer", "class", "BOPs", "FLOPs", "param_bits");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<24} {:>5} {:>14} {:>12} {:>12}",
                r.name,
                r.class.tag(),
                r.bops,
                r.flops,
                r.param_bits
            );
        }
        let t = &self.totals;
        let _ = writeln!(s, "{:<24} {:>5} {:>14} {:>12} {:>12}", "TOTAL", "", t.bops, t.flops, t.param_bits);
        let _ = writeln!(s, "BOPs           {:.4e}", t.bops as f64);
        let _ = writeln!(
            s,
            "FLOPs          {:.4e}  (mac {} + elementwise {} + compare {})",
            t.flops as f64,
            self.mac_flops(),
            self.elementwise_flops(),
            self.flops_of(OpClass::Compare)
        );
        let _ = writeln!(s, "OPs            {:.4e}  (BOPs/64 + FLOPs)", self.ops());
        let _ = writeln!(
            s,
            "OPs (mac-only) {:.4e}",
            total_ops(t.bops as f64, self.mac_flops() as f64)
        );
        let _ = writeln!(s, "params         {:.4} MB ({} bytes)", self.param_megabytes(), self.param_bytes());
        s
    }

    /// `layer<TAB>bops<TAB>flops<TAB>param_bits`, one row per line, totals last.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let _ = writeln!(s, "{}\t{}\t{}\t{}", r.name, r.bops, r.flops, r.param_bits);
        }
        let t = &self.totals;
        let _ = writeln!(s, "TOTAL\t{}\t{}\t{}", t.bops, t.flops, t.param_bits);
        s
    }
}

fn row(name: String, class: OpClass, bops: usize, flops: usize, param_bits: usize) -> CostRow {
    CostRow {
        name,
        class,
        bops: bops as u64,
        flops: flops as u64,
        param_bits: param_bits as u64,
    }
}

fn binary_conv_row(name: String, co: usize, ci: usize, k: usize, out_sp: usize, opts: &CostOptions) -> CostRow {
    let scale_bits = if opts.weight_scaling { 32 * co } else { 0 };
    row(name, OpClass::Binary, co * ci * k * k * out_sp, 0, co * ci * k * k + scale_bits)
}

fn bn_row(name: String, c: usize, sp: usize) -> CostRow {
    // scale + shift at inference; gamma, beta, running mean, running variance stored
    row(name, OpClass::Elementwise, 0, 2 * c * sp, 32 * 2 * c + 32 * 2 * c)
}

fn rsign_row(name: String, c: usize, sp: usize) -> CostRow {
    row(name, OpClass::Elementwise, 0, c * sp, 32 * c)
}

fn rprelu_row(name: String, c: usize, sp: usize) -> CostRow {
    row(name, OpClass::Elementwise, 0, 2 * c * sp, 32 * 3 * c)
}

/// Rows for one layer, named with `prefix`. `in_shape` is the layer's input.
pub fn layer_cost(layer: &LayerSpec, in_shape: Chw, prefix: &str, opts: &CostOptions) -> Result<Vec<CostRow>> {
    let [c, h, w] = in_shape;
    let n = |s: &str| format!("{}.{}", prefix, s);
    let conv_out = |in_ch: usize| -> Result<(usize, usize)> {
        layer
            .main_conv(in_ch)
            .expect("conv layer")
            .out_hw(h, w)
            .map_err(|e| Error::Spec(format!("{}: {}", prefix, e)))
    };
    Ok(match *layer {
        LayerSpec::FirstConvFp32 { out_channels, kernel, .. } => {
            let (ho, wo) = conv_out(c)?;
            let k2 = kernel * kernel;
            vec![
                row(n("conv"), OpClass::Mac, 0, out_channels * c * k2 * ho * wo, 32 * out_channels * c * k2),
                bn_row(n("bn"), out_channels, ho * wo),
            ]
        }
        LayerSpec::BinaryBlockNormal { channels } => {
            if channels != c {
                return Err(Error::Spec(format!("{}: expects {} channels, got {}", prefix, channels, c)));
            }
            let sp = h * w;
            vec![
                rsign_row(n("rsign1"), c, sp),
                binary_conv_row(n("conv3x3"), c, c, 3, sp, opts),
                bn_row(n("bn1"), c, sp),
                rprelu_row(n("rprelu1"), c, sp),
                rsign_row(n("rsign2"), c, sp),
                binary_conv_row(n("conv1x1"), c, c, 1, sp, opts),
                bn_row(n("bn2"), c, sp),
                rprelu_row(n("rprelu2"), c, sp),
            ]
        }
        LayerSpec::BinaryBlockReduction {
            in_channels,
            out_channels,
            stride,
        } => {
            if in_channels != c {
                return Err(Error::Spec(format!("{}: expects {} channels, got {}", prefix, in_channels, c)));
            }
            let (ho, wo) = conv_out(c)?;
            let sp = ho * wo;
            let mut rows = vec![
                rsign_row(n("rsign1"), c, h * w),
                binary_conv_row(n("conv3x3"), c, c, 3, sp, opts),
                bn_row(n("bn1"), c, sp),
            ];
            if stride == 2 {
                let (hp, wp) = (h.div_ceil(2) * 2, w.div_ceil(2) * 2);
                rows.push(row(n("shortcut_pool"), OpClass::Elementwise, 0, c * hp * wp, 0));
            }
            rows.extend([
                rprelu_row(n("rprelu1"), c, sp),
                rsign_row(n("rsign2"), c, sp),
                binary_conv_row(n("conv1x1"), out_channels, c, 1, sp, opts),
                bn_row(n("bn2"), out_channels, sp),
                rprelu_row(n("rprelu2"), out_channels, sp),
            ]);
            rows
        }
        LayerSpec::GlobalPool => vec![row(n("pool"), OpClass::Elementwise, 0, c * h * w, 0)],
        LayerSpec::FcHead { classes } => {
            vec![row(n("fc"), OpClass::Mac, 0, c * classes, 32 * c * classes)]
        }
    })
}

/// Row-name prefix for layer `i` (also used for checkpoint parameter names).
pub fn layer_prefix(i: usize, layer: &LayerSpec) -> String {
    match layer {
        LayerSpec::FirstConvFp32 { .. } => "stem".to_string(),
        LayerSpec::GlobalPool => "pool".to_string(),
        LayerSpec::FcHead { .. } => "head".to_string(),
        _ => format!("block{:02}", i),
    }
}

pub fn network_cost(spec: &NetworkSpec, opts: &CostOptions) -> Result<CostReport> {
    let shapes = spec.shapes()?;
    let mut rows = Vec::new();
    for (i, layer) in spec.layers.iter().enumerate() {
        rows.extend(layer_cost(layer, shapes[i], &layer_prefix(i, layer), opts)?);
    }
    let name = if spec.has_head() { "cnn+fc" } else { "cnn" };
    Ok(CostReport::from_rows(name, rows))
}

// Tree storage: internal node = 32-bit threshold + 16-bit feature index +
// leaf flag + default-direction bit; leaf = 32-bit weight + leaf flag.
const INTERNAL_NODE_BITS: u64 = 32 + 16 + 2;
const LEAF_NODE_BITS: u64 = 32 + 1;

fn node_bits(node: &TreeNode) -> u64 {
    match node {
        TreeNode::Leaf { .. } => LEAF_NODE_BITS,
        TreeNode::Split { left, right, .. } => INTERNAL_NODE_BITS + node_bits(left) + node_bits(right),
    }
}

/// Worst-case compare count and storage of a trained ensemble.
pub fn gbdt_cost(ensemble: &TreeEnsemble) -> CostRow {
    let mut flops = 0u64;
    let mut bits = 0u64;
    for (_, tree) in ensemble.trees() {
        flops += tree.depth() as u64;
        bits += node_bits(tree);
    }
    CostRow {
        name: "gbdt".to_string(),
        class: OpClass::Compare,
        bops: 0,
        flops,
        param_bits: bits,
    }
}

/// Upper bound for any ensemble trained under `config` (full binary trees).
pub fn gbdt_cost_bound(config: &GbdtConfig) -> CostRow {
    let trees = config.tree_budget() as u64;
    let d = config.max_depth as u32;
    let internal = (1u64 << d) - 1;
    let leaves = 1u64 << d;
    CostRow {
        name: "gbdt-bound".to_string(),
        class: OpClass::Compare,
        bops: 0,
        flops: trees * config.max_depth as u64,
        param_bits: trees * (internal * INTERNAL_NODE_BITS + leaves * LEAF_NODE_BITS),
    }
}

/// Change from `a` to `b`: absolute `b − a` and `100·(b − a)/a`. The
/// percentage is `None` when the `a` value is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Delta {
    pub before: f64,
    pub after: f64,
    pub change: f64,
    pub percent: Option<f64>,
}

impl Delta {
    pub fn new(before: f64, after: f64) -> Self {
        let change = after - before;
        Delta {
            before,
            after,
            change,
            percent: if before == 0.0 { None } else { Some(100.0 * change / before) },
        }
    }

    pub fn percent_str(&self) -> String {
        match self.percent {
            Some(p) => format!("{:+.2}%", p),
            None => "n/a".to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RowDiff {
    pub name: String,
    pub bops: Delta,
    pub flops: Delta,
    pub param_bits: Delta,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportDiff {
    pub rows: Vec<RowDiff>,
    pub bops: Delta,
    pub flops: Delta,
    pub mac_flops: Delta,
    pub ops: Delta,
    pub param_bytes: Delta,
    pub param_megabytes: Delta,
}

/// Row-wise (matched by name; missing rows count as zero) and total deltas.
pub fn diff_reports(a: &CostReport, b: &CostReport) -> ReportDiff {
    let mut names: Vec<&str> = a.rows.iter().map(|r| r.name.as_str()).collect();
    for r in &b.rows {
        if !names.contains(&r.name.as_str()) {
            names.push(&r.name);
        }
    }
    let find = |rep: &CostReport, n: &str| rep.rows.iter().find(|r| r.name == n).cloned();
    let rows = names
        .into_iter()
        .map(|n| {
            let (x, y) = (find(a, n), find(b, n));
            let get = |r: &Option<CostRow>, f: fn(&CostRow) -> u64| r.as_ref().map(f).unwrap_or(0) as f64;
            RowDiff {
                name: n.to_string(),
                bops: Delta::new(get(&x, |r| r.bops), get(&y, |r| r.bops)),
                flops: Delta::new(get(&x, |r| r.flops), get(&y, |r| r.flops)),
                param_bits: Delta::new(get(&x, |r| r.param_bits), get(&y, |r| r.param_bits)),
            }
        })
        .filter(|d| d.bops.change != 0.0 || d.flops.change != 0.0 || d.param_bits.change != 0.0)
        .collect();
    ReportDiff {
        rows,
        bops: Delta::new(a.totals.bops as f64, b.totals.bops as f64),
        flops: Delta::new(a.totals.flops as f64, b.totals.flops as f64),
        mac_flops: Delta::new(a.mac_flops() as f64, b.mac_flops() as f64),
        ops: Delta::new(a.ops(), b.ops()),
        param_bytes: Delta::new(a.param_bytes(), b.param_bytes()),
        param_megabytes: Delta::new(a.param_megabytes(), b.param_megabytes()),
    }
}

impl ReportDiff {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<24} {:>14} {:>12} {:>12}", "changed layer", "dBOPs", "dFLOPs", "dparam_bits");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<24} {:>14} {:>12} {:>12}",
                r.name, r.bops.change, r.flops.change, r.param_bits.change
            );
        }
        let line = |s: &mut String, label: &str, d: &Delta| {
            let _ = writeln!(
                s,
                "{:<16} {:>16.6} -> {:>16.6}  change {:>+16.6} ({})",
                label,
                d.before,
                d.after,
                d.change,
                d.percent_str()
            );
        };
        line(&mut s, "BOPs", &self.bops);
        line(&mut s, "FLOPs", &self.flops);
        line(&mut s, "FLOPs (mac)", &self.mac_flops);
        line(&mut s, "OPs", &self.ops);
        line(&mut s, "param bytes", &self.param_bytes);
        line(&mut s, "param MB", &self.param_megabytes);
        s
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let _ = writeln!(s, "{}\t{}\t{}\t{}", r.name, r.bops.change, r.flops.change, r.param_bits.change);
        }
        let pct = |d: &Delta| d.percent.map(|p| format!("{:.6}", p)).unwrap_or_else(|| "n/a".into());
        let _ = writeln!(
            s,
            "TOTAL\t{}\t{}\t{}\t{}\t{}",
            self.bops.change,
            self.flops.change,
            self.param_bytes.change * 8.0,
            pct(&self.flops),
            pct(&self.param_bytes)
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_conv_hand_count() {
        let r = binary_conv_row("x".into(), 64, 32, 3, 14 * 14, &CostOptions::default());
        assert_eq!(r.bops, 3_612_672);
        let r = binary_conv_row("x".into(), 1, 1, 1, 1, &CostOptions::default());
        assert_eq!(r.bops, 1);
    }

    #[test]
    fn fc_head_cost() {
        let rows = layer_cost(&LayerSpec::FcHead { classes: 10 }, [1024, 1, 1], "head", &CostOptions::default()).unwrap();
        assert_eq!(rows[0].flops, 10_240);
        assert_eq!(rows[0].param_bits / 8, 40_960);
        assert!((rows[0].param_bits as f64 / 8.0 / BYTES_PER_MB - 0.0390625).abs() < 1e-15);
    }

    #[test]
    fn ops_formula_table_values() {
        assert_eq!(total_ops(1.38e8, 0.14e6), 2_296_250.0);
        assert_eq!(total_ops(1.38e8, 0.13e6), 2_286_250.0);
        assert_eq!(total_ops(0.0, 33e6), 33e6);
    }

    #[test]
    fn paper_total_deltas() {
        let d = Delta::new(0.14e6, 0.13e6);
        assert_eq!(d.percent_str(), "-7.14%");
        let d = Delta::new(3.91, 3.87);
        assert_eq!(d.percent_str(), "-1.02%");
        assert_eq!(Delta::new(0.0, 5.0).percent_str(), "n/a");
    }

    #[test]
    fn identical_reports_have_zero_deltas() {
        let r = network_cost(&NetworkSpec::reference(), &CostOptions::default()).unwrap();
        let d = diff_reports(&r, &r);
        assert!(d.rows.is_empty());
        assert_eq!(d.flops.change, 0.0);
        assert_eq!(d.param_bytes.percent, Some(0.0));
    }

    #[test]
    fn totals_are_column_sums() {
        let r = network_cost(&NetworkSpec::reference(), &CostOptions::default()).unwrap();
        assert_eq!(r.totals.bops, r.rows.iter().map(|x| x.bops).sum::<u64>());
        assert_eq!(r.totals.flops, r.rows.iter().map(|x| x.flops).sum::<u64>());
        assert_eq!(r.totals.param_bits, r.rows.iter().map(|x| x.param_bits).sum::<u64>());
        assert_eq!(r.ops(), r.totals.bops as f64 / 64.0 + r.totals.flops as f64);
    }

    #[test]
    fn removing_head_changes_by_fc_cost_exactly() {
        for spec in [NetworkSpec::reference(), NetworkSpec::reference_half()] {
            let a = network_cost(&spec, &CostOptions::default()).unwrap();
            let b = network_cost(&spec.without_head(), &CostOptions::default()).unwrap();
            let fk = (spec.feature_dim * spec.class_count) as f64;
            let d = diff_reports(&a, &b);
            assert_eq!(d.flops.change, -fk);
            assert_eq!(d.param_bytes.change, -4.0 * fk);
            assert_eq!(d.bops.change, 0.0);
        }
    }

    #[test]
    fn tsv_has_one_line_per_row_plus_total() {
        let r = network_cost(&NetworkSpec::reference_half(), &CostOptions::default()).unwrap();
        let tsv = r.to_tsv();
        assert_eq!(tsv.lines().count(), r.rows.len() + 1);
        assert!(tsv.lines().all(|l| l.split('\t').count() == 4));
    }
}
