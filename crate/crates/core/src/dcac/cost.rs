use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dcac::config::DcacConfig;
use crate::dcac::layer::terms;

/// Exact and dominant-term cost of one DCAC at a given input extent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub config: DcacConfig,
    pub extent: [usize; 3],
    pub flops_static: u64,
    pub flops_dynamic: u64,
    pub flops_total: u64,
    pub flops_dynamic_approx: f64,
    pub flops_approx: f64,
    pub params_static: u64,
    pub params_dynamic: u64,
    pub params_dynamic_approx: f64,
    pub params_approx: f64,
    /// Per-term FLOPs, keyed like the instrumentation labels.
    pub flop_terms: BTreeMap<String, u64>,
    pub param_terms: BTreeMap<String, u64>,
}

/// Exported record shape for cost tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostRecord {
    pub config: DcacConfig,
    pub flops_exact: u64,
    pub flops_approx: f64,
    pub params_exact: u64,
    pub params_approx: f64,
}

impl CostReport {
    pub fn record(&self) -> CostRecord {
        CostRecord {
            config: self.config,
            flops_exact: self.flops_total,
            flops_approx: self.flops_approx,
            params_exact: self.params_static + self.params_dynamic,
            params_approx: self.params_approx,
        }
    }
}

/// Per-term FLOPs for a `T × H × W` input.
pub fn flop_terms(cfg: &DcacConfig, t: usize, h: usize, w: usize) -> BTreeMap<&'static str, u64> {
    let u = |v: usize| v as u64;
    let (ci, co, n) = (u(cfg.c_in), u(cfg.c_out), u(cfg.experts));
    let cig = u(cfg.cin_per_group());
    let hid = u(cfg.hidden());
    let kt = u(cfg.kernel[0]);
    let k = u(cfg.kernel_volume());
    let (t, hw) = (u(t), u(h * w));
    let kc = u(cfg.context_kernel);
    BTreeMap::from([
        (terms::UNFOLD, ci * t * hw * k),
        (terms::GAP, ci * t * hw),
        (terms::FC, ci * hid * t),
        (terms::BN, hid * t),
        (terms::FCS, hid * (cig + co + kt + n) * t),
        (terms::MUL1, n * co * cig * t * k),
        (terms::CONV1, kc * ci * ci * t * hw),
        (terms::GAP_CONTEXT, ci * t * hw),
        (terms::UNFOLD_CONTEXT, ci * t * kt),
        (terms::CONV2, ci * cig * co * t * k),
        (terms::MUL2, cig * co * t * k),
        (terms::CONV3D, cig * co * t * hw * k),
        (terms::STATIC, co * cig * k * t * hw),
    ])
}

/// Per-module parameter counts; batch norm counts both affine vectors.
pub fn param_terms(cfg: &DcacConfig) -> BTreeMap<&'static str, u64> {
    let u = |v: usize| v as u64;
    let (ci, co, n) = (u(cfg.c_in), u(cfg.c_out), u(cfg.experts));
    let cig = u(cfg.cin_per_group());
    let hid = u(cfg.hidden());
    let [kt, kh, kw] = cfg.kernel.map(u);
    BTreeMap::from([
        ("FC", ci * hid),
        ("BN", 2 * hid),
        ("FCs", hid * (cig + co + kt + n)),
        ("Experts", n * co * cig * kt * kh * kw),
        ("Conv1", u(cfg.context_kernel) * ci * ci),
        ("Conv2", ci * cig * co * kh * kw),
        ("Static", co * cig * kt * kh * kw),
        ("Gate", 1),
    ])
}

/// Exact term sums and the dominant-term approximations.
pub fn cost_model(cfg: &DcacConfig, t: usize, h: usize, w: usize) -> CostReport {
    let ft = flop_terms(cfg, t, h, w);
    let pt = param_terms(cfg);
    let flops_static = ft[terms::STATIC];
    let flops_dynamic: u64 = terms::DYNAMIC.iter().map(|k| ft[k]).sum();
    let params_static = pt["Static"];
    let params_dynamic: u64 = pt.iter().filter(|(k, _)| **k != "Static").map(|(_, v)| v).sum();

    let f = |v: usize| v as f64;
    let (ci, co, g) = (f(cfg.c_in), f(cfg.c_out), f(cfg.groups));
    let k = f(cfg.kernel_volume());
    let (tt, hw) = (f(t), f(h * w));
    let khw = f(cfg.kernel[1] * cfg.kernel[2]);
    let kt = f(cfg.kernel[0]);
    CostReport {
        config: *cfg,
        extent: [t, h, w],
        flops_static,
        flops_dynamic,
        flops_total: flops_static + flops_dynamic,
        flops_dynamic_approx: ci * tt * (ci * hw + co * k / g * (ci + hw)),
        flops_approx: ci * tt * (ci * hw + co * k / g * (ci + 2.0 * hw)),
        params_static,
        params_dynamic,
        params_dynamic_approx: ci * ci * (1.0 + co * khw / g),
        params_approx: ci * co * khw / g * (ci + kt) + ci * ci,
        flop_terms: ft.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        param_terms: pt.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_branch_product() {
        let cfg = DcacConfig { c_in: 64, c_out: 64, groups: 1, kernel: [3, 3, 3], experts: 6, reduction: 16, context_kernel: 1 };
        assert_eq!(cost_model(&cfg, 8, 8, 8).flops_static, 56_623_104);
    }

    #[test]
    fn totals_are_term_sums() {
        let cfg = DcacConfig::depthwise(64, 5);
        let r = cost_model(&cfg, 10, 7, 7);
        assert_eq!(r.flops_total, r.flop_terms.values().sum::<u64>());
        assert_eq!(r.params_static + r.params_dynamic, r.param_terms.values().sum::<u64>());
    }
}
