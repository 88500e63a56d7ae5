//! The exceptional field on a selected family.
//!
//! A vertical bump profile g enters at the coarse box and is pushed down the
//! nested family: each box passes a 1/ceil(sK) share of its line mass to each
//! of its selected children at the (at most two) heights whose partition
//! weights are active at a given line. The running per-box line mass is
//!
//!   alpha_n(x, y) = g(y) * prod_k phi_{R_k}(y) / sk^n
//!
//! along the chain of boxes containing (x, y), and u_n integrates the
//! density alpha_n / width in x. Exactly sk children per height make the
//! line integral telescope, so u_n(right edge, y) = g(y) for every n with no
//! quadrature involved; all derivatives are analytic via the product rule.
//!
//! Profiles are C^2 piecewise quintics (smoothstep ramps); the proof-side
//! constants used in reports are sup|g'| and c0 = sup|phi'|, both exact here.

use crate::boxes::{Rect, SelectedFamily};
use crate::error::{Error, Result};
use crate::stats::Kahan;

/// Quintic smoothstep on [0, 1]: 6t^5 - 15t^4 + 10t^3, C^2 with vanishing
/// first and second derivatives at both ends.
#[inline]
pub fn smoothstep(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        t * t * t * (t * (6.0 * t - 15.0) + 10.0)
    }
}

#[inline]
pub fn smoothstep_deriv(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else {
        30.0 * t * t * (t - 1.0) * (t - 1.0)
    }
}

/// Max of the smoothstep derivative (at t = 1/2).
pub const SMOOTHSTEP_DERIV_MAX: f64 = 1.875;

/// The entering profile: zero outside [1/4, 3/4], rises on [1/4, 1/2] to
/// exactly 1 and descends back to 0 by `fall_end`.
///
/// Line-mass conservation at the first refinement needs the support to end
/// by 1 - 2r, where the children's partition weights stop summing to one.
/// Small band ratios (r < 1/8) keep the symmetric choice `fall_end` = 3/4;
/// larger desk-scale ratios pull the upper ramp in.
#[derive(Clone, Copy, Debug)]
pub struct BumpProfile {
    pub fall_end: f64,
}

impl Default for BumpProfile {
    fn default() -> Self {
        Self { fall_end: 0.75 }
    }
}

impl BumpProfile {
    pub fn for_band_ratio(r: f64) -> Self {
        Self {
            fall_end: (1.0 - 2.0 * r).min(0.75),
        }
    }

    pub fn support(&self) -> (f64, f64) {
        (0.25, self.fall_end)
    }

    #[inline]
    pub fn eval(&self, y: f64) -> f64 {
        if y <= 0.25 || y >= self.fall_end {
            0.0
        } else if y <= 0.5 {
            smoothstep((y - 0.25) * 4.0)
        } else {
            smoothstep((self.fall_end - y) / (self.fall_end - 0.5))
        }
    }

    #[inline]
    pub fn deriv(&self, y: f64) -> f64 {
        if y <= 0.25 || y >= self.fall_end {
            0.0
        } else if y <= 0.5 {
            4.0 * smoothstep_deriv((y - 0.25) * 4.0)
        } else {
            -smoothstep_deriv((self.fall_end - y) / (self.fall_end - 0.5)) / (self.fall_end - 0.5)
        }
    }

    pub fn sup_deriv(&self) -> f64 {
        SMOOTHSTEP_DERIV_MAX / (0.25f64).min(self.fall_end - 0.5)
    }
}

/// Partition ramp: 1 on [-2r, 1-3r], 0 outside [-3r, 1-2r], quintic ramps of
/// width r on both sides. Satisfies phi(x - 1) + phi(x) = 1 on [0, 1].
#[derive(Clone, Copy, Debug)]
pub struct PartitionProfile {
    pub r: f64,
}

impl PartitionProfile {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let r = self.r;
        if x <= -3.0 * r || x >= 1.0 - 2.0 * r {
            0.0
        } else if x < -2.0 * r {
            smoothstep((x + 3.0 * r) / r)
        } else if x <= 1.0 - 3.0 * r {
            1.0
        } else {
            1.0 - smoothstep((x - (1.0 - 3.0 * r)) / r)
        }
    }

    #[inline]
    pub fn deriv(&self, x: f64) -> f64 {
        let r = self.r;
        if x <= -3.0 * r || x >= 1.0 - 2.0 * r {
            0.0
        } else if x < -2.0 * r {
            smoothstep_deriv((x + 3.0 * r) / r) / r
        } else if x <= 1.0 - 3.0 * r {
            0.0
        } else {
            -smoothstep_deriv((x - (1.0 - 3.0 * r)) / r) / r
        }
    }

    /// c0 = sup |phi'|.
    pub fn c0(&self) -> f64 {
        SMOOTHSTEP_DERIV_MAX / self.r
    }
}

/// The chain of boxes containing a point and the line mass there.
#[derive(Clone, Debug)]
pub struct AlphaEvaluation {
    /// Box indices of the containing chain, root first. Shorter than
    /// `scale + 1` entries when the point leaves the family early.
    pub chain: Vec<u32>,
    /// True when the chain reaches the requested scale.
    pub in_gamma: bool,
    pub value: f64,
    pub dvalue: f64,
}

/// Evaluator over an immutable family. All operations are pure.
pub struct Field<'a> {
    pub family: &'a SelectedFamily,
    pub g: BumpProfile,
    pub phi: PartitionProfile,
    k_pow: Vec<f64>,     // K^j
    k_pow_neg: Vec<f64>, // K^-j
    sk_inv: f64,
}

impl<'a> Field<'a> {
    pub fn new(family: &'a SelectedFamily) -> Self {
        let depth = family.depth as usize;
        let kf = family.k as f64;
        let k_pow: Vec<f64> = (0..=depth as i32 + 1).map(|j| kf.powi(j)).collect();
        let k_pow_neg: Vec<f64> = (0..=depth as i32 + 1).map(|j| kf.powi(-j)).collect();
        Self {
            family,
            g: BumpProfile::for_band_ratio(family.r()),
            phi: PartitionProfile { r: family.r() },
            k_pow,
            k_pow_neg,
            sk_inv: 1.0 / family.sk as f64,
        }
    }

    /// Extended y-range of a box, from cached powers.
    #[inline]
    fn ext_y(&self, idx: usize) -> (f64, f64) {
        let b = &self.family.boxes[idx];
        let s = b.scale as usize;
        let y1 = (b.level + 1) as f64 * self.k_pow_neg[s];
        let y0 = b.level as f64 * self.k_pow_neg[s] - 3.0 * self.family.rk as f64 * self.k_pow_neg[s + 1];
        (y0, y1)
    }

    /// Partition weight and its y-derivative for a box at `scale`.
    #[inline]
    fn child_factor(&self, idx: usize, scale: usize, y: f64, val: f64, dval: f64) -> (f64, f64) {
        let b = &self.family.boxes[idx];
        let arg = self.k_pow[scale] * y - b.level as f64;
        let w = self.phi.eval(arg);
        let dw = self.phi.deriv(arg) * self.k_pow[scale];
        ((val * w) * self.sk_inv, (dval * w + val * dw) * self.sk_inv)
    }

    /// Visit all scale-`target` boxes whose (ancestor-clipped) extended
    /// rectangles meet the horizontal line at height y, in time order,
    /// with their chain mass and its y-derivative.
    pub fn visit_line<F: FnMut(usize, f64, f64)>(&self, target: u32, y: f64, f: &mut F) {
        self.visit_line_rec(0, 0, target, y, self.g.eval(y), self.g.deriv(y), f);
    }

    fn visit_line_rec<F: FnMut(usize, f64, f64)>(
        &self,
        idx: usize,
        scale: u32,
        target: u32,
        y: f64,
        val: f64,
        dval: f64,
        f: &mut F,
    ) {
        if scale == target {
            f(idx, val, dval);
            return;
        }
        for c in self.family.children(idx) {
            let (y0, y1) = self.ext_y(c);
            if y >= y0 && y < y1 {
                let (cv, cd) = self.child_factor(c, scale as usize + 1, y, val, dval);
                self.visit_line_rec(c, scale + 1, target, y, cv, cd, f);
            }
        }
    }

    /// Chain of boxes containing (x, y) down to `scale`, with the line mass.
    /// Points on shared vertical boundaries belong to the right-hand box
    /// (extents are half-open in x).
    pub fn alpha_at(&self, scale: u32, x: f64, y: f64) -> AlphaEvaluation {
        let root = &self.family.boxes[0];
        let mut chain = Vec::with_capacity(scale as usize + 1);
        let mut val = self.g.eval(y);
        let mut dval = self.g.deriv(y);
        if x < root.x0 || x >= root.x1 {
            return AlphaEvaluation {
                chain,
                in_gamma: false,
                value: 0.0,
                dvalue: 0.0,
            };
        }
        chain.push(0u32);
        let mut cur = 0usize;
        for s in 1..=scale {
            let mut found = None;
            for c in self.family.children(cur) {
                let b = &self.family.boxes[c];
                if x >= b.x0 && x < b.x1 {
                    let (y0, y1) = self.ext_y(c);
                    if y >= y0 && y < y1 {
                        found = Some(c);
                    }
                    break; // children are disjoint in x
                }
            }
            match found {
                Some(c) => {
                    let (nv, nd) = self.child_factor(c, s as usize, y, val, dval);
                    val = nv;
                    dval = nd;
                    chain.push(c as u32);
                    cur = c;
                }
                None => {
                    return AlphaEvaluation {
                        chain,
                        in_gamma: false,
                        value: 0.0,
                        dvalue: 0.0,
                    };
                }
            }
        }
        AlphaEvaluation {
            chain,
            in_gamma: true,
            value: val,
            dvalue: dval,
        }
    }

    /// u_n(x, y): exact line integral of the stage-n density from 0 to x.
    pub fn u_eval(&self, n: u32, x: f64, y: f64) -> f64 {
        let mut acc = Kahan::new();
        self.visit_line(n, y, &mut |idx, val, _| {
            let b = &self.family.boxes[idx];
            if b.x1 <= x {
                acc.add(val);
            } else if b.x0 < x {
                acc.add(val * (x - b.x0) / (b.x1 - b.x0));
            }
        });
        acc.total()
    }

    /// Analytic d/dy of u_n at (x, y), by the product rule along chains.
    pub fn grad_y_u(&self, n: u32, x: f64, y: f64) -> f64 {
        let mut acc = Kahan::new();
        self.visit_line(n, y, &mut |idx, _, dval| {
            let b = &self.family.boxes[idx];
            if b.x1 <= x {
                acc.add(dval);
            } else if b.x0 < x {
                acc.add(dval * (x - b.x0) / (b.x1 - b.x0));
            }
        });
        acc.total()
    }

    /// The uniform limit u(x, y) within `tol`: returns u_m at the first stage
    /// m where either the point has left the family (exact value) or the
    /// geometric tail bound sum_{j >= m} sk^-j falls below tol.
    pub fn u_limit_eval(&self, x: f64, y: f64, tol: f64) -> Result<f64> {
        let sk = self.family.sk as f64;
        for m in 0..=self.family.depth {
            let a = self.alpha_at(m, x, y);
            if !a.in_gamma || a.value == 0.0 {
                return Ok(self.u_eval(m, x, y));
            }
            let tail = sk.powi(-(m as i32)) * sk / (sk - 1.0);
            if tail < tol {
                return Ok(self.u_eval(m, x, y));
            }
        }
        let m = self.family.depth;
        let tail = sk.powi(-(m as i32)) * sk / (sk - 1.0);
        if tail < tol {
            Ok(self.u_eval(m, x, y))
        } else {
            Err(Error::ToleranceUnachievable {
                tol,
                depth: self.family.depth,
            })
        }
    }

    /// Exact-in-x, midpoint-in-y integral of |d_y u_{n+1}|^p over the n-th
    /// layer (scale-n boxes minus scale-(n+1) boxes). On that region the
    /// x-derivative vanishes and the y-derivative is piecewise constant in x
    /// between child edges, so the x-integration is a prefix sweep with no
    /// quadrature error; `cells_per_child` midpoint cells per child height
    /// control the y-resolution, with one Richardson halving for the error
    /// estimate.
    pub fn sobolev_layer(&self, n: u32, p_exp: f64, cells_per_child: u32) -> Result<LayerIntegral> {
        if n >= self.family.depth {
            return Err(Error::InsufficientDepth {
                depth: self.family.depth,
                n_max: n + 1,
            });
        }
        let coarse = self.layer_midpoint(n, p_exp, cells_per_child)?;
        let fine = self.layer_midpoint(n, p_exp, cells_per_child * 2)?;
        let value = fine + (fine - coarse) / 3.0;
        Ok(LayerIntegral {
            scale: n,
            value,
            quad_error: ((fine - coarse) / 3.0).abs(),
            cells_per_child,
        })
    }

    fn layer_midpoint(&self, n: u32, p_exp: f64, cells_per_child: u32) -> Result<f64> {
        // y-span of the scale-n boxes
        let lo_idx = self.family.scale_start[n as usize] as usize;
        let n_boxes = self.family.boxes_at(n).len();
        let mut y_lo = f64::INFINITY;
        let mut y_hi = f64::NEG_INFINITY;
        for i in 0..n_boxes {
            let (a, b) = self.ext_y(lo_idx + i);
            y_lo = y_lo.min(a);
            y_hi = y_hi.max(b);
        }
        let child_height =
            (1.0 + 3.0 * self.family.r()) * self.k_pow_neg[n as usize + 1];
        let dy = child_height / cells_per_child as f64;
        let ny = ((y_hi - y_lo) / dy).ceil() as usize;
        let dy = (y_hi - y_lo) / ny as f64;
        let mut total = Kahan::new();
        let pow = |v: f64| -> f64 {
            let a = v.abs();
            if p_exp == 1.0 {
                a
            } else if p_exp == 2.0 {
                a * a
            } else {
                a.powf(p_exp)
            }
        };
        for j in 0..ny {
            let y = y_lo + (j as f64 + 0.5) * dy;
            let mut prefix = Kahan::new();
            let mut line = Kahan::new();
            self.visit_line(n, y, &mut |idx, val, dval| {
                let b = &self.family.boxes[idx];
                let mut xcur = b.x0;
                for c in self.family.children(idx) {
                    let (cy0, cy1) = self.ext_y(c);
                    if y >= cy0 && y < cy1 {
                        let cb = &self.family.boxes[c];
                        if cb.x0 > xcur {
                            line.add((cb.x0 - xcur) * pow(prefix.total()));
                        }
                        let (_, cd) = self.child_factor(c, n as usize + 1, y, val, dval);
                        prefix.add(cd);
                        xcur = cb.x1;
                    }
                }
                if b.x1 > xcur {
                    line.add((b.x1 - xcur) * pow(prefix.total()));
                }
            });
            total.add(line.total() * dy);
        }
        Ok(total.total())
    }

    /// Sup over a probe grid of |d_y u_n|; exact in x per line (the sup over
    /// x of a piecewise-linear prefix is attained at box edges).
    pub fn v_sup(&self, n: u32, ny: usize) -> f64 {
        let (mut y_lo, mut y_hi) = self.ext_y(0);
        // widen a touch so ramp edges are sampled
        let pad = 0.05 * (y_hi - y_lo);
        y_lo -= pad;
        y_hi += pad;
        let mut v: f64 = 0.0;
        for j in 0..ny {
            let y = y_lo + (j as f64 + 0.5) * (y_hi - y_lo) / ny as f64;
            let mut prefix = Kahan::new();
            self.visit_line(n, y, &mut |_, _, dval| {
                prefix.add(dval);
                v = v.max(prefix.total().abs());
            });
        }
        v
    }

    /// The D \ Gamma_0 contribution: to the right of the coarse box the field
    /// equals g(y), so the integral is (width of D to the right) times
    /// the 1-d integral of |g'|^p; everywhere else off Gamma_0 the field
    /// vanishes identically.
    pub fn outer_term(&self, domain: &Rect, p_exp: f64) -> f64 {
        let root = self.family.root();
        let width = (domain.x1 - root.x1).max(0.0);
        // Simpson over the support of g'
        let n = 4000;
        let (a, b) = self.g.support();
        let h = (b - a) / n as f64;
        let f = |y: f64| self.g.deriv(y).abs().powf(p_exp);
        let mut acc = f(a) + f(b);
        for i in 1..n {
            acc += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        width * acc * h / 3.0
    }
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct LayerIntegral {
    pub scale: u32,
    pub value: f64,
    pub quad_error: f64,
    pub cells_per_child: u32,
}

/// True when s^-p >= K: the layer sums are expected to diverge and reports
/// must flag the run.
pub fn divergence_flagged(family: &SelectedFamily, p_exp: f64) -> bool {
    let s = family.c / 2.0;
    s.powf(-p_exp) >= family.k as f64
}

/// Per-stage sup report for the y-derivative bound.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct VnReport {
    pub v: Vec<f64>,
    /// The single constant C with v_{n+1} <= v_n + C s^{-(n+1)} for all n.
    pub c_fit: f64,
    /// Fitted growth exponent of v_n against n (log scale).
    pub growth_exponent: f64,
}

pub fn vn_bound_check(field: &Field<'_>, n_max: u32, ny: usize) -> VnReport {
    let s = field.family.c / 2.0;
    let v: Vec<f64> = (0..=n_max).map(|n| field.v_sup(n, ny)).collect();
    let mut c_fit: f64 = 0.0;
    for n in 0..n_max as usize {
        let resid = (v[n + 1] - v[n]).max(0.0);
        c_fit = c_fit.max(resid * s.powi(n as i32 + 1));
    }
    let xs: Vec<f64> = (0..=n_max as usize).map(|n| n as f64).collect();
    let ys: Vec<f64> = v.iter().map(|x| x.max(1e-300).ln()).collect();
    let (slope, _, _) = crate::stats::linear_fit(&xs, &ys);
    VnReport {
        v,
        c_fit,
        growth_exponent: slope,
    }
}

/// The absolute-continuity witness along horizontal lines.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct AclReport {
    pub probes: Vec<AclProbe>,
    /// Sum of scale-n box widths on the line y = 1/2, per scale.
    pub line_measures: Vec<f64>,
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct AclProbe {
    pub y: f64,
    /// u(right edge) - u(left edge) at the deepest stage: the retained jump.
    pub jump: f64,
    /// Largest |d_x u| seen over off-family probe points on the line
    /// (identically zero: the density vanishes off the family).
    pub max_abs_dx_off: f64,
}

pub fn acl_witness(field: &Field<'_>, y_probes: &[f64]) -> AclReport {
    let fam = field.family;
    let depth = fam.depth;
    let root = fam.root();
    let probes = y_probes
        .iter()
        .map(|&y| {
            let jump = field.u_eval(depth, root.x1, y) - field.u_eval(depth, root.x0, y);
            // probe the gaps between scale-1 boxes: off the family there,
            // d_x u equals the stage density, which is exactly zero
            let mut max_abs = 0.0f64;
            let mut edges: Vec<(f64, f64)> = Vec::new();
            field.visit_line(1.min(depth), y, &mut |idx, _, _| {
                let b = &fam.boxes[idx];
                edges.push((b.x0, b.x1));
            });
            let mut xcur = root.x0;
            for &(a, b) in &edges {
                if a > xcur {
                    let x = 0.5 * (xcur + a);
                    let al = field.alpha_at(depth, x, y);
                    max_abs = max_abs.max(al.value.abs());
                }
                xcur = b;
            }
            AclProbe {
                y,
                jump,
                max_abs_dx_off: max_abs,
            }
        })
        .collect();
    let line_measures = (0..=depth)
        .map(|n| {
            let mut acc = Kahan::new();
            field.visit_line(n, 0.5, &mut |idx, _, _| {
                acc.add(fam.width(idx));
            });
            acc.total()
        })
        .collect();
    AclReport {
        probes,
        line_measures,
    }
}
