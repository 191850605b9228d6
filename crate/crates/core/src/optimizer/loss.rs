//! Residuals, regularizer, total loss and its analytic gradient.
//!
//! Parameters are ordered `(tx, ty, tz, rr, rp, ry, s, p, alpha)`. The
//! transform maps source (`S_a`, samples `A`) coordinates into target (`S_b`,
//! samples `B`) coordinates.

use nalgebra::Matrix3;
use rayon::prelude::*;

use super::kernel::{kernel_eval, KernelParams};
use crate::error::{Error, Result};
use crate::nn::KdTree;
use crate::sdf::SdfField;
use crate::transform::{euler_partials, SimTransform};
use crate::Vec3;

pub const N_PARAMS: usize = 9;
pub type Gradient = [f64; N_PARAMS];

/// `|S_a(x) − S_b(g·x)/s|`.
pub fn residual_forward(x: &Vec3, sa: &SdfField, sb: &SdfField, g: &SimTransform) -> f64 {
    (sa.value(x) - sb.value(&g.apply(x)) / g.scale).abs()
}

/// `|S_b(x) − s·S_a(g⁻¹·x)|`, the forward residual with the roles swapped.
pub fn residual_backward(x: &Vec3, sb: &SdfField, sa: &SdfField, g: &SimTransform) -> f64 {
    let sim = g.similarity();
    (sb.value(x) - g.scale * sa.value(&sim.apply_inverse(x))).abs()
}

/// Mean over `a ∈ A` of the squared distance from `a` to the nearest point of
/// `g⁻¹(B)`, evaluated as `|g·a − b|²/s²`.
pub fn regularizer(a: &[Vec3], b: &[Vec3], g: &SimTransform) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::input("regularizer needs nonempty sample sets"));
    }
    let tree = KdTree::build(b);
    Ok(regularizer_with(a, &tree, g))
}

fn regularizer_with(a: &[Vec3], tree: &KdTree, g: &SimTransform) -> f64 {
    let sim = g.similarity();
    let s2 = g.scale * g.scale;
    let terms: Vec<f64> = a
        .par_iter()
        .map(|x| tree.nearest(&sim.apply(x)).map_or(0.0, |(_, d2)| d2 / s2))
        .collect();
    terms.iter().sum::<f64>() / a.len() as f64
}

/// Loss options shared by evaluation and optimization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossOptions {
    pub bidirectional: bool,
    pub reg_weight: f64,
}

impl Default for LossOptions {
    fn default() -> Self {
        LossOptions {
            bidirectional: true,
            reg_weight: 1.0,
        }
    }
}

/// Loss value broken down by term.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub forward: f64,
    pub backward: f64,
    pub regularizer: f64,
    pub mean_forward_residual: f64,
    pub mean_backward_residual: f64,
}

/// Precomputed sample data for repeated loss evaluation.
pub struct Evaluator<'a> {
    sa: &'a SdfField,
    sb: &'a SdfField,
    a: &'a [Vec3],
    b: &'a [Vec3],
    sa_at_a: Vec<f64>,
    sb_at_b: Vec<f64>,
    tree_b: KdTree,
    opts: LossOptions,
}

struct Frame {
    r: Matrix3<f64>,
    dr: [Matrix3<f64>; 3],
    t: Vec3,
    s: f64,
    p: f64,
    alpha: f64,
}

impl Frame {
    fn new(g: &SimTransform, k: &KernelParams) -> Self {
        Frame {
            r: g.rotation(),
            dr: euler_partials(g.euler),
            t: g.translation_vec(),
            s: g.scale,
            p: k.p,
            alpha: k.alpha,
        }
    }
}

type Term = (f64, f64, Gradient);

fn sum_terms(terms: &[Term]) -> (f64, f64, Gradient) {
    let mut v = 0.0;
    let mut res = 0.0;
    let mut g = [0.0; N_PARAMS];
    for (kv, r, tg) in terms {
        v += kv;
        res += r;
        for k in 0..N_PARAMS {
            g[k] += tg[k];
        }
    }
    (v, res, g)
}

impl<'a> Evaluator<'a> {
    pub fn new(
        sa: &'a SdfField,
        sb: &'a SdfField,
        a: &'a [Vec3],
        b: &'a [Vec3],
        opts: LossOptions,
    ) -> Result<Self> {
        if a.is_empty() || (opts.bidirectional || opts.reg_weight != 0.0) && b.is_empty() {
            return Err(Error::input("loss needs nonempty sample sets"));
        }
        Ok(Evaluator {
            sa,
            sb,
            a,
            b,
            sa_at_a: a.par_iter().map(|x| sa.value(x)).collect(),
            sb_at_b: b.par_iter().map(|x| sb.value(x)).collect(),
            tree_b: KdTree::build(b),
            opts,
        })
    }

    pub fn loss(&self, g: &SimTransform, k: &KernelParams) -> LossBreakdown {
        self.evaluate(g, k, false).0
    }

    pub fn loss_and_gradient(&self, g: &SimTransform, k: &KernelParams) -> (LossBreakdown, Gradient) {
        self.evaluate(g, k, true)
    }

    fn forward_term(&self, i: usize, f: &Frame, grad: bool) -> Term {
        let a = &self.a[i];
        let ra = f.r * a;
        let y = ra * f.s + f.t;
        let (sb, nb) = if grad {
            self.sb.value_and_gradient(&y)
        } else {
            (self.sb.value(&y), Vec3::zeros())
        };
        let r = self.sa_at_a[i] - sb / f.s;
        let ke = kernel_eval(r, f.p, f.alpha);
        let mut g = [0.0; N_PARAMS];
        if grad {
            let dt = -nb / f.s;
            for c in 0..3 {
                g[c] = ke.d_r * dt[c];
                g[3 + c] = ke.d_r * -nb.dot(&(f.dr[c] * a));
            }
            g[6] = ke.d_r * (-nb.dot(&ra) / f.s + sb / (f.s * f.s));
            g[7] = ke.d_p;
            g[8] = ke.d_alpha;
        }
        (ke.value, r.abs(), g)
    }

    fn backward_term(&self, i: usize, f: &Frame, grad: bool) -> Term {
        let b = &self.b[i];
        let bt = b - f.t;
        let z = f.r.tr_mul(&bt) / f.s;
        let (sa, na) = if grad {
            self.sa.value_and_gradient(&z)
        } else {
            (self.sa.value(&z), Vec3::zeros())
        };
        let r = self.sb_at_b[i] - f.s * sa;
        let ke = kernel_eval(r, f.p, f.alpha);
        let mut g = [0.0; N_PARAMS];
        if grad {
            let dt = f.r * na;
            for c in 0..3 {
                g[c] = ke.d_r * dt[c];
                g[3 + c] = ke.d_r * -na.dot(&f.dr[c].tr_mul(&bt));
            }
            g[6] = ke.d_r * (-sa + na.dot(&z));
            g[7] = ke.d_p;
            g[8] = ke.d_alpha;
        }
        (ke.value, r.abs(), g)
    }

    fn regularizer_term(&self, i: usize, f: &Frame, grad: bool) -> Term {
        let a = &self.a[i];
        let ra = f.r * a;
        let y = ra * f.s + f.t;
        let Some((j, d2)) = self.tree_b.nearest(&y) else {
            return (0.0, 0.0, [0.0; N_PARAMS]);
        };
        let s2 = f.s * f.s;
        let mut g = [0.0; N_PARAMS];
        if grad {
            let d = y - self.b[j];
            for c in 0..3 {
                g[c] = 2.0 * d[c] / s2;
                g[3 + c] = 2.0 * d.dot(&(f.dr[c] * a)) / f.s;
            }
            g[6] = 2.0 * d.dot(&ra) / s2 - 2.0 * d2 / (s2 * f.s);
        }
        (d2 / s2, 0.0, g)
    }

    fn evaluate(&self, g: &SimTransform, k: &KernelParams, grad: bool) -> (LossBreakdown, Gradient) {
        let f = Frame::new(g, k);
        let mut out = LossBreakdown::default();
        let mut total_grad = [0.0; N_PARAMS];
        let mut add = |w: f64, grad_part: &Gradient| {
            for c in 0..N_PARAMS {
                total_grad[c] += w * grad_part[c];
            }
        };

        let na = self.a.len() as f64;
        let fwd: Vec<Term> = (0..self.a.len())
            .into_par_iter()
            .map(|i| self.forward_term(i, &f, grad))
            .collect();
        let (v, res, gr) = sum_terms(&fwd);
        out.forward = v / na;
        out.mean_forward_residual = res / na;
        add(1.0 / na, &gr);

        if !self.b.is_empty() {
            let nb = self.b.len() as f64;
            let bwd: Vec<Term> = (0..self.b.len())
                .into_par_iter()
                .map(|i| self.backward_term(i, &f, grad))
                .collect();
            let (v, res, gr) = sum_terms(&bwd);
            out.mean_backward_residual = res / nb;
            if self.opts.bidirectional {
                out.backward = v / nb;
                add(1.0 / nb, &gr);
            }
        }

        if self.opts.reg_weight != 0.0 {
            let reg: Vec<Term> = (0..self.a.len())
                .into_par_iter()
                .map(|i| self.regularizer_term(i, &f, grad))
                .collect();
            let (v, _, gr) = sum_terms(&reg);
            out.regularizer = v / na;
            add(self.opts.reg_weight / na, &gr);
        }
        out.total = out.forward + out.backward + self.opts.reg_weight * out.regularizer;
        (out, total_grad)
    }
}

/// Total loss for one state.
pub fn total_loss(
    sa: &SdfField,
    sb: &SdfField,
    a: &[Vec3],
    b: &[Vec3],
    g: &SimTransform,
    k: &KernelParams,
    opts: LossOptions,
) -> Result<f64> {
    g.validate()?;
    k.validate()?;
    Ok(Evaluator::new(sa, sb, a, b, opts)?.loss(g, k).total)
}

/// Analytic gradient of [`total_loss`] with nearest-neighbour correspondences
/// held fixed.
pub fn loss_gradient(
    sa: &SdfField,
    sb: &SdfField,
    a: &[Vec3],
    b: &[Vec3],
    g: &SimTransform,
    k: &KernelParams,
    opts: LossOptions,
) -> Result<Gradient> {
    g.validate()?;
    k.validate()?;
    Ok(Evaluator::new(sa, sb, a, b, opts)?.loss_and_gradient(g, k).1)
}

/// Packs transform and kernel into the parameter vector.
pub fn pack(g: &SimTransform, k: &KernelParams) -> Gradient {
    [
        g.translation[0],
        g.translation[1],
        g.translation[2],
        g.euler[0],
        g.euler[1],
        g.euler[2],
        g.scale,
        k.p,
        k.alpha,
    ]
}

pub fn unpack(v: &Gradient) -> (SimTransform, KernelParams) {
    (
        SimTransform {
            translation: [v[0], v[1], v[2]],
            euler: [v[3], v[4], v[5]],
            scale: v[6],
        },
        KernelParams { p: v[7], alpha: v[8] },
    )
}
