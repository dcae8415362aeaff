//! Step sizes `α_k = α0/(k+o)^a`, `β_k = β0/(k+o)^b`, the constants that
//! the convergence analysis derives from them, feasibility checking, tuning
//! of `α0`, and the closed-form rate envelope.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::Gammas;
use crate::operators::ProblemConstants;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub alpha0: f64,
    pub beta0: f64,
    pub a: f64,
    pub b: f64,
    pub offset: u64,
}

impl StepSchedule {
    /// Checks only that the schedule is evaluable. The exponent relations
    /// are reported by [`check_conditions`].
    pub fn new(alpha0: f64, beta0: f64, a: f64, b: f64, offset: u64) -> Result<Self> {
        let s = Self {
            alpha0,
            beta0,
            a,
            b,
            offset,
        };
        s.validate()?;
        Ok(s)
    }

    /// `a = 2/3`, `b = 1`, offset 1.
    pub fn theorem(alpha0: f64, beta0: f64) -> Result<Self> {
        Self::new(alpha0, beta0, 2.0 / 3.0, 1.0, 1)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha0", self.alpha0), ("beta0", self.beta0)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidSchedule(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        for (name, v) in [("a", self.a), ("b", self.b)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidSchedule(format!("exponent {name} must be finite and > 0, got {v}")));
            }
        }
        if self.offset == 0 {
            return Err(Error::InvalidSchedule("offset must be >= 1".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn step_sizes(&self, k: u64) -> (f64, f64) {
        let t = (k + self.offset) as f64;
        (self.alpha0 / t.powf(self.a), self.beta0 / t.powf(self.b))
    }

    pub fn exponents_ok(&self) -> bool {
        0.5 < self.a && self.a < self.b && self.b <= 1.0 && 2.0 * self.b - self.a > 1.0
    }

    pub fn is_theorem_form(&self) -> bool {
        (self.a - 2.0 / 3.0).abs() < 1e-12 && self.b == 1.0
    }
}

pub fn step_sizes(s: &StepSchedule, k: u64) -> (f64, f64) {
    s.step_sizes(k)
}

/// Which weight `η` multiplies `‖x̂‖²` in the Lyapunov function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EtaVariant {
    /// `3 L2² / (2 μ_G μ_F)`
    #[default]
    Theorem,
    /// `3 L2 / (2 μ_F)`
    Proof,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DeriveOptions {
    pub eta_x: Option<f64>,
    pub eta_variant: EtaVariant,
    pub gammas: Gammas,
    /// `E[‖x̂0‖² + ‖ŷ0‖²]`
    pub initial_z: f64,
}

/// All constants of the analysis for a given problem and schedule.
///
/// `c1` and `c` are routinely too large for `f64`; their logarithms are
/// always finite and are what downstream code uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub l1: f64,
    pub l2: f64,
    pub l: f64,
    pub eta_x: f64,
    pub eta: f64,
    pub mu: f64,
    pub k1: f64,
    pub c1: f64,
    pub ln_c1: f64,
    pub c2: f64,
    pub c: f64,
    pub ln_c: f64,
    pub alpha0: f64,
    pub beta0: f64,
    pub eta_variant: EtaVariant,
}

fn eta_x_max(pc: &ProblemConstants, l1: f64) -> f64 {
    if l1 > 0.0 {
        pc.mu_f / (3.0 * l1)
    } else {
        f64::INFINITY
    }
}

pub fn derive_constants(
    pc: &ProblemConstants,
    s: &StepSchedule,
    opts: &DeriveOptions,
) -> Result<DerivedConstants> {
    s.validate()?;
    if s.a <= 0.5 {
        return Err(Error::InvalidSchedule(format!("a = {} must exceed 1/2 for C1 to be finite", s.a)));
    }
    let (a0, b0) = (s.alpha0, s.beta0);
    let l1 = pc.l_h * pc.l_g * (1.0 + pc.l_h * a0);
    let l2 = pc.l_g.powi(2) * (1.0 + 2.0 * (pc.l_h + 1.0)) * b0;
    let ex_max = eta_x_max(pc, l1);
    let eta_x = match opts.eta_x {
        Some(v) if !(v > 0.0) => return Err(Error::param("eta_x", "must be > 0")),
        Some(v) if v > ex_max => {
            return Err(Error::param("eta_x", format!("{v} exceeds mu_F/(3 L1) = {ex_max}")))
        }
        Some(v) => v,
        None if ex_max.is_finite() => ex_max,
        None => pc.mu_f,
    };
    let eta = match opts.eta_variant {
        EtaVariant::Theorem => 3.0 * l2 * l2 / (2.0 * pc.mu_g * pc.mu_f),
        EtaVariant::Proof => 3.0 * l2 / (2.0 * pc.mu_f),
    };
    let k1 = 1.0 + 4.0 * pc.l_g.powi(2) * (pc.l_h + 1.0).powi(4);
    let inv2a = 1.0 / (2.0 * s.a - 1.0);
    let ln_c1 = k1 * (a0 * a0 + inv2a);

    let g = opts.gammas;
    let (e2b, e2ba) = (2.0 * s.b - 1.0, 2.0 * s.b - s.a - 1.0);
    let c2 = if e2b > 0.0 && e2ba > 0.0 {
        2.0 * g.g22 * (b0 * b0 * e2b + 1.0) / e2b
            + g.g11 * (a0 * a0 * (2.0 * s.a - 1.0) + 1.0) * inv2a
            + (l1 * g.g22 / eta_x) * (b0 * b0 * e2ba + a0) / (a0 * e2ba)
    } else {
        f64::INFINITY
    };
    let ln_c = ln_c1 + (opts.initial_z + c2).ln() + k1 * inv2a;
    Ok(DerivedConstants {
        l1,
        l2,
        l: pc.l_max(),
        eta_x,
        eta,
        mu: pc.mu_f.min(pc.mu_g),
        k1,
        c1: ln_c1.exp(),
        ln_c1,
        c2,
        c: ln_c.exp(),
        ln_c,
        alpha0: a0,
        beta0: b0,
        eta_variant: opts.eta_variant,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clause {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
    /// Reported but not part of the overall verdict.
    pub extra: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub clauses: Vec<Clause>,
    pub pass: bool,
}

impl FeasibilityReport {
    pub fn failing(&self) -> impl Iterator<Item = &Clause> {
        self.clauses.iter().filter(|c| !c.pass && !c.extra)
    }

    pub fn clause(&self, name: &str) -> Option<&Clause> {
        self.clauses.iter().find(|c| c.name == name)
    }
}

fn ratio_bounds(pc: &ProblemConstants, l1: f64, l2: f64, eta_x: f64) -> [f64; 3] {
    let c1 = 2.0 * pc.mu_f * pc.mu_g / (3.0 * (2.0 * l1 * pc.mu_g + l2 * l2));
    let c2 = if l1 > 0.0 {
        pc.mu_g * eta_x / (2.0 * l1 * (pc.l_h + 1.0).powi(2))
    } else {
        f64::INFINITY
    };
    let c3 = 2.0 * pc.mu_f / (3.0 * (pc.mu_g + 2.0 * l1));
    [c1, c2, c3]
}

pub fn check_conditions(
    pc: &ProblemConstants,
    s: &StepSchedule,
    dc: &DerivedConstants,
) -> FeasibilityReport {
    let ratio = s.beta0 / s.alpha0;
    let [r1, r2, r3] = ratio_bounds(pc, dc.l1, dc.l2, dc.eta_x);
    let mut clauses = Vec::new();
    let mut push = |name: &str, lhs: f64, rhs: f64, pass: bool, extra: bool| {
        clauses.push(Clause {
            name: name.to_string(),
            lhs,
            rhs,
            pass,
            extra,
        })
    };
    push("ratio_mu_product", ratio, r1, ratio <= r1, false);
    push("ratio_eta_x", ratio, r2, ratio <= r2, false);
    push("ratio_mu_f", ratio, r3, ratio <= r3, false);
    let ex_max = eta_x_max(pc, dc.l1);
    push("eta_x", dc.eta_x, ex_max, dc.eta_x <= ex_max, false);
    push("a_gt_half", 0.5, s.a, 0.5 < s.a, false);
    push("a_lt_b", s.a, s.b, s.a < s.b, false);
    push("b_le_one", s.b, 1.0, s.b <= 1.0, false);
    push("two_b_minus_a_gt_one", 2.0 * s.b - s.a, 1.0, 2.0 * s.b - s.a > 1.0, false);
    push("beta0_le_alpha0", s.beta0, s.alpha0, s.beta0 <= s.alpha0, false);
    let extra_rhs = pc.mu_g / (dc.l2 * dc.l2);
    push("beta0_le_mu_g_over_l2_sq", s.beta0, extra_rhs, s.beta0 <= extra_rhs, true);
    let pass = clauses.iter().all(|c| c.pass || c.extra);
    FeasibilityReport { clauses, pass }
}

/// Ratio clauses with every right-hand side shrunk by `safety`.
fn feasible_with_margin(pc: &ProblemConstants, alpha0: f64, beta0: f64, safety: f64) -> bool {
    let l1 = pc.l_h * pc.l_g * (1.0 + pc.l_h * alpha0);
    let l2 = pc.l_g.powi(2) * (1.0 + 2.0 * (pc.l_h + 1.0)) * beta0;
    let eta_x = if l1 > 0.0 { pc.mu_f / (3.0 * l1) } else { pc.mu_f };
    let ratio = beta0 / alpha0;
    beta0 <= alpha0 && ratio_bounds(pc, l1, l2, eta_x).iter().all(|r| ratio <= safety * r)
}

const ALPHA0_MAX: f64 = 1e12;
const GRID_POINTS: usize = 4000;

/// Smallest `α0 ∈ [β0, 10¹²]` satisfying every clause with margin
/// `safety`, for `a = 2/3`, `b = 1` and offset 1.
pub fn auto_tune(pc: &ProblemConstants, beta0: f64, safety: f64) -> Result<StepSchedule> {
    auto_tune_with_offset(pc, beta0, safety, 1)
}

pub fn auto_tune_with_offset(
    pc: &ProblemConstants,
    beta0: f64,
    safety: f64,
    offset: u64,
) -> Result<StepSchedule> {
    if !(beta0.is_finite() && beta0 > 0.0) {
        return Err(Error::param("beta0", "must be finite and > 0"));
    }
    if !(safety > 0.0 && safety <= 1.0) {
        return Err(Error::param("safety", "must lie in (0, 1]"));
    }
    if beta0 > ALPHA0_MAX {
        return Err(Error::Infeasible(format!("beta0 = {beta0} exceeds the search range")));
    }
    // The clauses need not be monotone in α0, so scan a log grid first and
    // bisect only inside the first infeasible→feasible bracket.
    let (lo_l, hi_l) = (beta0.ln(), ALPHA0_MAX.ln());
    let grid = |i: usize| (lo_l + (hi_l - lo_l) * i as f64 / (GRID_POINTS - 1) as f64).exp();
    let first = (0..GRID_POINTS).find(|&i| feasible_with_margin(pc, grid(i), beta0, safety));
    let alpha0 = match first {
        None => {
            return Err(Error::Infeasible(format!(
                "no alpha0 in [{beta0}, {ALPHA0_MAX:e}] satisfies the step-size conditions"
            )))
        }
        Some(0) => beta0,
        Some(i) => {
            let (mut lo, mut hi) = (grid(i - 1), grid(i));
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if feasible_with_margin(pc, mid, beta0, safety) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            hi
        }
    };
    StepSchedule::new(alpha0, beta0, 2.0 / 3.0, 1.0, offset)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundVariant {
    /// The displayed rate, including the extra `(k+1)^(-2/3)` on the `Γ11` term.
    Literal,
    /// Without that factor. Never smaller than `Literal`.
    #[default]
    Corrected,
}

/// Additive pieces of [`theorem_bound`]. The `C`-weighted part is kept as a
/// logarithm since `C` usually overflows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    pub initial: f64,
    pub log_noise: f64,
    pub gamma11: f64,
    pub gamma22_pow: f64,
    pub ln_c_terms: f64,
}

impl BoundTerms {
    pub fn noise_part(&self) -> f64 {
        self.initial + self.log_noise + self.gamma11 + self.gamma22_pow
    }

    pub fn total(&self) -> f64 {
        self.noise_part() + self.ln_c_terms.exp()
    }

    /// `ln(total)`, finite even when `total` overflows.
    pub fn ln_total(&self) -> f64 {
        let n = self.noise_part();
        if n <= 0.0 {
            return self.ln_c_terms;
        }
        let (hi, lo) = if n.ln() > self.ln_c_terms {
            (n.ln(), self.ln_c_terms)
        } else {
            (self.ln_c_terms, n.ln())
        };
        hi + (lo - hi).exp().ln_1p()
    }
}

pub fn theorem_bound_terms(
    k: u64,
    dc: &DerivedConstants,
    pc: &ProblemConstants,
    gammas: &Gammas,
    v0: f64,
    variant: BoundVariant,
) -> BoundTerms {
    let (mu_f, mu_g) = (pc.mu_f, pc.mu_g);
    let (l, l1, l2, ex, a0) = (dc.l, dc.l1, dc.l2, dc.eta_x, dc.alpha0);
    let kf = k as f64;
    let log_fac = (1.0 + (kf + 1.0).ln()) / (kf + 2.0);
    let pow_fac = (kf + 2.0).powf(-2.0 / 3.0);
    let g11_fac = match variant {
        BoundVariant::Literal => (kf + 1.0).powf(-2.0 / 3.0),
        BoundVariant::Corrected => 1.0,
    };
    let c_log = 3.0 * l2 * l * l * (1.0 + 2.0 * l * l) / (2.0 * mu_g * mu_g * mu_f);
    let c_pow = 3.0 * l2 * l1 * (l + 1.0).powi(2) / (2.0 * mu_g.powi(3) * mu_f * ex * a0 * a0)
        + 4.0 * l2 * l.powi(4) * (l + 1.0).powi(2) * a0 / (mu_g * mu_f);
    BoundTerms {
        initial: v0 / (kf + 2.0),
        log_noise: (2.0 * mu_f + 3.0 * l2) * gammas.g22 / (2.0 * mu_g * mu_g * mu_f) * log_fac,
        gamma11: 3.0 * l2 * a0 * gammas.g11 / (2.0 * mu_g * mu_f) * g11_fac * pow_fac,
        gamma22_pow: 3.0 * l2 * l1 * gammas.g22 / (2.0 * mu_g.powi(3) * mu_f * ex * a0 * a0) * pow_fac,
        ln_c_terms: dc.ln_c + (c_log * log_fac + c_pow * pow_fac).ln(),
    }
}

/// Right-hand side of the rate theorem: a bound on `E[V_{k+1}]`.
pub fn theorem_bound(
    k: u64,
    dc: &DerivedConstants,
    pc: &ProblemConstants,
    gammas: &Gammas,
    v0: f64,
    variant: BoundVariant,
) -> f64 {
    theorem_bound_terms(k, dc, pc, gammas, v0, variant).total()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{make_builtin, Builtin, Params};

    fn unit_pc() -> ProblemConstants {
        ProblemConstants::new(1.0, 1.0, 1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn step_size_examples() {
        let s = StepSchedule::theorem(1.0, 1.0).unwrap();
        assert_eq!(s.step_sizes(0).0, 1.0);
        assert_eq!(s.step_sizes(7).1, 0.125);
        assert!((s.step_sizes(7).0 - 0.25).abs() < 1e-15);
    }

    #[test]
    fn derived_examples() {
        let s = StepSchedule::theorem(1.0, 1.0).unwrap();
        let dc = derive_constants(&unit_pc(), &s, &DeriveOptions::default()).unwrap();
        assert_eq!(dc.l1, 2.0);
        assert_eq!(dc.l2, 5.0);
        assert_eq!(dc.eta, 37.5);
        assert_eq!(dc.mu, 1.0);
        let proof = derive_constants(
            &unit_pc(),
            &s,
            &DeriveOptions {
                eta_variant: EtaVariant::Proof,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(proof.eta, 7.5);
    }

    #[test]
    fn derive_errors() {
        let s = StepSchedule::new(1.0, 1.0, 0.5, 1.0, 1).unwrap();
        assert!(derive_constants(&unit_pc(), &s, &DeriveOptions::default()).is_err());
        let s = StepSchedule::theorem(1.0, 1.0).unwrap();
        let opts = DeriveOptions {
            eta_x: Some(1.0),
            ..Default::default()
        };
        assert!(derive_constants(&unit_pc(), &s, &opts).is_err());
        assert!(StepSchedule::new(1.0, 1.0, 0.6, 1.0, 0).is_err());
        assert!(StepSchedule::new(-1.0, 1.0, 0.6, 1.0, 1).is_err());
    }

    #[test]
    fn tiny_beta_passes_ratio_clauses() {
        let pc = unit_pc();
        let s = StepSchedule::theorem(1.0, 1e-300).unwrap();
        let dc = derive_constants(&pc, &s, &DeriveOptions::default()).unwrap();
        let rep = check_conditions(&pc, &s, &dc);
        for name in ["ratio_mu_product", "ratio_eta_x", "ratio_mu_f"] {
            assert!(rep.clause(name).unwrap().pass);
        }
    }

    #[test]
    fn equal_exponents_fail() {
        let pc = unit_pc();
        let s = StepSchedule::new(1.0, 0.01, 0.9, 0.9, 1).unwrap();
        let dc = derive_constants(&pc, &s, &DeriveOptions::default()).unwrap();
        let rep = check_conditions(&pc, &s, &dc);
        assert!(!rep.clause("a_lt_b").unwrap().pass);
        assert!(!rep.pass);
    }

    #[test]
    fn auto_tune_tanh_is_feasible() {
        let p = make_builtin(Builtin::NonlinearTanh, &Params::new(), 4).unwrap();
        let pc = p.constants;
        let s = auto_tune(&pc, 1.0 / pc.mu_g, 1.0).unwrap();
        let dc = derive_constants(&pc, &s, &DeriveOptions::default()).unwrap();
        assert!(check_conditions(&pc, &s, &dc).pass);
        // just below the returned value is infeasible
        let t = StepSchedule::theorem(s.alpha0 * (1.0 - 1e-6), s.beta0).unwrap();
        let dt = derive_constants(&pc, &t, &DeriveOptions::default()).unwrap();
        assert!(!check_conditions(&pc, &t, &dt).pass);
    }

    #[test]
    fn polyak_identity_has_no_theorem_schedule() {
        // F = x − y with Q = I: the first ratio clause needs mu_F > 3 L_G / mu_G
        assert!(matches!(auto_tune(&unit_pc(), 1.0, 1.0), Err(Error::Infeasible(_))));
        let p = make_builtin(Builtin::PolyakRuppert, &Params::new(), 2).unwrap();
        let pc = p.constants;
        let s = auto_tune_with_offset(&pc, 1.0 / pc.mu_g, 1.0, 50).unwrap();
        assert_eq!(s.offset, 50);
        let dc = derive_constants(&pc, &s, &DeriveOptions::default()).unwrap();
        assert!(check_conditions(&pc, &s, &dc).pass);
    }

    #[test]
    fn tighter_safety_needs_larger_alpha() {
        let p = make_builtin(Builtin::NonlinearTanh, &Params::new(), 2).unwrap();
        let pc = p.constants;
        let a1 = auto_tune(&pc, 1.0 / pc.mu_g, 1.0).unwrap().alpha0;
        let a2 = auto_tune(&pc, 1.0 / pc.mu_g, 0.5).unwrap().alpha0;
        assert!(a2 >= a1);
    }

    #[test]
    fn infeasible_constants_error() {
        let pc = ProblemConstants::new(1e6, 1e6, 1e6, 1e-12, 1.0).unwrap();
        assert!(matches!(auto_tune(&pc, 1.0, 1.0), Err(Error::Infeasible(_))));
    }

    #[test]
    fn balancing_identity() {
        let s = StepSchedule::theorem(3.7, 0.2).unwrap();
        let q = |k| {
            let (a, b) = s.step_sizes(k);
            (a * b) / (b.powi(3) / (a * a))
        };
        let q0 = q(0);
        for k in [1u64, 10, 1000, 100_000, 1_000_000] {
            assert!((q(k) / q0 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn literal_not_above_corrected_and_tail_decreasing() {
        let p = make_builtin(Builtin::NonlinearTanh, &Params::new(), 4).unwrap();
        let pc = p.constants;
        let s = auto_tune(&pc, 1.0 / pc.mu_g, 1.0).unwrap();
        let g = Gammas {
            g11: 0.04,
            g12: 0.0,
            g22: 0.04,
        };
        let dc = derive_constants(
            &pc,
            &s,
            &DeriveOptions {
                gammas: g,
                initial_z: 8.0,
                ..Default::default()
            },
        )
        .unwrap();
        let mut prev = f64::INFINITY;
        for k in (0..1_000_000u64).step_by(997) {
            let lit = theorem_bound_terms(k, &dc, &pc, &g, 1.0, BoundVariant::Literal);
            let cor = theorem_bound_terms(k, &dc, &pc, &g, 1.0, BoundVariant::Corrected);
            assert!(lit.ln_total() <= cor.ln_total());
            if k > 10 {
                assert!(cor.ln_total() <= prev);
            }
            prev = cor.ln_total();
        }
    }

    #[test]
    fn zero_noise_zero_start_leaves_c_terms() {
        let pc = unit_pc();
        let s = StepSchedule::theorem(10.0, 1.0).unwrap();
        let opts = DeriveOptions {
            initial_z: 1.0,
            ..Default::default()
        };
        let dc = derive_constants(&pc, &s, &opts).unwrap();
        let t = theorem_bound_terms(0, &dc, &pc, &Gammas::default(), 0.0, BoundVariant::Corrected);
        assert_eq!(t.noise_part(), 0.0);
        assert!(t.ln_c_terms.is_finite());
        assert_eq!(t.ln_total(), t.ln_c_terms);
    }
}
