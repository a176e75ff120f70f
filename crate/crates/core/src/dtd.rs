//! First-order Taylor analysis of the relevance model of a gated product,
//! `R(z_g, z_s) = gate(z_g) · signal(z_s) · c_p`, expanded around its
//! nearest root.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Activation, ActivationKind};

/// Below this `|gate · signal|` the constant `c_p` is not identifiable.
pub const DEGENERACY_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GatedRelevanceModel {
    pub signal: Activation,
    pub gate: Activation,
    pub c_p: f64,
    /// Observed `(z_g, z_s)`.
    pub anchor: (f64, f64),
}

impl GatedRelevanceModel {
    /// Sigmoid gate with an explicit constant.
    pub fn with_constant(signal: Activation, c_p: f64, anchor: (f64, f64)) -> Result<Self> {
        if !c_p.is_finite() || !anchor.0.is_finite() || !anchor.1.is_finite() {
            return Err(Error::non_finite("relevance model"));
        }
        Ok(GatedRelevanceModel {
            signal,
            gate: Activation::sigmoid(),
            c_p,
            anchor,
        })
    }

    /// Chooses `c_p` so that the model reproduces `r_p` at `anchor`.
    pub fn calibrate(signal: Activation, anchor: (f64, f64), r_p: f64) -> Result<Self> {
        let gate = Activation::sigmoid();
        let prod = gate.eval(anchor.0) * signal.eval(anchor.1);
        if prod.abs() < DEGENERACY_THRESHOLD {
            return Err(Error::Degenerate(prod.abs()));
        }
        Self::with_constant(signal, r_p / prod, anchor)
    }
}

pub fn eval_model(m: &GatedRelevanceModel, z_g: f64, z_s: f64) -> f64 {
    m.gate.eval(z_g) * m.signal.eval(z_s) * m.c_p
}

/// `(z_g, 0)`, provided the signal vanishes at zero.
pub fn nearest_root(m: &GatedRelevanceModel, anchor: (f64, f64)) -> Result<(f64, f64)> {
    if !m.signal.vanishes_at_zero() {
        return Err(Error::NoRoot(format!(
            "{:?} signal never reaches zero; use an architecture whose cell input is not gated through it",
            m.signal.kind
        )));
    }
    Ok((anchor.0, 0.0))
}

/// Slope of the signal at the root, taken from the side of `z_s` for the
/// kinked relu.
fn signal_slope_at_root(signal: Activation, z_s: f64) -> f64 {
    match signal.kind {
        ActivationKind::Relu => {
            if z_s > 0.0 {
                signal.gain
            } else {
                0.0
            }
        }
        _ => signal.derivative(0.0),
    }
}

/// `(R_g, R_s)` first-order terms at the nearest root.
pub fn first_order_terms(m: &GatedRelevanceModel, anchor: (f64, f64)) -> Result<(f64, f64)> {
    let (rg, rs) = nearest_root(m, anchor)?;
    let r_g = m.gate.derivative(rg) * m.signal.eval(rs) * m.c_p * (anchor.0 - rg);
    let r_s = m.gate.eval(rg) * signal_slope_at_root(m.signal, anchor.1) * m.c_p * (anchor.1 - rs);
    Ok((r_g, r_s))
}

/// Model value at `anchor` minus the root value and both first-order terms.
pub fn remainder(m: &GatedRelevanceModel, anchor: (f64, f64)) -> Result<f64> {
    let root = nearest_root(m, anchor)?;
    let (r_g, r_s) = first_order_terms(m, anchor)?;
    Ok(eval_model(m, anchor.0, anchor.1) - (eval_model(m, root.0, root.1) + r_g + r_s))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtdGridPoint {
    pub z_g: f64,
    pub z_s: f64,
    pub model_value: f64,
    pub r_g_term: f64,
    pub r_s_term: f64,
    pub remainder: f64,
}

/// Evaluates the expansion on an `n x n` grid of anchors, each calibrated to
/// relevance `r_p`. Degenerate anchors are skipped.
pub fn dtd_grid(
    signal: Activation,
    z_g_range: (f64, f64),
    z_s_range: (f64, f64),
    n: usize,
    r_p: f64,
) -> Result<Vec<DtdGridPoint>> {
    if n < 2 {
        return Err(Error::InvalidConfig("grid needs at least two points per axis".into()));
    }
    let lin = |(lo, hi): (f64, f64), k: usize| lo + (hi - lo) * k as f64 / (n - 1) as f64;
    let mut out = Vec::with_capacity(n * n);
    for a in 0..n {
        for b in 0..n {
            let anchor = (lin(z_g_range, a), lin(z_s_range, b));
            let m = match GatedRelevanceModel::calibrate(signal, anchor, r_p) {
                Ok(m) => m,
                Err(Error::Degenerate(_)) => continue,
                Err(e) => return Err(e),
            };
            let (r_g_term, r_s_term) = first_order_terms(&m, anchor)?;
            out.push(DtdGridPoint {
                z_g: anchor.0,
                z_s: anchor.1,
                model_value: eval_model(&m, anchor.0, anchor.1),
                r_g_term,
                r_s_term,
                remainder: remainder(&m, anchor)?,
            });
        }
    }
    Ok(out)
}

pub fn grid_to_csv(points: &[DtdGridPoint]) -> String {
    let mut out = String::from("z_g,z_s,model_value,R_g_term,R_s_term,remainder\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            p.z_g, p.z_s, p.model_value, p.r_g_term, p.r_s_term, p.remainder
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SATURATED: f64 = 40.0;

    #[test]
    fn model_examples() {
        let m = GatedRelevanceModel::with_constant(Activation::tanh(), 1.3, (0.0, 0.0)).unwrap();
        assert_eq!(eval_model(&m, 5.0, 0.0), 0.0);
        let m = GatedRelevanceModel::with_constant(Activation::identity(), 1.0, (0.0, 2.0)).unwrap();
        assert_eq!(eval_model(&m, 0.0, 2.0), 1.0);
        let m = GatedRelevanceModel::calibrate(Activation::tanh(), (0.3, -1.1), 0.42).unwrap();
        assert!((eval_model(&m, 0.3, -1.1) - 0.42).abs() < 1e-12);
    }

    #[test]
    fn degenerate_anchor_is_flagged() {
        assert!(matches!(
            GatedRelevanceModel::calibrate(Activation::tanh(), (0.3, 0.0), 1.0),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn roots() {
        let m = GatedRelevanceModel::with_constant(Activation::tanh(), 1.0, (1.7, 0.4)).unwrap();
        assert_eq!(nearest_root(&m, (1.7, 0.4)).unwrap(), (1.7, 0.0));
        assert_eq!(nearest_root(&m, (1.7, 0.0)).unwrap(), (1.7, 0.0));
        let s = GatedRelevanceModel::with_constant(Activation::sigmoid(), 1.0, (1.7, 0.4)).unwrap();
        assert!(matches!(nearest_root(&s, (1.7, 0.4)), Err(Error::NoRoot(_))));
        assert!(matches!(remainder(&s, (1.7, 0.4)), Err(Error::NoRoot(_))));
    }

    #[test]
    fn identity_signal_is_exact() {
        let anchor = (0.8, -1.9);
        let m = GatedRelevanceModel::calibrate(Activation::identity(), anchor, 0.75).unwrap();
        let (r_g, r_s) = first_order_terms(&m, anchor).unwrap();
        assert_eq!(r_g, 0.0);
        assert!((r_s - 0.75).abs() < 1e-12);
    }

    #[test]
    fn tanh_saturation_mismatch() {
        let m = GatedRelevanceModel::with_constant(Activation::tanh(), 1.0, (SATURATED, 2.0)).unwrap();
        let (_, r_s) = first_order_terms(&m, (SATURATED, 2.0)).unwrap();
        assert!((r_s - 2.0).abs() < 1e-12);
        assert!((eval_model(&m, SATURATED, 2.0) - 0.9640).abs() < 1e-4);

        let m = GatedRelevanceModel::with_constant(Activation::tanh(), 1.0, (SATURATED, 3.0)).unwrap();
        let r = remainder(&m, (SATURATED, 3.0)).unwrap();
        assert!((r - (3.0f64.tanh() - 3.0)).abs() < 1e-12);
        assert!((r + 2.0049).abs() < 1e-4);

        let m = GatedRelevanceModel::with_constant(Activation::tanh(), 1.0, (SATURATED, 0.01)).unwrap();
        assert!(remainder(&m, (SATURATED, 0.01)).unwrap().abs() < 1e-6);
    }

    #[test]
    fn exact_signals_have_zero_remainder_on_grid() {
        for signal in [Activation::identity(), Activation::relu()] {
            // Relu is exact on its active side.
            let zs = if signal.kind == ActivationKind::Relu { (0.01, 5.0) } else { (-5.0, 5.0) };
            let pts = dtd_grid(signal, (-6.0, 6.0), zs, 100, 0.9).unwrap();
            assert_eq!(pts.len(), 10_000);
            for p in &pts {
                assert!(p.remainder.abs() < 1e-12, "{p:?}");
                assert_eq!(p.r_g_term, 0.0);
            }
        }
    }

    #[test]
    fn grid_csv_has_header_and_rows() {
        let pts = dtd_grid(Activation::tanh(), (-1.0, 1.0), (0.5, 1.0), 3, 1.0).unwrap();
        let csv = grid_to_csv(&pts);
        assert!(csv.starts_with("z_g,z_s,model_value,R_g_term,R_s_term,remainder\n"));
        assert_eq!(csv.lines().count(), 10);
    }

    proptest! {
        #[test]
        fn gate_term_always_vanishes(z_g in -20.0f64..20.0, z_s in -4.0f64..4.0, r_p in -2.0f64..2.0) {
            prop_assume!(z_s.abs() > 1e-6);
            for signal in [Activation::tanh(), Activation::identity()] {
                let m = GatedRelevanceModel::calibrate(signal, (z_g, z_s), r_p).unwrap();
                prop_assert_eq!(first_order_terms(&m, (z_g, z_s)).unwrap().0, 0.0);
                prop_assert!((eval_model(&m, z_g, z_s) - r_p).abs() <= 1e-12 * r_p.abs().max(1.0));
            }
        }
    }
}
