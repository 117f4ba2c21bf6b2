//! Reverse-mode automatic differentiation over scalars and dense fields.
//!
//! A [`Tape`] records primitives as they execute. Each node stores its primal
//! value; the reverse pass walks nodes in reverse record order and accumulates
//! adjoints. Field-valued nodes hold one value per grid cell, so a whole
//! elementwise operation on a field is a single node.
//!
//! Besides the elementwise and reduction primitives, two kinds of structured
//! node exist: [`Tape::dense`] (batched matrix-vector products for MLP layers)
//! and [`FusedOp`], used by the elliptic solver for stencil sweeps and
//! residuals so that one sweep over the grid is one node.

mod gradcheck;
mod tape;

pub use gradcheck::{central_difference, grad_check, relative_errors};
pub use tape::{sigmoid, softplus, FusedOp, Tape, Var};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;

    #[test]
    fn record_primals() {
        let mut t = Tape::new();
        let a = t.scalar_constant(2.0).unwrap();
        let b = t.scalar_constant(3.0).unwrap();
        let m = t.mul(a, b).unwrap();
        assert_eq!(t.scalar(m), 6.0);
        let z = t.scalar_constant(0.0).unwrap();
        let th = t.tanh(z).unwrap();
        assert_eq!(t.scalar(th), 0.0);
    }

    #[test]
    fn domain_errors_name_the_node() {
        let mut t = Tape::new();
        let x = t.scalar_constant(-1.0).unwrap();
        assert!(matches!(
            t.ln(x),
            Err(Error::RecordedDomain { op: "ln", node: 1 })
        ));
        assert!(matches!(
            t.sqrt(x),
            Err(Error::RecordedDomain { op: "sqrt", .. })
        ));
        let z = t.scalar_constant(0.0).unwrap();
        assert!(matches!(
            t.div(x, z),
            Err(Error::RecordedDomain { op: "div", .. })
        ));
    }

    #[test]
    fn square_derivative() {
        let mut t = Tape::new();
        let x = t.param(vec![3.0]).unwrap();
        let y = t.mul(x, x).unwrap();
        assert_eq!(t.backward(y).unwrap(), vec![6.0]);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::new();
        let v = t.param(vec![0.1, -2.0, 3.0, 4.0, 5.5]).unwrap();
        let s = t.sum(v).unwrap();
        assert_eq!(t.backward(s).unwrap(), vec![1.0; 5]);
    }

    #[test]
    fn exp_tanh_matches_finite_difference() {
        let f = |x: f64| x.tanh().exp();
        let mut t = Tape::new();
        let x = t.param(vec![0.5]).unwrap();
        let th = t.tanh(x).unwrap();
        let y = t.exp(th).unwrap();
        let ad = t.backward(y).unwrap()[0];
        let h = 1e-6;
        let fd = (f(0.5 + h) - f(0.5 - h)) / (2.0 * h);
        assert!((ad - fd).abs() / fd.abs() < 1e-7);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let mut t = Tape::new();
        let v = t.param(vec![1.0, 2.0]).unwrap();
        assert!(matches!(t.backward(v), Err(Error::Contract(_))));
    }

    #[test]
    fn repeated_backward_is_identical() {
        let mut t = Tape::new();
        let v = t.param(vec![0.3, 0.7, -0.2]).unwrap();
        let e = t.exp(v).unwrap();
        let p = t.mul(e, v).unwrap();
        let s = t.sum(p).unwrap();
        let g1 = t.backward(s).unwrap();
        let g2 = t.backward(s).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn tapes_are_isolated() {
        let mut t1 = Tape::new();
        let mut t2 = Tape::new();
        let a = t1.scalar_constant(1.0).unwrap();
        let b = t2.scalar_constant(1.0).unwrap();
        assert!(matches!(t2.add(a, b), Err(Error::TapeMismatch { .. })));
        t1.reset();
        assert!(matches!(t1.exp(a), Err(Error::TapeMismatch { .. })));
    }

    #[test]
    fn dense_layer_gradients() {
        // rows = 2, n_in = 2, n_out = 1; params [w0, w1, b]
        let x0 = [0.5, -1.0, 2.0, 0.25];
        let p0 = [0.3, -0.7, 0.1];
        let f = |p: &[f64]| -> crate::error::Result<(f64, Vec<f64>)> {
            let mut t = Tape::new();
            let pv = t.param(p.to_vec())?;
            let x = t.constant(x0.to_vec())?;
            let y = t.dense(x, pv, 0, 2, 2, 1)?;
            let a = t.tanh(y)?;
            let s = t.sum(a)?;
            Ok((t.scalar(s), t.backward(s)?))
        };
        let err = grad_check(f, &p0, 1e-4).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn stack_gather_concat_gradients() {
        let f = |p: &[f64]| -> crate::error::Result<(f64, Vec<f64>)> {
            let mut t = Tape::new();
            let a = t.param(p[..3].to_vec())?;
            let b = t.param(p[3..4].to_vec())?;
            let m = t.stack_columns(&[a, b])?;
            let sq = t.mul(m, m)?;
            let g = t.gather(sq, std::sync::Arc::new(vec![0, 3, 5, 5]))?;
            let c = t.concat(&[g, a])?;
            let sp = t.softplus(c)?;
            let s = t.sum(sp)?;
            Ok((t.scalar(s), t.backward(s)?))
        };
        let err = grad_check(f, &[0.2, -0.4, 1.3, 0.8], 1e-4).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn broadcast_scalar_operands() {
        let f = |p: &[f64]| -> crate::error::Result<(f64, Vec<f64>)> {
            let mut t = Tape::new();
            let v = t.param(p[..3].to_vec())?;
            let s = t.param(p[3..].to_vec())?;
            let d = t.div(v, s)?;
            let m = t.max(d, s)?;
            let q = t.powf(m, 1.5)?;
            let r = t.sub(s, q)?;
            let o = t.sum(r)?;
            Ok((t.scalar(o), t.backward(o)?))
        };
        let err = grad_check(f, &[0.9, 2.5, 4.0, 1.7], 1e-4).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    fn composite(x: &[f64], a: f64, b: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut t = Tape::new();
        let v = t.param(x.to_vec()).unwrap();
        let e = t.tanh(v).unwrap();
        let sq = t.mul(e, v).unwrap();
        let f = t.sum(sq).unwrap();
        let sp = t.softplus(v).unwrap();
        let g = t.sum(sp).unwrap();
        let fa = t.scale(f, a).unwrap();
        let gb = t.scale(g, b).unwrap();
        let h = t.add(fa, gb).unwrap();
        (
            t.backward(f).unwrap(),
            t.backward(g).unwrap(),
            t.backward(h).unwrap(),
        )
    }

    proptest! {
        #[test]
        fn chain_rule_matches_differences(x in proptest::collection::vec(-2.0f64..2.0, 1..6)) {
            let f = |p: &[f64]| -> crate::error::Result<(f64, Vec<f64>)> {
                let mut t = Tape::new();
                let v = t.param(p.to_vec())?;
                let th = t.tanh(v)?;
                let e = t.exp(th)?;
                let q = t.affine(v, 1.0, 3.0)?;
                let sq = t.sqrt(q)?;
                let l = t.ln(q)?;
                let m = t.mul(e, sq)?;
                let d = t.div(m, q)?;
                let a = t.add(d, l)?;
                let s = t.sum(a)?;
                Ok((t.scalar(s), t.backward(s)?))
            };
            let err = grad_check(f, &x, 1e-3).unwrap();
            prop_assert!(err < 1e-5, "err = {}", err);
        }

        #[test]
        fn backward_is_linear(x in proptest::collection::vec(-2.0f64..2.0, 1..6), ea in -3i32..3, eb in -3i32..3) {
            let (a, b) = (2f64.powi(ea), -(2f64.powi(eb)));
            let (gf, gg, gh) = composite(&x, a, b);
            for k in 0..x.len() {
                let lin = a * gf[k] + b * gg[k];
                prop_assert!((gh[k] - lin).abs() <= 1e-14 * (1.0 + lin.abs()));
            }
        }

        #[test]
        fn identical_tapes_identical_gradients(x in proptest::collection::vec(-2.0f64..2.0, 1..6)) {
            let (g1, _, _) = composite(&x, 1.0, 1.0);
            let (g2, _, _) = composite(&x, 1.0, 1.0);
            prop_assert_eq!(g1, g2);
        }
    }
}
