//! Central-finite-difference gradient verification.
//!
//! The checker re-runs the forward pass with each parameter entry nudged
//! by `±h` and compares the central difference against the tape gradient.
//! The forward path here never touches `backward`, so it stands as an
//! independent oracle for it.

use std::rc::Rc;

use rand::Rng;

use crate::error::Result;
use crate::scalar::Scalar;
use crate::seeding::{self, Rng64};

use super::params::{ParamId, ParamStore};
use super::sparse::SparseMatrix;
use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Builds a scalar loss from the store's current parameter values.
/// Builders must be deterministic: any internal randomness (dropout)
/// has to be re-seeded identically on every call.
pub type LossBuilder<T> = dyn Fn(&mut Tape<T>, &ParamStore<T>) -> Result<Var>;

/// Outcome of one gradient check.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_param: String,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

fn eval_loss<T: Scalar>(store: &ParamStore<T>, build: &LossBuilder<T>) -> Result<f64> {
    let mut tape = Tape::new();
    let loss = build(&mut tape, store)?;
    Ok(tape.scalar_value(loss).as_f64())
}

/// Compare tape gradients against central finite differences for every
/// entry of every parameter in `store`.
pub fn check_gradients<T: Scalar>(
    name: &str,
    store: &mut ParamStore<T>,
    build: &LossBuilder<T>,
    h: f64,
) -> Result<GradReport> {
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = build(&mut tape, store)?;
    tape.backward(loss, store)?;

    let ids: Vec<ParamId> = store.ids().collect();
    let analytic: Vec<Tensor<T>> = ids.iter().map(|&id| store.grad(id).clone()).collect();

    let mut max_rel_err = 0.0f64;
    let mut worst_param = String::new();
    let hh = T::cast(h);
    for (pi, &id) in ids.iter().enumerate() {
        for k in 0..store.value(id).len() {
            let orig = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = orig + hh;
            let up = eval_loss(store, build)?;
            store.value_mut(id).data_mut()[k] = orig - hh;
            let down = eval_loss(store, build)?;
            store.value_mut(id).data_mut()[k] = orig;

            let fd = (up - down) / (2.0 * h);
            let ad = analytic[pi].data()[k].as_f64();
            let rel = (fd - ad).abs() / fd.abs().max(ad.abs()).max(1e-6);
            if rel > max_rel_err {
                max_rel_err = rel;
                worst_param = format!("{}[{}]", store.name(id), k);
            }
        }
    }
    Ok(GradReport {
        name: name.to_string(),
        max_rel_err,
        worst_param,
    })
}

fn uniform<T: Scalar>(rng: &mut Rng64, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor<T> {
    let data = (0..rows * cols)
        .map(|_| T::cast(rng.gen_range(lo..hi)))
        .collect();
    Tensor::from_vec(rows, cols, data).expect("sized data")
}

/// Random dense tensor with entries bounded away from zero, so kinked
/// ops (relu, leaky_relu, abs) are checked off their kinks.
fn uniform_off_zero<T: Scalar>(rng: &mut Rng64, rows: usize, cols: usize) -> Tensor<T> {
    let data = (0..rows * cols)
        .map(|_| {
            let mag = rng.gen_range(0.2..1.0);
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            T::cast(sign * mag)
        })
        .collect();
    Tensor::from_vec(rows, cols, data).expect("sized data")
}

fn random_pattern<T: Scalar>(rng: &mut Rng64, n: usize) -> SparseMatrix<T> {
    let mut row_ptr = vec![0usize];
    let mut col_idx = Vec::new();
    for i in 0..n {
        for j in 0..n {
            // keep the diagonal so no row is empty
            if i == j || rng.gen::<f64>() < 0.4 {
                col_idx.push(j);
            }
        }
        row_ptr.push(col_idx.len());
    }
    let vals = vec![T::one(); col_idx.len()];
    SparseMatrix::new(n, n, row_ptr, col_idx, vals).expect("valid pattern")
}

type SuiteCase<T> = (String, ParamStore<T>, Box<LossBuilder<T>>);

/// One randomized composite loss per forward op.
fn op_suite<T: Scalar>() -> Vec<SuiteCase<T>> {
    let mut cases: Vec<SuiteCase<T>> = Vec::new();

    // add / sub / mul / scale / add_scalar in one affine composite
    {
        let mut rng = seeding::stream(11, "gradcheck.elementwise");
        let mut store = ParamStore::new();
        let a = store.register("g", "a", uniform(&mut rng, 3, 4, -1.0, 1.0)).unwrap();
        let b = store.register("g", "b", uniform(&mut rng, 3, 4, -1.0, 1.0)).unwrap();
        cases.push((
            "elementwise".into(),
            store,
            Box::new(move |tape, store| {
                let av = tape.param(store, a);
                let bv = tape.param(store, b);
                let sum = tape.add(av, bv)?;
                let diff = tape.sub(av, bv)?;
                let prod = tape.mul(sum, diff)?;
                let scaled = tape.scale(prod, T::cast(0.7));
                let shifted = tape.add_scalar(scaled, T::cast(0.3));
                let sq = tape.mul(shifted, shifted)?;
                Ok(tape.sum_all(sq))
            }),
        ));
    }

    // matmul + transpose
    {
        let mut rng = seeding::stream(12, "gradcheck.matmul");
        let mut store = ParamStore::new();
        let a = store.register("g", "a", uniform(&mut rng, 3, 2, -1.0, 1.0)).unwrap();
        let b = store.register("g", "b", uniform(&mut rng, 3, 4, -1.0, 1.0)).unwrap();
        cases.push((
            "matmul_transpose".into(),
            store,
            Box::new(move |tape, store| {
                let av = tape.param(store, a);
                let bv = tape.param(store, b);
                let at = tape.transpose(av);
                let prod = tape.matmul(at, bv)?;
                let act = tape.tanh_act(prod);
                Ok(tape.sum_all(act))
            }),
        ));
    }

    // sparse_matmul
    {
        let mut rng = seeding::stream(13, "gradcheck.spmm");
        let pattern = {
            let mut prng = seeding::stream(13, "gradcheck.spmm.pattern");
            Rc::new(random_pattern::<T>(&mut prng, 5))
        };
        let mut store = ParamStore::new();
        let x = store.register("g", "x", uniform(&mut rng, 5, 3, -1.0, 1.0)).unwrap();
        cases.push((
            "sparse_matmul".into(),
            store,
            Box::new(move |tape, store| {
                let xv = tape.param(store, x);
                let agg = tape.sparse_matmul(Rc::clone(&pattern), xv)?;
                let act = tape.sigmoid(agg);
                Ok(tape.sum_all(act))
            }),
        ));
    }

    // add_bias
    {
        let mut rng = seeding::stream(14, "gradcheck.bias");
        let mut store = ParamStore::new();
        let a = store.register("g", "a", uniform(&mut rng, 4, 3, -1.0, 1.0)).unwrap();
        let b = store.register("g", "bias", uniform(&mut rng, 1, 3, -0.5, 0.5)).unwrap();
        cases.push((
            "add_bias".into(),
            store,
            Box::new(move |tape, store| {
                let av = tape.param(store, a);
                let bv = tape.param(store, b);
                let biased = tape.add_bias(av, bv)?;
                let act = tape.tanh_act(biased);
                Ok(tape.sum_all(act))
            }),
        ));
    }

    // sigmoid o matmul chain
    {
        let mut rng = seeding::stream(15, "gradcheck.sigchain");
        let mut store = ParamStore::new();
        let w1 = store.register("g", "w1", uniform(&mut rng, 3, 3, -1.0, 1.0)).unwrap();
        let w2 = store.register("g", "w2", uniform(&mut rng, 3, 2, -1.0, 1.0)).unwrap();
        let x0 = uniform::<T>(&mut rng, 4, 3, -1.0, 1.0);
        cases.push((
            "sigmoid_matmul_chain".into(),
            store,
            Box::new(move |tape, store| {
                let x = tape.constant(x0.clone());
                let w1v = tape.param(store, w1);
                let w2v = tape.param(store, w2);
                let h = tape.matmul(x, w1v)?;
                let h = tape.sigmoid(h);
                let out = tape.matmul(h, w2v)?;
                let out = tape.sigmoid(out);
                Ok(tape.sum_all(out))
            }),
        ));
    }

    // tanh
    {
        let mut rng = seeding::stream(16, "gradcheck.tanh");
        let mut store = ParamStore::new();
        let a = store.register("g", "a", uniform(&mut rng, 3, 3, -2.0, 2.0)).unwrap();
        cases.push((
            "tanh".into(),
            store,
            Box::new(move |tape, store| {
                let av = tape.param(store, a);
                let t = tape.tanh_act(av);
                let sq = tape.mul(t, t)?;
                Ok(tape.sum_all(sq))
            }),
        ));
    }

    // relu, leaky_relu, abs: inputs bounded away from the kink
    {
        let mut rng = seeding::stream(17, "gradcheck.kinks");
        let mut store = ParamStore::new();
        let a = store.register("g", "a", uniform_off_zero(&mut rng, 4, 4)).unwrap();
        cases.push((
            "relu_leaky_abs".into(),
            store,
            Box::new(move |tape, store| {
                let av = tape.param(store, a);
                let r = tape.relu(av);
                let l = tape.leaky_relu(av, T::cast(0.05));
                let m = tape.abs(av);
                let s = tape.add(r, l)?;
                let s = tape.add(s, m)?;
                let sq = tape.mul(s, s)?;
                Ok(tape.sum_all(sq))
            }),
        ));
    }

    // exp and ln
    {
        let mut rng = seeding::stream(18, "gradcheck.explog");
        let mut store = ParamStore::new();
        let a = store.register("g", "a", uniform(&mut rng, 3, 3, -1.0, 1.0)).unwrap();
        cases.push((
            "exp_ln".into(),
            store,
            Box::new(move |tape, store| {
                let av = tape.param(store, a);
                let e = tape.exp(av);
                let p = tape.sigmoid(av);
                let lp = tape.ln(p);
                let s = tape.add(e, lp)?;
                Ok(tape.sum_all(s))
            }),
        ));
    }

    // clamp: entries strictly inside and strictly outside the range
    {
        let mut rng = seeding::stream(19, "gradcheck.clamp");
        let mut store = ParamStore::new();
        let a = store.register("g", "a", uniform(&mut rng, 3, 4, -2.0, 2.0)).unwrap();
        cases.push((
            "clamp".into(),
            store,
            Box::new(move |tape, store| {
                let av = tape.param(store, a);
                let c = tape.clamp(av, T::cast(-1.5), T::cast(1.5));
                let sq = tape.mul(c, c)?;
                Ok(tape.sum_all(sq))
            }),
        ));
    }

    // dropout with a fixed mask per rebuild
    {
        let mut rng = seeding::stream(20, "gradcheck.dropout");
        let mut store = ParamStore::new();
        let a = store.register("g", "a", uniform(&mut rng, 4, 4, -1.0, 1.0)).unwrap();
        cases.push((
            "dropout".into(),
            store,
            Box::new(move |tape, store| {
                let mut drop_rng = seeding::stream(20, "gradcheck.dropout.mask");
                let av = tape.param(store, a);
                let d = tape.dropout(av, T::cast(0.3), &mut drop_rng)?;
                let t = tape.tanh_act(d);
                Ok(tape.sum_all(t))
            }),
        ));
    }

    // concat_cols
    {
        let mut rng = seeding::stream(21, "gradcheck.concat");
        let mut store = ParamStore::new();
        let a = store.register("g", "a", uniform(&mut rng, 3, 2, -1.0, 1.0)).unwrap();
        let b = store.register("g", "b", uniform(&mut rng, 3, 3, -1.0, 1.0)).unwrap();
        let w = store.register("g", "w", uniform(&mut rng, 5, 2, -1.0, 1.0)).unwrap();
        cases.push((
            "concat_cols".into(),
            store,
            Box::new(move |tape, store| {
                let av = tape.param(store, a);
                let bv = tape.param(store, b);
                let wv = tape.param(store, w);
                let cat = tape.concat_cols(av, bv)?;
                let out = tape.matmul(cat, wv)?;
                let act = tape.tanh_act(out);
                Ok(tape.sum_all(act))
            }),
        ));
    }

    // row_softmax_masked feeding an aggregation
    {
        let mut rng = seeding::stream(22, "gradcheck.softmax");
        let pattern = {
            let mut prng = seeding::stream(22, "gradcheck.softmax.pattern");
            Rc::new(random_pattern::<T>(&mut prng, 5))
        };
        let mut store = ParamStore::new();
        let scores = store.register("g", "scores", uniform(&mut rng, 5, 5, -1.0, 1.0)).unwrap();
        let h = store.register("g", "h", uniform(&mut rng, 5, 3, -1.0, 1.0)).unwrap();
        cases.push((
            "row_softmax_masked".into(),
            store,
            Box::new(move |tape, store| {
                let sv = tape.param(store, scores);
                let hv = tape.param(store, h);
                let att = tape.row_softmax_masked(sv, Rc::clone(&pattern))?;
                let agg = tape.matmul(att, hv)?;
                let act = tape.tanh_act(agg);
                Ok(tape.sum_all(act))
            }),
        ));
    }

    cases
}

/// Run the per-op gradient suite and return one report per case.
pub fn op_suite_reports<T: Scalar>(h: f64) -> Result<Vec<GradReport>> {
    op_suite::<T>()
        .into_iter()
        .map(|(name, mut store, build)| check_gradients(&name, &mut store, build.as_ref(), h))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn op_suite_passes_finite_difference_check() {
        let reports = op_suite_reports::<f64>(1e-5).unwrap();
        assert!(!reports.is_empty());
        for r in &reports {
            assert!(r.passes(1e-4), "{}: {} at {}", r.name, r.max_rel_err, r.worst_param);
        }
    }

    #[test]
    fn tanh_derivative_at_zero_is_one() {
        // sech^2(0) = 1; the finite difference agrees to 1e-8
        let mut store = ParamStore::new();
        store.register("g", "x", Tensor::scalar(0.0f64)).unwrap();
        let build: Box<LossBuilder<f64>> = Box::new(|tape, store| {
            let x = tape.param(store, store.id("x").unwrap());
            let t = tape.tanh_act(x);
            Ok(tape.sum_all(t))
        });
        let mut tape = Tape::new();
        let loss = build(&mut tape, &store).unwrap();
        tape.backward(loss, &mut store).unwrap();
        let ad = store.grad(store.id("x").unwrap()).item();
        assert_eq!(ad, 1.0);
        let h = 1e-5f64;
        let fd = (h.tanh() - (-h).tanh()) / (2.0 * h);
        assert!((fd - 1.0).abs() < 1e-8);
    }

    #[test]
    fn dropout_rate_zero_matches_no_dropout_gradients() {
        let mut rng = seeding::stream(30, "case");
        let base = uniform::<f64>(&mut rng, 3, 3, -1.0, 1.0);

        let run = |with_dropout: bool| {
            let mut store = ParamStore::new();
            let id = store.register("g", "a", base.clone()).unwrap();
            let mut tape = Tape::new();
            let a = tape.param(&store, id);
            let x = if with_dropout {
                let mut drng = seeding::stream(31, "mask");
                tape.dropout(a, 0.0, &mut drng).unwrap()
            } else {
                a
            };
            let t = tape.tanh_act(x);
            let loss = tape.sum_all(t);
            tape.backward(loss, &mut store).unwrap();
            store.grad(id).clone()
        };
        assert_eq!(run(true), run(false));
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        // grad(a*L1 + b*L2) == a*grad(L1) + b*grad(L2) within 1e-10
        let mut rng = seeding::stream(40, "linearity");
        let base = uniform::<f64>(&mut rng, 3, 3, -1.0, 1.0);
        let (a, b) = (0.37, -2.5);

        let grads = |mode: u8| {
            let mut store = ParamStore::new();
            let id = store.register("g", "w", base.clone()).unwrap();
            let mut tape = Tape::new();
            let w = tape.param(&store, id);
            let t = tape.tanh_act(w);
            let l1 = tape.sum_all(t);
            let sq = tape.mul(w, w).unwrap();
            let l2 = tape.sum_all(sq);
            let loss = match mode {
                0 => l1,
                1 => l2,
                _ => {
                    let s1 = tape.scale(l1, a);
                    let s2 = tape.scale(l2, b);
                    tape.add(s1, s2).unwrap()
                }
            };
            tape.backward(loss, &mut store).unwrap();
            store.grad(id).clone()
        };

        let g1 = grads(0);
        let g2 = grads(1);
        let gc = grads(2);
        for k in 0..gc.len() {
            let want = a * g1.data()[k] + b * g2.data()[k];
            assert!((gc.data()[k] - want).abs() < 1e-10);
        }
    }
}
