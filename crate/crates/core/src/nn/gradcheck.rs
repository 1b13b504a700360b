//! Central finite-difference gradient checking.
//!
//! Only forward values are used here, so the numeric side is independent of
//! the backward rules it validates.

use super::graph::{Graph, Mat, Var};

const STEP: f64 = 1e-5;

/// Central-difference gradient of a scalar-valued graph w.r.t. `inputs[which]`.
pub fn numeric_grad<F>(inputs: &[Mat], which: usize, build: F) -> Mat
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let eval = |xs: &[Mat]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
        let out = build(&mut g, &vars);
        g.scalar(out)
    };
    let mut work = inputs.to_vec();
    let mut grad = Mat::zeros(inputs[which].raw_dim());
    let shape = inputs[which].dim();
    for r in 0..shape.0 {
        for c in 0..shape.1 {
            let orig = work[which][[r, c]];
            work[which][[r, c]] = orig + STEP;
            let plus = eval(&work);
            work[which][[r, c]] = orig - STEP;
            let minus = eval(&work);
            work[which][[r, c]] = orig;
            grad[[r, c]] = (plus - minus) / (2.0 * STEP);
        }
    }
    grad
}

/// Analytic gradients of a scalar-valued graph w.r.t. every input.
pub fn analytic_grads<F>(inputs: &[Mat], build: F) -> Vec<Mat>
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.input(x.clone())).collect();
    let out = build(&mut g, &vars);
    let grads = g.backward(out);
    vars.iter()
        .zip(inputs)
        .map(|(v, x)| grads.wrt(*v).cloned().unwrap_or_else(|| Mat::zeros(x.raw_dim())))
        .collect()
}

/// `‖a − n‖ / max(‖a‖ + ‖n‖, 1e-6)`; the floor keeps all-zero gradients from
/// amplifying rounding noise.
pub fn relative_error(analytic: &Mat, numeric: &Mat) -> f64 {
    let diff = (analytic - numeric).mapv(|x| x * x).sum().sqrt();
    let scale = analytic.mapv(|x| x * x).sum().sqrt() + numeric.mapv(|x| x * x).sum().sqrt();
    diff / scale.max(1e-6)
}

/// Worst relative error over all inputs.
pub fn max_relative_error<F>(inputs: &[Mat], build: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Var + Copy,
{
    let analytic = analytic_grads(inputs, build);
    (0..inputs.len())
        .map(|i| relative_error(&analytic[i], &numeric_grad(inputs, i, build)))
        .fold(0.0, f64::max)
}

/// Panics when any input's relative gradient error exceeds `tol`.
pub fn check_input_grad<F>(inputs: &[Mat], build: F, tol: f64)
where
    F: Fn(&mut Graph, &[Var]) -> Var + Copy,
{
    let analytic = analytic_grads(inputs, build);
    for (i, a) in analytic.iter().enumerate() {
        let numeric = numeric_grad(inputs, i, build);
        let err = relative_error(a, &numeric);
        assert!(
            err <= tol,
            "input {i}: relative gradient error {err:e} > {tol:e}\nanalytic={a:?}\nnumeric={numeric:?}"
        );
    }
}

/// Relative error between analytic and central-difference gradients for
/// every trainable parameter, reported as the worst over all tensors.
pub fn max_param_relative_error<F>(params: &crate::nn::ParamSet, build: F) -> f64
where
    F: Fn(&mut Graph, &crate::nn::ParamSet) -> Var,
{
    let mut g = Graph::new();
    let out = build(&mut g, params);
    let grads = g.backward(out).param_grads(params);
    let mut worst: f64 = 0.0;
    let mut work = params.clone();
    for (id, analytic) in grads {
        let mut numeric = Mat::zeros(analytic.raw_dim());
        let (rows, cols) = analytic.dim();
        for r in 0..rows {
            for c in 0..cols {
                let orig = work.get(id)[[r, c]];
                work.get_mut(id)[[r, c]] = orig + STEP;
                let mut gp = Graph::new();
                let o = build(&mut gp, &work);
                let plus = gp.scalar(o);
                work.get_mut(id)[[r, c]] = orig - STEP;
                let mut gm = Graph::new();
                let o = build(&mut gm, &work);
                let minus = gm.scalar(o);
                work.get_mut(id)[[r, c]] = orig;
                numeric[[r, c]] = (plus - minus) / (2.0 * STEP);
            }
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}
