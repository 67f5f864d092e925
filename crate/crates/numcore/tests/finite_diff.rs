//! Central finite differences as the independent oracle for every
//! differentiable operation and for small composed networks.

use numcore::{grad_check, DetRng, NodeId, NumError, ParamSet, Tape, Tensor};

/// Max relative error between tape gradients and central differences for a
/// graph built by `build` over the named leaf parameters.
fn fd_max_rel_error(
    params: &ParamSet,
    build: impl Fn(&ParamSet, &mut Tape) -> Result<NodeId, NumError>,
) -> f64 {
    let report = grad_check(params, &build, 1e-5, 1e-6).unwrap();
    report.max_rel_error()
}

fn param_set(rng: &mut DetRng, specs: &[(&str, &[usize])]) -> ParamSet {
    let mut ps = ParamSet::new();
    for (name, shape) in specs {
        ps.insert(*name, rng.tensor_uniform(shape, -2.0, 2.0));
    }
    ps
}

/// Every primitive op, each reduced to a scalar through a fixed projection,
/// must match central differences with rel-error < 1e-6 on inputs in [-2, 2].
#[test]
fn per_op_gradients_match_finite_differences() {
    let mut rng = DetRng::new(42, 0);

    // (name, builder) pairs; each builder consumes params "a" [4,5] / "b" as needed.
    let cases: Vec<(&str, Box<dyn Fn(&ParamSet, &mut Tape) -> Result<NodeId, NumError>>)> = vec![
        ("matmul", Box::new(|p: &ParamSet, t: &mut Tape| {
            let a = t.bind_param(p, "a")?;
            let b = t.bind_param(p, "b")?;
            let c = t.matmul(a, b)?;
            let th = t.tanh(c);
            Ok(t.sum_all(th))
        })),
        ("add", Box::new(|p, t| {
            let a = t.bind_param(p, "a")?;
            let a2 = t.bind_param(p, "a2")?;
            let c = t.add(a, a2)?;
            let s = t.sigmoid(c);
            Ok(t.mean_all(s))
        })),
        ("add_bias", Box::new(|p, t| {
            let a = t.bind_param(p, "a")?;
            let bias = t.bind_param(p, "bias")?;
            let c = t.add_bias(a, bias)?;
            let th = t.tanh(c);
            Ok(t.sum_all(th))
        })),
        ("sub_mul", Box::new(|p, t| {
            let a = t.bind_param(p, "a")?;
            let a2 = t.bind_param(p, "a2")?;
            let d = t.sub(a, a2)?;
            let m = t.mul(d, a)?;
            Ok(t.mean_all(m))
        })),
        ("scale_leaky", Box::new(|p, t| {
            let a = t.bind_param(p, "a")?;
            let s = t.scale(a, -1.7);
            let l = t.leaky_relu(s, 0.01);
            Ok(t.sum_all(l))
        })),
        ("softmax", Box::new(|p, t| {
            let a = t.bind_param(p, "a")?;
            let s = t.softmax(a)?;
            let w = t.bind_param(p, "a2")?;
            let m = t.mul(s, w)?;
            Ok(t.sum_all(m))
        })),
        ("masked_softmax", Box::new(|p, t| {
            let a = t.bind_param(p, "a")?;
            let s = t.masked_softmax(a, &[1, 1, 0, 1, 0])?;
            let w = t.bind_param(p, "a2")?;
            let m = t.mul(s, w)?;
            Ok(t.sum_all(m))
        })),
        ("mean_axis0", Box::new(|p, t| {
            let a = t.bind_param(p, "a")?;
            let m = t.mean_axis(a, 0)?;
            let th = t.tanh(m);
            Ok(t.sum_all(th))
        })),
        ("mean_axis1", Box::new(|p, t| {
            let a = t.bind_param(p, "a")?;
            let m = t.mean_axis(a, 1)?;
            Ok(t.sum_all(m))
        })),
        ("max_axis0", Box::new(|p, t| {
            let a = t.bind_param(p, "a")?;
            let m = t.max_axis(a, 0)?;
            let th = t.tanh(m);
            Ok(t.sum_all(th))
        })),
        ("max_axis1", Box::new(|p, t| {
            let a = t.bind_param(p, "a")?;
            let m = t.max_axis(a, 1)?;
            Ok(t.mean_all(m))
        })),
        ("concat0", Box::new(|p, t| {
            let a = t.bind_param(p, "a")?;
            let a2 = t.bind_param(p, "a2")?;
            let c = t.concat(&[a, a2], 0)?;
            let th = t.tanh(c);
            Ok(t.sum_all(th))
        })),
        ("concat1", Box::new(|p, t| {
            let a = t.bind_param(p, "a")?;
            let a2 = t.bind_param(p, "a2")?;
            let c = t.concat(&[a, a2], 1)?;
            let s = t.sigmoid(c);
            Ok(t.sum_all(s))
        })),
        ("stack_rows", Box::new(|p, t| {
            let v1 = t.bind_param(p, "v1")?;
            let v2 = t.bind_param(p, "v2")?;
            let s = t.stack_rows(&[v1, v2])?;
            let m = t.mean_axis(s, 0)?;
            let th = t.tanh(m);
            Ok(t.sum_all(th))
        })),
        ("gather_rows", Box::new(|p, t| {
            let a = t.bind_param(p, "a")?;
            let g = t.gather_rows(a, &[3, 0, 0, 2])?;
            let th = t.tanh(g);
            Ok(t.sum_all(th))
        })),
        ("layer_norm", Box::new(|p, t| {
            let a = t.bind_param(p, "a")?;
            let gamma = t.bind_param(p, "gamma")?;
            let beta = t.bind_param(p, "beta")?;
            let ln = t.layer_norm(a, gamma, beta, 1e-5)?;
            let th = t.tanh(ln);
            Ok(t.sum_all(th))
        })),
        ("transpose", Box::new(|p, t| {
            let a = t.bind_param(p, "a")?;
            let tr = t.transpose(a)?;
            let b = t.bind_param(p, "b")?;
            let btr = t.transpose(b)?;
            let m = t.matmul(btr, tr)?;
            let th = t.tanh(m);
            Ok(t.sum_all(th))
        })),
        ("reshape_linear_dot", Box::new(|p, t| {
            let v1 = t.bind_param(p, "v1")?;
            let v2 = t.bind_param(p, "v2")?;
            let d = t.dot(v1, v2)?;
            Ok(t.scale(d, 0.5))
        })),
        ("mse", Box::new(|p, t| {
            let v1 = t.bind_param(p, "v1")?;
            let v2 = t.bind_param(p, "v2")?;
            t.mse(v1, v2)
        })),
    ];

    for (name, build) in cases {
        let params = param_set(
            &mut rng,
            &[
                ("a", &[4, 5]),
                ("a2", &[4, 5]),
                ("b", &[5, 3]),
                ("bias", &[5]),
                ("gamma", &[5]),
                ("beta", &[5]),
                ("v1", &[5]),
                ("v2", &[5]),
            ],
        );
        let err = fd_max_rel_error(&params, build);
        assert!(err < 1e-6, "op {name}: rel error {err:.3e}");
    }
}

/// Random 3-layer MLP: every parameter gradient vs central differences.
#[test]
fn three_layer_mlp_matches_finite_differences() {
    let mut rng = DetRng::new(7, 0);
    let mut params = ParamSet::new();
    params.insert("w1", rng.tensor_uniform(&[6, 8], -0.8, 0.8));
    params.insert("b1", rng.tensor_uniform(&[8], -0.5, 0.5));
    params.insert("w2", rng.tensor_uniform(&[8, 5], -0.8, 0.8));
    params.insert("b2", rng.tensor_uniform(&[5], -0.5, 0.5));
    params.insert("w3", rng.tensor_uniform(&[5, 1], -0.8, 0.8));
    params.insert("b3", rng.tensor_uniform(&[1], -0.5, 0.5));
    let x = rng.tensor_uniform(&[6], -2.0, 2.0);
    let y = Tensor::scalar(0.37);

    let report = grad_check(
        &params,
        &|p: &ParamSet, t: &mut Tape| {
            let xin = t.leaf(x.clone());
            let w1 = t.bind_param(p, "w1")?;
            let b1 = t.bind_param(p, "b1")?;
            let h1 = t.linear(xin, w1, b1)?;
            let a1 = t.tanh(h1);
            let w2 = t.bind_param(p, "w2")?;
            let b2 = t.bind_param(p, "b2")?;
            let h2 = t.linear(a1, w2, b2)?;
            let a2 = t.leaky_relu(h2, 0.01);
            let w3 = t.bind_param(p, "w3")?;
            let b3 = t.bind_param(p, "b3")?;
            let h3 = t.linear(a2, w3, b3)?;
            let pred = t.reshape(h3, &[])?;
            let target = t.leaf(y.clone());
            t.mse(pred, target)
        },
        1e-5,
        1e-6,
    )
    .unwrap();
    assert!(
        report.passed(),
        "failures: {:?} (max {:.3e})",
        report.failures(),
        report.max_rel_error()
    );
}

/// Analytic oracle: for loss = Σ(Wx), dW is the outer product 1·xᵀ.
#[test]
fn linear_layer_grad_check_against_analytic_outer_product() {
    let mut params = ParamSet::new();
    params.insert(
        "w",
        Tensor::from_vec(vec![2, 2], vec![0.4, -1.1, 2.2, 0.9]).unwrap(),
    );
    let x = Tensor::vector(&[1.3, -0.6]);

    let build = |p: &ParamSet, t: &mut Tape| {
        let w = t.bind_param(p, "w")?;
        let xv = t.leaf(x.clone());
        let xcol = t.reshape(xv, &[2, 1])?;
        let y = t.matmul(w, xcol)?;
        Ok(t.sum_all(y))
    };

    let report = grad_check(&params, &build, 1e-5, 1e-8).unwrap();
    assert!(report.passed(), "max rel {:.3e}", report.max_rel_error());

    // Direct analytic check: dW[i][j] = x[j].
    let mut work = params.clone();
    work.zero_grads();
    let mut tape = Tape::new();
    let loss = build(&work, &mut tape).unwrap();
    tape.backward(loss).unwrap();
    tape.accumulate_param_grads(&mut work).unwrap();
    let grad = work.get("w").unwrap().grad.clone().unwrap();
    for i in 0..2 {
        for j in 0..2 {
            assert!((grad.at2(i, j) - x.data()[j]).abs() < 1e-12);
        }
    }
}
