//! Differentiable image-distance subprograms, built as graph nodes so the
//! training loss D = MAE + 10(1 - SSIM) + 100/PSNR backpropagates through
//! the same autodiff tape as the network itself.

use std::f64::consts::LN_10;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::metrics::{
    gaussian_window_2d, PSNR_FLOOR_DB, PSNR_SATURATION_DB, SSIM_C1, SSIM_C2, SSIM_WINDOW,
};
use crate::ops::ConvSpec;
use crate::tensor::{Scalar, Tensor};

/// Mean SSIM as a scalar graph node. The Gaussian window enters as a
/// constant depthwise kernel, so only valid (unpadded) positions count.
pub fn ssim_node<T: Scalar>(graph: &mut Graph<T>, a: NodeId, b: NodeId) -> Result<NodeId> {
    let [_, c, h, w] = graph.shape_of(a);
    if graph.shape_of(b) != graph.shape_of(a) {
        return Err(Error::ShapeMismatch {
            context: "ssim_node".into(),
            expected: graph.shape_of(a),
            actual: graph.shape_of(b),
        });
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InsufficientData(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let window = gaussian_window_2d();
    let mut data = Vec::with_capacity(c * window.len());
    for _ in 0..c {
        data.extend_from_slice(&window);
    }
    let kernel = Tensor::from_f64_slice([c, 1, SSIM_WINDOW, SSIM_WINDOW], &data)?;
    let win = graph.constant(kernel);
    let spec = ConvSpec {
        in_channels: c,
        out_channels: c,
        kernel: (SSIM_WINDOW, SSIM_WINDOW),
        stride: 1,
        padding: 0,
        bias: false,
    };

    let mu_a = graph.depthwise_conv2d(a, win, None, spec)?;
    let mu_b = graph.depthwise_conv2d(b, win, None, spec)?;
    let aa = graph.square(a);
    let bb = graph.square(b);
    let ab = graph.mul(a, b)?;
    let m_aa = graph.depthwise_conv2d(aa, win, None, spec)?;
    let m_bb = graph.depthwise_conv2d(bb, win, None, spec)?;
    let m_ab = graph.depthwise_conv2d(ab, win, None, spec)?;

    let mu_a2 = graph.square(mu_a);
    let mu_b2 = graph.square(mu_b);
    let mu_ab = graph.mul(mu_a, mu_b)?;
    let var_a = graph.sub(m_aa, mu_a2)?;
    let var_b = graph.sub(m_bb, mu_b2)?;
    let cov = graph.sub(m_ab, mu_ab)?;

    let two_mu = graph.scale(mu_ab, 2.0);
    let num_l = graph.add_scalar(two_mu, SSIM_C1);
    let two_cov = graph.scale(cov, 2.0);
    let num_r = graph.add_scalar(two_cov, SSIM_C2);
    let num = graph.mul(num_l, num_r)?;

    let mu_sum = graph.add(mu_a2, mu_b2)?;
    let den_l = graph.add_scalar(mu_sum, SSIM_C1);
    let var_sum = graph.add(var_a, var_b)?;
    let den_r = graph.add_scalar(var_sum, SSIM_C2);
    let den = graph.mul(den_l, den_r)?;

    let ssim_map = graph.div(num, den)?;
    Ok(graph.mean_all(ssim_map))
}

/// PSNR in dB as a scalar graph node, clamped to [0.1, 100] so the 100/PSNR
/// loss term stays bounded.
pub fn psnr_node<T: Scalar>(graph: &mut Graph<T>, reference: NodeId, output: NodeId) -> Result<NodeId> {
    let diff = graph.sub(output, reference)?;
    let sq = graph.square(diff);
    let mse = graph.mean_all(sq);
    let log_mse = graph.log(mse);
    let db = graph.scale(log_mse, -10.0 / LN_10);
    Ok(graph.clamp(db, PSNR_FLOOR_DB, PSNR_SATURATION_DB))
}

/// The distance D(reference, output) = MAE + 10(1 - SSIM) + 100/PSNR as a
/// scalar graph node.
pub fn distance_node<T: Scalar>(
    graph: &mut Graph<T>,
    reference: NodeId,
    output: NodeId,
) -> Result<NodeId> {
    let diff = graph.sub(output, reference)?;
    let abs = graph.abs(diff);
    let mae = graph.mean_all(abs);

    let ssim = ssim_node(graph, reference, output)?;
    let neg10_ssim = graph.scale(ssim, -10.0);
    let ssim_term = graph.add_scalar(neg10_ssim, 10.0);

    let psnr = psnr_node(graph, reference, output)?;
    let hundred = graph.constant(Tensor::scalar(T::from_f64(100.0)));
    let psnr_term = graph.div(hundred, psnr)?;

    let partial = graph.add(mae, ssim_term)?;
    graph.add(partial, psnr_term)
}

/// lambda * d_denoise + beta * d_sr; the weights arrive as scalar inputs so
/// the schedule can change per epoch without rebuilding the graph.
pub fn joint_loss_node<T: Scalar>(
    graph: &mut Graph<T>,
    d_denoise: NodeId,
    d_sr: NodeId,
    lambda: NodeId,
    beta: NodeId,
) -> Result<NodeId> {
    let weighted_dn = graph.mul(lambda, d_denoise)?;
    let weighted_sr = graph.mul(beta, d_sr)?;
    graph.add(weighted_dn, weighted_sr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::distance_d_tensor;
    use crate::ops::testutil::random_tensor;
    use crate::rng::SplitMix64;

    fn unit_tensor(shape: crate::tensor::Shape, seed: u64) -> Tensor<f64> {
        random_tensor(shape, seed).map(|v: f64| (v + 1.0) / 2.0)
    }

    fn graph_distance(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        let mut g = Graph::new();
        let ra = g.input("a", a.shape());
        let rb = g.input("b", b.shape());
        let d = distance_node(&mut g, ra, rb).unwrap();
        g.mark_output("d", d);
        let out = g
            .forward(&[("a", a.clone()), ("b", b.clone())])
            .unwrap();
        out["d"].scalar_value().unwrap()
    }

    #[test]
    fn matches_the_direct_metric() {
        for (seed, shape) in [(1u64, [1, 1, 16, 16]), (2, [2, 3, 12, 12]), (3, [1, 1, 11, 13])] {
            let a = unit_tensor(shape, seed);
            let b = unit_tensor(shape, seed + 100);
            let direct = distance_d_tensor(&a, &b).unwrap();
            let graphed = graph_distance(&a, &b);
            assert!(
                (direct - graphed).abs() < 1e-9,
                "seed {seed}: {direct} vs {graphed}"
            );
        }
    }

    #[test]
    fn identical_tensors_give_distance_one() {
        let a = unit_tensor([1, 1, 16, 16], 5);
        let d = graph_distance(&a, &a);
        assert!((d - 1.0).abs() < 1e-9, "d = {d}");
    }

    #[test]
    fn too_small_input_rejected() {
        let mut g = Graph::<f64>::new();
        let a = g.input("a", [1, 1, 8, 8]);
        let b = g.input("b", [1, 1, 8, 8]);
        assert!(distance_node(&mut g, a, b).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let eps = 1e-6;
        let reference = unit_tensor([1, 1, 12, 12], 7);
        let x0 = unit_tensor([1, 1, 12, 12], 8);
        let eval = |x: &Tensor<f64>| {
            let mut g = Graph::new();
            let r = g.input("r", reference.shape());
            let p = g.input("x", x.shape());
            let d = distance_node(&mut g, r, p).unwrap();
            g.mark_output("d", d);
            g.forward(&[("r", reference.clone()), ("x", x.clone())]).unwrap()["d"]
                .scalar_value()
                .unwrap()
        };
        let mut g = Graph::new();
        let r = g.input("r", reference.shape());
        let p = g.param("x", x0.clone());
        let d = distance_node(&mut g, r, p).unwrap();
        g.mark_output("d", d);
        g.forward(&[("r", reference.clone())]).unwrap();
        let grads = g.backward("d", &Tensor::scalar(1.0)).unwrap();
        let analytic = &grads[&p];

        let mut rng = SplitMix64::stream(11, 0);
        for _ in 0..10 {
            let idx = rng.next_below(x0.numel() as u64) as usize;
            let mut plus = x0.clone();
            plus.data_mut()[idx] += eps;
            let mut minus = x0.clone();
            minus.data_mut()[idx] -= eps;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            let a = analytic.data()[idx];
            let rel = (a - numeric).abs() / numeric.abs().max(1e-8);
            assert!(rel <= 1e-3, "idx {idx}: analytic {a}, numeric {numeric}");
        }
    }

    #[test]
    fn joint_loss_weights_apply() {
        let a = unit_tensor([1, 1, 12, 12], 20);
        let b = unit_tensor([1, 1, 12, 12], 21);
        let c = unit_tensor([1, 1, 12, 12], 22);
        let d_dn = distance_d_tensor(&a, &b).unwrap();
        let d_sr = distance_d_tensor(&a, &c).unwrap();

        let mut g = Graph::<f64>::new();
        let ra = g.input("a", a.shape());
        let rb = g.input("b", b.shape());
        let rc = g.input("c", c.shape());
        let lambda = g.input("lambda", [1, 1, 1, 1]);
        let beta = g.input("beta", [1, 1, 1, 1]);
        let n_dn = distance_node(&mut g, ra, rb).unwrap();
        let n_sr = distance_node(&mut g, ra, rc).unwrap();
        let loss = joint_loss_node(&mut g, n_dn, n_sr, lambda, beta).unwrap();
        g.mark_output("loss", loss);
        let out = g
            .forward(&[
                ("a", a.clone()),
                ("b", b.clone()),
                ("c", c.clone()),
                ("lambda", Tensor::scalar(0.8)),
                ("beta", Tensor::scalar(0.2)),
            ])
            .unwrap();
        let expected = 0.8 * d_dn + 0.2 * d_sr;
        assert!((out["loss"].scalar_value().unwrap() - expected).abs() < 1e-9);
    }
}
