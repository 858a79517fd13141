//! Build a small conv net on the tape and verify its analytic gradients
//! against central finite differences.
//!
//!     cargo run --release --example autograd_gradcheck

use deal_lab::tensor::gradcheck::{max_rel_error, numeric_gradient};
use deal_lab::{Graph, Rng, Tensor};

fn main() -> deal_lab::Result<()> {
    let mut rng = Rng::new(1);
    let x = Tensor::kaiming_uniform(&[2, 3, 8, 8], &mut rng);
    let k1 = Tensor::kaiming_uniform(&[4, 3, 3, 3], &mut rng);
    let k2 = Tensor::kaiming_uniform(&[2, 4, 3, 3], &mut rng);

    let forward = |inputs: &[Tensor]| -> deal_lab::Result<(Graph, Vec<_>, _)> {
        let mut g = Graph::new();
        let ids: Vec<_> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let c1 = g.conv2d(ids[0], ids[1], 1, 1, 1)?;
        let r1 = g.relu(c1);
        let p1 = g.max_pool2d(r1)?;
        let c2 = g.conv2d(p1, ids[2], 1, 1, 2)?;
        let s = g.sigmoid(c2);
        let loss = g.mean(s);
        Ok((g, ids, loss))
    };

    let inputs = vec![x, k1, k2];
    let (g, ids, loss) = forward(&inputs)?;
    let grads = g.backward(loss)?;

    for (which, name) in ["input", "conv1", "conv2"].iter().enumerate() {
        let numeric = numeric_gradient(
            &|ts: &[Tensor]| {
                let (g, _, loss) = forward(&ts.to_vec()).unwrap();
                g.value(loss).item().unwrap()
            },
            &inputs,
            which,
            1e-6,
        );
        let analytic = grads.expect(ids[which])?;
        let err = max_rel_error(analytic, &numeric);
        println!("{:<6} max relative error {:.2e}", name, err);
        assert!(err < 1e-3);
    }
    println!("all gradients match finite differences");
    Ok(())
}
