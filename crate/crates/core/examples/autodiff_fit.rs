//! Fits a small GELU MLP to `sin(3x)` with the reverse-mode tape, Adam and
//! the plateau schedule.

use ndarray::Array2;
use sarmesh::numcore::rng::stream;
use sarmesh::numcore::{Activation, Adam, Mlp, ParamBuilder, ParamStore, PlateauSchedule, Tape};

fn main() {
    let n = 64;
    let x = Array2::from_shape_fn((n, 1), |(i, _)| -1.0 + 2.0 * i as f64 / (n - 1) as f64);
    let y = x.mapv(|v| (3.0 * v).sin());

    let mut store = ParamStore::new();
    let mut rng = stream(0, "init", 0);
    let mlp = Mlp::new(
        &mut ParamBuilder::new(&mut store, &mut rng),
        "mlp",
        1,
        32,
        1,
        Activation::Gelu,
    );
    let mut adam = Adam::new(&store);
    let mut plateau = PlateauSchedule::new(1e-2, 20).tracker();

    for epoch in 0.. {
        let t = Tape::with_params(&store);
        let pred = mlp.forward(&t, t.constant(x.clone()));
        let loss = t.mse(pred, t.constant(y.clone()));
        let value = t.scalar_value(loss);
        let mut grads = t.backward(loss).unwrap().param_grads(&store);
        grads.fill_missing(&store);
        let lr = plateau.lr();
        drop(t);
        adam.step(&mut store, &grads, lr).unwrap();
        let status = plateau.observe(value);
        if epoch % 250 == 0 || status.reduced {
            println!("epoch {epoch:5} mse {value:.3e} lr {:.0e}", status.lr);
        }
        if status.stop || epoch == 5000 {
            println!("stopped at epoch {epoch}, mse {value:.3e}");
            break;
        }
    }
}
