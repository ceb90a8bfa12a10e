//! Runs one physics-attention layer on a mesh and shows how the learned
//! temperature sharpens the soft slice assignment.

use sarmesh::meshgraph::triangulated_grid;
use sarmesh::numcore::rng::{normal_matrix, stream};
use sarmesh::numcore::{ParamBuilder, ParamStore, Tape};
use sarmesh::transolver::{AttentionConfig, PhysicsAttention};

fn main() {
    let g = triangulated_grid(6, 6, &[0.0]).unwrap();
    let config = AttentionConfig {
        width: 8,
        heads: 2,
        slices: 4,
    };
    let mut store = ParamStore::new();
    let mut rng = stream(0, "init", 0);
    let layer = PhysicsAttention::new(&mut ParamBuilder::new(&mut store, &mut rng), "attn", config).unwrap();
    let x = normal_matrix(&mut stream(0, "features", 0), g.num_nodes(), 8, 1.0);

    for bias in [0.0, -1.0, -2.0] {
        // The temperature bias b sets tau = exp(b) while the weights are zero.
        let id = store.id("attn.temperature.b").expect("temperature bias");
        store.value_mut(id).fill(bias);
        let t = Tape::with_params(&store);
        let v = layer.split.forward(&t, t.constant(x.clone()));
        let head = t.slice_cols(v, 0, config.head_dim());
        let w = t.value(layer.slice_weights(&t, head, 0));
        let peak = w
            .rows()
            .into_iter()
            .map(|r| r.fold(0.0f64, |a, &b| a.max(b)))
            .sum::<f64>()
            / w.nrows() as f64;
        let out = t.value(layer.forward(&t, t.constant(x.clone())));
        println!(
            "tau {:.3}: mean max slice weight {peak:.3}, output norm {:.3}",
            bias.exp(),
            out.mapv(|a| a * a).sum().sqrt()
        );
    }
}
