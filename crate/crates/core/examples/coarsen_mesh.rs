//! Builds the scale hierarchy of a triangulated grid and prints the scale of
//! every node as a map (1 = coarsest, generated first).
//!
//! Usage: `cargo run --example coarsen_mesh -- [nx] [ny] [K]`

use sarmesh::hierarchy::ScaleHierarchy;
use sarmesh::meshgraph::triangulated_grid;

fn main() {
    let mut args = std::env::args()
        .skip(1)
        .map(|a| a.parse::<usize>().expect("integer argument"));
    let nx = args.next().unwrap_or(8);
    let ny = args.next().unwrap_or(8);
    let k = args.next().unwrap_or(3);
    let g = triangulated_grid(nx, ny, &[0.0]).expect("grid");
    let h = match ScaleHierarchy::build(&g, k) {
        Ok(h) => h,
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(1);
        }
    };
    println!(
        "{} nodes, {} undirected edges, sizes {:?}",
        g.num_nodes(),
        g.num_edges() / 2,
        h.sizes()
    );
    for (round, edges) in h.level_edges().iter().enumerate() {
        println!(
            "level {}: {} nodes, {} directed edges",
            round + 1,
            h.level_nodes()[round].len(),
            edges.len()
        );
    }
    for j in (0..ny).rev() {
        let row: Vec<String> = (0..nx).map(|i| h.scale_of(j * nx + i).to_string()).collect();
        println!("{}", row.join(" "));
    }
}
