mod support;

#[test]
fn adaln_blocks_are_identity_at_init() {
    let d = support::adaln_identity_deviation();
    assert!(d <= 1e-12, "deviation {d}");
}

#[test]
fn init_sampler_is_output_head_on_lifted_input() {
    let d = support::init_sampler_formula_deviation();
    assert!(d <= 1e-12, "deviation {d}");
}
