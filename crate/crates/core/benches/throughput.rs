// placeholder; benches are written after the core is complete
fn main() {}
