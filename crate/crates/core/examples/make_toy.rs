//! Regenerates `tests/fixtures/toy` (3 layers, d=8, 2 heads).
//!
//! `cargo run -p globenc --example make_toy [OUT_DIR]`

#[path = "../tests/common/mod.rs"]
mod common;

fn main() {
    let dir = std::env::args_os()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(common::fixture_dir);
    common::write_toy(&dir);
    println!("wrote {}", dir.display());
}
