//! Write and read the tensor and image files the command-line tool consumes.
//!
//! cargo run --example tensor_files [out_dir]

use std::path::PathBuf;

use rtprune::io::pnm::{self, Channels, PnmImage};
use rtprune::io::rtt::{self, Tensor};
use rtprune::tokens::TokenMatrix;

fn main() -> rtprune::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(std::env::temp_dir);

    let tokens = TokenMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![-0.5, 0.25, 0.0]])?;
    let path = dir.join("tokens.rtt");
    rtt::write_file(&path, &Tensor::from_matrix(&tokens))?;
    let back = rtt::read_file(&path)?;
    println!(
        "{}: dims {:?}, data {:?}",
        path.display(),
        back.dims,
        back.data
    );
    assert_eq!(back.into_matrix()?, tokens);

    let page = PnmImage {
        width: 4,
        height: 2,
        channels: Channels::Rgb,
        data: (0..24).map(|v| (v * 10) as u8).collect(),
    };
    let path = dir.join("page.ppm");
    pnm::write_file(&path, &page)?;
    let gray = pnm::read_file(&path)?.to_gray()?;
    println!(
        "{}: {}x{}, luma {:.3?}",
        path.display(),
        gray.width(),
        gray.height(),
        gray.pixels()
    );
    Ok(())
}
