//! Sobel text density of a page, per token patch.
//!
//! cargo run --example text_density [page.pgm|page.ppm] [GHxGW]
//!
//! Without arguments a synthetic page is used: a block of "text" strokes in
//! the top-left quadrant and blank paper elsewhere.

use rtprune::density::{text_density, GrayImage, PatchGrid};
use rtprune::io::pnm;

fn synthetic_page() -> GrayImage {
    let (w, h) = (64, 64);
    let px = (0..w * h)
        .map(|k| {
            let (r, c) = (k / w, k % w);
            let ink = r < 32 && c < 32 && r % 4 == 1 && c % 3 != 0;
            if ink {
                0.0
            } else {
                1.0
            }
        })
        .collect();
    GrayImage::new(w, h, px).unwrap()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let image = match args.next() {
        Some(path) => pnm::read_file(path)?.to_gray()?,
        None => synthetic_page(),
    };
    let grid: PatchGrid = args.next().as_deref().unwrap_or("4x4").parse()?;

    let map = text_density(&image, grid, 0.2)?;
    println!(
        "{}x{} page, grid {grid}, rho = {:.4}",
        image.width(),
        image.height(),
        map.mean
    );
    for row in map.per_patch.chunks(grid.grid_w) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.3}")).collect();
        println!("  {}", cells.join(" "));
    }
    Ok(())
}
