//! Max-feature-map activation and 2x2 max pooling, forward and backward.
//!
//! ```text
//! cargo run --example mfm_pooling
//! ```

use std::error::Error;

use antispoof::neural::{max_pool_2x2, max_pool_2x2_backward, mfm, mfm_backward, Tensor3};
use ndarray::Array3;

fn main() -> Result<(), Box<dyn Error>> {
    let x = Tensor3::new(Array3::from_shape_fn((4, 4, 4), |(c, i, j)| {
        ((c * 7 + i * 3 + j * 5) % 11) as f64 - 5.0
    }))?;
    let y = mfm(&x)?;
    let p = max_pool_2x2(&y)?;
    println!("input {:?} -> mfm {:?} -> pool {:?}", x.shape(), y.shape(), p.shape());
    println!("pooled channel 0:\n{}", p.values().index_axis(ndarray::Axis(0), 0));

    let upstream = Tensor3::new(Array3::ones(p.shape()))?;
    let grad_y = max_pool_2x2_backward(&y, &upstream)?;
    let grad_x = mfm_backward(&x, &grad_y)?;
    println!(
        "gradient mass: pool input {}, mfm input {} (one route per pooled cell)",
        grad_y.values().sum(),
        grad_x.values().sum()
    );
    Ok(())
}
