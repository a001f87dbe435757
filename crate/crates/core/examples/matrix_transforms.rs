//! The four cyclic transforms, block extraction and concatenation.

use secsv::matrix::{concat, tile, Axis, Matrix, TransformKind};

fn show(label: &str, m: &Matrix) {
    println!("{label}:");
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:>3}")).collect();
        println!("  {}", row.join(" "));
    }
}

fn main() -> secsv::Result<()> {
    let m = Matrix::from_fn(3, 3, |r, c| (r * 3 + c) as f64);
    show("m", &m);
    for kind in [TransformKind::Sigma, TransformKind::Tau, TransformKind::Xi, TransformKind::Psi] {
        show(&format!("{kind:?}(m, 1)"), &m.transform(kind, 1));
    }
    show("m[-1..=0, 1..=3] (wrapped)", &m.submatrix(-1..=0, 1..=3));
    show("m | m", &concat(&m, &m, Axis::Horizontal)?);
    show("tile(m[0], 2) vertically", &tile(&m.row_range(0, 1), 2, Axis::Vertical)?);
    Ok(())
}
