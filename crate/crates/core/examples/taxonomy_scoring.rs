//! Build a small taxonomy by hand, assign offsets, and score items with and
//! without a previous basket.

use tfrec::factors::FactorKind;
use tfrec::{affinity, Basket, DecayWeights, FactorStore, Matrix, Taxonomy};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // id, parent, name
    let tsv = "\
0\t-1\tstore
1\t0\telectronics
2\t0\tgarden
3\t1\tcamera
4\t1\tmemory card
5\t2\those
6\t2\tsprinkler
";
    let tax = Taxonomy::parse(tsv.as_bytes())?;
    println!("depth {}, leaves {:?}", tax.depth(), tax.leaves());
    println!("path of 'memory card': {:?}", tax.ancestor_path(4)?);

    let mut store = FactorStore::zeros(2, 1, tax.node_count());
    store.row_mut(Matrix::User, 0).copy_from_slice(&[1.0, 0.0]);
    // Category offsets carry most of the signal; leaves add small deviations.
    store.row_mut(Matrix::Item, 1).copy_from_slice(&[1.0, 0.0]);
    store.row_mut(Matrix::Item, 2).copy_from_slice(&[-1.0, 0.0]);
    store.row_mut(Matrix::Item, 4).copy_from_slice(&[0.2, 0.5]);
    // Buying a camera points the next purchase toward the memory card.
    store.row_mut(Matrix::Next, 3).copy_from_slice(&[0.0, 1.0]);

    let view = tax.full_view();
    for leaf in tax.leaves() {
        let eff = store.effective_factor(&view, *leaf, FactorKind::Item);
        println!("leaf {leaf}: effective factor {eff:?}");
    }

    let decay = DecayWeights::new(1.0, 1);
    let camera = Basket::new(vec![3]).expect("non-empty");
    for leaf in [3, 4, 5, 6] {
        let cold = affinity(&store, &view, &decay, 0, leaf, &[]);
        let warm = affinity(&store, &view, &decay, 0, leaf, &[&camera]);
        println!("item {leaf}: affinity {cold:.3} with no history, {warm:.3} after buying a camera");
    }
    Ok(())
}
