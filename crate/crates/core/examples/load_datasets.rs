//! Load the shipped MNIST subset and the Mushroom table.
//!
//! ```text
//! cargo run --release --example load_datasets
//! ```

use std::path::Path;

use pbb::data::{binarize_mnist, load_csv, load_mnist_idx_split, CsvSchema, SplitTag};

fn main() -> pbb::Result<()> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let data = root.join("data");

    let digits = load_mnist_idx_split(
        data.join("mnist/mnist10k-images-idx3-ubyte.gz"),
        data.join("mnist/mnist10k-labels-idx1-ubyte.gz"),
        SplitTag::Full,
        None,
    )?;
    println!("MNIST: {} images of {} pixels, fingerprint {}", digits.len(), digits.dim(), &digits.fingerprint()[..12]);
    let binary = binarize_mnist(&digits)?;
    println!("binary MNIST class balance {:?}", binary.class_balance());

    let schema = CsvSchema::from_file(root.join("configs/schemas/mushroom.schema"))?;
    let mushroom = load_csv(data.join("uci/mushroom.csv"), &schema, 0.2, 1)?;
    println!(
        "Mushroom: {} train / {} test rows, {} one-hot features, train balance {:?}",
        mushroom.train.len(),
        mushroom.test.len(),
        mushroom.train.dim(),
        mushroom.train.class_balance()
    );
    Ok(())
}
