//! Build a tree by hand, validate it, fingerprint it and print it as DOT.

use std::collections::BTreeSet;

use trunk::tree::{canonicalize, compare, fingerprint, random_tree, to_dot, validate, Trunk};

fn set(items: &[usize]) -> BTreeSet<usize> {
    items.iter().copied().collect()
}

fn main() -> trunk::Result<()> {
    let names = ["cat", "dog", "car", "truck", "ship"].map(String::from).to_vec();
    let mut tree = Trunk::new("demo", names, 0.5, "hand-built");
    let kids = tree.split("0", vec![set(&[0, 1]), set(&[2, 3]), set(&[4])])?;
    tree.split(&kids[0], vec![set(&[0]), set(&[1])])?;
    tree.split(&kids[1], vec![set(&[2]), set(&[3])])?;
    assert!(validate(&tree).is_empty());

    println!(
        "depth {}  mean groups per node {:.2}",
        tree.depth(),
        tree.mean_groups_per_node()
    );
    for c in 0..tree.num_categories() {
        println!("path to {:<6} {:?}", tree.category_label(c), tree.path_to(c)?);
    }
    println!("fingerprint {}", fingerprint(&tree)?);
    println!("{}", to_dot(&canonicalize(&tree)?)?);

    let mut rng = rand::thread_rng();
    let other = random_tree(5, &mut rng);
    let c = compare(&tree, &other)?;
    println!(
        "against a random tree: identical {} similarity {:.3}",
        c.identical, c.similarity
    );
    Ok(())
}
