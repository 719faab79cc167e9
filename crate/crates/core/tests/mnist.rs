//! Checks against the real MNIST files; skipped when they are not installed.

use kwta_core::data::{default_mnist_dir, load_mnist, mnist_paths, subset, Split};
use kwta_core::nn::MNIST_INPUT;

fn data_present() -> bool {
    let dir = default_mnist_dir();
    let ok = mnist_paths(&dir, Split::Train).is_ok() && mnist_paths(&dir, Split::Test).is_ok();
    if !ok {
        eprintln!("skipping: MNIST not found in {}", dir.display());
    }
    ok
}

#[test]
fn splits_have_the_published_sizes() {
    if !data_present() {
        return;
    }
    let dir = default_mnist_dir();
    let train = load_mnist::<f32>(&dir, Split::Train).unwrap();
    let test = load_mnist::<f32>(&dir, Split::Test).unwrap();
    assert_eq!(train.len(), 60_000);
    assert_eq!(test.len(), 10_000);
    assert_eq!(train.example_shape(), MNIST_INPUT);
    assert!(train.images.data().iter().all(|&p| (0.0..=1.0).contains(&p)));
    assert!(train.images.data().contains(&1.0));
    assert_eq!(train.class_histogram().iter().sum::<usize>(), 60_000);
    assert!(train.class_histogram().iter().all(|&c| c > 5000));
    // First training label of the canonical file.
    assert_eq!(train.labels[0], 5);
    assert_eq!(test.labels[0], 7);
}

#[test]
fn seeded_subset_is_balanced_and_reproducible() {
    if !data_present() {
        return;
    }
    let train = load_mnist::<f32>(default_mnist_dir(), Split::Train).unwrap();
    let a = subset(&train, 10_000, 3).unwrap();
    let b = subset(&train, 10_000, 3).unwrap();
    assert_eq!(a.labels, b.labels);
    assert!(
        a.class_histogram().iter().all(|&c| (800..=1200).contains(&c)),
        "{:?}",
        a.class_histogram()
    );
    let c = subset(&train, 10_000, 4).unwrap();
    assert_ne!(a.labels, c.labels);
}
