//! Published dataset sizes. Each test reads its dataset directory from an
//! environment variable and skips when it is unset.

use std::path::PathBuf;

use kgc_core::dataset::{published_stats, DatasetStats};
use kgc_core::Prepared;

fn dataset_dir(var: &str) -> Option<PathBuf> {
    match std::env::var_os(var) {
        Some(dir) => Some(PathBuf::from(dir)),
        None => {
            eprintln!("skipped: set {var} to a dataset directory to run this test");
            None
        }
    }
}

#[test]
fn fb15k_vocabulary_sizes() {
    let Some(dir) = dataset_dir("KGC_FB15K_DIR") else { return };
    let p = Prepared::load(&dir, 1.5).unwrap();
    let want = published_stats("FB15K").unwrap();
    assert_eq!(p.kg.num_entities(), want.entities);
    assert_eq!(p.kg.num_relations(), want.relations);
    assert_eq!(p.kg.num_concepts(), want.concepts);
}

#[test]
fn nell995_split_sizes_and_profiles() {
    let Some(dir) = dataset_dir("KGC_NELL995_DIR") else { return };
    let p = Prepared::load(&dir, 1.5).unwrap();
    assert_eq!(DatasetStats::of(&p.kg), published_stats("NELL-995").unwrap());
    assert_eq!(p.profiles.len(), 200);
}
