//! Writes a synthetic dataset to disk, cuts it into tiles and prints dataset
//! statistics before and after tiling.
//!
//! cargo run --example tiling_stats -- [tile]

use pqm::dataset::{dataset_stats, tile_count, tile_dataset, write_dataset, Manifest};
use pqm::synth::{default_corruptions, synthetic_samples, with_corrupted_unchecked};

fn main() -> pqm::Result<()> {
    let tile: usize = std::env::args()
        .nth(1)
        .map_or(32, |s| s.parse().expect("tile size"));
    let root = std::env::temp_dir().join("pqm-tiling");
    let samples = with_corrupted_unchecked(synthetic_samples(6, 96, 17), &default_corruptions(0))?;
    let manifest = write_dataset(&root.join("full"), &samples)?;
    let loaded = Manifest::load(&manifest)?.load_samples()?;
    println!("{} samples -> {}", loaded.len(), manifest.display());
    print!("{}", dataset_stats(&loaded, 3)?.table());

    let mut tiles = Vec::new();
    for s in &loaded {
        tiles.extend(tile_dataset(s, tile, true)?);
    }
    let expected = loaded.len() * tile_count(96, 96, tile);
    let tiled = write_dataset(&root.join(format!("tiles{tile}")), &tiles)?;
    println!(
        "\n{} of {expected} tiles kept (empty ones dropped) -> {}",
        tiles.len(),
        tiled.display()
    );
    print!("{}", dataset_stats(&tiles, 3)?.table());
    Ok(())
}
