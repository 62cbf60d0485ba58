//! How many segmentation errors sit near object boundaries: EIB@k for a range
//! of buffer widths over synthetic scenes with corrupted masks.
//!
//! cargo run --example edge_buffer -- [scenes]

use pqm::edges::{edge_buffer, eib_at_k, extract_edges};
use pqm::synth::{default_corruptions, synthetic_samples, with_corrupted_unchecked};
use pqm::{derive_quality_map, EdgeSource};

fn main() -> pqm::Result<()> {
    let n: usize = std::env::args()
        .nth(1)
        .map_or(12, |s| s.parse().expect("scene count"));
    let samples = with_corrupted_unchecked(synthetic_samples(n, 64, 7), &default_corruptions(0))?;

    let first = &samples[0];
    let edges = extract_edges(&first.gt);
    println!(
        "{}: {} foreground pixels, {} edge pixels, buffer@3 covers {}",
        first.id,
        first.gt.count_ones(),
        edges.count(),
        edge_buffer(&edges, 3)?.count_ones()
    );

    println!("k\tEIB%\terrors_in_buffer\terrors");
    for k in 0..=6 {
        let (mut inside, mut errors) = (0, 0);
        for s in &samples {
            let q = derive_quality_map(&s.gt, s.unchecked.as_ref().expect("corrupted"))?;
            let r = eib_at_k(&q, &extract_edges(&s.gt), k)?;
            inside += r.errors_in_buffer;
            errors += r.errors;
        }
        println!(
            "{k}\t{:.2}\t{inside}\t{errors}",
            100.0 * inside as f64 / errors.max(1) as f64
        );
    }

    let q = derive_quality_map(&first.gt, first.unchecked.as_ref().expect("corrupted"))?;
    for source in [
        EdgeSource::GroundTruth,
        EdgeSource::Unchecked,
        EdgeSource::Union,
    ] {
        let r = pqm::eib_from_quality_map(&q, 3, source)?;
        println!(
            "{}: EIB@3 with {source:?} edges = {:.2}",
            first.id, r.percent
        );
    }
    Ok(())
}
