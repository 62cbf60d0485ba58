//! Derives a quality map from a ground-truth and a predicted mask, prints it as
//! text, writes the palette PNG and recovers both masks from it.
//!
//! cargo run --example quality_map -- [out.png]

use pqm::io::{decode_quality_png, encode_quality_png};
use pqm::{class_distribution, derive_quality_map, reconstruct_masks, BinaryMask, PqmClass};

fn main() -> pqm::Result<()> {
    let gt = BinaryMask::from_fn(10, 16, |y, x| (2..8).contains(&y) && (3..11).contains(&x));
    let pred = BinaryMask::from_fn(10, 16, |y, x| (3..9).contains(&y) && (5..14).contains(&x));
    let q = derive_quality_map(&gt, &pred)?;

    for y in 0..q.height() {
        let row: String = (0..q.width())
            .map(|x| match q.get(y, x) {
                PqmClass::Tp => 'T',
                PqmClass::Fp => 'p',
                PqmClass::Tn => '.',
                PqmClass::Fn => 'n',
            })
            .collect();
        println!("{row}");
    }
    let d = class_distribution(&q);
    println!(
        "TP {:.2}%  FP {:.2}%  TN {:.2}%  FN {:.2}%",
        d.pct_tp, d.pct_fp, d.pct_tn, d.pct_fn
    );

    let png = encode_quality_png(&q)?;
    let decoded = decode_quality_png(&png)?;
    let (gt_back, pred_back) = reconstruct_masks(&decoded);
    println!(
        "png {} bytes; masks recovered exactly: {}",
        png.len(),
        gt_back == gt && pred_back == pred
    );
    if let Some(path) = std::env::args().nth(1) {
        std::fs::write(&path, &png)?;
        println!("wrote {path}");
    }
    Ok(())
}
