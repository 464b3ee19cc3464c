// SPDX-License-Identifier: MIT OR Apache-2.0

//! Row-level attention rewrites on small hand-written rows.
//!
//! ```text
//! cargo run --example redistribution
//! ```

use modality_lab::intervention::{ablate, adhh, brute_force_redistribute, redistribute_pairwise, redistribute_proportional, scale};
use modality_lab::{Modality, ModalityLayout};

fn show(label: &str, row: &[f64]) {
    let cells: Vec<String> = row.iter().map(|w| format!("{w:.4}")).collect();
    println!("{label:<34} [{}]  sum {:.4}", cells.join(", "), row.iter().sum::<f64>());
}

fn main() -> modality_lab::Result<()> {
    // Two system tokens, one image token, one text token.
    let layout = ModalityLayout::new(2, 1, 1)?;
    let row = [0.4, 0.1, 0.3, 0.2];
    show("original", &row);

    let mut r = row;
    redistribute_proportional(&mut r, &layout, Modality::System, 1.0)?;
    show("proportional system -> rest", &r);

    let mut r = row;
    redistribute_proportional(&mut r, &layout, Modality::System, 0.3)?;
    show("proportional, 30% of system", &r);

    let mut r = row;
    redistribute_pairwise(&mut r, &layout, Modality::System, Modality::Text, 1.0)?;
    show("pairwise system -> text", &r);

    let mut r = row;
    ablate(&mut r, &layout, Modality::System)?;
    show("ablate system (no renormalising)", &r);

    let mut r = row;
    scale(&mut r, &layout, Modality::Image, 2.0)?;
    show("scale image x2", &r);

    let mut r = [0.1, 0.1, 0.3, 0.5];
    let outcome = adhh(&mut r, &layout, 0.4)?;
    show(&format!("AD-HH on text 0.5 ({outcome:?})"), &r);

    // The closed form agrees with a token-by-token reference.
    let oracle = brute_force_redistribute(&row, &layout, Modality::System, &Modality::System.others(), 1.0)?;
    show("token-by-token reference", &oracle);
    Ok(())
}
