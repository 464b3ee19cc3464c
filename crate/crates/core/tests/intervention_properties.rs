// SPDX-License-Identifier: MIT OR Apache-2.0

use modality_lab::intervention::{
    ablate, adhh, apply_spec, brute_force_redistribute, redistribute_pairwise, redistribute_proportional, scale,
    AttentionTensor, InterventionSpec, LayerScope, RowOutcome,
};
use modality_lab::modality::modality_mass;
use modality_lab::{Modality, ModalityLayout};
use proptest::prelude::*;

const ROW_SUM_TOL: f64 = 1e-9;

fn modality() -> impl Strategy<Value = Modality> {
    prop_oneof![Just(Modality::System), Just(Modality::Image), Just(Modality::Text)]
}

/// A layout and a normalised row over it. Some weights are exactly zero so
/// degenerate modalities show up regularly.
fn layout_and_row() -> impl Strategy<Value = (ModalityLayout, Vec<f64>)> {
    (1usize..5, 1usize..9, 1usize..5)
        .prop_flat_map(|(s, i, t)| {
            let n = s + i + t;
            (
                Just(ModalityLayout::new(s, i, t).unwrap()),
                prop::collection::vec(prop_oneof![3 => 0.0..1.0f64, 1 => Just(0.0)], n),
            )
        })
        .prop_filter_map("all-zero row", |(layout, w)| {
            let total: f64 = w.iter().sum();
            (total > 0.0).then(|| (layout, w.iter().map(|x| x / total).collect()))
        })
}

fn masses(row: &[f64], layout: &ModalityLayout) -> [f64; 3] {
    Modality::ALL.map(|m| layout.row_mass(row, m))
}

proptest! {
    #[test]
    fn proportional_keeps_row_stochastic((layout, row) in layout_and_row(), source in modality(), p in 0.0..=1.0f64) {
        let mut out = row.clone();
        redistribute_proportional(&mut out, &layout, source, p).unwrap();
        prop_assert!(out.iter().all(|w| *w >= 0.0));
        prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < ROW_SUM_TOL);
    }

    #[test]
    fn proportional_preserves_within_recipient_ratios((layout, row) in layout_and_row(), source in modality(), p in 0.01..=1.0f64) {
        let mut out = row.clone();
        if redistribute_proportional(&mut out, &layout, source, p).unwrap() != RowOutcome::Modified {
            return Ok(());
        }
        let recipients: Vec<usize> = source
            .others()
            .iter()
            .flat_map(|&m| layout.span(m))
            .filter(|&k| row[k] > 0.0)
            .collect();
        let gain = out[recipients[0]] / row[recipients[0]];
        for &k in &recipients {
            prop_assert!((out[k] / row[k] - gain).abs() < 1e-9);
        }
        let before = masses(&row, &layout)[source as usize];
        let after = masses(&out, &layout)[source as usize];
        prop_assert!((after - (1.0 - p) * before).abs() < 1e-12);
    }

    #[test]
    fn full_transfer_is_idempotent((layout, row) in layout_and_row(), source in modality()) {
        let mut once = row.clone();
        redistribute_proportional(&mut once, &layout, source, 1.0).unwrap();
        let mut twice = once.clone();
        let outcome = redistribute_proportional(&mut twice, &layout, source, 1.0).unwrap();
        prop_assert_ne!(outcome, RowOutcome::Modified);
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn closed_form_matches_oracle((layout, row) in layout_and_row(), source in modality(), other in 0usize..2, p in 0.0..=1.0f64) {
        let mut closed = row.clone();
        redistribute_proportional(&mut closed, &layout, source, p).unwrap();
        let oracle = brute_force_redistribute(&row, &layout, source, &source.others(), p).unwrap();
        for (a, b) in closed.iter().zip(&oracle) {
            prop_assert!((a - b).abs() < 1e-12);
        }

        let recipient = source.others()[other];
        let mut closed = row.clone();
        redistribute_pairwise(&mut closed, &layout, source, recipient, p).unwrap();
        let oracle = brute_force_redistribute(&row, &layout, source, &[recipient], p).unwrap();
        for (a, b) in closed.iter().zip(&oracle) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pairwise_leaves_third_modality_alone((layout, row) in layout_and_row(), source in modality(), other in 0usize..2, p in 0.0..=1.0f64) {
        let recipient = source.others()[other];
        let third = source.others()[1 - other];
        let mut out = row.clone();
        redistribute_pairwise(&mut out, &layout, source, recipient, p).unwrap();
        prop_assert_eq!(&out[layout.span(third)], &row[layout.span(third)]);
        prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < ROW_SUM_TOL);
    }

    #[test]
    fn transfer_is_monotone_in_fraction((layout, row) in layout_and_row(), source in modality(), a in 0.0..=1.0f64, b in 0.0..=1.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let mut low = row.clone();
        let mut high = row.clone();
        redistribute_proportional(&mut low, &layout, source, lo).unwrap();
        redistribute_proportional(&mut high, &layout, source, hi).unwrap();
        let s = source as usize;
        prop_assert!(masses(&high, &layout)[s] <= masses(&low, &layout)[s] + 1e-15);
    }

    #[test]
    fn ablation_sums_to_complement((layout, row) in layout_and_row(), source in modality()) {
        let alpha = masses(&row, &layout)[source as usize];
        let mut out = row.clone();
        ablate(&mut out, &layout, source).unwrap();
        prop_assert!((out.iter().sum::<f64>() - (1.0 - alpha)).abs() < ROW_SUM_TOL);
        prop_assert!(out[layout.span(source)].iter().all(|w| *w == 0.0));
    }

    #[test]
    fn scale_by_one_is_identity((layout, row) in layout_and_row(), target in modality()) {
        let mut out = row.clone();
        scale(&mut out, &layout, target, 1.0).unwrap();
        for (a, b) in out.iter().zip(&row) {
            prop_assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn scale_is_not_renormalised((layout, row) in layout_and_row(), target in modality(), k in 0.1..5.0f64) {
        let alpha = masses(&row, &layout)[target as usize];
        let mut out = row.clone();
        scale(&mut out, &layout, target, k).unwrap();
        prop_assert!((out.iter().sum::<f64>() - (1.0 + (k - 1.0) * alpha)).abs() < ROW_SUM_TOL);
    }

    #[test]
    fn adhh_fires_only_above_threshold((layout, row) in layout_and_row(), threshold in 0.01..0.99f64) {
        let text = masses(&row, &layout)[Modality::Text as usize];
        let mut out = row.clone();
        let outcome = adhh(&mut out, &layout, threshold).unwrap();
        if text > threshold && outcome == RowOutcome::Modified {
            // Text is zeroed without renormalisation.
            prop_assert!((out.iter().sum::<f64>() - (1.0 - text)).abs() < ROW_SUM_TOL);
        } else {
            prop_assert_eq!(out, row);
        }
    }

    /// Relabelling tokens within a modality permutes the row but cannot
    /// change its modality masses.
    #[test]
    fn mass_is_permutation_invariant((layout, row) in layout_and_row(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut permuted = row.clone();
        for m in Modality::ALL {
            permuted[layout.span(m)].shuffle(&mut rng);
        }
        let n = layout.prompt_len();
        let a = AttentionTensor::from_weights(1, 1, 1, n, row).unwrap();
        let b = AttentionTensor::from_weights(1, 1, 1, n, permuted).unwrap();
        let ma = modality_mass(&a, &layout, &LayerScope::global()).unwrap();
        let mb = modality_mass(&b, &layout, &LayerScope::global()).unwrap();
        for m in Modality::ALL {
            prop_assert!((ma.get(m) - mb.get(m)).abs() < 1e-15);
        }
    }
}

/// Causal attention tensor with rows drawn from `seed`.
fn random_tensor(layers: usize, heads: usize, layout: &ModalityLayout, seed: u64) -> AttentionTensor {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = layout.prompt_len();
    let mut a = AttentionTensor::zeros(layers, heads, n, n);
    for l in 0..layers {
        for h in 0..heads {
            for q in 0..n {
                let row = a.row_mut(l, h, q);
                for w in &mut row[..=q] {
                    *w = rng.gen_range(0.01..1.0);
                }
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|w| *w /= s);
            }
        }
    }
    a
}

#[test]
fn apply_spec_touches_only_scoped_cells() {
    let layout = ModalityLayout::new(2, 4, 3).unwrap();
    let attn = random_tensor(8, 2, &layout, 5);
    let spec = InterventionSpec::proportional(Modality::System, 1.0, LayerScope::quarter(3).with_heads(vec![1]));
    let (out, stats) = apply_spec(&attn, &layout, &spec).unwrap();
    for l in 0..8 {
        for h in 0..2 {
            let scoped = (4..6).contains(&l) && h == 1;
            assert_eq!(out.head_block(l, h) == attn.head_block(l, h), !scoped, "layer {l} head {h}");
        }
    }
    // Query rows inside the system span have no recipient to receive mass.
    assert_eq!(stats.rows_modified, 2 * (9 - 2));
    assert_eq!(stats.rows_skipped_zero_recipient, 2 * 2);
    out.validate(1e-9).unwrap();
}

#[test]
fn apply_spec_counts_degenerate_rows() {
    let layout = ModalityLayout::new(1, 2, 1).unwrap();
    let attn = random_tensor(4, 1, &layout, 9);
    // Query 0 sees only the system token: transferring system mass has no recipient.
    let spec = InterventionSpec::proportional(Modality::System, 1.0, LayerScope::global());
    let (_, stats) = apply_spec(&attn, &layout, &spec).unwrap();
    assert_eq!(stats.rows_skipped_zero_recipient, 4);
    assert_eq!(stats.rows_modified, 4 * 3);
    // Transferring text mass: only the last query sees any text.
    let spec = InterventionSpec::proportional(Modality::Text, 1.0, LayerScope::global());
    let (_, stats) = apply_spec(&attn, &layout, &spec).unwrap();
    assert_eq!(stats.rows_skipped_zero_source, 4 * 3);
    assert_eq!(stats.rows_modified, 4);
}

#[test]
fn none_spec_is_bitwise_identity() {
    let layout = ModalityLayout::new(3, 3, 2).unwrap();
    let attn = random_tensor(4, 3, &layout, 1);
    let (out, stats) = apply_spec(&attn, &layout, &InterventionSpec::none()).unwrap();
    assert_eq!(out, attn);
    assert!(stats.is_zero());
}
