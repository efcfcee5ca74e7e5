use std::collections::HashMap;

use idt_core::stats::{student_t_sf, welch_t_test};
use idt_core::{
    compute_turn_metrics, entropy, pooled_entropy, tokenize, ConversationState, DetectorConfig,
    EntropyAccumulator, TokenBag, TokenId, TokenizerSpec,
};
use proptest::prelude::*;

/// Shannon entropy straight from a token list, sharing no code with the crate.
fn naive_entropy(tokens: &[u32]) -> f64 {
    let mut counts: HashMap<u32, usize> = HashMap::new();
    for &t in tokens {
        *counts.entry(t).or_default() += 1;
    }
    let n = tokens.len() as f64;
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

fn to_ids(v: &[u32]) -> Vec<TokenId> {
    v.iter().map(|&x| TokenId(x)).collect()
}

fn token_vec(max_vocab: u32, max_len: usize) -> impl Strategy<Value = Vec<u32>> {
    (1..=max_vocab).prop_flat_map(move |v| prop::collection::vec(0..v, 0..=max_len))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn entropy_bounds(tokens in token_vec(500, 2000)) {
        let bag = TokenBag::from_tokens(&to_ids(&tokens));
        let h = entropy(&bag);
        prop_assert!(h >= 0.0);
        if bag.distinct() > 0 {
            prop_assert!(h <= (bag.distinct() as f64).log2() + 1e-12);
        }
        prop_assert!((h - naive_entropy(&tokens)).abs() < 1e-9);
    }

    #[test]
    fn pooled_is_permutation_and_grouping_invariant(
        a in token_vec(60, 300), b in token_vec(60, 300), c in token_vec(60, 300)
    ) {
        let (ba, bb, bc) = (
            TokenBag::from_tokens(&to_ids(&a)),
            TokenBag::from_tokens(&to_ids(&b)),
            TokenBag::from_tokens(&to_ids(&c)),
        );
        let abc = pooled_entropy(&[&ba, &bb, &bc]);
        prop_assert!((abc - pooled_entropy(&[&bc, &ba, &bb])).abs() <= 1e-12);
        prop_assert!((abc - pooled_entropy(&[&bb, &bc, &ba])).abs() <= 1e-12);
        let mut ab = ba.clone();
        ab.merge(&bb);
        prop_assert!((abc - pooled_entropy(&[&ab, &bc])).abs() <= 1e-12);
    }

    #[test]
    fn accumulator_matches_naive(chunks in prop::collection::vec(token_vec(200, 200), 1..20)) {
        let mut acc = EntropyAccumulator::new();
        let mut all = Vec::new();
        for chunk in &chunks {
            acc.extend(&to_ids(chunk));
            all.extend_from_slice(chunk);
            prop_assert!((acc.entropy() - naive_entropy(&all)).abs() <= 1e-9);
        }
        prop_assert_eq!(acc.update_count(), all.len() as u64);
    }

    #[test]
    fn metric_identities(s in token_vec(500, 1500), a in token_vec(500, 400), sp in token_vec(500, 400)) {
        let m = compute_turn_metrics(
            &TokenBag::from_tokens(&to_ids(&s)),
            &TokenBag::from_tokens(&to_ids(&a)),
            &TokenBag::from_tokens(&to_ids(&sp)),
            1,
        );
        prop_assert!((m.mi - (m.h_sa + m.h_sp - m.h_sasp)).abs() <= 1e-9);
        prop_assert!((m.hf + m.h_sa - m.h_sasp).abs() <= 1e-9);
        prop_assert!((m.hb + m.h_sp - m.h_sasp).abs() <= 1e-9);
        prop_assert!((m.delta_h - (m.h_sp - m.h_sa)).abs() <= 1e-12);
        prop_assert!(m.p.is_finite());

        let sa: Vec<u32> = s.iter().chain(&a).copied().collect();
        let sasp: Vec<u32> = sa.iter().chain(&sp).copied().collect();
        prop_assert!((m.h_sa - naive_entropy(&sa)).abs() <= 1e-9);
        prop_assert!((m.h_sasp - naive_entropy(&sasp)).abs() <= 1e-9);
    }

    #[test]
    fn tokenize_is_deterministic(text in "[a-d ]{0,60}") {
        let spec = TokenizerSpec::whitespace();
        prop_assert_eq!(tokenize(&text, spec).unwrap(), tokenize(&text, spec).unwrap());
        prop_assert_eq!(
            tokenize(&text, TokenizerSpec::byte()).unwrap(),
            tokenize(&text, TokenizerSpec::byte()).unwrap()
        );
    }

    #[test]
    fn welch_antisymmetric(
        a in prop::collection::vec(-5.0f64..5.0, 2..30),
        b in prop::collection::vec(-5.0f64..5.0, 2..30),
    ) {
        let ab = welch_t_test(&a, &b).unwrap();
        let ba = welch_t_test(&b, &a).unwrap();
        prop_assert_eq!(ab.t, -ba.t);
        prop_assert_eq!(ab.p_two_sided, ba.p_two_sided);
        prop_assert!((0.0..=1.0).contains(&ab.p_two_sided));
    }

    #[test]
    fn turn_processing_is_linear_in_new_tokens(
        prompt in token_vec(300, 200),
        turns in prop::collection::vec((token_vec(300, 150), token_vec(300, 150)), 1..15),
    ) {
        let mut state = ConversationState::new("c", &to_ids(&prompt), DetectorConfig::default());
        let mut expected_total = prompt.len() as u64;
        for (a, sp) in &turns {
            let before = state.context().update_count();
            state.process_turn(&to_ids(a), &to_ids(sp));
            let after = state.context().update_count();
            prop_assert_eq!(after - before, (a.len() + sp.len()) as u64);
            expected_total += (a.len() + sp.len()) as u64;
            prop_assert_eq!(state.context().total(), expected_total);
        }
        prop_assert_eq!(state.turn_count() as usize, turns.len());
    }
}

#[test]
fn large_df_approaches_normal_tail() {
    // Φ̄(1), Φ̄(2), Φ̄(3)
    let normal = [0.158_655_253_931_457, 0.022_750_131_948_179, 0.001_349_898_031_630];
    for (t, want) in [1.0, 2.0, 3.0].into_iter().zip(normal) {
        let got = student_t_sf(t, 500.0).unwrap();
        assert!((got - want).abs() < 1e-3, "t={t}: {got} vs {want}");
    }
}

#[test]
fn replay_is_bit_identical() {
    let prompt = to_ids(&[1, 2, 3, 4, 5]);
    let turns: Vec<(Vec<TokenId>, Vec<TokenId>)> = (0..60u32)
        .map(|t| {
            (
                to_ids(&[t % 7, t % 11, 3, (t * 5) % 13]),
                to_ids(&[t % 5, 2, (t * 3) % 17]),
            )
        })
        .collect();
    let run = || {
        let mut s = ConversationState::new("r", &prompt, DetectorConfig::default());
        for (a, sp) in &turns {
            s.process_turn(a, sp);
        }
        let report = s
            .detect_phase(&[31, 46, 59], 0.05, &idt_core::Metric::ALL)
            .unwrap();
        (s.history().to_vec(), report)
    };
    let (h1, r1) = run();
    let (h2, r2) = run();
    assert_eq!(h1.len(), h2.len());
    for (x, y) in h1.iter().zip(&h2) {
        assert_eq!(x.p.to_bits(), y.p.to_bits());
        assert_eq!(x.h_sasp.to_bits(), y.h_sasp.to_bits());
    }
    assert_eq!(r1, r2);
}
