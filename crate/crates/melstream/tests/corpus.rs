//! Corpus builder integration: determinism, recipe distributions, manifest
//! self-consistency.

use melstream::synthdata::{build_corpus, load_manifest, synth_entry, CorpusManifest, MixSpec};

fn dir_bytes(root: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((
                    path.strip_prefix(root).unwrap().to_string_lossy().into_owned(),
                    std::fs::read(&path).unwrap(),
                ));
            }
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

#[test]
fn rebuild_with_same_seed_is_byte_identical() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    build_corpus(3, 1, 1, 77, 1.0, dir_a.path()).unwrap();
    build_corpus(3, 1, 1, 77, 1.0, dir_b.path()).unwrap();
    let a = dir_bytes(dir_a.path());
    let b = dir_bytes(dir_b.path());
    assert_eq!(a.len(), b.len());
    for ((na, ba), (nb, bb)) in a.iter().zip(b.iter()) {
        assert_eq!(na, nb);
        assert_eq!(ba, bb, "file {na} differs");
    }
}

#[test]
fn different_seed_differs() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    build_corpus(2, 1, 1, 1, 1.0, dir_a.path()).unwrap();
    build_corpus(2, 1, 1, 2, 1.0, dir_b.path()).unwrap();
    let a = dir_bytes(dir_a.path());
    let b = dir_bytes(dir_b.path());
    assert!(a.iter().zip(b.iter()).any(|((_, x), (_, y))| x != y));
}

/// Binomial bound: with p = 0.75 and n = 100, the reverberant fraction
/// should comfortably stay inside [0.60, 0.90].
#[test]
fn reverberant_fraction_is_near_three_quarters() {
    let n = 100;
    let reverb = (0..n)
        .filter(|&i| MixSpec::from_seed(melstream::synthdata::derive_seed(42, i)).reverberant)
        .count();
    let fraction = reverb as f64 / n as f64;
    assert!(
        (0.60..=0.90).contains(&fraction),
        "reverberant fraction {fraction}"
    );
}

#[test]
fn entry_snrs_stay_inside_the_recipe_range() {
    for i in 0..200u64 {
        let mix = MixSpec::from_seed(melstream::synthdata::derive_seed(9, i));
        assert!(mix.snr_db >= -5.0 - 1e-6 && mix.snr_db <= 20.0 + 1e-6);
        // Recompute the measured SNR of the generated triplet for a few.
        if i % 50 == 0 {
            let (noisy, clean, _) = synth_entry(&mix, 0.6).unwrap();
            let diff: Vec<f64> = noisy
                .samples
                .iter()
                .zip(clean.samples.iter())
                .map(|(n, c)| n - c)
                .collect();
            let p_noise = diff.iter().map(|v| v * v).sum::<f64>() / diff.len() as f64;
            let measured = 10.0 * (clean.power() / p_noise).log10();
            assert!(
                (measured - mix.snr_db).abs() < 1e-6,
                "entry {i}: measured {measured} vs {}",
                mix.snr_db
            );
        }
    }
}

#[test]
fn generated_audio_never_clips() {
    for i in 0..20u64 {
        let mix = MixSpec::from_seed(melstream::synthdata::derive_seed(3, i));
        let (noisy, clean, direct) = synth_entry(&mix, 0.8).unwrap();
        for buf in [&noisy, &clean, &direct] {
            assert!(buf.peak() <= 1.0, "entry {i} clips: {}", buf.peak());
        }
    }
}

#[test]
fn manifest_roundtrip_and_verification() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = build_corpus(3, 2, 1, 11, 0.8, dir.path()).unwrap();
    assert_eq!(manifest.entries.len(), 6);
    assert_eq!(manifest.n_train, 3);

    let reloaded = load_manifest(&CorpusManifest::manifest_path(dir.path())).unwrap();
    assert_eq!(reloaded.entries.len(), 6);
    assert_eq!(reloaded.global_seed, 11);
    reloaded.verify().unwrap();

    // Corrupt one wav; verification must now fail.
    let victim = &reloaded.entries[2].noisy;
    let mut bytes = std::fs::read(victim).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x55;
    std::fs::write(victim, bytes).unwrap();
    assert!(reloaded.verify().is_err());
}

#[test]
fn splits_partition_the_entries() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = build_corpus(4, 2, 3, 5, 0.6, dir.path()).unwrap();
    use melstream::synthdata::Split;
    assert_eq!(manifest.entries_of(Split::Train).count(), 4);
    assert_eq!(manifest.entries_of(Split::Val).count(), 2);
    assert_eq!(manifest.entries_of(Split::Test).count(), 3);
    for e in manifest.entries_of(Split::Val) {
        assert!(e.noisy.to_string_lossy().contains("val/"));
    }
}
