use cis_core::metrics::{jaccard, sequence_metrics};
use cis_core::models::{generator_forward, Mode};
use cis_core::rng::derive;
use cis_core::synth::{gen_ideal_sample, gen_sequence, SceneSample};
use cis_core::training::{infer, train, Players, TrainConfig};
use cis_core::{FlowField, Mask};

fn tiny() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    for (w, h) in [(&mut cfg.generator.width, &mut cfg.generator.height), (&mut cfg.inpainter.width, &mut cfg.inpainter.height)] {
        *w = 16;
        *h = 16;
    }
    cfg.synth.width = 16;
    cfg.synth.height = 16;
    cfg.generator.base_channels = 4;
    cfg.generator.encoder_depth = 2;
    cfg.generator.atrous_rates = vec![2];
    cfg.inpainter.base_channels = 4;
    cfg.inpainter.encoder_depth = 2;
    cfg.inpainter.atrous_rates = vec![2];
    cfg.batch_size = 2;
    cfg.total_steps = 4;
    cfg.warmup_steps = 2;
    cfg.checkpoint_every = 0;
    cfg
}

#[test]
fn train_then_infer_then_score() {
    let cfg = tiny();
    let data: Vec<SceneSample> = (0..6).map(|i| gen_ideal_sample(derive(11, i), &cfg.synth).unwrap()).collect();
    let out = train(&data, &cfg, &mut |_, _| Ok(())).unwrap();
    assert_eq!(out.history.len(), 4);
    assert!(out.history.iter().all(|r| r.loss.total.is_finite() && r.loss.term_in >= 0.0 && r.loss.term_out >= 0.0));

    let icfg = cfg.infer_config();
    let mut preds: Vec<Mask> = Vec::new();
    for s in &data {
        let (soft, hard) = infer(&s.frame, &[&s.flow], &out.players.generator, &cfg.generator, &icfg).unwrap();
        assert!(soft.probs().iter().all(|p| (0.0..=1.0).contains(p)));
        assert!((0.0..=1.0).contains(&jaccard(&hard, &s.mask).unwrap()));
        preds.push(hard);
    }
    let gts: Vec<Mask> = data.iter().map(|s| s.mask.clone()).collect();
    let report = sequence_metrics("tiny", &preds, &gts, None).unwrap();
    assert_eq!(report.j.len(), 6);
}

#[test]
fn untrained_players_need_statistics_for_eval() {
    let cfg = tiny();
    let players = Players::init(&cfg).unwrap();
    let s = gen_ideal_sample(derive(12, 0), &cfg.synth).unwrap();
    assert!(generator_forward(&s.frame, &s.flow, &players.generator, &cfg.generator, Mode::Train).is_ok());
    assert!(generator_forward(&s.frame, &s.flow, &players.generator, &cfg.generator, Mode::Eval).is_err());
}

#[test]
fn sequences_share_masks_across_offsets() {
    let cfg = tiny();
    let seq = gen_sequence(5, 3, &[-2, -1, 1, 2], 0.2, &cfg.synth).unwrap();
    assert_eq!(seq.len(), 3);
    for f in &seq {
        let dts: Vec<i32> = f.flows.iter().map(|(d, _)| *d).collect();
        assert_eq!(dts, vec![-2, -1, 1, 2]);
        let flows: Vec<&FlowField> = f.flows.iter().map(|(_, fl)| fl).collect();
        assert!(flows.iter().all(|fl| fl.width() == 16 && fl.height() == 16));
    }
}
