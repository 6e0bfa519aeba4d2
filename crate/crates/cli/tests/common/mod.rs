#![allow(dead_code)]

use eeganon::models::{AutoencoderConfig, ClassifierConfig};
use eeganon::synthetic::SynthConfig;
use eeganon::training::TrainConfig;
use eeganon_cli::{PipelineConfig, TrainSpec};

/// Three subjects, small models and two training epochs per phase.
pub fn tiny_config() -> PipelineConfig {
    let classifier = |seed, epochs| {
        TrainSpec::Config(TrainConfig {
            n_epochs: epochs,
            batch_size: 8,
            ..TrainConfig::desk_classifier().with_seed(seed)
        })
    };
    PipelineConfig {
        synth: SynthConfig {
            n_subjects: 3,
            epochs_per_subject: 20,
            ..Default::default()
        },
        utility_model: ClassifierConfig {
            filters: 4,
            hidden: 8,
            ..ClassifierConfig::utility_cnn()
        },
        reid_model: ClassifierConfig {
            d_model: 16,
            n_heads: 4,
            ff_dim: 32,
            n_layers: 1,
            ..ClassifierConfig::reid_transformer(3)
        },
        autoencoder: AutoencoderConfig {
            d_model: 16,
            n_heads: 4,
            ff_dim: 32,
            n_encoder_layers: 1,
            n_decoder_layers: 1,
            ..Default::default()
        },
        utility_training: classifier(1, 3),
        reid_training: classifier(2, 3),
        anon_training: TrainSpec::Config(TrainConfig {
            n_epochs: 2,
            batch_size: 8,
            ..TrainConfig::desk().with_seed(3)
        }),
        fresh_training: classifier(4, 2),
        ..Default::default()
    }
}
