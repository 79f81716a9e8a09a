#pragma once

// Small untrained components wired together the way the pipeline does it.

#include "mulsmo/guidance.hpp"
#include "mulsmo/training.hpp"

namespace mulsmo::test {

inline constexpr int kTinyFrames = 12;

inline VaeConfig tiny_vae_config() {
  VaeConfig c;
  c.feature_dim = 95;
  c.max_frames = kTinyFrames;
  c.hidden = 32;
  c.n_z = 2;
  c.d_z = 4;
  return c;
}

inline DenoiserConfig tiny_denoiser_config() {
  DenoiserConfig c;
  c.n_z = 2;
  c.d_z = 4;
  c.width = 16;
  c.heads = 2;
  c.blocks = 2;
  c.text_buckets = 32;
  c.T = 100;
  return c;
}

inline MotionDataset tiny_dataset() {
  SynthConfig c;
  c.n_content = 2;
  c.n_style = 3;
  c.samples_per_pair = 4;
  c.frames = kTinyFrames;
  return synth_dataset(c);
}

struct TinyModels {
  MotionDataset data = tiny_dataset();
  Vae vae{tiny_vae_config(), 1};
  Denoiser den{tiny_denoiser_config(), 2};
  StyleNet net;
  StyleMotionEncoder enc;
  MotionClassifier clf;

  explicit TinyModels(Variant v = Variant::b)
      : net(make_net_config(v), den, 3), enc(make_encoder_config(), 4), clf(make_clf_config(), data.manifest.stats, 5) {}

  static StyleNetConfig make_net_config(Variant v) {
    StyleNetConfig c;
    c.variant = v;
    c.d_f = 6;
    return c;
  }
  static StyleEncoderConfig make_encoder_config() {
    StyleEncoderConfig c;
    c.feature_dim = 95;
    c.max_frames = kTinyFrames;
    c.patch = 4;
    c.width = 8;
    c.heads = 2;
    c.d_f = 6;
    return c;
  }
  static ClassifierConfig make_clf_config() {
    ClassifierConfig c;
    c.feature_dim = 95;
    c.hidden = 8;
    c.d_f = 6;
    c.n_classes = 3;
    return c;
  }

  ModelBundle bundle(bool with_style = true) const {
    ModelBundle m;
    m.vae = &vae;
    m.den = &den;
    m.net = with_style ? &net : nullptr;
    m.extractor = &clf;
    m.stats = &data.manifest.stats;
    m.frames = kTinyFrames;
    return m;
  }
};

}  // namespace mulsmo::test
