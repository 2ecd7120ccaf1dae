// Trains a small speaker on a synthetic world and prints a few generations.
// Usage: aigen_demo [ce_steps] [gan_steps]

#include <cstdio>
#include <cstdlib>

#include "aigen/aigen.hpp"

int main(int argc, char** argv) {
  using namespace aigen;
  TrainConfig cfg;
  cfg.seed = 1;
  cfg.ce_steps = argc > 1 ? std::strtoull(argv[1], nullptr, 10) : 400;
  cfg.gan_steps = argc > 2 ? std::strtoull(argv[2], nullptr, 10) : 20;

  const auto world = synth::build_world(cfg.seed);
  auto [train_eps, val_eps] = synth::split(synth::sample_dataset(world, cfg.seed, 1000));
  auto trajs = synth::trajectories(train_eps);
  auto vocab = build_training_vocab(trajs, cfg.min_frequency);
  const auto corpus = make_corpus(std::move(trajs), vocab, cfg.max_instruction_len);
  auto state = make_training_state<float>(cfg, corpus.vocab, corpus.feature_dim);

  TrainHooks hooks;
  hooks.on_record = [](const TrainLogRecord& r) {
    if (r.step % 100 == 0) std::printf("%s\n", record_to_json(r, false).dump().c_str());
  };
  train(state, corpus, hooks);

  RandomStream rng = RandomStream(cfg.seed).substream("demo");
  for (std::size_t i = 0; i < 5 && i < val_eps.size(); ++i) {
    const auto& ep = val_eps[i];
    const auto g = sample_decode(state.generator, ep.trajectory, state.vocab, 1.0, rng,
                                 cfg.max_instruction_len + 1, cfg.generator_options());
    const auto text = text::decode(g.body(), state.vocab);
    std::printf("%s [%s/%s] %s%s\n", ep.trajectory.id.c_str(), ep.truth.room.c_str(), ep.truth.object.c_str(),
                text.c_str(), synth::mentions_truth(text, ep.truth) ? "" : "  (miss)");
  }
  return 0;
}
