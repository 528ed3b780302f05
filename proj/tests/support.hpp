#pragma once

// Shared fixtures for the unit and acceptance binaries.

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "heed/autograd.hpp"
#include "heed/model.hpp"
#include "heed/rng.hpp"

namespace heed::testing {

// Tiny configuration used by the gradient checks.
inline ModelConfig tiny_config(int experts = 2, int layers = 1) {
  ModelConfig c;
  c.d_model = 8;
  c.heads = 2;
  c.layers = layers;
  c.ff_dim = 16;
  c.max_len = 16;
  c.experts = experts;
  c.text_vocab = 10;
  c.init_std = 0.5;
  c.init_seed = 17;
  return c;
}

inline ModelInput random_input(Rng& rng, std::size_t n, const ModelConfig& c) {
  ModelInput in;
  for (std::size_t i = 0; i < n; ++i) {
    in.token_ids.push_back(static_cast<int>(rng.uniform_int(0, c.text_vocab - 1)));
    FeatureVector f{};
    for (std::size_t j = 0; j < kFeatureCount; ++j)
      f[j] = static_cast<std::int32_t>(rng.uniform_int(0, std::min(c.feature_vocab[j], 40) - 1));
    in.features.push_back(f);
  }
  return in;
}

inline std::vector<EntitySpan> random_spans(Rng& rng, std::size_t n) {
  std::vector<EntitySpan> spans;
  for (Task t : kAllTasks) {
    const int s = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
    const int e = static_cast<int>(rng.uniform_int(s, static_cast<std::int64_t>(n) - 1));
    spans.push_back({t, s, e});
  }
  return spans;
}

// Every parameter element that can influence the loss on `input`: embedding
// tables contribute only the rows the input looks up.
inline std::vector<ag::GradProbe> model_probes(MoEEF<double>& model, const ModelInput& input) {
  const ModelConfig& c = model.config();
  const auto d = static_cast<std::size_t>(c.d_model);
  const auto rows = [&](const std::set<std::size_t>& used) {
    std::vector<std::size_t> idx;
    for (std::size_t r : used)
      for (std::size_t k = 0; k < d; ++k) idx.push_back(r * d + k);
    return idx;
  };
  std::vector<ag::GradProbe> probes;
  for (auto& p : model.params()) {
    if (p.name == "emb.text") {
      std::set<std::size_t> used;
      for (int id : input.token_ids) used.insert(static_cast<std::size_t>(id));
      probes.push_back({p.name, p.tensor, rows(used)});
    } else if (p.name.rfind("emb.feat.", 0) == 0) {
      const std::size_t j = std::stoul(p.name.substr(9));
      bool dropped = false;
      for (std::size_t x : c.dropped_features) dropped = dropped || x == j;
      std::set<std::size_t> used;
      for (const auto& f : input.features) used.insert(dropped ? 0 : static_cast<std::size_t>(f[j]));
      probes.push_back({p.name, p.tensor, rows(used)});
    } else if (p.name == "emb.pos") {
      std::set<std::size_t> used;
      for (std::size_t i = 0; i < input.size(); ++i) used.insert(i);
      probes.push_back({p.name, p.tensor, rows(used)});
    } else {
      probes.push_back({p.name, p.tensor, {}});
    }
  }
  return probes;
}

inline ag::LossFn model_loss(const MoEEF<double>& model, const ModelInput& input,
                             const std::vector<EntitySpan>& spans) {
  return [&model, input, spans](ag::Graph<double>& g) {
    const auto fwd = model.forward(g, input);
    std::array<ag::Tensor<double>, kTaskCount> gold;
    for (Task t : kAllTasks)
      gold[static_cast<std::size_t>(t)] = gold_matrix<double>(spans, input.size(), t);
    return model.loss(g, fwd, gold).total;
  };
}

// Fresh, empty scratch directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("heed_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace heed::testing
