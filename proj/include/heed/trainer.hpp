#pragma once

// Multi-task training: page chunking, AdamW, and the epoch loop with
// dev-set checkpoint selection.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "heed/core.hpp"
#include "heed/model.hpp"

namespace heed {

struct TrainConfig {
  double lr = 3e-4;
  double weight_decay = 0.01;
  int epochs = 5;
  int batch_size = 8;
  std::uint64_t seed = 0;
  int max_len = 512;
  bool ortho_loss = false;
  double ortho_weight = 0.1;
  int eval_every = 1;  // dev evaluation cadence in epochs; the last epoch is always evaluated
  // Evaluate the training split too (needed for early stopping on it).
  bool eval_train = false;
  // Stop once training micro-F1 reaches 100. Requires eval_train.
  bool stop_at_perfect_train = false;
  // Loss weight of class-1 (inside-entity) tokens. 1 = unweighted.
  double positive_weight = 1.0;

  // lr 1e-5, 5 epochs, max_len 512: the fine-tuning schedule for a
  // pretrained backbone.
  static TrainConfig paper_preset();

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct ChunkSpan {
  EntitySpan local;     // chunk coordinates
  EntitySpan original;  // page coordinates of the whole gold span
  bool split = false;   // clipped at a chunk boundary
};

struct Chunk {
  PageRecord record;  // tokens/features of the window, spans in chunk coordinates
  std::size_t offset = 0;
  std::vector<ChunkSpan> spans;  // aligned with record.spans
};

// Non-overlapping windows [0,max_len), [max_len,2max_len), ...
std::vector<Chunk> chunk_record(const PageRecord& record, std::size_t max_len);

// Shifts per-chunk spans back to page coordinates and joins same-task spans
// that meet exactly at a chunk boundary.
std::vector<EntitySpan> merge_chunk_spans(std::span<const std::vector<EntitySpan>> per_chunk,
                                          std::span<const std::size_t> offsets);

ModelInput make_input(const Vocab& vocab, const PageRecord& record);

// One-hot gold per task, with class-1 rows scaled by positive_weight.
template <typename T>
std::array<ag::Tensor<T>, kTaskCount> gold_tensors(const PageRecord& record,
                                                   double positive_weight = 1.0);

struct AdamWConfig {
  double lr = 3e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  long step = 0;
};

// One AdamW update from the gradients accumulated on each parameter. Decay is
// applied to the weights directly. Throws std::runtime_error naming the first
// parameter with a non-finite gradient, before touching any weight.
template <typename T>
void optimizer_step(std::span<NamedParam<T>> params, AdamState<T>& state, const AdamWConfig& config);

struct MetricsRow {
  int epoch = 0;
  std::string split;  // train | dev
  std::string task;   // price | name | image | micro
  std::optional<double> p, r, f1;
  double loss = 0;
};

void write_metrics_csv(std::span<const MetricsRow> rows, const std::filesystem::path& path);
std::string metrics_csv(std::span<const MetricsRow> rows);

struct TrainResult {
  MoEEF<float> model;  // weights of the best dev epoch
  Vocab vocab;
  int best_epoch = 0;
  double best_dev_f1 = 0;
  int epochs_run = 0;
  std::vector<MetricsRow> log;
  std::vector<double> batch_losses;  // every optimizer step, in order
};

struct EpochSummary {
  int epoch = 0;
  double train_loss = 0;
  std::optional<double> train_f1;
  std::optional<double> dev_f1;
};
using EpochCallback = std::function<void(const EpochSummary&)>;

// The model's text vocabulary is built from train_set; max_len and the ortho
// settings come from train_config. Deterministic given train_config.seed.
TrainResult train(std::span<const PageRecord> train_set, std::span<const PageRecord> dev_set,
                  ModelConfig model_config, const TrainConfig& train_config,
                  const EpochCallback& on_epoch = {});

}  // namespace heed
