#pragma once

// MoEEF: three input modalities (text, mixed, hypertext) through one shared
// encoder, per-task projector+expert pairs for every (modality, expert slot),
// a per-token router over all experts, and soft voting.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "heed/autograd.hpp"
#include "heed/core.hpp"
#include "heed/rng.hpp"

namespace heed {

enum class Modality : std::uint8_t { Text = 0, Mixed = 1, Hyper = 2 };
inline constexpr std::array<Modality, 3> kAllModalities = {Modality::Text, Modality::Mixed,
                                                           Modality::Hyper};
// "T", "M", "V"
std::string_view modality_code(Modality m);
// Accepts t|m|v (and text|mixed|hypertext).
Modality parse_modality(std::string_view name);

struct ModelConfig {
  int d_model = 64;
  int layers = 2;
  int heads = 4;
  int ff_dim = 256;
  int max_len = 512;
  int experts = 6;  // L, per modality
  int text_vocab = 2;
  std::array<int, kFeatureCount> feature_vocab = kFeatureVocab;
  double beta1 = 0.8;
  double beta2 = 0.2;
  std::array<bool, 3> modalities = {true, true, true};  // indexed by Modality
  std::vector<std::size_t> dropped_features;  // forced to 0 at embed time
  bool ortho_loss = false;
  double ortho_weight = 0.1;
  double init_std = 0.02;
  std::uint64_t init_seed = 0;

  int expert_hidden() const { return d_model / 2; }
  int projector_hidden() const { return d_model; }
  std::vector<Modality> active_modalities() const;
  // Number of experts each task routes over.
  int total_experts() const { return static_cast<int>(active_modalities().size()) * experts; }

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// Closed-form trainable parameter count.
std::size_t param_count(const ModelConfig& config);

// Whitespace-token vocabulary with UNK at id 0. Digits are folded to '0' so
// numbers of the same shape share an id.
class Vocab {
 public:
  static constexpr int kUnk = 0;

  Vocab();
  static Vocab build(std::span<const PageRecord> records, int min_count = 2);
  static std::string normalize(std::string_view token);

  int id(std::string_view token) const;
  std::vector<int> encode(std::span<const std::string> tokens) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  static Vocab from_tokens(std::vector<std::string> tokens);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct ModelInput {
  std::vector<int> token_ids;
  std::vector<FeatureVector> features;
  std::size_t size() const { return token_ids.size(); }
};

template <typename T>
struct Embeddings {
  ag::Tensor<T> text;   // E
  ag::Tensor<T> hyper;  // R
  ag::Tensor<T> mixed;  // M = E + R
};

template <typename T>
struct TaskOutput {
  // Indexed by expert slot k = position of the modality among active ones * L + l.
  std::vector<ag::Tensor<T>> reps;   // H'_{o,l}, (n,d)
  std::vector<ag::Tensor<T>> probs;  // P_{o,l}, (n,2)
  ag::Tensor<T> alpha;               // (n, total_experts)
  ag::Tensor<T> final_probs;         // (n,2)
};

template <typename T>
struct ForwardResult {
  Embeddings<T> emb;
  std::array<ag::Tensor<T>, 3> hidden;  // by Modality; undefined when dropped
  std::array<TaskOutput<T>, kTaskCount> tasks;
};

template <typename T>
struct TaskLoss {
  ag::Tensor<T> experts;  // L_{q,1}
  ag::Tensor<T> final;    // L_{q,2}
  ag::Tensor<T> total;    // L_q
};

template <typename T>
struct LossBreakdown {
  ag::Tensor<T> total;
  std::array<TaskLoss<T>, kTaskCount> tasks;
  ag::Tensor<T> ortho;  // undefined unless enabled
};

template <typename T>
struct NamedParam {
  std::string name;
  ag::Tensor<T> tensor;
};

template <typename T>
class MoEEF {
 public:
  explicit MoEEF(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  std::vector<NamedParam<T>>& params() { return params_; }
  const std::vector<NamedParam<T>>& params() const { return params_; }
  ag::Tensor<T>* find(std::string_view name);
  std::size_t num_parameters() const;

  Embeddings<T> embed(ag::Graph<T>& g, const ModelInput& input) const;
  ag::Tensor<T> encode(ag::Graph<T>& g, const ag::Tensor<T>& x) const;
  // Returns {H', P} for expert l of modality o on the given task.
  std::pair<ag::Tensor<T>, ag::Tensor<T>> expert_predict(ag::Graph<T>& g, const ag::Tensor<T>& h,
                                                         Task task, Modality o, int l) const;
  // hidden indexed by Modality; dropped modalities are ignored.
  ag::Tensor<T> route(ag::Graph<T>& g, const std::array<ag::Tensor<T>, 3>& hidden,
                      Task task) const;
  ForwardResult<T> forward(ag::Graph<T>& g, const ModelInput& input) const;

  // gold: per task (n,2) one-hot.
  TaskLoss<T> loss_task(ag::Graph<T>& g, const ag::Tensor<T>& gold,
                        const TaskOutput<T>& out) const;
  LossBreakdown<T> loss(ag::Graph<T>& g, const ForwardResult<T>& fwd,
                        const std::array<ag::Tensor<T>, kTaskCount>& gold) const;

 private:
  struct Linear {
    ag::Tensor<T> w;
    ag::Tensor<T> b;
  };
  struct Head {
    Linear q, k, v;
  };
  struct Layer {
    std::vector<Head> heads;
    Linear out;
    ag::Tensor<T> ln1_g, ln1_b;
    Linear ff1, ff2;
    ag::Tensor<T> ln2_g, ln2_b;
  };
  struct ExpertSlot {
    Linear proj1, proj2;
    Linear exp1, exp2;
  };
  struct TaskHead {
    std::vector<ExpertSlot> slots;  // active modality position * L + l
    Linear router1, router2;
  };

  ag::Tensor<T> add_param(std::string name, ag::Shape shape, Rng* rng, double fill = 0);
  Linear add_linear(const std::string& name, int in, int out, Rng& rng, bool bias = true);
  ag::Tensor<T> apply(ag::Graph<T>& g, const Linear& lin, const ag::Tensor<T>& x) const;
  int slot_index(Modality o, int l) const;

  ModelConfig config_;
  std::vector<NamedParam<T>> params_;
  ag::Tensor<T> text_emb_;
  std::array<ag::Tensor<T>, kFeatureCount> feat_emb_;
  ag::Tensor<T> pos_emb_;
  ag::Tensor<T> emb_ln_g_, emb_ln_b_;
  std::vector<Layer> layers_;
  std::array<TaskHead, kTaskCount> tasks_;
};

extern template class MoEEF<float>;
extern template class MoEEF<double>;

// Token-level one-hot gold for one task: class 1 inside any span.
template <typename T>
ag::Tensor<T> gold_matrix(std::span<const EntitySpan> spans, std::size_t n, Task task);

template <typename T>
ag::Tensor<T> soft_vote(ag::Graph<T>& g, const ag::Tensor<T>& alpha,
                        std::span<const ag::Tensor<T>> probs);

// Mean over tokens of ||S_i S_i^T - I||_F where S_i stacks the row-normalized
// representations of token i.
template <typename T>
ag::Tensor<T> ortho_loss(ag::Graph<T>& g, std::span<const ag::Tensor<T>> reps);

// Sum over tasks; every task must appear exactly once.
template <typename T>
ag::Tensor<T> loss_total(ag::Graph<T>& g, std::span<const std::pair<Task, ag::Tensor<T>>> losses);

// Checkpoint directory: manifest.json + weights.bin (little-endian float32).
void save_checkpoint(const MoEEF<float>& model, const Vocab& vocab,
                     const std::filesystem::path& dir);
struct Checkpoint {
  MoEEF<float> model;
  Vocab vocab;
};
Checkpoint load_checkpoint(const std::filesystem::path& dir);

// Copies weights between precisions (same config).
MoEEF<double> to_double(const MoEEF<float>& model);

}  // namespace heed
