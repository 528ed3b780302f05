#pragma once

// Span decoding, P/R/F1 reporting, router statistics, representation export
// and the ablation harness.

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "heed/core.hpp"
#include "heed/model.hpp"
#include "heed/trainer.hpp"

namespace heed {

// Class 1 where P[i][1] > P[i][0] (a 0.5 tie decodes to 0); maximal runs of
// class 1 become inclusive spans. probs is (n,2) row-major.
template <typename T>
std::vector<EntitySpan> decode_spans(std::span<const T> probs, Task task);
std::vector<EntitySpan> mask_to_spans(const std::vector<bool>& mask, Task task);

enum class Granularity { ExactSpan, Token };

struct Counts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  Counts& operator+=(const Counts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  bool operator==(const Counts&) const = default;
};

// Percentages. A zero denominator yields 0 with the matching flag set.
struct Prf {
  double p = 0;
  double r = 0;
  double f1 = 0;
  bool no_predictions = false;
  bool no_gold = false;
};

double f1_score(double p, double r);
Prf prf(const Counts& c);

// Spans of one task. Exact: (start,end) equality. Token: per covered token.
Counts match_spans(std::span<const EntitySpan> pred, std::span<const EntitySpan> gold,
                   Granularity granularity = Granularity::ExactSpan);
Prf score(std::span<const EntitySpan> pred, std::span<const EntitySpan> gold,
          Granularity granularity = Granularity::ExactSpan);

class EvalReport {
 public:
  void add(Task task, const std::string& language, const Counts& counts);

  Counts cell(Task task, const std::string& language) const;
  Counts task_total(Task task) const;
  // Over every task and language.
  Counts micro() const;
  std::vector<std::string> languages() const;

  bool incomplete = false;

  nlohmann::ordered_json to_json() const;
  // task,language,tp,fp,fn,P,R,F1 with task/language "all" for aggregates.
  std::string to_csv() const;

 private:
  std::map<std::pair<Task, std::string>, Counts> cells_;
};

// Table-3 statistic: mean |P - R|. Throws std::invalid_argument when empty.
double mean_abs_pr_diff(std::span<const std::pair<double, double>> pairs);
double round2(double x);

// Page-level prediction: chunk, run, decode per task, re-merge.
std::vector<EntitySpan> predict_record(const MoEEF<float>& model, const Vocab& vocab,
                                       const PageRecord& record, std::size_t max_len);

struct EvalResult {
  EvalReport report;
  double mean_loss = 0;  // over chunks
};
EvalResult evaluate(const MoEEF<float>& model, const Vocab& vocab,
                    std::span<const PageRecord> records, std::size_t max_len,
                    Granularity granularity = Granularity::ExactSpan);

// Mean router distribution per language subset, labeled by modality code and
// expert index (e.g. "M0").
struct RouterProfile {
  Task task = Task::Price;
  std::vector<std::string> labels;
  std::map<std::string, std::vector<double>> by_language;
  std::map<std::string, std::size_t> tokens;

  std::string to_csv() const;
};
RouterProfile router_profile(const MoEEF<float>& model, const Vocab& vocab,
                             std::span<const PageRecord> records, Task task, std::size_t max_len);

struct RepresentationSet {
  std::vector<std::string> slot_labels;  // per expert slot
  // One row per (slot, token): slot index, page, token index, gold label.
  struct Row {
    std::size_t slot = 0;
    std::string page_id;
    std::size_t token = 0;
    int label = 0;
  };
  std::vector<Row> rows;
  Eigen::MatrixXd values;  // rows x d
};
RepresentationSet export_representations(const MoEEF<float>& model, const Vocab& vocab,
                                         std::span<const PageRecord> records, Task task,
                                         std::size_t max_len);

// Projection on the top two principal components (columns), signs fixed so
// the largest-magnitude loading of each component is positive.
Eigen::MatrixXd pca_2d(const Eigen::MatrixXd& x);

// Writes representations.csv and pca.csv.
void write_representations(const RepresentationSet& reps, const std::filesystem::path& dir);

enum class AblationAxis { Features, Modality, Experts };

struct AblationSpec {
  AblationAxis axis = AblationAxis::Features;
  std::string name;  // feature category, t|m|v, or expert count
};

// Throws std::invalid_argument listing the valid axes and names.
AblationSpec parse_ablation(std::string_view axis, std::string_view name);
// The model configuration the ablation retrains.
ModelConfig apply_ablation(const ModelConfig& base, const AblationSpec& spec);

struct AblationReport {
  AblationSpec spec;
  ModelConfig baseline_config;
  ModelConfig variant_config;
  EvalReport baseline;
  EvalReport variant;
  std::size_t baseline_params = 0;
  std::size_t variant_params = 0;

  nlohmann::ordered_json to_json() const;
};

AblationReport run_ablation(const AblationSpec& spec, std::span<const PageRecord> train_set,
                            std::span<const PageRecord> dev_set,
                            std::span<const PageRecord> test_set, const ModelConfig& model_config,
                            const TrainConfig& train_config);

}  // namespace heed
