#include "heed/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>

#include <Eigen/Eigenvalues>
#include <spdlog/spdlog.h>

namespace heed {

std::vector<EntitySpan> mask_to_spans(const std::vector<bool>& mask, Task task) {
  std::vector<EntitySpan> spans;
  const int n = static_cast<int>(mask.size());
  for (int i = 0; i < n;) {
    if (!mask[static_cast<std::size_t>(i)]) {
      ++i;
      continue;
    }
    int j = i;
    while (j + 1 < n && mask[static_cast<std::size_t>(j + 1)]) ++j;
    spans.push_back({task, i, j});
    i = j + 1;
  }
  return spans;
}

template <typename T>
std::vector<EntitySpan> decode_spans(std::span<const T> probs, Task task) {
  if (probs.size() % 2 != 0) throw std::invalid_argument("decode_spans: expected (n,2) probabilities");
  std::vector<bool> bits(probs.size() / 2);
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = probs[2 * i + 1] > probs[2 * i];
  return mask_to_spans(bits, task);
}

template std::vector<EntitySpan> decode_spans<float>(std::span<const float>, Task);
template std::vector<EntitySpan> decode_spans<double>(std::span<const double>, Task);

double f1_score(double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; }

Prf prf(const Counts& c) {
  Prf s;
  const std::size_t n_pred = c.tp + c.fp;
  const std::size_t n_gold = c.tp + c.fn;
  s.no_predictions = n_pred == 0;
  s.no_gold = n_gold == 0;
  s.p = n_pred ? 100.0 * static_cast<double>(c.tp) / static_cast<double>(n_pred) : 0.0;
  s.r = n_gold ? 100.0 * static_cast<double>(c.tp) / static_cast<double>(n_gold) : 0.0;
  s.f1 = f1_score(s.p, s.r);
  return s;
}

Counts match_spans(std::span<const EntitySpan> pred, std::span<const EntitySpan> gold,
                   Granularity granularity) {
  std::set<std::pair<int, int>> p, g;
  const auto add = [&](std::set<std::pair<int, int>>& into, const EntitySpan& s) {
    if (granularity == Granularity::ExactSpan) {
      into.insert({s.start, s.end});
    } else {
      for (int i = s.start; i <= s.end; ++i) into.insert({i, i});
    }
  };
  for (const auto& s : pred) add(p, s);
  for (const auto& s : gold) add(g, s);
  Counts c;
  for (const auto& x : p) c.tp += g.count(x);
  c.fp = p.size() - c.tp;
  c.fn = g.size() - c.tp;
  return c;
}

Prf score(std::span<const EntitySpan> pred, std::span<const EntitySpan> gold,
          Granularity granularity) {
  return prf(match_spans(pred, gold, granularity));
}

void EvalReport::add(Task task, const std::string& language, const Counts& counts) {
  cells_[{task, language}] += counts;
}

Counts EvalReport::cell(Task task, const std::string& language) const {
  const auto it = cells_.find({task, language});
  return it == cells_.end() ? Counts{} : it->second;
}

Counts EvalReport::task_total(Task task) const {
  Counts c;
  for (const auto& [key, v] : cells_)
    if (key.first == task) c += v;
  return c;
}

Counts EvalReport::micro() const {
  Counts c;
  for (const auto& [key, v] : cells_) c += v;
  return c;
}

std::vector<std::string> EvalReport::languages() const {
  std::set<std::string> langs;
  for (const auto& [key, v] : cells_) langs.insert(key.second);
  return {langs.begin(), langs.end()};
}

namespace {

nlohmann::ordered_json counts_json(const Counts& c) {
  const Prf s = prf(c);
  nlohmann::ordered_json j;
  j["P"] = round2(s.p);
  j["R"] = round2(s.r);
  j["F1"] = round2(s.f1);
  j["tp"] = c.tp;
  j["fp"] = c.fp;
  j["fn"] = c.fn;
  if (s.no_predictions) j["no_predictions"] = true;
  if (s.no_gold) j["no_gold"] = true;
  return j;
}

std::string fmt2(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

}  // namespace

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["micro"] = counts_json(micro());
  for (Task t : kAllTasks) j["tasks"][std::string(task_name(t))] = counts_json(task_total(t));
  nlohmann::ordered_json cells = nlohmann::ordered_json::array();
  for (const auto& [key, v] : cells_) {
    nlohmann::ordered_json c;
    c["task"] = task_name(key.first);
    c["language"] = key.second;
    c.update(counts_json(v));
    cells.push_back(c);
  }
  j["cells"] = cells;
  j["incomplete"] = incomplete;
  return j;
}

std::string EvalReport::to_csv() const {
  std::string out = "task,language,tp,fp,fn,P,R,F1\n";
  const auto row = [&](const std::string& task, const std::string& lang, const Counts& c) {
    const Prf s = prf(c);
    out += task + "," + lang + "," + std::to_string(c.tp) + "," + std::to_string(c.fp) + "," +
           std::to_string(c.fn) + "," + fmt2(s.p) + "," + fmt2(s.r) + "," + fmt2(s.f1) + "\n";
  };
  for (const auto& [key, v] : cells_) row(std::string(task_name(key.first)), key.second, v);
  for (Task t : kAllTasks) row(std::string(task_name(t)), "all", task_total(t));
  row("all", "all", micro());
  return out;
}

double round2(double x) { return std::round(x * 100.0) / 100.0; }

double mean_abs_pr_diff(std::span<const std::pair<double, double>> pairs) {
  if (pairs.empty()) throw std::invalid_argument("mean_abs_pr_diff: no (P,R) pairs");
  double s = 0;
  for (const auto& [p, r] : pairs) s += std::abs(p - r);
  return s / static_cast<double>(pairs.size());
}

namespace {

struct RecordRun {
  std::vector<EntitySpan> spans;  // page coordinates
  double loss_sum = 0;
  std::size_t chunks = 0;
};

RecordRun run_record(const MoEEF<float>& model, const Vocab& vocab, const PageRecord& record,
                     std::size_t max_len, bool with_loss) {
  RecordRun run;
  std::vector<std::vector<EntitySpan>> per_chunk;
  std::vector<std::size_t> offsets;
  for (const Chunk& c : chunk_record(record, max_len)) {
    if (c.record.size() == 0) continue;
    ag::Graph<float> g;
    const auto fwd = model.forward(g, make_input(vocab, c.record));
    std::vector<EntitySpan> spans;
    for (Task t : kAllTasks) {
      const auto d = decode_spans<float>(fwd.tasks[static_cast<std::size_t>(t)].final_probs.data(), t);
      spans.insert(spans.end(), d.begin(), d.end());
    }
    if (with_loss) {
      run.loss_sum += model.loss(g, fwd, gold_tensors<float>(c.record)).total.item();
      ++run.chunks;
    }
    per_chunk.push_back(std::move(spans));
    offsets.push_back(c.offset);
  }
  run.spans = merge_chunk_spans(per_chunk, offsets);
  return run;
}

}  // namespace

std::vector<EntitySpan> predict_record(const MoEEF<float>& model, const Vocab& vocab,
                                       const PageRecord& record, std::size_t max_len) {
  return run_record(model, vocab, record, max_len, false).spans;
}

EvalResult evaluate(const MoEEF<float>& model, const Vocab& vocab,
                    std::span<const PageRecord> records, std::size_t max_len,
                    Granularity granularity) {
  EvalResult res;
  double loss = 0;
  std::size_t chunks = 0;
  for (const PageRecord& r : records) {
    const RecordRun run = run_record(model, vocab, r, max_len, true);
    loss += run.loss_sum;
    chunks += run.chunks;
    for (Task t : kAllTasks)
      res.report.add(t, r.language,
                     match_spans(spans_for_task(run.spans, t), spans_for_task(r.spans, t), granularity));
  }
  res.mean_loss = chunks ? loss / static_cast<double>(chunks) : 0.0;
  return res;
}

namespace {

std::vector<std::string> slot_labels(const ModelConfig& c) {
  std::vector<std::string> labels;
  for (Modality o : c.active_modalities())
    for (int l = 0; l < c.experts; ++l) labels.push_back(std::string(modality_code(o)) + std::to_string(l));
  return labels;
}

}  // namespace

std::string RouterProfile::to_csv() const {
  std::string out = "language,tokens";
  for (const auto& l : labels) out += "," + l;
  out += "\n";
  char buf[32];
  for (const auto& [lang, v] : by_language) {
    out += lang + "," + std::to_string(tokens.at(lang));
    for (double x : v) {
      std::snprintf(buf, sizeof buf, ",%.6f", x);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

RouterProfile router_profile(const MoEEF<float>& model, const Vocab& vocab,
                             std::span<const PageRecord> records, Task task, std::size_t max_len) {
  RouterProfile prof;
  prof.task = task;
  prof.labels = slot_labels(model.config());
  const std::size_t k = prof.labels.size();
  std::map<std::string, std::vector<double>> sums;
  std::set<std::string> seen;
  for (const PageRecord& r : records) {
    seen.insert(r.language);
    for (const Chunk& c : chunk_record(r, max_len)) {
      if (c.record.size() == 0) continue;
      ag::Graph<float> g;
      const ag::Tensor<float> alpha = model.route(g, model.forward(g, make_input(vocab, c.record)).hidden, task);
      auto& acc = sums[r.language];
      acc.resize(k, 0.0);
      for (std::size_t i = 0; i < alpha.size(); ++i) acc[i % k] += alpha.data()[i];
      prof.tokens[r.language] += c.record.size();
    }
  }
  for (const auto& lang : seen)
    if (!sums.count(lang)) spdlog::warn("router_profile: language '{}' has no tokens, skipped", lang);
  for (auto& [lang, acc] : sums) {
    const double n = static_cast<double>(prof.tokens[lang]);
    for (double& x : acc) x /= n;
    prof.by_language[lang] = acc;
  }
  return prof;
}

RepresentationSet export_representations(const MoEEF<float>& model, const Vocab& vocab,
                                         std::span<const PageRecord> records, Task task,
                                         std::size_t max_len) {
  RepresentationSet out;
  out.slot_labels = slot_labels(model.config());
  const auto d = static_cast<Eigen::Index>(model.config().d_model);
  std::vector<std::vector<float>> values;
  for (const PageRecord& r : records) {
    for (const Chunk& c : chunk_record(r, max_len)) {
      if (c.record.size() == 0) continue;
      ag::Graph<float> g;
      const auto fwd = model.forward(g, make_input(vocab, c.record));
      const auto& reps = fwd.tasks[static_cast<std::size_t>(task)].reps;
      const ag::Tensor<float> gold = gold_matrix<float>(c.record.spans, c.record.size(), task);
      for (std::size_t s = 0; s < reps.size(); ++s) {
        for (std::size_t i = 0; i < c.record.size(); ++i) {
          out.rows.push_back({s, r.page_id, c.offset + i, gold.at(2 * i + 1) > 0 ? 1 : 0});
          const auto row = reps[s].data().subspan(i * static_cast<std::size_t>(d), static_cast<std::size_t>(d));
          values.emplace_back(row.begin(), row.end());
        }
      }
    }
  }
  out.values.resize(static_cast<Eigen::Index>(values.size()), d);
  for (std::size_t i = 0; i < values.size(); ++i)
    for (Eigen::Index j = 0; j < d; ++j) out.values(static_cast<Eigen::Index>(i), j) = values[i][static_cast<std::size_t>(j)];
  return out;
}

Eigen::MatrixXd pca_2d(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(x.rows(), 2);
  if (x.rows() < 2 || x.cols() == 0) return out;
  const Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(x.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::Index d = x.cols();
  for (Eigen::Index k = 0; k < std::min<Eigen::Index>(2, d); ++k) {
    // Eigenvalues come in ascending order.
    Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - k);
    if (eig.eigenvalues()(d - 1 - k) <= 1e-12) continue;
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    out.col(k) = centered * v;
  }
  return out;
}

void write_representations(const RepresentationSet& reps, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream raw(dir / "representations.csv", std::ios::binary);
  std::ofstream proj(dir / "pca.csv", std::ios::binary);
  if (!raw || !proj) throw std::runtime_error("cannot write representations under " + dir.string());
  raw << "slot,page_id,token,label";
  for (Eigen::Index j = 0; j < reps.values.cols(); ++j) raw << ",h" << j;
  raw << "\n";
  proj << "slot,page_id,token,label,pc1,pc2\n";
  const Eigen::MatrixXd pc = pca_2d(reps.values);
  char buf[40];
  for (std::size_t i = 0; i < reps.rows.size(); ++i) {
    const auto& r = reps.rows[i];
    const std::string head = reps.slot_labels[r.slot] + "," + r.page_id + "," +
                             std::to_string(r.token) + "," + std::to_string(r.label);
    raw << head;
    for (Eigen::Index j = 0; j < reps.values.cols(); ++j) {
      std::snprintf(buf, sizeof buf, ",%.6g", reps.values(static_cast<Eigen::Index>(i), j));
      raw << buf;
    }
    raw << "\n";
    std::snprintf(buf, sizeof buf, ",%.6g,%.6g", pc(static_cast<Eigen::Index>(i), 0),
                  pc(static_cast<Eigen::Index>(i), 1));
    proj << head << buf << "\n";
  }
}

namespace {

constexpr const char* kAblationHelp =
    "valid ablations: features {font-style, bounding-box, category, preceding-token, "
    "clickability-visibility}; modality {t, m, v}; experts {1, 3, 6, 9}";

}  // namespace

AblationSpec parse_ablation(std::string_view axis, std::string_view name) {
  const auto bad = [&] {
    throw std::invalid_argument("unknown ablation '" + std::string(axis) + " " + std::string(name) +
                                "'; " + kAblationHelp);
  };
  AblationSpec spec;
  spec.name = std::string(name);
  if (axis == "features") {
    spec.axis = AblationAxis::Features;
    try {
      spec.name = std::string(feature_category_name(parse_feature_category(name)));
    } catch (const std::invalid_argument&) {
      bad();
    }
  } else if (axis == "modality") {
    spec.axis = AblationAxis::Modality;
    try {
      spec.name = std::string(modality_code(parse_modality(name)));
    } catch (const std::invalid_argument&) {
      bad();
    }
  } else if (axis == "experts") {
    spec.axis = AblationAxis::Experts;
    if (name != "1" && name != "3" && name != "6" && name != "9") bad();
  } else {
    bad();
  }
  return spec;
}

ModelConfig apply_ablation(const ModelConfig& base, const AblationSpec& spec) {
  ModelConfig c = base;
  switch (spec.axis) {
    case AblationAxis::Features:
      for (std::size_t j : feature_category_indices(parse_feature_category(spec.name)))
        if (std::find(c.dropped_features.begin(), c.dropped_features.end(), j) == c.dropped_features.end())
          c.dropped_features.push_back(j);
      std::sort(c.dropped_features.begin(), c.dropped_features.end());
      break;
    case AblationAxis::Modality:
      c.modalities[static_cast<std::size_t>(parse_modality(spec.name))] = false;
      break;
    case AblationAxis::Experts:
      c.experts = std::stoi(spec.name);
      break;
  }
  c.validate();
  return c;
}

nlohmann::ordered_json AblationReport::to_json() const {
  static constexpr const char* kAxis[] = {"features", "modality", "experts"};
  nlohmann::ordered_json j;
  j["axis"] = kAxis[static_cast<int>(spec.axis)];
  j["name"] = spec.name;
  j["baseline_params"] = baseline_params;
  j["variant_params"] = variant_params;
  j["baseline"] = baseline.to_json();
  j["variant"] = variant.to_json();
  const Prf b = prf(baseline.micro());
  const Prf v = prf(variant.micro());
  j["delta"] = {{"P", round2(v.p - b.p)}, {"R", round2(v.r - b.r)}, {"F1", round2(v.f1 - b.f1)}};
  return j;
}

AblationReport run_ablation(const AblationSpec& spec, std::span<const PageRecord> train_set,
                            std::span<const PageRecord> dev_set,
                            std::span<const PageRecord> test_set, const ModelConfig& model_config,
                            const TrainConfig& train_config) {
  AblationReport rep;
  rep.spec = spec;
  rep.baseline_config = model_config;
  rep.variant_config = apply_ablation(model_config, spec);
  const auto max_len = static_cast<std::size_t>(train_config.max_len);
  const TrainResult base = train(train_set, dev_set, rep.baseline_config, train_config);
  rep.baseline = evaluate(base.model, base.vocab, test_set, max_len).report;
  rep.baseline_params = base.model.num_parameters();
  const TrainResult var = train(train_set, dev_set, rep.variant_config, train_config);
  rep.variant = evaluate(var.model, var.vocab, test_set, max_len).report;
  rep.variant_params = var.model.num_parameters();
  return rep;
}

}  // namespace heed
