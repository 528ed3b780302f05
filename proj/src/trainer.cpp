#include "heed/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "heed/evalkit.hpp"
#include "heed/rng.hpp"

namespace heed {

namespace {

constexpr std::uint64_t kInitStream = 0x494E4954;     // "INIT"
constexpr std::uint64_t kShuffleStream = 0x53485546;  // "SHUF"

}  // namespace

TrainConfig TrainConfig::paper_preset() {
  TrainConfig c;
  c.lr = 1e-5;
  c.epochs = 5;
  c.max_len = 512;
  return c;
}

void TrainConfig::validate() const {
  const auto fail = [](const std::string& msg) { throw std::invalid_argument("train config: " + msg); };
  if (!(lr > 0)) fail("lr must be > 0");
  if (epochs < 1) fail("epochs must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (max_len < 1) fail("max_len must be >= 1");
  if (weight_decay < 0) fail("weight_decay must be >= 0");
  if (eval_every < 1) fail("eval_every must be >= 1");
  if (!(positive_weight > 0)) fail("positive_weight must be > 0");
  if (stop_at_perfect_train && !eval_train) fail("stop_at_perfect_train requires eval_train");
}

nlohmann::ordered_json TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["lr"] = lr;
  j["weight_decay"] = weight_decay;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["seed"] = seed;
  j["max_len"] = max_len;
  j["ortho_loss"] = ortho_loss;
  j["ortho_weight"] = ortho_weight;
  j["eval_every"] = eval_every;
  j["eval_train"] = eval_train;
  j["stop_at_perfect_train"] = stop_at_perfect_train;
  j["positive_weight"] = positive_weight;
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  const auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("lr", c.lr);
  get("weight_decay", c.weight_decay);
  get("epochs", c.epochs);
  get("batch_size", c.batch_size);
  get("seed", c.seed);
  get("max_len", c.max_len);
  get("ortho_loss", c.ortho_loss);
  get("ortho_weight", c.ortho_weight);
  get("eval_every", c.eval_every);
  get("eval_train", c.eval_train);
  get("stop_at_perfect_train", c.stop_at_perfect_train);
  get("positive_weight", c.positive_weight);
  c.validate();
  return c;
}

std::vector<Chunk> chunk_record(const PageRecord& record, std::size_t max_len) {
  if (max_len == 0) throw std::invalid_argument("chunk_record: max_len must be > 0");
  std::vector<Chunk> chunks;
  const std::size_t n = record.size();
  // An empty record still yields one (empty) chunk.
  for (std::size_t begin = 0; begin == 0 || begin < n; begin += max_len) {
    const std::size_t end = std::min(n, begin + max_len);
    Chunk c;
    c.offset = begin;
    c.record.page_id = record.page_id;
    c.record.language = record.language;
    c.record.source_url = record.source_url;
    c.record.tokens.assign(record.tokens.begin() + begin, record.tokens.begin() + end);
    c.record.features.assign(record.features.begin() + begin, record.features.begin() + end);
    for (const EntitySpan& s : record.spans) {
      const auto lo = std::max<std::size_t>(static_cast<std::size_t>(s.start), begin);
      const auto hi = std::min<std::size_t>(static_cast<std::size_t>(s.end), end - 1);
      if (lo > hi) continue;
      ChunkSpan cs;
      cs.local = {s.task, static_cast<int>(lo - begin), static_cast<int>(hi - begin)};
      cs.original = s;
      cs.split = lo != static_cast<std::size_t>(s.start) || hi != static_cast<std::size_t>(s.end);
      c.record.spans.push_back(cs.local);
      c.spans.push_back(cs);
    }
    chunks.push_back(std::move(c));
  }
  return chunks;
}

std::vector<EntitySpan> merge_chunk_spans(std::span<const std::vector<EntitySpan>> per_chunk,
                                          std::span<const std::size_t> offsets) {
  if (per_chunk.size() != offsets.size())
    throw std::invalid_argument("merge_chunk_spans: one offset per chunk required");
  std::vector<EntitySpan> out;
  for (std::size_t c = 0; c < per_chunk.size(); ++c) {
    const int off = static_cast<int>(offsets[c]);
    for (const EntitySpan& s : per_chunk[c]) {
      EntitySpan g{s.task, s.start + off, s.end + off};
      // Only a span starting on this chunk's first token can continue one
      // that ended on the previous chunk's last token.
      bool joined = false;
      if (c > 0 && s.start == 0) {
        for (auto it = out.rbegin(); it != out.rend(); ++it) {
          if (it->task == g.task && it->end + 1 == off) {
            it->end = g.end;
            joined = true;
            break;
          }
        }
      }
      if (!joined) out.push_back(g);
    }
  }
  sort_spans(out);
  return out;
}

ModelInput make_input(const Vocab& vocab, const PageRecord& record) {
  ModelInput in;
  in.token_ids = vocab.encode(record.tokens);
  in.features = record.features;
  return in;
}

template <typename T>
std::array<ag::Tensor<T>, kTaskCount> gold_tensors(const PageRecord& record, double positive_weight) {
  std::array<ag::Tensor<T>, kTaskCount> gold;
  for (Task t : kAllTasks) {
    ag::Tensor<T> g = gold_matrix<T>(record.spans, record.size(), t);
    if (positive_weight != 1.0) {
      auto v = g.mutable_data();
      for (std::size_t i = 1; i < v.size(); i += 2) v[i] *= static_cast<T>(positive_weight);
    }
    gold[static_cast<std::size_t>(t)] = g;
  }
  return gold;
}

template std::array<ag::Tensor<float>, kTaskCount> gold_tensors<float>(const PageRecord&, double);
template std::array<ag::Tensor<double>, kTaskCount> gold_tensors<double>(const PageRecord&, double);

template <typename T>
void optimizer_step(std::span<NamedParam<T>> params, AdamState<T>& state, const AdamWConfig& config) {
  for (const auto& p : params)
    for (T g : p.tensor.grad())
      if (!std::isfinite(g))
        throw std::runtime_error("optimizer_step: non-finite gradient in " + p.name);
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor.size(), T(0));
      state.v.emplace_back(p.tensor.size(), T(0));
    }
  }
  if (state.m.size() != params.size())
    throw std::invalid_argument("optimizer_step: state was built for a different parameter list");
  ++state.step;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  const T decay = static_cast<T>(1.0 - config.lr * config.weight_decay);
  const T b1 = static_cast<T>(config.beta1);
  const T b2 = static_cast<T>(config.beta2);
  const T step = static_cast<T>(config.lr / c1);
  const T inv_sqrt_c2 = static_cast<T>(1.0 / std::sqrt(c2));
  const T eps = static_cast<T>(config.eps);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto w = params[k].tensor.mutable_data();
    auto grad = params[k].tensor.grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const T g = grad.empty() ? T(0) : grad[i];
      m[i] = b1 * m[i] + (T(1) - b1) * g;
      v[i] = b2 * v[i] + (T(1) - b2) * g * g;
      w[i] *= decay;
      w[i] -= step * m[i] / (std::sqrt(v[i]) * inv_sqrt_c2 + eps);
    }
  }
}

template void optimizer_step<float>(std::span<NamedParam<float>>, AdamState<float>&,
                                    const AdamWConfig&);
template void optimizer_step<double>(std::span<NamedParam<double>>, AdamState<double>&,
                                     const AdamWConfig&);

std::string metrics_csv(std::span<const MetricsRow> rows) {
  std::string out = "epoch,split,task,P,R,F1,loss\n";
  char buf[64];
  const auto num = [&](const std::optional<double>& x) {
    if (!x) return std::string();
    std::snprintf(buf, sizeof buf, "%.4f", *x);
    return std::string(buf);
  };
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.6f", r.loss);
    const std::string loss = buf;
    out += std::to_string(r.epoch) + "," + r.split + "," + r.task + "," + num(r.p) + "," +
           num(r.r) + "," + num(r.f1) + "," + loss + "\n";
  }
  return out;
}

void write_metrics_csv(std::span<const MetricsRow> rows, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << metrics_csv(rows);
}

namespace {

void append_rows(std::vector<MetricsRow>& log, int epoch, const std::string& split,
                 const EvalReport& report, double loss) {
  for (Task t : kAllTasks) {
    const Prf s = prf(report.task_total(t));
    log.push_back({epoch, split, std::string(task_name(t)), s.p, s.r, s.f1, loss});
  }
  const Prf s = prf(report.micro());
  log.push_back({epoch, split, "micro", s.p, s.r, s.f1, loss});
}

}  // namespace

TrainResult train(std::span<const PageRecord> train_set, std::span<const PageRecord> dev_set,
                  ModelConfig model_config, const TrainConfig& tc, const EpochCallback& on_epoch) {
  tc.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  if (dev_set.empty()) throw std::invalid_argument("train: empty dev set");

  Vocab vocab = Vocab::build(train_set);
  model_config.text_vocab = static_cast<int>(vocab.size());
  model_config.max_len = tc.max_len;
  model_config.ortho_loss = tc.ortho_loss;
  model_config.ortho_weight = tc.ortho_weight;
  model_config.init_seed = Rng::derive(tc.seed, kInitStream);
  MoEEF<float> model(model_config);
  const auto max_len = static_cast<std::size_t>(tc.max_len);

  struct Item {
    ModelInput input;
    std::array<ag::Tensor<float>, kTaskCount> gold;
  };
  std::vector<Item> items;
  for (const PageRecord& r : train_set)
    for (Chunk& c : chunk_record(r, max_len))
      if (c.record.size() > 0)
        items.push_back({make_input(vocab, c.record), gold_tensors<float>(c.record, tc.positive_weight)});
  if (items.empty()) throw std::invalid_argument("train: training pages have no tokens");
  spdlog::info("train: {} pages, {} chunks, {} parameters", train_set.size(), items.size(),
               model.num_parameters());

  TrainResult result{model, vocab, 0, 0, 0, {}, {}};
  AdamState<float> state;
  const AdamWConfig adam{tc.lr, tc.weight_decay};
  std::vector<std::vector<float>> best_weights;
  double best_f1 = -1;
  const auto B = static_cast<std::size_t>(tc.batch_size);

  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    std::vector<std::size_t> order(items.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(Rng::derive(tc.seed, kShuffleStream, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);

    double loss_sum = 0;
    for (std::size_t b = 0; b < order.size(); b += B) {
      const std::size_t e = std::min(order.size(), b + B);
      const float scale = 1.0f / static_cast<float>(e - b);
      double batch_loss = 0;
      for (std::size_t i = b; i < e; ++i) {
        const Item& item = items[order[i]];
        ag::Graph<float> g;
        const auto fwd = model.forward(g, item.input);
        const auto lb = model.loss(g, fwd, item.gold);
        batch_loss += lb.total.item();
        g.backward(g.mul_scalar(lb.total, scale));
      }
      optimizer_step<float>(model.params(), state, adam);
      for (auto& p : model.params()) p.tensor.zero_grad();
      result.batch_losses.push_back(batch_loss / static_cast<double>(e - b));
      loss_sum += batch_loss;
    }
    EpochSummary summary;
    summary.epoch = epoch;
    summary.train_loss = loss_sum / static_cast<double>(items.size());

    bool stop = false;
    if (tc.eval_train) {
      const EvalResult tr = evaluate(model, vocab, train_set, max_len);
      append_rows(result.log, epoch, "train", tr.report, summary.train_loss);
      summary.train_f1 = prf(tr.report.micro()).f1;
      stop = tc.stop_at_perfect_train && *summary.train_f1 >= 100.0;
    } else {
      result.log.push_back({epoch, "train", "micro", {}, {}, {}, summary.train_loss});
    }

    if (epoch % tc.eval_every == 0 || epoch == tc.epochs || stop) {
      const EvalResult dev = evaluate(model, vocab, dev_set, max_len);
      append_rows(result.log, epoch, "dev", dev.report, dev.mean_loss);
      const double f1 = prf(dev.report.micro()).f1;
      summary.dev_f1 = f1;
      if (f1 > best_f1) {
        best_f1 = f1;
        result.best_epoch = epoch;
        best_weights.clear();
        for (const auto& p : model.params())
          best_weights.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
      }
    }
    result.epochs_run = epoch;
    spdlog::info("epoch {}: loss {:.5f}{}{}", epoch, summary.train_loss,
                 summary.train_f1 ? fmt::format(" train F1 {:.2f}", *summary.train_f1) : "",
                 summary.dev_f1 ? fmt::format(" dev F1 {:.2f}", *summary.dev_f1) : "");
    if (on_epoch) on_epoch(summary);
    if (stop) break;
  }

  auto& params = model.params();
  for (std::size_t k = 0; k < params.size(); ++k)
    std::copy(best_weights[k].begin(), best_weights[k].end(), params[k].tensor.mutable_data().begin());
  result.model = std::move(model);
  result.best_dev_f1 = best_f1;
  return result;
}

}  // namespace heed
