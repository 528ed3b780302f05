#include "heed/model.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

namespace heed {

using ag::Graph;
using ag::Shape;
using ag::Tensor;

std::string_view modality_code(Modality m) {
  switch (m) {
    case Modality::Text: return "T";
    case Modality::Mixed: return "M";
    case Modality::Hyper: return "V";
  }
  return "?";
}

Modality parse_modality(std::string_view name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "t" || s == "text") return Modality::Text;
  if (s == "m" || s == "mixed") return Modality::Mixed;
  if (s == "v" || s == "hypertext" || s == "hyper") return Modality::Hyper;
  throw std::invalid_argument("unknown modality '" + std::string(name) + "' (expected t, m or v)");
}

std::vector<Modality> ModelConfig::active_modalities() const {
  std::vector<Modality> out;
  for (Modality m : kAllModalities)
    if (modalities[static_cast<std::size_t>(m)]) out.push_back(m);
  return out;
}

void ModelConfig::validate() const {
  const auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (d_model <= 0) fail("d_model must be > 0");
  if (heads <= 0 || d_model % heads != 0) fail("d_model must be divisible by heads");
  if (d_model % 2 != 0) fail("d_model must be even (expert hidden = d_model/2)");
  if (layers < 0) fail("layers must be >= 0");
  if (ff_dim <= 0) fail("ff_dim must be > 0");
  if (max_len <= 0) fail("max_len must be > 0");
  if (experts < 1) fail("experts must be >= 1");
  if (text_vocab < 1) fail("text_vocab must be >= 1");
  if (beta1 < 0 || beta2 < 0) fail("beta1 and beta2 must be >= 0");
  if (active_modalities().empty()) fail("at least one modality must be enabled");
  for (std::size_t j : dropped_features)
    if (j >= kFeatureCount) fail("dropped feature index " + std::to_string(j) + " out of range");
  for (int v : feature_vocab)
    if (v < 1) fail("feature vocabulary sizes must be >= 1");
}

nlohmann::ordered_json ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["d_model"] = d_model;
  j["layers"] = layers;
  j["heads"] = heads;
  j["ff_dim"] = ff_dim;
  j["max_len"] = max_len;
  j["experts"] = experts;
  j["text_vocab"] = text_vocab;
  j["feature_vocab"] = feature_vocab;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  std::vector<std::string> mods;
  for (Modality m : active_modalities()) mods.emplace_back(modality_code(m));
  j["modalities"] = mods;
  j["dropped_features"] = dropped_features;
  j["ortho_loss"] = ortho_loss;
  j["ortho_weight"] = ortho_weight;
  j["init_std"] = init_std;
  j["init_seed"] = init_seed;
  return j;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  const auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("d_model", c.d_model);
  get("layers", c.layers);
  get("heads", c.heads);
  get("ff_dim", c.ff_dim);
  get("max_len", c.max_len);
  get("experts", c.experts);
  get("text_vocab", c.text_vocab);
  get("feature_vocab", c.feature_vocab);
  get("beta1", c.beta1);
  get("beta2", c.beta2);
  if (j.contains("modalities")) {
    c.modalities = {false, false, false};
    for (const auto& m : j.at("modalities"))
      c.modalities[static_cast<std::size_t>(parse_modality(m.get<std::string>()))] = true;
  }
  get("dropped_features", c.dropped_features);
  get("ortho_loss", c.ortho_loss);
  get("ortho_weight", c.ortho_weight);
  get("init_std", c.init_std);
  get("init_seed", c.init_seed);
  c.validate();
  return c;
}

std::size_t param_count(const ModelConfig& c) {
  const std::size_t d = static_cast<std::size_t>(c.d_model);
  const std::size_t ff = static_cast<std::size_t>(c.ff_dim);
  const std::size_t L = static_cast<std::size_t>(c.experts);
  const std::size_t m = c.active_modalities().size();
  const std::size_t eh = d / 2;

  std::size_t feat_rows = 0;
  for (int v : c.feature_vocab) feat_rows += static_cast<std::size_t>(v);
  const std::size_t emb = static_cast<std::size_t>(c.text_vocab) * d + feat_rows * d +
                          static_cast<std::size_t>(c.max_len) * d + 2 * d;
  // q,k,v over all heads + output projection + two layer norms + FFN
  const std::size_t layer = 3 * d * d + 2 * d + (d * d + d) + 4 * d + (d * ff + ff) + (ff * d + d);
  const std::size_t projector = 2 * (d * d + d);
  const std::size_t expert = (d * eh + eh) + (eh * 2 + 2);
  const std::size_t router = (m * d * d + d) + (d * m * L + m * L);
  const std::size_t task = m * L * (projector + expert) + router;
  return emb + static_cast<std::size_t>(c.layers) * layer + kTaskCount * task;
}

// ---- vocabulary ----

Vocab::Vocab() : tokens_{"<unk>"} { index_.emplace("<unk>", kUnk); }

std::string Vocab::normalize(std::string_view token) {
  std::string s(token);
  for (char& c : s)
    if (c >= '0' && c <= '9') c = '0';
  return s;
}

Vocab Vocab::build(std::span<const PageRecord> records, int min_count) {
  std::map<std::string, int> counts;
  for (const auto& r : records)
    for (const auto& t : r.tokens) ++counts[normalize(t)];
  std::vector<std::string> toks = {"<unk>"};
  for (const auto& [tok, n] : counts)
    if (n >= min_count && tok != "<unk>") toks.push_back(tok);
  return from_tokens(std::move(toks));
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  if (tokens.empty() || tokens[0] != "<unk>")
    throw std::invalid_argument("vocabulary must start with <unk>");
  Vocab v;
  v.tokens_ = std::move(tokens);
  v.index_.clear();
  for (std::size_t i = 0; i < v.tokens_.size(); ++i)
    v.index_.emplace(v.tokens_[i], static_cast<int>(i));
  return v;
}

int Vocab::id(std::string_view token) const {
  const auto it = index_.find(normalize(token));
  return it == index_.end() ? kUnk : it->second;
}

std::vector<int> Vocab::encode(std::span<const std::string> tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

// ---- model ----

template <typename T>
Tensor<T> MoEEF<T>::add_param(std::string name, Shape shape, Rng* rng, double fill) {
  std::vector<T> v(ag::shape_numel(shape), static_cast<T>(fill));
  if (rng)
    for (T& x : v) x = static_cast<T>(rng->normal(0.0, config_.init_std));
  Tensor<T> t = Tensor<T>::parameter(std::move(shape), std::move(v));
  params_.push_back({std::move(name), t});
  return t;
}

template <typename T>
typename MoEEF<T>::Linear MoEEF<T>::add_linear(const std::string& name, int in, int out,
                                              Rng& rng, bool bias) {
  Linear lin;
  lin.w = add_param(name + ".w", {static_cast<std::size_t>(in), static_cast<std::size_t>(out)}, &rng);
  if (bias) lin.b = add_param(name + ".b", {static_cast<std::size_t>(out)}, nullptr);
  return lin;
}

template <typename T>
MoEEF<T>::MoEEF(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  Rng rng(config_.init_seed);
  const int d = config_.d_model;
  const auto ud = static_cast<std::size_t>(d);
  text_emb_ = add_param("emb.text", {static_cast<std::size_t>(config_.text_vocab), ud}, &rng);
  for (std::size_t j = 0; j < kFeatureCount; ++j)
    feat_emb_[j] = add_param("emb.feat." + std::to_string(j),
                             {static_cast<std::size_t>(config_.feature_vocab[j]), ud}, &rng);
  pos_emb_ = add_param("emb.pos", {static_cast<std::size_t>(config_.max_len), ud}, &rng);
  emb_ln_g_ = add_param("emb.ln.g", {ud}, nullptr, 1.0);
  emb_ln_b_ = add_param("emb.ln.b", {ud}, nullptr);

  const int dh = d / config_.heads;
  for (int li = 0; li < config_.layers; ++li) {
    const std::string p = "enc." + std::to_string(li) + ".";
    Layer layer;
    for (int h = 0; h < config_.heads; ++h) {
      const std::string hp = p + "head." + std::to_string(h) + ".";
      // No key bias: it shifts every score in a query row equally, which the
      // softmax cancels, so its gradient is identically zero.
      Head head;
      head.q = add_linear(hp + "q", d, dh, rng);
      head.k = add_linear(hp + "k", d, dh, rng, false);
      head.v = add_linear(hp + "v", d, dh, rng);
      layer.heads.push_back(std::move(head));
    }
    layer.out = add_linear(p + "out", d, d, rng);
    layer.ln1_g = add_param(p + "ln1.g", {ud}, nullptr, 1.0);
    layer.ln1_b = add_param(p + "ln1.b", {ud}, nullptr);
    layer.ff1 = add_linear(p + "ff1", d, config_.ff_dim, rng);
    layer.ff2 = add_linear(p + "ff2", config_.ff_dim, d, rng);
    layer.ln2_g = add_param(p + "ln2.g", {ud}, nullptr, 1.0);
    layer.ln2_b = add_param(p + "ln2.b", {ud}, nullptr);
    layers_.push_back(std::move(layer));
  }

  const auto active = config_.active_modalities();
  const int m = static_cast<int>(active.size());
  for (Task task : kAllTasks) {
    TaskHead& th = tasks_[static_cast<std::size_t>(task)];
    const std::string tp = std::string(task_name(task)) + ".";
    for (Modality o : active) {
      for (int l = 0; l < config_.experts; ++l) {
        const std::string sp = tp + std::string(modality_code(o)) + std::to_string(l) + ".";
        ExpertSlot s;
        s.proj1 = add_linear(sp + "proj1", d, config_.projector_hidden(), rng);
        s.proj2 = add_linear(sp + "proj2", config_.projector_hidden(), d, rng);
        s.exp1 = add_linear(sp + "exp1", d, config_.expert_hidden(), rng);
        s.exp2 = add_linear(sp + "exp2", config_.expert_hidden(), 2, rng);
        th.slots.push_back(std::move(s));
      }
    }
    th.router1 = add_linear(tp + "router1", m * d, d, rng);
    th.router2 = add_linear(tp + "router2", d, m * config_.experts, rng);
  }
}

template <typename T>
Tensor<T>* MoEEF<T>::find(std::string_view name) {
  for (auto& p : params_)
    if (p.name == name) return &p.tensor;
  return nullptr;
}

template <typename T>
std::size_t MoEEF<T>::num_parameters() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

template <typename T>
Tensor<T> MoEEF<T>::apply(Graph<T>& g, const Linear& lin, const Tensor<T>& x) const {
  const Tensor<T> y = g.matmul(x, lin.w);
  return lin.b.defined() ? g.add_bias(y, lin.b) : y;
}

template <typename T>
int MoEEF<T>::slot_index(Modality o, int l) const {
  if (l < 0 || l >= config_.experts)
    throw std::out_of_range("expert index " + std::to_string(l) + " outside [0," +
                            std::to_string(config_.experts) + ")");
  const auto active = config_.active_modalities();
  const auto it = std::find(active.begin(), active.end(), o);
  if (it == active.end())
    throw std::invalid_argument("modality " + std::string(modality_code(o)) + " is disabled");
  return static_cast<int>(it - active.begin()) * config_.experts + l;
}

template <typename T>
Embeddings<T> MoEEF<T>::embed(Graph<T>& g, const ModelInput& input) const {
  const std::size_t n = input.size();
  if (n == 0) throw std::invalid_argument("embed: empty input");
  if (input.features.size() != n)
    throw std::invalid_argument("embed: " + std::to_string(n) + " tokens but " +
                                std::to_string(input.features.size()) + " feature vectors");
  for (std::size_t i = 0; i < n; ++i) {
    if (input.token_ids[i] < 0 || input.token_ids[i] >= config_.text_vocab)
      throw std::out_of_range("embed: token id " + std::to_string(input.token_ids[i]) +
                              " at position " + std::to_string(i) + " outside vocabulary");
    for (std::size_t j = 0; j < kFeatureCount; ++j)
      if (input.features[i][j] < 0 || input.features[i][j] >= config_.feature_vocab[j])
        throw std::out_of_range("embed: feature " + std::to_string(j) + " = " +
                                std::to_string(input.features[i][j]) + " at position " +
                                std::to_string(i) + " outside vocabulary");
  }
  Embeddings<T> e;
  e.text = g.embedding_lookup(text_emb_, input.token_ids);
  std::vector<int> col(n);
  for (std::size_t j = 0; j < kFeatureCount; ++j) {
    const bool dropped = std::find(config_.dropped_features.begin(), config_.dropped_features.end(),
                                   j) != config_.dropped_features.end();
    for (std::size_t i = 0; i < n; ++i) col[i] = dropped ? 0 : input.features[i][j];
    const Tensor<T> r = g.embedding_lookup(feat_emb_[j], col);
    e.hyper = j == 0 ? r : g.add(e.hyper, r);
  }
  e.mixed = g.add(e.text, e.hyper);
  return e;
}

template <typename T>
Tensor<T> MoEEF<T>::encode(Graph<T>& g, const Tensor<T>& x) const {
  if (x.rank() != 2 || x.dim(1) != static_cast<std::size_t>(config_.d_model))
    throw ag::ShapeError("encode: expected (n," + std::to_string(config_.d_model) + "), got " +
                         ag::shape_str(x.shape()));
  const std::size_t n = x.dim(0);
  if (n > static_cast<std::size_t>(config_.max_len))
    throw std::invalid_argument("encode: sequence length " + std::to_string(n) +
                                " exceeds max_len " + std::to_string(config_.max_len));
  std::vector<int> pos(n);
  for (std::size_t i = 0; i < n; ++i) pos[i] = static_cast<int>(i);
  Tensor<T> h = g.layer_norm(g.add(x, g.embedding_lookup(pos_emb_, pos)), emb_ln_g_, emb_ln_b_);
  const T scale = T(1) / std::sqrt(static_cast<T>(config_.d_model / config_.heads));
  for (const Layer& layer : layers_) {
    std::vector<Tensor<T>> heads;
    for (const Head& hd : layer.heads) {
      const Tensor<T> q = apply(g, hd.q, h);
      const Tensor<T> k = apply(g, hd.k, h);
      const Tensor<T> v = apply(g, hd.v, h);
      const Tensor<T> att =
          g.softmax_last_dim(g.mul_scalar(g.matmul(q, g.transpose_last_two(k)), scale));
      heads.push_back(g.matmul(att, v));
    }
    const Tensor<T> attn = apply(g, layer.out, g.concat_last_dim(heads));
    h = g.layer_norm(g.add(h, attn), layer.ln1_g, layer.ln1_b);
    const Tensor<T> ff = apply(g, layer.ff2, g.gelu(apply(g, layer.ff1, h)));
    h = g.layer_norm(g.add(h, ff), layer.ln2_g, layer.ln2_b);
  }
  return h;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> MoEEF<T>::expert_predict(Graph<T>& g, const Tensor<T>& h,
                                                         Task task, Modality o, int l) const {
  const ExpertSlot& s =
      tasks_[static_cast<std::size_t>(task)].slots[static_cast<std::size_t>(slot_index(o, l))];
  const Tensor<T> rep = apply(g, s.proj2, g.gelu(apply(g, s.proj1, h)));
  const Tensor<T> p = g.softmax_last_dim(apply(g, s.exp2, g.gelu(apply(g, s.exp1, rep))));
  return {rep, p};
}

template <typename T>
Tensor<T> MoEEF<T>::route(Graph<T>& g, const std::array<Tensor<T>, 3>& hidden, Task task) const {
  std::vector<Tensor<T>> parts;
  for (Modality o : config_.active_modalities()) {
    const Tensor<T>& h = hidden[static_cast<std::size_t>(o)];
    if (!h.defined())
      throw std::invalid_argument("route: missing hidden state for modality " +
                                  std::string(modality_code(o)));
    parts.push_back(h);
  }
  const TaskHead& th = tasks_[static_cast<std::size_t>(task)];
  const Tensor<T> x = parts.size() == 1 ? parts[0] : g.concat_last_dim(parts);
  return g.softmax_last_dim(apply(g, th.router2, g.tanh(apply(g, th.router1, x))));
}

template <typename T>
ForwardResult<T> MoEEF<T>::forward(Graph<T>& g, const ModelInput& input) const {
  ForwardResult<T> out;
  out.emb = embed(g, input);
  const auto active = config_.active_modalities();
  for (Modality o : active) {
    const Tensor<T>& x = o == Modality::Text    ? out.emb.text
                         : o == Modality::Mixed ? out.emb.mixed
                                                : out.emb.hyper;
    out.hidden[static_cast<std::size_t>(o)] = encode(g, x);
  }
  for (Task task : kAllTasks) {
    TaskOutput<T>& to = out.tasks[static_cast<std::size_t>(task)];
    for (Modality o : active)
      for (int l = 0; l < config_.experts; ++l) {
        auto [rep, p] = expert_predict(g, out.hidden[static_cast<std::size_t>(o)], task, o, l);
        to.reps.push_back(rep);
        to.probs.push_back(p);
      }
    to.alpha = route(g, out.hidden, task);
    to.final_probs = soft_vote<T>(g, to.alpha, to.probs);
  }
  return out;
}

template <typename T>
TaskLoss<T> MoEEF<T>::loss_task(Graph<T>& g, const Tensor<T>& gold, const TaskOutput<T>& out) const {
  if (gold.rank() != 2 || gold.dim(1) != 2)
    throw ag::ShapeError("loss_task: gold must be (n,2), got " + ag::shape_str(gold.shape()));
  for (std::size_t r = 0; r < gold.dim(0); ++r) {
    const T a = gold.at(2 * r);
    const T b = gold.at(2 * r + 1);
    // One-hot, possibly scaled by a positive class weight.
    if (!((a > T(0) && b == T(0)) || (a == T(0) && b > T(0))))
      throw std::invalid_argument("loss_task: gold row " + std::to_string(r) + " is not one-hot");
  }
  TaskLoss<T> tl;
  std::vector<Tensor<T>> per_expert;
  for (const auto& p : out.probs) per_expert.push_back(g.mean(g.cross_entropy_rows(gold, p)));
  Tensor<T> acc = per_expert[0];
  for (std::size_t k = 1; k < per_expert.size(); ++k) acc = g.add(acc, per_expert[k]);
  tl.experts = g.mul_scalar(acc, T(1) / static_cast<T>(per_expert.size()));
  tl.final = g.mean(g.cross_entropy_rows(gold, out.final_probs));
  tl.total = g.add(g.mul_scalar(tl.experts, static_cast<T>(config_.beta1)),
                   g.mul_scalar(tl.final, static_cast<T>(config_.beta2)));
  return tl;
}

template <typename T>
LossBreakdown<T> MoEEF<T>::loss(Graph<T>& g, const ForwardResult<T>& fwd,
                                const std::array<Tensor<T>, kTaskCount>& gold) const {
  LossBreakdown<T> lb;
  std::vector<std::pair<Task, Tensor<T>>> per_task;
  for (Task task : kAllTasks) {
    const auto q = static_cast<std::size_t>(task);
    lb.tasks[q] = loss_task(g, gold[q], fwd.tasks[q]);
    per_task.emplace_back(task, lb.tasks[q].total);
  }
  lb.total = loss_total<T>(g, per_task);
  if (config_.ortho_loss) {
    const auto m = config_.active_modalities().size();
    const auto L = static_cast<std::size_t>(config_.experts);
    Tensor<T> acc;
    for (Task task : kAllTasks) {
      const auto& reps = fwd.tasks[static_cast<std::size_t>(task)].reps;
      for (std::size_t o = 0; o < m; ++o) {
        const Tensor<T> v = ortho_loss<T>(g, std::span(reps).subspan(o * L, L));
        acc = acc.defined() ? g.add(acc, v) : v;
      }
    }
    lb.ortho = acc;
    lb.total = g.add(lb.total, g.mul_scalar(acc, static_cast<T>(config_.ortho_weight)));
  }
  return lb;
}

template <typename T>
Tensor<T> gold_matrix(std::span<const EntitySpan> spans, std::size_t n, Task task) {
  std::vector<T> v(2 * n, T(0));
  std::vector<bool> inside(n, false);
  for (const auto& s : spans) {
    if (s.task != task) continue;
    if (s.start < 0 || s.end < s.start || static_cast<std::size_t>(s.end) >= n)
      throw std::out_of_range("gold_matrix: span out of range");
    for (int i = s.start; i <= s.end; ++i) inside[static_cast<std::size_t>(i)] = true;
  }
  for (std::size_t i = 0; i < n; ++i) v[2 * i + (inside[i] ? 1 : 0)] = T(1);
  return Tensor<T>::constant({n, 2}, std::move(v));
}

template <typename T>
Tensor<T> soft_vote(Graph<T>& g, const Tensor<T>& alpha, std::span<const Tensor<T>> probs) {
  if (alpha.rank() != 2 || alpha.dim(1) != probs.size())
    throw ag::ShapeError("soft_vote: alpha " + ag::shape_str(alpha.shape()) + " does not match " +
                         std::to_string(probs.size()) + " expert predictions");
  const std::size_t n = alpha.dim(0);
  const std::size_t k = probs.size();
  for (const auto& p : probs)
    if (p.rank() != 2 || p.dim(0) != n || p.dim(1) != 2)
      throw ag::ShapeError("soft_vote: expert prediction of shape " + ag::shape_str(p.shape()) +
                           ", expected (" + std::to_string(n) + ",2)");
  const Tensor<T> stack = g.reshape(g.concat_last_dim(probs), {n, k, 2});
  const Tensor<T> a = g.reshape(alpha, {n, 1, k});
  return g.reshape(g.matmul(a, stack), {n, 2});
}

template <typename T>
Tensor<T> ortho_loss(Graph<T>& g, std::span<const Tensor<T>> reps) {
  if (reps.empty()) throw std::invalid_argument("ortho_loss: L must be >= 1");
  const std::size_t n = reps[0].dim(0);
  const std::size_t d = reps[0].dim(1);
  const std::size_t L = reps.size();
  std::vector<Tensor<T>> normed;
  for (const auto& r : reps) {
    if (r.shape() != reps[0].shape())
      throw ag::ShapeError("ortho_loss: representation shapes differ");
    normed.push_back(g.l2_normalize_last_dim(r));
  }
  const Tensor<T> s = g.reshape(L == 1 ? normed[0] : g.concat_last_dim(normed), {n, L, d});
  const Tensor<T> gram = g.matmul(s, g.transpose_last_two(s));
  std::vector<T> neg_eye(n * L * L, T(0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t l = 0; l < L; ++l) neg_eye[i * L * L + l * L + l] = T(-1);
  const Tensor<T> diff = g.add(gram, Tensor<T>::constant({n, L, L}, std::move(neg_eye)));
  return g.mean(g.frobenius_norm(diff, T(1e-16)));
}

template <typename T>
Tensor<T> loss_total(Graph<T>& g, std::span<const std::pair<Task, Tensor<T>>> losses) {
  std::array<int, kTaskCount> seen{};
  for (const auto& [task, _] : losses) ++seen[static_cast<std::size_t>(task)];
  for (Task task : kAllTasks)
    if (seen[static_cast<std::size_t>(task)] != 1)
      throw std::invalid_argument("loss_total: task " + std::string(task_name(task)) +
                                  (seen[static_cast<std::size_t>(task)] ? " given twice" : " missing"));
  Tensor<T> acc = losses[0].second;
  for (std::size_t i = 1; i < losses.size(); ++i) acc = g.add(acc, losses[i].second);
  return acc;
}

template class MoEEF<float>;
template class MoEEF<double>;
template Tensor<float> gold_matrix<float>(std::span<const EntitySpan>, std::size_t, Task);
template Tensor<double> gold_matrix<double>(std::span<const EntitySpan>, std::size_t, Task);
template Tensor<float> soft_vote<float>(Graph<float>&, const Tensor<float>&,
                                        std::span<const Tensor<float>>);
template Tensor<double> soft_vote<double>(Graph<double>&, const Tensor<double>&,
                                          std::span<const Tensor<double>>);
template Tensor<float> ortho_loss<float>(Graph<float>&, std::span<const Tensor<float>>);
template Tensor<double> ortho_loss<double>(Graph<double>&, std::span<const Tensor<double>>);
template Tensor<float> loss_total<float>(Graph<float>&,
                                         std::span<const std::pair<Task, Tensor<float>>>);
template Tensor<double> loss_total<double>(Graph<double>&,
                                           std::span<const std::pair<Task, Tensor<double>>>);

// ---- checkpoints ----

namespace {

constexpr int kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

}  // namespace

void save_checkpoint(const MoEEF<float>& model, const Vocab& vocab,
                     const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
  nlohmann::ordered_json manifest;
  manifest["format"] = "heed-moeef";
  manifest["version"] = kCheckpointVersion;
  manifest["config"] = model.config().to_json();
  manifest["vocab"] = vocab.tokens();
  nlohmann::ordered_json index = nlohmann::ordered_json::array();
  std::ofstream bin(dir / "weights.bin", std::ios::binary | std::ios::trunc);
  if (!bin) throw std::runtime_error("cannot write " + (dir / "weights.bin").string());
  std::size_t offset = 0;
  for (const auto& p : model.params()) {
    const auto data = p.tensor.data();
    bin.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(float)));
    index.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"offset", offset}});
    offset += data.size() * sizeof(float);
  }
  if (!bin) throw std::runtime_error("write failed: " + (dir / "weights.bin").string());
  manifest["tensors"] = index;
  std::ofstream js(dir / "manifest.json", std::ios::trunc);
  if (!js) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  js << manifest.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream js(manifest_path);
  if (!js) throw std::runtime_error("cannot open " + manifest_path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(manifest_path.string() + ": " + e.what());
  }
  if (!manifest.contains("version"))
    throw std::runtime_error(manifest_path.string() + ": missing version");
  if (manifest.at("version").get<int>() != kCheckpointVersion)
    throw std::runtime_error(manifest_path.string() + ": unsupported checkpoint version " +
                             manifest.at("version").dump());
  Checkpoint ck{MoEEF<float>(ModelConfig::from_json(manifest.at("config"))),
                Vocab::from_tokens(manifest.at("vocab").get<std::vector<std::string>>())};

  std::ifstream bin(dir / "weights.bin", std::ios::binary);
  if (!bin) throw std::runtime_error("cannot open " + (dir / "weights.bin").string());
  std::vector<char> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  std::size_t loaded = 0;
  for (const auto& entry : manifest.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    ag::Tensor<float>* t = ck.model.find(name);
    if (!t) throw std::runtime_error("checkpoint tensor '" + name + "' not in model");
    if (entry.at("shape").get<Shape>() != t->shape())
      throw std::runtime_error("checkpoint tensor '" + name + "' has shape " +
                               entry.at("shape").dump() + ", model expects " +
                               ag::shape_str(t->shape()));
    const auto offset = entry.at("offset").get<std::size_t>();
    const std::size_t bytes = t->size() * sizeof(float);
    if (offset + bytes > blob.size())
      throw std::runtime_error("checkpoint tensor '" + name + "' exceeds weights.bin");
    std::memcpy(t->mutable_data().data(), blob.data() + offset, bytes);
    ++loaded;
  }
  if (loaded != ck.model.params().size())
    throw std::runtime_error("checkpoint has " + std::to_string(loaded) + " tensors, model needs " +
                             std::to_string(ck.model.params().size()));
  return ck;
}

MoEEF<double> to_double(const MoEEF<float>& model) {
  MoEEF<double> out(model.config());
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    const auto src = model.params()[i].tensor.data();
    auto dst = out.params()[i].tensor.mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return out;
}

}  // namespace heed
