#include <doctest.h>

#include <cmath>
#include <limits>

#include "heed/pagegen.hpp"
#include "heed/trainer.hpp"
#include "support.hpp"

using namespace heed;

namespace {

PageRecord plain_record(std::size_t n, std::vector<EntitySpan> spans = {}) {
  PageRecord r;
  r.page_id = "p";
  r.language = "en";
  for (std::size_t i = 0; i < n; ++i) {
    r.tokens.push_back("t" + std::to_string(i));
    FeatureVector f{};
    f[fidx::kVisible] = 1;
    r.features.push_back(f);
  }
  r.spans = std::move(spans);
  return r;
}

std::vector<PageRecord> small_corpus(std::size_t n, std::uint64_t seed) {
  GenConfig gc;
  gc.seed = seed;
  gc.n_pages = n;
  gc.set_length_mean(150);
  std::vector<PageRecord> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_page(seed, i, gc).gold);
  return out;
}

ModelConfig small_model() {
  ModelConfig c;
  c.d_model = 16;
  c.heads = 2;
  c.layers = 1;
  c.ff_dim = 32;
  c.experts = 2;
  return c;
}

}  // namespace

TEST_CASE("chunk_record windows") {
  const auto chunks = chunk_record(plain_record(1100), 512);
  REQUIRE(chunks.size() == 3);
  CHECK(chunks[0].offset == 0);
  CHECK(chunks[1].offset == 512);
  CHECK(chunks[2].offset == 1024);
  CHECK(chunks[0].record.size() == 512);
  CHECK(chunks[2].record.size() == 76);

  std::vector<std::string> joined;
  for (const auto& c : chunks) joined.insert(joined.end(), c.record.tokens.begin(), c.record.tokens.end());
  CHECK(joined == plain_record(1100).tokens);
}

TEST_CASE("chunk_record clips spans at boundaries") {
  const auto chunks = chunk_record(plain_record(1100, {{Task::Name, 510, 515}}), 512);
  REQUIRE(chunks[0].spans.size() == 1);
  REQUIRE(chunks[1].spans.size() == 1);
  CHECK(chunks[2].spans.empty());
  CHECK(chunks[0].spans[0].local == EntitySpan{Task::Name, 510, 511});
  CHECK(chunks[1].spans[0].local == EntitySpan{Task::Name, 0, 3});
  CHECK(chunks[0].spans[0].split);
  CHECK(chunks[1].spans[0].split);
  CHECK(chunks[1].spans[0].original == EntitySpan{Task::Name, 510, 515});
  CHECK(chunks[1].record.spans == std::vector<EntitySpan>{{Task::Name, 0, 3}});
}

TEST_CASE("short record is a single identical chunk") {
  const PageRecord r = plain_record(40, {{Task::Price, 3, 4}, {Task::Image, 9, 9}});
  const auto chunks = chunk_record(r, 512);
  REQUIRE(chunks.size() == 1);
  CHECK(chunks[0].record == r);
  CHECK(!chunks[0].spans[0].split);
  CHECK(chunk_record(plain_record(0), 8).size() == 1);
  CHECK_THROWS_AS(chunk_record(r, 0), std::invalid_argument);
}

TEST_CASE("merge_chunk_spans rejoins spans cut by chunking") {
  const std::vector<std::vector<EntitySpan>> per_chunk = {
      {{Task::Name, 510, 511}, {Task::Price, 100, 101}},
      {{Task::Name, 0, 3}, {Task::Price, 1, 2}},
  };
  const std::vector<std::size_t> offsets = {0, 512};
  const auto merged = merge_chunk_spans(per_chunk, offsets);
  CHECK(merged == std::vector<EntitySpan>{{Task::Price, 100, 101}, {Task::Price, 513, 514},
                                          {Task::Name, 510, 515}});
  // Different tasks never merge.
  const std::vector<std::vector<EntitySpan>> other = {{{Task::Name, 6, 7}}, {{Task::Price, 0, 1}}};
  const std::vector<std::size_t> off8 = {0, 8};
  CHECK(merge_chunk_spans(other, off8).size() == 2);
}

TEST_CASE("optimizer_step with zero gradients") {
  auto w = ag::Tensor<double>::parameter({3}, {1.0, -2.0, 0.5});
  std::vector<NamedParam<double>> params = {{"w", w}};
  AdamState<double> state;
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0;
  optimizer_step<double>(params, state, cfg);
  CHECK(w.at(0) == 1.0);
  CHECK(w.at(1) == -2.0);

  cfg.weight_decay = 0.5;
  optimizer_step<double>(params, state, cfg);
  CHECK(w.at(0) == doctest::Approx(1.0 * (1 - 0.1 * 0.5)).epsilon(1e-15));
  CHECK(w.at(1) == doctest::Approx(-2.0 * (1 - 0.1 * 0.5)).epsilon(1e-15));
}

TEST_CASE("first AdamW step moves by lr in the gradient's sign") {
  // m_hat = g and v_hat = g^2 after bias correction.
  auto w = ag::Tensor<double>::parameter({2}, {0.0, 0.0});
  w.mutable_grad()[0] = 4.0;
  w.mutable_grad()[1] = -0.25;
  std::vector<NamedParam<double>> params = {{"w", w}};
  AdamState<double> state;
  AdamWConfig cfg;
  cfg.lr = 0.01;
  cfg.weight_decay = 0;
  optimizer_step<double>(params, state, cfg);
  CHECK(w.at(0) == doctest::Approx(-0.01 * 4.0 / (4.0 + 1e-8)));
  CHECK(w.at(1) == doctest::Approx(0.01 * 0.25 / (0.25 + 1e-8)));
}

TEST_CASE("AdamW minimizes a quadratic") {
  auto w = ag::Tensor<double>::parameter({1}, {0.0});
  std::vector<NamedParam<double>> params = {{"w", w}};
  AdamState<double> state;
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0;
  for (int step = 0; step < 200; ++step) {
    w.zero_grad();
    ag::Graph<double> g;
    const auto d = g.add_bias(w, ag::Tensor<double>::constant({1}, {-3.0}));
    g.backward(g.sum(g.matmul(g.reshape(d, {1, 1}), g.reshape(d, {1, 1}))));
    optimizer_step<double>(params, state, cfg);
  }
  CHECK(std::abs(w.at(0) - 3.0) < 1e-2);
}

TEST_CASE("optimizer_step rejects non-finite gradients before updating") {
  auto a = ag::Tensor<float>::parameter({1}, {1.0f});
  auto b = ag::Tensor<float>::parameter({2}, {1.0f, 2.0f});
  a.mutable_grad()[0] = 0.5f;
  b.mutable_grad()[1] = std::numeric_limits<float>::quiet_NaN();
  std::vector<NamedParam<float>> params = {{"enc.0.ff1.w", a}, {"price.router1.b", b}};
  AdamState<float> state;
  try {
    optimizer_step<float>(params, state, AdamWConfig{});
    FAIL("expected an exception");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("price.router1.b") != std::string::npos);
  }
  CHECK(a.at(0) == 1.0f);
}

TEST_CASE("train config validation and json") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.lr = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.stop_at_perfect_train = true;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);

  TrainConfig d;
  d.lr = 1e-3;
  d.seed = 99;
  d.eval_train = true;
  const TrainConfig back = TrainConfig::from_json(d.to_json());
  CHECK(back.to_json() == d.to_json());
  CHECK(TrainConfig::paper_preset().lr == 1e-5);
}

TEST_CASE("gold tensors carry the positive weight") {
  const PageRecord r = plain_record(4, {{Task::Price, 1, 2}});
  const auto gold = gold_tensors<double>(r, 3.0);
  const auto& p = gold[static_cast<std::size_t>(Task::Price)];
  CHECK(p.at(0) == 1.0);
  CHECK(p.at(3) == 3.0);
  CHECK(p.at(5) == 3.0);
  CHECK(p.at(6) == 1.0);
}

TEST_CASE("train rejects empty splits") {
  const auto pages = small_corpus(2, 3);
  CHECK_THROWS_AS(train({}, pages, small_model(), TrainConfig{}), std::invalid_argument);
  CHECK_THROWS_AS(train(pages, {}, small_model(), TrainConfig{}), std::invalid_argument);
}

TEST_CASE("train is deterministic and logs every epoch") {
  const auto pages = small_corpus(6, 11);
  const std::span<const PageRecord> tr(pages.data(), 4);
  const std::span<const PageRecord> dev(pages.data() + 4, 2);
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 2;
  tc.lr = 1e-3;
  tc.seed = 5;
  tc.max_len = 128;
  const TrainResult a = train(tr, dev, small_model(), tc);
  const TrainResult b = train(tr, dev, small_model(), tc);
  CHECK(a.batch_losses == b.batch_losses);
  CHECK(metrics_csv(a.log) == metrics_csv(b.log));
  std::size_t chunks = 0;
  for (const auto& p : tr) chunks += chunk_record(p, 128).size();
  CHECK(a.batch_losses.size() == 3 * ((chunks + 1) / 2));

  std::size_t dev_micro = 0;
  for (const auto& row : a.log) dev_micro += row.split == "dev" && row.task == "micro";
  CHECK(dev_micro == 3);
  CHECK(a.epochs_run == 3);
  CHECK(a.best_epoch >= 1);
  CHECK(metrics_csv(a.log).rfind("epoch,split,task,P,R,F1,loss\n", 0) == 0);

  tc.seed = 6;
  const TrainResult c = train(tr, dev, small_model(), tc);
  CHECK(c.batch_losses != a.batch_losses);
}

TEST_CASE("dev ties keep the earlier epoch") {
  // With a negligible learning rate every epoch scores the same on dev.
  const auto pages = small_corpus(3, 2);
  TrainConfig tc;
  tc.epochs = 2;
  tc.lr = 1e-9;
  tc.max_len = 256;
  const TrainResult r = train(std::span(pages).first(2), std::span(pages).last(1), small_model(), tc);
  REQUIRE(r.log.size() == 2 + 2 * 4);
  CHECK(r.best_epoch == 1);
}
