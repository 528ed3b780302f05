// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "../paper_tables.hpp"
#include "../support.hpp"
#include "heed/cli.hpp"
#include "heed/evalkit.hpp"
#include "heed/extractor.hpp"
#include "heed/llm_baseline.hpp"
#include "heed/model.hpp"
#include "heed/pagegen.hpp"
#include "heed/trainer.hpp"

using namespace heed;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt2(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 1. Table 3 from the Table 1 (P, R) pairs.
Outcome metric_arithmetic() {
  Outcome o{true, ""};
  for (const auto& [method, expected] : testing::kAbsDiffMeans) {
    std::vector<std::pair<double, double>> pairs;
    for (const auto& row : testing::kMainResults)
      if (row.method == method)
        for (std::size_t l = 0; l < 6; ++l) pairs.emplace_back(row.cells[3 * l], row.cells[3 * l + 1]);
    const double got = mean_abs_pr_diff(pairs);
    o.pass = o.pass && pairs.size() == 18 && std::abs(got - expected) <= 0.01;
    o.detail += std::string(method) + " " + fmt2(got) + " (published " + fmt2(expected) + ") ";
  }
  return o;
}

// 2. Printed F1 against 2PR/(P+R), every Table 1 cell.
Outcome f1_consistency() {
  std::size_t cells = 0, ok = 0;
  double worst = 0;
  for (const auto& row : testing::kMainResults)
    for (std::size_t l = 0; l < 6; ++l) {
      const double diff = std::abs(f1_score(row.cells[3 * l], row.cells[3 * l + 1]) - row.cells[3 * l + 2]);
      worst = std::max(worst, diff);
      ++cells;
      ok += diff <= 0.01;
    }
  const bool example = round2(f1_score(91.34, 97.07)) == 94.12;
  return {ok == cells && cells >= 5 && example,
          std::to_string(ok) + "/" + std::to_string(cells) + " cells within 0.01, worst " + fmt2(worst) +
              "; (91.34, 97.07) -> " + fmt2(f1_score(91.34, 97.07))};
}

// 3. Finite differences on the full model, with and without L_ort.
Outcome gradient_check() {
  Outcome o{true, ""};
  for (bool ortho : {false, true}) {
    ModelConfig c = testing::tiny_config(2, 1);
    c.ortho_loss = ortho;
    c.ortho_weight = 0.5;
    MoEEF<double> model(c);
    Rng rng(ortho ? 51 : 50);
    const ModelInput in = testing::random_input(rng, 6, c);
    const auto spans = testing::random_spans(rng, 6);
    const auto rep = ag::finite_diff_check(testing::model_loss(model, in, spans), testing::model_probes(model, in),
                                           1e-4, 1e-4, ag::Stencil::FivePoint);
    o.pass = o.pass && rep.max_rel_err <= 1e-4 && rep.entries.size() > 40;
    char buf[128];
    std::snprintf(buf, sizeof buf, "%s: %zu tensors, max rel err %.2e; ", ortho ? "with L_ort" : "without L_ort",
                  rep.entries.size(), rep.max_rel_err);
    o.detail += buf;
  }
  return o;
}

// 4. Router rows and final rows are distributions; a one-hot router
// reproduces the chosen expert.
Outcome moe_algebra() {
  const ModelConfig c = testing::tiny_config(2, 1);
  const MoEEF<double> model(c);
  Rng rng(404);
  double worst_sum = 0;
  bool onehot_exact = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(1, 12));
    const ModelInput in = testing::random_input(rng, n, c);
    ag::Graph<double> g;
    const auto fwd = model.forward(g, in);
    for (const auto& out : fwd.tasks) {
      for (const auto* t : {&out.alpha, &out.final_probs}) {
        const std::size_t k = t->shape().back();
        for (std::size_t r = 0; r < n; ++r) {
          double s = 0;
          for (std::size_t j = 0; j < k; ++j) s += t->at(r * k + j);
          worst_sum = std::max(worst_sum, std::abs(s - 1));
        }
      }
      const auto K = out.probs.size();
      const auto pick = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(K) - 1));
      std::vector<double> onehot(n * K, 0.0);
      for (std::size_t r = 0; r < n; ++r) onehot[r * K + pick] = 1.0;
      const auto alpha = ag::Tensor<double>::constant({n, K}, onehot);
      const auto pf = soft_vote<double>(g, alpha, out.probs);
      for (std::size_t i = 0; i < n * 2; ++i) onehot_exact = onehot_exact && pf.at(i) == out.probs[pick].at(i);
    }
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "1000 inputs x 3 tasks: max |row sum - 1| %.1e; one-hot vote exact: %s", worst_sum,
                onehot_exact ? "yes" : "no");
  return {worst_sum <= 1e-6 && onehot_exact, buf};
}

// 5. ortho_loss closed forms.
Outcome ortho_closed_forms() {
  using TD = ag::Tensor<double>;
  ag::Graph<double> g;
  // Orthonormal stack: rows are unit and mutually orthogonal per token.
  const TD a = TD::constant({2, 3}, {1, 0, 0, 0, 0, 1});
  const TD b = TD::constant({2, 3}, {0, 1, 0, 1, 0, 0});
  const TD ortho[] = {a, b};
  const double zero = ortho_loss<double>(g, ortho).item();
  // L=2 identical unit vectors per token: ||[[1,1],[1,1]] - I||_F = sqrt(2)
  // per token; the loss is the mean over tokens.
  const TD u = TD::constant({2, 3}, {0.6, 0.8, 0, 0, 0, 1});
  const TD same[] = {u, u};
  const double root2 = ortho_loss<double>(g, same).item();
  char buf[128];
  std::snprintf(buf, sizeof buf, "orthonormal %.1e, identical %.9f (sqrt 2 = %.9f)", zero, root2, std::sqrt(2.0));
  return {zero <= 1e-6 && std::abs(root2 - std::sqrt(2.0)) <= 1e-6, buf};
}

// 6. Generator pages survive extraction byte-exactly.
Outcome round_trip() {
  GenConfig cfg;
  std::size_t ok = 0;
  std::string first_bad;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto page = generate_page(seed, 0, cfg);
    PageRecord got = extract_record(page.html, cfg.viewport_width, page.gold.page_id, page.gold.language,
                                    page.gold.source_url);
    got.spans = page.gold.spans;  // annotation comes from the generator
    if (serialize_record(got) == serialize_record(page.gold))
      ++ok;
    else if (first_bad.empty())
      first_bad = " first mismatch at seed " + std::to_string(seed);
  }
  return {ok == 1000, std::to_string(ok) + "/1000 seeds identical" + first_bad};
}

// 7. decode_spans against brute-force run finding.
Outcome decoder_oracle() {
  constexpr int n = 12;
  std::size_t agree = 0;
  for (unsigned mask = 0; mask < (1U << n); ++mask) {
    std::vector<double> p;
    for (int i = 0; i < n; ++i) {
      const bool on = (mask >> i) & 1U;
      p.push_back(on ? 0.2 : 0.8);
      p.push_back(on ? 0.8 : 0.2);
    }
    std::vector<EntitySpan> want;
    const auto bit = [&](int i) { return i >= 0 && i < n && ((mask >> i) & 1U); };
    for (int s = 0; s < n; ++s) {
      if (!bit(s) || bit(s - 1)) continue;
      int e = s;
      while (bit(e + 1)) ++e;
      want.push_back({Task::Name, s, e});
    }
    agree += decode_spans<double>(p, Task::Name) == want;
  }
  return {agree == 4096, std::to_string(agree) + "/4096 masks agree"};
}

// 8. Learnability on synthetic pages.
ModelConfig learn_model() {
  ModelConfig c;
  c.d_model = 64;
  c.layers = 2;
  c.heads = 4;
  c.ff_dim = 128;
  c.experts = 2;
  c.init_std = 0.02;
  return c;
}

TrainConfig learn_train() {
  TrainConfig t;
  t.lr = 1e-3;
  t.batch_size = 8;
  t.seed = 1;
  t.max_len = 512;
  return t;
}

constexpr double kLearnLengthMean = 175;
constexpr int kFullEpochs = 5;

Outcome learnability() {
  const auto t0 = Clock::now();
  GenConfig gc;
  gc.set_length_mean(kLearnLengthMean);

  // (a) memorize 64 pages.
  gc.seed = 8;
  gc.n_pages = 80;
  const CorpusSplits small = generate_splits(gc);
  TrainConfig ta = learn_train();
  ta.epochs = 200;
  ta.eval_train = true;
  ta.stop_at_perfect_train = true;
  ta.eval_every = 200;
  double train_f1 = 0;
  int reached = 0;
  const TrainResult ra = train(small.train, small.dev, learn_model(), ta, [&](const EpochSummary& s) {
    if (s.train_f1) train_f1 = *s.train_f1;
    if (s.train_f1 && *s.train_f1 >= 100 && reached == 0) reached = s.epoch;
  });
  const double ta_secs = seconds_since(t0);
  spdlog::info("learnability (a): train F1 {:.2f}, {} epochs, {:.0f}s", train_f1, ra.epochs_run, ta_secs);

  // (b) 800 train / 100 dev / 100 test.
  gc.seed = 42;
  gc.n_pages = 1000;
  const CorpusSplits full = generate_splits(gc);
  TrainConfig tb = learn_train();
  tb.epochs = kFullEpochs;
  const TrainResult rb = train(full.train, full.dev, learn_model(), tb, [&](const EpochSummary& s) {
    spdlog::info("learnability (b): epoch {} loss {:.5f} dev F1 {:.2f}", s.epoch, s.train_loss, s.dev_f1.value_or(-1));
  });
  const EvalResult test = evaluate(rb.model, rb.vocab, full.test, static_cast<std::size_t>(tb.max_len));
  const double test_f1 = prf(test.report.micro()).f1;
  const double secs = seconds_since(t0);

  char buf[256];
  std::snprintf(buf, sizeof buf,
                "64 pages: train F1 %.2f at epoch %d (limit 200); %zu/%zu/%zu pages: test F1 %.2f "
                "(best dev epoch %d of %d); %.0fs of 1200s",
                train_f1, reached, full.train.size(), full.dev.size(), full.test.size(), test_f1, rb.best_epoch,
                rb.epochs_run, secs);
  return {reached > 0 && reached <= 200 && test_f1 >= 90 && full.train.size() == 800 && full.test.size() == 100 &&
              secs < 1200,
          buf};
}

// 9. Ablation plumbing.
Outcome ablation_plumbing() {
  ModelConfig base = testing::tiny_config(6, 1);
  const ModelConfig font = apply_ablation(base, parse_ablation("features", "font-style"));
  bool font_ok = font.dropped_features == std::vector<std::size_t>{0, 1, 2, 3, 4, 5};
  // Changing any font-style input leaves the hypertext embedding unchanged.
  {
    const MoEEF<double> model(font);
    Rng rng(9);
    ModelInput in = testing::random_input(rng, 5, font);
    ag::Graph<double> g;
    const auto hyper = [&](const ModelInput& x) {
      const auto v = model.embed(g, x).hyper.data();
      return std::vector<double>(v.begin(), v.end());
    };
    const auto before = hyper(in);
    for (auto& f : in.features)
      for (std::size_t j = 0; j < 6; ++j) f[j] = (f[j] + 7) % 10;
    font_ok = font_ok && hyper(in) == before;
    ModelInput other = in;
    for (auto& f : other.features) f[6] = (f[6] + 3) % 10;
    font_ok = font_ok && hyper(other) != before;
  }

  const ModelConfig no_m = apply_ablation(base, parse_ablation("modality", "m"));
  const MoEEF<double> nm(no_m);
  ag::Graph<double> g;
  Rng rng(10);
  const auto fwd = nm.forward(g, testing::random_input(rng, 4, no_m));
  const bool width_ok = fwd.tasks[0].alpha.shape().back() == static_cast<std::size_t>(2 * no_m.experts);

  // Per slot: projector (2 dense d->d) + expert (d->d/2->2); per router
  // column block: one d+1 column per added expert.
  const std::size_t d = static_cast<std::size_t>(base.d_model);
  const std::size_t slot = 2 * (d * d + d) + (d * (d / 2) + d / 2 + (d / 2) * 2 + 2);
  bool counts_ok = true;
  std::string counts;
  std::size_t prev = 0;
  for (int e : {1, 3, 6, 9}) {
    const ModelConfig c = apply_ablation(base, parse_ablation("experts", std::to_string(e)));
    const std::size_t built = MoEEF<float>(c).num_parameters();
    counts_ok = counts_ok && built == param_count(c);
    if (prev != 0) {
      const int de = e - (e == 3 ? 1 : e == 6 ? 3 : 6);
      counts_ok = counts_ok && built - prev == 3 * static_cast<std::size_t>(de) * (3 * slot + (d + 1) * 3);
    }
    prev = built;
    counts += std::to_string(e) + ":" + std::to_string(built) + " ";
  }
  return {font_ok && width_ok && counts_ok,
          std::string("font-style drops 0-5: ") + (font_ok ? "yes" : "no") + "; no-m router width " +
              std::to_string(fwd.tasks[0].alpha.shape().back()) + " (2L=" + std::to_string(2 * no_m.experts) +
              "); params " + counts};
}

// 10. Two identical CLI training runs.
Outcome determinism() {
  const fs::path dir = testing::temp_dir("acceptance_det");
  const auto data = (dir / "data").string();
  if (cli::dispatch({"generate", "--seed", "3", "--pages", "20", "--length-mean", "150", "--out", data,
                     "--log-level", "warn"}) != 0)
    return {false, "generate failed"};
  const std::vector<std::string> common = {"train",    "--data",    data,      "--seed",     "5",    "--epochs",
                                           "3",        "--d-model", "16",      "--layers",   "1",    "--heads",
                                           "2",        "--ff-dim",  "32",      "--experts",  "2",    "--max-len",
                                           "128",      "--lr",      "0.001",   "--log-level", "warn"};
  for (const char* run : {"r1", "r2"}) {
    auto args = common;
    args.push_back("--out");
    args.push_back((dir / run).string());
    if (cli::dispatch(args) != 0) return {false, std::string("train ") + run + " failed"};
  }
  const std::string m1 = slurp(dir / "r1" / "metrics.csv");
  const std::string m2 = slurp(dir / "r2" / "metrics.csv");
  const bool logs = !m1.empty() && m1 == m2;
  const bool weights = slurp(dir / "r1" / "model" / "weights.bin") == slurp(dir / "r2" / "model" / "weights.bin");
  const auto lines = std::count(m1.begin(), m1.end(), '\n');
  return {logs && weights, std::to_string(lines) + "-line metrics logs identical: " + (logs ? "yes" : "no") +
                               "; checkpoints identical: " + (weights ? "yes" : "no")};
}

// 11. LLM baseline with mock clients.
Outcome llm_baseline() {
  GenConfig gc;
  gc.seed = 11;
  gc.n_pages = 20;
  gc.set_length_mean(400);
  std::vector<PageRecord> recs;
  for (std::size_t i = 0; i < gc.n_pages; ++i) recs.push_back(generate_page(gc.seed, i, gc).gold);
  const std::vector<Task> tasks(kAllTasks.begin(), kAllTasks.end());
  const fs::path dir = testing::temp_dir("acceptance_llm");
  bool ok = true;
  std::string detail;
  for (bool hyper : {false, true}) {
    std::size_t chunks = 0;
    for (const auto& r : recs) chunks += chunk_record(r, llm::chunk_size(hyper)).size();
    const std::size_t expected = chunks * tasks.size();

    auto oracle = llm::make_oracle_client(recs, tasks, hyper);
    const auto good = llm::run_baseline(recs, oracle, tasks, hyper, dir / "oracle.jsonl");
    const Prf g = prf(good.report.micro());
    auto empty = llm::make_empty_client();
    const auto bad = llm::run_baseline(recs, empty, tasks, hyper, dir / "empty.jsonl");
    const Prf b = prf(bad.report.micro());

    std::size_t complete = 0;
    for (const char* f : {"oracle.jsonl", "empty.jsonl"}) {
      std::ifstream in(dir / f);
      for (std::string line; std::getline(in, line);) complete += line.find("\"completion\"") != std::string::npos;
    }
    ok = ok && g.p == 100 && g.r == 100 && g.f1 == 100 && b.r == 0 && good.requests == expected &&
         complete == 2 * expected && !good.report.incomplete && !bad.report.incomplete;
    detail += std::string(hyper ? "hypertext" : "text") + ": oracle P/R/F1 " + fmt2(g.p) + "/" + fmt2(g.r) + "/" +
              fmt2(g.f1) + ", empty R " + fmt2(b.r) + ", " + std::to_string(complete) + "/" +
              std::to_string(2 * expected) + " transcript lines; ";
  }
  return {ok, detail};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
  double limit_secs;  // 0 = none
};

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  if (const char* lvl = std::getenv("HEED_LOG_LEVEL")) spdlog::set_level(spdlog::level::from_str(lvl));
  const std::vector<Criterion> criteria = {
      {1, "metric arithmetic (Table 3)", metric_arithmetic, 1},
      {2, "F1 consistency (Table 1)", f1_consistency, 0},
      {3, "full-model gradient check", gradient_check, 60},
      {4, "MoE algebra", moe_algebra, 0},
      {5, "orthogonality closed forms", ortho_closed_forms, 0},
      {6, "extractor/generator round trip", round_trip, 120},
      {7, "span decoder oracle", decoder_oracle, 0},
      {8, "learnability", learnability, 1200},
      {9, "ablation plumbing", ablation_plumbing, 0},
      {10, "determinism", determinism, 0},
      {11, "LLM baseline mocks", llm_baseline, 0},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = seconds_since(t0);
    const bool in_time = c.limit_secs == 0 || secs < c.limit_secs;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::printf("[%s] %2d %s: %s (%.2fs%s)\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs,
                in_time ? "" : ", over time limit");
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
