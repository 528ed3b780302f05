#include "heed/cli.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "heed/core.hpp"
#include "heed/evalkit.hpp"
#include "heed/extractor.hpp"
#include "heed/llm_baseline.hpp"
#include "heed/model.hpp"
#include "heed/pagegen.hpp"
#include "heed/trainer.hpp"

#ifndef HEED_VERSION
#define HEED_VERSION "0.1.0"
#endif

namespace heed::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// JSON config files. Top-level keys belong to the subcommand being run unless
// they name a global option or hold a per-subcommand object; '_' in keys maps
// to '-' in flag names.
class JsonConfig : public CLI::Config {
 public:
  JsonConfig(std::string active, std::vector<std::string> globals, std::vector<std::string> subcommands)
      : active_(std::move(active)), globals_(std::move(globals)), subcommands_(std::move(subcommands)) {}

  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw CLI::ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConfigError("config must be a JSON object");
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : j.items()) {
      const std::string name = flag_name(key);
      if (value.is_object()) {
        if (std::find(subcommands_.begin(), subcommands_.end(), name) == subcommands_.end())
          throw CLI::ConfigError("config section '" + key + "' is not a subcommand");
        for (const auto& [k, v] : value.items()) items.push_back(item({name}, k, v));
      } else if (std::find(globals_.begin(), globals_.end(), name) != globals_.end() || active_.empty()) {
        items.push_back(item({}, key, value));
      } else {
        items.push_back(item({active_}, key, value));
      }
    }
    return items;
  }

 private:
  static std::string flag_name(std::string key) {
    std::replace(key.begin(), key.end(), '_', '-');
    return key;
  }

  static std::string scalar(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number() || v.is_null()) return v.dump();
    throw CLI::ConfigError("config values must be scalars or arrays of scalars");
  }

  static CLI::ConfigItem item(std::vector<std::string> parents, const std::string& key,
                              const nlohmann::json& v) {
    CLI::ConfigItem it;
    it.parents = std::move(parents);
    it.name = flag_name(key);
    if (v.is_array())
      for (const auto& e : v) it.inputs.push_back(scalar(e));
    else
      it.inputs.push_back(scalar(v));
    return it;
  }

  std::string active_;
  std::vector<std::string> globals_;
  std::vector<std::string> subcommands_;
};

struct Globals {
  std::uint64_t seed = 42;
  std::string out;
  std::string log_level = "info";
};

// Everything one run needs: the chosen subcommand's handler and where its
// outputs (and manifest) go.
struct Command {
  CLI::App* app = nullptr;
  std::string default_out;
  // Whether --out names a file (its directory receives the manifest).
  bool out_is_file = false;
  std::function<void(const fs::path& out, RunManifest&)> run;
};

void add_model_flags(CLI::App* sub, ModelConfig& m) {
  sub->add_option("--d-model", m.d_model, "Hidden width")->check(CLI::PositiveNumber);
  sub->add_option("--layers", m.layers, "Encoder layers")->check(CLI::PositiveNumber);
  sub->add_option("--heads", m.heads, "Attention heads")->check(CLI::PositiveNumber);
  sub->add_option("--ff-dim", m.ff_dim, "Feed-forward width")->check(CLI::PositiveNumber);
  sub->add_option("--experts", m.experts, "Experts per modality (L)")->check(CLI::PositiveNumber);
  sub->add_option("--beta1", m.beta1, "Weight of the router-1 loss");
  sub->add_option("--beta2", m.beta2, "Weight of the router-2 loss");
  sub->add_option("--init-std", m.init_std, "Weight init standard deviation");
}

void add_train_flags(CLI::App* sub, TrainConfig& t) {
  sub->add_option("--lr", t.lr, "AdamW learning rate");
  sub->add_option("--weight-decay", t.weight_decay, "AdamW decoupled weight decay");
  sub->add_option("--epochs", t.epochs, "Training epochs");
  sub->add_option("--batch-size", t.batch_size, "Chunks per optimizer step");
  sub->add_option("--max-len", t.max_len, "Chunk length in tokens");
  sub->add_flag("--ortho-loss", t.ortho_loss, "Add the expert orthogonality loss");
  sub->add_option("--ortho-weight", t.ortho_weight, "Weight of the orthogonality loss");
  sub->add_option("--eval-every", t.eval_every, "Dev evaluation cadence in epochs");
  sub->add_flag("--eval-train", t.eval_train, "Also score the training split each epoch");
  sub->add_flag("--stop-at-perfect-train", t.stop_at_perfect_train,
                "Stop once training micro-F1 reaches 100");
  sub->add_option("--positive-weight", t.positive_weight, "Loss weight of entity tokens");
}

std::vector<Task> parse_tasks(const std::vector<std::string>& names) {
  if (names.empty()) return {kAllTasks.begin(), kAllTasks.end()};
  std::vector<Task> tasks;
  for (const auto& n : names) tasks.push_back(parse_task(n));
  return tasks;
}

void write_text(const fs::path& path, const std::string& text, RunManifest& m) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
  m.outputs.push_back(path.string());
}

std::string report_summary(const EvalReport& rep) {
  const Prf p = prf(rep.micro());
  return fmt::format("micro P={:.2f} R={:.2f} F1={:.2f}", p.p, p.r, p.f1);
}

json resolved_options(const CLI::App& app) {
  json j;
  for (const CLI::Option* opt : app.get_options()) {
    const std::string name = opt->get_single_name();
    if (name == "help" || name == "config") continue;
    if (opt->count() > 0) {
      const auto& r = opt->results();
      j[name] = r.size() == 1 ? json(r.front()) : json(r);
    } else {
      j[name] = opt->get_default_str();
    }
  }
  return j;
}

}  // namespace

std::string artifact_version() { return HEED_VERSION; }

json RunManifest::to_json() const {
  json j;
  j["subcommand"] = subcommand;
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  j["version"] = version;
  j["started"] = started;
  j["finished"] = finished;
  j["status"] = status;
  if (!error.empty()) j["error"] = error;
  j["config"] = config;
  j["outputs"] = outputs;
  return j;
}

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"Hypertext entity extraction: data generation, training, evaluation", "heed"};
  app.require_subcommand(1);
  app.fallthrough();
  app.option_defaults()->always_capture_default();
  app.allow_config_extras(CLI::config_extras_mode::error);

  Globals g;
  app.add_option("--seed", g.seed, "Seed for generation, initialization and data order");
  app.add_option("--out", g.out, "Output path (directory, or file for extract/eval)");
  app.add_option("--log-level", g.log_level, "Log verbosity")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));
  app.set_version_flag("--version", artifact_version());

  std::vector<Command> commands;

  // generate
  GenConfig gen;
  {
    auto* sub = app.add_subcommand("generate", "Write a synthetic train/dev/test corpus");
    sub->add_option("--pages", gen.n_pages, "Number of pages");
    sub->add_option("--length-mean", gen.length_mean, "Mean tokens per page");
    sub->add_option("--entity-bias", gen.entity_position_bias,
                    "Fraction of pages with entities in the first 200 tokens");
    sub->add_option("--viewport", gen.viewport_width, "Viewport width in px");
    commands.push_back({sub, "data", false, [&](const fs::path& out, RunManifest& m) {
                          gen.seed = g.seed;
                          gen.set_length_mean(gen.length_mean);
                          gen.validate();
                          const CorpusManifest cm = generate_corpus(gen, out);
                          spdlog::info("generated {} pages ({} train, {} dev, {} test) in {}", cm.n_pages,
                                       cm.train_ids.size(), cm.dev_ids.size(), cm.test_ids.size(), out.string());
                          if (cm.n_pages > 0)
                            for (const char* f : {"train.jsonl", "dev.jsonl", "test.jsonl", "manifest.json"})
                              m.outputs.push_back((out / f).string());
                        }});
  }

  // extract
  std::vector<std::string> extract_inputs;
  double extract_viewport = 1280;
  std::string extract_lang = "en";
  std::string extract_url;
  {
    auto* sub = app.add_subcommand("extract", "Turn HTML pages into feature records");
    sub->add_option("--input", extract_inputs, "HTML files")->required()->check(CLI::ExistingFile);
    sub->add_option("--viewport", extract_viewport, "Viewport width in px")->check(CLI::PositiveNumber);
    sub->add_option("--lang", extract_lang, "Language tag");
    sub->add_option("--url", extract_url, "Source URL (single input only)");
    commands.push_back({sub, "records.jsonl", true, [&](const fs::path& out, RunManifest& m) {
                          if (!extract_url.empty() && extract_inputs.size() != 1)
                            throw std::invalid_argument("--url needs exactly one --input");
                          std::vector<PageRecord> recs;
                          for (const auto& in : extract_inputs) {
                            std::ifstream f(in, std::ios::binary);
                            const std::string html((std::istreambuf_iterator<char>(f)), {});
                            std::optional<std::string> url;
                            if (!extract_url.empty()) url = extract_url;
                            recs.push_back(extract_record(html, extract_viewport, fs::path(in).stem().string(),
                                                          extract_lang, url));
                          }
                          if (out.has_parent_path()) fs::create_directories(out.parent_path());
                          write_records(recs, out);
                          m.outputs.push_back(out.string());
                          spdlog::info("extracted {} pages to {}", recs.size(), out.string());
                        }});
  }

  // train
  ModelConfig train_model;
  TrainConfig train_cfg;
  std::string train_data;
  {
    auto* sub = app.add_subcommand("train", "Train a MoEEF model");
    sub->add_option("--data", train_data, "Corpus directory with train.jsonl and dev.jsonl")
        ->required()
        ->check(CLI::ExistingDirectory);
    add_model_flags(sub, train_model);
    add_train_flags(sub, train_cfg);
    commands.push_back({sub, "runs/train", false, [&](const fs::path& out, RunManifest& m) {
                          train_cfg.seed = g.seed;
                          train_cfg.validate();
                          const auto tr = read_records(fs::path(train_data) / "train.jsonl");
                          const auto dev = read_records(fs::path(train_data) / "dev.jsonl");
                          spdlog::info("training on {} pages, dev {}", tr.size(), dev.size());
                          const TrainResult res =
                              train(tr, dev, train_model, train_cfg, [](const EpochSummary& s) {
                                spdlog::info("epoch {} loss {:.5f}{}", s.epoch, s.train_loss,
                                             s.dev_f1 ? fmt::format(" dev F1 {:.2f}", *s.dev_f1) : "");
                              });
                          save_checkpoint(res.model, res.vocab, out / "model");
                          m.outputs.push_back((out / "model").string());
                          write_metrics_csv(res.log, out / "metrics.csv");
                          m.outputs.push_back((out / "metrics.csv").string());
                          write_text(out / "train_config.json", train_cfg.to_json().dump(2) + "\n", m);
                          spdlog::info("best dev F1 {:.2f} at epoch {}", res.best_dev_f1, res.best_epoch);
                        }});
  }

  // eval
  std::string eval_model, eval_data, eval_granularity = "exact";
  {
    auto* sub = app.add_subcommand("eval", "Score a checkpoint on a dataset");
    sub->add_option("--model", eval_model, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
    sub->add_option("--data", eval_data, "Records (JSONL)")->required()->check(CLI::ExistingFile);
    sub->add_option("--granularity", eval_granularity, "Span matching")
        ->check(CLI::IsMember({"exact", "token"}));
    commands.push_back({sub, "report.json", true, [&](const fs::path& out, RunManifest& m) {
                          const Checkpoint ck = load_checkpoint(eval_model);
                          const auto recs = read_records(eval_data);
                          const auto gran = eval_granularity == "token" ? Granularity::Token : Granularity::ExactSpan;
                          const EvalResult res = evaluate(ck.model, ck.vocab, recs,
                                                          static_cast<std::size_t>(ck.model.config().max_len), gran);
                          json j = res.report.to_json();
                          j["mean_loss"] = res.mean_loss;
                          write_text(out, j.dump(2) + "\n", m);
                          fs::path csv = out;
                          write_text(csv.replace_extension(".csv"), res.report.to_csv(), m);
                          spdlog::info("{} pages: {}", recs.size(), report_summary(res.report));
                        }});
  }

  // ablate
  std::string ablate_axis, ablate_name, ablate_data;
  ModelConfig ablate_model;
  TrainConfig ablate_cfg;
  {
    auto* sub = app.add_subcommand("ablate", "Retrain with one feature, modality or expert change");
    sub->add_option("--axis", ablate_axis, "features | modality | experts")->required();
    sub->add_option("--name", ablate_name, "Feature category, modality (t|m|v) or expert count")->required();
    sub->add_option("--data", ablate_data, "Corpus directory with train/dev/test JSONL")
        ->required()
        ->check(CLI::ExistingDirectory);
    add_model_flags(sub, ablate_model);
    add_train_flags(sub, ablate_cfg);
    commands.push_back({sub, "runs/ablate", false, [&](const fs::path& out, RunManifest& m) {
                          const AblationSpec spec = parse_ablation(ablate_axis, ablate_name);
                          ablate_cfg.seed = g.seed;
                          ablate_cfg.validate();
                          const fs::path d(ablate_data);
                          const auto tr = read_records(d / "train.jsonl");
                          const auto dev = read_records(d / "dev.jsonl");
                          const auto test = read_records(d / "test.jsonl");
                          const AblationReport rep = run_ablation(spec, tr, dev, test, ablate_model, ablate_cfg);
                          write_text(out / "ablation.json", rep.to_json().dump(2) + "\n", m);
                          write_text(out / "baseline.csv", rep.baseline.to_csv(), m);
                          write_text(out / "variant.csv", rep.variant.to_csv(), m);
                          spdlog::info("baseline {}; variant {}", report_summary(rep.baseline),
                                       report_summary(rep.variant));
                        }});
  }

  // analyze-router
  std::string router_model, router_data;
  std::vector<std::string> router_tasks;
  {
    auto* sub = app.add_subcommand("analyze-router", "Mean router weights per language");
    sub->add_option("--model", router_model, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
    sub->add_option("--data", router_data, "Records (JSONL)")->required()->check(CLI::ExistingFile);
    sub->add_option("--task", router_tasks, "Tasks (default: all)");
    commands.push_back({sub, "runs/router", false, [&](const fs::path& out, RunManifest& m) {
                          const auto tasks = parse_tasks(router_tasks);
                          const Checkpoint ck = load_checkpoint(router_model);
                          const auto recs = read_records(router_data);
                          json j;
                          for (Task t : tasks) {
                            const RouterProfile prof = router_profile(ck.model, ck.vocab, recs, t,
                                                                      static_cast<std::size_t>(ck.model.config().max_len));
                            json tj;
                            tj["labels"] = prof.labels;
                            tj["tokens"] = prof.tokens;
                            tj["by_language"] = prof.by_language;
                            j[std::string(task_name(t))] = tj;
                            write_text(out / ("router_" + std::string(task_name(t)) + ".csv"), prof.to_csv(), m);
                          }
                          write_text(out / "router.json", j.dump(2) + "\n", m);
                        }});
  }

  // export-reprs
  std::string reprs_model, reprs_data, reprs_task = "price";
  {
    auto* sub = app.add_subcommand("export-reprs", "Dump expert representations and their 2-D PCA");
    sub->add_option("--model", reprs_model, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
    sub->add_option("--data", reprs_data, "Records (JSONL)")->required()->check(CLI::ExistingFile);
    sub->add_option("--task", reprs_task, "Task");
    commands.push_back({sub, "runs/reprs", false, [&](const fs::path& out, RunManifest& m) {
                          const Task task = parse_task(reprs_task);
                          const Checkpoint ck = load_checkpoint(reprs_model);
                          const auto recs = read_records(reprs_data);
                          const RepresentationSet reps = export_representations(
                              ck.model, ck.vocab, recs, task, static_cast<std::size_t>(ck.model.config().max_len));
                          write_representations(reps, out);
                          m.outputs.push_back((out / "representations.csv").string());
                          m.outputs.push_back((out / "pca.csv").string());
                          spdlog::info("exported {} rows", reps.rows.size());
                        }});
  }

  // llm-baseline
  std::string llm_data, llm_mock, llm_model = "gpt-3.5-turbo";
  std::vector<std::string> llm_tasks;
  bool llm_hypertext = false;
  int llm_in_flight = 4;
  double llm_timeout = 60;
  {
    auto* sub = app.add_subcommand("llm-baseline", "Zero-shot completion-model baseline");
    sub->add_option("--data", llm_data, "Records (JSONL)")->required()->check(CLI::ExistingFile);
    sub->add_option("--task", llm_tasks, "Tasks (default: all)");
    sub->add_flag("--hypertext", llm_hypertext, "Include per-token feature vectors in the prompt");
    sub->add_flag("--mock{oracle}", llm_mock, "Offline client: oracle (gold answers) or empty")
        ->check(CLI::IsMember({"oracle", "empty"}));
    sub->add_option("--model-name", llm_model, "Model name sent to the endpoint");
    sub->add_option("--max-in-flight", llm_in_flight, "Concurrent requests")->check(CLI::PositiveNumber);
    sub->add_option("--timeout", llm_timeout, "Request timeout in seconds")->check(CLI::PositiveNumber);
    commands.push_back({sub, "runs/llm", false, [&](const fs::path& out, RunManifest& m) {
                          const auto tasks = parse_tasks(llm_tasks);
                          const auto recs = read_records(llm_data);
                          std::unique_ptr<llm::CompletionClient> client;
                          if (llm_mock == "oracle") {
                            client = std::make_unique<llm::MockClient>(llm::make_oracle_client(recs, tasks, llm_hypertext));
                          } else if (llm_mock == "empty") {
                            client = std::make_unique<llm::MockClient>(llm::make_empty_client());
                          } else {
                            auto cfg = llm::HttpClientConfig::from_env();
                            cfg.model = llm_model;
                            cfg.max_in_flight = llm_in_flight;
                            cfg.timeout = std::chrono::milliseconds(static_cast<long>(llm_timeout * 1000));
                            client = std::make_unique<llm::HttpCompletionClient>(cfg);
                          }
                          fs::create_directories(out);
                          const auto res = llm::run_baseline(recs, *client, tasks, llm_hypertext, out / "transcript.jsonl");
                          m.outputs.push_back((out / "transcript.jsonl").string());
                          json j = res.report.to_json();
                          j["requests"] = res.requests;
                          j["failed_requests"] = res.failed_requests;
                          j["unparsable"] = res.unparsable;
                          j["dropped_pairs"] = res.dropped_pairs;
                          j["out_of_range"] = res.out_of_range;
                          write_text(out / "report.json", j.dump(2) + "\n", m);
                          write_text(out / "report.csv", res.report.to_csv(), m);
                          spdlog::info("{} requests ({} failed): {}", res.requests, res.failed_requests,
                                       report_summary(res.report));
                          if (res.report.incomplete) throw std::runtime_error("incomplete: some requests failed");
                        }});
  }

  // validate
  std::string validate_data;
  {
    auto* sub = app.add_subcommand("validate", "Check a records file against the format invariants");
    sub->add_option("--data", validate_data, "Records (JSONL)")->required()->check(CLI::ExistingFile);
    commands.push_back({sub, "runs/validate", false, [&](const fs::path&, RunManifest&) {
                          // read_records checks every record and names the first bad line.
                          const auto recs = read_records(validate_data);
                          std::size_t tokens = 0, spans = 0;
                          for (const auto& r : recs) {
                            tokens += r.size();
                            spans += r.spans.size();
                          }
                          std::cout << validate_data << ": " << recs.size() << " records, " << tokens
                                    << " tokens, " << spans << " spans, valid\n";
                        }});
  }

  // The config formatter needs to know which subcommand owns flat keys.
  std::string active;
  std::vector<std::string> sub_names;
  for (const auto& c : commands) sub_names.push_back(c.app->get_name());
  for (const auto& a : args)
    if (std::find(sub_names.begin(), sub_names.end(), a) != sub_names.end()) {
      active = a;
      break;
    }
  app.config_formatter(std::make_shared<JsonConfig>(active, std::vector<std::string>{"seed", "out", "log-level"},
                                                    sub_names));
  app.set_config("--config", "", "JSON config file; flags override its values");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  spdlog::set_level(spdlog::level::from_str(g.log_level));
  const Command* cmd = nullptr;
  for (const auto& c : commands)
    if (c.app->parsed()) cmd = &c;

  RunManifest m;
  m.subcommand = cmd->app->get_name();
  m.seed = g.seed;
  m.version = artifact_version();
  m.started = utc_now();
  m.config = resolved_options(*cmd->app);
  m.config["seed"] = g.seed;
  m.config_hash = fnv1a_hex(m.config.dump());

  const fs::path out = g.out.empty() ? fs::path(cmd->default_out) : fs::path(g.out);
  fs::path manifest_dir = cmd->out_is_file ? out.parent_path() : out;
  if (manifest_dir.empty()) manifest_dir = ".";
  const fs::path manifest_path =
      cmd->out_is_file ? manifest_dir / (out.filename().string() + ".run_manifest.json") : manifest_dir / "run_manifest.json";

  int code = kOk;
  try {
    cmd->run(out, m);
    m.status = "ok";
  } catch (const std::invalid_argument& e) {
    spdlog::error("{}", e.what());
    std::cerr << "Run with --help for more information.\n";
    return kUsage;
  } catch (const std::exception& e) {
    spdlog::error("{} failed: {}", m.subcommand, e.what());
    m.status = "failed";
    m.error = e.what();
    code = kFailure;
  }
  m.finished = utc_now();
  try {
    fs::create_directories(manifest_dir);
    std::ofstream f(manifest_path, std::ios::trunc);
    f << m.to_json().dump(2) << '\n';
    if (!f) throw std::runtime_error("cannot write " + manifest_path.string());
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kFailure;
  }
  return code;
}

int dispatch(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return dispatch(args);
}

}  // namespace heed::cli
