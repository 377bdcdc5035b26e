// SPDX-License-Identifier: Apache-2.0
#include "bcu/commands.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include "bcu/eval.hpp"
#include "bcu/model_io.hpp"

namespace bcu {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::ostream& out_of(const CommandContext& ctx) { return ctx.out ? *ctx.out : std::cout; }
std::ostream& err_of(const CommandContext& ctx) { return ctx.err ? *ctx.err : std::cerr; }

void write_json(const fs::path& path, const json& j) {
  const std::string text = j.dump(2) + "\n";
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

void write_text(const fs::path& path, const std::string& text) {
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

/// Creates config.out and refuses to clobber `primary` unless forced.
fs::path prepare_out(const RunConfig& c, const CommandContext& ctx, const std::string& primary) {
  if (c.out.empty()) throw ConfigError("config.out: an output directory is required (--out)");
  const fs::path target = c.out / primary;
  if (fs::exists(target) && !ctx.force) {
    throw ConfigError("refusing to overwrite existing '" + target.string() + "' (pass --force)");
  }
  std::error_code ec;
  fs::create_directories(c.out, ec);
  if (ec) throw ConfigError("cannot create output directory '" + c.out.string() + "': " + ec.message());
  return target;
}

json manifest_base(const std::string& command, const RunConfig& c) {
  return {{"command", command}, {"config", to_json(c)}};
}

Network<float> load_required_model(const fs::path& path, const std::string& field) {
  if (path.empty()) throw ConfigError("config." + field + ": a model path is required (--" + field + ")");
  if (!fs::exists(path)) throw ConfigError("config." + field + ": no such file '" + path.string() + "'");
  return load_model(path);
}

/// Train split, held-out labeled test split and unlabeled defense split.
struct Workspace {
  Architecture arch;
  DatasetManifest manifest;
  Dataset test_full;
  DefenseTestSplit split;
  std::optional<Dataset> asr;

  Dataset train() const { return manifest.load_train(); }
};

Workspace load_workspace(const RunConfig& c, const Architecture& arch) {
  if (c.dataset.empty()) throw ConfigError("config.dataset: a dataset manifest is required");
  Workspace w{arch, DatasetManifest::load(c.dataset), {}, {}, std::nullopt};
  w.test_full = w.manifest.load_test();
  if (w.test_full.sample_shape() != arch.input_shape) {
    throw ConfigError("dataset '" + w.manifest.name + "' has samples " + shape_string(w.test_full.sample_shape()) +
                      " but architecture expects " + shape_string(arch.input_shape));
  }
  if (w.test_full.num_classes != arch.num_classes) {
    throw ConfigError("dataset has " + std::to_string(w.test_full.num_classes) + " classes, architecture " +
                      std::to_string(arch.num_classes));
  }
  w.split = split_defense_test(w.test_full, c.split);
  if (c.poison) {
    c.poison->validate(w.test_full.num_classes);
    w.asr = build_asr_set(w.split.test, *c.poison);
  }
  return w;
}

/// Unlabeled defense data: the held-out defense split, or a subset of another
/// (out-of-distribution) dataset resized to the model input.
Dataset unlabeled_pool(const RunConfig& c, const Workspace& w) {
  if (!c.ood()) {
    Dataset pool = w.split.defense;
    if (c.unlabeled_size && *c.unlabeled_size != pool.size()) {
      pool = random_subset(pool, *c.unlabeled_size, c.seed, "defense-subset");
    }
    return pool;
  }
  const DatasetManifest m = DatasetManifest::load(c.unlabeled);
  Dataset source = m.test ? m.load_test() : m.load_train();
  source = fit_to_shape(source, w.arch.input_shape);
  const Index count = c.unlabeled_size ? *c.unlabeled_size
                      : c.split.defense_size > 0 ? std::min<Index>(c.split.defense_size, source.size())
                                                 : source.size();
  Dataset pool = random_subset(source, count, c.seed, "defense-subset").without_labels();
  pool.normalization = w.test_full.normalization;
  pool.num_classes = w.arch.num_classes;
  pool.name = m.name + "/ood";
  return pool;
}

json data_tags(const RunConfig& c, const Dataset& pool) {
  return {{"defense_data", c.ood() ? "ood" : "in_distribution"},
          {"defense_set", pool.name},
          {"defense_size", pool.size()}};
}

Metrics measure(const Network<float>& model, const Workspace& w, json provenance) {
  Metrics m = evaluate(model, w.split.test, w.asr ? &*w.asr : nullptr);
  m.provenance = std::move(provenance);
  return m;
}

std::string metrics_line(const Metrics& m) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "ACC %s  ASR %s", m.acc ? std::to_string(*m.acc).c_str() : "n/a",
                m.asr ? std::to_string(*m.asr).c_str() : "n/a");
  return buf;
}

void train_command(const RunConfig& c, const CommandContext& ctx, bool backdoor) {
  const std::string command = backdoor ? "train-backdoor" : "train-clean";
  const fs::path model_path = prepare_out(c, ctx, "model.bcum");
  const Architecture arch = parse_architecture(c.architecture);
  const Workspace w = load_workspace(c, arch);
  Dataset train = w.train();
  train.validate();

  json manifest = manifest_base(command, c);
  Network<float> net(arch);
  TrainHistory history;
  if (backdoor) {
    if (!c.poison) throw ConfigError("config.poison: a poisoning plan is required for train-backdoor");
    if (c.poison->rate == 0.0) err_of(ctx) << "warning: poison rate is 0, the model will be trained clean\n";
    const PoisonResult poisoned = poison_training_set(train, *c.poison);
    net = train_backdoor_model(arch, poisoned, *c.poison, c.train, &history);
    write_json(c.out / "poison_audit.json", {{"plan", to_json(*c.poison)},
                                             {"plan_hash", c.poison->hash()},
                                             {"poisoned_count", poisoned.indices.size()},
                                             {"indices", poisoned.indices}});
  } else {
    net = make_initialized(arch, c.seed);
    history = train_supervised(net, train, c.train, command);
    net.metadata()["provenance"] = {{"kind", "clean"}, {"seed", c.seed}, {"epoch_loss", history.epoch_loss}};
  }
  save_model(net, model_path);
  const Metrics m = measure(net, w, {{"command", command}, {"seed", c.seed}});
  write_json(c.out / "metrics.json", m.to_json());
  manifest["epoch_loss"] = history.epoch_loss;
  manifest["model_hash"] = model_hash(net);
  manifest["metrics"] = m.to_json();
  write_json(c.out / "manifest.json", manifest);
  out_of(ctx) << command << ": " << metrics_line(m) << " -> " << model_path.string() << "\n";
}

struct AblationJob {
  json value;
  std::uint64_t seed = 0;
};

struct AblationOutcome {
  Metrics metrics;
  std::vector<double> ratios;
};

}  // namespace

void cmd_train_clean(const RunConfig& config, const CommandContext& ctx) { train_command(config, ctx, false); }

void cmd_train_backdoor(const RunConfig& config, const CommandContext& ctx) { train_command(config, ctx, true); }

void cmd_cleanse(const RunConfig& c, const CommandContext& ctx) {
  const fs::path model_path = prepare_out(c, ctx, "model.bcum");
  const Network<float> teacher = load_required_model(c.teacher, "teacher");
  const Workspace w = load_workspace(c, teacher.architecture());
  const Dataset pool = unlabeled_pool(c, w);

  CleanseResult result = cleanse(teacher, pool, c.cleanse);
  const json tags = data_tags(c, pool);
  result.model.metadata()["provenance"] = {{"kind", "cleansed"},
                                           {"teacher_hash", model_hash(teacher)},
                                           {"schedule", to_json(result.schedule)},
                                           {"defense", to_json(c.cleanse.defense)},
                                           {"label_mode", to_string(c.cleanse.label_mode)},
                                           {"data", tags}};
  save_model(result.model, model_path);

  const Metrics before = measure(teacher, w, {{"role", "teacher"}});
  const Metrics after = measure(result.model, w, {{"role", "cleansed"}, {"seed", c.seed}, {"data", tags}});
  const Report report = make_report(before, after, tags);
  write_json(c.out / "metrics.json", after.to_json());
  write_json(c.out / "report.json", report.json);
  write_text(c.out / "report.txt", report.text);

  json manifest = manifest_base("cleanse", c);
  manifest["schedule"] = to_json(result.schedule);
  manifest["reinitialized"] = result.reinitialized;
  manifest["epoch_loss"] = result.epoch_loss;
  manifest["teacher_hash"] = model_hash(teacher);
  manifest["model_hash"] = model_hash(result.model);
  manifest["data"] = tags;
  write_json(c.out / "manifest.json", manifest);
  out_of(ctx) << report.text;
}

void cmd_finetune(const RunConfig& c, const CommandContext& ctx) {
  const fs::path model_path = prepare_out(c, ctx, "model.bcum");
  if (c.ood()) throw ConfigError("config.unlabeled: finetuning needs the labeled in-distribution defense split");
  const Network<float> teacher = load_required_model(c.teacher, "teacher");
  const Workspace w = load_workspace(c, teacher.architecture());
  Dataset labeled = w.test_full.subset(w.split.defense_indices);
  labeled.name = w.test_full.name + "/defense-labeled";

  DefenseResult result = finetune_baseline(teacher, labeled, c.cleanse.defense);
  result.model.metadata()["provenance"] = {
      {"kind", "finetuned"}, {"teacher_hash", model_hash(teacher)}, {"defense", to_json(c.cleanse.defense)}};
  save_model(result.model, model_path);

  const Metrics before = measure(teacher, w, {{"role", "teacher"}});
  const Metrics after = measure(result.model, w, {{"role", "finetuned"}, {"seed", c.seed}});
  const json tags = {{"defense_data", "in_distribution"}, {"defense_size", labeled.size()}, {"method", "finetune"}};
  const Report report = make_report(before, after, tags);
  write_json(c.out / "metrics.json", after.to_json());
  write_json(c.out / "report.json", report.json);
  write_text(c.out / "report.txt", report.text);

  json manifest = manifest_base("finetune", c);
  manifest["epoch_loss"] = result.epoch_loss;
  manifest["teacher_hash"] = model_hash(teacher);
  manifest["model_hash"] = model_hash(result.model);
  write_json(c.out / "manifest.json", manifest);
  out_of(ctx) << report.text;
}

void cmd_ablate(const RunConfig& c, const CommandContext& ctx) {
  if (!c.ablate) throw ConfigError("config.ablate: an ablation grid is required");
  const AblationSpec& spec = *c.ablate;
  if (spec.values.empty()) throw ConfigError("config.ablate.values: the grid is empty");
  const fs::path table_path = prepare_out(c, ctx, "ablation.json");
  const Network<float> teacher = load_required_model(c.teacher, "teacher");
  const Workspace w = load_workspace(c, teacher.architecture());
  const Dataset base_pool = unlabeled_pool(c, w);
  const std::vector<std::uint64_t> seeds = spec.seeds.empty() ? std::vector<std::uint64_t>{c.seed} : spec.seeds;

  std::vector<AblationJob> jobs;
  for (const auto& v : spec.values) {
    for (std::uint64_t s : seeds) jobs.push_back({v, s});
  }

  std::vector<std::optional<AblationOutcome>> outcomes(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  const auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        const AblationJob& job = jobs[i];
        CleanseOptions o = c.cleanse;
        o.defense.seed = job.seed;
        Dataset pool = base_pool;
        switch (spec.axis) {
          case AblationAxis::init_strategy:
            o.strategy = parse_schedule_strategy(job.value.get<std::string>());
            break;
          case AblationAxis::label_mode:
            o.label_mode = parse_label_mode(job.value.get<std::string>());
            break;
          case AblationAxis::defense_set_size:
            pool = random_subset(base_pool, job.value.get<Index>(), job.seed, "defense-subset");
            break;
          case AblationAxis::temperature:
            o.defense.temperature = job.value.get<double>();
            break;
        }
        CleanseResult r = cleanse(teacher, pool, o);
        AblationOutcome outcome{measure(r.model, w, {{"value", job.value}, {"seed", job.seed}}), r.schedule.ratios};
        outcomes[i] = std::move(outcome);
        std::lock_guard<std::mutex> lock(log_mutex);
        out_of(ctx) << "ablate " << to_string(spec.axis) << "=" << job.value.dump() << " seed " << job.seed << ": "
                    << metrics_line(outcomes[i]->metrics) << "\n";
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(ctx.threads, static_cast<unsigned>(jobs.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  const Metrics teacher_metrics = measure(teacher, w, {{"role", "teacher"}});
  json rows = json::array(), summary = json::array();
  std::string text;
  char line[160];
  std::snprintf(line, sizeof line, "%-18s %5s %8s %8s\n", to_string(spec.axis).c_str(), "runs", "ACC", "ASR");
  text += line;
  const auto fmt = [](const std::optional<double>& v) {
    char b[16];
    if (!v) return std::string("n/a");
    std::snprintf(b, sizeof b, "%.4f", *v);
    return std::string(b);
  };
  for (std::size_t first = 0; first < jobs.size(); first += seeds.size()) {
    double acc = 0.0, asr = 0.0;
    bool have_asr = true;
    for (std::size_t k = first; k < first + seeds.size(); ++k) {
      const Metrics& m = outcomes[k]->metrics;
      rows.push_back({{"value", jobs[k].value},
                      {"seed", jobs[k].seed},
                      {"ratios", outcomes[k]->ratios},
                      {"metrics", m.to_json()}});
      acc += m.acc.value_or(0.0);
      if (m.asr) asr += *m.asr; else have_asr = false;
    }
    const double n = static_cast<double>(seeds.size());
    const std::optional<double> mean_acc = acc / n;
    const std::optional<double> mean_asr = have_asr ? std::optional<double>(asr / n) : std::nullopt;
    summary.push_back({{"value", jobs[first].value},
                       {"runs", seeds.size()},
                       {"mean_acc", *mean_acc},
                       {"mean_asr", mean_asr ? json(*mean_asr) : json()}});
    const std::string label = jobs[first].value.is_string() ? jobs[first].value.get<std::string>()
                                                            : jobs[first].value.dump();
    std::snprintf(line, sizeof line, "%-18s %5zu %8s %8s\n", label.c_str(), seeds.size(), fmt(mean_acc).c_str(),
                  fmt(mean_asr).c_str());
    text += line;
  }
  const json table = {{"axis", to_string(spec.axis)},
                      {"teacher", teacher_metrics.to_json()},
                      {"data", data_tags(c, base_pool)},
                      {"rows", rows},
                      {"summary", summary}};
  write_json(table_path, table);
  write_text(c.out / "ablation.txt", text);
  json manifest = manifest_base("ablate", c);
  manifest["teacher_hash"] = model_hash(teacher);
  write_json(c.out / "manifest.json", manifest);
  out_of(ctx) << text;
}

void cmd_evaluate(const RunConfig& c, const CommandContext& ctx) {
  const Network<float> model = load_required_model(c.model, "model");
  const Workspace w = load_workspace(c, model.architecture());
  const Metrics m = measure(model, w, {{"role", "evaluate"}});
  if (!c.out.empty()) {
    const fs::path path = prepare_out(c, ctx, "metrics.json");
    write_json(path, m.to_json());
    write_json(c.out / "manifest.json", manifest_base("evaluate", c));
  }
  out_of(ctx) << m.to_json().dump(2) << "\n";
}

bool cmd_gradcheck(const RunConfig& c, const CommandContext& ctx) {
  const GradcheckReport report = run_gradcheck(c.gradcheck);
  if (!c.out.empty()) {
    const fs::path path = prepare_out(c, ctx, "gradcheck.json");
    write_json(path, report.to_json());
    write_json(c.out / "manifest.json", manifest_base("gradcheck", c));
  }
  out_of(ctx) << report.to_text();
  return report.pass();
}

void cmd_export_features(const RunConfig& c, const CommandContext& ctx) {
  const fs::path path = prepare_out(c, ctx, "features.bcuf");
  const Network<float> model = load_required_model(c.model, "model");
  Dataset data;
  if (c.features_data == "test" || c.features_data == "defense") {
    const Workspace w = load_workspace(c, model.architecture());
    data = c.features_data == "test" ? w.split.test : w.split.defense;
  } else {
    const DatasetManifest m = DatasetManifest::load(c.features_data);
    data = fit_to_shape(m.test ? m.load_test() : m.load_train(), model.architecture().input_shape);
  }
  const TensorF features = penultimate_features(model, data);
  write_features(path, features, model_hash(model));
  write_json(c.out / "manifest.json", manifest_base("export-features", c));
  out_of(ctx) << "export-features: " << features.dim(0) << " x " << features.dim(1) << " -> " << path.string()
              << "\n";
}

namespace {

unsigned threads_from_env() {
  const char* env = std::getenv("BCU_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw ConfigError("BCU_THREADS must be a positive integer, got '" + std::string(env) + "'");
  return static_cast<unsigned>(v);
}

std::string absolute_string(const std::string& p) { return fs::absolute(p).lexically_normal().string(); }

}  // namespace

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
  static const std::vector<std::string> commands = {"train-clean", "train-backdoor", "cleanse",  "finetune",
                                                    "ablate",      "evaluate",       "gradcheck", "export-features"};
  CLI::App app{"Backdoor cleansing with unlabeled data: training, defense and evaluation"};
  app.name("bcu");
  std::string command, config_path, out_dir, teacher, unlabeled, model, data;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs, inject;
  std::optional<double> tolerance;
  bool force = false;
  app.add_option("command", command, "Command to run")->required()->check(CLI::IsMember(commands));
  app.add_option("--config", config_path, "JSON config or run manifest");
  app.add_option("--seed", seed, "Root seed");
  app.add_option("--out", out_dir, "Output directory");
  app.add_flag("--force", force, "Overwrite existing outputs");
  app.add_option("--teacher", teacher, "Teacher model (cleanse, finetune, ablate)");
  app.add_option("--unlabeled", unlabeled, "in_distribution or a dataset manifest used as defense data");
  app.add_option("--epochs", epochs, "Epochs (training epochs for train-*, defense epochs otherwise)");
  app.add_option("--model", model, "Model file (evaluate, export-features)");
  app.add_option("--data", data, "Feature source: test, defense or a dataset manifest");
  app.add_option("--tolerance", tolerance, "Gradient check tolerance");
  app.add_option("--inject-sign-error", inject, "Negate the analytic gradient of this weight layer (0-based)");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    json j = json::object();
    fs::path base = fs::current_path();
    if (!config_path.empty()) {
      j = read_config_json(config_path);
      base = fs::absolute(config_path).parent_path();
    }
    if (!j.is_object()) throw ConfigError("config: expected a JSON object");
    if (seed) j["seed"] = *seed;
    if (!out_dir.empty()) j["out"] = absolute_string(out_dir);
    if (!teacher.empty()) j["teacher"] = absolute_string(teacher);
    if (!model.empty()) j["model"] = absolute_string(model);
    if (!unlabeled.empty()) j["unlabeled"] = unlabeled == "in_distribution" ? unlabeled : absolute_string(unlabeled);
    if (!data.empty()) j["features_data"] = data == "test" || data == "defense" ? data : absolute_string(data);
    if (epochs) {
      const bool training = command == "train-clean" || command == "train-backdoor";
      j[training ? "train" : "defense"]["epochs"] = *epochs;
    }
    if (tolerance) j["gradcheck"]["tolerance"] = *tolerance;
    if (inject) {
      if (*inject < 0) throw ConfigError("--inject-sign-error: expected a non-negative layer index");
      j["gradcheck"]["inject_sign_error"] = static_cast<std::uint64_t>(*inject);
    }
    const RunConfig config = parse_run_config(j, base);
    CommandContext ctx{force, &out, &err, threads_from_env()};

    if (command == "train-clean") {
      cmd_train_clean(config, ctx);
    } else if (command == "train-backdoor") {
      cmd_train_backdoor(config, ctx);
    } else if (command == "cleanse") {
      cmd_cleanse(config, ctx);
    } else if (command == "finetune") {
      cmd_finetune(config, ctx);
    } else if (command == "ablate") {
      cmd_ablate(config, ctx);
    } else if (command == "evaluate") {
      cmd_evaluate(config, ctx);
    } else if (command == "gradcheck") {
      if (!cmd_gradcheck(config, ctx)) {
        err << "bcu: gradient check failed\n";
        return 4;
      }
    } else {
      cmd_export_features(config, ctx);
    }
    return 0;
  } catch (const Error& e) {
    err << "bcu: error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    err << "bcu: internal error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace bcu
