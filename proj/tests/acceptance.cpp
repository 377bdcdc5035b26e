// SPDX-License-Identifier: Apache-2.0
// Acceptance run: one PASS/FAIL line per criterion. Writes all run outputs
// under --work (default ./acceptance_runs); --only takes a comma list of ids.
#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "bcu/commands.hpp"
#include "bcu/defense.hpp"
#include "bcu/gradcheck.hpp"
#include "bcu/loss.hpp"
#include "bcu/model_io.hpp"

using namespace bcu;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = BCU_SOURCE_DIR;
const fs::path kDesk = kSource / "configs" / "desk";

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

/// CPU seconds of this process, since the desk runs on one core.
double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

struct CliRun {
  int code = 0;
  std::string err;
};

CliRun bcu(std::vector<std::string> args) {
  args.insert(args.begin(), "bcu");
  args.push_back("--force");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  std::cout << out.str() << std::flush;
  if (code != 0) std::cerr << err.str();
  return {code, err.str()};
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("missing " + p.string());
  return json::parse(in);
}

double metric(const json& m, const char* key) { return m.at(key).is_null() ? std::nan("") : m.at(key).get<double>(); }

class Acceptance {
 public:
  explicit Acceptance(fs::path work) : work_(std::move(work)) { fs::create_directories(work_); }

  fs::path dir(const std::string& name) const { return work_ / name; }

  /// train-backdoor / train-clean with a desk config, cached per run.
  const json& train(const std::string& name, const std::string& config, bool backdoor) {
    auto it = runs_.find(name);
    if (it != runs_.end()) return it->second;
    const double start = cpu_seconds();
    const CliRun r = bcu({backdoor ? "train-backdoor" : "train-clean", "--config", (kDesk / config).string(), "--out",
                          dir(name).string()});
    if (r.code != 0) throw std::runtime_error(name + ": exit " + std::to_string(r.code) + ": " + r.err);
    json m = read_json(dir(name) / "metrics.json");
    m["cpu_seconds"] = cpu_seconds() - start;
    return runs_[name] = m;
  }

  /// cleanse of `teacher_run`; returns {"before", "after", "cpu_seconds"}.
  json cleanse(const std::string& name, const std::string& config, const std::string& teacher_run,
               std::vector<std::string> extra = {}) {
    const double start = cpu_seconds();
    std::vector<std::string> args{"cleanse", "--config", (kDesk / config).string(), "--teacher",
                                  (dir(teacher_run) / "model.bcum").string(), "--out", dir(name).string()};
    args.insert(args.end(), extra.begin(), extra.end());
    const CliRun r = bcu(args);
    if (r.code != 0) throw std::runtime_error(name + ": exit " + std::to_string(r.code) + ": " + r.err);
    json report = read_json(dir(name) / "report.json");
    report["cpu_seconds"] = cpu_seconds() - start;
    return report;
  }

  json ablate(const std::string& name, const std::string& config, const std::string& teacher_run) {
    const CliRun r = bcu({"ablate", "--config", (kDesk / config).string(), "--teacher",
                          (dir(teacher_run) / "model.bcum").string(), "--out", dir(name).string()});
    if (r.code != 0) throw std::runtime_error(name + ": exit " + std::to_string(r.code) + ": " + r.err);
    return read_json(dir(name) / "ablation.json");
  }

 private:
  fs::path work_;
  std::map<std::string, json> runs_;
};

Outcome criterion_gradcheck() {
  const auto start = std::chrono::steady_clock::now();
  const GradcheckReport report = run_gradcheck();
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  Index checked = 0;
  double worst = 0.0;
  for (const auto& e : report.entries) {
    checked += e.checked;
    worst = std::max(worst, e.max_rel_error);
  }
  Outcome o;
  o.pass = report.pass() && checked >= 100 && worst <= 1e-3 && seconds <= 60.0;
  o.detail = std::to_string(report.entries.size()) + " cases, " + std::to_string(checked) +
             " coordinates, max rel err " + fmt(worst, 6) + " <= 1e-3, " + fmt(seconds, 1) + " s <= 60 s";
  for (const auto& f : report.failures()) o.detail += "; failed " + f;
  return o;
}

Outcome criterion_masks() {
  const Network<float> teacher = [] {
    Network<float> n(parse_architecture("small_cnn"));
    Rng rng(1, "weight-init");
    init_fan_in_uniform(n, rng);
    return n;
  }();
  const Network<float> fresh = [] {
    Network<float> n(parse_architecture("small_cnn"));
    Rng rng(1, "student-init");
    init_fan_in_uniform(n, rng);
    return n;
  }();
  Rng gen(2024, "acceptance-schedules");
  int exact = 0;
  for (int t = 0; t < 50; ++t) {
    InitSchedule s;
    for (std::size_t l = 0; l < teacher.weight_layer_count(); ++l) s.ratios.push_back(gen.uniform());
    const MaskSet masks = sample_masks(teacher, s, gen.next_u64());
    bool ok = true;
    for (std::size_t l = 0; l < masks.layers.size(); ++l) {
      const auto want = static_cast<Index>(std::llround(s.ratios[l] * static_cast<double>(teacher.params()[l].size())));
      ok &= masks.layers[l].count() == want;
    }
    exact += ok;
  }
  auto uniform_masks = [&](double r) {
    return sample_masks(teacher, InitSchedule{std::vector<double>(teacher.weight_layer_count(), r)}, 7);
  };
  const bool none = serialize_model(adaptive_layerwise_init(teacher, fresh, uniform_masks(0.0))) ==
                    serialize_model(teacher);
  const bool all = adaptive_layerwise_init(teacher, fresh, uniform_masks(1.0)).same_weights(fresh);
  return {exact == 50 && none && all, std::to_string(exact) + "/50 schedules exact; all-false mask == teacher: " +
                                          (none ? "yes" : "no") + "; all-true mask == fresh: " + (all ? "yes" : "no")};
}

Outcome criterion_attack(Acceptance& a) {
  const json& clean = a.train("clean", "clean.json", false);
  const json& teacher = a.train("checkerboard", "checkerboard.json", true);
  const double acc = metric(teacher, "acc"), asr = metric(teacher, "asr"), clean_acc = metric(clean, "acc");
  const double cpu = teacher["cpu_seconds"].get<double>();
  return {asr >= 0.95 && std::abs(acc - clean_acc) <= 0.02 && cpu <= 900.0,
          "teacher ASR " + fmt(asr) + " >= 0.95, ACC " + fmt(acc) + " vs clean " + fmt(clean_acc) + " (|diff| " +
              fmt(std::abs(acc - clean_acc)) + " <= 0.02), " + fmt(cpu, 0) + " CPU-s <= 900"};
}

Outcome criterion_cleanse(Acceptance& a) {
  a.train("checkerboard", "checkerboard.json", true);
  const json r = a.cleanse("checkerboard-cleanse", "checkerboard.json", "checkerboard");
  const double asr = metric(r["after"], "asr"), drop = metric(r["drop"], "acc");
  const double cpu = r["cpu_seconds"].get<double>();
  return {asr <= 0.10 && drop <= 0.03 && cpu <= 900.0,
          "defended ASR " + fmt(asr) + " <= 0.10 (teacher " + fmt(metric(r["before"], "asr")) + "), ACC drop " +
              fmt(drop) + " <= 0.03, " + fmt(cpu, 0) + " CPU-s <= 900"};
}

Outcome criterion_triggers(Acceptance& a) {
  Outcome o;
  for (const std::string name : {"blended", "sinusoid"}) {
    const json& teacher = a.train(name, name + ".json", true);
    const json r = a.cleanse(name + "-cleanse", name + ".json", name);
    const double before = metric(teacher, "asr"), after = metric(r["after"], "asr");
    const bool ok = before >= 0.90 && after <= 0.15;
    o.pass &= ok;
    if (!o.detail.empty()) o.detail += "; ";
    o.detail += name + ": teacher ASR " + fmt(before) + " >= 0.90, defended ASR " + fmt(after) + " <= 0.15, ACC " +
                fmt(metric(r["before"], "acc")) + " -> " + fmt(metric(r["after"], "acc")) + (ok ? "" : " [fail]");
  }
  return o;
}

double summary_acc(const json& table, const std::string& value) {
  for (const auto& s : table["summary"]) {
    if (s["value"] == value) return s["mean_acc"].get<double>();
  }
  throw std::runtime_error("ablation summary has no row for " + value);
}

Outcome criterion_ablation(Acceptance& a) {
  a.train("checkerboard", "checkerboard.json", true);
  const json init = a.ablate("ablate-init", "ablate_init.json", "checkerboard");
  const json labels = a.ablate("ablate-labels-ood", "ablate_labels_ood.json", "checkerboard");
  const double inc = summary_acc(init, "increasing"), dec = summary_acc(init, "decreasing");
  const double soft = summary_acc(labels, "soft"), hard = summary_acc(labels, "hard");
  return {inc >= dec && soft >= hard, "(a) mean ACC increasing " + fmt(inc) + " >= decreasing " + fmt(dec) +
                                          "; (b) OOD mean ACC soft " + fmt(soft) + " >= hard " + fmt(hard) +
                                          " (3 seeds each)"};
}

Outcome criterion_ood(Acceptance& a) {
  a.train("checkerboard", "checkerboard.json", true);
  const json r = a.cleanse("checkerboard-ood", "checkerboard.json", "checkerboard",
                           {"--unlabeled", (kSource / "data" / "fashion.json").string()});
  const double asr = metric(r["after"], "asr");
  return {asr <= 0.20, "defended ASR " + fmt(asr) + " <= 0.20 with " +
                           std::to_string(r["tags"]["defense_size"].get<Index>()) + " " +
                           r["tags"]["defense_set"].get<std::string>() + " images, ACC " +
                           fmt(metric(r["before"], "acc")) + " -> " + fmt(metric(r["after"], "acc"))};
}

/// Runs every command once with short epochs, reruns it from the written
/// manifest into a second directory and compares the artifacts byte for byte.
Outcome criterion_determinism(Acceptance& a) {
  struct Case {
    std::string name;
    std::vector<std::string> args;
    std::vector<std::string> files;
  };
  const std::string ck = (kDesk / "checkerboard.json").string();
  const fs::path teacher = a.dir("det-train-backdoor-a") / "model.bcum";
  const std::vector<Case> cases = {
      {"train-clean", {"train-clean", "--config", (kDesk / "clean.json").string(), "--epochs", "1"}, {"model.bcum", "metrics.json"}},
      {"train-backdoor", {"train-backdoor", "--config", ck, "--epochs", "1"}, {"model.bcum", "metrics.json", "poison_audit.json"}},
      {"cleanse", {"cleanse", "--config", ck, "--teacher", teacher.string(), "--epochs", "1"}, {"model.bcum", "metrics.json", "report.json"}},
      {"finetune", {"finetune", "--config", ck, "--teacher", teacher.string(), "--epochs", "1"}, {"model.bcum", "metrics.json"}},
      {"ablate", {"ablate", "--config", (kDesk / "ablate_init.json").string(), "--teacher", teacher.string(), "--epochs", "1"}, {"ablation.json"}},
      {"evaluate", {"evaluate", "--config", ck, "--model", teacher.string()}, {"metrics.json"}},
      {"export-features", {"export-features", "--config", ck, "--model", teacher.string()}, {"features.bcuf"}},
      {"gradcheck", {"gradcheck"}, {"gradcheck.json"}},
  };
  Outcome o;
  int identical = 0;
  for (const Case& c : cases) {
    const fs::path first = a.dir("det-" + c.name + "-a"), second = a.dir("det-" + c.name + "-b");
    std::vector<std::string> args = c.args;
    args.insert(args.end(), {"--out", first.string()});
    bool ok = bcu(args).code == 0;
    ok = ok && bcu({c.args[0], "--config", (first / "manifest.json").string(), "--out", second.string()}).code == 0;
    for (const auto& f : c.files) {
      ok = ok && fs::exists(first / f) && read_file_bytes(first / f) == read_file_bytes(second / f);
    }
    identical += ok;
    if (!ok) o.detail += "mismatch in " + c.name + "; ";
  }
  o.pass = identical == static_cast<int>(cases.size());
  o.detail += std::to_string(identical) + "/" + std::to_string(cases.size()) + " commands byte-identical on rerun";
  return o;
}

Outcome criterion_kl_suite() {
  int passed = 0, total = 0;
  auto check = [&](bool ok) {
    ++total;
    passed += ok;
  };
  const std::vector<int> labels{0};
  check(std::abs(cross_entropy_loss(TensorD({1, 10}), std::span<const int>(labels)).loss - std::log(10.0)) < 1e-12);
  TensorD confident({1, 3});
  confident[0] = 1000.0;
  check(cross_entropy_loss(confident, std::span<const int>(labels)).loss == 0.0);
  const TensorD z = TensorD::constant({2, 5}, 1.7);
  const TensorD p = softmax_temperature(z, 4.0);
  bool uniform = true;
  for (Index i = 0; i < p.size(); ++i) uniform &= std::abs(p[i] - 0.2) < 1e-15;
  check(uniform);
  TensorD two({1, 2});
  two[0] = 2.0;
  const TensorD q = softmax_temperature(two, 2.0);
  check(std::abs(q[0] - std::exp(1.0) / (std::exp(1.0) + 1.0)) < 1e-15);
  check(kl_distill_loss(z, z, 4.0).loss == 0.0);
  TensorD hot({1, 2});
  hot[0] = 1000.0;
  check(std::abs(kl_distill_loss(hot, TensorD({1, 2}), 1.0).loss - std::log(2.0)) < 1e-12);
  Rng rng(5);
  TensorD wide({4, 10});
  for (Index i = 0; i < wide.size(); ++i) wide[i] = rng.uniform(-20.0, 20.0);
  const TensorD limit = softmax_temperature(wide, 1e6);
  double worst = 0.0;
  for (Index i = 0; i < limit.size(); ++i) worst = std::max(worst, std::abs(limit[i] - 0.1));
  check(worst <= 1e-4);
  return {passed == total, std::to_string(passed) + "/" + std::to_string(total) +
                               " examples exact; T=1e6 max deviation from uniform " + fmt(worst * 1e6, 3) + "e-6"};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = "acceptance_runs";
  std::set<std::string> only;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else if (arg == "--only" && i + 1 < argc) {
      std::stringstream list(argv[++i]);
      for (std::string id; std::getline(list, id, ',');) only.insert(id);
    } else {
      std::cerr << "usage: bcu_acceptance [--work DIR] [--only 1,2,...]\n";
      return 2;
    }
  }
  Acceptance a(work);
  struct Entry {
    std::string id;
    std::string title;
    std::function<Outcome()> run;
  };
  const std::vector<Entry> criteria = {
      {"1", "gradient oracle", criterion_gradcheck},
      {"2", "mask and layer-wise init algebra", criterion_masks},
      {"3", "attack viability (checkerboard)", [&] { return criterion_attack(a); }},
      {"4", "cleansing efficacy (in-distribution, unlabeled)", [&] { return criterion_cleanse(a); }},
      {"5", "blended and sinusoid triggers", [&] { return criterion_triggers(a); }},
      {"6", "ablation directions", [&] { return criterion_ablation(a); }},
      {"7", "out-of-distribution cleansing", [&] { return criterion_ood(a); }},
      {"8", "determinism from manifests", [&] { return criterion_determinism(a); }},
      {"9", "KL/softmax unit suite", criterion_kl_suite},
  };
  std::vector<std::string> lines;
  bool all = true;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    all &= o.pass;
    lines.push_back(std::string(o.pass ? "PASS" : "FAIL") + "  criterion " + c.id + " " + c.title + ": " + o.detail);
    std::cout << lines.back() << std::endl;
  }
  std::cout << "\n== acceptance summary ==\n";
  for (const auto& l : lines) std::cout << l << "\n";
  return all ? 0 : 1;
}
