// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <fstream>
#include <sstream>

#include "bcu/commands.hpp"
#include "bcu/defense.hpp"
#include "bcu/eval.hpp"
#include "bcu/model_io.hpp"
#include "support.hpp"

using namespace bcu;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

CliResult run(std::vector<std::string> args) {
  args.insert(args.begin(), "bcu");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

/// Three classes on 8x8 images: class k lights a 2x2 block at column 2k, plus noise.
Dataset blocks(Index n, std::uint64_t seed) {
  Dataset d = test::random_dataset(n, {1, 8, 8}, 3, seed);
  for (Index i = 0; i < n; ++i) {
    const int y = (*d.labels)[static_cast<std::size_t>(i)];
    for (Index p = 0; p < 64; ++p) d.images[i * 64 + p] *= 0.2f;
    for (Index r = 1; r < 3; ++r)
      for (Index c = 2 * y; c < 2 * y + 2; ++c) d.images[i * 64 + r * 8 + c] = 1.0f;
  }
  return d;
}

void write_json_file(const fs::path& path, const json& j) { std::ofstream(path) << j.dump(2); }

/// Fixture directory with a tiny dataset manifest and a base config.
struct Desk {
  fs::path dir;
  fs::path config;

  explicit Desk(const std::string& name) : dir(test::temp_dir("cli-" + name)) {
    write_idx(blocks(120, 1), dir / "train.idx", dir / "train.lab");
    write_idx(blocks(60, 2), dir / "test.idx", dir / "test.lab");
    write_json_file(dir / "tiny.json", {{"name", "tiny"},
                                        {"num_classes", 3},
                                        {"train", {{"images", "train.idx"}, {"labels", "train.lab"}}},
                                        {"test", {{"images", "test.idx"}, {"labels", "test.lab"}}}});
    config = dir / "config.json";
    write_json_file(config, base());
  }

  static json base() {
    return {{"dataset", "tiny.json"},
            {"architecture", "1x8x8:c4k3,r,f,d8,r,d3"},
            {"seed", 1},
            {"train", {{"epochs", 3}, {"batch_size", 16}, {"lr", 0.05}, {"milestones", json::array()}}},
            {"split", {{"defense_size", 20}}},
            {"poison",
             {{"trigger", {{"kind", "checkerboard"}, {"size", 3}}}, {"target_label", 0}, {"rate", 0.1}}},
            {"defense", {{"epochs", 2}, {"batch_size", 8}, {"lr", 0.05}, {"budget", 0.3}}}};
  }

  fs::path with(const std::string& name, const json& patch) const {
    json j = base();
    j.merge_patch(patch);
    const fs::path p = dir / (name + ".json");
    write_json_file(p, j);
    return p;
  }

  std::string out(const std::string& name) const { return (dir / name).string(); }
};

std::vector<std::uint8_t> bytes_of(const fs::path& p) { return read_file_bytes(p); }

}  // namespace

TEST_CASE("cli: usage errors exit 2") {
  CHECK(run({}).code == 2);
  CHECK(run({"train-everything"}).code == 2);
  CHECK(run({"train-clean", "--config", "/nonexistent/config.json"}).code == 2);
  CHECK(run({"gradcheck", "--no-such-flag"}).code == 2);
}

TEST_CASE("cli: gradcheck exit codes") {
  const CliResult ok = run({"gradcheck"});
  CHECK(ok.code == 0);
  CHECK(ok.out.find("PASS") != std::string::npos);
  const CliResult bad = run({"gradcheck", "--inject-sign-error", "2"});
  CHECK(bad.code == 4);
  CHECK(bad.out.find("layer 3") != std::string::npos);
  CHECK(run({"gradcheck", "--tolerance", "1e-8"}).code == 4);
}

TEST_CASE("cli: config type errors name the field") {
  const Desk desk("types");
  const CliResult r = run({"train-clean", "--config", desk.with("bad", {{"defense", {{"temperature", "hot"}}}}).string(),
                           "--out", desk.out("o")});
  CHECK(r.code == 2);
  CHECK(r.err.find("defense.temperature") != std::string::npos);
  const CliResult unknown =
      run({"train-clean", "--config", desk.with("unk", {{"trian", {{"epochs", 1}}}}).string(), "--out", desk.out("o")});
  CHECK(unknown.code == 2);
  CHECK(unknown.err.find("trian") != std::string::npos);
}

TEST_CASE("cli: train, refusal to overwrite, forced rerun is byte-identical, manifest rerun too") {
  const Desk desk("train");
  const std::string out = desk.out("clean");
  REQUIRE(run({"train-clean", "--config", desk.config.string(), "--out", out}).code == 0);
  for (const char* f : {"model.bcum", "metrics.json", "manifest.json"}) CHECK(fs::exists(fs::path(out) / f));
  const auto model = bytes_of(fs::path(out) / "model.bcum");
  const auto metrics = bytes_of(fs::path(out) / "metrics.json");

  const CliResult refused = run({"train-clean", "--config", desk.config.string(), "--out", out});
  CHECK(refused.code == 2);
  CHECK(refused.err.find("--force") != std::string::npos);

  REQUIRE(run({"train-clean", "--config", desk.config.string(), "--out", out, "--force"}).code == 0);
  CHECK(bytes_of(fs::path(out) / "model.bcum") == model);
  CHECK(bytes_of(fs::path(out) / "metrics.json") == metrics);

  fs::copy_file(fs::path(out) / "manifest.json", desk.dir / "rerun.json");
  const std::string again = desk.out("clean-again");
  REQUIRE(run({"train-clean", "--config", (desk.dir / "rerun.json").string(), "--out", again}).code == 0);
  CHECK(bytes_of(fs::path(again) / "model.bcum") == model);
  CHECK(bytes_of(fs::path(again) / "metrics.json") == metrics);

  const CliResult other_seed = run({"train-clean", "--config", desk.config.string(), "--out", desk.out("s2"), "--seed", "2"});
  REQUIRE(other_seed.code == 0);
  CHECK(bytes_of(fs::path(desk.out("s2")) / "model.bcum") != model);
}

TEST_CASE("cli: zero poison rate warns and still trains") {
  const Desk desk("gamma0");
  const CliResult r = run({"train-backdoor", "--config", desk.with("g0", {{"poison", {{"rate", 0.0}}}}).string(),
                           "--out", desk.out("b")});
  CHECK(r.code == 0);
  CHECK(r.err.find("warning: poison rate is 0") != std::string::npos);
  const json audit = json::parse(std::ifstream(fs::path(desk.out("b")) / "poison_audit.json"));
  CHECK(audit["poisoned_count"] == 0);
}

TEST_CASE("cli: cleanse with zero epochs returns the layer-wise initialized student") {
  const Desk desk("cleanse");
  REQUIRE(run({"train-backdoor", "--config", desk.config.string(), "--out", desk.out("t")}).code == 0);
  const std::string teacher = (fs::path(desk.out("t")) / "model.bcum").string();
  const CliResult r = run({"cleanse", "--config", desk.config.string(), "--teacher", teacher, "--out", desk.out("c"),
                           "--epochs", "0"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("Original") != std::string::npos);
  for (const char* f : {"model.bcum", "metrics.json", "report.json", "report.txt", "manifest.json"}) {
    CHECK(fs::exists(fs::path(desk.out("c")) / f));
  }

  const RunConfig config = parse_run_config(read_config_json(desk.config), desk.dir);
  const DatasetManifest manifest = DatasetManifest::load(config.dataset);
  const Dataset pool = split_defense_test(manifest.load_test(), config.split).defense;
  CleanseOptions options = config.cleanse;
  options.defense.epochs = 0;
  const CleanseResult expected = cleanse(load_model(teacher), pool, options);
  CHECK(load_model(fs::path(desk.out("c")) / "model.bcum").same_weights(expected.initialized));
  const json m = json::parse(std::ifstream(fs::path(desk.out("c")) / "manifest.json"));
  CHECK(m["reinitialized"] == expected.reinitialized);
}

TEST_CASE("cli: missing teacher, empty ablation grid and corrupt model files") {
  const Desk desk("errors");
  CHECK(run({"cleanse", "--config", desk.config.string(), "--out", desk.out("c")}).code == 2);
  const fs::path empty_grid = desk.with("grid", {{"ablate", {{"axis", "init_strategy"}, {"values", json::array()}}}});
  REQUIRE(run({"train-clean", "--config", desk.config.string(), "--out", desk.out("t")}).code == 0);
  const std::string teacher = (fs::path(desk.out("t")) / "model.bcum").string();
  const CliResult grid = run({"ablate", "--config", empty_grid.string(), "--teacher", teacher, "--out", desk.out("a")});
  CHECK(grid.code == 2);
  CHECK(grid.err.find("empty") != std::string::npos);

  auto bytes = bytes_of(teacher);
  bytes.resize(bytes.size() / 2);
  write_file_bytes(desk.dir / "broken.bcum", bytes);
  const CliResult broken = run({"evaluate", "--config", desk.config.string(), "--model", (desk.dir / "broken.bcum").string()});
  CHECK(broken.code == 3);
  CHECK(broken.err.find("truncated") != std::string::npos);
}

TEST_CASE("cli: evaluate, export-features, finetune and a small ablation") {
  const Desk desk("flow");
  REQUIRE(run({"train-backdoor", "--config", desk.config.string(), "--out", desk.out("t")}).code == 0);
  const std::string teacher = (fs::path(desk.out("t")) / "model.bcum").string();

  const CliResult eval = run({"evaluate", "--config", desk.config.string(), "--model", teacher});
  REQUIRE(eval.code == 0);
  const json metrics = json::parse(eval.out);
  CHECK(metrics["counts"]["acc_total"] == 40);

  REQUIRE(run({"export-features", "--config", desk.config.string(), "--model", teacher, "--out", desk.out("f")}).code == 0);
  const FeatureFile features = read_features(fs::path(desk.out("f")) / "features.bcuf");
  CHECK(features.features.shape() == Shape{40, 8});
  CHECK(features.model_hash == model_hash(load_model(teacher)));

  REQUIRE(run({"finetune", "--config", desk.config.string(), "--teacher", teacher, "--out", desk.out("ft")}).code == 0);
  CHECK(fs::exists(fs::path(desk.out("ft")) / "report.txt"));

  const fs::path grid =
      desk.with("grid", {{"ablate", {{"axis", "label_mode"}, {"values", {"soft", "hard"}}, {"seeds", {0, 1}}}}});
  REQUIRE(run({"ablate", "--config", grid.string(), "--teacher", teacher, "--out", desk.out("a")}).code == 0);
  const json table = json::parse(std::ifstream(fs::path(desk.out("a")) / "ablation.json"));
  CHECK(table["rows"].size() == 4);
  CHECK(table["summary"].size() == 2);
  CHECK(table["summary"][1]["value"] == "hard");
}
