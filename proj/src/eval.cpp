// SPDX-License-Identifier: Apache-2.0
#include "bcu/eval.hpp"

#include <cstdio>
#include <cstring>
#include <sstream>

#include "bcu/model_io.hpp"
#include "bcu/train.hpp"

namespace bcu {
namespace {

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

std::optional<double> optional_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<double>();
}

std::string cell(const std::optional<double>& v) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *v);
  return buf;
}

std::optional<double> drop(const std::optional<double>& before, const std::optional<double>& after) {
  if (!before || !after) return std::nullopt;
  return *before - *after;
}

}  // namespace

Tally accuracy_tally(const Network<float>& model, const Dataset& labeled) {
  const auto& labels = labeled.require_labels("accuracy");
  Tally t;
  t.total = labeled.size();
  if (t.total == 0) return t;
  const std::vector<int> pred = predict_labels(model, labeled);
  for (std::size_t i = 0; i < pred.size(); ++i) t.hits += pred[i] == labels[i];
  return t;
}

std::optional<double> accuracy(const Network<float>& model, const Dataset& labeled) {
  return accuracy_tally(model, labeled).rate();
}

std::optional<double> attack_success_rate(const Network<float>& model, const Dataset& asr_set) {
  return accuracy_tally(model, asr_set).rate();
}

nlohmann::json Metrics::to_json() const {
  return {{"acc", optional_json(acc)},
          {"asr", optional_json(asr)},
          {"counts",
           {{"acc_correct", acc_counts.hits},
            {"acc_total", acc_counts.total},
            {"asr_hits", asr_counts.hits},
            {"asr_total", asr_counts.total}}},
          {"model_id", model_id},
          {"test_set_id", test_set_id},
          {"asr_set_id", asr_set_id},
          {"provenance", provenance}};
}

Metrics Metrics::from_json(const nlohmann::json& j) {
  try {
    Metrics m;
    m.acc = optional_from(j, "acc");
    m.asr = optional_from(j, "asr");
    const auto& c = j.at("counts");
    m.acc_counts = {c.at("acc_correct").get<Index>(), c.at("acc_total").get<Index>()};
    m.asr_counts = {c.at("asr_hits").get<Index>(), c.at("asr_total").get<Index>()};
    m.model_id = j.at("model_id").get<std::string>();
    m.test_set_id = j.at("test_set_id").get<std::string>();
    m.asr_set_id = j.value("asr_set_id", "");
    m.provenance = j.value("provenance", nlohmann::json::object());
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed metrics record: ") + e.what());
  }
}

Metrics evaluate(const Network<float>& model, const Dataset& test, const Dataset* asr_set) {
  Metrics m;
  m.acc_counts = accuracy_tally(model, test);
  m.acc = m.acc_counts.rate();
  m.model_id = model_hash(model);
  m.test_set_id = dataset_hash(test);
  if (asr_set) {
    m.asr_counts = accuracy_tally(model, *asr_set);
    m.asr = m.asr_counts.rate();
    m.asr_set_id = dataset_hash(*asr_set);
  }
  return m;
}

TensorF penultimate_features(const Network<float>& model, const TensorF& inputs) {
  Tape<float> tape;
  forward(model, inputs, &tape);
  const TensorF& x = tape.inputs.back();
  return x.reshaped({x.dim(0), x.size() / x.dim(0)});
}

TensorF penultimate_features(const Network<float>& model, const Dataset& data, Index batch_size) {
  const auto& layers = model.architecture().layers;
  const Shape& in = layers.size() > 1 ? model.architecture().output_shapes[layers.size() - 2]
                                      : model.architecture().input_shape;
  const Index f = shape_size(in);
  TensorF out({data.size(), f});
  std::vector<Index> idx;
  for (Index start = 0; start < data.size(); start += batch_size) {
    const Index end = std::min(data.size(), start + batch_size);
    idx.clear();
    for (Index i = start; i < end; ++i) idx.push_back(i);
    const TensorF rows = penultimate_features(model, normalize(gather_images(data, idx), data.normalization));
    out.values().segment(start * f, rows.size()) = rows.values();
  }
  return out;
}

void write_features(const std::filesystem::path& path, const TensorF& features, const std::string& model_hash) {
  if (features.rank() != 2) throw ConfigError("features must be an N x F matrix");
  const std::string header =
      nlohmann::json{{"N", features.dim(0)}, {"F", features.dim(1)}, {"model_hash", model_hash}}.dump();
  std::vector<std::uint8_t> bytes(4 + 4 + header.size() + static_cast<std::size_t>(features.size()) * 4);
  std::memcpy(bytes.data(), "BCUF", 4);
  const auto len = static_cast<std::uint32_t>(header.size());
  std::memcpy(bytes.data() + 4, &len, 4);
  std::memcpy(bytes.data() + 8, header.data(), header.size());
  std::memcpy(bytes.data() + 8 + header.size(), features.data(), static_cast<std::size_t>(features.size()) * 4);
  write_file_bytes(path, bytes);
}

FeatureFile read_features(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  const std::string where = path.string() + ": ";
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "BCUF", 4) != 0) {
    throw FormatError(where + "not a feature file (bad magic)");
  }
  std::uint32_t len = 0;
  std::memcpy(&len, bytes.data() + 4, 4);
  if (bytes.size() < 8 + static_cast<std::size_t>(len)) throw FormatError(where + "truncated header");
  nlohmann::json header;
  Index n = 0, f = 0;
  FeatureFile out;
  try {
    header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + len);
    n = header.at("N").get<Index>();
    f = header.at("F").get<Index>();
    out.model_hash = header.at("model_hash").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + "malformed header: " + e.what());
  }
  const std::size_t payload = static_cast<std::size_t>(n) * static_cast<std::size_t>(f) * 4;
  if (n < 0 || f < 0 || bytes.size() != 8 + len + payload) {
    throw FormatError(where + "payload size does not match N x F header");
  }
  out.features = TensorF({n, f});
  std::memcpy(out.features.data(), bytes.data() + 8 + len, payload);
  return out;
}

Report make_report(const Metrics& before, const Metrics& after, const nlohmann::json& tags) {
  if (before.test_set_id != after.test_set_id) {
    throw ReportError("before/after metrics use different test sets (" + before.test_set_id + " vs " +
                      after.test_set_id + ")");
  }
  if (!before.asr_set_id.empty() && !after.asr_set_id.empty() && before.asr_set_id != after.asr_set_id) {
    throw ReportError("before/after metrics use different ASR sets (" + before.asr_set_id + " vs " +
                      after.asr_set_id + ")");
  }
  const auto acc_drop = drop(before.acc, after.acc);
  const auto asr_drop = drop(before.asr, after.asr);
  Report r;
  r.json = {{"before", before.to_json()},
            {"after", after.to_json()},
            {"drop", {{"acc", optional_json(acc_drop)}, {"asr", optional_json(asr_drop)}}},
            {"tags", tags}};

  std::ostringstream text;
  char line[128];
  std::snprintf(line, sizeof line, "%-10s %8s %8s\n", "", "ACC", "ASR");
  text << line;
  const auto row = [&](const char* name, const std::optional<double>& acc, const std::optional<double>& asr) {
    std::snprintf(line, sizeof line, "%-10s %8s %8s\n", name, cell(acc).c_str(), cell(asr).c_str());
    text << line;
  };
  row("Original", before.acc, before.asr);
  row("Defended", after.acc, after.asr);
  row("Drop", acc_drop, asr_drop);
  if (tags.is_object()) {
    for (const auto& [key, value] : tags.items()) {
      text << key << ": " << (value.is_string() ? value.get<std::string>() : value.dump()) << "\n";
    }
  }
  r.text = text.str();
  return r;
}

}  // namespace bcu
