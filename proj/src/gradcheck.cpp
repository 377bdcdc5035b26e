// SPDX-License-Identifier: Apache-2.0
#include "bcu/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "bcu/loss.hpp"
#include "bcu/network.hpp"

namespace bcu {
namespace {

struct Case {
  std::string name;
  std::string arch;
  Index batch;
  bool distill;
  bool check_input;
};

const std::vector<Case>& cases() {
  static const std::vector<Case> all{
      {"dense", "12:d10", 3, false, true},
      {"conv2d", "2x6x6:c3k3p1,f,d4", 2, false, true},
      {"conv2d-strided", "2x7x7:c3k3s2p1,f,d4", 2, false, true},
      {"relu", "8:d10,r,d6", 3, false, true},
      {"maxpool2d", "2x6x6:m2,f,d4", 2, false, true},
      {"flatten", "2x3x3:f,d4", 2, false, true},
      {"small_cnn", "small_cnn", 2, false, false},
      {"small_cnn-distill", "small_cnn", 2, true, false},
  };
  return all;
}

using Net = Network<double>;

struct Objective {
  const Case& spec;
  std::vector<int> labels;
  TensorD teacher;

  double value(const Net& net, const TensorD& x) const {
    const TensorD logits = forward(net, x);
    if (spec.distill) return kl_distill_loss(teacher, logits, 4.0).loss;
    return cross_entropy_loss(logits, std::span<const int>(labels)).loss;
  }

  Gradients<double> gradient(const Net& net, const TensorD& x) const {
    Tape<double> tape;
    const TensorD logits = forward(net, x, &tape);
    const auto loss = spec.distill ? kl_distill_loss(teacher, logits, 4.0)
                                   : cross_entropy_loss(logits, std::span<const int>(labels));
    return backward(net, tape, loss.grad);
  }
};

/// Every piecewise decision taken by the forward pass: ReLU input signs and
/// max-pool winners.
std::vector<Index> kink_signature(const Net& net, const TensorD& x) {
  Tape<double> tape;
  forward(net, x, &tape);
  std::vector<Index> sig;
  const auto& layers = net.architecture().layers;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (std::holds_alternative<ReLU>(layers[i])) {
      const auto& in = tape.inputs[i];
      for (Index k = 0; k < in.size(); ++k) sig.push_back(in[k] > 0.0 ? 1 : 0);
    } else if (std::holds_alternative<MaxPool2D>(layers[i])) {
      sig.insert(sig.end(), tape.argmax[i].begin(), tape.argmax[i].end());
    }
  }
  return sig;
}

double& coordinate(LayerParams<double>& p, Index k) {
  return k < p.weight.size() ? p.weight[k] : p.bias[k - p.weight.size()];
}

}  // namespace

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

bool GradcheckReport::pass() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.pass; });
}

std::vector<std::string> GradcheckReport::failures() const {
  std::vector<std::string> out;
  for (const auto& e : entries) {
    if (!e.pass) out.push_back(e.name);
  }
  return out;
}

nlohmann::json GradcheckReport::to_json() const {
  nlohmann::json j;
  j["tolerance"] = tolerance;
  j["pass"] = pass();
  j["entries"] = nlohmann::json::array();
  for (const auto& e : entries) {
    j["entries"].push_back({{"name", e.name},
                            {"checked", e.checked},
                            {"skipped_kinks", e.skipped_kinks},
                            {"max_rel_error", e.max_rel_error},
                            {"pass", e.pass}});
  }
  return j;
}

std::string GradcheckReport::to_text() const {
  std::ostringstream os;
  for (const auto& e : entries) {
    os << (e.pass ? "PASS " : "FAIL ") << std::left << std::setw(44) << e.name << " checked=" << std::setw(4)
       << e.checked << " skipped=" << std::setw(3) << e.skipped_kinks << " max_rel_err=" << std::scientific
       << std::setprecision(3) << e.max_rel_error << std::defaultfloat << '\n';
  }
  os << (pass() ? "gradcheck passed" : "gradcheck FAILED") << " (tolerance " << tolerance << ")\n";
  return os.str();
}

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
  if (!(options.step > 0.0) || !(options.tolerance > 0.0) || options.samples < 1) {
    throw ConfigError("gradcheck needs positive step, tolerance and sample count");
  }
  GradcheckReport report;
  report.tolerance = options.tolerance;
  const double h = options.step;

  for (const Case& spec : cases()) {
    Rng rng(options.seed, "gradcheck/" + spec.name);
    Net net(parse_architecture(spec.arch));
    init_fan_in_uniform(net, rng);
    for (auto& p : net.params()) {
      for (Index i = 0; i < p.bias.size(); ++i) p.bias[i] = rng.uniform(-0.5, 0.5);
    }

    Shape in_shape = net.architecture().input_shape;
    in_shape.insert(in_shape.begin(), spec.batch);
    TensorD x(in_shape);
    for (Index i = 0; i < x.size(); ++i) x[i] = rng.uniform(-1.0, 1.0);

    Objective objective{spec, {}, TensorD({spec.batch, net.num_classes()})};
    for (Index b = 0; b < spec.batch; ++b) {
      objective.labels.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(net.num_classes()))));
    }
    for (Index i = 0; i < objective.teacher.size(); ++i) objective.teacher[i] = rng.uniform(-3.0, 3.0);

    Gradients<double> analytic = objective.gradient(net, x);
    if (options.inject_sign_error && *options.inject_sign_error < analytic.params.size()) {
      auto& g = analytic.params[*options.inject_sign_error];
      g.weight.values() = -g.weight.values();
      g.bias.values() = -g.bias.values();
    }
    const std::vector<Index> base_sig = kink_signature(net, x);

    const std::size_t layers = net.weight_layer_count();
    const Index input_share = spec.check_input ? options.samples / 3 : 0;
    const Index per_layer = std::max<Index>(1, (options.samples - input_share + static_cast<Index>(layers) - 1) /
                                                   static_cast<Index>(layers));

    // Central differences on `wanted` coordinates drawn in random order. A
    // coordinate whose probes cross a kink only counts when it agrees; a
    // disagreement there is excused and the coordinate replaced.
    auto probe = [&](GradcheckEntry& entry, Index available, Index wanted, auto&& slot, auto&& analytic_at) {
      for (Index k : rng.permutation<Index>(available)) {
        if (entry.checked >= wanted) break;
        double& ref = slot(k);
        const double saved = ref;
        ref = saved + h;
        const bool kink_plus = kink_signature(net, x) != base_sig;
        const double plus = objective.value(net, x);
        ref = saved - h;
        const bool kink_minus = kink_signature(net, x) != base_sig;
        const double minus = objective.value(net, x);
        ref = saved;
        const double error = relative_error(analytic_at(k), (plus - minus) / (2.0 * h));
        if ((kink_plus || kink_minus) && error > options.tolerance) {
          ++entry.skipped_kinks;
          continue;
        }
        entry.max_rel_error = std::max(entry.max_rel_error, error);
        ++entry.checked;
      }
      entry.pass = entry.checked > 0 && entry.max_rel_error <= options.tolerance;
      report.entries.push_back(entry);
    };

    for (std::size_t l = 0; l < layers; ++l) {
      GradcheckEntry entry{spec.name + " " + net.architecture().weight_layer_name(l)};
      const Index available = net.params()[l].size();
      probe(entry, available, std::min(per_layer, available),
            [&](Index k) -> double& { return coordinate(net.params()[l], k); },
            [&](Index k) { return coordinate(analytic.params[l], k); });
    }
    if (spec.check_input) {
      GradcheckEntry entry{spec.name + " input"};
      probe(entry, x.size(), std::min(input_share, x.size()), [&](Index k) -> double& { return x[k]; },
            [&](Index k) { return analytic.input[k]; });
    }
  }
  return report;
}

}  // namespace bcu
