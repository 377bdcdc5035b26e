// SPDX-License-Identifier: Apache-2.0
#include "bcu/config.hpp"

#include <fstream>
#include <set>

#include "bcu/error.hpp"

namespace bcu {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

/// Typed access to one JSON object; errors carry the dotted field path and
/// unknown keys are rejected by finish().
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_[key].is_null();
  }

  std::string field(const std::string& key) const { return path_ + "." + key; }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  double number(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    const json& v = j_[key];
    if (!v.is_number()) throw ConfigError(field(key) + ": expected a number");
    return v.get<double>();
  }

  std::int64_t integer(const std::string& key, std::int64_t fallback) {
    if (!has(key)) return fallback;
    const json& v = j_[key];
    if (!v.is_number_integer()) throw ConfigError(field(key) + ": expected an integer");
    return v.get<std::int64_t>();
  }

  std::uint64_t unsigned_integer(const std::string& key, std::uint64_t fallback) {
    if (!has(key)) return fallback;
    const json& v = j_[key];
    if (!v.is_number_unsigned()) throw ConfigError(field(key) + ": expected a non-negative integer");
    return v.get<std::uint64_t>();
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const json& v = j_[key];
    if (!v.is_boolean()) throw ConfigError(field(key) + ": expected true or false");
    return v.get<bool>();
  }

  std::string string(const std::string& key, const std::string& fallback) {
    if (!has(key)) return fallback;
    const json& v = j_[key];
    if (!v.is_string()) throw ConfigError(field(key) + ": expected a string");
    return v.get<std::string>();
  }

  template <typename Parse>
  auto choice(const std::string& key, const std::string& fallback, Parse parse) {
    const std::string text = string(key, fallback);
    try {
      return parse(text);
    } catch (const ConfigError& e) {
      throw ConfigError(field(key) + ": " + e.what());
    }
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(field(key) + ": unknown field");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename F>
void nested(Fields& parent, const std::string& key, F&& read) {
  if (!parent.has(key)) return;
  Fields child(parent.raw(key), parent.field(key));
  read(child);
  child.finish();
}

template <typename F>
void rethrow_with(const std::string& where, F&& check) {
  try {
    check();
  } catch (const ConfigError& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

fs::path resolve(const std::string& text, const fs::path& base) {
  if (text.empty()) return {};
  fs::path p(text);
  if (p.is_relative()) p = base / p;
  return p.lexically_normal();
}

AugmentPolicy read_augment(Fields& f, AugmentPolicy policy) {
  policy.kind = f.choice("policy", to_string(policy.kind), parse_augment_kind);
  policy.pad = f.integer("pad", policy.pad);
  if (policy.pad < 0) throw ConfigError(f.field("pad") + ": must be non-negative");
  return policy;
}

json augment_json(const AugmentPolicy& a) { return {{"policy", to_string(a.kind)}, {"pad", a.pad}}; }

TriggerSpec read_trigger(Fields& f) {
  const std::string kind = f.string("kind", "checkerboard");
  if (kind == "checkerboard") {
    Checkerboard t;
    t.size = f.integer("size", t.size);
    t.margin = f.integer("margin", t.margin);
    return t;
  }
  if (kind == "blended") {
    Blended t;
    t.pattern_seed = f.unsigned_integer("pattern_seed", t.pattern_seed);
    t.alpha = f.number("alpha", t.alpha);
    return t;
  }
  if (kind == "sinusoid") {
    Sinusoid t;
    t.delta = f.number("delta", t.delta);
    t.freq = f.number("freq", t.freq);
    return t;
  }
  throw ConfigError(f.field("kind") + ": unknown trigger '" + kind + "' (checkerboard, blended, sinusoid)");
}

}  // namespace

std::string to_string(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::init_strategy:
      return "init_strategy";
    case AblationAxis::label_mode:
      return "label_mode";
    case AblationAxis::defense_set_size:
      return "defense_set_size";
    case AblationAxis::temperature:
      return "temperature";
  }
  return "init_strategy";
}

AblationAxis parse_ablation_axis(const std::string& text) {
  if (text == "init_strategy") return AblationAxis::init_strategy;
  if (text == "label_mode") return AblationAxis::label_mode;
  if (text == "defense_set_size") return AblationAxis::defense_set_size;
  if (text == "temperature") return AblationAxis::temperature;
  throw ConfigError("unknown ablation axis '" + text + "' (init_strategy, label_mode, defense_set_size, temperature)");
}

RunConfig parse_run_config(const json& j, const fs::path& base_dir) {
  RunConfig c;
  Fields root(j, "config");
  c.dataset = resolve(root.string("dataset", ""), base_dir);
  c.architecture = root.string("architecture", c.architecture);
  c.seed = root.unsigned_integer("seed", c.seed);
  c.out = resolve(root.string("out", ""), base_dir);
  c.teacher = resolve(root.string("teacher", ""), base_dir);
  c.model = resolve(root.string("model", ""), base_dir);
  {
    const std::string u = root.string("unlabeled", c.unlabeled);
    c.unlabeled = u == "in_distribution" ? u : resolve(u, base_dir).string();
  }
  if (root.has("unlabeled_size")) {
    c.unlabeled_size = root.integer("unlabeled_size", 0);
    if (*c.unlabeled_size < 1) throw ConfigError(root.field("unlabeled_size") + ": must be at least 1");
  }
  {
    const std::string fd = root.string("features_data", c.features_data);
    c.features_data = fd == "test" || fd == "defense" ? fd : resolve(fd, base_dir).string();
  }

  nested(root, "train", [&](Fields& f) {
    TrainConfig& t = c.train;
    t.epochs = static_cast<int>(f.integer("epochs", t.epochs));
    t.batch_size = f.integer("batch_size", t.batch_size);
    t.schedule.initial_lr = f.number("lr", t.schedule.initial_lr);
    t.schedule.gamma = f.number("gamma", t.schedule.gamma);
    if (f.has("milestones")) {
      const json& m = f.raw("milestones");
      if (!m.is_array()) throw ConfigError(f.field("milestones") + ": expected an array of integers");
      t.schedule.milestones.clear();
      for (const auto& v : m) {
        if (!v.is_number_integer()) throw ConfigError(f.field("milestones") + ": expected an array of integers");
        t.schedule.milestones.push_back(v.get<int>());
      }
    }
    t.momentum = f.number("momentum", t.momentum);
    t.weight_decay = f.number("weight_decay", t.weight_decay);
    nested(f, "augment", [&](Fields& a) { t.augment = read_augment(a, t.augment); });
  });
  c.train.seed = c.seed;
  rethrow_with("config.train", [&] { c.train.validate(); });

  nested(root, "poison", [&](Fields& f) {
    PoisonPlan p;
    nested(f, "trigger", [&](Fields& t) { p.trigger = read_trigger(t); });
    p.target_label = static_cast<int>(f.integer("target_label", p.target_label));
    p.strategy = f.choice("strategy", "all_to_one", [](const std::string& s) {
      if (s == "all_to_one") return PoisonStrategy::all_to_one;
      if (s == "clean_label") return PoisonStrategy::clean_label;
      throw ConfigError("unknown strategy '" + s + "' (all_to_one, clean_label)");
    });
    p.rate = f.number("rate", p.strategy == PoisonStrategy::clean_label ? 0.8 : 0.1);
    p.seed = c.seed;
    rethrow_with("config.poison", [&] { validate_trigger(p.trigger); });
    if (!(p.rate >= 0.0 && p.rate <= 1.0)) throw ConfigError(f.field("rate") + ": must lie in [0, 1]");
    c.poison = p;
  });

  nested(root, "split", [&](Fields& f) {
    c.split.defense_size = f.integer("defense_size", c.split.defense_size);
    c.split.seed = f.unsigned_integer("seed", c.split.seed);
  });
  if (c.split.defense_size < 0) throw ConfigError("config.split.defense_size: must be non-negative");

  nested(root, "defense", [&](Fields& f) {
    CleanseOptions& o = c.cleanse;
    DefenseConfig& d = o.defense;
    o.strategy = f.choice("strategy", to_string(o.strategy), parse_schedule_strategy);
    o.budget = f.number("budget", o.budget);
    o.mask_mode = f.choice("mask_mode", to_string(o.mask_mode), parse_mask_mode);
    o.label_mode = f.choice("label_mode", to_string(o.label_mode), parse_label_mode);
    d.temperature = f.number("temperature", d.temperature);
    d.epochs = static_cast<int>(f.integer("epochs", d.epochs));
    d.batch_size = f.integer("batch_size", d.batch_size);
    d.lr = f.number("lr", d.lr);
    d.momentum = f.number("momentum", d.momentum);
    d.weight_decay = f.number("weight_decay", d.weight_decay);
    d.t_squared_scaling = f.boolean("t_squared_scaling", d.t_squared_scaling);
    nested(f, "augment", [&](Fields& a) { d.augment = read_augment(a, d.augment); });
  });
  c.cleanse.defense.seed = c.seed;
  if (!(c.cleanse.budget > 0.0 && c.cleanse.budget < 1.0)) {
    throw ConfigError("config.defense.budget: must lie in (0, 1)");
  }
  rethrow_with("config.defense", [&] { c.cleanse.defense.validate(); });

  nested(root, "ablate", [&](Fields& f) {
    AblationSpec a;
    a.axis = f.choice("axis", "init_strategy", parse_ablation_axis);
    if (f.has("values")) a.values = f.raw("values");
    if (!a.values.is_array()) throw ConfigError(f.field("values") + ": expected an array");
    for (const auto& v : a.values) {
      const bool ok = a.axis == AblationAxis::defense_set_size ? v.is_number_integer() && v.get<std::int64_t>() > 0
                      : a.axis == AblationAxis::temperature    ? v.is_number() && v.get<double>() > 0.0
                                                               : v.is_string();
      if (!ok) throw ConfigError(f.field("values") + ": invalid value " + v.dump() + " for axis " + to_string(a.axis));
      if (a.axis == AblationAxis::init_strategy) parse_schedule_strategy(v.get<std::string>());
      if (a.axis == AblationAxis::label_mode) parse_label_mode(v.get<std::string>());
    }
    if (f.has("seeds")) {
      const json& s = f.raw("seeds");
      if (!s.is_array()) throw ConfigError(f.field("seeds") + ": expected an array of non-negative integers");
      for (const auto& v : s) {
        if (!v.is_number_unsigned()) {
          throw ConfigError(f.field("seeds") + ": expected an array of non-negative integers");
        }
        a.seeds.push_back(v.get<std::uint64_t>());
      }
    }
    c.ablate = a;
  });

  nested(root, "gradcheck", [&](Fields& f) {
    GradcheckOptions& g = c.gradcheck;
    g.tolerance = f.number("tolerance", g.tolerance);
    g.step = f.number("step", g.step);
    g.samples = f.integer("samples", g.samples);
    g.seed = f.unsigned_integer("seed", g.seed);
    if (f.has("inject_sign_error")) g.inject_sign_error = f.unsigned_integer("inject_sign_error", 0);
    if (!(g.tolerance > 0.0)) throw ConfigError(f.field("tolerance") + ": must be positive");
    if (!(g.step > 0.0)) throw ConfigError(f.field("step") + ": must be positive");
    if (g.samples < 1) throw ConfigError(f.field("samples") + ": must be at least 1");
  });

  root.finish();
  return c;
}

json to_json(const RunConfig& c) {
  json j;
  j["dataset"] = c.dataset.string();
  j["architecture"] = c.architecture;
  j["seed"] = c.seed;
  j["out"] = c.out.string();
  j["teacher"] = c.teacher.string();
  j["model"] = c.model.string();
  j["unlabeled"] = c.unlabeled;
  j["unlabeled_size"] = c.unlabeled_size ? json(*c.unlabeled_size) : json();
  j["features_data"] = c.features_data;
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"lr", c.train.schedule.initial_lr},
                {"milestones", c.train.schedule.milestones},
                {"gamma", c.train.schedule.gamma},
                {"momentum", c.train.momentum},
                {"weight_decay", c.train.weight_decay},
                {"augment", augment_json(c.train.augment)}};
  if (c.poison) {
    json p = to_json(*c.poison);
    p.erase("seed");
    j["poison"] = p;
  }
  j["split"] = {{"defense_size", c.split.defense_size}, {"seed", c.split.seed}};
  const DefenseConfig& d = c.cleanse.defense;
  j["defense"] = {{"strategy", to_string(c.cleanse.strategy)},
                  {"budget", c.cleanse.budget},
                  {"mask_mode", to_string(c.cleanse.mask_mode)},
                  {"label_mode", to_string(c.cleanse.label_mode)},
                  {"temperature", d.temperature},
                  {"epochs", d.epochs},
                  {"batch_size", d.batch_size},
                  {"lr", d.lr},
                  {"momentum", d.momentum},
                  {"weight_decay", d.weight_decay},
                  {"t_squared_scaling", d.t_squared_scaling},
                  {"augment", augment_json(d.augment)}};
  if (c.ablate) {
    j["ablate"] = {{"axis", to_string(c.ablate->axis)}, {"values", c.ablate->values}, {"seeds", c.ablate->seeds}};
  }
  const GradcheckOptions& g = c.gradcheck;
  j["gradcheck"] = {{"tolerance", g.tolerance},
                    {"step", g.step},
                    {"samples", g.samples},
                    {"seed", g.seed},
                    {"inject_sign_error", g.inject_sign_error ? json(*g.inject_sign_error) : json()}};
  return j;
}

json read_config_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  if (j.is_object() && j.contains("config") && j["config"].is_object()) return j["config"];
  return j;
}

}  // namespace bcu
