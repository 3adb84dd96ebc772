#include "fzg/config.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <set>

#include "fzg/error.hpp"
#include "fzg/io.hpp"
#include "fzg/rng.hpp"

namespace fzg {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
    for (const auto& [key, _] : j_.items()) {
      (void)_;
      unknown_.insert(key);
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    unknown_.erase(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError("");
        if (std::is_unsigned_v<T> && v.get<long long>() < 0) throw ConfigError("");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError("");
      }
      out = v.get<T>();
    } catch (const std::exception&) {
      throw ConfigError(path_ + "." + key + ": wrong type");
    }
  }

  void get_optional(const char* key, std::optional<double>& out) {
    unknown_.erase(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    if (v.is_string() && v.get<std::string>() == "auto") {
      out.reset();
    } else if (v.is_number()) {
      out = v.get<double>();
    } else {
      throw ConfigError(path_ + "." + key + ": expected a number or \"auto\"");
    }
  }

  void get_optimizer(const char* key, OptimizerKind& out) {
    std::string name(optimizer_name(out));
    get(key, name);
    out = parse_optimizer(name);
  }

  Section sub(const char* key) {
    unknown_.erase(key);
    static const json kEmpty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : kEmpty, path_ + "." + key);
  }

  void finish() const {
    if (!unknown_.empty()) throw ConfigError(path_ + ": unknown key \"" + *unknown_.begin() + "\"");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> unknown_;
};

void read_train(Section s, TrainConfig& t) {
  s.get_optimizer("optimizer", t.optimizer.kind);
  s.get("lr", t.optimizer.lr);
  s.get("beta1", t.optimizer.beta1);
  s.get("beta2", t.optimizer.beta2);
  s.get("eps", t.optimizer.eps);
  s.get("steps", t.steps);
  s.get("batch_size", t.batch_size);
  s.get("seed", t.seed);
  s.finish();
}

ordered_json write_train(const TrainConfig& t) {
  ordered_json j;
  j["optimizer"] = std::string(optimizer_name(t.optimizer.kind));
  j["lr"] = t.optimizer.lr;
  j["beta1"] = t.optimizer.beta1;
  j["beta2"] = t.optimizer.beta2;
  j["eps"] = t.optimizer.eps;
  j["steps"] = t.steps;
  j["batch_size"] = t.batch_size;
  j["seed"] = t.seed;
  return j;
}

void validate(const TrainConfig& t, const char* what) {
  if (t.steps < 0) throw ConfigError(std::string(what) + ".steps must be >= 0");
  if (!(t.optimizer.lr > 0.0)) throw ConfigError(std::string(what) + ".lr must be positive");
  if (t.batch_size == 0) throw ConfigError(std::string(what) + ".batch_size must be >= 1");
}

Dataset draw(const DataConfig& d, std::size_t n, const char* stream, std::span<const int> keep) {
  const auto layout = circle_layout(d.num_classes, d.radius, d.std);
  const auto all = gen_class_data(layout, n, Rng::named(d.seed, stream).next_u64());
  return select_classes(all, keep);
}

}  // namespace

RunConfig default_config() {
  RunConfig c;
  c.pretrain.steps = 20000;
  c.pretrain.batch_size = 64;
  c.pretrain.optimizer.lr = 2e-3;
  c.pretrain.seed = 11;
  c.finetune.steps = 5000;
  c.finetune.batch_size = 32;
  c.finetune.optimizer.lr = 1e-3;
  c.finetune.seed = 12;
  c.bilevel.seed = 13;
  c.attack.seed = 14;
  return c;
}

void validate(const RunConfig& c) {
  const auto& d = c.data;
  if (d.num_classes < 2) throw ConfigError("data.num_classes must be >= 2");
  if (!(d.radius >= 0.0) || !(d.std > 0.0)) throw ConfigError("data.radius/std out of range");
  if (d.illegal_classes.empty() || d.legal_classes.empty()) {
    throw ConfigError("data needs at least one illegal and one legal class");
  }
  std::set<int> seen;
  for (const auto* side : {&d.illegal_classes, &d.legal_classes}) {
    for (int l : *side) {
      if (l < 0 || static_cast<std::size_t>(l) >= d.num_classes) {
        throw ConfigError("data: class " + std::to_string(l) + " out of range");
      }
      if (!seen.insert(l).second) throw ConfigError("data: class " + std::to_string(l) + " listed twice");
    }
  }
  if (d.pretrain_on != "legal" && d.pretrain_on != "all") {
    throw ConfigError("data.pretrain_on must be \"legal\" or \"all\"");
  }
  if (d.pretrain_per_class == 0 || d.finetune_per_class == 0 || d.attack_per_class == 0 ||
      d.holdout_per_class < 2) {
    throw ConfigError("data: per-class sample counts too small");
  }
  if (c.model.num_classes != d.num_classes) {
    throw ConfigError("model.num_classes must equal data.num_classes");
  }
  validate(c.model);
  make_schedule(c.schedule);
  validate(c.pretrain, "pretrain");
  validate(c.finetune, "finetune");
  validate(c.bilevel);
  validate(c.attack);
  if (c.eval.n_samples < 2) throw ConfigError("eval.n_samples must be >= 2");
  if (c.eval.seeds == 0) throw ConfigError("eval.seeds must be >= 1");
  for (double r : c.sweep_ratios) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("sweep.ratios must lie in [0, 1]");
  }
}

RunConfig config_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c = default_config();
  Section root(j, "config");

  Section d = root.sub("data");
  d.get("num_classes", c.data.num_classes);
  d.get("radius", c.data.radius);
  d.get("std", c.data.std);
  d.get("illegal_classes", c.data.illegal_classes);
  d.get("legal_classes", c.data.legal_classes);
  d.get("pretrain_on", c.data.pretrain_on);
  d.get("pretrain_per_class", c.data.pretrain_per_class);
  d.get("finetune_per_class", c.data.finetune_per_class);
  d.get("attack_per_class", c.data.attack_per_class);
  d.get("holdout_per_class", c.data.holdout_per_class);
  d.get("seed", c.data.seed);
  d.finish();

  Section m = root.sub("model");
  m.get("data_dim", c.model.data_dim);
  m.get("hidden_dim", c.model.hidden_dim);
  m.get("num_blocks", c.model.num_blocks);
  m.get("num_classes", c.model.num_classes);
  m.get("embed_dim", c.model.embed_dim);
  m.finish();

  Section s = root.sub("schedule");
  s.get("num_steps", c.schedule.num_steps);
  s.get("beta_start", c.schedule.beta_start);
  s.get("beta_end", c.schedule.beta_end);
  s.finish();

  read_train(root.sub("pretrain"), c.pretrain);
  read_train(root.sub("finetune"), c.finetune);

  Section b = root.sub("bilevel");
  b.get("outer_steps", c.bilevel.outer_steps);
  b.get("inner_steps", c.bilevel.inner_steps);
  b.get("eta1", c.bilevel.eta1);
  b.get("eta2", c.bilevel.eta2);
  b.get("rho", c.bilevel.rho);
  b.get_optional("lambda1", c.bilevel.lambda1);
  b.get_optional("lambda2", c.bilevel.lambda2);
  b.get("sparsity_weight", c.bilevel.sparsity_weight);
  b.get("temperature", c.bilevel.temperature);
  b.get("batch_size", c.bilevel.batch_size);
  b.get("seed", c.bilevel.seed);
  b.finish();

  Section a = root.sub("attack");
  a.get_optimizer("optimizer", c.attack.optimizer);
  a.get("lr", c.attack.lr);
  a.get("steps", c.attack.steps);
  a.get("batch_size", c.attack.batch_size);
  a.get("seed", c.attack.seed);
  a.finish();

  Section e = root.sub("eval");
  e.get("n_samples", c.eval.n_samples);
  e.get("seeds", c.eval.seeds);
  e.get("seed", c.eval.seed);
  e.get("timing", c.eval.timing);
  e.finish();

  Section sw = root.sub("sweep");
  sw.get("ratios", c.sweep_ratios);
  sw.finish();

  root.get("run_dir", c.run_dir);
  root.finish();
  validate(c);
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  return config_from_json(read_file(path));
}

std::string config_to_json(const RunConfig& c) {
  ordered_json j;
  j["data"] = {{"num_classes", c.data.num_classes},
               {"radius", c.data.radius},
               {"std", c.data.std},
               {"illegal_classes", c.data.illegal_classes},
               {"legal_classes", c.data.legal_classes},
               {"pretrain_on", c.data.pretrain_on},
               {"pretrain_per_class", c.data.pretrain_per_class},
               {"finetune_per_class", c.data.finetune_per_class},
               {"attack_per_class", c.data.attack_per_class},
               {"holdout_per_class", c.data.holdout_per_class},
               {"seed", c.data.seed}};
  j["model"] = {{"data_dim", c.model.data_dim},
                {"hidden_dim", c.model.hidden_dim},
                {"num_blocks", c.model.num_blocks},
                {"num_classes", c.model.num_classes},
                {"embed_dim", c.model.embed_dim}};
  j["schedule"] = {{"num_steps", c.schedule.num_steps},
                   {"beta_start", c.schedule.beta_start},
                   {"beta_end", c.schedule.beta_end}};
  j["pretrain"] = write_train(c.pretrain);
  j["finetune"] = write_train(c.finetune);
  ordered_json b;
  b["outer_steps"] = c.bilevel.outer_steps;
  b["inner_steps"] = c.bilevel.inner_steps;
  b["eta1"] = c.bilevel.eta1;
  b["eta2"] = c.bilevel.eta2;
  b["rho"] = c.bilevel.rho;
  b["lambda1"] = c.bilevel.lambda1 ? ordered_json(*c.bilevel.lambda1) : ordered_json("auto");
  b["lambda2"] = c.bilevel.lambda2 ? ordered_json(*c.bilevel.lambda2) : ordered_json("auto");
  b["sparsity_weight"] = c.bilevel.sparsity_weight;
  b["temperature"] = c.bilevel.temperature;
  b["batch_size"] = c.bilevel.batch_size;
  b["seed"] = c.bilevel.seed;
  j["bilevel"] = b;
  j["attack"] = {{"optimizer", std::string(optimizer_name(c.attack.optimizer))},
                 {"lr", c.attack.lr},
                 {"steps", c.attack.steps},
                 {"batch_size", c.attack.batch_size},
                 {"seed", c.attack.seed}};
  j["eval"] = {{"n_samples", c.eval.n_samples},
               {"seeds", c.eval.seeds},
               {"seed", c.eval.seed},
               {"timing", c.eval.timing}};
  j["sweep"] = {{"ratios", c.sweep_ratios}};
  j["run_dir"] = c.run_dir;
  return j.dump(2) + "\n";
}

NoiseSchedule make_schedule(const ScheduleConfig& cfg) {
  return make_schedule(cfg.num_steps, cfg.beta_start, cfg.beta_end);
}

DataSplits make_splits(const DataConfig& d, std::size_t data_dim) {
  if (data_dim != 2) throw ConfigError("the circle layout needs model.data_dim = 2");
  std::vector<int> all(d.num_classes);
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  DataSplits s;
  s.pretrain = draw(d, d.pretrain_per_class, "pretrain", pretrain_classes(d));
  s.finetune.illegal = draw(d, d.finetune_per_class, "finetune", d.illegal_classes);
  s.finetune.legal = draw(d, d.finetune_per_class, "finetune", d.legal_classes);
  s.attack_illegal = draw(d, d.attack_per_class, "attack", d.illegal_classes);
  s.attack_legal = draw(d, d.attack_per_class, "attack", d.legal_classes);
  s.holdout = draw(d, d.holdout_per_class, "holdout", all);
  return s;
}

std::vector<int> pretrain_classes(const DataConfig& d) {
  if (d.pretrain_on == "legal") {
    std::vector<int> out = d.legal_classes;
    std::sort(out.begin(), out.end());
    return out;
  }
  std::vector<int> all(d.num_classes);
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  return all;
}

}  // namespace fzg
