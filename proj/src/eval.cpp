#include "fzg/eval.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <map>
#include <mutex>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <thread>

#include "fzg/error.hpp"
#include "fzg/rng.hpp"

namespace fzg {

namespace {

Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd out(m.rows, m.cols);
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) out(i, j) = m(i, j);
  }
  return out;
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& s) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

std::uint64_t cell_seed(std::uint64_t base, double ratio, const std::string& arm,
                        std::size_t seed) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.6f/%s/%zu", ratio, arm.c_str(), seed);
  return Rng::named(base, buf).next_u64();
}

}  // namespace

TrainConfig AttackConfig::train_config() const {
  TrainConfig t;
  t.optimizer.kind = optimizer;
  t.optimizer.lr = lr;
  t.steps = steps;
  t.batch_size = batch_size;
  t.seed = seed;
  return t;
}

void validate(const AttackConfig& cfg) {
  if (cfg.steps < 0) throw ConfigError("attack steps must be >= 0");
  if (!(cfg.lr > 0.0)) throw ConfigError("attack learning rate must be positive");
  if (cfg.batch_size == 0) throw ConfigError("attack batch size must be >= 1");
}

ParamSet frozen_finetune(const ParamSet& released, const BinaryMask& mask, const Dataset& data,
                         const AttackConfig& cfg, const NoiseSchedule& schedule,
                         const DenoiserSpec& spec, double* seconds_per_step) {
  validate(cfg);
  if (mask.size() != released.size()) {
    throw DimensionError("mask has " + std::to_string(mask.size()) + " bits for " +
                         std::to_string(released.size()) + " tensors");
  }
  TrainResult r = train_diffusion(released, data, cfg.train_config(), schedule, spec, mask.bits);
  if (seconds_per_step) *seconds_per_step = cfg.steps > 0 ? r.seconds / cfg.steps : 0.0;
  return std::move(r.params);
}

BinaryMask random_mask(const RandomMaskSpec& spec, std::size_t n) {
  if (n == 0) throw ConfigError("random_mask needs at least one tensor");
  if (!(spec.rho >= 0.0 && spec.rho <= 1.0)) throw ConfigError("rho must lie in [0, 1]");
  const auto k = static_cast<std::size_t>(std::llround(spec.rho * static_cast<double>(n)));
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng = Rng::named(spec.seed, "random-mask");
  // Partial Fisher-Yates: the first k slots are a uniform k-subset.
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(idx[i], idx[j]);
  }
  std::vector<std::uint8_t> bits(n, 0);
  for (std::size_t i = 0; i < k; ++i) bits[idx[i]] = 1;
  return BinaryMask::from_bits(std::move(bits));
}

double frechet_distance(const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols) throw DimensionError("frechet_distance: dimension mismatch");
  if (a.rows < 2 || b.rows < 2) throw DimensionError("frechet_distance needs >= 2 samples per side");
  const Eigen::MatrixXd xa = to_eigen(a);
  const Eigen::MatrixXd xb = to_eigen(b);
  const Eigen::RowVectorXd mu_a = xa.colwise().mean();
  const Eigen::RowVectorXd mu_b = xb.colwise().mean();
  const Eigen::MatrixXd ca = xa.rowwise() - mu_a;
  const Eigen::MatrixXd cb = xb.rowwise() - mu_b;
  Eigen::MatrixXd sa = (ca.transpose() * ca) / static_cast<double>(a.rows - 1);
  Eigen::MatrixXd sb = (cb.transpose() * cb) / static_cast<double>(b.rows - 1);
  sa = 0.5 * (sa + sa.transpose());
  sb = 0.5 * (sb + sb.transpose());
  const Eigen::MatrixXd root_a = psd_sqrt(sa);
  Eigen::MatrixXd inner = root_a * sb * root_a;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inner, Eigen::EigenvaluesOnly);
  const double tr_cross = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d2 = (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_cross;
  return std::sqrt(std::max(d2, 0.0));
}

double EvalReport::mean_loss(std::span<const int> labels) const {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& c : classes) {
    if (std::find(labels.begin(), labels.end(), c.label) != labels.end()) {
      s += c.heldout_loss;
      ++n;
    }
  }
  return n ? s / static_cast<double>(n) : 0.0;
}

double EvalReport::mean_frechet(std::span<const int> labels) const {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& c : classes) {
    if (std::find(labels.begin(), labels.end(), c.label) != labels.end()) {
      s += c.frechet;
      ++n;
    }
  }
  return n ? s / static_cast<double>(n) : 0.0;
}

void fill_accounting(EvalReport& r, const ParamSet& params, const BinaryMask& mask) {
  if (mask.size() != params.size()) throw DimensionError("mask/parameter count mismatch");
  const ParamCounts counts = param_counts(params);
  r.total_params = counts.total;
  r.frozen_params = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (mask.frozen(i)) r.frozen_params += counts.per_tensor[i];
  }
  r.trainable_params = r.total_params - r.frozen_params;
  r.achieved_ratio = mask.achieved_ratio;
}

EvalReport evaluate(const ParamSet& theta, const Dataset& holdout, const NoiseSchedule& schedule,
                    const DenoiserSpec& spec, const BinaryMask& mask, std::size_t n_samples,
                    std::uint64_t seed) {
  if (holdout.size() == 0) throw ConfigError("evaluate: empty held-out set");
  const std::set<int> labels(holdout.labels.begin(), holdout.labels.end());
  EvalReport r;
  fill_accounting(r, theta, mask);
  for (int label : labels) {
    const int one[] = {label};
    const Dataset cls = select_classes(holdout, one);
    if (cls.size() < 2) throw ConfigError("evaluate: class " + std::to_string(label) + " has < 2 held-out rows");
    ClassEval ce;
    ce.label = label;
    ce.heldout_loss = heldout_loss(theta, cls, schedule, spec, seed);
    const std::uint64_t sample_seed =
        Rng::named(seed, "eval-sample-" + std::to_string(label)).next_u64();
    const Matrix gen = sample_class(theta, label, n_samples, schedule, spec, sample_seed);
    ce.frechet = frechet_distance(gen, cls.x);
    r.classes.push_back(ce);
  }
  return r;
}

std::string report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json classes = nlohmann::ordered_json::array();
  for (const auto& c : r.classes) {
    nlohmann::ordered_json cj;
    cj["label"] = c.label;
    cj["heldout_loss"] = c.heldout_loss;
    cj["frechet"] = c.frechet;
    classes.push_back(cj);
  }
  j["classes"] = classes;
  j["achieved_ratio"] = r.achieved_ratio;
  j["total_params"] = r.total_params;
  j["frozen_params"] = r.frozen_params;
  j["trainable_params"] = r.trainable_params;
  j["sec_per_step"] = r.sec_per_step;
  return j.dump(2) + "\n";
}

ParamSet release(const Benchmark& b, const BinaryMask& mask) {
  return blend(b.theta_pre, b.theta_ft, mask.as_values());
}

SweepRow evaluate_arm(const Benchmark& b, double ratio, const std::string& arm, std::size_t seed,
                      const BinaryMask& mask) {
  SweepRow row;
  row.ratio = ratio;
  row.arm = arm;
  row.seed = seed;
  row.mask = mask;
  const ParamSet released = release(b, mask);
  const std::uint64_t cs = cell_seed(b.attack.seed, ratio, arm, seed);
  AttackConfig atk = b.attack;

  atk.seed = Rng::named(cs, "illegal").next_u64();
  double sps_ill = 0.0;
  const ParamSet attacked =
      frozen_finetune(released, mask, b.attack_illegal, atk, b.schedule, b.spec, &sps_ill);
  const Dataset hold_ill = select_classes(b.holdout, b.illegal_classes);
  row.illegal = evaluate(attacked, hold_ill, b.schedule, b.spec, mask, b.n_samples,
                         Rng::named(b.eval_seed, "eval-" + std::to_string(seed)).next_u64());
  row.illegal.sec_per_step = b.timing ? sps_ill : 0.0;

  atk.seed = Rng::named(cs, "legal").next_u64();
  double sps_leg = 0.0;
  const ParamSet tuned =
      frozen_finetune(released, mask, b.attack_legal, atk, b.schedule, b.spec, &sps_leg);
  const Dataset hold_leg = select_classes(b.holdout, b.legal_classes);
  row.legal = evaluate(tuned, hold_leg, b.schedule, b.spec, mask, b.n_samples,
                       Rng::named(b.eval_seed, "eval-" + std::to_string(seed)).next_u64());
  row.legal.sec_per_step = b.timing ? sps_leg : 0.0;
  return row;
}

std::vector<SweepRow> sweep(const Benchmark& b, std::span<const double> ratios,
                            std::size_t threads,
                            const std::function<void(const SweepRow&)>& on_row) {
  for (double r : ratios) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("sweep ratios must lie in [0, 1]");
  }
  struct Cell {
    double ratio;
    std::string arm;
    std::size_t seed;
    BinaryMask mask;
  };
  std::vector<Cell> cells;
  const std::size_t n = b.theta_pre.size();
  for (double ratio : ratios) {
    BilevelConfig cfg = b.bilevel;
    cfg.rho = ratio;
    const BinaryMask learned =
        run_bilevel(cfg, b.mask_split, b.theta_pre, b.theta_ft, b.schedule, b.spec).mask;
    for (std::size_t s = 0; s < b.seeds; ++s) cells.push_back({ratio, kArmLearned, s, learned});
    for (std::size_t s = 0; s < b.seeds; ++s) {
      const RandomMaskSpec rs{ratio, cell_seed(b.eval_seed, ratio, kArmRandom, s)};
      cells.push_back({ratio, kArmRandom, s, random_mask(rs, n)});
    }
    for (std::size_t s = 0; s < b.seeds; ++s) {
      cells.push_back({ratio, kArmFullFt, s, BinaryMask::zeros(n)});
    }
  }

  std::vector<SweepRow> rows(cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex report_mu;
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < cells.size();) {
      try {
        rows[i] = evaluate_arm(b, cells[i].ratio, cells[i].arm, cells[i].seed, cells[i].mask);
        if (on_row) {
          std::lock_guard lock(report_mu);
          on_row(rows[i]);
        }
      } catch (...) {
        std::lock_guard lock(report_mu);
        if (!failure) failure = std::current_exception();
        next = cells.size();
      }
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, cells.size()));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows, std::span<const int> illegal,
                      std::span<const int> legal) {
  std::ostringstream os;
  os.precision(17);
  os << "ratio,arm,seed,illegal_loss,legal_loss,illegal_frechet,legal_frechet,achieved_ratio,"
        "frozen_params,trainable_params,sec_per_step\n";
  for (const auto& r : rows) {
    os << r.ratio << ',' << r.arm << ',' << r.seed << ',' << r.illegal.mean_loss(illegal) << ','
       << r.legal.mean_loss(legal) << ',' << r.illegal.mean_frechet(illegal) << ','
       << r.legal.mean_frechet(legal) << ',' << r.mask.achieved_ratio << ','
       << r.illegal.frozen_params << ',' << r.illegal.trainable_params << ','
       << r.illegal.sec_per_step << '\n';
  }
  return os.str();
}

}  // namespace fzg
