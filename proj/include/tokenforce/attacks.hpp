#pragma once

#include "tokenforce/budget.hpp"
#include "tokenforce/objective.hpp"

#include <variant>

namespace tokenforce {

/// Piecewise-constant schedule over budget progress rho in [0, 1].
/// Breakpoints are strictly increasing and left-closed: the value at a
/// breakpoint applies from that rho onward. The first breakpoint must be 0.
class Schedule {
 public:
  Schedule() = default;
  explicit Schedule(std::vector<std::pair<double, double>> points);
  static Schedule constant(double value);

  double at(double rho) const;
  const std::vector<std::pair<double, double>>& points() const {
    return points_;
  }

 private:
  std::vector<std::pair<double, double>> points_{{0.0, 0.0}};
};

struct GcgConfig {
  int grad_top_k = 16;  // per-position top-k of the negative one-hot gradient
  int width = 64;       // candidates evaluated per step
};

struct RandomConfig {
  int candidates = 8;  // uniform suffixes evaluated per step
};

struct Oss53Config {
  int candidates = 64;            // batch of sampled candidates per step
  int cosine_top_k = 16;          // displacement cosine filter size
  double temperature = 0.4;       // softmax temperature over step scores
  double momentum = 0.908;        // gradient EMA coefficient
  double switch_fraction = 0.8;   // fraction of steps run with 2 replacements
  int total_steps = 131;          // step estimate; <= 0 derives it from the budget
  double gamma = 1.0;             // optional norm-layer tap on the gradient pass
  bool negate_direction = false;  // flip the displacement-scoring sign convention
};

struct Oss2Config {
  int grad_top_k = 16;
  int merge_depth = 7;            // cumulative swap overlays evaluated per step
  double warmup_fraction = 0.10;  // budget fraction of pure search before ILS
  double cycle_fraction = 0.03;   // budget fraction per ILS cycle
  Schedule width = Schedule::constant(64);
  Schedule perturb_strength = Schedule::constant(3);
};

struct AdcLsgmConfig {
  double momentum = 0.99;       // SGD heavy-ball coefficient
  double ema_rate = 0.01;       // misprediction EMA rate
  int restarts = 6;             // parallel soft distributions
  double learning_rate = 10.0;
  double gamma = 0.85;          // norm-layer gradient scale
  double loss_coeff = 1.0;      // per-restart loss weight (1 = sum, 1/K = mean)
};

struct AttackConfig {
  std::string method;  // "gcg" | "random" | "oss53" | "oss2" | "adc_lsgm"
  std::variant<GcgConfig, RandomConfig, Oss53Config, Oss2Config, AdcLsgmConfig>
      params;

  void validate() const;

  static AttackConfig gcg(GcgConfig cfg = {});
  static AttackConfig random_search(RandomConfig cfg = {});
  static AttackConfig oss53(Oss53Config cfg = {});
  static AttackConfig oss2(Oss2Config cfg = {});
  static AttackConfig adc_lsgm(AdcLsgmConfig cfg = {});
};

/// Registered method ids, in leaderboard display order.
const std::vector<std::string>& method_ids();
bool is_gradient_guided(const std::string& method);

struct TracePoint {
  Flops flops = 0;
  double best_loss = 0.0;
};

/// Per-step observability for schedule and phase assertions. Not serialized.
struct StepDiag {
  double rho = 0.0;
  int width = 0;
  int perturb_strength = 0;
  bool perturbed = false;
  int n_rep = 0;
};

struct AttackOutcome {
  std::string method;
  std::uint64_t seed = 0;
  std::string target_id;  // filled by the harness
  std::string model_id;   // filled by the harness
  TokenSeq best_suffix;
  double best_loss = 0.0;
  std::vector<TracePoint> trace;  // one sample after init and per step
  Flops flops_used = 0;
  std::int64_t steps = 0;
  std::vector<StepDiag> diag;
};

/// One attack instance: everything fixed for the duration of a run.
struct AttackProblem {
  const LanguageModel& model;
  const ContextTemplate& tmpl;
  const TargetSpec& target;
  const SearchSpace& space;
};

AttackOutcome run_gcg(const AttackProblem& p, const GcgConfig& cfg,
                      FlopMeter& meter, std::uint64_t seed);
AttackOutcome run_random(const AttackProblem& p, const RandomConfig& cfg,
                         FlopMeter& meter, std::uint64_t seed);
AttackOutcome run_oss53(const AttackProblem& p, const Oss53Config& cfg,
                        FlopMeter& meter, std::uint64_t seed);
AttackOutcome run_oss2(const AttackProblem& p, const Oss2Config& cfg,
                       FlopMeter& meter, std::uint64_t seed);
AttackOutcome run_adc_lsgm(const AttackProblem& p, const AdcLsgmConfig& cfg,
                           FlopMeter& meter, std::uint64_t seed);

/// Dispatch on config.method.
AttackOutcome run_attack(const AttackProblem& p, const AttackConfig& cfg,
                         FlopMeter& meter, std::uint64_t seed);

/// Replacement count for a 1-based step index: 2 for the first
/// switch_fraction of the estimated steps, then 1.
int oss53_n_rep(int step_index, int total_steps, double switch_fraction);

/// Candidate sampler shared by the momentum + displacement method.
///
/// For each suffix position, displacement vectors d(l, v) = e(l) - W(v) over
/// the search space are filtered to the cosine_top_k most aligned with the
/// momentum direction m(l); tokens are then drawn from a softmax of the
/// projected scores m(l) . d(l, v) / temperature over that set. Candidate b
/// resamples the positions given by the stratified rule (n_rep = 1) or the
/// first n_rep entries of a fresh random permutation (n_rep >= 2). Positions
/// with zero momentum fall back to uniform draws over the search space.
std::vector<TokenSeq> dpto_candidates(const Matrix& momentum,
                                      const Matrix& embeddings,
                                      const LanguageModel& model,
                                      const SearchSpace& space,
                                      std::span<const Token> base,
                                      int cosine_top_k, double temperature,
                                      int batch, int n_rep, Rng& rng,
                                      bool negate_direction = false);

/// Cumulative overlays m_1..m_K of ranked single-position swaps applied to
/// the base suffix; a later swap at a repeated position overwrites.
std::vector<TokenSeq> merge_overlay(
    std::span<const Token> base,
    std::span<const std::pair<int, Token>> top_swaps);

/// Replace `strength` distinct uniformly chosen positions with uniform
/// search-space tokens (which may repeat the original token).
TokenSeq perturb(std::span<const Token> x, int strength,
                 const SearchSpace& space, Rng& rng);

/// Euclidean projection onto the probability simplex.
Eigen::RowVectorXd project_to_simplex(Eigen::RowVectorXd row);

/// Keep the top `cap` entries (ties to lower ids), zero the rest and
/// renormalize the kept mass. Preserves the argmax.
Eigen::RowVectorXd sparsify_distribution(Eigen::RowVectorXd row, int cap);

}  // namespace tokenforce
