#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "seqdm/augmenter.h"
#include "seqdm/objectives.h"
#include "seqdm/oracle.h"
#include "seqdm/seqmodel.h"

namespace seqdm {

// Overwrites every parameter with a uniform draw in [-scale, scale].
void randomize_uniform(ParamStore& params, RngStream& rng, double scale);

// The smallest distribution-matching problem that can be enumerated: three
// emissions (EOS plus two content tokens), length cap 3 on every model,
// hidden width 8 in the sequence model.
struct TinyDm {
  static constexpr int kVocab = 5;
  static constexpr int kMaxLen = 3;

  EnumSpace space{kVocab, kMaxLen};
  SeqModel model;
  DiscreteAugmenter source;
  DiscreteAugmenter target;
  Example pair;
  DmParams params;

  DmModels models() const { return {&source, &target, &model}; }
};

// Parameters uniform in [-scale, scale], drawn from `seed`.
std::unique_ptr<TinyDm> make_tiny_dm(std::uint64_t seed, double scale = 1.0);

// Accumulates repeated gradient estimates and compares their mean with a
// reference gradient coordinate by coordinate.
class GradMoments {
 public:
  void add(const ParamStore& g);
  std::size_t count() const { return count_; }
  ParamStore mean() const;

  struct Coverage {
    std::size_t coords = 0;
    std::size_t within = 0;
    double fraction = 0.0;
    double worst_z = 0.0;
    double mean_se = 0.0;
  };
  // A coordinate is covered when |mean - reference| <= z * SE, or, for a
  // coordinate with zero sample variance, when it is within `abs_floor`.
  Coverage coverage(const ParamStore& reference, double z = 3.0, double abs_floor = 1e-9) const;

 private:
  std::size_t count_ = 0;
  ParamStore sum_, sum_sq_;
};

struct CheckRow {
  std::string suite;
  std::string check;
  double value = 0.0;
  double threshold = 0.0;
  bool pass = false;
  std::string detail;
};

void write_check_csv(std::ostream& out, const std::vector<CheckRow>& rows);
bool all_pass(const std::vector<CheckRow>& rows);

struct GradCheckOptions {
  std::uint64_t seed = 1;
  int instances = 3;       // random instances per program
  double step = 1e-5;
  double tolerance = 1e-6;
  bool corrupt = false;    // perturbs one analytic coordinate to exercise failure reporting
};

// Finite-difference checks of every differentiable program: sequence-model
// log-prob (token and vector sources), both augmenter log-densities, the MLE
// loss, and the surrogate whose gradient the match/fidelity estimators
// return for a fixed set of samples.
std::vector<CheckRow> run_grad_check(const GradCheckOptions& options);

struct OracleCheckOptions {
  std::uint64_t seed = 1;
  int draws = 200;
  int n = 50;
  double min_coverage = 0.95;
  int raml_draws = 100000;
};

// Monte Carlo estimators against enumeration on tiny instances.
std::vector<CheckRow> run_oracle_check(const OracleCheckOptions& options);

}  // namespace seqdm
